//! Monitor-export ingestion.
//!
//! The monitoring center stores one row per measured variable; seven rows
//! sharing a 30-second grid slot make one complete observation. This module
//! parses the row CSV, buckets rows into observations, and joins the
//! demographics/label table into per-patient records.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds per observation slot: the monitoring center stores one
/// observation every 30 seconds.
pub const OBSERVATION_CADENCE_S: i64 = 30;

/// The seven monitored hemodynamic variables, in file/feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    /// Rhythm estimation; an integer rhythm code, treated as categorical.
    Re,
    /// Ventricular extrasystole.
    Ve,
    /// Cardiac frequency.
    Cf,
    /// Breathing frequency.
    Bf,
    /// Pulmonary perfusion.
    Perf,
    /// Oxygen saturation.
    SpO2,
    /// Systolic time interval index.
    StII,
}

pub const NUM_VARIABLES: usize = 7;

impl Variable {
    pub const ALL: [Variable; NUM_VARIABLES] = [
        Variable::Re,
        Variable::Ve,
        Variable::Cf,
        Variable::Bf,
        Variable::Perf,
        Variable::SpO2,
        Variable::StII,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Re => "RE",
            Variable::Ve => "VE",
            Variable::Cf => "CF",
            Variable::Bf => "BF",
            Variable::Perf => "Perf",
            Variable::SpO2 => "SpO2",
            Variable::StII => "ST_II",
        }
    }

    pub fn from_name(name: &str) -> Option<Variable> {
        Variable::ALL.iter().copied().find(|v| v.as_str() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// RE is a categorical rhythm code; everything else is numeric.
    pub fn is_categorical(self) -> bool {
        matches!(self, Variable::Re)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw measurement record, exactly as exported by the monitoring center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub patient_id: String,
    pub timestamp: DateTime<Utc>,
    pub variable: Variable,
    /// `None` is the MISSING sentinel (empty value field).
    pub value: Option<f64>,
    pub unit: String,
}

/// One 30-second snapshot of all seven variables. Slots without a row are
/// MISSING.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: DateTime<Utc>,
    pub values: [Option<f64>; NUM_VARIABLES],
    pub complete: bool,
}

impl Observation {
    pub fn new(timestamp: DateTime<Utc>, values: [Option<f64>; NUM_VARIABLES]) -> Observation {
        let complete = values.iter().all(|v| v.is_some());
        Observation { timestamp, values, complete }
    }

    pub fn value(&self, variable: Variable) -> Option<f64> {
        self.values[variable.index()]
    }

    pub fn recompute_complete(&mut self) {
        self.complete = self.values.iter().all(|v| v.is_some());
    }

    /// Absolute 30 s grid slot of this observation.
    pub fn slot(&self) -> i64 {
        self.timestamp.timestamp().div_euclid(OBSERVATION_CADENCE_S)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }

    /// Feature encoding: M -> 0, F -> 1.
    pub fn code(self) -> f64 {
        match self {
            Gender::M => 0.0,
            Gender::F => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrokeType {
    Ischemic,
    Hemorrhagic,
}

impl StrokeType {
    pub fn as_str(self) -> &'static str {
        match self {
            StrokeType::Ischemic => "ISCHEMIC",
            StrokeType::Hemorrhagic => "HEMORRHAGIC",
        }
    }

    /// Feature/label encoding: ISCHEMIC -> 0, HEMORRHAGIC -> 1.
    pub fn code(self) -> f64 {
        match self {
            StrokeType::Ischemic => 0.0,
            StrokeType::Hemorrhagic => 1.0,
        }
    }
}

/// Clinical outcome labels for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeLabels {
    pub stroke_type: StrokeType,
    pub exitus: bool,
    pub exitus_time: Option<DateTime<Utc>>,
    pub recurrence: bool,
    pub recurrence_time: Option<DateTime<Utc>>,
}

impl StrokeLabels {
    /// Validates the time-present-iff-flag invariants.
    pub fn new(
        stroke_type: StrokeType,
        exitus: bool,
        exitus_time: Option<DateTime<Utc>>,
        recurrence: bool,
        recurrence_time: Option<DateTime<Utc>>,
    ) -> Result<StrokeLabels, LabelInvariantViolation> {
        if exitus != exitus_time.is_some() {
            return Err(LabelInvariantViolation::Exitus);
        }
        if recurrence != recurrence_time.is_some() {
            return Err(LabelInvariantViolation::Recurrence);
        }
        Ok(StrokeLabels { stroke_type, exitus, exitus_time, recurrence, recurrence_time })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelInvariantViolation {
    Exitus,
    Recurrence,
}

/// A run of missing 30 s slots between two stored observations. Gaps are
/// recorded, never filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationGap {
    pub before: DateTime<Utc>,
    pub after: DateTime<Utc>,
    pub missing_slots: u64,
}

/// Demographics, labels and the time-ordered observation series for one
/// patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub admission: DateTime<Utc>,
    /// Strictly time-ascending; first observation at or after admission.
    pub observations: Vec<Observation>,
    pub labels: StrokeLabels,
    pub gaps: Vec<ObservationGap>,
}

/// One row of the labels CSV before invariant validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub admission: DateTime<Utc>,
    pub stroke_type: StrokeType,
    pub exitus: bool,
    pub exitus_time: Option<DateTime<Utc>>,
    pub recurrence: bool,
    pub recurrence_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed line (wrong column count or unparseable field)")]
    MalformedLine { line: usize },
    #[error("line {line}: unknown variable {name:?}")]
    UnknownVariable { line: usize, name: String },
    #[error("patient {patient_id}: exitus/recurrence time fields violate label invariants")]
    LabelConflict { patient_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const ROWS_HEADER: &str = "patient_id,timestamp,variable,value,unit";
pub const LABELS_HEADER: &str =
    "patient_id,age,gender,admission,stroke_type,exitus,exitus_time,recurrence,recurrence_time";

fn parse_timestamp(field: &str, line: usize) -> Result<DateTime<Utc>, IngestError> {
    DateTime::parse_from_rfc3339(field)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| IngestError::MalformedLine { line })
}

fn fmt_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses the rows CSV (`patient_id,timestamp,variable,value,unit`).
///
/// One `MonitorRow` per data line, in file order; an empty value field
/// becomes the MISSING sentinel. Fields must not contain commas or quotes;
/// the monitor export never produces them.
pub fn parse_rows<R: BufRead>(reader: R) -> Result<Vec<MonitorRow>, IngestError> {
    let mut rows = Vec::new();
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            if header? != ROWS_HEADER {
                return Err(IngestError::MalformedLine { line: 1 });
            }
        }
        None => return Ok(rows),
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(IngestError::MalformedLine { line: line_no });
        }
        let timestamp = parse_timestamp(fields[1], line_no)?;
        let variable = Variable::from_name(fields[2]).ok_or_else(|| IngestError::UnknownVariable {
            line: line_no,
            name: fields[2].to_string(),
        })?;
        let value = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse::<f64>().map_err(|_| IngestError::MalformedLine { line: line_no })?)
        };
        rows.push(MonitorRow {
            patient_id: fields[0].to_string(),
            timestamp,
            variable,
            value,
            unit: fields[4].to_string(),
        });
    }
    Ok(rows)
}

/// Writes rows in the canonical form `parse_rows` accepts. Values are
/// written in shortest round-trip decimal form, so serialize∘parse is the
/// identity on canonical files.
pub fn serialize_rows<W: Write>(rows: &[MonitorRow], writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "{ROWS_HEADER}")?;
    for row in rows {
        let value = match row.value {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        writeln!(
            writer,
            "{},{},{},{},{}",
            row.patient_id,
            fmt_timestamp(&row.timestamp),
            row.variable,
            value,
            row.unit
        )?;
    }
    Ok(())
}

fn parse_bool01(field: &str, line: usize) -> Result<bool, IngestError> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(IngestError::MalformedLine { line }),
    }
}

/// Parses the labels CSV. Booleans are `0`/`1`; optional time fields may be
/// empty. Label invariants are checked later, in `build_patient_records`.
pub fn parse_labels<R: BufRead>(reader: R) -> Result<Vec<LabelRow>, IngestError> {
    let mut out = Vec::new();
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            if header? != LABELS_HEADER {
                return Err(IngestError::MalformedLine { line: 1 });
            }
        }
        None => return Ok(out),
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(IngestError::MalformedLine { line: line_no });
        }
        let opt_time = |f: &str| -> Result<Option<DateTime<Utc>>, IngestError> {
            if f.is_empty() { Ok(None) } else { parse_timestamp(f, line_no).map(Some) }
        };
        out.push(LabelRow {
            patient_id: fields[0].to_string(),
            age: fields[1].parse().map_err(|_| IngestError::MalformedLine { line: line_no })?,
            gender: match fields[2] {
                "M" => Gender::M,
                "F" => Gender::F,
                _ => return Err(IngestError::MalformedLine { line: line_no }),
            },
            admission: parse_timestamp(fields[3], line_no)?,
            stroke_type: match fields[4] {
                "ISCHEMIC" => StrokeType::Ischemic,
                "HEMORRHAGIC" => StrokeType::Hemorrhagic,
                _ => return Err(IngestError::MalformedLine { line: line_no }),
            },
            exitus: parse_bool01(fields[5], line_no)?,
            exitus_time: opt_time(fields[6])?,
            recurrence: parse_bool01(fields[7], line_no)?,
            recurrence_time: opt_time(fields[8])?,
        });
    }
    Ok(out)
}

pub fn serialize_labels<W: Write>(labels: &[LabelRow], writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "{LABELS_HEADER}")?;
    for l in labels {
        let opt = |t: &Option<DateTime<Utc>>| t.as_ref().map(fmt_timestamp).unwrap_or_default();
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{}",
            l.patient_id,
            l.age,
            l.gender.as_str(),
            fmt_timestamp(&l.admission),
            l.stroke_type.as_str(),
            u8::from(l.exitus),
            opt(&l.exitus_time),
            u8::from(l.recurrence),
            opt(&l.recurrence_time),
        )?;
    }
    Ok(())
}

/// Counters from observation assembly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleStats {
    /// Rows that overwrote an earlier row with the same
    /// (patient, slot, variable) key; last occurrence wins.
    pub duplicate_overwrites: u64,
}

/// Groups rows by (patient, 30 s grid slot) into observations.
///
/// Rows may arrive in any order; within a patient the output is ascending in
/// time. A variable with no row in a slot stays MISSING. Duplicate
/// (patient, slot, variable) keys keep the last occurrence in input order
/// and are counted in the stats.
pub fn assemble_observations(
    rows: &[MonitorRow],
) -> (BTreeMap<String, Vec<Observation>>, AssembleStats) {
    let mut stats = AssembleStats::default();
    let mut slots: BTreeMap<&str, BTreeMap<i64, [Option<f64>; NUM_VARIABLES]>> = BTreeMap::new();
    for row in rows {
        let slot = row.timestamp.timestamp().div_euclid(OBSERVATION_CADENCE_S);
        let values = slots.entry(&row.patient_id).or_default().entry(slot).or_default();
        let cell = &mut values[row.variable.index()];
        if cell.is_some() {
            stats.duplicate_overwrites += 1;
        }
        *cell = row.value;
    }
    let mut out = BTreeMap::new();
    for (patient, by_slot) in slots {
        let observations = by_slot
            .into_iter()
            .map(|(slot, values)| {
                let ts = DateTime::from_timestamp(slot * OBSERVATION_CADENCE_S, 0)
                    .expect("slot within datetime range");
                Observation::new(ts, values)
            })
            .collect();
        out.insert(patient.to_string(), observations);
    }
    (out, stats)
}

/// What was joined, what was left out and why.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinReport {
    /// Patients with observations but no label row.
    pub observations_without_labels: Vec<String>,
    /// Label rows with no observations.
    pub labels_without_observations: Vec<String>,
    /// Observations earlier than the patient's admission, dropped per the
    /// record invariant: patient id -> count.
    pub pre_admission_dropped: BTreeMap<String, u64>,
    /// Total gap records across all patients.
    pub gap_count: u64,
}

/// Joins assembled observations with the label table.
///
/// Emits one record per patient present in both inputs; one-sided patients
/// are listed in the report, never silently dropped.
pub fn build_patient_records(
    observations: &BTreeMap<String, Vec<Observation>>,
    label_table: &[LabelRow],
) -> Result<(Vec<PatientRecord>, JoinReport), IngestError> {
    let labels_by_id: BTreeMap<&str, &LabelRow> =
        label_table.iter().map(|l| (l.patient_id.as_str(), l)).collect();
    let mut report = JoinReport::default();
    let mut records = Vec::new();

    for (patient_id, obs) in observations {
        let Some(label_row) = labels_by_id.get(patient_id.as_str()) else {
            report.observations_without_labels.push(patient_id.clone());
            continue;
        };
        let labels = StrokeLabels::new(
            label_row.stroke_type,
            label_row.exitus,
            label_row.exitus_time,
            label_row.recurrence,
            label_row.recurrence_time,
        )
        .map_err(|_| IngestError::LabelConflict { patient_id: patient_id.clone() })?;

        let mut kept: Vec<Observation> = Vec::with_capacity(obs.len());
        for o in obs {
            if o.timestamp < label_row.admission {
                *report.pre_admission_dropped.entry(patient_id.clone()).or_default() += 1;
            } else {
                kept.push(o.clone());
            }
        }
        let mut gaps = Vec::new();
        for pair in kept.windows(2) {
            let delta = pair[1].slot() - pair[0].slot();
            if delta > 1 {
                gaps.push(ObservationGap {
                    before: pair[0].timestamp,
                    after: pair[1].timestamp,
                    missing_slots: (delta - 1) as u64,
                });
            }
        }
        report.gap_count += gaps.len() as u64;
        records.push(PatientRecord {
            patient_id: patient_id.clone(),
            age: label_row.age,
            gender: label_row.gender,
            admission: label_row.admission,
            observations: kept,
            labels,
            gaps,
        });
    }

    for l in label_table {
        if !observations.contains_key(&l.patient_id) {
            report.labels_without_observations.push(l.patient_id.clone());
        }
    }
    Ok((records, report))
}
