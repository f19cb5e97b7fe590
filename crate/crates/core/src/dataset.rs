//! Windowed instance construction, class balancing and K-fold plans.
//!
//! An instance is W consecutive complete observations inside a time window
//! from admission, flattened into one feature vector together with the
//! demographics. Balancing discards majority instances until the smallest
//! class holds the target share (0.35 by default), and fold plans group by
//! patient unless told otherwise.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PatientRecord, Variable, NUM_VARIABLES, OBSERVATION_CADENCE_S};
use crate::rng::substream;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("invalid window: need obs_per_instance >= 1 and end > start")]
    InvalidWindow,
    #[error("window flag must look like 5x0-30 (W x start-end minutes)")]
    WindowSyntax,
    #[error("only one class present; balancing needs two")]
    SingleClass,
    #[error("{groups} groups cannot fill {k} folds")]
    TooFewGroups { groups: usize, k: usize },
}

/// The three prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Ischemic vs hemorrhagic; positive class = hemorrhagic.
    Diagnosis,
    /// In-hospital death; positive class = exitus.
    Exitus,
    /// Any acute neurological complication; positive class = recurrence.
    Recurrence,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Diagnosis => "diagnosis",
            Task::Exitus => "exitus",
            Task::Recurrence => "recurrence",
        }
    }

    /// Exitus and recurrence instances carry the diagnosed stroke type as an
    /// extra feature; diagnosis instances obviously cannot.
    pub fn includes_stroke_type_feature(self) -> bool {
        !matches!(self, Task::Diagnosis)
    }

    pub fn label_for(self, record: &PatientRecord) -> u8 {
        match self {
            Task::Diagnosis => record.labels.stroke_type.code() as u8,
            Task::Exitus => u8::from(record.labels.exitus),
            Task::Recurrence => u8::from(record.labels.recurrence),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diagnosis" => Ok(Task::Diagnosis),
            "exitus" => Ok(Task::Exitus),
            "recurrence" => Ok(Task::Recurrence),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// W observations per instance, drawn from `[start, end)` minutes after
/// admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowSpec {
    pub obs_per_instance: usize,
    pub start_min: u32,
    pub end_min: u32,
}

impl WindowSpec {
    pub fn new(obs_per_instance: usize, start_min: u32, end_min: u32) -> Result<Self, DatasetError> {
        if obs_per_instance == 0 || end_min <= start_min {
            return Err(DatasetError::InvalidWindow);
        }
        Ok(WindowSpec { obs_per_instance, start_min, end_min })
    }

    /// Label in the `W-(start,end)` style used by the result tables.
    pub fn table_label(&self) -> String {
        format!("{}-({},{})", self.obs_per_instance, self.start_min, self.end_min)
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}-{}", self.obs_per_instance, self.start_min, self.end_min)
    }
}

impl FromStr for WindowSpec {
    type Err = DatasetError;

    /// Parses the `5x0-30` flag syntax.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, range) = s.split_once('x').ok_or(DatasetError::WindowSyntax)?;
        let (start, end) = range.split_once('-').ok_or(DatasetError::WindowSyntax)?;
        let w = w.parse().map_err(|_| DatasetError::WindowSyntax)?;
        let start = start.parse().map_err(|_| DatasetError::WindowSyntax)?;
        let end = end.parse().map_err(|_| DatasetError::WindowSyntax)?;
        WindowSpec::new(w, start, end)
    }
}

/// The default sweep grid: W=5 over T in {5,10,...,120} and {180,360,540}
/// minutes.
pub fn default_window_grid() -> Vec<WindowSpec> {
    let mut ends: Vec<u32> = (1..=24).map(|i| i * 5).collect();
    ends.extend([180, 360, 540]);
    ends.into_iter().map(|t| WindowSpec::new(5, 0, t).expect("valid grid window")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// Names and kinds of every feature column, in vector order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureSchema {
    pub fn for_task(task: Task, spec: &WindowSpec, opts: &FeatureOptions) -> FeatureSchema {
        let mut columns = Vec::new();
        for obs in 0..spec.obs_per_instance {
            for variable in Variable::ALL {
                columns.push(FeatureColumn {
                    name: format!("obs{obs}_{variable}"),
                    kind: if variable.is_categorical() {
                        FeatureKind::Categorical
                    } else {
                        FeatureKind::Numeric
                    },
                });
            }
        }
        columns.push(FeatureColumn { name: "age".into(), kind: FeatureKind::Numeric });
        columns.push(FeatureColumn { name: "gender".into(), kind: FeatureKind::Categorical });
        if opts.include_time_feature {
            columns.push(FeatureColumn { name: "t_start_min".into(), kind: FeatureKind::Numeric });
        }
        if task.includes_stroke_type_feature() {
            columns.push(FeatureColumn { name: "stroke_type".into(), kind: FeatureKind::Categorical });
        }
        FeatureSchema { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Stable hex digest used to match models to the data they were fit on.
    pub fn hash_hex(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for column in &self.columns {
            for b in column.name.bytes().chain([0u8, column.kind as u8, 0u8]) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

/// Feature-construction switches. The first-observation timestamp feature
/// is on by default and can be dropped for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub include_time_feature: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { include_time_feature: true }
    }
}

/// One training/testing example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub patient_id: String,
    pub features: Vec<f64>,
    pub label: u8,
    pub window: WindowSpec,
    /// Timestamp of the first observation in the instance.
    pub start: DateTime<Utc>,
}

/// A batch of instances sharing one schema. `standardized` tracks whether
/// Z-scoring has been applied, so the harness can assert pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub schema: FeatureSchema,
    pub window: WindowSpec,
    pub task: Task,
    pub instances: Vec<Instance>,
    pub standardized: bool,
}

impl InstanceSet {
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.instances.iter().filter(|i| i.label == 1).count();
        (self.instances.len() - pos, pos)
    }

    pub fn from_records(
        records: &[PatientRecord],
        spec: &WindowSpec,
        task: Task,
        opts: &FeatureOptions,
    ) -> InstanceSet {
        let schema = FeatureSchema::for_task(task, spec, opts);
        let mut instances = Vec::new();
        for record in records {
            instances.extend(build_instances_with(record, spec, task, opts));
        }
        InstanceSet { schema, window: *spec, task, instances, standardized: false }
    }
}

/// `build_instances` with the default feature options.
pub fn build_instances(record: &PatientRecord, spec: &WindowSpec, task: Task) -> Vec<Instance> {
    build_instances_with(record, spec, task, &FeatureOptions::default())
}

/// Emits non-overlapping runs of W consecutive complete observations inside
/// the window as instances.
///
/// Consecutive means adjacent 30 s grid slots; a missing slot or an
/// incomplete observation breaks the run, which restarts after it. Patients
/// with fewer than W eligible observations in the window yield nothing.
pub fn build_instances_with(
    record: &PatientRecord,
    spec: &WindowSpec,
    task: Task,
    opts: &FeatureOptions,
) -> Vec<Instance> {
    let label = task.label_for(record);
    let window_start = record.admission + chrono::Duration::minutes(i64::from(spec.start_min));
    let window_end = record.admission + chrono::Duration::minutes(i64::from(spec.end_min));

    let mut instances = Vec::new();
    let mut run: Vec<&crate::ingest::Observation> = Vec::with_capacity(spec.obs_per_instance);
    for obs in &record.observations {
        if obs.timestamp < window_start || obs.timestamp >= window_end {
            run.clear();
            continue;
        }
        if !obs.complete {
            run.clear();
            continue;
        }
        if let Some(prev) = run.last() {
            if obs.slot() - prev.slot() != 1 {
                run.clear();
            }
        }
        run.push(obs);
        if run.len() == spec.obs_per_instance {
            instances.push(make_instance(record, &run, spec, task, opts, label));
            run.clear(); // non-overlapping: stride = W
        }
    }
    instances
}

fn make_instance(
    record: &PatientRecord,
    run: &[&crate::ingest::Observation],
    spec: &WindowSpec,
    task: Task,
    opts: &FeatureOptions,
    label: u8,
) -> Instance {
    let mut features = Vec::with_capacity(run.len() * NUM_VARIABLES + 4);
    for obs in run {
        for variable in Variable::ALL {
            features.push(obs.values[variable.index()].expect("run contains complete observations"));
        }
    }
    features.push(f64::from(record.age));
    features.push(record.gender.code());
    let start = run[0].timestamp;
    if opts.include_time_feature {
        features.push((start - record.admission).num_seconds() as f64 / 60.0);
    }
    if task.includes_stroke_type_feature() {
        features.push(record.labels.stroke_type.code());
    }
    Instance { patient_id: record.patient_id.clone(), features, label, window: *spec, start }
}

/// Discards majority instances until the minority class holds
/// `minority_fraction` of the set.
///
/// All minority instances are kept; `floor(n_min * (1-f) / f)` majority
/// instances are sampled uniformly without replacement. A set already at or
/// below the target majority share is returned unchanged. Output order
/// follows input order, so reruns with one seed are identical.
pub fn balance(
    set: &InstanceSet,
    minority_fraction: f64,
    seed: u64,
) -> Result<InstanceSet, DatasetError> {
    let (n0, n1) = set.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(DatasetError::SingleClass);
    }
    let (minority_label, n_min, n_maj) = if n1 <= n0 { (1u8, n1, n0) } else { (0u8, n0, n1) };
    let keep_majority =
        ((n_min as f64) * (1.0 - minority_fraction) / minority_fraction).floor() as usize;
    if n_maj <= keep_majority {
        return Ok(set.clone());
    }

    let majority_indices: Vec<usize> = set
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.label != minority_label)
        .map(|(i, _)| i)
        .collect();
    let mut shuffled = majority_indices;
    shuffled.shuffle(&mut substream(seed, "balance"));
    let mut selected: Vec<usize> = shuffled.into_iter().take(keep_majority).collect();
    selected.sort_unstable();

    let mut keep = vec![false; set.instances.len()];
    for (i, inst) in set.instances.iter().enumerate() {
        if inst.label == minority_label {
            keep[i] = true;
        }
    }
    for i in selected {
        keep[i] = true;
    }
    let instances =
        set.instances.iter().zip(&keep).filter(|(_, k)| **k).map(|(inst, _)| inst.clone()).collect();
    Ok(InstanceSet { instances, ..set.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// All instances of one patient share a fold (no leakage).
    Patient,
    /// Each instance is its own group.
    Instance,
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" => Ok(Grouping::Patient),
            "instance" => Ok(Grouping::Instance),
            other => Err(format!("unknown grouping {other:?}")),
        }
    }
}

/// Assignment of every instance to one of K folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub grouping: Grouping,
    pub seed: u64,
    /// Fold index per instance, parallel to the instance list.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Indices of the training and test instances for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, f) in self.assignments.iter().enumerate() {
            if *f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Shuffles groups by seed and deals them round-robin into K folds, so fold
/// sizes differ by at most one group.
pub fn kfold_split(
    set: &InstanceSet,
    k: usize,
    grouping: Grouping,
    seed: u64,
) -> Result<FoldPlan, DatasetError> {
    let group_of: Vec<String> = match grouping {
        Grouping::Patient => set.instances.iter().map(|i| i.patient_id.clone()).collect(),
        Grouping::Instance => (0..set.instances.len()).map(|i| format!("#{i}")).collect(),
    };
    let mut groups: Vec<&str> = {
        let mut seen = BTreeMap::new();
        for g in &group_of {
            seen.entry(g.as_str()).or_insert(());
        }
        seen.into_keys().collect()
    };
    if k == 0 || groups.len() < k {
        return Err(DatasetError::TooFewGroups { groups: groups.len(), k });
    }
    groups.shuffle(&mut substream(seed, "folds"));
    let fold_of_group: BTreeMap<&str, usize> =
        groups.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    let assignments = group_of.iter().map(|g| fold_of_group[g.as_str()]).collect();
    Ok(FoldPlan { k, grouping, seed, assignments })
}

/// Writes `patient_id,label,f0..fN` rows for cross-implementation checks.
pub fn write_instances_csv<W: Write>(set: &InstanceSet, writer: &mut W) -> std::io::Result<()> {
    write!(writer, "patient_id,label")?;
    for i in 0..set.schema.len() {
        write!(writer, ",f{i}")?;
    }
    writeln!(writer)?;
    for inst in &set.instances {
        write!(writer, "{},{}", inst.patient_id, inst.label)?;
        for v in &inst.features {
            write!(writer, ",{v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}


#[cfg(test)]
mod prop_tests {
    use super::tests::record_with_observations;
    use super::*;
    use crate::ingest::StrokeType;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fold_plans_partition_for_all_seeds(seed in 0u64..10_000) {
            let mut set = InstanceSet {
                schema: FeatureSchema { columns: vec![] },
                window: WindowSpec::new(1, 0, 30).unwrap(),
                task: Task::Diagnosis,
                instances: Vec::new(),
                standardized: false,
            };
            for p in 0..17 {
                for i in 0..3 {
                    set.instances.push(Instance {
                        patient_id: format!("p{p}"),
                        features: vec![i as f64],
                        label: (p % 2) as u8,
                        window: set.window,
                        start: chrono::DateTime::from_timestamp(0, 0).unwrap(),
                    });
                }
            }
            let plan = kfold_split(&set, 5, Grouping::Patient, seed).unwrap();
            // Partition: every instance in exactly one fold.
            prop_assert_eq!(plan.assignments.len(), set.instances.len());
            prop_assert!(plan.assignments.iter().all(|f| *f < 5));
            let (train, test) = plan.split(2);
            prop_assert_eq!(train.len() + test.len(), set.instances.len());
        }

        #[test]
        fn instances_are_contiguous_and_in_window(drop_mask in proptest::collection::vec(any::<bool>(), 40)) {
            let mut record = record_with_observations("p1", 40, StrokeType::Ischemic);
            let mut kept = Vec::new();
            for (obs, drop) in record.observations.drain(..).zip(&drop_mask) {
                if !drop {
                    kept.push(obs);
                }
            }
            record.observations = kept;
            let spec = WindowSpec::new(5, 0, 15).unwrap();
            for inst in build_instances(&record, &spec, Task::Diagnosis) {
                let offset_s = (inst.start - record.admission).num_seconds();
                prop_assert!(offset_s >= 0);
                // Last observation of the run must still be inside the window.
                let last_s = offset_s + (spec.obs_per_instance as i64 - 1) * 30;
                prop_assert!(last_s < i64::from(spec.end_min) * 60);
                // The run is made of adjacent slots: its observations exist
                // at exactly 30 s spacing in the record.
                let slots: Vec<i64> = record
                    .observations
                    .iter()
                    .filter(|o| {
                        o.timestamp >= inst.start
                            && o.timestamp
                                < inst.start + chrono::Duration::seconds(spec.obs_per_instance as i64 * 30)
                    })
                    .map(|o| o.slot())
                    .collect();
                prop_assert_eq!(slots.len(), spec.obs_per_instance);
                for pair in slots.windows(2) {
                    prop_assert_eq!(pair[1] - pair[0], 1);
                }
            }
        }

        #[test]
        fn balance_subset_and_fraction(n0 in 50usize..300, n1 in 10usize..40, seed in 0u64..500) {
            let mut set = InstanceSet {
                schema: FeatureSchema { columns: vec![] },
                window: WindowSpec::new(1, 0, 30).unwrap(),
                task: Task::Diagnosis,
                instances: Vec::new(),
                standardized: false,
            };
            for i in 0..(n0 + n1) {
                set.instances.push(Instance {
                    patient_id: format!("p{i}"),
                    features: vec![i as f64],
                    label: u8::from(i >= n0),
                    window: set.window,
                    start: chrono::DateTime::from_timestamp(0, 0).unwrap(),
                });
            }
            let balanced = balance(&set, 0.35, seed).unwrap();
            let (b0, b1) = balanced.class_counts();
            let n_total = b0 + b1;
            let minority = b0.min(b1) as f64;
            prop_assert!((minority / n_total as f64 - 0.35).abs() <= 1.0 / n_total as f64);
            for inst in &balanced.instances {
                prop_assert!(set.instances.contains(inst));
            }
        }
    }
}
