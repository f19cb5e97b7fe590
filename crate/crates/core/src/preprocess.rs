//! Cleaning, imputation and Z-score standardization.
//!
//! Numeric series get a streaming outlier rule: a value at least
//! `sigma_factor` standard deviations from the running mean of the history
//! is replaced by that mean, and missing values are imputed with it.
//! Categorical series (the RE rhythm code) are imputed by
//! last-observation-carried-forward. Standardization is fit on training
//! data only and applied per feature as `z = (x - mean) / std`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureKind, FeatureSchema, InstanceSet};
use crate::ingest::{PatientRecord, Variable};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("cannot fit standardizer on an empty training set")]
    EmptyTrainingSet,
    #[error("feature schema mismatch: params fitted on a different schema")]
    SchemaMismatch,
    #[error("instance set is already standardized")]
    AlreadyStandardized,
}

/// Cleaning configuration. `min_history` accepted values must exist before
/// the outlier rule arms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CleanConfig {
    pub min_history: usize,
    pub sigma_factor: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig { min_history: 10, sigma_factor: 4.0 }
    }
}

/// Counts for one cleaned series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesCleaning {
    pub outliers_replaced: u64,
    pub missing_imputed: u64,
    pub locf_carries: u64,
    /// Series had no valid value at all; returned unchanged.
    pub all_missing: bool,
}

/// Per-variable cleaning counts across a record or cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub per_variable: BTreeMap<String, VariableCleaning>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableCleaning {
    pub outliers_replaced: u64,
    pub missing_imputed: u64,
    pub locf_carries: u64,
    pub all_missing_series: u64,
}

impl CleaningReport {
    pub fn absorb(&mut self, variable: Variable, series: SeriesCleaning) {
        let v = self.per_variable.entry(variable.as_str().to_string()).or_default();
        v.outliers_replaced += series.outliers_replaced;
        v.missing_imputed += series.missing_imputed;
        v.locf_carries += series.locf_carries;
        v.all_missing_series += u64::from(series.all_missing);
    }

    pub fn merge(&mut self, other: &CleaningReport) {
        for (name, counts) in &other.per_variable {
            let v = self.per_variable.entry(name.clone()).or_default();
            v.outliers_replaced += counts.outliers_replaced;
            v.missing_imputed += counts.missing_imputed;
            v.locf_carries += counts.locf_carries;
            v.all_missing_series += counts.all_missing_series;
        }
    }

    pub fn total_outliers_replaced(&self) -> u64 {
        self.per_variable.values().map(|v| v.outliers_replaced).sum()
    }
}

/// Running mean/variance of the emitted history (Welford).
struct RunningMoments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    fn new() -> Self {
        RunningMoments { count: 0, mean: 0.0, m2: 0.0 }
    }

    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

/// Streaming left-to-right cleaning of one patient's numeric series.
///
/// A present value `x` is replaced by the running mean when
/// `|x - mean| >= sigma_factor * std`, provided at least `min_history`
/// values have been emitted and `std > 0`; a missing value is imputed with
/// the running mean once any history exists. Every emitted value joins the
/// running history, which makes the pass idempotent: cleaning a cleaned
/// series changes nothing. Output length always equals input length.
pub fn clean_numeric_series(
    series: &[Option<f64>],
    config: &CleanConfig,
) -> (Vec<Option<f64>>, SeriesCleaning) {
    let mut counts = SeriesCleaning::default();
    let mut moments = RunningMoments::new();
    let mut out = Vec::with_capacity(series.len());
    for value in series {
        match value {
            Some(x) => {
                let std = moments.std();
                let emitted = if moments.count >= config.min_history
                    && std > 0.0
                    && (x - moments.mean).abs() >= config.sigma_factor * std
                {
                    counts.outliers_replaced += 1;
                    moments.mean
                } else {
                    *x
                };
                moments.push(emitted);
                out.push(Some(emitted));
            }
            None => {
                if moments.count > 0 {
                    counts.missing_imputed += 1;
                    let m = moments.mean;
                    moments.push(m);
                    out.push(Some(m));
                } else {
                    // No donor value yet; carried as MISSING.
                    out.push(None);
                }
            }
        }
    }
    counts.all_missing = moments.count == 0 && !series.is_empty();
    (out, counts)
}

/// Last-observation-carried-forward for categorical codes.
///
/// Missing or non-finite entries take the most recent valid code; a
/// leading run of missing entries takes the first valid code. An
/// all-missing series is returned unchanged and flagged.
pub fn impute_categorical_series(series: &[Option<f64>]) -> (Vec<Option<f64>>, SeriesCleaning) {
    let mut counts = SeriesCleaning::default();
    let valid = |v: &Option<f64>| matches!(v, Some(x) if x.is_finite());
    let Some(first_valid) = series.iter().find(|v| valid(v)).and_then(|v| *v) else {
        counts.all_missing = !series.is_empty();
        return (series.to_vec(), counts);
    };
    let mut last = first_valid;
    let mut out = Vec::with_capacity(series.len());
    for value in series {
        if valid(value) {
            last = value.unwrap();
            out.push(*value);
        } else {
            counts.locf_carries += 1;
            out.push(Some(last));
        }
    }
    (out, counts)
}

/// Cleans every variable series of a record in place and recomputes
/// observation completeness. RE is imputed as a categorical code; the six
/// numeric variables get the outlier/imputation pass.
pub fn clean_record(record: &mut PatientRecord, config: &CleanConfig) -> CleaningReport {
    let mut report = CleaningReport::default();
    for variable in Variable::ALL {
        let series: Vec<Option<f64>> =
            record.observations.iter().map(|o| o.values[variable.index()]).collect();
        let (cleaned, counts) = if variable.is_categorical() {
            impute_categorical_series(&series)
        } else {
            clean_numeric_series(&series, config)
        };
        report.absorb(variable, counts);
        for (obs, value) in record.observations.iter_mut().zip(cleaned) {
            obs.values[variable.index()] = value;
        }
    }
    for obs in &mut record.observations {
        obs.recompute_complete();
    }
    report
}

/// Per-feature standardization parameters, fit on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub schema: FeatureSchema,
    /// One entry per feature column; `None` for categorical columns, which
    /// pass through untouched.
    pub moments: Vec<Option<FeatureMoments>>,
    pub fitted_on: usize,
    /// Names of numeric features with zero deviation; they pass through
    /// unscaled.
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMoments {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation per numeric feature.
pub fn fit_standardizer(set: &InstanceSet) -> Result<StandardizationParams, PreprocessError> {
    if set.instances.is_empty() {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    let n = set.instances.len() as f64;
    let n_features = set.schema.len();
    let mut moments = Vec::with_capacity(n_features);
    let mut degenerate = Vec::new();
    for (col, column) in set.schema.columns.iter().enumerate() {
        if column.kind == FeatureKind::Categorical {
            moments.push(None);
            continue;
        }
        let mean = set.instances.iter().map(|i| i.features[col]).sum::<f64>() / n;
        let var =
            set.instances.iter().map(|i| (i.features[col] - mean).powi(2)).sum::<f64>() / n;
        let std = var.max(0.0).sqrt();
        if std == 0.0 {
            degenerate.push(column.name.clone());
        }
        moments.push(Some(FeatureMoments { mean, std }));
    }
    Ok(StandardizationParams {
        schema: set.schema.clone(),
        moments,
        fitted_on: set.instances.len(),
        degenerate,
    })
}

/// Applies `z = (x - mean) / std` per numeric feature. Degenerate features
/// (std = 0) and categorical codes are untouched.
pub fn apply_standardizer(
    set: &mut InstanceSet,
    params: &StandardizationParams,
) -> Result<(), PreprocessError> {
    if set.schema != params.schema {
        return Err(PreprocessError::SchemaMismatch);
    }
    if set.standardized {
        return Err(PreprocessError::AlreadyStandardized);
    }
    for instance in &mut set.instances {
        for (value, m) in instance.features.iter_mut().zip(&params.moments) {
            if let Some(FeatureMoments { mean, std }) = m {
                if *std > 0.0 {
                    *value = (*value - mean) / std;
                }
            }
        }
    }
    set.standardized = true;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureColumn, Instance, WindowSpec};
    use approx::assert_abs_diff_eq;

    fn series(values: &[f64]) -> Vec<Option<f64>> {
        values.iter().map(|v| Some(*v)).collect()
    }

    const HISTORY: [f64; 10] = [2.0, 4.0, 6.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];

    #[test]
    fn outlier_replaced_by_running_mean() {
        let mut input = series(&HISTORY);
        input.push(Some(100.0));
        let (cleaned, counts) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned[10], Some(4.0));
        assert_eq!(counts.outliers_replaced, 1);
    }

    #[test]
    fn inlier_accepted_unchanged() {
        let mut input = series(&HISTORY);
        input.push(Some(5.0));
        let (cleaned, counts) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned[10], Some(5.0));
        assert_eq!(counts.outliers_replaced, 0);
    }

    #[test]
    fn constant_series_is_inert() {
        // std = 0 disables the rule.
        let input = series(&[7.0; 20]);
        let (cleaned, counts) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned, input);
        assert_eq!(counts.outliers_replaced, 0);
    }

    #[test]
    fn missing_imputed_with_running_mean() {
        let mut input = series(&[2.0, 4.0]);
        input.push(None);
        let (cleaned, counts) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned[2], Some(3.0));
        assert_eq!(counts.missing_imputed, 1);
    }

    #[test]
    fn all_missing_numeric_series_unchanged() {
        let input = vec![None, None, None];
        let (cleaned, counts) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned, input);
        assert!(counts.all_missing);
    }

    #[test]
    fn leading_missing_without_history_stays_missing() {
        let input = vec![None, Some(5.0), None];
        let (cleaned, _) = clean_numeric_series(&input, &CleanConfig::default());
        assert_eq!(cleaned, vec![None, Some(5.0), Some(5.0)]);
    }

    #[test]
    fn cleaning_preserves_length_and_is_idempotent() {
        let mut input = series(&HISTORY);
        input.extend([Some(100.0), None, Some(4.5), Some(-80.0)]);
        let cfg = CleanConfig::default();
        let (once, _) = clean_numeric_series(&input, &cfg);
        assert_eq!(once.len(), input.len());
        let (twice, counts) = clean_numeric_series(&once, &cfg);
        assert_eq!(once, twice);
        assert_eq!(counts.outliers_replaced, 0);
        assert_eq!(counts.missing_imputed, 0);
    }

    #[test]
    fn locf_carries_forward() {
        let input = vec![Some(1.0), None, Some(1.0)];
        let (out, counts) = impute_categorical_series(&input);
        assert_eq!(out, vec![Some(1.0), Some(1.0), Some(1.0)]);
        assert_eq!(counts.locf_carries, 1);
    }

    #[test]
    fn leading_missing_backfilled_with_first_valid() {
        let input = vec![None, Some(2.0), None];
        let (out, counts) = impute_categorical_series(&input);
        assert_eq!(out, vec![Some(2.0), Some(2.0), Some(2.0)]);
        assert_eq!(counts.locf_carries, 2);
    }

    #[test]
    fn all_missing_categorical_flagged() {
        let input = vec![None, None];
        let (out, counts) = impute_categorical_series(&input);
        assert_eq!(out, input);
        assert!(counts.all_missing);
    }

    fn toy_set(feature_values: Vec<Vec<f64>>, kinds: &[FeatureKind]) -> InstanceSet {
        let schema = FeatureSchema {
            columns: kinds
                .iter()
                .enumerate()
                .map(|(i, kind)| FeatureColumn { name: format!("f{i}"), kind: *kind })
                .collect(),
        };
        let instances = feature_values
            .into_iter()
            .enumerate()
            .map(|(i, features)| Instance {
                patient_id: format!("p{i}"),
                features,
                label: 0,
                window: WindowSpec::new(1, 0, 30).unwrap(),
                start: chrono::DateTime::from_timestamp(0, 0).unwrap(),
            })
            .collect();
        InstanceSet {
            schema,
            window: WindowSpec::new(1, 0, 30).unwrap(),
            task: crate::dataset::Task::Diagnosis,
            instances,
            standardized: false,
        }
    }

    #[test]
    fn fit_computes_population_moments() {
        let set = toy_set(vec![vec![2.0], vec![4.0], vec![6.0]], &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        let m = params.moments[0].unwrap();
        assert_abs_diff_eq!(m.mean, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.std, (8.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.std, 1.63299, epsilon = 1e-5);
        assert_eq!(params.fitted_on, 3);
    }

    #[test]
    fn constant_feature_flagged_degenerate() {
        let set = toy_set(vec![vec![5.0], vec![5.0], vec![5.0]], &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        let m = params.moments[0].unwrap();
        assert_eq!(m.mean, 5.0);
        assert_eq!(m.std, 0.0);
        assert_eq!(params.degenerate, vec!["f0".to_string()]);
        // Degenerate features pass through unscaled.
        let mut set = set;
        apply_standardizer(&mut set, &params).unwrap();
        assert_eq!(set.instances[0].features[0], 5.0);
    }

    #[test]
    fn apply_matches_zscore_arithmetic() {
        let mut set = toy_set(vec![vec![2.0], vec![4.0], vec![6.0]], &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        apply_standardizer(&mut set, &params).unwrap();
        assert_abs_diff_eq!(set.instances[1].features[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(set.instances[2].features[0], 1.22474, epsilon = 1e-5);
    }

    #[test]
    fn categorical_codes_untouched() {
        let mut set = toy_set(
            vec![vec![2.0, 1.0], vec![4.0, 0.0], vec![6.0, 1.0]],
            &[FeatureKind::Numeric, FeatureKind::Categorical],
        );
        let params = fit_standardizer(&set).unwrap();
        assert!(params.moments[1].is_none());
        apply_standardizer(&mut set, &params).unwrap();
        assert_eq!(set.instances[0].features[1], 1.0);
    }

    #[test]
    fn training_set_moments_become_zero_one() {
        let values: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64) * 0.7 + 3.0]).collect();
        let mut set = toy_set(values, &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        apply_standardizer(&mut set, &params).unwrap();
        let n = set.instances.len() as f64;
        let mean = set.instances.iter().map(|i| i.features[0]).sum::<f64>() / n;
        let var = set.instances.iter().map(|i| (i.features[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn standardization_is_invertible() {
        let mut set = toy_set(vec![vec![2.5], vec![4.0], vec![9.25]], &[FeatureKind::Numeric]);
        let original: Vec<f64> = set.instances.iter().map(|i| i.features[0]).collect();
        let params = fit_standardizer(&set).unwrap();
        apply_standardizer(&mut set, &params).unwrap();
        let m = params.moments[0].unwrap();
        for (inst, orig) in set.instances.iter().zip(original) {
            assert_abs_diff_eq!(inst.features[0] * m.std + m.mean, orig, epsilon = 1e-9);
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let set = toy_set(vec![vec![1.0]], &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        let mut other = toy_set(vec![vec![1.0, 2.0]], &[FeatureKind::Numeric, FeatureKind::Numeric]);
        assert_eq!(apply_standardizer(&mut other, &params), Err(PreprocessError::SchemaMismatch));
    }

    #[test]
    fn double_standardization_rejected() {
        let mut set = toy_set(vec![vec![1.0], vec![2.0]], &[FeatureKind::Numeric]);
        let params = fit_standardizer(&set).unwrap();
        apply_standardizer(&mut set, &params).unwrap();
        assert_eq!(
            apply_standardizer(&mut set, &params),
            Err(PreprocessError::AlreadyStandardized)
        );
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_series() -> impl Strategy<Value = Vec<Option<f64>>> {
        proptest::collection::vec(
            proptest::option::weighted(0.85, -50.0f64..50.0),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn cleaning_preserves_length(series in arb_series()) {
            let (out, _) = clean_numeric_series(&series, &CleanConfig::default());
            prop_assert_eq!(out.len(), series.len());
        }

        #[test]
        fn cleaning_is_idempotent(series in arb_series()) {
            let cfg = CleanConfig::default();
            let (once, _) = clean_numeric_series(&series, &cfg);
            let (twice, _) = clean_numeric_series(&once, &cfg);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn locf_output_has_no_missing_when_any_valid(series in arb_series()) {
            let (out, counts) = impute_categorical_series(&series);
            prop_assert_eq!(out.len(), series.len());
            if !counts.all_missing && !series.is_empty() {
                prop_assert!(out.iter().all(|v| v.is_some()));
            }
        }
    }
}
