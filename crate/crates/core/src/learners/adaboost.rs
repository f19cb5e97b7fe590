//! SAMME.R boosting over probability-emitting CART stumps.

use serde::{Deserialize, Serialize};

use super::gbm::PROBABILITY_CLAMP;
use super::tree::{DecisionTree, SplitCriterion, TreeParams};
use super::{FeatureMatrix, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    /// Depth of the CART base estimator; the classic stump by default.
    pub base_depth: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        AdaBoostParams { n_estimators: 400, learning_rate: 1.0, base_depth: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostStop {
    /// All weight mass collapsed onto one instance; boosting stopped early
    /// with the stages fitted so far.
    DegenerateWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    params: AdaBoostParams,
    stages: Vec<DecisionTree>,
    pub stopped_early: Option<BoostStop>,
    n_features: usize,
}

/// Stage contribution `h(x) = 0.5 * (ln p - ln (1-p))` with the leaf
/// probability clamped away from 0 and 1.
fn stage_value(tree: &DecisionTree, features: &[f64]) -> Result<f64, LearnError> {
    let p = tree
        .class1_probability(features)?
        .clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    Ok(0.5 * (p.ln() - (1.0 - p).ln()))
}

impl AdaBoostModel {
    pub fn fit(x: &FeatureMatrix, y: &[u8], params: &AdaBoostParams) -> Result<Self, LearnError> {
        if x.n_rows() == 0 {
            return Err(LearnError::EmptyData);
        }
        if x.n_rows() != y.len() {
            return Err(LearnError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
        }
        let n = y.len();
        let tree_params = TreeParams {
            max_depth: params.base_depth,
            min_samples_split: 2,
            criterion: SplitCriterion::Gini,
        };
        let mut weights = vec![1.0 / n as f64; n];
        let mut model = AdaBoostModel {
            params: *params,
            stages: Vec::new(),
            stopped_early: None,
            n_features: x.n_cols(),
        };
        for _ in 0..params.n_estimators {
            let tree = DecisionTree::fit_weighted(x, y, Some(&weights), &tree_params, None)?;
            let mut sum = 0.0;
            for i in 0..n {
                let h = stage_value(&tree, x.row(i))?;
                let signed_y = if y[i] != 0 { 1.0 } else { -1.0 };
                weights[i] *= (-params.learning_rate * signed_y * h).exp();
                sum += weights[i];
            }
            model.stages.push(tree);
            for w in &mut weights {
                *w /= sum;
            }
            if weights.iter().any(|w| *w >= 1.0 - 1e-12) {
                model.stopped_early = Some(BoostStop::DegenerateWeights);
                break;
            }
        }
        Ok(model)
    }

    fn decision(&self, features: &[f64]) -> Result<f64, LearnError> {
        if features.len() != self.n_features {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features,
                got: features.len(),
            });
        }
        let mut sum = 0.0;
        for tree in &self.stages {
            sum += stage_value(tree, features)?;
        }
        Ok(sum)
    }

    /// Sign of the summed stage contributions; the tie goes to class 0.
    pub fn predict(&self, features: &[f64]) -> Result<u8, LearnError> {
        Ok(u8::from(self.decision(features)? > 0.0))
    }

    pub fn predict_score(&self, features: &[f64]) -> Result<f64, LearnError> {
        let d = self.decision(features)?;
        Ok(1.0 / (1.0 + (-d).exp()))
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }
}
