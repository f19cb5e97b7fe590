//! Gradient boosting with binomial deviance loss.
//!
//! Stages fit squared-error regression trees to the negative gradient
//! `r_i = y_i - sigmoid(F(x_i))`; leaf values take a one-step Newton update
//! `sum(r) / sum(p(1-p))` and are added to F scaled by the learning rate.

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, LearnError};

pub const PROBABILITY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbmLoss {
    /// Binomial negative log-likelihood.
    Deviance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub loss: GbmLoss,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams { n_estimators: 100, max_depth: 5, learning_rate: 1.0, loss: GbmLoss::Deviance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum RegNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Squared-error regression tree over the stage residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegressionTree {
    nodes: Vec<RegNode>,
}

impl RegressionTree {
    /// `targets` are the residuals the split criterion sees; `newton_w` are
    /// the per-sample `p(1-p)` weights the leaf value divides by.
    fn fit(
        x: &FeatureMatrix,
        targets: &[f64],
        newton_w: &[f64],
        max_depth: usize,
        min_samples_split: usize,
    ) -> RegressionTree {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let mut indices: Vec<usize> = (0..x.n_rows()).collect();
        tree.build(x, targets, newton_w, &mut indices, 0, max_depth, min_samples_split);
        tree
    }

    fn build(
        &mut self,
        x: &FeatureMatrix,
        targets: &[f64],
        newton_w: &[f64],
        indices: &mut Vec<usize>,
        depth: usize,
        max_depth: usize,
        min_samples_split: usize,
    ) -> usize {
        let make_leaf = |nodes: &mut Vec<RegNode>| {
            let num: f64 = indices.iter().map(|&i| targets[i]).sum();
            let den: f64 = indices.iter().map(|&i| newton_w[i]).sum();
            nodes.push(RegNode::Leaf { value: num / den.max(1e-12) });
            nodes.len() - 1
        };
        let sum: f64 = indices.iter().map(|&i| targets[i]).sum();
        let sum_sq: f64 = indices.iter().map(|&i| targets[i] * targets[i]).sum();
        let n = indices.len() as f64;
        let node_sse = sum_sq - sum * sum / n;
        if depth >= max_depth || indices.len() < min_samples_split || node_sse <= 1e-12 {
            return make_leaf(&mut self.nodes);
        }

        // Minimize SSE_left + SSE_right; ties go to the lowest feature
        // index, then the lowest threshold.
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for feature in 0..x.n_cols() {
            sorted.clear();
            sorted.extend(indices.iter().map(|&i| (x.get(i, feature), i)));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("features must not be NaN"));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for j in 0..sorted.len() - 1 {
                let (value, i) = sorted[j];
                left_sum += targets[i];
                left_sq += targets[i] * targets[i];
                let next = sorted[j + 1].0;
                if value >= next {
                    continue;
                }
                let nl = (j + 1) as f64;
                let nr = n - nl;
                let right_sum = sum - left_sum;
                let right_sq = sum_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
                if best.map_or(true, |(b, _, _)| sse < b) {
                    best = Some((sse, feature, value / 2.0 + next / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return make_leaf(&mut self.nodes);
        };
        let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) =
            indices.iter().partition(|&&i| x.get(i, feature) <= threshold);
        let node = self.nodes.len();
        self.nodes.push(RegNode::Split { feature, threshold, left: 0, right: 0 });
        let left =
            self.build(x, targets, newton_w, &mut left_idx, depth + 1, max_depth, min_samples_split);
        let right =
            self.build(x, targets, newton_w, &mut right_idx, depth + 1, max_depth, min_samples_split);
        self.nodes[node] = RegNode::Split { feature, threshold, left, right };
        node
    }

    fn value(&self, features: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                RegNode::Split { feature, threshold, left, right } => {
                    node = if features[*feature] <= *threshold { *left } else { *right };
                }
                RegNode::Leaf { value } => return *value,
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    params: GbmParams,
    base_score: f64,
    stages: Vec<RegressionTree>,
    n_features: usize,
    /// Mean binomial deviance on the training data after each stage.
    pub train_deviance: Vec<f64>,
}

impl GradientBoosting {
    pub fn fit(x: &FeatureMatrix, y: &[u8], params: &GbmParams) -> Result<Self, LearnError> {
        if x.n_rows() == 0 {
            return Err(LearnError::EmptyData);
        }
        if x.n_rows() != y.len() {
            return Err(LearnError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
        }
        let n = y.len() as f64;
        // A single-class base rate would make F0 infinite; clamp it.
        let base_rate = (y.iter().filter(|v| **v != 0).count() as f64 / n)
            .clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        let base_score = (base_rate / (1.0 - base_rate)).ln();

        let mut scores = vec![base_score; y.len()];
        let mut model = GradientBoosting {
            params: *params,
            base_score,
            stages: Vec::with_capacity(params.n_estimators),
            n_features: x.n_cols(),
            train_deviance: Vec::with_capacity(params.n_estimators),
        };
        let mut residuals = vec![0.0; y.len()];
        let mut newton_w = vec![0.0; y.len()];
        for _ in 0..params.n_estimators {
            for i in 0..y.len() {
                let p = sigmoid(scores[i]);
                residuals[i] = f64::from(y[i]) - p;
                newton_w[i] = (p * (1.0 - p)).max(1e-12);
            }
            let tree = RegressionTree::fit(x, &residuals, &newton_w, params.max_depth, 2);
            for i in 0..y.len() {
                scores[i] += params.learning_rate * tree.value(x.row(i));
            }
            model.stages.push(tree);
            let deviance = y
                .iter()
                .zip(&scores)
                .map(|(yi, f)| {
                    let p = sigmoid(*f).clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
                    -(f64::from(*yi) * p.ln() + (1.0 - f64::from(*yi)) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n;
            model.train_deviance.push(deviance);
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
        let mut f = self.base_score;
        for tree in &self.stages {
            f += self.params.learning_rate * tree.value(features);
        }
        Ok(f)
    }

    /// sigmoid(F(x)); always strictly inside (0, 1).
    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, LearnError> {
        Ok(sigmoid(self.decision(features)?))
    }

    /// Class 1 iff F(x) > 0; the tie F(x) = 0 goes to class 0.
    pub fn predict(&self, features: &[f64]) -> Result<u8, LearnError> {
        Ok(u8::from(self.decision(features)? > 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn separable() -> (FeatureMatrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 10.0]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        (FeatureMatrix::from_rows(rows).unwrap(), y)
    }

    #[test]
    fn separable_data_reaches_perfect_training_accuracy() {
        let (x, y) = separable();
        let params = GbmParams { n_estimators: 10, ..GbmParams::default() };
        let model = GradientBoosting::fit(&x, &y, &params).unwrap();
        for (i, label) in y.iter().enumerate() {
            assert_eq!(model.predict(x.row(i)).unwrap(), *label);
        }
    }

    #[test]
    fn zero_stages_predict_base_rate() {
        let (x, y) = separable();
        let params = GbmParams { n_estimators: 0, ..GbmParams::default() };
        let model = GradientBoosting::fit(&x, &y, &params).unwrap();
        assert_abs_diff_eq!(model.predict_proba(&[3.0]).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(model.predict_proba(&[-7.0]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn probabilities_stay_in_open_unit_interval() {
        let (x, y) = separable();
        let model = GradientBoosting::fit(&x, &y, &GbmParams::default()).unwrap();
        for i in -30..30 {
            let p = model.predict_proba(&[f64::from(i)]).unwrap();
            assert!(p > 0.0 && p < 1.0, "proba {p} out of (0,1)");
        }
    }

    #[test]
    fn single_class_base_score_is_clamped() {
        let (x, _) = separable();
        let y = vec![1u8; 20];
        let model = GradientBoosting::fit(&x, &y, &GbmParams::default()).unwrap();
        assert!(model.base_score.is_finite());
        assert_eq!(model.predict(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn training_deviance_is_non_increasing() {
        let (x, y) = separable();
        let params = GbmParams { n_estimators: 25, ..GbmParams::default() };
        let model = GradientBoosting::fit(&x, &y, &params).unwrap();
        for pair in model.train_deviance.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "deviance rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let (x, y) = separable();
        let a = GradientBoosting::fit(&x, &y, &GbmParams::default()).unwrap();
        let b = GradientBoosting::fit(&x, &y, &GbmParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
