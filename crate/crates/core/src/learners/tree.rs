//! CART classification tree with gini splits.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, LearnError};

/// Gini impurity `1 - sum(p_k^2)` over class counts.
pub fn gini(class_counts: &[f64]) -> Result<f64, LearnError> {
    let total: f64 = class_counts.iter().sum();
    if total <= 0.0 {
        return Err(LearnError::EmptyNode);
    }
    Ok(1.0 - class_counts.iter().map(|c| (c / total).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub criterion: SplitCriterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 17, min_samples_split: 2, criterion: SplitCriterion::Gini }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Weighted class counts of the training samples that reached the leaf.
    Leaf { counts: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

/// Per-node feature subsetting for forests: an RNG plus how many features
/// to consider at each split.
pub(crate) struct FeatureSampler<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub max_features: usize,
}

impl DecisionTree {
    pub fn fit(x: &FeatureMatrix, y: &[u8], params: &TreeParams) -> Result<Self, LearnError> {
        Self::fit_weighted(x, y, None, params, None)
    }

    /// Greedy CART: the best (feature, threshold) split minimizes the
    /// weighted gini of the children, over thresholds at midpoints of
    /// consecutive distinct sorted values. Ties go to the lowest feature
    /// index, then the lowest threshold. Growth stops at `max_depth`, below
    /// `min_samples_split`, or on a pure node.
    pub(crate) fn fit_weighted(
        x: &FeatureMatrix,
        y: &[u8],
        weights: Option<&[f64]>,
        params: &TreeParams,
        mut sampler: Option<FeatureSampler<'_>>,
    ) -> Result<Self, LearnError> {
        if x.n_rows() == 0 || y.is_empty() {
            return Err(LearnError::EmptyData);
        }
        if x.n_rows() != y.len() {
            return Err(LearnError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
        }
        let mut tree = DecisionTree { nodes: Vec::new(), n_features: x.n_cols() };
        let mut indices: Vec<usize> = (0..x.n_rows()).collect();
        tree.build(x, y, weights, &mut indices, 0, params, &mut sampler);
        Ok(tree)
    }

    fn build(
        &mut self,
        x: &FeatureMatrix,
        y: &[u8],
        weights: Option<&[f64]>,
        indices: &mut Vec<usize>,
        depth: usize,
        params: &TreeParams,
        sampler: &mut Option<FeatureSampler<'_>>,
    ) -> usize {
        let weight_of = |i: usize| weights.map_or(1.0, |w| w[i]);
        let mut counts = [0.0f64; 2];
        for &i in indices.iter() {
            counts[usize::from(y[i] != 0)] += weight_of(i);
        }
        let node_gini = gini(&counts).expect("node is non-empty");

        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf { counts });
            nodes.len() - 1
        };
        if depth >= params.max_depth || indices.len() < params.min_samples_split || node_gini == 0.0
        {
            return make_leaf(&mut self.nodes);
        }

        let candidates: Vec<usize> = match sampler {
            Some(FeatureSampler { rng, max_features }) => {
                let k = (*max_features).min(x.n_cols());
                let mut chosen = sample(rng, x.n_cols(), k).into_vec();
                chosen.sort_unstable();
                chosen
            }
            None => (0..x.n_cols()).collect(),
        };

        let total_weight: f64 = counts[0] + counts[1];
        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for &feature in &candidates {
            sorted.clear();
            sorted.extend(indices.iter().map(|&i| (x.get(i, feature), i)));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("features must not be NaN"));
            let mut left = [0.0f64; 2];
            for j in 0..sorted.len() - 1 {
                let (value, i) = sorted[j];
                left[usize::from(y[i] != 0)] += weight_of(i);
                let next = sorted[j + 1].0;
                if value >= next {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let wl = left[0] + left[1];
                let wr = right[0] + right[1];
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let impurity = (wl * gini(&left).expect("non-empty side")
                    + wr * gini(&right).expect("non-empty side"))
                    / total_weight;
                let threshold = value / 2.0 + next / 2.0;
                if best.map_or(true, |(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return make_leaf(&mut self.nodes);
        };
        let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) =
            indices.iter().partition(|&&i| x.get(i, feature) <= threshold);
        let node = self.nodes.len();
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        let left = self.build(x, y, weights, &mut left_idx, depth + 1, params, sampler);
        let right = self.build(x, y, weights, &mut right_idx, depth + 1, params, sampler);
        self.nodes[node] = Node::Split { feature, threshold, left, right };
        node
    }

    fn leaf_counts(&self, features: &[f64]) -> &[f64; 2] {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Split { feature, threshold, left, right } => {
                    node = if features[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class of the reached leaf; ties go to class 0.
    pub fn predict(&self, features: &[f64]) -> Result<u8, LearnError> {
        self.check_width(features)?;
        let counts = self.leaf_counts(features);
        Ok(u8::from(counts[1] > counts[0]))
    }

    /// Weighted class-1 fraction of the reached leaf.
    pub fn class1_probability(&self, features: &[f64]) -> Result<f64, LearnError> {
        self.check_width(features)?;
        let counts = self.leaf_counts(features);
        Ok(counts[1] / (counts[0] + counts[1]))
    }

    fn check_width(&self, features: &[f64]) -> Result<(), LearnError> {
        if features.len() != self.n_features {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], node: usize) -> usize {
            match &nodes[node] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[5.0, 5.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(gini(&[7.0, 3.0]).unwrap(), 0.42, epsilon = 1e-12);
    }

    #[test]
    fn gini_rejects_empty_node() {
        assert_eq!(gini(&[0.0, 0.0]).unwrap_err(), LearnError::EmptyNode);
    }

    fn matrix(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn separable_1d_data_needs_one_split() {
        let x = matrix(&[&[-2.0], &[-1.0], &[1.0], &[2.0]]);
        let y = [0, 0, 1, 1];
        let tree = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        for (i, label) in y.iter().enumerate() {
            assert_eq!(tree.predict(x.row(i)).unwrap(), *label);
        }
    }

    #[test]
    fn single_class_data_is_one_leaf() {
        let x = matrix(&[&[1.0], &[2.0], &[3.0]]);
        let tree = DecisionTree::fit(&x, &[1, 1, 1], &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.predict(&[9.0]).unwrap(), 1);
    }

    #[test]
    fn xor_fits_exactly_at_depth_two() {
        // Exhaustive check of the 4-point truth table.
        let x = matrix(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let y = [0, 1, 1, 0];
        let tree = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        assert!(tree.depth() >= 2);
        for (i, label) in y.iter().enumerate() {
            assert_eq!(tree.predict(x.row(i)).unwrap(), *label, "point {i}");
        }
    }

    #[test]
    fn max_depth_is_respected() {
        let x = matrix(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let y = [0, 1, 1, 0];
        let params = TreeParams { max_depth: 1, ..TreeParams::default() };
        let tree = DecisionTree::fit(&x, &y, &params).unwrap();
        assert!(tree.depth() <= 1);
    }

    #[test]
    fn empty_data_rejected() {
        let x = FeatureMatrix::from_rows(vec![]).unwrap();
        assert_eq!(
            DecisionTree::fit(&x, &[], &TreeParams::default()).unwrap_err(),
            LearnError::EmptyData
        );
    }

    #[test]
    fn tie_break_prefers_lowest_feature_and_threshold() {
        // Both features separate the data identically; feature 0 must win.
        let x = matrix(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let y = [0, 1];
        let tree = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        match &tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            other => panic!("expected a split at the root, got {other:?}"),
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let x = matrix(&[&[1.0, 3.0], &[2.0, 1.0], &[3.0, 2.0], &[4.0, 5.0], &[5.0, 4.0]]);
        let y = [0, 0, 1, 1, 0];
        let a = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        let b = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
