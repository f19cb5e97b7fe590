//! Random forest: bagged CART trees with per-split feature subsetting.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeatureSampler, SplitCriterion, TreeParams};
use super::{FeatureMatrix, LearnError};
use crate::rng::substream_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ceil(sqrt(F)) features per split.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(n) => n.clamp(1, n_features),
        }
        .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 1000,
            max_depth: 23,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Each tree trains on a bootstrap resample (n draws with replacement)
    /// with `max_features` features considered per split; tree i draws from
    /// the `("bootstrap", i)` substream of the seed, so training is
    /// deterministic and order-independent under parallelism.
    pub fn fit(
        x: &FeatureMatrix,
        y: &[u8],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Self, LearnError> {
        if x.n_rows() == 0 {
            return Err(LearnError::EmptyData);
        }
        if params.n_estimators == 0 {
            return Err(LearnError::InvalidHyperParams("n_estimators must be >= 1".into()));
        }
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_split: 2,
            criterion: SplitCriterion::Gini,
        };
        let max_features = params.max_features.resolve(x.n_cols());
        let trees: Result<Vec<DecisionTree>, LearnError> = (0..params.n_estimators)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream_indexed(seed, "bootstrap", i as u64);
                let (bx, by);
                let (x_ref, y_ref): (&FeatureMatrix, &[u8]) = if params.bootstrap {
                    let n = x.n_rows();
                    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                    bx = x.select_rows(&rows);
                    by = rows.iter().map(|&r| y[r]).collect::<Vec<u8>>();
                    (&bx, &by)
                } else {
                    (x, y)
                };
                DecisionTree::fit_weighted(
                    x_ref,
                    y_ref,
                    None,
                    &tree_params,
                    Some(FeatureSampler { rng: &mut rng, max_features }),
                )
            })
            .collect();
        Ok(RandomForest { trees: trees? })
    }

    fn votes(&self, features: &[f64]) -> Result<(usize, usize), LearnError> {
        let mut counts = (0usize, 0usize);
        for tree in &self.trees {
            if tree.predict(features)? == 1 {
                counts.1 += 1;
            } else {
                counts.0 += 1;
            }
        }
        Ok(counts)
    }

    /// Plurality vote over the trees; ties go to class 0.
    pub fn predict(&self, features: &[f64]) -> Result<u8, LearnError> {
        let (zeros, ones) = self.votes(features)?;
        Ok(u8::from(ones > zeros))
    }

    /// Fraction of trees voting class 1.
    pub fn predict_score(&self, features: &[f64]) -> Result<f64, LearnError> {
        let (zeros, ones) = self.votes(features)?;
        Ok(ones as f64 / (zeros + ones) as f64)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
