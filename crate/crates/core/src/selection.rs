//! Pareto-dominance filtering and hypervolume ranking.
//!
//! A solution is one (time window, metric vector) point in the maximized
//! metric space. Algorithms are ranked by the hypervolume of their
//! non-dominated set: the Lebesgue measure of the union of axis-aligned
//! boxes spanned from the reference point to each front member, computed
//! exactly by recursive dimension sweep. The reported indicator is
//! `I_H^-(W) = I_H(R) - I_H(W)`, where smaller is better and the reference
//! set defaults to `I_H(R) = 0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::WindowSpec;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("solutions have different metric dimensions ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("a point lies below the reference point in dimension {dimension}")]
    PointBelowReference { dimension: usize },
    #[error("no solutions to rank")]
    EmptyInput,
}

/// One (time window, metric vector) point; all components are maximized and
/// live in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub window: WindowSpec,
    pub metrics: Vec<f64>,
}

impl Solution {
    /// Volume of this solution's own hypercube against the reference point.
    pub fn box_volume(&self, reference: &[f64]) -> f64 {
        self.metrics.iter().zip(reference).map(|(f, r)| (f - r).max(0.0)).product()
    }
}

/// True iff `a` is at least as good as `b` everywhere and strictly better
/// somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool, SelectionError> {
    if a.len() != b.len() {
        return Err(SelectionError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return Ok(false);
        }
        if x > y {
            strict = true;
        }
    }
    Ok(strict)
}

/// All and only the solutions not dominated by any other. Duplicates of a
/// front member are all retained; output preserves input order.
///
/// Candidates are visited in descending lexicographic order, where any
/// dominator precedes its victims, so each point only needs checking
/// against the front built so far.
pub fn pareto_front(solutions: &[Solution]) -> Result<Vec<Solution>, SelectionError> {
    let vectors: Vec<&[f64]> = solutions.iter().map(|s| s.metrics.as_slice()).collect();
    let keep = pareto_mask(&vectors)?;
    Ok(solutions.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

fn lex_desc(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x).expect("metric values must not be NaN") {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

fn pareto_mask(vectors: &[&[f64]]) -> Result<Vec<bool>, SelectionError> {
    let m = vectors.first().map_or(0, |v| v.len());
    for v in vectors {
        if v.len() != m {
            return Err(SelectionError::DimensionMismatch { left: m, right: v.len() });
        }
    }
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|a, b| lex_desc(vectors[*a], vectors[*b]));
    let mut keep = vec![false; vectors.len()];
    let mut front: Vec<usize> = Vec::new();
    'candidates: for i in order {
        for &f in &front {
            if dominates(vectors[f], vectors[i])? {
                continue 'candidates;
            }
        }
        keep[i] = true;
        front.push(i);
    }
    Ok(keep)
}

/// Exact hypervolume of the union of boxes `[reference, point]` by the
/// slicing recursion: sort by the last coordinate, sweep slabs between
/// consecutive values, and multiply each slab height by the hypervolume of
/// the projection of the points reaching it.
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> Result<f64, SelectionError> {
    for p in points {
        if p.len() != reference.len() {
            return Err(SelectionError::DimensionMismatch {
                left: reference.len(),
                right: p.len(),
            });
        }
        for (d, (x, r)) in p.iter().zip(reference).enumerate() {
            if x < r {
                return Err(SelectionError::PointBelowReference { dimension: d });
            }
        }
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let views: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    Ok(slice_recurse(&views, reference))
}

fn slice_recurse(points: &[&[f64]], reference: &[f64]) -> f64 {
    let m = reference.len();
    if m == 1 {
        return points.iter().map(|p| p[0] - reference[0]).fold(0.0, f64::max);
    }
    // Only the non-dominated points contribute to the union.
    let keep = pareto_mask(points).expect("dimensions checked by caller");
    let mut front: Vec<&[f64]> =
        points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect();
    front.sort_by(|a, b| b[m - 1].partial_cmp(&a[m - 1]).expect("metric values must not be NaN"));

    let mut volume = 0.0;
    let mut projected: Vec<Vec<f64>> = Vec::with_capacity(front.len());
    for (i, point) in front.iter().enumerate() {
        projected.push(point[..m - 1].to_vec());
        let top = point[m - 1];
        let bottom = if i + 1 < front.len() { front[i + 1][m - 1] } else { reference[m - 1] };
        if top > bottom {
            let views: Vec<&[f64]> = projected.iter().map(|p| p.as_slice()).collect();
            volume += (top - bottom) * slice_recurse(&views, &reference[..m - 1]);
        }
    }
    volume
}

/// How the per-algorithm volume is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvMode {
    /// Exact measure of the union of boxes (the indicator proper).
    Union,
    /// Plain sum of per-solution box volumes, ignoring overlap. Can exceed
    /// the unit cube; kept for comparison against reports computed that way.
    Summed,
}

impl std::str::FromStr for HvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(HvMode::Union),
            "summed" => Ok(HvMode::Summed),
            other => Err(format!("unknown hypervolume mode {other:?}")),
        }
    }
}

/// Per-algorithm ranking entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRanking {
    pub algorithm: String,
    /// Non-dominated solutions, input order preserved.
    pub front: Vec<Solution>,
    pub hypervolume: f64,
    /// `I_H(R) - I_H(W)`; smaller values correspond to higher quality.
    pub ih_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypervolumeReport {
    pub mode: HvMode,
    /// `I_H(R)`; 0 unless a reference set is supplied.
    pub reference_hv: f64,
    /// Sorted ascending by `ih_minus`, ties broken alphabetically.
    pub entries: Vec<AlgorithmRanking>,
    /// Algorithm names listed for completeness but not implemented here.
    pub placeholders: Vec<String>,
}

/// Ranks algorithms by hypervolume difference to the reference set.
pub fn rank_algorithms(
    per_algorithm: &BTreeMap<String, Vec<Solution>>,
    reference_set: Option<&[Solution]>,
    mode: HvMode,
) -> Result<HypervolumeReport, SelectionError> {
    if per_algorithm.is_empty() || per_algorithm.values().any(|s| s.is_empty()) {
        return Err(SelectionError::EmptyInput);
    }
    let m = per_algorithm.values().next().expect("non-empty").first().expect("non-empty").metrics.len();
    let reference = vec![0.0; m];
    let volume_of = |solutions: &[Solution]| -> Result<(Vec<Solution>, f64), SelectionError> {
        let front = pareto_front(solutions)?;
        let value = match mode {
            HvMode::Union => {
                let points: Vec<Vec<f64>> = front.iter().map(|s| s.metrics.clone()).collect();
                hypervolume(&points, &reference)?
            }
            HvMode::Summed => front.iter().map(|s| s.box_volume(&reference)).sum(),
        };
        Ok((front, value))
    };

    let reference_hv = match reference_set {
        Some(solutions) => volume_of(solutions)?.1,
        None => 0.0,
    };
    let mut entries = Vec::with_capacity(per_algorithm.len());
    for (name, solutions) in per_algorithm {
        let (front, hv) = volume_of(solutions)?;
        entries.push(AlgorithmRanking {
            algorithm: name.clone(),
            front,
            hypervolume: hv,
            ih_minus: reference_hv - hv,
        });
    }
    entries.sort_by(|a, b| {
        a.ih_minus
            .partial_cmp(&b.ih_minus)
            .expect("volumes are finite")
            .then_with(|| a.algorithm.cmp(&b.algorithm))
    });
    Ok(HypervolumeReport { mode, reference_hv, entries, placeholders: Vec::new() })
}
