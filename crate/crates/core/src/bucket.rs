//! Alignable prompt bucket.
//!
//! One extra row and column filled with a constant prompt value `p` are
//! appended to the clip-caption similarity matrix. Clips or captions whose
//! similarities all fall below `p` route their mass into the bucket and are
//! discarded when the interior `n x m` block of the solved plan is kept.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{Marginals, SimilarityMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::numeric;
use crate::sinkhorn::{sinkhorn_plan, SolverConfig, SolverState};

/// Where the prompt value comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PromptSource {
    /// Fixed prompt value in similarity units.
    Value(f64),
    /// Nearest-rank lower quantile of the originally aligned pair similarities.
    Quantile(f64),
}

/// Weights given to the bucket row and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalScheme {
    /// Bucket weighted by the opposite side's count: it can absorb every clip
    /// (or every caption) at once.
    #[default]
    MatchedMass,
    /// Every row and column of the augmented problem gets equal weight.
    Uniform,
}

impl MarginalScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MatchedMass => "matched_mass",
            Self::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for MarginalScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" | "matched_mass" => Ok(Self::MatchedMass),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::invalid(format!(
                "unknown marginal scheme {other:?} (expected matched or uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketConfig {
    pub prompt: PromptSource,
    pub marginal_scheme: MarginalScheme,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            prompt: PromptSource::Quantile(0.3),
            marginal_scheme: MarginalScheme::MatchedMass,
        }
    }
}

impl BucketConfig {
    pub fn validate(&self) -> Result<()> {
        match self.prompt {
            PromptSource::Value(p) if !p.is_finite() => {
                Err(Error::invalid("prompt value must be finite"))
            }
            PromptSource::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                Err(Error::invalid("bucket quantile must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Resolve the prompt value; quantile sources read `aligned_sims`.
    pub fn resolve_prompt(&self, aligned_sims: &[f64]) -> Result<f64> {
        self.validate()?;
        match self.prompt {
            PromptSource::Value(p) => Ok(p),
            PromptSource::Quantile(q) => estimate_prompt_value(aligned_sims, q),
        }
    }
}

/// Nearest-rank lower quantile: the element at index `ceil(q·len) − 1` of the
/// ascending sort.
pub fn estimate_prompt_value(diagonal_sims: &[f64], quantile: f64) -> Result<f64> {
    if diagonal_sims.is_empty() {
        return Err(Error::Empty("prompt estimation input"));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(format!(
            "bucket quantile must lie in (0, 1), got {quantile}"
        )));
    }
    if diagonal_sims.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prompt estimation input"));
    }
    let mut sorted = diagonal_sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (quantile * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Similarity matrix with the prompt row and column appended.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSimilarity {
    pub base: SimilarityMatrix,
    pub p: f64,
    pub values: SimilarityMatrix,
}

pub fn augment_similarity(s: &SimilarityMatrix, p: f64) -> Result<AugmentedSimilarity> {
    if !p.is_finite() {
        return Err(Error::NonFinite("prompt value"));
    }
    let (n, m) = s.shape();
    let mut values = Array2::from_elem((n + 1, m + 1), p);
    values.slice_mut(s![..n, ..m]).assign(s.values());
    Ok(AugmentedSimilarity {
        base: s.clone(),
        p,
        values: SimilarityMatrix::new(values)?,
    })
}

/// Marginals of the `(n+1) x (m+1)` augmented problem.
pub fn augmented_marginals(n: usize, m: usize, scheme: MarginalScheme) -> Result<Marginals> {
    if n == 0 || m == 0 {
        return Err(Error::invalid(format!(
            "augmented marginals need positive counts, got ({n}, {m})"
        )));
    }
    match scheme {
        MarginalScheme::MatchedMass => {
            let total = (n + m) as f64;
            let mut mu = vec![1.0 / total; n + 1];
            mu[n] = m as f64 / total;
            let mut nu = vec![1.0 / total; m + 1];
            nu[m] = n as f64 / total;
            Marginals::new(mu, nu)
        }
        MarginalScheme::Uniform => Marginals::new(
            vec![1.0 / (n + 1) as f64; n + 1],
            vec![1.0 / (m + 1) as f64; m + 1],
        ),
    }
}

/// Interior block of a bucket-augmented plan, plus what went to the bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPlan {
    /// `n x m` clip-caption mass; sub-stochastic.
    pub interior: Array2<f64>,
    /// Mass each clip sent to the bucket column.
    pub clip_bucket: Vec<f64>,
    /// Mass each caption received from the bucket row.
    pub caption_bucket: Vec<f64>,
    /// Bucket-to-bucket mass.
    pub corner: f64,
}

impl FilteredPlan {
    /// Split an `(n+1) x (m+1)` plan into interior and bucket parts.
    pub fn from_augmented(q: &Array2<f64>) -> Result<Self> {
        let (rows, cols) = q.dim();
        if rows < 2 || cols < 2 {
            return Err(Error::invalid("augmented plan must be at least 2 x 2"));
        }
        let (n, m) = (rows - 1, cols - 1);
        Ok(Self {
            interior: q.slice(s![..n, ..m]).to_owned(),
            clip_bucket: q.slice(s![..n, m]).to_vec(),
            caption_bucket: q.slice(s![n, ..m]).to_vec(),
            corner: q[[n, m]],
        })
    }

    /// Wrap a plan that had no bucket.
    pub fn without_bucket(q: Array2<f64>) -> Self {
        let (n, m) = q.dim();
        Self {
            interior: q,
            clip_bucket: vec![0.0; n],
            caption_bucket: vec![0.0; m],
            corner: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.interior.nrows()
    }

    pub fn m(&self) -> usize {
        self.interior.ncols()
    }

    pub fn interior_mass(&self) -> f64 {
        numeric::sum(self.interior.iter().copied())
    }

    /// Mass on bucket cells other than the corner.
    pub fn bucket_edge_mass(&self) -> f64 {
        numeric::sum(self.clip_bucket.iter().chain(&self.caption_bucket).copied())
    }

    /// Mass on every bucket cell, corner included.
    pub fn bucket_mass(&self) -> f64 {
        self.bucket_edge_mass() + self.corner
    }
}

/// Result of transport with a prompt bucket.
#[derive(Debug, Clone)]
pub struct NortonResult {
    pub filtered: FilteredPlan,
    /// `⟨interior plan, S⟩`; bucket cells contribute nothing.
    pub distance: f64,
    pub p: f64,
    pub augmented: TransportPlan,
    pub state: SolverState,
}

/// Solve entropic transport on the bucket-augmented matrix and score the
/// interior block against `s`. A quantile prompt source is resolved from the
/// diagonal of `s`, i.e. treating `(a, a)` as the originally aligned pairs.
pub fn norton_distance(
    s: &SimilarityMatrix,
    bucket: &BucketConfig,
    solver: &SolverConfig,
) -> Result<NortonResult> {
    let p = bucket.resolve_prompt(&s.diagonal())?;
    norton_distance_with_prompt(s, p, bucket.marginal_scheme, solver)
}

pub fn norton_distance_with_prompt(
    s: &SimilarityMatrix,
    p: f64,
    scheme: MarginalScheme,
    solver: &SolverConfig,
) -> Result<NortonResult> {
    let aug = augment_similarity(s, p)?;
    let marg = augmented_marginals(s.n(), s.m(), scheme)?;
    let (plan, state) = sinkhorn_plan(&aug.values, &marg, solver)?;
    let filtered = FilteredPlan::from_augmented(&plan.values)?;
    let distance = numeric::sum(
        filtered
            .interior
            .iter()
            .zip(s.values().iter())
            .map(|(q, v)| q * v),
    );
    Ok(NortonResult {
        filtered,
        distance,
        p,
        augmented: plan,
        state,
    })
}

/// How correspondences are read off a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RealignStrategy {
    /// Each kept clip maps to its highest-mass caption (lowest index on ties).
    RowArgmax,
    /// Every cell with positive mass at least `t`.
    Threshold(f64),
}

/// Extracted clip-caption correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub pairs: Vec<(usize, usize, f64)>,
    pub dropped_clips: Vec<usize>,
    pub dropped_captions: Vec<usize>,
}

impl AlignmentMap {
    pub fn contains_pair(&self, clip: usize, caption: usize) -> bool {
        self.pairs
            .iter()
            .any(|&(a, b, _)| a == clip && b == caption)
    }
}

/// Read correspondences off a filtered plan. A clip (caption) is dropped when
/// its bucket mass strictly exceeds every real mass in its row (column), or
/// when its row (column) carries no real mass at all.
pub fn extract_realignment(plan: &FilteredPlan, strategy: RealignStrategy) -> Result<AlignmentMap> {
    let (n, m) = plan.interior.dim();
    if plan.clip_bucket.len() != n || plan.caption_bucket.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (n, m),
            found: (plan.clip_bucket.len(), plan.caption_bucket.len()),
        });
    }
    if plan.interior.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid(
            "plan entries must be finite and nonnegative",
        ));
    }
    let dropped = |max_real: f64, bucket: f64| max_real <= 0.0 || bucket > max_real;
    let row_best: Vec<(usize, f64)> = plan
        .interior
        .rows()
        .into_iter()
        .map(|r| argmax_first(r.iter().copied()))
        .collect();
    let dropped_clips: Vec<usize> = (0..n)
        .filter(|&a| dropped(row_best[a].1, plan.clip_bucket[a]))
        .collect();
    let dropped_captions: Vec<usize> = (0..m)
        .filter(|&b| {
            let (_, best) = argmax_first(plan.interior.column(b).iter().copied());
            dropped(best, plan.caption_bucket[b])
        })
        .collect();
    let pairs = match strategy {
        RealignStrategy::RowArgmax => (0..n)
            .filter(|a| dropped_clips.binary_search(a).is_err())
            .map(|a| (a, row_best[a].0, row_best[a].1))
            .collect(),
        RealignStrategy::Threshold(t) => {
            if !t.is_finite() {
                return Err(Error::invalid("threshold must be finite"));
            }
            plan.interior
                .indexed_iter()
                .filter(|(_, &q)| q > 0.0 && q >= t)
                .map(|((a, b), &q)| (a, b, q))
                .collect()
        }
    };
    Ok(AlignmentMap {
        pairs,
        dropped_clips,
        dropped_captions,
    })
}

fn argmax_first(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn prompt_value_nearest_rank() {
        let sims: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).rev().collect();
        assert_eq!(estimate_prompt_value(&sims, 0.3).unwrap(), 0.3);
        assert_eq!(estimate_prompt_value(&[0.7], 0.01).unwrap(), 0.7);
        assert_eq!(estimate_prompt_value(&[0.7], 0.99).unwrap(), 0.7);
        assert!(estimate_prompt_value(&sims, 0.0).is_err());
        assert!(estimate_prompt_value(&sims, 1.0).is_err());
        assert!(estimate_prompt_value(&[], 0.3).is_err());
    }

    #[test]
    fn augment_two_by_two() {
        let s = SimilarityMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let aug = augment_similarity(&s, 0.5).unwrap();
        assert_eq!(
            aug.values.values(),
            &array![[1.0, 2.0, 0.5], [3.0, 4.0, 0.5], [0.5, 0.5, 0.5]]
        );
        let one = SimilarityMatrix::new(array![[0.9]]).unwrap();
        let aug = augment_similarity(&one, -0.2).unwrap();
        assert_eq!(aug.values.values(), &array![[0.9, -0.2], [-0.2, -0.2]]);
        assert!(augment_similarity(&one, f64::NAN).is_err());
    }

    #[test]
    fn augmented_marginal_schemes() {
        let m = augmented_marginals(2, 3, MarginalScheme::MatchedMass).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&m.mu, &[0.2, 0.2, 0.6]));
        assert!(close(&m.nu, &[0.2, 0.2, 0.2, 0.4]));
        let u = augmented_marginals(2, 2, MarginalScheme::Uniform).unwrap();
        assert!(close(&u.mu, &[1.0 / 3.0; 3]) && close(&u.nu, &[1.0 / 3.0; 3]));
        assert!(augmented_marginals(0, 2, MarginalScheme::Uniform).is_err());
    }

    #[test]
    fn single_cell_with_prompt_equal_to_entry() {
        let s = SimilarityMatrix::new(array![[0.42]]).unwrap();
        let r = norton_distance_with_prompt(
            &s,
            0.42,
            MarginalScheme::Uniform,
            &SolverConfig::default(),
        )
        .unwrap();
        for v in r.augmented.values.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert!((r.distance - 0.42 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn realign_identity_plan() {
        let q = FilteredPlan::without_bucket(Array2::eye(3) / 3.0);
        let map = extract_realignment(&q, RealignStrategy::RowArgmax).unwrap();
        assert_eq!(
            map.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 1), (2, 2)]
        );
        assert!(map.dropped_clips.is_empty() && map.dropped_captions.is_empty());
    }

    #[test]
    fn fully_bucketed_row_is_dropped() {
        let mut q = FilteredPlan::without_bucket(array![[0.5, 0.0], [0.0, 0.0]]);
        q.clip_bucket[1] = 0.5;
        q.caption_bucket[1] = 0.5;
        let map = extract_realignment(&q, RealignStrategy::RowArgmax).unwrap();
        assert_eq!(map.dropped_clips, vec![1]);
        assert_eq!(map.dropped_captions, vec![1]);
        assert_eq!(map.pairs, vec![(0, 0, 0.5)]);
    }

    #[test]
    fn bucket_dominance_drops_partially_bucketed_clip() {
        let mut q = FilteredPlan::without_bucket(array![[0.3, 0.1], [0.05, 0.05]]);
        q.clip_bucket = vec![0.0, 0.2];
        let map = extract_realignment(&q, RealignStrategy::RowArgmax).unwrap();
        assert_eq!(map.dropped_clips, vec![1]);
        // Equal bucket and real mass is not dominance.
        q.clip_bucket = vec![0.0, 0.05];
        let map = extract_realignment(&q, RealignStrategy::RowArgmax).unwrap();
        assert!(map.dropped_clips.is_empty());
    }

    #[test]
    fn threshold_zero_lists_positive_cells() {
        let q = FilteredPlan::without_bucket(array![[0.2, 0.0], [0.1, 0.3]]);
        let map = extract_realignment(&q, RealignStrategy::Threshold(0.0)).unwrap();
        assert_eq!(map.pairs, vec![(0, 0, 0.2), (1, 0, 0.1), (1, 1, 0.3)]);
        let map = extract_realignment(&q, RealignStrategy::Threshold(0.15)).unwrap();
        assert_eq!(map.pairs, vec![(0, 0, 0.2), (1, 1, 0.3)]);
    }

    #[test]
    fn alignment_map_json_shape() {
        let map = AlignmentMap {
            pairs: vec![(0, 1, 0.5)],
            dropped_clips: vec![2],
            dropped_captions: vec![],
        };
        let json = serde_json::to_string(&map).unwrap();
        assert_eq!(
            json,
            r#"{"pairs":[[0,1,0.5]],"dropped_clips":[2],"dropped_captions":[]}"#
        );
    }
}
