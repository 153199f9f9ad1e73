//! Contrastive losses with analytic gradients with respect to similarities.
//!
//! Both losses are symmetric cross-entropies over the rows and the columns of
//! a square score matrix divided by a temperature τ:
//!
//! ```text
//! L = −Σ_ij T_ij · ( log softmax_row(Z/τ)_ij + log softmax_col(Z/τ)_ij )
//! ```
//!
//! The video-paragraph loss uses `T = I` over transport scores
//! `Z_ij = ⟨Q_ij, S_ij⟩` with the plans held constant. The clip-caption loss
//! uses soft targets `T = (1−β)·I + β·B·Q̂` where `Q̂` is an entropic transport
//! plan over the in-batch similarity matrix.

use ndarray::Array2;
use serde::Serialize;

use crate::data::{SimilarityMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp_unit, CompensatedSum};
use crate::sinkhorn::{sinkhorn_plan, uniform_marginals, SolverConfig};

/// How the realignment plan is blended into the targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetConvention {
    /// `T = (1−β)·I + β·B·Q̂`; every row sums to one.
    #[default]
    RowStochastic,
    /// `T = (1−β)·I + β·Q̂`; rows sum to `(1−β) + β/B`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon_clip: f64,
    pub epsilon_video: f64,
    /// Sinkhorn iterations used for the realignment targets.
    pub target_iters: usize,
    pub convention: TargetConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta: 0.3,
            lambda: 0.1,
            epsilon_clip: 1.0,
            epsilon_video: 0.1,
            target_iters: 50,
            convention: TargetConvention::RowStochastic,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta must lie in [0, 1]"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        for (name, e) in [
            ("epsilon_clip", self.epsilon_clip),
            ("epsilon_video", self.epsilon_video),
        ] {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.target_iters == 0 {
            return Err(Error::invalid("target_iters must be at least 1"));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau must be positive"));
    }
    Ok(())
}

/// Soft contrastive targets, `B x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub values: Array2<f64>,
}

impl TargetMatrix {
    pub fn identity(b: usize) -> Self {
        Self {
            values: Array2::eye(b),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| numeric::sum(r.iter().copied()))
            .collect()
    }
}

/// Loss value and its gradient with respect to the input score matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub value: f64,
    #[serde(skip)]
    pub grad: Array2<f64>,
}

/// Video-paragraph loss with gradients for every `S_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLossReport {
    pub value: f64,
    /// `⟨Q_ij, S_ij⟩` for every video `i` and paragraph `j`.
    pub scores: Array2<f64>,
    /// Gradient with respect to `scores`.
    pub score_grad: Array2<f64>,
    /// `grad[i][j]` is the gradient with respect to `S_ij` (`Q_ij` held fixed).
    pub grad: Vec<Vec<Array2<f64>>>,
}

/// Symmetric soft-target cross-entropy over rows and columns of `scores / tau`.
pub fn soft_target_loss(
    scores: &Array2<f64>,
    targets: &Array2<f64>,
    tau: f64,
) -> Result<LossReport> {
    check_tau(tau)?;
    let (b, b2) = scores.dim();
    if b == 0 || b != b2 {
        return Err(Error::invalid(format!(
            "score matrix must be square and nonempty, got {b} x {b2}"
        )));
    }
    if targets.dim() != scores.dim() {
        return Err(Error::ShapeMismatch {
            expected: scores.dim(),
            found: targets.dim(),
        });
    }
    if scores.iter().chain(targets.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("loss input"));
    }
    let z = scores.mapv(|v| v / tau);
    let row_lse: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| log_sum_exp_unit(r.iter().copied()))
        .collect();
    let col_lse: Vec<f64> = z
        .columns()
        .into_iter()
        .map(|c| log_sum_exp_unit(c.iter().copied()))
        .collect();
    let row_mass: Vec<f64> = targets
        .rows()
        .into_iter()
        .map(|r| numeric::sum(r.iter().copied()))
        .collect();
    let col_mass: Vec<f64> = targets
        .columns()
        .into_iter()
        .map(|c| numeric::sum(c.iter().copied()))
        .collect();

    let mut value = CompensatedSum::new();
    let mut grad = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let t = targets[[i, j]];
            let zij = z[[i, j]];
            if t != 0.0 {
                value.add(-t * ((zij - row_lse[i]) + (zij - col_lse[j])));
            }
            let p_row = (zij - row_lse[i]).exp();
            let p_col = (zij - col_lse[j]).exp();
            grad[[i, j]] = (row_mass[i] * p_row + col_mass[j] * p_col - 2.0 * t) / tau;
        }
    }
    Ok(LossReport {
        value: value.value(),
        grad,
    })
}

/// Video-paragraph contrastive loss over an `N x N` grid of similarity
/// matrices `sims[i][j]` (video `i` against paragraph `j`) and their transport
/// plans. Plans are treated as constants.
pub fn video_paragraph_loss(
    sims: &[Vec<SimilarityMatrix>],
    plans: &[Vec<Array2<f64>>],
    tau: f64,
) -> Result<VideoLossReport> {
    check_tau(tau)?;
    let n = sims.len();
    if n == 0 {
        return Err(Error::Empty("video-paragraph grid"));
    }
    if plans.len() != n || sims.iter().any(|r| r.len() != n) || plans.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(
            "video-paragraph grid must be N x N for sims and plans",
        ));
    }
    let mut scores = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (s, q) = (&sims[i][j], &plans[i][j]);
            if q.dim() != s.shape() {
                return Err(Error::ShapeMismatch {
                    expected: s.shape(),
                    found: q.dim(),
                });
            }
            scores[[i, j]] = numeric::sum(q.iter().zip(s.values().iter()).map(|(a, b)| a * b));
        }
    }
    let report = soft_target_loss(&scores, &Array2::eye(n), tau)?;
    let grad = (0..n)
        .map(|i| (0..n).map(|j| &plans[i][j] * report.grad[[i, j]]).collect())
        .collect();
    Ok(VideoLossReport {
        value: report.value,
        scores,
        score_grad: report.grad,
        grad,
    })
}

/// Video-paragraph loss from precomputed scores `⟨Q_ij, S_ij⟩`.
pub fn video_paragraph_loss_from_scores(scores: &Array2<f64>, tau: f64) -> Result<LossReport> {
    let n = scores.nrows();
    soft_target_loss(scores, &Array2::eye(n), tau)
}

/// Realignment targets blending the identity with an in-batch transport plan.
pub fn faulty_negative_targets(s_hat: &SimilarityMatrix, cfg: &LossConfig) -> Result<TargetMatrix> {
    cfg.validate()?;
    let (b, b2) = s_hat.shape();
    if b != b2 {
        return Err(Error::invalid(format!(
            "in-batch similarity must be square, got {b} x {b2}"
        )));
    }
    if cfg.beta == 0.0 {
        return Ok(TargetMatrix::identity(b));
    }
    let plan = realignment_plan(s_hat, cfg)?;
    let scale = match cfg.convention {
        TargetConvention::RowStochastic => b as f64,
        TargetConvention::Literal => 1.0,
    };
    let mut values = plan.values.mapv(|q| cfg.beta * scale * q);
    for i in 0..b {
        values[[i, i]] += 1.0 - cfg.beta;
    }
    Ok(TargetMatrix { values })
}

/// Entropic plan over `s_hat` with uniform `1/B` marginals.
pub fn realignment_plan(s_hat: &SimilarityMatrix, cfg: &LossConfig) -> Result<TransportPlan> {
    let b = s_hat.n();
    let solver = SolverConfig::realignment()
        .with_epsilon(cfg.epsilon_clip)
        .with_max_iters(cfg.target_iters);
    // Solving the transposed problem makes the last half-step a row update, so
    // row sums of the plan are exact whatever the iteration count.
    let transposed = SimilarityMatrix::new(s_hat.values().t().to_owned())?;
    let (plan, _) = sinkhorn_plan(&transposed, &uniform_marginals(b, b)?, &solver)?;
    Ok(TransportPlan {
        values: plan.values.t().to_owned(),
        marginals: plan.marginals,
        epsilon: plan.epsilon,
    })
}

/// Clip-caption loss over the in-batch similarity matrix with soft targets.
pub fn clip_caption_loss(
    s_hat: &SimilarityMatrix,
    t: &TargetMatrix,
    tau: f64,
) -> Result<LossReport> {
    soft_target_loss(s_hat.values(), &t.values, tau)
}

/// `L = L_clip + λ·L_video`.
pub fn combined_loss(clip_loss: f64, video_loss: f64, lambda: f64) -> f64 {
    clip_loss + lambda * video_loss
}

/// For every vector, the indices of its `k` most cosine-similar other
/// vectors, most similar first, ties broken by lower index.
pub fn mine_hard_negatives(video_reps: &[Vec<f64>], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = video_reps.len();
    if k >= n {
        return Err(Error::invalid(format!(
            "k = {k} must be smaller than the number of videos ({n})"
        )));
    }
    let dim = video_reps[0].len();
    let mut norms = Vec::with_capacity(n);
    for r in video_reps {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid(
                "video representation must be nonzero and finite",
            ));
        }
        norms.push(norm);
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dot: f64 = video_reps[i]
                        .iter()
                        .zip(&video_reps[j])
                        .map(|(a, b)| a * b)
                        .sum();
                    (j, dot / (norms[i] * norms[j]))
                })
                .collect();
            others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            others.into_iter().take(k).map(|(j, _)| j).collect()
        })
        .collect())
}
