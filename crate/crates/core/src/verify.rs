//! Seeded comparisons between production routines and the oracles.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::SimilarityMatrix;
use crate::error::Result;
use crate::losses::{clip_caption_loss, faulty_negative_targets, video_paragraph_loss, LossConfig};
use crate::oracle::{
    brute_force_assignment, brute_force_dtw, brute_force_otam, finite_difference_gradient,
    max_relative_error, reference_sinkhorn, OracleConfig, GRAD_REL_FLOOR,
};
use crate::sinkhorn::{ot_similarity, sinkhorn_plan, uniform_marginals, SolverConfig};
use crate::tempalign::{dtw, otam, CostMatrix};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, error: f64) {
        self.cases += 1;
        self.max_error = self.max_error.max(error);
        if !(error <= self.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

pub fn case_rng(cfg: &OracleConfig, case: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(case as u64))
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(lo..hi))
}

/// Entropic plans at small `epsilon` against the best permutation: the error
/// is `|⟨Q,S⟩ − best mean|`, i.e. the gap in `n·⟨Q,S⟩` divided by `n`.
pub fn assignment_limit(
    cfg: &OracleConfig,
    cases: usize,
    epsilon: f64,
    max_iters: usize,
) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("assignment_limit", 1e-3);
    let solver = SolverConfig::default()
        .with_epsilon(epsilon)
        .with_max_iters(max_iters);
    for case in 0..cases {
        let mut rng = case_rng(cfg, case);
        let n = rng.random_range(1..=cfg.max_n);
        let s = SimilarityMatrix::new(uniform_matrix(&mut rng, n, n, 0.0, 1.0))?;
        let (plan, _) = sinkhorn_plan(&s, &uniform_marginals(n, n)?, &solver)?;
        let (_, best) = brute_force_assignment(&s, cfg)?;
        report.record((ot_similarity(&plan, &s)? - best).abs());
    }
    Ok(report)
}

/// `dtw` against path enumeration on matrices up to `max_side` square.
pub fn dtw_equivalence(cfg: &OracleConfig, cases: usize, max_side: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("dtw_equivalence", 0.0);
    for case in 0..cases {
        let mut rng = case_rng(cfg, case);
        let n = rng.random_range(1..=max_side);
        let m = rng.random_range(1..=max_side);
        let cost = CostMatrix::new(uniform_matrix(&mut rng, n, m, 0.0, 1.0))?;
        let exact = brute_force_dtw(&cost)?;
        report.record((dtw(&cost).distance - exact).abs());
    }
    Ok(report)
}

/// `otam` against enumeration; shapes cycle through `shapes`.
pub fn otam_equivalence(
    cfg: &OracleConfig,
    cases: usize,
    shapes: &[(usize, usize)],
) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("otam_equivalence", 0.0);
    for case in 0..cases {
        let mut rng = case_rng(cfg, case);
        let (n, m) = shapes[case % shapes.len()];
        let cost = CostMatrix::new(uniform_matrix(&mut rng, n, m, 0.0, 1.0))?;
        let exact = brute_force_otam(&cost)?;
        report.record((otam(&cost).distance - exact).abs());
    }
    Ok(report)
}

/// Production log-domain solver at tolerance 1e-9 against the reference.
pub fn reference_agreement(cfg: &OracleConfig, cases: usize, n: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("reference_sinkhorn", 1e-8);
    let solver = SolverConfig::default()
        .with_max_iters(100_000)
        .with_tol(1e-9);
    for case in 0..cases {
        let mut rng = case_rng(cfg, case);
        let s = SimilarityMatrix::new(uniform_matrix(&mut rng, n, n, 0.0, 1.0))?;
        let marg = uniform_marginals(n, n)?;
        let (plan, _) = sinkhorn_plan(&s, &marg, &solver)?;
        let reference = reference_sinkhorn(&s, &marg, solver.epsilon, cfg)?;
        let gap = plan
            .values
            .iter()
            .zip(reference.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.record(gap);
    }
    Ok(report)
}

/// Analytic loss gradients against central differences. Even cases check
/// the video-paragraph loss on an `N x N` grid (`N ≤ 3`), odd cases the
/// clip-caption loss with faulty-negative targets (`B ≤ 6`).
pub fn gradient_checks(cfg: &OracleConfig, cases: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("loss_gradients", 1e-4);
    let loss_cfg = LossConfig::default();
    for case in 0..cases {
        let mut rng = case_rng(cfg, case);
        let err = if case % 2 == 0 {
            video_gradient_error(&mut rng, &loss_cfg, cfg.fd_step)?
        } else {
            clip_gradient_error(&mut rng, &loss_cfg, cfg.fd_step)?
        };
        report.record(err);
    }
    Ok(report)
}

pub fn video_gradient_error(rng: &mut ChaCha8Rng, cfg: &LossConfig, h: f64) -> Result<f64> {
    let n = rng.random_range(1..=3);
    let mut sims = Vec::with_capacity(n);
    let mut plans = Vec::with_capacity(n);
    for _ in 0..n {
        let mut srow = Vec::with_capacity(n);
        let mut prow = Vec::with_capacity(n);
        for _ in 0..n {
            let (a, b) = (rng.random_range(1..=4), rng.random_range(1..=4));
            srow.push(SimilarityMatrix::new(uniform_matrix(rng, a, b, -1.0, 1.0))?);
            let q = uniform_matrix(rng, a, b, 0.0, 1.0);
            let total = q.sum();
            prow.push(q / total);
        }
        sims.push(srow);
        plans.push(prow);
    }
    let report = video_paragraph_loss(&sims, &plans, cfg.tau)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let fd = finite_difference_gradient(
                |s| {
                    let mut perturbed = sims.clone();
                    perturbed[i][j] = SimilarityMatrix::new(s.clone())?;
                    video_paragraph_loss(&perturbed, &plans, cfg.tau).map(|r| r.value)
                },
                sims[i][j].values(),
                h,
            )?;
            worst = worst.max(max_relative_error(&report.grad[i][j], &fd, GRAD_REL_FLOOR));
        }
    }
    Ok(worst)
}

pub fn clip_gradient_error(rng: &mut ChaCha8Rng, cfg: &LossConfig, h: f64) -> Result<f64> {
    let b = rng.random_range(1..=6);
    let s_hat = SimilarityMatrix::new(uniform_matrix(rng, b, b, -1.0, 1.0))?;
    let targets = faulty_negative_targets(&s_hat, cfg)?;
    let report = clip_caption_loss(&s_hat, &targets, cfg.tau)?;
    let fd = finite_difference_gradient(
        |s| {
            let s = SimilarityMatrix::new(s.clone())?;
            clip_caption_loss(&s, &targets, cfg.tau).map(|r| r.value)
        },
        s_hat.values(),
        h,
    )?;
    Ok(max_relative_error(&report.grad, &fd, GRAD_REL_FLOOR))
}

/// Every suite at the sizes used by `oracle-check`.
pub fn run_all(cfg: &OracleConfig, cases: usize) -> Result<Vec<SuiteReport>> {
    cfg.validate()?;
    Ok(vec![
        assignment_limit(cfg, cases, 1e-3, 100_000)?,
        dtw_equivalence(cfg, cases, 6)?,
        otam_equivalence(cfg, cases, &[(1, 8), (5, 5), (3, 6), (4, 2)])?,
        reference_agreement(cfg, cases, 8)?,
        gradient_checks(cfg, cases)?,
    ])
}
