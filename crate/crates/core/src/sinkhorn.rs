//! Entropic optimal transport between clips and captions.
//!
//! Solves `max_Q ⟨Q, S⟩ + ε·H(Q)` subject to `Q·1 = μ`, `Qᵀ·1 = ν`, whose
//! maximizer is `Q* = Diag(κ₁) · exp(S/ε) · Diag(κ₂)`. The scalings are found
//! by alternating row and column updates. The default solver iterates their
//! logarithms (the dual potentials divided by ε), which stays finite for any
//! `|S/ε|` representable in `f64`; the direct form is kept as a cross-check.

use ndarray::Array2;

use crate::data::{linf, Marginals, SimilarityMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp_unit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Entropic regularization strength.
    pub epsilon: f64,
    /// Iteration cap; one iteration updates both scalings.
    pub max_iters: usize,
    /// Stop as soon as the L∞ marginal violation drops to this value.
    pub tol: f64,
    /// Iterate log-scalings instead of the scalings themselves.
    pub log_domain: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iters: 50,
            tol: 1e-9,
            log_domain: true,
        }
    }
}

impl SolverConfig {
    /// Defaults for clip-caption sequence transport (ε = 0.1).
    pub fn sequence() -> Self {
        Self::default()
    }

    /// Defaults for in-batch realignment (ε = 1).
    pub fn realignment() -> Self {
        Self {
            epsilon: 1.0,
            ..Self::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// Scalings and convergence record of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// `log κ₁`, one entry per row. `-inf` marks a zero-weight row.
    pub log_kappa1: Vec<f64>,
    /// `log κ₂`, one entry per column.
    pub log_kappa2: Vec<f64>,
    pub iterations_run: usize,
    /// L∞ violation over both marginals of the returned plan.
    pub final_marginal_error: f64,
}

impl SolverState {
    pub fn kappa1(&self) -> Vec<f64> {
        self.log_kappa1.iter().map(|x| x.exp()).collect()
    }

    pub fn kappa2(&self) -> Vec<f64> {
        self.log_kappa2.iter().map(|x| x.exp()).collect()
    }
}

/// `μ = 1/n`, `ν = 1/m`.
pub fn uniform_marginals(n: usize, m: usize) -> Result<Marginals> {
    if n == 0 || m == 0 {
        return Err(Error::invalid(format!(
            "uniform marginals need positive counts, got ({n}, {m})"
        )));
    }
    Marginals::new(vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
}

/// Solve the entropic transport problem for similarity `s`.
pub fn sinkhorn_plan(
    s: &SimilarityMatrix,
    marg: &Marginals,
    cfg: &SolverConfig,
) -> Result<(TransportPlan, SolverState)> {
    cfg.validate()?;
    if marg.n() != s.n() || marg.m() != s.m() {
        return Err(Error::ShapeMismatch {
            expected: s.shape(),
            found: (marg.n(), marg.m()),
        });
    }
    let (values, log_k1, log_k2, iters) = if cfg.log_domain {
        solve_log(s, marg, cfg)?
    } else {
        solve_direct(s, marg, cfg)?
    };
    let plan = TransportPlan {
        values,
        marginals: marg.clone(),
        epsilon: cfg.epsilon,
    };
    let (row_err, col_err) = plan.marginal_violation();
    let state = SolverState {
        log_kappa1: log_k1,
        log_kappa2: log_k2,
        iterations_run: iters,
        final_marginal_error: row_err.max(col_err),
    };
    Ok((plan, state))
}

type Solved = (Array2<f64>, Vec<f64>, Vec<f64>, usize);

fn solve_log(s: &SimilarityMatrix, marg: &Marginals, cfg: &SolverConfig) -> Result<Solved> {
    let (n, m) = s.shape();
    let scaled = s.values().mapv(|v| v / cfg.epsilon);
    let log_mu: Vec<f64> = marg.mu.iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = marg.nu.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut row_lse = vec![0.0; n];
    let mut iters = 0;
    loop {
        for (a, lse) in row_lse.iter_mut().enumerate() {
            *lse = log_sum_exp_unit(scaled.row(a).iter().zip(&g).map(|(x, gb)| x + gb));
        }
        // Columns are exact after a column update; only rows can drift, and
        // row `a` currently carries `exp(f[a] + row_lse[a])`.
        if iters > 0 {
            let row_err = (0..n)
                .map(|a| ((f[a] + row_lse[a]).exp() - marg.mu[a]).abs())
                .fold(0.0, f64::max);
            if row_err <= cfg.tol || iters == cfg.max_iters {
                break;
            }
        }
        iters += 1;
        for a in 0..n {
            f[a] = log_mu[a] - row_lse[a];
        }
        for b in 0..m {
            let col = scaled.column(b);
            g[b] = log_nu[b] - log_sum_exp_unit(col.iter().zip(&f).map(|(x, fa)| x + fa));
        }
        if f.iter()
            .chain(&g)
            .any(|x| x.is_nan() || *x == f64::INFINITY)
        {
            return Err(Error::NumericalBreakdown { iterations: iters });
        }
    }
    let values = Array2::from_shape_fn((n, m), |(a, b)| (scaled[[a, b]] + f[a] + g[b]).exp());
    Ok((values, f, g, iters))
}

fn solve_direct(s: &SimilarityMatrix, marg: &Marginals, cfg: &SolverConfig) -> Result<Solved> {
    let (n, m) = s.shape();
    let kernel = s.values().mapv(|v| (v / cfg.epsilon).exp());
    if kernel.iter().any(|k| !k.is_finite()) {
        return Err(Error::NumericalBreakdown { iterations: 0 });
    }
    let mut k1 = vec![1.0; n];
    let mut k2 = vec![1.0; m];
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        for ((k, row), mu) in k1.iter_mut().zip(kernel.rows()).zip(&marg.mu) {
            *k = mu / numeric::sum(row.iter().zip(&k2).map(|(x, c)| x * c));
        }
        for ((k, col), nu) in k2.iter_mut().zip(kernel.columns()).zip(&marg.nu) {
            *k = nu / numeric::sum(col.iter().zip(&k1).map(|(x, r)| x * r));
        }
        if k1.iter().chain(&k2).any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown { iterations: iters });
        }
        let row_mass: Vec<f64> = (0..n)
            .map(|a| k1[a] * numeric::sum(kernel.row(a).iter().zip(&k2).map(|(k, c)| k * c)))
            .collect();
        if linf(&row_mass, &marg.mu) <= cfg.tol {
            break;
        }
    }
    let values = Array2::from_shape_fn((n, m), |(a, b)| k1[a] * kernel[[a, b]] * k2[b]);
    let log_k1 = k1.iter().map(|x| x.ln()).collect();
    let log_k2 = k2.iter().map(|x| x.ln()).collect();
    Ok((values, log_k1, log_k2, iters))
}

fn check_plan_shape(q: &Array2<f64>, s: &SimilarityMatrix) -> Result<()> {
    if q.dim() != s.shape() {
        return Err(Error::ShapeMismatch {
            expected: s.shape(),
            found: q.dim(),
        });
    }
    Ok(())
}

/// `H(Q) = -Σ Q log Q` with `0 · log 0 = 0`.
pub fn entropy(q: &Array2<f64>) -> Result<f64> {
    if q.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid(
            "transport plan entries must be finite and nonnegative",
        ));
    }
    Ok(-numeric::sum(q.iter().map(|&x| {
        if x == 0.0 {
            0.0
        } else {
            x * x.ln()
        }
    })))
}

/// `⟨Q, S⟩ + ε·H(Q)`.
pub fn transport_objective(q: &TransportPlan, s: &SimilarityMatrix, epsilon: f64) -> Result<f64> {
    check_plan_shape(&q.values, s)?;
    let h = entropy(&q.values)?;
    Ok(inner(&q.values, s) + epsilon * h)
}

/// `⟨Q, S⟩ = tr(QᵀS)`.
pub fn ot_similarity(q: &TransportPlan, s: &SimilarityMatrix) -> Result<f64> {
    ot_similarity_values(&q.values, s)
}

/// `⟨Q, S⟩` for a bare plan matrix.
pub fn ot_similarity_values(q: &Array2<f64>, s: &SimilarityMatrix) -> Result<f64> {
    check_plan_shape(q, s)?;
    Ok(inner(q, s))
}

fn inner(q: &Array2<f64>, s: &SimilarityMatrix) -> f64 {
    numeric::sum(q.iter().zip(s.values().iter()).map(|(a, b)| a * b))
}
