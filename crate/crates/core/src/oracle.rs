//! Slow reference implementations used to check the production code.
//!
//! Nothing here calls into the solver, DP or loss modules; each routine is a
//! plain loop over its own definition.

use ndarray::Array2;

use crate::data::{Marginals, SimilarityMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::tempalign::CostMatrix;

/// Hard cap on `max_n`; 8! permutations is the most the suite will scan.
pub const MAX_EXHAUSTIVE_N: usize = 8;
/// Hard cap on `n + m` for path enumeration.
pub const MAX_PATH_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub max_n: usize,
    pub fd_step: f64,
    pub ref_tol: f64,
    pub ref_iters: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_n: 7,
            fd_step: 1e-5,
            ref_tol: 1e-12,
            ref_iters: 100_000,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_n == 0 || self.max_n > MAX_EXHAUSTIVE_N {
            return Err(Error::invalid(format!(
                "max_n must be in 1..={MAX_EXHAUSTIVE_N}"
            )));
        }
        if !(self.fd_step > 0.0) || !(self.ref_tol > 0.0) || self.ref_iters == 0 {
            return Err(Error::invalid(
                "fd_step, ref_tol and ref_iters must be positive",
            ));
        }
        Ok(())
    }
}

/// Advance `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Best permutation by mean matched similarity. The first permutation in
/// lexicographic order wins ties.
pub fn brute_force_assignment(
    s: &SimilarityMatrix,
    cfg: &OracleConfig,
) -> Result<(Vec<usize>, f64)> {
    cfg.validate()?;
    let (n, m) = s.shape();
    if n != m {
        return Err(Error::invalid(format!(
            "assignment needs a square matrix, got {n}x{m}"
        )));
    }
    if n > cfg.max_n {
        return Err(Error::invalid(format!(
            "n = {n} exceeds max_n = {}",
            cfg.max_n
        )));
    }
    let v = s.values();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_total = f64::NEG_INFINITY;
    loop {
        let mut total = 0.0;
        for (a, &b) in perm.iter().enumerate() {
            total += v[[a, b]];
        }
        if total > best_total {
            best_total = total;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best, best_total / n as f64))
}

fn check_path_cap(cost: &CostMatrix) -> Result<()> {
    if cost.n() + cost.m() > MAX_PATH_LEN {
        return Err(Error::invalid(format!(
            "n + m = {} exceeds the enumeration cap of {MAX_PATH_LEN}",
            cost.n() + cost.m()
        )));
    }
    Ok(())
}

/// Minimum over every monotone path from (0,0) to (n-1,m-1) with steps
/// (1,0), (0,1), (1,1).
pub fn brute_force_dtw(cost: &CostMatrix) -> Result<f64> {
    check_path_cap(cost)?;
    let c = cost.values();
    let (n, m) = (cost.n(), cost.m());
    fn walk(c: &Array2<f64>, i: usize, j: usize, n: usize, m: usize, acc: f64, best: &mut f64) {
        let acc = acc + c[[i, j]];
        if i == n - 1 && j == m - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < n {
            walk(c, i + 1, j, n, m, acc, best);
        }
        if j + 1 < m {
            walk(c, i, j + 1, n, m, acc, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(c, i + 1, j + 1, n, m, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(c, 0, 0, n, m, 0.0, &mut best);
    Ok(best)
}

/// Minimum over every path that enters the first query row at any candidate
/// column, steps (1,0) or (1,1), and leaves from any cell of the last row.
pub fn brute_force_otam(cost: &CostMatrix) -> Result<f64> {
    check_path_cap(cost)?;
    let c = cost.values();
    let (n, m) = (cost.n(), cost.m());
    fn walk(c: &Array2<f64>, i: usize, j: usize, n: usize, m: usize, acc: f64, best: &mut f64) {
        let acc = acc + c[[i, j]];
        if i == n - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        walk(c, i + 1, j, n, m, acc, best);
        if j + 1 < m {
            walk(c, i + 1, j + 1, n, m, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    for j in 0..m {
        walk(c, 0, j, n, m, 0.0, &mut best);
    }
    Ok(best)
}

fn lse(xs: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &x in xs {
        if x > mx {
            mx = x;
        }
    }
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - mx).exp();
    }
    mx + acc.ln()
}

/// Log-domain Sinkhorn run to `cfg.ref_tol`, failing loudly otherwise.
pub fn reference_sinkhorn(
    s: &SimilarityMatrix,
    marg: &Marginals,
    epsilon: f64,
    cfg: &OracleConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let (n, m) = s.shape();
    if marg.n() != n || marg.m() != m {
        return Err(Error::ShapeMismatch {
            expected: (n, m),
            found: (marg.n(), marg.m()),
        });
    }
    let k: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..m).map(|b| s.values()[[a, b]] / epsilon).collect())
        .collect();
    let log_mu: Vec<f64> = marg.mu.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = marg.nu.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut err = f64::INFINITY;
    for _ in 0..cfg.ref_iters {
        for a in 0..n {
            for b in 0..m {
                buf[b] = k[a][b] + g[b];
            }
            f[a] = if marg.mu[a] == 0.0 {
                f64::NEG_INFINITY
            } else {
                log_mu[a] - lse(&buf[..m])
            };
        }
        for b in 0..m {
            for a in 0..n {
                buf[a] = k[a][b] + f[a];
            }
            g[b] = if marg.nu[b] == 0.0 {
                f64::NEG_INFINITY
            } else {
                log_nu[b] - lse(&buf[..n])
            };
        }
        err = 0.0;
        for a in 0..n {
            let mut row = 0.0;
            for b in 0..m {
                row += (k[a][b] + f[a] + g[b]).exp();
            }
            err = f64::max(err, (row - marg.mu[a]).abs());
        }
        if !err.is_finite() {
            break;
        }
        if err <= cfg.ref_tol {
            let mut q = Array2::zeros((n, m));
            for a in 0..n {
                for b in 0..m {
                    q[[a, b]] = (k[a][b] + f[a] + g[b]).exp();
                }
            }
            return Ok(TransportPlan {
                values: q,
                marginals: marg.clone(),
                epsilon,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.ref_iters,
        error: err,
    })
}

/// Central differences `(f(x + h e) - f(x - h e)) / 2h` for every entry.
pub fn finite_difference_gradient<F>(loss: F, at: &Array2<f64>, h: f64) -> Result<Array2<f64>>
where
    F: Fn(&Array2<f64>) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h must be positive"));
    }
    let mut grad = Array2::zeros(at.raw_dim());
    let mut x = at.clone();
    for idx in 0..at.len() {
        let (i, j) = (idx / at.ncols(), idx % at.ncols());
        let orig = x[[i, j]];
        x[[i, j]] = orig + h;
        let up = loss(&x)?;
        x[[i, j]] = orig - h;
        let down = loss(&x)?;
        x[[i, j]] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        grad[[i, j]] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Gradient magnitudes below this are compared absolutely.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries. The floor keeps
/// entries that are zero up to round-off from dominating.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sim(v: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(v).unwrap()
    }

    #[test]
    fn assignment_examples() {
        let cfg = OracleConfig::default();
        let (p, v) = brute_force_assignment(&sim(Array2::eye(3)), &cfg).unwrap();
        assert_eq!((p, v), (vec![0, 1, 2], 1.0));
        let anti = array![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let (p, v) = brute_force_assignment(&sim(anti), &cfg).unwrap();
        assert_eq!((p, v), (vec![2, 1, 0], 1.0));
        assert!(brute_force_assignment(&sim(Array2::zeros((2, 3))), &cfg).is_err());
        assert!(brute_force_assignment(&sim(Array2::zeros((8, 8))), &cfg).is_err());
    }

    #[test]
    fn assignment_ties_lexicographic() {
        let (p, _) =
            brute_force_assignment(&sim(Array2::ones((3, 3))), &OracleConfig::default()).unwrap();
        assert_eq!(p, vec![0, 1, 2]);
    }

    #[test]
    fn permutation_count() {
        let mut p: Vec<usize> = (0..5).collect();
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 120);
    }

    #[test]
    fn dtw_oracle_examples() {
        let c = |v| CostMatrix::new(v).unwrap();
        assert_eq!(brute_force_dtw(&c(array![[0.0]])).unwrap(), 0.0);
        assert_eq!(
            brute_force_dtw(&c(array![[0.0, 1.0], [1.0, 0.0]])).unwrap(),
            0.0
        );
        assert!(brute_force_dtw(&c(Array2::zeros((7, 6)))).is_err());
    }

    #[test]
    fn otam_oracle_picks_cheapest_window() {
        let c = CostMatrix::new(array![[5.0, 0.0, 5.0]]).unwrap();
        assert_eq!(brute_force_otam(&c).unwrap(), 0.0);
        let c = CostMatrix::new(array![[9.0, 1.0, 9.0, 9.0], [9.0, 9.0, 2.0, 9.0]]).unwrap();
        assert_eq!(brute_force_otam(&c).unwrap(), 3.0);
    }

    #[test]
    fn reference_sinkhorn_constant_and_two_by_two() {
        let cfg = OracleConfig::default();
        let marg = Marginals::new(vec![0.2, 0.3, 0.5], vec![0.6, 0.4]).unwrap();
        let q = reference_sinkhorn(&sim(Array2::from_elem((3, 2), 0.7)), &marg, 0.1, &cfg).unwrap();
        for a in 0..3 {
            for b in 0..2 {
                assert!((q.values[[a, b]] - marg.mu[a] * marg.nu[b]).abs() < 1e-12);
            }
        }
        let marg = Marginals::new(vec![0.5; 2], vec![0.5; 2]).unwrap();
        let q = reference_sinkhorn(&sim(Array2::eye(2)), &marg, 0.1, &cfg).unwrap();
        let e10 = 10f64.exp();
        assert!((q.values[[0, 0]] - 0.5 * e10 / (e10 + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn reference_sinkhorn_reports_failure() {
        let cfg = OracleConfig {
            ref_iters: 1,
            ..OracleConfig::default()
        };
        let marg = Marginals::new(vec![0.5; 2], vec![0.2, 0.8]).unwrap();
        let s = sim(array![[1.0, 0.0], [0.3, 0.9]]);
        assert!(matches!(
            reference_sinkhorn(&s, &marg, 0.1, &cfg),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let x = array![[0.3, -1.2], [2.0, 0.5]];
        let g =
            finite_difference_gradient(|s| Ok(s.iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
        for (a, b) in g.iter().zip(x.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-6);
        }
        let c = array![[1.0, -2.0], [0.5, 3.0]];
        let g = finite_difference_gradient(|s| Ok((s * &c).sum()), &x, 1e-5).unwrap();
        for (a, b) in g.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(finite_difference_gradient(|_| Ok(f64::NAN), &x, 1e-5).is_err());
    }
}
