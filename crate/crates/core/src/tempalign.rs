//! Order-preserving sequence measures: DTW, OTAM and caption averaging.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{SimilarityMatrix, TokenMatrix, VideoDocument};
use crate::error::{Error, Result};
use crate::similarity::{pair_similarity, SimilarityConfig};

/// Finite `n x m` alignment cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        Ok(Self { values })
    }

    /// `cost = 1 − similarity`. Nonnegative whenever similarities are at most
    /// one, as for dot products of unit vectors.
    pub fn from_similarity(s: &SimilarityMatrix) -> Self {
        Self {
            values: s.values().mapv(|v| 1.0 - v),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Ordered `(row, column)` cells visited by an alignment, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlignPath {
    pub steps: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub distance: f64,
    pub path: AlignPath,
}

impl Alignment {
    /// Distance divided by the number of visited cells.
    pub fn normalized_distance(&self) -> f64 {
        self.distance / self.path.steps.len() as f64
    }
}

/// Classic dynamic time warping from `(0, 0)` to `(n−1, m−1)` with moves
/// `(1,0)`, `(0,1)` and `(1,1)`. Backtracking prefers the diagonal, then the
/// vertical, then the horizontal predecessor.
pub fn dtw(cost: &CostMatrix) -> Alignment {
    let (n, m) = (cost.n(), cost.m());
    let c = cost.values();
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[[i - 1, j - 1]]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 {
                    acc[[i - 1, j]]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 {
                    acc[[i, j - 1]]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            acc[[i, j]] = c[[i, j]] + prev;
        }
    }
    let mut steps = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[[i - 1, j - 1]];
            let up = acc[[i - 1, j]];
            let left = acc[[i, j - 1]];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        steps.push((i, j));
    }
    steps.reverse();
    Alignment {
        distance: acc[[n - 1, m - 1]],
        path: AlignPath { steps },
    }
}

/// Boundary-relaxed DTW. The cost matrix is padded with a zero row above and
/// below; horizontal moves `(0,1)` are allowed only inside those padded rows,
/// every other move is `(1,0)` or `(1,1)`. The query (rows) therefore aligns
/// to a contiguous window of the candidate (columns) that may start and end
/// anywhere. The returned path lists only real cells.
pub fn otam(cost: &CostMatrix) -> Alignment {
    let (n, m) = (cost.n(), cost.m());
    let c = cost.values();
    // acc[i][j]: best cost of a path ending at real cell (i, j).
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    for j in 0..m {
        acc[[0, j]] = c[[0, j]];
    }
    for i in 1..n {
        for j in 0..m {
            let up = acc[[i - 1, j]];
            let diag = if j > 0 {
                acc[[i - 1, j - 1]]
            } else {
                f64::INFINITY
            };
            acc[[i, j]] = c[[i, j]] + diag.min(up);
        }
    }
    // Exit through the cheapest cell of the last row; ties exit rightmost.
    let mut end = m - 1;
    for j in (0..m).rev() {
        if acc[[n - 1, j]] < acc[[n - 1, end]] {
            end = j;
        }
    }
    let mut steps = vec![(n - 1, end)];
    let (mut i, mut j) = (n - 1, end);
    while i > 0 {
        let up = acc[[i - 1, j]];
        let diag = if j > 0 {
            acc[[i - 1, j - 1]]
        } else {
            f64::INFINITY
        };
        (i, j) = if diag <= up {
            (i - 1, j - 1)
        } else {
            (i - 1, j)
        };
        steps.push((i, j));
    }
    steps.reverse();
    Alignment {
        distance: acc[[n - 1, end]],
        path: AlignPath { steps },
    }
}

/// True when consecutive DTW path steps use only the DTW moves and the path
/// spans the full matrix.
pub fn is_valid_dtw_path(path: &AlignPath, n: usize, m: usize) -> bool {
    let s = &path.steps;
    if s.first() != Some(&(0, 0)) || s.last() != Some(&(n - 1, m - 1)) {
        return false;
    }
    s.windows(2).all(|w| {
        let (di, dj) = (
            w[1].0 as isize - w[0].0 as isize,
            w[1].1 as isize - w[0].1 as isize,
        );
        matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
    })
}

/// True when an OTAM path covers every query row once per step, in order,
/// moving only by `(1,0)` or `(1,1)` within bounds.
pub fn is_valid_otam_path(path: &AlignPath, n: usize, m: usize) -> bool {
    let s = &path.steps;
    if s.len() != n || s.first().map(|p| p.0) != Some(0) {
        return false;
    }
    if s.iter().any(|&(i, j)| i >= n || j >= m) {
        return false;
    }
    s.windows(2).all(|w| {
        let (di, dj) = (
            w[1].0 as isize - w[0].0 as isize,
            w[1].1 as isize - w[0].1 as isize,
        );
        matches!((di, dj), (1, 0) | (1, 1))
    })
}

/// Global caption averaging: every query caption votes for the single most
/// similar clip across all candidates (lowest `(video, clip)` index on ties);
/// a candidate's score is the number of votes its clips received.
pub fn cap_avg(
    query_captions: &[&TokenMatrix],
    candidates: &[&VideoDocument],
    sim_cfg: &SimilarityConfig,
) -> Result<Vec<usize>> {
    check_cap_avg_inputs(query_captions, candidates)?;
    let mut counts = vec![0usize; candidates.len()];
    for caption in query_captions {
        let mut best: Option<(usize, f64)> = None;
        for (v, video) in candidates.iter().enumerate() {
            for clip in video.clip_tokens() {
                let s = pair_similarity(clip, caption, sim_cfg)?;
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((v, s));
                }
            }
        }
        if let Some((v, _)) = best {
            counts[v] += 1;
        }
    }
    Ok(counts)
}

/// Per-candidate caption averaging: mean over query captions of the best clip
/// similarity within each candidate.
pub fn cap_avg_per_candidate(
    query_captions: &[&TokenMatrix],
    candidates: &[&VideoDocument],
    sim_cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    check_cap_avg_inputs(query_captions, candidates)?;
    candidates
        .iter()
        .map(|video| {
            let mut total = 0.0;
            for caption in query_captions {
                let mut best = f64::NEG_INFINITY;
                for clip in video.clip_tokens() {
                    best = best.max(pair_similarity(clip, caption, sim_cfg)?);
                }
                total += best;
            }
            Ok(total / query_captions.len() as f64)
        })
        .collect()
}

fn check_cap_avg_inputs(query: &[&TokenMatrix], candidates: &[&VideoDocument]) -> Result<()> {
    if query.is_empty() {
        return Err(Error::Empty("query captions"));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("candidate videos"));
    }
    Ok(())
}
