//! Data model shared by every module: token sequences, videos, datasets,
//! similarity matrices, marginals and transport plans.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numeric;

/// Tolerance on the total mass of a marginal vector.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// A sequence of `rows` token embeddings of dimension `dim`, stored row-major.
///
/// Values are kept in `f32` so that a matrix written to disk and read back is
/// bit-identical; all arithmetic on them is carried out in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Empty("token matrix has no rows"));
        }
        if dim == 0 {
            return Err(Error::Empty("token matrix has zero dimension"));
        }
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("rows * dim overflows"))?;
        if values.len() != len {
            return Err(Error::invalid(format!(
                "token matrix expects {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token matrix"));
        }
        Ok(Self { rows, dim, values })
    }

    /// Build from a list of equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or(Error::Empty("token matrix has no rows"))?;
        let dim = first.as_ref().len();
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Scale every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&self) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, row) in self.iter_rows().enumerate() {
            let norm = numeric::dot_f32(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroRow(i));
            }
            values.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Self::new(self.rows, self.dim, values)
    }

    /// Token-averaged embedding.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut acc = vec![numeric::CompensatedSum::new(); self.dim];
        for row in self.iter_rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v as f64);
            }
        }
        acc.iter().map(|a| a.value() / self.rows as f64).collect()
    }
}

/// One originally timestamp-aligned clip and caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_tokens: TokenMatrix,
    pub caption_tokens: TokenMatrix,
    pub start_s: f64,
    pub end_s: f64,
}

impl ClipRecord {
    pub fn new(
        clip_tokens: TokenMatrix,
        caption_tokens: TokenMatrix,
        start_s: f64,
        end_s: f64,
    ) -> Result<Self> {
        if clip_tokens.dim() != caption_tokens.dim() {
            return Err(Error::DimensionMismatch {
                expected: clip_tokens.dim(),
                found: caption_tokens.dim(),
            });
        }
        if !(start_s.is_finite() && end_s.is_finite()) || start_s >= end_s {
            return Err(Error::invalid(format!(
                "clip span must satisfy start_s < end_s, got [{start_s}, {end_s}]"
            )));
        }
        Ok(Self {
            clip_tokens,
            caption_tokens,
            start_s,
            end_s,
        })
    }

    pub fn dim(&self) -> usize {
        self.clip_tokens.dim()
    }
}

/// A video: an ordered sequence of clips, each paired with the caption that
/// its timestamps originally matched. The captions, read in order, form the
/// video's paragraph.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDocument {
    pub id: String,
    pub clips: Vec<ClipRecord>,
}

impl VideoDocument {
    pub fn new(id: impl Into<String>, clips: Vec<ClipRecord>) -> Result<Self> {
        let id = id.into();
        if clips.is_empty() {
            return Err(Error::Empty("video has no clips"));
        }
        let dim = clips[0].dim();
        for c in &clips {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.dim(),
                });
            }
        }
        for (k, w) in clips.windows(2).enumerate() {
            if w[1].start_s <= w[0].start_s {
                return Err(Error::NonMonotoneTimestamps {
                    video: id,
                    detail: format!(
                        "clip {} starts at {} after clip {} at {}",
                        k + 1,
                        w[1].start_s,
                        k,
                        w[0].start_s
                    ),
                });
            }
        }
        Ok(Self { id, clips })
    }

    pub fn dim(&self) -> usize {
        self.clips[0].dim()
    }

    pub fn clip_tokens(&self) -> impl Iterator<Item = &TokenMatrix> + '_ {
        self.clips.iter().map(|c| &c.clip_tokens)
    }

    pub fn caption_tokens(&self) -> impl Iterator<Item = &TokenMatrix> + '_ {
        self.clips.iter().map(|c| &c.caption_tokens)
    }
}

/// A collection of videos sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoDocument>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(videos: Vec<VideoDocument>) -> Result<Self> {
        let first = videos
            .first()
            .ok_or(Error::Empty("dataset has no videos"))?;
        let dim = first.dim();
        for v in &videos {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
        }
        Ok(Self { videos, dim })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn total_clips(&self) -> usize {
        self.videos.iter().map(|v| v.clips.len()).sum()
    }

    pub fn video(&self, id: &str) -> Result<&VideoDocument> {
        self.videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

/// Row (`mu`) and column (`nu`) weights of a transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Marginals {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Empty("marginal vector"));
        }
        for (name, w) in [("mu", &mu), ("nu", &nu)] {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::MarginalMismatch(format!(
                    "{name} entries must be finite and nonnegative"
                )));
            }
            let total = numeric::sum(w.iter().copied());
            if (total - 1.0).abs() > MARGINAL_SUM_TOL {
                return Err(Error::MarginalMismatch(format!(
                    "{name} sums to {total}, expected 1"
                )));
            }
        }
        Ok(Self { mu, nu })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn m(&self) -> usize {
        self.nu.len()
    }
}

/// Real-valued `n x m` clip-caption similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("similarity matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged similarity rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values =
            Array2::from_shape_vec((n, m), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(values)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Entries `(a, a)` for `a < min(n, m)`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.values.diag().to_vec()
    }
}

/// A nonnegative coupling with its target marginals and the regularization
/// strength it was solved at.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub values: Array2<f64>,
    pub marginals: Marginals,
    pub epsilon: f64,
}

impl TransportPlan {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| numeric::sum(r.iter().copied()))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.values
            .columns()
            .into_iter()
            .map(|c| numeric::sum(c.iter().copied()))
            .collect()
    }

    /// L∞ violation of both marginal constraints, `(rows, cols)`.
    pub fn marginal_violation(&self) -> (f64, f64) {
        let row = linf(&self.row_sums(), &self.marginals.mu);
        let col = linf(&self.col_sums(), &self.marginals.nu);
        (row, col)
    }

    pub fn total_mass(&self) -> f64 {
        numeric::sum(self.values.iter().copied())
    }
}

pub(crate) fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tm(rows: &[&[f32]]) -> TokenMatrix {
        TokenMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let t = tm(&[&[3.0, 4.0]]).l2_normalize_rows().unwrap();
        assert!((t.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((t.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let t = tm(&[&[1.0, 0.0]]).l2_normalize_rows().unwrap();
        assert_eq!(t.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_zero_row_fails() {
        let err = tm(&[&[1.0, 1.0], &[0.0, 0.0]])
            .l2_normalize_rows()
            .unwrap_err();
        assert!(err.to_string().contains("zero row"));
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let t = tm(&[&[0.3, -2.0, 7.5], &[1e-3, 2e-3, 0.0], &[100.0, 1.0, 1.0]])
            .l2_normalize_rows()
            .unwrap();
        for r in t.iter_rows() {
            let n = numeric::dot_f32(r, r).sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn token_matrix_rejects_non_finite() {
        assert!(TokenMatrix::new(1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(TokenMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn marginals_validate_sum() {
        assert!(Marginals::new(vec![0.5, 0.5], vec![1.0]).is_ok());
        assert!(Marginals::new(vec![0.5, 0.4], vec![1.0]).is_err());
        assert!(Marginals::new(vec![1.5, -0.5], vec![1.0]).is_err());
    }

    #[test]
    fn video_rejects_non_monotone_starts() {
        let t = tm(&[&[1.0, 0.0]]);
        let a = ClipRecord::new(t.clone(), t.clone(), 5.0, 6.0).unwrap();
        let b = ClipRecord::new(t.clone(), t.clone(), 1.0, 2.0).unwrap();
        let err = VideoDocument::new("v", vec![a, b]).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTimestamps { .. }));
    }

    #[test]
    fn clip_record_rejects_dim_mismatch_and_bad_span() {
        let a = tm(&[&[1.0, 0.0]]);
        let b = tm(&[&[1.0, 0.0, 0.0]]);
        assert!(ClipRecord::new(a.clone(), b, 0.0, 1.0).is_err());
        assert!(ClipRecord::new(a.clone(), a, 1.0, 1.0).is_err());
    }
}
