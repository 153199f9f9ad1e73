//! Token-level and clip/caption-level similarity.
//!
//! The fine-grained clip-caption similarity averages, over the tokens of each
//! side, a log-sum-exp soft maximum of that token's dot products with the other
//! side, then averages the two directions:
//!
//! ```text
//! S(a, b) = ½ · ( mean_i LSE_α(v_i · t_*) + mean_j LSE_α(t_j · v_*) )
//! LSE_α(x) = α · log Σ_k exp(x_k / α)
//! ```

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{SimilarityMatrix, TokenMatrix, VideoDocument};
use crate::error::{Error, Result};
use crate::numeric;

/// How a clip-caption cell is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMode {
    /// Log-sum-exp soft maximum over token-level dot products.
    #[default]
    FineGrained,
    /// Dot product of the token-averaged clip and caption embeddings.
    MeanPool,
}

impl std::str::FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" | "fine_grained" => Ok(Self::FineGrained),
            "mean" | "mean_pool" => Ok(Self::MeanPool),
            other => Err(Error::invalid(format!(
                "unknown similarity mode {other:?} (expected fine or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    /// Log-sum-exp smoothness; smaller values approach a hard maximum.
    pub alpha: f64,
    pub mode: SimilarityMode,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mode: SimilarityMode::FineGrained,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// `α · log Σ_j exp(x_j / α)`, stabilized by shifting with `max(x)`.
pub fn log_sum_exp(x: &[f64], alpha: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty("log-sum-exp input"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-sum-exp input"));
    }
    Ok(lse_unchecked(x, alpha))
}

#[inline]
fn lse_unchecked(x: &[f64], alpha: f64) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = numeric::sum(x.iter().map(|&v| ((v - max) / alpha).exp()));
    max + alpha * s.ln()
}

/// Matrix of dot products between every clip token and every caption token.
pub fn frame_word_matrix(clip: &TokenMatrix, caption: &TokenMatrix) -> Result<Array2<f64>> {
    if clip.dim() != caption.dim() {
        return Err(Error::DimensionMismatch {
            expected: clip.dim(),
            found: caption.dim(),
        });
    }
    Ok(Array2::from_shape_fn(
        (clip.rows(), caption.rows()),
        |(i, j)| numeric::dot_f32(clip.row(i), caption.row(j)),
    ))
}

/// Fine-grained clip-caption similarity; symmetric in its two arguments.
pub fn fine_grained_similarity(
    clip: &TokenMatrix,
    caption: &TokenMatrix,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    cfg.validate()?;
    let fw = frame_word_matrix(clip, caption)?;
    Ok(fine_grained_from_matrix(&fw, cfg.alpha))
}

fn fine_grained_from_matrix(fw: &Array2<f64>, alpha: f64) -> f64 {
    let mut buf = Vec::with_capacity(fw.nrows().max(fw.ncols()));
    let mut per_frame = numeric::CompensatedSum::new();
    for row in fw.rows() {
        buf.clear();
        buf.extend(row.iter().copied());
        per_frame.add(lse_unchecked(&buf, alpha));
    }
    let mut per_word = numeric::CompensatedSum::new();
    for col in fw.columns() {
        buf.clear();
        buf.extend(col.iter().copied());
        per_word.add(lse_unchecked(&buf, alpha));
    }
    0.5 * (per_frame.value() / fw.nrows() as f64 + per_word.value() / fw.ncols() as f64)
}

/// Dot product of the token-averaged embeddings.
pub fn mean_pool_similarity(clip: &TokenMatrix, caption: &TokenMatrix) -> Result<f64> {
    if clip.dim() != caption.dim() {
        return Err(Error::DimensionMismatch {
            expected: clip.dim(),
            found: caption.dim(),
        });
    }
    let a = clip.mean_pool();
    let b = caption.mean_pool();
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum())
}

/// Score one clip against one caption under `cfg`.
pub fn pair_similarity(
    clip: &TokenMatrix,
    caption: &TokenMatrix,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    match cfg.mode {
        SimilarityMode::FineGrained => fine_grained_similarity(clip, caption, cfg),
        SimilarityMode::MeanPool => mean_pool_similarity(clip, caption),
    }
}

/// `n x m` similarity matrix between an arbitrary list of clips and captions.
pub fn similarity_matrix(
    clips: &[&TokenMatrix],
    captions: &[&TokenMatrix],
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("video has no clips"));
    }
    if captions.is_empty() {
        return Err(Error::Empty("paragraph has no captions"));
    }
    let m = captions.len();
    let cells: Vec<f64> = match cfg.mode {
        SimilarityMode::FineGrained => (0..clips.len() * m)
            .into_par_iter()
            .map(|k| fine_grained_similarity(clips[k / m], captions[k % m], cfg))
            .collect::<Result<_>>()?,
        SimilarityMode::MeanPool => {
            // Pool once per token matrix rather than once per cell.
            let dim = clips[0].dim();
            for t in clips.iter().chain(captions) {
                if t.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: t.dim(),
                    });
                }
            }
            let pc: Vec<Vec<f64>> = clips.iter().map(|t| t.mean_pool()).collect();
            let pt: Vec<Vec<f64>> = captions.iter().map(|t| t.mean_pool()).collect();
            (0..clips.len() * m)
                .map(|k| pc[k / m].iter().zip(&pt[k % m]).map(|(x, y)| x * y).sum())
                .collect()
        }
    };
    let values = Array2::from_shape_vec((clips.len(), m), cells)
        .map_err(|e| Error::invalid(e.to_string()))?;
    SimilarityMatrix::new(values)
}

/// Similarity between the clips of `video` and the captions of `paragraph`.
pub fn clip_caption_matrix(
    video: &VideoDocument,
    paragraph: &VideoDocument,
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    let clips: Vec<&TokenMatrix> = video.clip_tokens().collect();
    let captions: Vec<&TokenMatrix> = paragraph.caption_tokens().collect();
    similarity_matrix(&clips, &captions, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tm(rows: &[&[f32]]) -> TokenMatrix {
        TokenMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn frame_word_on_basis() {
        let m = frame_word_matrix(&tm(&[&[1.0, 0.0]]), &tm(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(m, ndarray::array![[1.0, 0.0]]);
        let s = frame_word_matrix(&tm(&[&[0.6, 0.8]]), &tm(&[&[0.6, 0.8]])).unwrap();
        assert!((s[[0, 0]] - 1.0).abs() < 1e-7);
        assert!(frame_word_matrix(&tm(&[&[1.0]]), &tm(&[&[1.0, 0.0]])).is_err());
    }

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[2.0], 1.0).unwrap(), 2.0);
        assert!((log_sum_exp(&[0.0, 0.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1.0, 0.0], 1e-3).unwrap() - 1.0).abs() < 1e-6);
        assert!(log_sum_exp(&[], 1.0).is_err());
        assert!(log_sum_exp(&[1.0], 0.0).is_err());
        assert!(log_sum_exp(&[1.0], -1.0).is_err());
    }

    #[test]
    fn lse_does_not_overflow_at_small_alpha() {
        let v = log_sum_exp(&[7.0, 6.9, -3.0], 0.01).unwrap();
        assert!(v.is_finite() && (v - 7.0).abs() < 1e-3);
    }

    #[test]
    fn fine_grained_single_token_is_dot() {
        let cfg = SimilarityConfig::default();
        let s = fine_grained_similarity(&tm(&[&[0.6, 0.8]]), &tm(&[&[1.0, 0.0]]), &cfg).unwrap();
        assert!((s - 0.6).abs() < 1e-7);
    }

    #[test]
    fn fine_grained_hand_evaluation() {
        // dots [1, 0], alpha = 1
        let cfg = SimilarityConfig::default();
        let s =
            fine_grained_similarity(&tm(&[&[1.0, 0.0]]), &tm(&[&[1.0, 0.0], &[0.0, 1.0]]), &cfg)
                .unwrap();
        let expected = 0.5 * ((1f64.exp() + 1.0).ln() + 0.5);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.906631).abs() < 1e-6);
    }

    #[test]
    fn small_alpha_approaches_max_pool() {
        let clip = tm(&[&[0.6, 0.8], &[1.0, 0.0], &[0.0, -1.0]]);
        let cap = tm(&[&[0.0, 1.0], &[0.8, -0.6]]);
        let cfg = SimilarityConfig {
            alpha: 1e-4,
            mode: SimilarityMode::FineGrained,
        };
        let s = fine_grained_similarity(&clip, &cap, &cfg).unwrap();
        // Brute-force max pooling.
        let fw: Vec<Vec<f64>> = clip
            .iter_rows()
            .map(|r| {
                cap.iter_rows()
                    .map(|c| r.iter().zip(c).map(|(a, b)| *a as f64 * *b as f64).sum())
                    .collect()
            })
            .collect();
        let row_max: f64 = fw
            .iter()
            .map(|r| r.iter().cloned().fold(f64::MIN, f64::max))
            .sum::<f64>()
            / 3.0;
        let col_max: f64 = (0..2)
            .map(|j| fw.iter().map(|r| r[j]).fold(f64::MIN, f64::max))
            .sum::<f64>()
            / 2.0;
        assert!((s - 0.5 * (row_max + col_max)).abs() < 1e-3);
    }

    #[test]
    fn mode_parses() {
        assert_eq!(
            "fine".parse::<SimilarityMode>().unwrap(),
            SimilarityMode::FineGrained
        );
        assert_eq!(
            "mean".parse::<SimilarityMode>().unwrap(),
            SimilarityMode::MeanPool
        );
        assert!("max".parse::<SimilarityMode>().is_err());
    }
}
