//! Seeded synthetic corpora with planted noisy correspondence.
//!
//! Videos are grouped into tasks. A task is an ordered list of step
//! cluster centers shared by its videos; each video mixes a signature of its
//! own into every step. Frames and caption words are noisy copies of the
//! clip's step center. Paragraphs are then corrupted: some adjacent captions are
//! swapped and some are replaced by unrelated noise tokens.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ClipRecord, Dataset, TokenMatrix, VideoDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub clips: usize,
    pub dim: usize,
    pub frames_per_clip: usize,
    pub words_per_caption: usize,
    /// Number of step templates; video `v` follows template `v % tasks`.
    pub tasks: usize,
    /// Weight of the per-video signature mixed into every concept.
    pub signature_weight: f64,
    /// Norm of the per-token Gaussian noise.
    pub token_noise: f64,
    /// Fraction of captions moved by adjacent swaps.
    pub swap_fraction: f64,
    /// Fraction of captions replaced with noise tokens.
    pub noise_fraction: f64,
    pub clip_seconds: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            videos: 50,
            clips: 8,
            dim: 32,
            frames_per_clip: 6,
            words_per_caption: 5,
            tasks: 10,
            signature_weight: 0.3,
            token_noise: 1.1,
            swap_fraction: 0.25,
            noise_fraction: 0.25,
            clip_seconds: 4.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.clips == 0 || self.dim == 0 {
            return Err(Error::invalid("videos, clips and dim must be positive"));
        }
        if self.frames_per_clip == 0 || self.words_per_caption == 0 || self.tasks == 0 {
            return Err(Error::invalid(
                "token counts and task count must be positive",
            ));
        }
        for (name, f) in [
            ("swap_fraction", self.swap_fraction),
            ("noise_fraction", self.noise_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.swap_fraction + self.noise_fraction > 1.0 {
            return Err(Error::invalid(
                "swap and noise fractions exceed the caption count",
            ));
        }
        if !(self.token_noise >= 0.0 && self.signature_weight >= 0.0 && self.clip_seconds > 0.0) {
            return Err(Error::invalid(
                "noise, signature weight and clip length must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// Ground truth for one corrupted paragraph.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorrespondence {
    /// `(clip, caption)` pairs that truly match.
    pub pairs: Vec<(usize, usize)>,
    /// Caption positions holding noise tokens.
    pub noise_captions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub dataset: Dataset,
    pub planted: Vec<PlantedCorrespondence>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn noisy_tokens(
    rng: &mut ChaCha8Rng,
    center: &[f64],
    count: usize,
    noise: f64,
) -> Result<TokenMatrix> {
    let dim = center.len();
    let scale = noise / (dim as f64).sqrt();
    let mut values = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let eps = gaussian(rng, dim, scale);
        let tok = unit(center.iter().zip(&eps).map(|(c, e)| c + e).collect());
        values.extend(tok.into_iter().map(|x| x as f32));
    }
    TokenMatrix::new(count, dim, values)
}

/// Pick disjoint adjacent swaps among positions not already used by noise.
fn choose_swaps(rng: &mut ChaCha8Rng, n: usize, taken: &[bool], pairs: usize) -> Vec<usize> {
    let mut used = taken.to_vec();
    let mut swaps = Vec::new();
    for _ in 0..pairs {
        let free: Vec<usize> = (0..n.saturating_sub(1))
            .filter(|&b| !used[b] && !used[b + 1])
            .collect();
        if free.is_empty() {
            break;
        }
        let b = free[rng.random_range(0..free.len())];
        used[b] = true;
        used[b + 1] = true;
        swaps.push(b);
    }
    swaps
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates: Vec<Vec<Vec<f64>>> = (0..cfg.tasks)
        .map(|_| {
            (0..cfg.clips)
                .map(|_| unit(gaussian(&mut rng, cfg.dim, 1.0)))
                .collect()
        })
        .collect();
    let n = cfg.clips;
    let noise_count = (cfg.noise_fraction * n as f64).round() as usize;
    let swap_pairs = ((cfg.swap_fraction * n as f64).round() as usize) / 2;

    let mut videos = Vec::with_capacity(cfg.videos);
    let mut planted = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let signature = unit(gaussian(&mut rng, cfg.dim, 1.0));
        let concepts: Vec<Vec<f64>> = templates[v % cfg.tasks]
            .iter()
            .map(|center| {
                unit(
                    center
                        .iter()
                        .zip(&signature)
                        .map(|(c, s)| c + cfg.signature_weight * s)
                        .collect(),
                )
            })
            .collect();

        let noise: Vec<usize> = {
            let mut idx = sample(&mut rng, n, noise_count).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut is_noise = vec![false; n];
        for &b in &noise {
            is_noise[b] = true;
        }
        // source[b]: the clip whose concept caption slot b describes.
        let mut source: Vec<usize> = (0..n).collect();
        for b in choose_swaps(&mut rng, n, &is_noise, swap_pairs) {
            source.swap(b, b + 1);
        }

        let mut clips = Vec::with_capacity(n);
        for c in 0..n {
            let frames =
                noisy_tokens(&mut rng, &concepts[c], cfg.frames_per_clip, cfg.token_noise)?;
            let caption = if is_noise[c] {
                let junk = unit(gaussian(&mut rng, cfg.dim, 1.0));
                noisy_tokens(&mut rng, &junk, cfg.words_per_caption, cfg.token_noise)?
            } else {
                noisy_tokens(
                    &mut rng,
                    &concepts[source[c]],
                    cfg.words_per_caption,
                    cfg.token_noise,
                )?
            };
            let start = c as f64 * cfg.clip_seconds;
            clips.push(ClipRecord::new(
                frames,
                caption,
                start,
                start + cfg.clip_seconds,
            )?);
        }
        videos.push(VideoDocument::new(format!("synth_{v:03}"), clips)?);
        planted.push(PlantedCorrespondence {
            pairs: (0..n)
                .filter(|&b| !is_noise[b])
                .map(|b| (source[b], b))
                .collect(),
            noise_captions: noise,
        });
    }
    Ok(SyntheticBenchmark {
        dataset: Dataset::new(videos)?,
        planted,
    })
}
