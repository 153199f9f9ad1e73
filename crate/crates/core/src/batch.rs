//! Loss evaluation over a whole dataset treated as one batch.
//!
//! The clip-caption batch holds every clip and caption of the dataset, so
//! `B` is the total clip count. The video-paragraph grid pairs every video
//! with every paragraph; its plans come from bucket-augmented transport and
//! are held fixed when differentiating.

use ndarray::Array2;
use rayon::prelude::*;

use crate::bucket::{norton_distance_with_prompt, BucketConfig};
use crate::data::{Dataset, SimilarityMatrix, TokenMatrix};
use crate::error::{Error, Result};
use crate::losses::{
    clip_caption_loss, combined_loss, faulty_negative_targets, video_paragraph_loss, LossConfig,
    LossReport, TargetMatrix, VideoLossReport,
};
use crate::oracle::{finite_difference_gradient, max_relative_error, GRAD_REL_FLOOR};
use crate::similarity::{clip_caption_matrix, similarity_matrix, SimilarityConfig};
use crate::sinkhorn::SolverConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchConfig {
    pub loss: LossConfig,
    pub sim: SimilarityConfig,
    pub bucket: BucketConfig,
    /// Sinkhorn settings for the video-paragraph plans; the loss config's
    /// `epsilon_video` overrides its epsilon.
    pub video_solver: SolverConfig,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.sim.validate()?;
        self.bucket.validate()?;
        self.video_solver.validate()
    }
}

/// Everything the two losses consume.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    /// `B x B` clip-caption similarities over every clip in the dataset.
    pub s_hat: SimilarityMatrix,
    pub targets: TargetMatrix,
    /// `sims[i][j]`: clips of video `i` against captions of video `j`.
    pub sims: Vec<Vec<SimilarityMatrix>>,
    /// Filtered plans matching `sims`.
    pub plans: Vec<Vec<Array2<f64>>>,
    pub prompt: f64,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub clip: LossReport,
    pub video: VideoLossReport,
    pub total: f64,
}

pub fn prepare_batch(dataset: &Dataset, cfg: &BatchConfig) -> Result<BatchInputs> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let clips: Vec<&TokenMatrix> = dataset
        .videos
        .iter()
        .flat_map(|v| v.clip_tokens())
        .collect();
    let captions: Vec<&TokenMatrix> = dataset
        .videos
        .iter()
        .flat_map(|v| v.caption_tokens())
        .collect();
    let s_hat = similarity_matrix(&clips, &captions, &cfg.sim)?;
    let targets = faulty_negative_targets(&s_hat, &cfg.loss)?;

    let n = dataset.len();
    let sims: Vec<Vec<SimilarityMatrix>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| clip_caption_matrix(&dataset.videos[i], &dataset.videos[j], &cfg.sim))
                .collect()
        })
        .collect::<Result<_>>()?;
    let diagonals: Vec<f64> = (0..n).flat_map(|i| sims[i][i].diagonal()).collect();
    let prompt = cfg.bucket.resolve_prompt(&diagonals)?;
    let solver = cfg.video_solver.with_epsilon(cfg.loss.epsilon_video);
    let plans: Vec<Vec<Array2<f64>>> = sims
        .par_iter()
        .map(|row| {
            row.iter()
                .map(|s| {
                    norton_distance_with_prompt(s, prompt, cfg.bucket.marginal_scheme, &solver)
                        .map(|r| r.filtered.interior)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(BatchInputs {
        s_hat,
        targets,
        sims,
        plans,
        prompt,
    })
}

pub fn evaluate_batch(inputs: &BatchInputs, cfg: &LossConfig) -> Result<BatchLoss> {
    let clip = clip_caption_loss(&inputs.s_hat, &inputs.targets, cfg.tau)?;
    let video = video_paragraph_loss(&inputs.sims, &inputs.plans, cfg.tau)?;
    let total = combined_loss(clip.value, video.value, cfg.lambda);
    Ok(BatchLoss { clip, video, total })
}

/// Largest relative gap between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub clip_max_rel_err: f64,
    pub video_max_rel_err: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.clip_max_rel_err.max(self.video_max_rel_err)
    }
}

/// Compare the analytic gradients of both losses against central
/// differences with step `h`. Targets and plans stay fixed.
pub fn check_batch_gradients(inputs: &BatchInputs, cfg: &LossConfig, h: f64) -> Result<GradCheck> {
    let report = evaluate_batch(inputs, cfg)?;
    let targets = &inputs.targets;
    let fd_clip = finite_difference_gradient(
        |s| {
            let s = SimilarityMatrix::new(s.clone())?;
            clip_caption_loss(&s, targets, cfg.tau).map(|r| r.value)
        },
        inputs.s_hat.values(),
        h,
    )?;
    let clip_max_rel_err = max_relative_error(&report.clip.grad, &fd_clip, GRAD_REL_FLOOR);

    let n = inputs.sims.len();
    let mut video_max_rel_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let fd = finite_difference_gradient(
                |s| {
                    let mut sims = inputs.sims.clone();
                    sims[i][j] = SimilarityMatrix::new(s.clone())?;
                    video_paragraph_loss(&sims, &inputs.plans, cfg.tau).map(|r| r.value)
                },
                inputs.sims[i][j].values(),
                h,
            )?;
            video_max_rel_err = video_max_rel_err.max(max_relative_error(
                &report.video.grad[i][j],
                &fd,
                GRAD_REL_FLOOR,
            ));
        }
    }
    Ok(GradCheck {
        clip_max_rel_err,
        video_max_rel_err,
    })
}
