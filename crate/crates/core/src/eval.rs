//! Retrieval and alignment evaluation.
//!
//! Each paragraph (the captions of a video, in order) is used as a query
//! against every video in the dataset. Candidates are scored under one
//! sequence measure and the 1-based rank of the paragraph's own video is
//! recorded. Distances are negated so that every measure sorts descending.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::bucket::{norton_distance_with_prompt, BucketConfig, PromptSource};
use crate::data::{Dataset, SimilarityMatrix, TokenMatrix};
use crate::error::{Error, Result};
use crate::similarity::{clip_caption_matrix, SimilarityConfig};
use crate::sinkhorn::SolverConfig;
use crate::tempalign::{cap_avg, cap_avg_per_candidate, dtw, otam, CostMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    CapAvg,
    Dtw,
    Otam,
    OtNorton,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::CapAvg,
        Measure::Dtw,
        Measure::Otam,
        Measure::OtNorton,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Measure::CapAvg => "capavg",
            Measure::Dtw => "dtw",
            Measure::Otam => "otam",
            Measure::OtNorton => "ot",
        }
    }

    fn score_kind(&self) -> &'static str {
        match self {
            Measure::CapAvg => "vote_count",
            Measure::Dtw | Measure::Otam => "negated_distance",
            Measure::OtNorton => "transport_similarity",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capavg" => Ok(Measure::CapAvg),
            "dtw" => Ok(Measure::Dtw),
            "otam" => Ok(Measure::Otam),
            "ot" | "ot_norton" => Ok(Measure::OtNorton),
            other => Err(Error::invalid(format!(
                "unknown measure {other:?}; valid measures: capavg, dtw, otam, ot"
            ))),
        }
    }
}

/// Which aligned pairs the bucket prompt quantile is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptScope {
    /// Pool the diagonal similarities of every video with its own paragraph.
    #[default]
    Dataset,
    /// Use only the candidate video's own aligned pairs.
    Candidate,
    /// Use the index-aligned pairs of the matrix being scored.
    Pair,
}

/// Caption-average reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapAvgVariant {
    /// Each caption votes for the best clip over all candidates.
    #[default]
    Global,
    /// Mean best-clip similarity within each candidate.
    PerCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub measure: Measure,
    pub sim_cfg: SimilarityConfig,
    pub solver: SolverConfig,
    pub bucket: BucketConfig,
    pub ks: Vec<usize>,
    pub prompt_scope: PromptScope,
    pub cap_avg_variant: CapAvgVariant,
    /// Divide DTW / OTAM distances by path length.
    pub normalize_path: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            measure: Measure::OtNorton,
            sim_cfg: SimilarityConfig::default(),
            solver: SolverConfig::sequence(),
            bucket: BucketConfig::default(),
            ks: vec![1, 5, 10],
            prompt_scope: PromptScope::Dataset,
            cap_avg_variant: CapAvgVariant::Global,
            normalize_path: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim_cfg.validate()?;
        self.solver.validate()?;
        self.bucket.validate()?;
        validate_ks(&self.ks)
    }
}

fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::invalid("at least one K is required"));
    }
    if ks.contains(&0) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "K values must be positive and strictly ascending",
        ));
    }
    Ok(())
}

/// Recall at each K plus the per-query ranks behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub measure: String,
    pub per_k: Vec<(usize, f64)>,
    pub ranks: Vec<usize>,
    /// Wall time in seconds; `None` when timing is not recorded, which keeps
    /// reports byte-identical across runs.
    pub runtime_s: Option<f64>,
    /// Extra descriptive fields written after the standard ones.
    pub metadata: Vec<(String, String)>,
}

impl RecallReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.per_k.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }

    pub fn mean_rank(&self) -> f64 {
        self.ranks.iter().sum::<usize>() as f64 / self.ranks.len() as f64
    }
}

struct RecallMap<'a>(&'a [(usize, f64)]);

impl Serialize for RecallMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl Serialize for RecallReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4 + self.metadata.len()))?;
        map.serialize_entry("measure", &self.measure)?;
        map.serialize_entry("recall", &RecallMap(&self.per_k))?;
        map.serialize_entry("ranks", &self.ranks)?;
        map.serialize_entry("runtime_s", &self.runtime_s)?;
        for (k, v) in &self.metadata {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// Fraction of ranks at or below each K.
pub fn recall_at_k(ranks: &[usize], ks: &[usize]) -> Result<RecallReport> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    validate_ks(ks)?;
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks are 1-based"));
    }
    let per_k = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect();
    Ok(RecallReport {
        measure: String::new(),
        per_k,
        ranks: ranks.to_vec(),
        runtime_s: None,
        metadata: Vec::new(),
    })
}

/// 1-based rank of `truth` after sorting `scores` descending with ties broken
/// by lower index.
pub fn rank_of(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count()
}

/// `scores[q][c]`: score of candidate video `c` for query paragraph `q`.
pub fn score_matrix(dataset: &Dataset, cfg: &RetrievalConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let rows: Vec<Vec<f64>> = match cfg.measure {
        Measure::CapAvg => {
            let candidates: Vec<_> = dataset.videos.iter().collect();
            (0..n)
                .into_par_iter()
                .map(|q| {
                    let captions: Vec<&TokenMatrix> = dataset.videos[q].caption_tokens().collect();
                    match cfg.cap_avg_variant {
                        CapAvgVariant::Global => cap_avg(&captions, &candidates, &cfg.sim_cfg)
                            .map(|c| c.into_iter().map(|v| v as f64).collect()),
                        CapAvgVariant::PerCandidate => {
                            cap_avg_per_candidate(&captions, &candidates, &cfg.sim_cfg)
                        }
                    }
                })
                .collect::<Result<_>>()?
        }
        measure => {
            let prompts = if measure == Measure::OtNorton && cfg.prompt_scope != PromptScope::Pair {
                Some(prompt_values(dataset, cfg)?)
            } else {
                None
            };
            (0..n)
                .into_par_iter()
                .map(|q| {
                    (0..n)
                        .map(|c| {
                            let s = clip_caption_matrix(
                                &dataset.videos[c],
                                &dataset.videos[q],
                                &cfg.sim_cfg,
                            )?;
                            score_pair(&s, measure, cfg, prompts.as_ref().map(|p| p[c]))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?
        }
    };
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, n), flat).map_err(|e| Error::invalid(e.to_string()))
}

/// Prompt value per candidate video.
fn prompt_values(dataset: &Dataset, cfg: &RetrievalConfig) -> Result<Vec<f64>> {
    let n = dataset.len();
    if let PromptSource::Value(p) = cfg.bucket.prompt {
        return Ok(vec![p; n]);
    }
    let diagonals: Vec<Vec<f64>> = dataset
        .videos
        .par_iter()
        .map(|v| clip_caption_matrix(v, v, &cfg.sim_cfg).map(|s| s.diagonal()))
        .collect::<Result<_>>()?;
    match cfg.prompt_scope {
        PromptScope::Dataset => {
            let pooled: Vec<f64> = diagonals.into_iter().flatten().collect();
            let p = cfg.bucket.resolve_prompt(&pooled)?;
            Ok(vec![p; n])
        }
        PromptScope::Candidate => diagonals
            .iter()
            .map(|d| cfg.bucket.resolve_prompt(d))
            .collect(),
        PromptScope::Pair => unreachable!("pair prompts are resolved per matrix"),
    }
}

fn score_pair(
    s: &SimilarityMatrix,
    measure: Measure,
    cfg: &RetrievalConfig,
    prompt: Option<f64>,
) -> Result<f64> {
    match measure {
        Measure::Dtw | Measure::Otam => {
            // Query captions along rows, candidate clips along columns.
            let cost = CostMatrix::new(s.values().t().mapv(|v| 1.0 - v))?;
            let a = if measure == Measure::Dtw {
                dtw(&cost)
            } else {
                otam(&cost)
            };
            Ok(-if cfg.normalize_path {
                a.normalized_distance()
            } else {
                a.distance
            })
        }
        Measure::OtNorton => {
            let p = match prompt {
                Some(p) => p,
                None => cfg.bucket.resolve_prompt(&s.diagonal())?,
            };
            Ok(
                norton_distance_with_prompt(s, p, cfg.bucket.marginal_scheme, &cfg.solver)?
                    .distance,
            )
        }
        Measure::CapAvg => unreachable!("caption averaging scores whole candidate sets"),
    }
}

/// Rank of each paragraph's own video among all candidates.
pub fn rank_videos(dataset: &Dataset, cfg: &RetrievalConfig) -> Result<Vec<usize>> {
    if dataset.len() < 2 {
        return Err(Error::invalid(format!(
            "retrieval needs at least 2 videos, dataset has {}",
            dataset.len()
        )));
    }
    let scores = score_matrix(dataset, cfg)?;
    Ok(scores
        .rows()
        .into_iter()
        .enumerate()
        .map(|(q, row)| rank_of(row.as_slice().expect("standard layout"), q))
        .collect())
}

/// Rank, compute recall and annotate the report.
pub fn evaluate_retrieval(
    dataset: &Dataset,
    cfg: &RetrievalConfig,
    record_time: bool,
) -> Result<RecallReport> {
    let start = Instant::now();
    let ranks = rank_videos(dataset, cfg)?;
    let mut report = recall_at_k(&ranks, &cfg.ks)?;
    report.measure = cfg.measure.name().to_string();
    report.runtime_s = record_time.then(|| start.elapsed().as_secs_f64());
    report
        .metadata
        .push(("score".into(), cfg.measure.score_kind().into()));
    if cfg.measure == Measure::OtNorton {
        report.metadata.push((
            "marginal_scheme".into(),
            cfg.bucket.marginal_scheme.name().into(),
        ));
    }
    Ok(report)
}

/// Sliding-window settings for frame-level alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_s: f64,
    pub step_s: f64,
    /// Frames per second; frame `i` starts at `i / fps` seconds.
    pub fps: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_s: 32.0,
            step_s: 8.0,
            fps: 1.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_s >= 1.0 && self.window_s >= self.step_s && self.window_s.is_finite()) {
            return Err(Error::invalid(
                "window settings must satisfy window_s >= step_s >= 1",
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid("fps must be positive"));
        }
        Ok(())
    }
}

/// Per-frame similarity to a sentence. Each window scores the dot product of
/// its mean frame embedding with the sentence vector; a frame receives the
/// mean score of every window covering it. Windows start every `step_s`
/// seconds until one reaches the end of the video, so a video shorter than
/// one window is scored by a single window.
pub fn sliding_window_similarity(
    frame_tokens: &TokenMatrix,
    sentence_vec: &[f64],
    cfg: &WindowConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if sentence_vec.len() != frame_tokens.dim() {
        return Err(Error::DimensionMismatch {
            expected: frame_tokens.dim(),
            found: sentence_vec.len(),
        });
    }
    let frames = frame_tokens.rows();
    let duration = frames as f64 / cfg.fps;
    let mut total = vec![0.0; frames];
    let mut count = vec![0usize; frames];
    let mut start = 0.0;
    loop {
        let end = start + cfg.window_s;
        let covered: Vec<usize> = (0..frames)
            .filter(|&i| {
                let t = i as f64 / cfg.fps;
                t >= start && t < end
            })
            .collect();
        if !covered.is_empty() {
            let mut pooled = vec![0.0; frame_tokens.dim()];
            for &i in &covered {
                for (p, &v) in pooled.iter_mut().zip(frame_tokens.row(i)) {
                    *p += v as f64;
                }
            }
            let score: f64 = pooled
                .iter()
                .zip(sentence_vec)
                .map(|(p, s)| p / covered.len() as f64 * s)
                .sum();
            for &i in &covered {
                total[i] += score;
                count[i] += 1;
            }
        }
        if end >= duration {
            break;
        }
        start += cfg.step_s;
    }
    Ok(total
        .iter()
        .zip(&count)
        .map(|(t, &c)| t / c as f64)
        .collect())
}

/// Annotated span of one sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub alignable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSegments {
    pub segments: Vec<Segment>,
}

impl GroundTruthSegments {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            if s.alignable && !(s.start_s < s.end_s) {
                return Err(Error::invalid(format!(
                    "alignable segment needs start_s < end_s, got [{}, {}]",
                    s.start_s, s.end_s
                )));
            }
        }
        Ok(Self { segments })
    }
}

/// Fraction of alignable sentences whose best-matching frame (earliest on
/// ties) starts inside the annotated span.
pub fn alignment_recall(
    per_sentence_sims: &[Vec<f64>],
    gt: &GroundTruthSegments,
    fps: f64,
) -> Result<f64> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid("fps must be positive"));
    }
    if per_sentence_sims.len() != gt.segments.len() {
        return Err(Error::invalid(format!(
            "{} similarity rows for {} sentences",
            per_sentence_sims.len(),
            gt.segments.len()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (sims, seg) in per_sentence_sims.iter().zip(&gt.segments) {
        if !seg.alignable {
            continue;
        }
        if sims.is_empty() {
            return Err(Error::Empty("frame similarities"));
        }
        total += 1;
        let mut best = 0;
        for (i, &s) in sims.iter().enumerate() {
            if s > sims[best] {
                best = i;
            }
        }
        let t = best as f64 / fps;
        if t >= seg.start_s && t <= seg.end_s {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("no alignable sentences"));
    }
    Ok(hits as f64 / total as f64)
}
