use std::fmt;
use std::fs;
use std::path::Path;

use serde_json::json;

use nralign::batch::{check_batch_gradients, evaluate_batch, prepare_batch, BatchConfig};
use nralign::bucket::{extract_realignment, norton_distance, FilteredPlan, RealignStrategy};
use nralign::eval::{evaluate_retrieval, CapAvgVariant, PromptScope};
use nralign::export::{format_g9, matrix_to_csv, pgm_bytes, read_matrix_csv};
use nralign::io::load_dataset;
use nralign::oracle::OracleConfig;
use nralign::similarity::clip_caption_matrix;
use nralign::sinkhorn::{ot_similarity, sinkhorn_plan, uniform_marginals};
use nralign::verify::run_all;
use nralign::{
    dtw, otam, BucketConfig, CostMatrix, Error, LossConfig, MarginalScheme, Measure, PromptSource,
    RetrievalConfig, SimilarityConfig, SimilarityMatrix, SimilarityMode, SolverConfig,
};

use crate::args::*;

/// Largest relative gradient error `loss --check-grad` accepts.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<ModeArg> for SimilarityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fine => SimilarityMode::FineGrained,
            ModeArg::Mean => SimilarityMode::MeanPool,
        }
    }
}

impl From<MarginalsArg> for MarginalScheme {
    fn from(m: MarginalsArg) -> Self {
        match m {
            MarginalsArg::Matched => MarginalScheme::MatchedMass,
            MarginalsArg::Uniform => MarginalScheme::Uniform,
        }
    }
}

impl From<ScopeArg> for PromptScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Dataset => PromptScope::Dataset,
            ScopeArg::Candidate => PromptScope::Candidate,
            ScopeArg::Pair => PromptScope::Pair,
        }
    }
}

impl From<CapAvgArg> for CapAvgVariant {
    fn from(v: CapAvgArg) -> Self {
        match v {
            CapAvgArg::Global => CapAvgVariant::Global,
            CapAvgArg::PerCandidate => CapAvgVariant::PerCandidate,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| {
        CliError::Lib(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_file(path, text)
}

fn similarity_config(alpha: f64, mode: ModeArg) -> Result<SimilarityConfig, CliError> {
    let cfg = SimilarityConfig {
        alpha,
        mode: mode.into(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn solver_config(a: &SolverArgs) -> Result<SolverConfig, CliError> {
    let cfg = SolverConfig::sequence()
        .with_epsilon(a.epsilon)
        .with_max_iters(a.iters)
        .with_tol(a.tol);
    cfg.validate()?;
    Ok(cfg)
}

fn bucket_config(a: &BucketArgs) -> Result<BucketConfig, CliError> {
    let prompt = match (a.bucket_p, a.bucket_quantile) {
        (Some(p), _) => PromptSource::Value(p),
        (None, Some(q)) => PromptSource::Quantile(q),
        (None, None) => BucketConfig::default().prompt,
    };
    let cfg = BucketConfig {
        prompt,
        marginal_scheme: a.marginals.into(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn sim(a: SimArgs) -> Result<(), CliError> {
    let cfg = similarity_config(a.alpha, a.mode)?;
    let dataset = load_dataset(&a.manifest)?;
    let video = dataset.video(&a.video_id)?;
    let paragraph = dataset.video(&a.paragraph_id)?;
    let s = clip_caption_matrix(video, paragraph, &cfg)?;
    write_file(&a.out, matrix_to_csv(s.values()))?;
    let (n, m) = s.shape();
    println!(
        "{n} clips x {m} captions ({} vs {}), range [{}, {}]",
        a.video_id,
        a.paragraph_id,
        format_g9(s.min()),
        format_g9(s.max())
    );
    Ok(())
}

pub fn ot(a: OtArgs) -> Result<(), CliError> {
    let solver = solver_config(&a.solver)?;
    let bucket = (!a.no_bucket)
        .then(|| bucket_config(&a.bucket))
        .transpose()?;
    let s = SimilarityMatrix::new(read_matrix_csv(&a.sim)?)?;
    let (n, m) = s.shape();

    let (plan, distance, state, prompt) = match bucket {
        None => {
            let (plan, state) = sinkhorn_plan(&s, &uniform_marginals(n, m)?, &solver)?;
            let distance = ot_similarity(&plan, &s)?;
            (
                FilteredPlan::without_bucket(plan.values),
                distance,
                state,
                None,
            )
        }
        Some(bucket) => {
            let r = norton_distance(&s, &bucket, &solver)?;
            (r.filtered, r.distance, r.state, Some(r.p))
        }
    };
    let alignment = match &a.out_alignment {
        Some(_) => Some(extract_realignment(&plan, RealignStrategy::RowArgmax)?),
        None => None,
    };

    write_file(&a.out_plan, matrix_to_csv(&plan.interior))?;
    write_file(&a.out_distance, format!("{}\n", format_g9(distance)))?;
    if let (Some(path), Some(map)) = (&a.out_alignment, &alignment) {
        write_json(path, map)?;
    }

    print!("plan {n}x{m}, distance {}", format_g9(distance));
    if let Some(p) = prompt {
        print!(", prompt {}", format_g9(p));
    }
    println!(
        ", {} iterations, marginal error {:.3e}",
        state.iterations_run, state.final_marginal_error
    );
    Ok(())
}

pub fn align(a: AlignArgs) -> Result<(), CliError> {
    let s = read_matrix_csv(&a.sim)?;
    let s = if a.transpose { s.t().to_owned() } else { s };
    let cost = CostMatrix::from_similarity(&SimilarityMatrix::new(s)?);
    let (name, alignment) = match a.method {
        MethodArg::Dtw => ("dtw", dtw(&cost)),
        MethodArg::Otam => ("otam", otam(&cost)),
    };
    let report = json!({
        "method": name,
        "distance": alignment.distance,
        "normalized_distance": alignment.normalized_distance(),
        "path": alignment.path.steps,
    });
    write_json(&a.out, &report)?;
    println!(
        "{name} distance {} over {} cells",
        format_g9(alignment.distance),
        alignment.path.steps.len()
    );
    Ok(())
}

pub fn retrieve(a: RetrieveArgs) -> Result<(), CliError> {
    let measure: Measure = a.measure.parse()?;
    let cfg = RetrievalConfig {
        measure,
        sim_cfg: similarity_config(a.alpha, a.mode)?,
        solver: solver_config(&a.solver)?,
        bucket: bucket_config(&a.bucket)?,
        ks: a.recall.clone(),
        prompt_scope: a.prompt_scope.into(),
        cap_avg_variant: a.capavg_variant.into(),
        normalize_path: a.normalize_path,
    };
    cfg.validate()?;
    let dataset = load_dataset(&a.manifest)?;
    let report = evaluate_retrieval(&dataset, &cfg, a.timing)?;
    write_json(&a.out, &report)?;

    let recalls: Vec<String> = report
        .per_k
        .iter()
        .map(|(k, r)| format!("R@{k} {}", format_g9(*r)))
        .collect();
    println!(
        "{} over {} queries: {}, mean rank {}",
        measure.name(),
        report.ranks.len(),
        recalls.join(", "),
        format_g9(report.mean_rank())
    );
    Ok(())
}

pub fn loss(a: LossArgs) -> Result<(), CliError> {
    let loss = LossConfig {
        tau: a.tau,
        beta: a.beta,
        lambda: a.lambda,
        epsilon_clip: a.epsilon_clip,
        epsilon_video: a.epsilon_video,
        target_iters: a.iters,
        ..LossConfig::default()
    };
    let cfg = BatchConfig {
        loss,
        sim: similarity_config(a.alpha, a.mode)?,
        bucket: bucket_config(&a.bucket)?,
        video_solver: SolverConfig::sequence().with_max_iters(a.iters),
    };
    cfg.validate()?;
    if !(a.fd_step > 0.0 && a.fd_step.is_finite()) {
        return Err(CliError::usage("fd-step must be positive"));
    }

    let dataset = load_dataset(&a.manifest)?;
    let inputs = prepare_batch(&dataset, &cfg)?;
    let result = evaluate_batch(&inputs, &cfg.loss)?;
    let mut report = json!({
        "clip_loss": result.clip.value,
        "video_loss": result.video.value,
        "total": result.total,
    });
    let check = if a.check_grad {
        let check = check_batch_gradients(&inputs, &cfg.loss, a.fd_step)?;
        report["clip_grad_max_rel_err"] = json!(check.clip_max_rel_err);
        report["video_grad_max_rel_err"] = json!(check.video_max_rel_err);
        report["max_rel_err"] = json!(check.max());
        Some(check)
    } else {
        None
    };
    write_json(&a.out, &report)?;

    println!(
        "clip {}, video {}, total {}",
        format_g9(result.clip.value),
        format_g9(result.video.value),
        format_g9(result.total)
    );
    if let Some(check) = check {
        println!("gradient check: max relative error {:.3e}", check.max());
        if !(check.max() <= GRAD_TOLERANCE) {
            return Err(CliError::usage(format!(
                "gradient check failed: {:.3e} exceeds {GRAD_TOLERANCE:e}",
                check.max()
            )));
        }
    }
    Ok(())
}

pub fn oracle_check(a: OracleArgs) -> Result<(), CliError> {
    let cfg = OracleConfig {
        seed: a.seed,
        max_n: a.max_n,
        ..OracleConfig::default()
    };
    cfg.validate()?;
    if a.cases == 0 {
        return Err(CliError::usage("cases must be at least 1"));
    }
    let suites = run_all(&cfg, a.cases)?;
    let passed = suites.iter().all(|s| s.passed());
    let entries: Vec<_> = suites
        .iter()
        .map(|s| {
            json!({
                "name": s.name,
                "cases": s.cases,
                "failures": s.failures,
                "max_error": s.max_error,
                "tolerance": s.tolerance,
                "passed": s.passed(),
            })
        })
        .collect();
    let report = json!({
        "seed": a.seed,
        "cases": a.cases,
        "passed": passed,
        "suites": entries,
    });
    match &a.out {
        Some(path) => {
            write_json(path, &report)?;
            for s in &suites {
                let verdict = if s.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {} ({} cases, max error {:.3e})",
                    s.name, s.cases, s.max_error
                );
            }
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(Error::from)?
        ),
    }
    if !passed {
        let failed: Vec<&str> = suites
            .iter()
            .filter(|s| !s.passed())
            .map(|s| s.name.as_str())
            .collect();
        return Err(CliError::usage(format!(
            "oracle suites failed: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

pub fn heatmap(a: HeatmapArgs) -> Result<(), CliError> {
    let plan = read_matrix_csv(&a.plan)?;
    let bytes = pgm_bytes(&plan)?;
    write_file(&a.out, bytes)?;
    println!("{}x{} heatmap", plan.ncols(), plan.nrows());
    Ok(())
}
