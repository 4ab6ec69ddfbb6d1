use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use splatdream::guidance::{AnalyticDenoiser, Prompt, RemoteProvider, RenderedTarget, ScoreProvider};
use splatdream::io::{
    load_features, load_labels, load_ply, load_run_config, read_file, render_turntable, save_ply, write_atomic,
    TurntableOptions,
};
use splatdream::nalgebra::Vector3;
use splatdream::metrics::{
    fid, inception_score, janus_detect, janus_frequency, r_precision, Distance, JanusOptions, MetricReport,
};
use splatdream::trainer::{CameraRanges, CameraSampler, Providers, RunReport, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "splatdream", version, about = "Text-to-3D Gaussian splatting with score distillation")]
struct Cli {
    /// Seed for every random choice; overrides the run config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a Gaussian cloud for a prompt and write model.ply and report.json.
    Generate(GenerateArgs),
    /// Render an evaluation turntable of a PLY model to PNG frames.
    Render(RenderArgs),
    /// Compute evaluation metrics from feature files and labels.
    Evaluate(EvaluateArgs),
    /// Summarize run reports (and optionally a metric report) into one table row.
    ExportReport(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    prompt: String,
    /// key=value run config; absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base URL of a guidance bridge.
    #[arg(long, env = "SPLATDREAM_PROVIDER_URL", conflicts_with = "mock_target")]
    provider_url: Option<String>,
    /// Guide towards renders of this PLY instead of a diffusion model.
    #[arg(long)]
    mock_target: Option<PathBuf>,
    #[arg(long)]
    stage1_steps: Option<usize>,
    /// 0 produces the first-stage-only model.
    #[arg(long)]
    stage2_steps: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    ply: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = splatdream::io::turntable::DEFAULT_FRAMES)]
    frames: usize,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Composite over black instead of white.
    #[arg(long)]
    black_background: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// One turntable feature file per model, frames in azimuth order.
    #[arg(long, num_args = 1..)]
    janus_features: Vec<PathBuf>,
    /// Manual Janus labels (prompt_id,0/1); they take precedence over the detector.
    #[arg(long)]
    janus_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    rho: f64,
    #[arg(long, default_value_t = 2)]
    min_run: usize,
    /// Cosine instead of Euclidean feature distance for the detector.
    #[arg(long)]
    cosine: bool,
    /// Human alignment labels (prompt_id,0/1).
    #[arg(long)]
    alignment_labels: Option<PathBuf>,
    #[arg(long, requires = "prompt_embeddings")]
    render_embeddings: Option<PathBuf>,
    #[arg(long, requires = "render_embeddings")]
    prompt_embeddings: Option<PathBuf>,
    /// True prompt index per render, one per line; defaults to render i ↔ prompt i.
    #[arg(long)]
    true_index: Option<PathBuf>,
    #[arg(long, requires = "fid_b")]
    fid_a: Option<PathBuf>,
    #[arg(long, requires = "fid_a")]
    fid_b: Option<PathBuf>,
    /// Per-render class probabilities, one row per render.
    #[arg(long)]
    class_probs: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Run reports whose mean wall-clock hours become gpu_hours.
    #[arg(long, num_args = 1..)]
    run_reports: Vec<PathBuf>,
    /// Write the report here as well as to stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Metric report to merge into the row.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("{}: malformed JSON", path.display()))
}

fn generate(args: GenerateArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => load_run_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = args.stage1_steps {
        config.stage1_steps = n;
    }
    if let Some(n) = args.stage2_steps {
        config.stage2_steps = n;
    }
    config.validate()?;
    let prompt = Prompt::new(args.prompt)?;
    let sampler = CameraSampler::Random(CameraRanges::from_config(&config));

    let (mut mv, mut sd): (Box<dyn ScoreProvider>, Box<dyn ScoreProvider>) =
        match (&args.provider_url, &args.mock_target) {
            (Some(url), None) => (Box::new(RemoteProvider::new(url)), Box::new(RemoteProvider::new(url))),
            (None, Some(path)) => {
                let target = RenderedTarget {
                    cloud: load_ply(path)?,
                    background: if config.white_background {
                        Vector3::repeat(1.0)
                    } else {
                        Vector3::zeros()
                    },
                };
                (
                    Box::new(AnalyticDenoiser::new(target.clone())),
                    Box::new(AnalyticDenoiser::new(target)),
                )
            }
            _ => bail!("generate needs --provider-url (or SPLATDREAM_PROVIDER_URL) or --mock-target"),
        };
    let providers = Providers {
        multiview: &mut *mv,
        single_view: Some(&mut *sd),
    };
    let (cloud, report) = Trainer::new(prompt, providers, config, sampler)?.run()?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ply = args.out.join("model.ply");
    let report_path = args.out.join("report.json");
    save_ply(&cloud, &ply)?;
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_json(
        &json!({
            "ply": ply,
            "report": report_path,
            "label": report.label,
            "gaussians": cloud.len(),
            "skipped_steps": report.skipped_steps,
            "gpu_hours": report.gpu_hours(),
        }),
        None,
    )
}

fn render(args: RenderArgs) -> Result<()> {
    let cloud = load_ply(&args.ply)?;
    let options = TurntableOptions {
        frames: args.frames,
        resolution: args.resolution,
        background: if args.black_background {
            Vector3::zeros()
        } else {
            Vector3::repeat(1.0)
        },
    };
    let frames = render_turntable(&cloud, &options, &args.out)?;
    write_json(&json!({ "frames": frames.len(), "out": args.out }), None)
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = String::from_utf8(read_file(path)?).with_context(|| format!("{}: not UTF-8", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .with_context(|| format!("{}:{}: expected a prompt index, found {l:?}", path.display(), i + 1))
        })
        .collect()
}

fn percent_true(labels: &[(String, bool)]) -> Result<f64> {
    Ok(janus_frequency(&labels.iter().map(|(_, b)| *b).collect::<Vec<_>>())?)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut report = MetricReport::default();
    let mut detector = Vec::new();

    if let Some(path) = &args.janus_labels {
        report.janus_frequency_percent = Some(percent_true(&load_labels(path)?)?);
    }
    if !args.janus_features.is_empty() {
        let options = JanusOptions {
            rho: args.rho,
            min_run: args.min_run,
            distance: if args.cosine { Distance::Cosine } else { Distance::Euclidean },
        };
        for path in &args.janus_features {
            let verdict = janus_detect(&load_features(path)?, &options)?;
            detector.push(json!({ "file": path, "has_janus": verdict.has_janus, "runs": verdict.runs }));
        }
        if args.janus_labels.is_none() {
            let flags: Vec<bool> = detector.iter().map(|d| d["has_janus"] == true).collect();
            report.janus_frequency_percent = Some(janus_frequency(&flags)?);
        }
    }
    if let Some(path) = &args.alignment_labels {
        report.good_alignment_percent = Some(percent_true(&load_labels(path)?)?);
    }
    if let (Some(r), Some(p)) = (&args.render_embeddings, &args.prompt_embeddings) {
        let renders = load_features(r)?;
        let prompts = load_features(p)?;
        let truth = match &args.true_index {
            Some(path) => read_indices(path)?,
            None => (0..renders.rows()).collect(),
        };
        report.r_precision_percent = Some(r_precision(&renders, &prompts, &truth)?.percent);
    }
    if let (Some(a), Some(b)) = (&args.fid_a, &args.fid_b) {
        report.fid = Some(fid(&load_features(a)?, &load_features(b)?)?);
    }
    if let Some(path) = &args.class_probs {
        let probs = load_features(path)?;
        let rows: Vec<Vec<f64>> = (0..probs.rows()).map(|i| probs.row(i)).collect();
        let (mean, std) = inception_score(&rows, args.splits)?;
        report.inception_score = Some(mean);
        report.inception_score_std = Some(std);
    }
    if !args.run_reports.is_empty() {
        let mut hours = 0.0;
        for path in &args.run_reports {
            hours += read_json::<RunReport>(path)?.gpu_hours();
        }
        report.gpu_hours = Some(hours / args.run_reports.len() as f64);
    }
    report.validate()?;

    let mut value = serde_json::to_value(&report)?;
    if !detector.is_empty() {
        value["janus_detector"] = json!(detector);
    }
    write_json(&value, args.out.as_deref())
}

fn export_report(args: ExportArgs) -> Result<()> {
    let runs: Vec<RunReport> = args.reports.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let mut metrics: MetricReport = match &args.metrics {
        Some(path) => read_json(path)?,
        None => MetricReport::default(),
    };
    metrics.gpu_hours = Some(runs.iter().map(RunReport::gpu_hours).sum::<f64>() / runs.len() as f64);
    metrics.validate()?;
    let rows: Vec<_> = runs
        .iter()
        .map(|r| {
            json!({
                "prompt": r.prompt,
                "label": r.label,
                "seed": r.seed,
                "steps": r.stage1_steps + r.stage2_steps,
                "final_gaussians": r.final_gaussians,
                "skipped_steps": r.skipped_steps,
                "gpu_hours": r.gpu_hours(),
            })
        })
        .collect();
    write_json(&json!({ "metrics": metrics, "runs": rows }), args.out.as_deref())
}

fn error_payload(e: &anyhow::Error) -> serde_json::Value {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<splatdream::Error>())
        .map_or("other", splatdream::Error::kind);
    let offset = match e.chain().find_map(|c| c.downcast_ref::<splatdream::Error>()) {
        Some(splatdream::Error::Parse { offset, .. }) => Some(*offset),
        _ => None,
    };
    let mut v = json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
    if let Some(o) = offset {
        v["error"]["offset"] = json!(o);
    }
    v
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": e.to_string().trim() } }));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, cli.seed),
        Command::Render(a) => render(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportReport(a) => export_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_payload(&e));
            ExitCode::FAILURE
        }
    }
}
