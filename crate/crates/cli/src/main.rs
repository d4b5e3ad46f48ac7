use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use plausiscene::io::{
    edge_features_csv, load_dataset, load_report, load_scene, load_synth_config, node_features_csv, report_csv,
    report_to_json, save_scene, to_json, trajectory_csv, write_dataset, write_plot, write_text,
};
use plausiscene::metrics::{scene_iou, scene_metrics, MetricsConfig};
use plausiscene::synth::{generate_dataset, Split, SynthConfig};
use plausiscene::trainer::{evaluate, refine, train, LabeledGraph, RefineConfig, TrainConfig};
use plausiscene::{build_graph, Discriminator, Error, Result};

const THREADS_ENV: &str = "PLAUSISCENE_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "plausiscene",
    version,
    about = "Scene-graph plausibility discriminator toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled dataset of scenes.
    Gen(GenArgs),
    /// Train the discriminator on a dataset's train/val splits.
    Train(TrainArgs),
    /// Score a dataset split with trained weights; prints JSON.
    Eval(EvalArgs),
    /// Refine a scene layout by ascending the discriminator score.
    Refine(RefineArgs),
    /// Physical plausibility metrics of a scene; prints JSON.
    Score(ScoreArgs),
    /// Dump node and edge features of a scene graph as CSV.
    GraphDump(GraphDumpArgs),
    /// Render training curves from a report as SVG plus CSV.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// JSON synthesis config; defaults to the built-in configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the acceptance configuration (2000 scenes, fixed seed).
    #[arg(long, conflicts_with = "config")]
    acceptance: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Disable training-time augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Report path; defaults to `<out>.report.json` (a CSV is written next to it).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Refined scene output.
    #[arg(long)]
    out: PathBuf,
    /// Trajectory CSV; defaults to `<out>.trajectory.csv`.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Reference layout for IoU.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphDumpArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory for `nodes.csv` and `edges.csv`; without it both tables go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split '{s}' (expected train, val or test)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail("BadConfig", &e.to_string()),
    };
    if let Err(e) = configure_threads() {
        return fail(e.code(), &e.to_string());
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}

fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": code, "message": message.trim_end() }));
    ExitCode::FAILURE
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::BadConfig(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::BadConfig(format!("cannot size thread pool: {e}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Refine(a) => refine_cmd(a),
        Command::Score(a) => score(a),
        Command::GraphDump(a) => graph_dump(a),
        Command::Plot(a) => plot(a),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.acceptance) {
        (Some(path), _) => load_synth_config(path)?,
        (None, true) => SynthConfig::acceptance(),
        (None, false) => SynthConfig::default(),
    };
    if let Some(count) = a.count {
        cfg.count = count;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let entries = generate_dataset(&cfg)?;
    let hash = write_dataset(&a.out, &cfg, &entries)?;
    let plausible = entries.iter().filter(|e| e.scene.label.target() == Some(1.0)).count();
    println!(
        "{}",
        json!({
            "out": a.out,
            "count": entries.len(),
            "plausible": plausible,
            "implausible": entries.len() - plausible,
            "manifest_sha256": hash,
        })
    );
    Ok(())
}

fn labeled(data: &plausiscene::io::LoadedDataset, split: Split) -> Result<Vec<LabeledGraph>> {
    data.split(split)
        .map(|(_, scene)| LabeledGraph::from_scene(scene))
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        seed: a.seed.unwrap_or(defaults.seed),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        hidden: a.hidden.unwrap_or(defaults.hidden),
        patience: a.patience.unwrap_or(defaults.patience),
        augment: defaults.augment && !a.no_augment,
        ..defaults
    };
    let train_set = labeled(&data, Split::Train)?;
    let val_set = labeled(&data, Split::Val)?;
    let (disc, mut report) = train(&train_set, &val_set, &cfg)?;
    disc.save(&a.out)?;
    report.weights_path = Some(a.out.display().to_string());
    report.weights_sha256 = Some(disc.digest());
    let report_path = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    write_text(&report_path, &report_to_json(&report))?;
    write_text(&report_path.with_extension("csv"), &report_csv(&report))?;
    let last = report.epochs.last();
    println!(
        "{}",
        json!({
            "weights": a.out,
            "weights_sha256": report.weights_sha256,
            "report": report_path,
            "epochs_run": report.epochs.len(),
            "best_epoch": report.best_epoch,
            "final_train_loss": last.map(|e| e.train_loss),
            "final_val_accuracy": last.and_then(|e| e.val_accuracy),
            "wall_time_secs": report.wall_time_secs,
        })
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let disc = Discriminator::load(&a.weights)?;
    let data = load_dataset(&a.data)?;
    let set = labeled(&data, a.split)?;
    let report = evaluate(&disc, &set)?;
    println!("{}", to_json(&report));
    Ok(())
}

fn refine_cmd(a: RefineArgs) -> Result<()> {
    let disc = Discriminator::load(&a.weights)?;
    let scene = load_scene(&a.scene)?;
    let defaults = RefineConfig::default();
    let cfg = RefineConfig {
        steps: a.steps.unwrap_or(defaults.steps),
        step_size: a.step_size.unwrap_or(defaults.step_size),
        ..defaults
    };
    let outcome = refine(&scene, &disc, &cfg)?;
    save_scene(&a.out, &outcome.scene)?;
    let trajectory = a.trajectory.unwrap_or_else(|| sibling(&a.out, ".trajectory.csv"));
    write_text(&trajectory, &trajectory_csv(&outcome.trajectory))?;
    println!(
        "{}",
        json!({
            "out": a.out,
            "trajectory": trajectory,
            "steps_run": outcome.trajectory.len().saturating_sub(1),
            "initial_score": outcome.initial_score,
            "final_score": outcome.final_score,
            "no_improvement": outcome.no_improvement,
        })
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let cfg = MetricsConfig::default();
    let metrics = scene_metrics(&scene, &cfg);
    let mut out = serde_json::to_value(metrics).expect("metrics serialize");
    if let Some(path) = &a.reference {
        let reference = load_scene(path)?;
        let (iou3d, iou2d) = scene_iou(&scene, &reference, &cfg.mc)?;
        out["iou3d"] = json!(iou3d);
        out["iou2d_bev"] = json!(iou2d);
    }
    println!("{out}");
    Ok(())
}

fn graph_dump(a: GraphDumpArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let graph = build_graph(&scene)?;
    let (nodes, edges) = (node_features_csv(&graph), edge_features_csv(&graph));
    match a.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_text(&dir.join("nodes.csv"), &nodes)?;
            write_text(&dir.join("edges.csv"), &edges)?;
        }
        None => print!("{nodes}\n{edges}"),
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let report = load_report(&a.report)?;
    let csv = write_plot(&report, &a.out)?;
    println!("{}", json!({ "svg": a.out, "csv": csv }));
    Ok(())
}
