use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rovernav::ace::build_ground_truth_acemap;
use rovernav::bridge::{read_grid, write_grid, GridFile};
use rovernav::harness::{
    export_training_pairs, output_dir, read_trials_jsonl, render_report, run_case, run_montecarlo, score_acemap,
    summarize, summary_csv, trials_jsonl, Experiment, ExperimentConfig, ExportOptions, MetricsSummary, ProviderSpec,
    SelectionMode, TerrainCase, TrialRow, DEFAULT_TRAIN_FRACTION,
};
use rovernav::rover_sim::HeuristicMode;
use rovernav::terraingen::{classify_terrain, generate_terrain, TerrainSpec};

#[derive(Parser)]
#[command(name = "rovernav", version, about = "Rover navigation trials and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial and print its result as JSON.
    RunTrial(RunTrialArgs),
    /// Run an experiment over the terrain matrix.
    RunExperiment(RunExperimentArgs),
    /// Generate a synthetic terrain and write it as a grid file.
    GenTerrain(GenTerrainArgs),
    /// Run trials and export sampled heightmap/AceMap pairs.
    ExportDataset(ExportArgs),
    /// Score a predicted AceMap against ground truth.
    EvalAcemap(EvalArgs),
    /// Summarize per-trial JSON lines into a CSV and a metric table.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long, value_name = "TOML")]
    terrains: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.terrains {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.base_seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    None,
    Gradient,
    Learned,
    Both,
}

impl From<HeuristicArg> for HeuristicMode {
    fn from(h: HeuristicArg) -> Self {
        match h {
            HeuristicArg::None => HeuristicMode::NONE,
            HeuristicArg::Gradient => HeuristicMode::GRADIENT,
            HeuristicArg::Learned => HeuristicMode::LEARNED,
            HeuristicArg::Both => HeuristicMode::BOTH,
        }
    }
}

#[derive(Args)]
struct RunTrialArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0.0)]
    slope: f64,
    #[arg(long, default_value_t = 0.0)]
    cfa: f64,
    /// Heuristic, overriding the config.
    #[arg(long, value_enum)]
    heuristic: Option<HeuristicArg>,
    #[arg(long)]
    first_feasible: bool,
}

#[derive(Args)]
struct RunExperimentArgs {
    /// baseline, 1, 2, 3 or 4
    experiment: Experiment,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; ROVERNAV_OUT_DIR or `out` otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the baseline reference arm of experiments 1 to 4.
    #[arg(long)]
    no_baseline: bool,
}

#[derive(Args)]
struct GenTerrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    slope: f64,
    #[arg(long, default_value_t = 0.0)]
    cfa: f64,
    #[arg(long, default_value_t = 100.0)]
    extent: f64,
    #[arg(long, default_value_t = 0.1)]
    cell: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    /// Fail when a trial logged fewer heightmaps than requested.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted AceMap grid.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: an AceMap grid, or a heightmap grid to label.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Trial JSON-lines files.
    #[arg(required = true)]
    trials: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(arg: &Option<PathBuf>) -> PathBuf {
    arg.clone().unwrap_or_else(|| output_dir("out"))
}

fn write_outputs(dir: &Path, rows: &[TrialRow], summaries: &[MetricsSummary]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("trials.jsonl"), trials_jsonl(rows))?;
    fs::write(dir.join("summary.csv"), summary_csv(summaries))?;
    let report = render_report(summaries);
    fs::write(dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn run_trial(args: &RunTrialArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(h) = args.heuristic {
        config.heuristic = h.into();
    }
    if args.first_feasible {
        config.selection = SelectionMode::FirstFeasible;
    }
    if config.heuristic.learned && config.provider == ProviderSpec::None {
        config.provider = ProviderSpec::Oracle { radius: 6.5 };
    }
    let case = TerrainCase {
        index: 0,
        slope_deg: args.slope,
        cfa: args.cfa,
        rep: 0,
        seed: config.base_seed,
        class: classify_terrain(args.slope, args.cfa),
    };
    let (row, _) = run_case(&config, &case)?;
    println!("{}", serde_json::to_string_pretty(&row)?);
    Ok(())
}

fn run_experiment(args: &RunExperimentArgs) -> Result<()> {
    let base = args.config.load()?;
    let mut arms = Vec::new();
    if args.experiment != Experiment::Baseline && !args.no_baseline {
        arms.extend(Experiment::Baseline.arms(&base));
    }
    arms.extend(args.experiment.arms(&base));
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for arm in &arms {
        log::info!("running {} ({} trials)", arm.name, arm.matrix.len());
        let run = run_montecarlo(arm)?;
        rows.extend(run.trials);
        summaries.push(run.summary);
    }
    write_outputs(&out_dir(&args.out), &rows, &summaries)
}

fn gen_terrain(args: &GenTerrainArgs) -> Result<()> {
    let spec = TerrainSpec {
        seed: args.seed,
        slope_deg: args.slope,
        cfa: args.cfa,
        extent: args.extent,
        cell: args.cell,
        ..TerrainSpec::default()
    };
    let terrain = generate_terrain(&spec)?;
    write_grid(&args.out, &GridFile::from_heightmap(&terrain.map))?;
    println!(
        "{} rocks, achieved cfa {:.4}, wrote {}",
        terrain.rocks_placed,
        terrain.achieved_cfa,
        args.out.display()
    );
    Ok(())
}

fn export_dataset(args: &ExportArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if config.sim.snapshot_every == 0 {
        config.sim.snapshot_every = 1;
    }
    let mut trials = Vec::new();
    for case in config.matrix.cases(config.base_seed) {
        let (_, snaps) = run_case(&config, &case)?;
        trials.push((format!("trial{:04}", case.index), snaps));
    }
    let options = ExportOptions {
        samples_per_trial: args.samples,
        train_fraction: args.train_fraction,
        seed: config.base_seed,
        strict: args.strict,
    };
    let dir = out_dir(&args.out);
    let summary = export_training_pairs(&trials, &config.sim.planner.ace, &options, &dir)?;
    println!(
        "{} pairs ({} train, {} val) in {}",
        summary.pairs,
        summary.train,
        summary.validation,
        dir.display()
    );
    if !summary.short_trials.is_empty() {
        println!(
            "{} trials had fewer than {} heightmaps",
            summary.short_trials.len(),
            args.samples
        );
    }
    Ok(())
}

fn eval_acemap(args: &EvalArgs) -> Result<()> {
    let pred = read_grid(&args.pred)
        .with_context(|| format!("reading {}", args.pred.display()))?
        .to_acemap()?;
    let truth_grid = read_grid(&args.truth).with_context(|| format!("reading {}", args.truth.display()))?;
    let truth = if truth_grid.channels == 1 {
        build_ground_truth_acemap(&truth_grid.to_heightmap()?, &Default::default())
    } else {
        truth_grid.to_acemap()?
    };
    let score = score_acemap(&pred, &truth).map_err(anyhow::Error::msg)?;
    println!("accuracy  {:.2}%", 100.0 * score.accuracy);
    println!("recall    {:.2}%", 100.0 * score.recall);
    println!("precision {:.2}%", 100.0 * score.precision);
    println!("{:>7}  {:>9}  {:>9}  {:>9}  {:>9}", "heading", "tp", "fp", "tn", "fn");
    for (i, c) in score.per_channel.iter().enumerate() {
        println!("{:>6}°  {:>9}  {:>9}  {:>9}  {:>9}", i * 45, c.tp, c.fp, c.tn, c.fn_);
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.trials {
        rows.extend(read_trials_jsonl(path).with_context(|| format!("reading {}", path.display()))?);
    }
    if rows.is_empty() {
        bail!("no trials found");
    }
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.experiment) {
            names.push(r.experiment.clone());
        }
    }
    let summaries: Vec<MetricsSummary> = names
        .iter()
        .map(|n| {
            let sel: Vec<TrialRow> = rows.iter().filter(|r| &r.experiment == n).cloned().collect();
            summarize(n, &sel)
        })
        .collect();
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("summary.csv"), summary_csv(&summaries))?;
    print!("{}", render_report(&summaries));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunTrial(a) => run_trial(a),
        Command::RunExperiment(a) => run_experiment(a),
        Command::GenTerrain(a) => gen_terrain(a),
        Command::ExportDataset(a) => export_dataset(a),
        Command::EvalAcemap(a) => eval_acemap(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
