use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use episodic_core::report::{target_row, update_rows, MetricsRow, MetricsWriter, TraceWriter};
use episodic_core::synth::{generate_pseudo_target, write_samples_csv};
use episodic_core::{
    compare_merges, evaluate_on_target, read_checkpoint, sweep_episodes, train, write_checkpoint, GlobalModelState,
    MergeStrategy, ParamVector, SeededRng, SyntheticProblem, TargetEvaluation, TrainingConfig,
};
use log::info;
use serde_json::json;

#[derive(Parser)]
#[command(name = "episodic", version, about = "Episodic training with task-vector merging on a synthetic category discovery benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a global model and score it on the target domain.
    Train(Common),
    /// Score a saved checkpoint on the target domain.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train once per episode count and score each result.
    SweepEpisodes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,12")]
        episodes: Vec<usize>,
    },
    /// Train once per merge strategy on the same data and seed.
    CompareMerges(Common),
    /// Write the generated benchmark data as CSV files.
    GenData(Common),
}

fn load_config(common: &Common) -> Result<TrainingConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainingConfig::load(path)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn checkpoint_dims(cfg: &TrainingConfig) -> [u32; 3] {
    let a = cfg.architecture();
    [a.input as u32, a.hidden as u32, a.embed as u32]
}

fn save_checkpoint(dir: &Path, global_index: usize, params: &ParamVector, cfg: &TrainingConfig) -> Result<()> {
    let path = dir.join(format!("global_{global_index:03}.ckpt"));
    write_checkpoint(create(&path)?, params, &checkpoint_dims(cfg))?;
    Ok(())
}

fn target_json(t: &TargetEvaluation) -> serde_json::Value {
    json!({ "all": t.metrics.all, "old": t.metrics.old, "new": t.metrics.new, "k_used": t.k_used })
}

/// Writes `run.json`: config echo, versions, timing and a command summary.
fn write_manifest(out: &Path, command: &str, cfg: &TrainingConfig, started: Instant, summary: serde_json::Value) -> Result<()> {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg)?,
        "finished_unix": unix,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "summary": summary,
    });
    let mut w = create(&out.join("run.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    Ok(())
}

fn run_train(common: &Common) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let out = &common.out;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed)?;
    let run_id = format!("train-seed-{}", cfg.seed);
    let strategy = cfg.effective_strategy().name();

    let initial = GlobalModelState::initial(cfg.architecture(), cfg.seed)?;
    save_checkpoint(&ckpt_dir, 0, &initial.params, &cfg)?;
    let mut metrics = MetricsWriter::new(create(&out.join("metrics.csv"))?);
    let mut trace = TraceWriter::new(create(&out.join("trace.csv"))?);
    let state = train(&cfg, &problem, |next, report| {
        for row in update_rows(&run_id, strategy, report) {
            metrics.write(&row)?;
        }
        trace.write_update(report)?;
        save_checkpoint(&ckpt_dir, next.global_index, &next.params, &cfg)
            .map_err(|e| episodic_core::Error::Io(e.to_string()))?;
        info!(
            "global update {}: L1 change {:.4}, {} episode(s) aborted",
            next.global_index,
            report.merge.update_l1,
            next.history.last().map_or(0, |h| h.aborted.len())
        );
        Ok(())
    })?;
    let target = evaluate_on_target(&state.params, &problem, &cfg)?;
    metrics.write(&target_row(&run_id, strategy, state.global_index, &target))?;
    metrics.flush()?;
    trace.flush()?;
    info!("target All {:.4} Old {:.4} New {:.4}", target.metrics.all, target.metrics.old, target.metrics.new);
    let history: Vec<_> = state
        .history
        .iter()
        .map(|h| json!({ "global_update": h.global_index, "weight_diff_l1": h.weight_diff_l1, "sign_conflict": h.sign_conflict, "weights": h.weights, "aborted": h.aborted }))
        .collect();
    write_manifest(out, "train", &cfg, started, json!({ "target": target_json(&target), "history": history }))
}

fn run_evaluate(common: &Common, checkpoint: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let (params, dims) = read_checkpoint(std::io::BufReader::new(file))?;
    if dims != checkpoint_dims(&cfg) {
        bail!("checkpoint dims {dims:?} do not match the configured architecture {:?}", checkpoint_dims(&cfg));
    }
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed)?;
    let target = evaluate_on_target(&params, &problem, &cfg)?;
    let run_id = format!("evaluate-seed-{}", cfg.seed);
    let mut metrics = MetricsWriter::new(create(&common.out.join("metrics.csv"))?);
    metrics.write(&target_row(&run_id, "checkpoint", 0, &target))?;
    metrics.flush()?;
    info!("target All {:.4} Old {:.4} New {:.4}", target.metrics.all, target.metrics.old, target.metrics.new);
    write_manifest(
        &common.out,
        "evaluate",
        &cfg,
        started,
        json!({ "checkpoint": checkpoint.display().to_string(), "target": target_json(&target) }),
    )
}

fn run_sweep(common: &Common, episodes: &[usize]) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed)?;
    let results = sweep_episodes(&cfg, &problem, episodes)?;
    let strategy = cfg.effective_strategy().name();
    let mut metrics = MetricsWriter::new(create(&common.out.join("metrics.csv"))?);
    let mut summary = Vec::new();
    for (n_e, target) in &results {
        let run_id = format!("sweep-seed-{}-n_e-{n_e}", cfg.seed);
        metrics.write(&target_row(&run_id, strategy, cfg.effective_n_g(), target))?;
        info!("n_e = {n_e}: target All {:.4}", target.metrics.all);
        summary.push(json!({ "n_e": n_e, "target": target_json(target) }));
    }
    metrics.flush()?;
    write_manifest(&common.out, "sweep-episodes", &cfg, started, json!(summary))
}

fn run_compare(common: &Common) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed)?;
    let results = compare_merges(&cfg, &problem, &MergeStrategy::ALL)?;
    let mut metrics = MetricsWriter::new(create(&common.out.join("metrics.csv"))?);
    let mut summary = Vec::new();
    for (strategy, run) in &results {
        let run_id = format!("compare-seed-{}-{}", cfg.seed, strategy.name());
        for h in &run.state.history {
            metrics.write(&MetricsRow {
                run_id: run_id.clone(),
                global_update: h.global_index,
                episode: None,
                split: "merge",
                all: None,
                old: None,
                new: None,
                k_used: None,
                strategy: strategy.name().to_string(),
                weight: None,
                sign_conflict: h.sign_conflict,
                update_l1: Some(h.weight_diff_l1),
            })?;
        }
        metrics.write(&target_row(&run_id, strategy.name(), run.state.global_index, &run.target))?;
        info!("{}: target All {:.4}", strategy.name(), run.target.metrics.all);
        summary.push(json!({ "strategy": strategy.name(), "target": target_json(&run.target) }));
    }
    metrics.flush()?;
    write_manifest(&common.out, "compare-merges", &cfg, started, json!(summary))
}

fn run_gen_data(common: &Common) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    let problem = SyntheticProblem::generate(&cfg.problem, cfg.seed)?;
    let source: Vec<_> = problem.source.iter().map(|s| s.to_unlabeled()).collect();
    write_samples_csv(create(&out.join("source.csv"))?, &source)?;
    write_samples_csv(create(&out.join("validation.csv"))?, &problem.validation.samples)?;
    write_samples_csv(create(&out.join("target.csv"))?, &problem.target)?;
    let known = problem.known_specs();
    let mut pseudo = Vec::new();
    for (i, domain) in problem.train_domains.iter().enumerate() {
        let mut rng = SeededRng::derive(cfg.seed, &[0x6E, i as u64]);
        pseudo.extend(generate_pseudo_target(&known, domain, cfg.problem.pseudo_samples_per_class, &mut rng)?);
    }
    write_samples_csv(create(&out.join("pseudo_targets.csv"))?, &pseudo)?;
    info!(
        "wrote {} source, {} pseudo-target, {} validation and {} target samples",
        source.len(),
        pseudo.len(),
        problem.validation.samples.len(),
        problem.target.len()
    );
    let counts = json!({
        "source": source.len(),
        "pseudo_targets": pseudo.len(),
        "validation": problem.validation.samples.len(),
        "target": problem.target.len(),
    });
    write_manifest(out, "gen-data", &cfg, started, counts)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(c) => run_train(c),
        Command::Evaluate { common, checkpoint } => run_evaluate(common, checkpoint),
        Command::SweepEpisodes { common, episodes } => run_sweep(common, episodes),
        Command::CompareMerges(c) => run_compare(c),
        Command::GenData(c) => run_gen_data(c),
    }
}
