use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memtrader::bench::run_bench;
use memtrader::checks::{run_gradcheck, CheckTarget};
use memtrader::config::{FeatureKind, RunConfig};
use memtrader::encoder::{train_encoder, Encoder};
use memtrader::env::{gen_synthetic, oracle_profit, EnvConfig, PriceSeries};
use memtrader::model::ModelKind;
use memtrader::numerics::snapshot::Snapshot;
use memtrader::pipeline::{load_series, policy_snapshot, prepare_series, run_model, test_policy, AnyNet, PreparedSeries};
use memtrader::rl::{EpisodeLog, TrainObserver};
use memtrader::rng::SeedTree;
use memtrader::{Error, Result};

/// Memory-network trading agents: encoder pretraining, double Q-learning,
/// evaluation and benchmarking on market-replay series.
#[derive(Parser)]
#[command(name = "memtrader", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a window encoder per series and write its snapshot and loss trace.
    Encode(RunArgs),
    /// Train a policy per series and test it on the held-out days.
    Train(RunArgs),
    /// Evaluate trained policies on the held-out days.
    Eval(EvalArgs),
    /// Train and test every benchmark model on every series.
    Bench(RunArgs),
    /// Compare analytic and finite-difference gradients on a tiny instance.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic series with a given Markov order as CSV.
    Synth(SynthArgs),
    /// Print the best achievable terminal reward on a series as JSON.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    features: Option<FeatureKind>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Policy snapshot; defaults to the one `train` wrote for each series.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(value_enum, default_value = "gmemn2n")]
    target: CheckTarget,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the analytic gradient of this tensor.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    order: usize,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    amplitude: f64,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Series CSV.
    series: PathBuf,
    /// Environment settings are taken from this run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// First decision day.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Decisions in the episode; defaults to every remaining day.
    #[arg(long)]
    horizon: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.cmd {
        Command::Encode(a) => cmd_encode(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(model) = a.model {
        cfg.model = model;
    }
    if let Some(f) = a.features {
        cfg.features = f;
    }
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    } else if cfg.output_dir.is_relative() {
        cfg.output_dir = a.config.parent().unwrap_or(Path::new("")).join(&cfg.output_dir);
    }
    cfg.check()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn encoder_path(cfg: &RunConfig, series: &str) -> PathBuf {
    cfg.output_dir.join(format!("encoder-{series}.json"))
}

fn policy_path(cfg: &RunConfig, series: &str, model: ModelKind) -> PathBuf {
    cfg.output_dir.join(format!("policy-{series}-{model}.json"))
}

/// Normalize a series, reusing the encoder written by `encode`.
fn prepare(series: &PriceSeries, cfg: &RunConfig) -> Result<PreparedSeries> {
    let encoder = match cfg.features {
        FeatureKind::Encoder => {
            let path = encoder_path(cfg, &series.name);
            if !path.is_file() {
                return Err(Error::InvalidConfig(vec![format!(
                    "encoder snapshot {} not found; run `memtrader encode` with this config first",
                    path.display()
                )]));
            }
            Some(Encoder::load(&path)?)
        }
        _ => None,
    };
    prepare_series(series, cfg, encoder)
}

fn provenance(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "seed": cfg.seed, "config": cfg.to_toml()? }))
}

fn cmd_encode(a: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(a)?;
    for series in load_series(&cfg)? {
        memtrader::pipeline::check_length(&series, &cfg)?;
        let scale = series.opens[..cfg.train_days].iter().cloned().fold(f64::MIN, f64::max);
        let prices: Vec<f64> = series.opens[..cfg.train_days].iter().map(|p| p / scale).collect();
        let seed = SeedTree::new(cfg.seed).child(&format!("encoder/{}", series.name)).key();
        let (enc, loss) = train_encoder(&prices, &cfg.window, &cfg.encoder, seed)?;
        let mut snap = enc.snapshot();
        snap.header["provenance"] = provenance(&cfg)?;
        write(&encoder_path(&cfg, &series.name), &(snap.to_json()? + "\n"))?;
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in loss.iter().enumerate() {
            csv.push_str(&format!("{},{l:?}\n", i + 1));
        }
        write(&cfg.output_dir.join(format!("encoder-{}-loss.csv", series.name)), &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Prints one line per finished restart.
struct Progress {
    episodes: usize,
    rewards: Vec<f64>,
}

impl TrainObserver for Progress {
    fn on_episode(&mut self, log: &EpisodeLog) {
        self.rewards.push(log.terminal_reward);
        if log.episode + 1 == self.episodes || log.aborted {
            let tail = &self.rewards[self.rewards.len().saturating_sub(100)..];
            eprintln!(
                "  restart {:>2}: {} episodes, mean reward of the last {} {:+.5}{}",
                log.restart,
                log.episode + 1,
                tail.len(),
                tail.iter().sum::<f64>() / tail.len() as f64,
                if log.aborted { " (aborted)" } else { "" }
            );
            self.rewards.clear();
        }
    }
}

fn cmd_train(a: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(a)?;
    for series in load_series(&cfg)? {
        let prepared = prepare(&series, &cfg)?;
        eprintln!("training {} on {}", cfg.model, series.name);
        let mut progress = Progress { episodes: cfg.train.episodes, rewards: Vec::new() };
        let run = run_model(&prepared, &cfg, cfg.model, &mut progress)?;
        let stem = format!("{}-{}", series.name, cfg.model);
        run.snapshot(&cfg).save(&policy_path(&cfg, &series.name, cfg.model))?;
        eprintln!("wrote {}", policy_path(&cfg, &series.name, cfg.model).display());
        write(&cfg.output_dir.join(format!("train-{stem}.jsonl")), &run.outcome.log_jsonl()?)?;
        let mut summary = serde_json::to_value(run.summary())?;
        summary["restarts"] = serde_json::to_value(&run.outcome.restarts)?;
        summary["provenance"] = provenance(&cfg)?;
        write(&cfg.output_dir.join(format!("test-{stem}.json")), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
        println!(
            "{}\t{}\tgreedy {:.6}\toracle {:.6}\tbudget {:.6} ± {:.6}",
            series.name, cfg.model, run.greedy_reward, run.oracle, run.report.budget_mean, run.report.budget_std
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: &EvalArgs) -> Result<ExitCode> {
    let cfg = load_config(&a.run)?;
    for series in load_series(&cfg)? {
        let prepared = prepare(&series, &cfg)?;
        let path = a.policy.clone().unwrap_or_else(|| policy_path(&cfg, &series.name, cfg.model));
        let snap = Snapshot::load(&path)?;
        snap.expect_kind(cfg.model.as_str())?;
        let net = AnyNet::build(cfg.model, &cfg, prepared.input_dim(&cfg))?;
        let params = snap.to_store()?;
        net.check_store(&params)?;
        let (report, _, greedy) = test_policy(&net, &params, &prepared, &cfg)?;
        let out = serde_json::json!({
            "series": series.name,
            "model": cfg.model,
            "policy": policy_snapshot(&net, &params, &cfg).header,
            "greedy_reward": greedy,
            "report": report,
            "provenance": provenance(&cfg)?,
        });
        let text = serde_json::to_string_pretty(&out)? + "\n";
        write(&cfg.output_dir.join(format!("eval-{}-{}.json", series.name, cfg.model)), &text)?;
        print!("{text}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(a)?;
    let (report, _) = run_bench(&cfg, |series, model| {
        eprintln!("training {model} on {series}");
        Box::new(Progress { episodes: cfg.train.episodes, rewards: Vec::new() })
    })?;
    write(&cfg.output_dir.join("bench.json"), &report.to_json()?)?;
    let table = report.to_table();
    write(&cfg.output_dir.join("bench.txt"), &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let checks = run_gradcheck(a.target, a.seed, a.corrupt.as_deref())?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!("{:<width$}  {:.3e}  {}", c.name, c.max_rel_err, if c.passed { "ok" } else { "FAIL" });
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        println!("all {} tensors pass", checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} tensors fail", checks.len());
        Ok(ExitCode::from(2))
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<ExitCode> {
    let mut errs = Vec::new();
    if a.order == 0 {
        errs.push("--order must be at least 1".to_string());
    }
    if !(a.amplitude > 0.0 && a.amplitude.is_finite()) {
        errs.push("--amplitude must be positive".to_string());
    }
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let series = gen_synthetic(a.order, a.length, a.amplitude, a.seed);
    match &a.out {
        Some(path) => {
            series.write_csv(path)?;
            eprintln!("wrote {}", path.display());
        }
        None => series.write_csv_to(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(a: &OracleArgs) -> Result<ExitCode> {
    let series = PriceSeries::load_csv(&a.series)?;
    let base = match &a.config {
        Some(path) => RunConfig::load(path)?.env_config(),
        None => EnvConfig::trading(),
    };
    let horizon = a.horizon.unwrap_or(series.len().saturating_sub(a.start));
    let env = EnvConfig { horizon, ..base };
    let sol = oracle_profit(&series.opens, a.start, &env)?;
    println!("{}", serde_json::to_string_pretty(&sol)?);
    Ok(ExitCode::SUCCESS)
}
