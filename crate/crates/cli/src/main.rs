use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use darko_core::driver::{read_forecasts, run, DriverConfig, FORECASTS_FILE, REGRET_FILE};
use darko_core::eval::{
    evaluate, load_template, make_stream, noise_sweep, regret_summary, write_curve_jsonl, Detector, MetricReport, StreamConfig,
    SweepConfig,
};
use darko_core::irl::{Estimator, RegretLedger};
use darko_core::mdp::{FeatureMode, MdpConfig};
use darko_core::sim::EventStream;
use darko_core::Execution;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "darko", about = "Online IRL forecasting of first-person behavior", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Gt,
    Stop,
    Scene,
}

impl From<DetectorArg> for Detector {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Gt => Detector::Gt,
            DetectorArg::Stop => Detector::Stop,
            DetectorArg::Scene => Detector::Scene,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Full,
    StateOnly,
    PositionOnly,
}

impl From<FeatureArg> for FeatureMode {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Full => FeatureMode::Full,
            FeatureArg::StateOnly => FeatureMode::StateOnly,
            FeatureArg::PositionOnly => FeatureMode::PositionOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a behavior stream from a built-in environment template.
    Simulate {
        #[arg(long, default_value = "lab1")]
        env_template: String,
        #[arg(long, default_value_t = 4)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "gt")]
        detector: DetectorArg,
        /// Spurious goal detections per true goal.
        #[arg(long, default_value_t = 0.0)]
        noise_rate: f64,
        /// Probability of a random move at each walker step.
        #[arg(long, default_value_t = 0.0)]
        agent_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the online learner over a stream and write its artifacts.
    Run {
        #[arg(long)]
        stream: PathBuf,
        /// TOML file with `env_template` or `[mdp]`, and an optional `[driver]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        env_template: Option<String>,
        #[arg(long, value_enum)]
        feature_mode: Option<FeatureArg>,
        /// Seed for sampled visitation; exact runs do not consume randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run directory against the stream's ground truth.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        /// Pool (episode, fraction) samples instead of averaging per episode first.
        #[arg(long)]
        pooled: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired goal-noise sweep comparing ln(rho) and binary goal values.
    Sweep {
        #[arg(long, default_value = "lab1")]
        env_template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        days: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Comma-separated noise rates; defaults to 0.1 through 0.9.
        #[arg(long, value_delimiter = ',')]
        noise_rate: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect regret ledgers from run directories into one CSV.
    Regret {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunFile {
    env_template: Option<String>,
    mdp: Option<MdpConfig>,
    driver: DriverConfig,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_stream(path: &Path) -> Result<EventStream> {
    Ok(EventStream::parse_jsonl(&read(path)?)?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn metrics_csv(r: &MetricReport) -> Result<Vec<u8>> {
    let mut w = Vec::new();
    writeln!(w, "metric,value")?;
    writeln!(w, "episodes,{}", r.episodes)?;
    writeln!(w, "p_bar_darko,{}", opt(r.p_bar.darko))?;
    writeln!(w, "p_bar_uniform,{}", opt(r.p_bar.uniform))?;
    writeln!(w, "p_bar_logistic,{}", opt(r.p_bar.logistic))?;
    writeln!(w, "curve_at_0.1,{}", r.curve.at(0.1))?;
    writeln!(w, "curve_at_1.0,{}", r.curve.at(1.0))?;
    writeln!(w, "length_error_median,{}", opt(r.length_error.as_ref().map(|e| e.median)))?;
    writeln!(w, "length_error_mean,{}", opt(r.length_error.as_ref().map(|e| e.mean)))?;
    writeln!(w, "nn_length_error_median,{}", opt(r.nn_length_error.as_ref().map(|e| e.median)))?;
    writeln!(w, "nn_length_error_mean,{}", opt(r.nn_length_error.as_ref().map(|e| e.mean)))?;
    if let Some(g) = &r.regret {
        writeln!(w, "regret_final,{}", g.final_regret)?;
        writeln!(w, "regret_final_avg,{}", g.final_avg)?;
        writeln!(w, "regret_avg_at_3,{}", opt(g.avg_at_3))?;
        writeln!(w, "regret_within_bound,{}", g.within_bound)?;
    }
    Ok(w)
}

fn run_cmd(
    stream: &Path,
    config: Option<&Path>,
    env_template: Option<String>,
    feature_mode: Option<FeatureArg>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut file: RunFile = match config {
        Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => RunFile::default(),
    };
    if let Some(name) = env_template {
        file.env_template = Some(name);
    }
    let mdp = match (&file.env_template, file.mdp) {
        (Some(name), _) => load_template(name)?.1.mdp_config(),
        (None, Some(m)) => m,
        (None, None) => bail!("give --env-template or an env_template / [mdp] entry in the config"),
    };
    let mut cfg = file.driver;
    if let Some(f) = feature_mode {
        cfg.feature_mode = f.into();
    }
    if let Estimator::MonteCarlo { rollouts, .. } = cfg.estimator {
        cfg.estimator = Estimator::MonteCarlo { rollouts, seed };
    }
    let art = run(&read_stream(stream)?, &mdp, &cfg)?;
    art.write_dir(out)?;
    eprintln!("{} forecasts, {} episodes, {} states -> {}", art.forecasts.len(), art.episodes.len(), art.mdp.len(), out.display());
    Ok(())
}

fn eval_cmd(run_dir: &Path, stream: &Path, pooled: bool, out: &Path) -> Result<()> {
    let forecasts = read_forecasts(&read(&run_dir.join(FORECASTS_FILE))?)?;
    let regret_path = run_dir.join(REGRET_FILE);
    let regret = if regret_path.exists() { Some(RegretLedger::read_csv(&read(&regret_path)?)?) } else { None };
    let report = evaluate(&forecasts, &read_stream(stream)?.ground_truth_goals(), regret.as_ref(), pooled);
    fs::create_dir_all(out)?;
    write(&out.join("metrics.csv"), &metrics_csv(&report)?)?;
    let mut curve = Vec::new();
    write_curve_jsonl(&report.curve, &mut curve)?;
    write(&out.join("curve.jsonl"), &curve)?;
    println!("{}", serde_json::to_string_pretty(&report.p_bar)?);
    Ok(())
}

fn sweep_cmd(env_template: &str, seed: u64, days: usize, repeats: usize, rates: Vec<f64>, out: &Path) -> Result<()> {
    let mut cfg = SweepConfig { repeats, ..SweepConfig::default() };
    cfg.stream.seed = seed;
    cfg.stream.days = days;
    if !rates.is_empty() {
        cfg.rates = rates;
    }
    let report = noise_sweep(env_template, &cfg, Execution::default())?;
    fs::create_dir_all(out)?;
    let mut pairs = Vec::new();
    report.write_csv(&mut pairs)?;
    write(&out.join("sweep_pairs.csv"), &pairs)?;
    let mut w = Vec::new();
    writeln!(w, "template,rate,mean_delta,std_delta,frac_positive")?;
    for r in &report.rates {
        writeln!(w, "{},{},{},{},{}", report.template, r.rate, r.mean_delta, r.std_delta, r.frac_positive)?;
    }
    write(&out.join("sweep.csv"), &w)?;
    print!("{}", String::from_utf8(w)?);
    Ok(())
}

fn regret_cmd(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut w = Vec::new();
    writeln!(w, "run,t,loss_online,loss_hindsight,regret,avg_regret,bound")?;
    for dir in runs {
        let ledger = RegretLedger::read_csv(&read(&dir.join(REGRET_FILE))?)?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for r in &ledger.rows {
            writeln!(w, "{name},{},{},{},{},{},{}", r.t, r.loss_online, r.loss_hindsight, r.regret, r.avg_regret, r.bound)?;
        }
        if let Some(s) = regret_summary(&ledger) {
            eprintln!("{name}: {} episodes, final R/t {:.4}, within bound {}", s.episodes, s.final_avg, s.within_bound);
        }
    }
    write(out, &w)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { env_template, days, seed, detector, noise_rate, agent_noise, out } => {
            let (t, env) = load_template(&env_template)?;
            let cfg = StreamConfig { days, seed, detector: detector.into(), goal_noise_rate: noise_rate, agent_noise, ..Default::default() };
            let stream = make_stream(&t, &env, &cfg)?;
            write(&out, &stream.to_jsonl())?;
            eprintln!("{} events, {} goals, hash {}", stream.events.len(), stream.ground_truth_goals().len(), stream.hash());
            Ok(())
        }
        Command::Run { stream, config, env_template, feature_mode, seed, out } => {
            run_cmd(&stream, config.as_deref(), env_template, feature_mode, seed, &out)
        }
        Command::Eval { run, stream, pooled, out } => eval_cmd(&run, &stream, pooled, &out),
        Command::Sweep { env_template, seed, days, repeats, noise_rate, out } => {
            sweep_cmd(&env_template, seed, days, repeats, noise_rate, &out)
        }
        Command::Regret { runs, out } => regret_cmd(&runs, &out),
    }
}
