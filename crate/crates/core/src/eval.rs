//! Metrics over run artifacts and the experiment drivers built on them:
//! mean true-goal probability, fractional-time curves, remaining-length
//! error, regret summaries and the paired goal-noise sweep.

use serde::{Deserialize, Serialize};

use crate::driver::{run, DetectorChannel, DriverConfig, ForecastRecord, RunArtifacts};
use crate::error::{DarkoError, Result};
use crate::exec::Execution;
use crate::irl::RegretLedger;
use crate::planner::GoalConfidence;
use crate::sim::templates::{template, Template};
use crate::sim::{
    ground_truth_detections, inject_action_noise, inject_goal_noise, scene_detector, simulate, stop_detector,
    Environment, EventStream, GoalNoise, SceneDetector, StopDetector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Darko,
    Uniform,
    Logistic,
}

impl Method {
    pub fn prob(self, r: &ForecastRecord, scene: usize) -> Option<f64> {
        let v = match self {
            Method::Darko => &r.scene_posterior,
            Method::Uniform => &r.baselines.as_ref()?.uniform,
            Method::Logistic => &r.baselines.as_ref()?.logistic,
        };
        Some(v.get(scene).copied().unwrap_or(0.0))
    }
}

/// Forecasts between two ground-truth arrivals, the later one included.
#[derive(Clone, Debug)]
pub struct Segment<'a> {
    pub goal: usize,
    pub arrival: u64,
    pub records: Vec<&'a ForecastRecord>,
}

impl Segment<'_> {
    pub fn probs(&self, m: Method) -> Option<Vec<f64>> {
        self.records.iter().map(|r| m.prob(r, self.goal)).collect()
    }

    /// `(true remaining actions, forecast)` per record, zero-length steps dropped.
    pub fn lengths(&self, nn: bool) -> Vec<(f64, Option<f64>)> {
        let Some(end) = self.records.iter().find(|r| r.t == self.arrival) else {
            return Vec::new();
        };
        self.records
            .iter()
            .filter(|r| r.progress < end.progress)
            .map(|r| {
                let pred = if nn { r.baselines.as_ref().and_then(|b| b.nn_length) } else { r.expected_length };
                ((end.progress - r.progress) as f64, pred)
            })
            .collect()
    }
}

pub fn segment<'a>(forecasts: &'a [ForecastRecord], arrivals: &[(u64, usize)]) -> Vec<Segment<'a>> {
    let mut out = Vec::with_capacity(arrivals.len());
    let mut i = 0;
    for &(arrival, goal) in arrivals {
        let mut records = Vec::new();
        while i < forecasts.len() && forecasts[i].t <= arrival {
            records.push(&forecasts[i]);
            i += 1;
        }
        out.push(Segment { goal, arrival, records });
    }
    out
}

/// `(1/N) sum_n (1/T_n) sum_t p_nt`; episodes without forecasts are skipped.
pub fn mean_true_goal_prob(episodes: &[Vec<f64>]) -> Option<f64> {
    let scores: Vec<f64> =
        episodes.iter().filter(|e| !e.is_empty()).map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub fraction: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: Vec<usize>,
}

impl Curve {
    /// Value at the grid point nearest to `f`.
    pub fn at(&self, f: f64) -> f64 {
        let n = self.fraction.len();
        let i = ((f * (n - 1) as f64).round() as usize).min(n - 1);
        self.mean[i]
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

/// Episodes resampled onto `grid` evenly spaced fractions by nearest-step
/// lookup, then averaged across episodes. With `pooled`, every step is
/// instead binned at its own fraction and bins average all samples; empty
/// bins repeat the previous bin.
pub fn fractional_time_curve(episodes: &[Vec<f64>], grid: usize, pooled: bool) -> Curve {
    let grid = grid.max(2);
    let fraction: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); grid];
    for e in episodes.iter().filter(|e| !e.is_empty()) {
        let last = (e.len() - 1) as f64;
        if pooled {
            for (t, &p) in e.iter().enumerate() {
                let f = if last > 0.0 { t as f64 / last } else { 1.0 };
                samples[(f * (grid - 1) as f64).round() as usize].push(p);
            }
        } else {
            for (i, &f) in fraction.iter().enumerate() {
                samples[i].push(e[(f * last).round() as usize]);
            }
        }
    }
    let mut mean = Vec::with_capacity(grid);
    let mut std = Vec::with_capacity(grid);
    for s in &samples {
        if s.is_empty() {
            mean.push(mean.last().copied().unwrap_or(0.0));
            std.push(std.last().copied().unwrap_or(0.0));
        } else {
            let (m, d) = mean_std(s);
            mean.push(m);
            std.push(d);
        }
    }
    Curve { fraction, mean, std, count: samples.iter().map(Vec::len).collect() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthError {
    /// Percentages.
    pub median: f64,
    pub mean: f64,
    pub episodes: usize,
}

/// Per-episode mean of `|tau - tau_hat| / tau`; a missing forecast counts as
/// a forecast of zero.
pub fn length_error_stats(episodes: &[Vec<(f64, Option<f64>)>]) -> Option<LengthError> {
    let mut errs: Vec<f64> = episodes
        .iter()
        .filter_map(|e| {
            let steps: Vec<f64> =
                e.iter().filter(|(tau, _)| *tau > 0.0).map(|(tau, hat)| (tau - hat.unwrap_or(0.0)).abs() / tau).collect();
            (!steps.is_empty()).then(|| 100.0 * steps.iter().sum::<f64>() / steps.len() as f64)
        })
        .collect();
    if errs.is_empty() {
        return None;
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    let median = if n % 2 == 1 { errs[n / 2] } else { 0.5 * (errs[n / 2 - 1] + errs[n / 2]) };
    Some(LengthError { median, mean: errs.iter().sum::<f64>() / n as f64, episodes: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub episodes: usize,
    pub final_regret: f64,
    pub final_avg: f64,
    pub avg_at_3: Option<f64>,
    /// Largest `R_t / bound_t`; at most 1 when the bound holds throughout.
    pub max_bound_ratio: f64,
    pub within_bound: bool,
}

pub fn regret_summary(ledger: &RegretLedger) -> Option<RegretSummary> {
    let last = ledger.rows.last()?;
    Some(RegretSummary {
        episodes: ledger.rows.len(),
        final_regret: last.regret,
        final_avg: last.avg_regret,
        avg_at_3: ledger.rows.iter().find(|r| r.t == 3).map(|r| r.avg_regret),
        max_bound_ratio: ledger.rows.iter().map(|r| r.regret / r.bound).fold(f64::NEG_INFINITY, f64::max),
        within_bound: ledger.rows.iter().all(|r| r.regret <= r.bound),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub darko: Option<f64>,
    pub uniform: Option<f64>,
    pub logistic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub episodes: usize,
    pub p_bar: MethodScores,
    pub curve: Curve,
    pub length_error: Option<LengthError>,
    pub nn_length_error: Option<LengthError>,
    pub regret: Option<RegretSummary>,
}

pub const CURVE_GRID: usize = 101;

pub fn evaluate(
    forecasts: &[ForecastRecord],
    arrivals: &[(u64, usize)],
    regret: Option<&RegretLedger>,
    pooled: bool,
) -> MetricReport {
    let segs = segment(forecasts, arrivals);
    let score = |m: Method| -> Option<f64> {
        let probs: Option<Vec<Vec<f64>>> = segs.iter().map(|s| s.probs(m)).collect();
        mean_true_goal_prob(&probs?)
    };
    let darko: Vec<Vec<f64>> = segs.iter().map(|s| s.probs(Method::Darko).unwrap_or_default()).collect();
    let lengths: Vec<_> = segs.iter().map(|s| s.lengths(false)).collect();
    let nn: Vec<_> = segs.iter().map(|s| s.lengths(true)).collect();
    let has_baselines = forecasts.first().is_some_and(|r| r.baselines.is_some());
    MetricReport {
        episodes: segs.iter().filter(|s| !s.records.is_empty()).count(),
        p_bar: MethodScores { darko: score(Method::Darko), uniform: score(Method::Uniform), logistic: score(Method::Logistic) },
        curve: fractional_time_curve(&darko, CURVE_GRID, pooled),
        length_error: length_error_stats(&lengths),
        nn_length_error: if has_baselines { length_error_stats(&nn) } else { None },
        regret: regret.and_then(regret_summary),
    }
}

pub fn write_curve_jsonl<W: std::io::Write>(curve: &Curve, mut w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Point {
        fraction: f64,
        mean: f64,
        std: f64,
        count: usize,
    }
    for i in 0..curve.fraction.len() {
        let p = Point { fraction: curve.fraction[i], mean: curve.mean[i], std: curve.std[i], count: curve.count[i] };
        serde_json::to_writer(&mut w, &p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Ground-truth arrivals become detections with the configured confidence.
    #[default]
    Gt,
    Stop,
    Scene,
}

/// Everything needed to produce one input stream from a template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub days: usize,
    pub seed: u64,
    pub agent_noise: f64,
    pub detector: Detector,
    pub truth_rho: f64,
    pub stop: StopDetector,
    pub scene: SceneDetector,
    pub goal_noise_rate: f64,
    pub goal_noise: GoalNoise,
    pub action_accuracy: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            days: 4,
            seed: 0,
            agent_noise: 0.0,
            detector: Detector::Gt,
            truth_rho: 0.95,
            stop: StopDetector::default(),
            scene: SceneDetector::default(),
            goal_noise_rate: 0.0,
            goal_noise: GoalNoise::default(),
            action_accuracy: 1.0,
        }
    }
}

/// Derives independent seeds for the stages of one experiment.
pub fn sub_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulated stream with detections and noise applied per `cfg`.
pub fn make_stream(t: &Template, env: &Environment, cfg: &StreamConfig) -> Result<EventStream> {
    let script = t.routine.sample_script(cfg.days, sub_seed(cfg.seed, 1));
    let raw = simulate(env, &script, cfg.agent_noise, sub_seed(cfg.seed, 2))?;
    let detected = match cfg.detector {
        Detector::Gt => ground_truth_detections(&raw, cfg.truth_rho),
        Detector::Stop => stop_detector(&raw, env, &cfg.stop),
        Detector::Scene => {
            let sc = SceneDetector { seed: sub_seed(cfg.seed, 3), ..cfg.scene.clone() };
            scene_detector(&raw, env, &sc)
        }
    };
    let noisy = if cfg.goal_noise_rate > 0.0 {
        inject_goal_noise(&detected, cfg.goal_noise_rate, env.num_scenes(), &cfg.goal_noise, sub_seed(cfg.seed, 4))?
    } else {
        detected
    };
    if cfg.action_accuracy < 1.0 {
        inject_action_noise(&noisy, cfg.action_accuracy, env.num_objects(), sub_seed(cfg.seed, 5))
    } else {
        Ok(noisy)
    }
}

pub fn load_template(name: &str) -> Result<(Template, Environment)> {
    let t = template(name)?;
    let env = t.build()?;
    Ok((t, env))
}

/// Runs the driver on the stream and scores it against the stream's
/// ground-truth arrivals.
pub fn run_and_evaluate(stream: &EventStream, env: &Environment, cfg: &DriverConfig) -> Result<(RunArtifacts, MetricReport)> {
    let art = run(stream, &env.mdp_config(), cfg)?;
    let report = evaluate(&art.forecasts, &stream.ground_truth_goals(), art.regret.as_ref(), false);
    Ok((art, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPair {
    pub rate: f64,
    pub repeat: usize,
    pub hash_log_rho: String,
    pub hash_binary: String,
    pub p_log_rho: f64,
    pub p_binary: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRate {
    pub rate: f64,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub frac_positive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub template: String,
    pub pairs: Vec<SweepPair>,
    pub rates: Vec<SweepRate>,
    /// Every pair consumed byte-identical streams.
    pub paired: bool,
}

impl SweepReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "template,rate,repeat,p_log_rho,p_binary,delta,hash")?;
        for p in &self.pairs {
            writeln!(w, "{},{},{},{},{},{},{}", self.template, p.rate, p.repeat, p.p_log_rho, p.p_binary, p.delta, p.hash_log_rho)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub repeats: usize,
    pub stream: StreamConfig,
    pub driver: DriverConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let driver = DriverConfig { hindsight: None, baselines: false, execution: Execution::Sequential, ..DriverConfig::default() };
        SweepConfig { rates: (1..=9).map(|i| i as f64 / 10.0).collect(), repeats: 5, stream: StreamConfig::default(), driver }
    }
}

/// For each (rate, repeat) corrupts one stream and runs it once with
/// `ln rho` goal values and once with binary goals. Pairs run through
/// `exec`.
pub fn noise_sweep(name: &str, cfg: &SweepConfig, exec: Execution) -> Result<SweepReport> {
    let (t, env) = load_template(name)?;
    let base = make_stream(&t, &env, &StreamConfig { goal_noise_rate: 0.0, ..cfg.stream.clone() })?;
    let jobs: Vec<(usize, f64, usize)> = cfg
        .rates
        .iter()
        .enumerate()
        .flat_map(|(i, &r)| (0..cfg.repeats).map(move |k| (i, r, k)))
        .collect();
    let score = |stream: &EventStream, mode: GoalConfidence| -> Result<(String, f64)> {
        let mut d = cfg.driver.clone();
        d.detector_channel = DetectorChannel::Detected;
        d.planner.goal_confidence = mode;
        let hash = stream.hash();
        let (_, report) = run_and_evaluate(stream, &env, &d)?;
        Ok((hash, report.p_bar.darko.unwrap_or(0.0)))
    };
    let results = exec.map(&jobs, |&(i, rate, k)| -> Result<SweepPair> {
        let seed = sub_seed(cfg.stream.seed, 1000 + (i * 1000 + k) as u64);
        let noisy = inject_goal_noise(&base, rate, env.num_scenes(), &cfg.stream.goal_noise, seed)?;
        let (hash_log_rho, p_log_rho) = score(&noisy.clone(), GoalConfidence::LogRho)?;
        let (hash_binary, p_binary) = score(&noisy, GoalConfidence::Binary)?;
        Ok(SweepPair { rate, repeat: k, hash_log_rho, hash_binary, p_log_rho, p_binary, delta: p_log_rho - p_binary })
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rates = cfg
        .rates
        .iter()
        .map(|&rate| {
            let d: Vec<f64> = pairs.iter().filter(|p| p.rate == rate).map(|p| p.delta).collect();
            let (mean_delta, std_delta) = mean_std(&d);
            let frac_positive = d.iter().filter(|&&x| x > 0.0).count() as f64 / d.len().max(1) as f64;
            SweepRate { rate, mean_delta, std_delta, frac_positive }
        })
        .collect();
    let paired = pairs.iter().all(|p| p.hash_log_rho == p.hash_binary);
    if !paired {
        return Err(DarkoError::Config("paired runs consumed different streams".into()));
    }
    Ok(SweepReport { template: name.to_string(), pairs, rates, paired })
}
