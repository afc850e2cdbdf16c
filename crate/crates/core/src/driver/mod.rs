//! The online loop over an event stream: state tracking, MDP growth, episode
//! segmentation at goal detections, reward updates and per-tick forecasts.

mod baselines;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::exec::Execution;
use crate::forecast::{expected_length, ForecastEngine};
use crate::irl::{
    batch_hindsight_fit, default_horizon, episode_losses, online_step, prepare_episodes, regret_report, Episode,
    Estimator, HindsightConfig, IrlConfig, RegretLedger, RewardParams,
};
use crate::mdp::{apply_at_goal, Action, Cell, FeatureMap, FeatureMode, GrowingMdp, MdpConfig, Neighborhood, StateId, StateVec};
use crate::planner::{Planner, PlannerConfig};
use crate::sim::{Event, EventStream, Marker, ObjectAction};

pub use baselines::{state_features, uniform_baseline, LogisticBaseline, LogisticConfig, NearestLength};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorChannel {
    /// Goal markers of the ground-truth channel, with confidence `truth_rho`.
    GroundTruth,
    #[default]
    Detected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    pub feature_mode: FeatureMode,
    pub detector_channel: DetectorChannel,
    pub truth_rho: f64,
    pub planner: PlannerConfig,
    pub irl: IrlConfig,
    /// Forecast every `forecast_stride` ticks; ground-truth arrival ticks are
    /// always forecast so that evaluation can anchor episodes.
    pub forecast_stride: u64,
    /// Visitation horizon; `10 |S|` when unset.
    pub horizon: Option<usize>,
    pub estimator: Estimator,
    /// Fit the best fixed parameters after the run and report regret.
    pub hindsight: Option<HindsightConfig>,
    pub baselines: bool,
    pub logistic: LogisticConfig,
    pub execution: Execution,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            feature_mode: FeatureMode::Full,
            detector_channel: DetectorChannel::Detected,
            truth_rho: 0.95,
            planner: PlannerConfig::default(),
            irl: IrlConfig::default(),
            forecast_stride: 1,
            horizon: None,
            estimator: Estimator::Exact,
            hindsight: Some(HindsightConfig::default()),
            baselines: true,
            logistic: LogisticConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truth_rho > 0.0 && self.truth_rho <= 1.0) {
            return Err(DarkoError::InvalidConfidence(self.truth_rho));
        }
        if self.forecast_stride == 0 {
            return Err(DarkoError::Config("forecast_stride must be positive".into()));
        }
        if !(self.irl.bound > 0.0) {
            return Err(DarkoError::Config("bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub uniform: Vec<f64>,
    pub logistic: Vec<f64>,
    pub nn_length: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub t: u64,
    /// Goal detections processed before this forecast.
    pub episode: usize,
    pub state: StateId,
    /// Actions taken since the start of the stream.
    pub progress: u64,
    /// Goal posterior summed per scene type; all zero before any goal is known.
    pub scene_posterior: Vec<f64>,
    /// No known goal is reachable from the current state.
    pub fallback: bool,
    pub expected_length: Option<f64>,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Baselines>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub t: usize,
    pub step: u64,
    pub goal: StateId,
    pub scene: usize,
    pub rho: f64,
    pub length: usize,
    pub trimmed_length: usize,
    pub loss: f64,
    pub lambda: f64,
    pub converged: bool,
    pub theta_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub ticks: u64,
    pub malformed_events: usize,
    pub skipped_actions: usize,
    pub goal_detections: usize,
    pub irl_updates: usize,
    pub nonconverged_updates: usize,
    pub empty_episodes: usize,
    pub states: usize,
    pub goals: usize,
    pub transitions: usize,
    pub conflicts: usize,
    pub goal_solves: usize,
    pub global_solves: usize,
    /// Episodes excluded from the regret report because their loss is
    /// infinite under some parameters.
    pub regret_excluded: usize,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub forecasts: Vec<ForecastRecord>,
    pub episodes: Vec<EpisodeRow>,
    /// `thetas[0]` is the initial vector, `thetas[t]` the one after update `t`.
    pub thetas: Vec<Vec<f64>>,
    pub regret: Option<RegretLedger>,
    pub mdp: GrowingMdp,
    pub stats: RunStats,
}

pub const FORECASTS_FILE: &str = "forecasts.jsonl";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const MDP_FILE: &str = "mdp.jsonl";
pub const THETA_FILE: &str = "theta.csv";
pub const REGRET_FILE: &str = "regret.csv";
pub const SUMMARY_FILE: &str = "summary.json";

impl RunArtifacts {
    pub fn write_forecasts<W: Write>(&self, mut w: W) -> Result<()> {
        for f in &self.forecasts {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_ledger<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,step,goal,scene,rho,length,trimmed_length,loss,lambda,converged,theta_norm")?;
        for r in &self.episodes {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t, r.step, r.goal.0, r.scene, r.rho, r.length, r.trimmed_length, r.loss, r.lambda, r.converged, r.theta_norm
            )?;
        }
        Ok(())
    }

    pub fn write_thetas<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.thetas.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..d).map(|i| format!("theta_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, th) in self.thetas.iter().enumerate() {
            let row: Vec<String> = std::iter::once(t.to_string()).chain(th.iter().map(|v| v.to_string())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        self.write_forecasts(&mut buf)?;
        fs::write(dir.join(FORECASTS_FILE), &buf)?;
        buf.clear();
        self.write_ledger(&mut buf)?;
        fs::write(dir.join(LEDGER_FILE), &buf)?;
        buf.clear();
        self.mdp.write_jsonl(&mut buf)?;
        fs::write(dir.join(MDP_FILE), &buf)?;
        buf.clear();
        self.write_thetas(&mut buf)?;
        fs::write(dir.join(THETA_FILE), &buf)?;
        if let Some(r) = &self.regret {
            buf.clear();
            r.write_csv(&mut buf)?;
            fs::write(dir.join(REGRET_FILE), &buf)?;
        }
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&self.stats)?)?;
        Ok(())
    }
}

pub fn read_forecasts(text: &str) -> Result<Vec<ForecastRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DarkoError::Stream { line: i + 1, reason: e.to_string() }))
        .collect()
}

/// Unit steps from `from` to `to`: axis by axis for the 6-neighbourhood,
/// diagonally where possible for the 26-neighbourhood.
fn unit_steps(from: Cell, to: Cell, nb: Neighborhood) -> Vec<Cell> {
    let mut steps = Vec::new();
    let mut rest = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    while rest != [0, 0, 0] {
        let mut d = [0; 3];
        match nb {
            Neighborhood::Six => {
                let i = rest.iter().position(|&r| r != 0).expect("non-zero remainder");
                d[i] = rest[i].signum();
            }
            Neighborhood::TwentySix => {
                for i in 0..3 {
                    d[i] = rest[i].signum();
                }
            }
        }
        for i in 0..3 {
            rest[i] -= d[i];
        }
        steps.push(d);
    }
    steps
}

/// Incremental form of the run loop; feed ticks in order with [`Driver::tick`].
pub struct Driver {
    cfg: DriverConfig,
    mdp: GrowingMdp,
    engine: ForecastEngine,
    params: RewardParams,
    state: Option<StateId>,
    episode_start: Option<StateId>,
    xi: Vec<(StateId, Action)>,
    progress: u64,
    detections: usize,
    irl_calls: usize,
    used: Vec<(Episode, Vec<f64>)>,
    logistic: LogisticBaseline,
    nearest: NearestLength,
    out: RunArtifacts,
}

impl Driver {
    pub fn new(mdp_config: MdpConfig, cfg: DriverConfig) -> Result<Self> {
        cfg.validate()?;
        let mdp = GrowingMdp::new(mdp_config.clone())?;
        let fm = FeatureMap::new(&mdp_config, cfg.feature_mode);
        let dim = fm.dim();
        let planner = Planner::new(cfg.planner.clone(), fm);
        let params = RewardParams::zeros(dim, cfg.irl.bound);
        let engine = ForecastEngine::new(planner, params.theta.clone(), cfg.execution);
        let xdim = 4 + mdp_config.num_scenes + mdp_config.num_objects;
        let logistic = LogisticBaseline::new(cfg.logistic.clone(), mdp_config.num_scenes, xdim);
        let out = RunArtifacts {
            forecasts: Vec::new(),
            episodes: Vec::new(),
            thetas: vec![params.theta.clone()],
            regret: None,
            mdp: GrowingMdp::new(mdp_config)?,
            stats: RunStats::default(),
        };
        Ok(Driver {
            cfg,
            mdp,
            engine,
            params,
            state: None,
            episode_start: None,
            xi: Vec::new(),
            progress: 0,
            detections: 0,
            irl_calls: 0,
            used: Vec::new(),
            logistic,
            nearest: NearestLength::default(),
            out,
        })
    }

    pub fn mdp(&self) -> &GrowingMdp {
        &self.mdp
    }

    pub fn theta(&self) -> &[f64] {
        &self.params.theta
    }

    fn take(&mut self, a: Action, next: StateVec) -> Result<()> {
        let s = self.state.expect("state exists before actions");
        let n = self.mdp.intern_state(next)?;
        self.mdp.record_transition(s, a, n)?;
        self.xi.push((s, a));
        self.state = Some(n);
        self.progress += 1;
        Ok(())
    }

    fn on_position(&mut self, p: Cell) -> Result<()> {
        if !self.mdp.config().in_bounds(p) {
            self.out.stats.malformed_events += 1;
            return Ok(());
        }
        let Some(s) = self.state else {
            let id = self.mdp.intern_state(StateVec::at(p))?;
            self.state = Some(id);
            self.episode_start = Some(id);
            return Ok(());
        };
        let cur = self.mdp.state(s).clone();
        let mut sv = cur.clone();
        for d in unit_steps(cur.position, p, self.mdp.config().neighborhood) {
            let next = sv.moved(d);
            self.take(Action::Move(d), next.clone())?;
            sv = next;
        }
        Ok(())
    }

    fn on_action(&mut self, action: ObjectAction, object: usize) -> Result<()> {
        let Some(s) = self.state else {
            self.out.stats.skipped_actions += 1;
            return Ok(());
        };
        if object >= self.mdp.config().num_objects {
            self.out.stats.malformed_events += 1;
            return Ok(());
        }
        let cur = self.mdp.state(s).clone();
        let held = cur.held.contains(object);
        let (a, next) = match action {
            ObjectAction::Acquire if !held => (Action::Acquire(object), StateVec { held: cur.held.with(object), ..cur }),
            ObjectAction::Release if held => (Action::Release(object), StateVec { held: cur.held.without(object), ..cur }),
            _ => {
                self.out.stats.skipped_actions += 1;
                return Ok(());
            }
        };
        self.take(a, next)
    }

    fn on_goal(&mut self, step: u64, scene: usize, rho: f64) -> Result<()> {
        if scene >= self.mdp.config().num_scenes || !(rho > 0.0 && rho <= 1.0) {
            self.out.stats.malformed_events += 1;
            return Ok(());
        }
        let Some(s) = self.state else {
            self.out.stats.malformed_events += 1;
            return Ok(());
        };
        self.detections += 1;
        self.mdp.add_goal(s, scene, rho)?;
        let raw = Episode { steps: std::mem::take(&mut self.xi), goal: s };
        if self.cfg.baselines && !raw.steps.is_empty() {
            let cfg = self.mdp.config().clone();
            let feats: Vec<Vec<f64>> = raw.steps.iter().map(|(st, _)| state_features(&cfg, self.mdp.state(*st))).collect();
            self.logistic.add_episode(feats.iter().cloned(), scene);
            self.nearest.add_episode(feats);
        }
        let trimmed = raw.trimmed(|x| x != s && self.mdp.is_goal(x));
        match trimmed {
            Some(ep) => {
                self.irl_calls += 1;
                let t = self.irl_calls;
                let before = self.params.theta.clone();
                let res = online_step(self.engine.planner(), &self.cfg.irl, &self.params, &self.mdp, &ep, t)?;
                if res.converged {
                    self.out.stats.irl_updates += 1;
                } else {
                    self.out.stats.nonconverged_updates += 1;
                }
                self.params = res.params;
                self.engine.set_theta(&self.params.theta);
                self.out.thetas.push(self.params.theta.clone());
                self.out.episodes.push(EpisodeRow {
                    t,
                    step,
                    goal: s,
                    scene,
                    rho,
                    length: raw.steps.len(),
                    trimmed_length: ep.len(),
                    loss: res.loss,
                    lambda: res.lambda,
                    converged: res.converged,
                    theta_norm: self.params.norm(),
                });
                self.used.push((ep, before));
            }
            None => self.out.stats.empty_episodes += 1,
        }
        let next = apply_at_goal(self.mdp.state(s), scene);
        let n = self.mdp.intern_state(next)?;
        self.mdp.record_transition(s, Action::AtGoal, n)?;
        self.state = Some(n);
        self.episode_start = Some(n);
        Ok(())
    }

    fn forecast(&mut self, t: u64) -> Result<()> {
        let (Some(st), Some(s0)) = (self.state, self.episode_start) else {
            return Ok(());
        };
        let k = self.mdp.config().num_scenes;
        let post = self.engine.posterior(&self.mdp, s0, st)?;
        let mut scene_posterior = vec![0.0; k];
        for (scene, p) in post.by_scene(&self.mdp) {
            scene_posterior[scene] = p;
        }
        let (expected, truncated) = if self.mdp.goals().is_empty() {
            (None, false)
        } else {
            let horizon = self.cfg.horizon.unwrap_or_else(|| default_horizon(0, self.mdp.len()));
            match self.engine.visitation(&self.mdp, st, horizon, self.cfg.estimator) {
                Ok(d) => (Some(expected_length(&d)), d.truncated()),
                Err(DarkoError::NoGoalReachable(_)) => (None, false),
                Err(e) => return Err(e),
            }
        };
        let baselines = if self.cfg.baselines {
            let cfg = self.mdp.config();
            let known = self.mdp.goal_scenes();
            let x = state_features(cfg, self.mdp.state(st));
            Some(Baselines {
                uniform: uniform_baseline(k, &known),
                logistic: self.logistic.predict(&x, &known),
                nn_length: self.nearest.predict(x, self.xi.len()),
            })
        } else {
            None
        };
        self.out.forecasts.push(ForecastRecord {
            t,
            episode: self.detections,
            state: st,
            progress: self.progress,
            scene_posterior,
            fallback: post.fallback,
            expected_length: expected,
            truncated,
            baselines,
        });
        Ok(())
    }

    /// Processes every event of tick `t` (events must be in stream order):
    /// moves and object actions, then the forecast, then goal detections.
    pub fn tick(&mut self, t: u64, events: &[Event]) -> Result<()> {
        self.out.stats.ticks += 1;
        let mut goals = Vec::new();
        let mut truth_arrival = false;
        for e in events {
            match *e {
                Event::Position { position, .. } => self.on_position(position)?,
                Event::ActionDetected { action, object, .. } => self.on_action(action, object)?,
                Event::GoalDetected { scene, rho, .. } => {
                    if self.cfg.detector_channel == DetectorChannel::Detected {
                        goals.push((scene, rho));
                    }
                }
                Event::GroundTruth { marker: Marker::Goal { scene }, .. } => {
                    truth_arrival = true;
                    if self.cfg.detector_channel == DetectorChannel::GroundTruth {
                        goals.push((scene, self.cfg.truth_rho));
                    }
                }
                Event::GroundTruth { .. } => {}
            }
        }
        if t % self.cfg.forecast_stride == 0 || truth_arrival {
            self.forecast(t)?;
        }
        for (scene, rho) in goals {
            self.on_goal(t, scene, rho)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunArtifacts> {
        let planner = self.engine.planner().clone();
        if let Some(hcfg) = self.cfg.hindsight.clone() {
            self.out.regret = Some(self.regret(&planner, &hcfg)?);
        }
        let s = &mut self.out.stats;
        s.goal_detections = self.detections;
        s.states = self.mdp.len();
        s.goals = self.mdp.goals().len();
        s.transitions = self.mdp.num_transitions();
        s.conflicts = self.mdp.conflicts();
        s.goal_solves = self.engine.stats.goal_solves;
        s.global_solves = self.engine.stats.global_solves;
        self.out.mdp = self.mdp;
        Ok(self.out)
    }

    /// Online losses of each update's parameters against the losses of the
    /// best fixed parameters, all evaluated on the final MDP.
    fn regret(&mut self, planner: &Planner, hcfg: &HindsightConfig) -> Result<RegretLedger> {
        let episodes: Vec<Episode> = self.used.iter().map(|(e, _)| e.clone()).collect();
        let prepared = prepare_episodes(&episodes, &self.mdp);
        let mut online = Vec::new();
        let mut kept = Vec::new();
        let mut thetas = Vec::new();
        for (ep, (_, theta)) in prepared.into_iter().zip(&self.used) {
            let Some(ep) = ep else {
                self.out.stats.regret_excluded += 1;
                continue;
            };
            match episode_losses(planner, theta, &self.mdp, std::slice::from_ref(&ep))? {
                Some(l) if l[0].is_finite() => {
                    online.push(l[0]);
                    kept.push(ep);
                    thetas.push(theta.clone());
                }
                _ => self.out.stats.regret_excluded += 1,
            }
        }
        if kept.is_empty() {
            return Ok(RegretLedger::default());
        }
        let mut starts = thetas.clone();
        starts.push(self.params.theta.clone());
        let fit = batch_hindsight_fit(planner, &self.mdp, &kept, self.cfg.irl.bound, &starts, hcfg)?;
        let hindsight = episode_losses(planner, &fit.theta, &self.mdp, &kept)?
            .ok_or_else(|| DarkoError::Config("hindsight parameters failed to converge".into()))?;
        Ok(regret_report(&online, &hindsight, self.cfg.irl.bound, planner.features.dim()))
    }
}

/// Replays `stream` through the online loop.
pub fn run(stream: &EventStream, mdp_config: &MdpConfig, cfg: &DriverConfig) -> Result<RunArtifacts> {
    let mut driver = Driver::new(mdp_config.clone(), cfg.clone())?;
    let events = &stream.events;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].step();
        let j = i + events[i..].iter().take_while(|e| e.step() == t).count();
        driver.tick(t, &events[i..j])?;
        i = j;
    }
    driver.finish()
}
