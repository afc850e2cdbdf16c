//! Online projected-gradient MaxEnt IRL, batch hindsight fitting and regret
//! bookkeeping.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::exec::Execution;
use crate::mdp::{Action, FeatureMap, GrowingMdp, StateId};
use crate::planner::{policy_from, Graph, Planner, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub theta: Vec<f64>,
    pub bound: f64,
}

impl RewardParams {
    pub fn zeros(dim: usize, bound: f64) -> Self {
        RewardParams { theta: vec![0.0; dim], bound }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.theta)
    }

    pub fn projected(mut self) -> Self {
        project(&mut self.theta, self.bound);
        self
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean projection onto the ball of radius `bound`.
pub fn project(theta: &mut [f64], bound: f64) {
    let n = norm(theta);
    if n > bound {
        let k = bound / n;
        theta.iter_mut().for_each(|t| *t *= k);
    }
}

/// Observed state-action pairs of one goal-terminated segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<(StateId, Action)>,
    pub goal: StateId,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> StateId {
        self.steps.first().map_or(self.goal, |s| s.0)
    }

    /// Drops everything up to and including the last step taken from a
    /// goal state, which the absorbing-goal model cannot explain. Returns
    /// `None` when nothing is left.
    pub fn trimmed(&self, is_goal: impl Fn(StateId) -> bool) -> Option<Episode> {
        let cut = self.steps.iter().rposition(|&(s, _)| is_goal(s)).map_or(0, |i| i + 1);
        let steps: Vec<_> = self.steps[cut..].iter().copied().filter(|(_, a)| *a != Action::AtGoal).collect();
        if steps.is_empty() {
            None
        } else {
            Some(Episode { steps, goal: self.goal })
        }
    }
}

pub fn empirical_feature_sum(ep: &Episode, mdp: &GrowingMdp, fm: &FeatureMap) -> (Vec<f64>, usize) {
    let mut acc = vec![0.0; fm.dim()];
    let mut n = 0;
    for &(s, a) in &ep.steps {
        if a == Action::AtGoal {
            continue;
        }
        fm.add_scaled(&mut acc, 1.0, mdp.state(s), &a);
        n += 1;
    }
    (acc, n)
}

/// Mean per-step features of the observed episode.
pub fn empirical_feature_mean(ep: &Episode, mdp: &GrowingMdp, fm: &FeatureMap) -> Result<Vec<f64>> {
    let (mut acc, n) = empirical_feature_sum(ep, mdp, fm);
    if n == 0 {
        return Err(DarkoError::EmptyEpisode);
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    MonteCarlo { rollouts: usize, seed: u64 },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Exact
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExpectation {
    /// Expected feature sum over the trajectory.
    pub sum: Vec<f64>,
    /// Expected number of actions.
    pub expected_steps: f64,
    /// Mass not absorbed within the horizon.
    pub residual: f64,
}

impl FeatureExpectation {
    /// Per-step mean, normalised by the expected trajectory length.
    pub fn mean(&self) -> Vec<f64> {
        if self.expected_steps > 0.0 {
            self.sum.iter().map(|v| v / self.expected_steps).collect()
        } else {
            vec![0.0; self.sum.len()]
        }
    }
}

/// Expected features of trajectories drawn from `policy` starting at `start`.
/// A start that is already a goal yields zeros.
pub fn expected_features(
    policy: &Policy,
    mdp: &GrowingMdp,
    fm: &FeatureMap,
    start: StateId,
    horizon: usize,
    estimator: Estimator,
    exec: Execution,
) -> Result<FeatureExpectation> {
    let d = fm.dim();
    if policy.is_goal(start.0) {
        return Ok(FeatureExpectation { sum: vec![0.0; d], expected_steps: 0.0, residual: 0.0 });
    }
    if !policy.acts(start.0) {
        return Err(DarkoError::NoGoalReachable(start.0));
    }
    let graph: &Arc<Graph> = policy.graph();
    match estimator {
        Estimator::Exact => {
            let mut sum = vec![0.0; d];
            let prop = policy.propagate(start.0, horizon, |e, w| {
                fm.add_scaled(&mut sum, w, mdp.state(StateId(graph.source(e))), &graph.action(e));
            });
            Ok(FeatureExpectation { sum, expected_steps: prop.expected_steps, residual: prop.residual })
        }
        Estimator::MonteCarlo { rollouts, seed } => {
            let per = exec.map_range(rollouts, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let path = policy.sample_path(start.0, horizon, &mut rng);
                let mut sum = vec![0.0; d];
                for &e in &path {
                    fm.add_scaled(&mut sum, 1.0, mdp.state(StateId(graph.source(e))), &graph.action(e));
                }
                let end = path.last().map_or(start.0, |&e| graph.target(e));
                (sum, path.len(), !policy.is_goal(end))
            });
            let mut sum = vec![0.0; d];
            let mut steps = 0usize;
            let mut unfinished = 0usize;
            for (s, n, open) in per {
                sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                steps += n;
                unfinished += open as usize;
            }
            let k = rollouts.max(1) as f64;
            sum.iter_mut().for_each(|v| *v /= k);
            Ok(FeatureExpectation { sum, expected_steps: steps as f64 / k, residual: unfinished as f64 / k })
        }
    }
}

/// Mean per-step features under the policy, normalised by expected length.
pub fn expected_feature_mean(
    policy: &Policy,
    mdp: &GrowingMdp,
    fm: &FeatureMap,
    start: StateId,
    horizon: usize,
    estimator: Estimator,
) -> Result<Vec<f64>> {
    Ok(expected_features(policy, mdp, fm, start, horizon, estimator, Execution::Sequential)?.mean())
}

/// `proj(theta + lambda (f_emp - f_exp))`.
pub fn online_update(params: &RewardParams, f_emp: &[f64], f_exp: &[f64], lambda: f64) -> Result<RewardParams> {
    let d = params.theta.len();
    if f_emp.len() != d || f_exp.len() != d {
        return Err(DarkoError::DimensionMismatch { expected: d, got: f_emp.len().min(f_exp.len()) });
    }
    let theta = params.theta.iter().zip(f_emp.iter().zip(f_exp)).map(|(t, (e, x))| t + lambda * (e - x)).collect();
    Ok(RewardParams { theta, bound: params.bound }.projected())
}

/// Step size `B / (2 sqrt(2 t d))` for episode `t >= 1`.
pub fn lambda_schedule(t: usize, bound: f64, dim: usize) -> f64 {
    bound / (2.0 * (2.0 * t.max(1) as f64 * dim as f64).sqrt())
}

pub fn regret_bound(t: usize, bound: f64, dim: usize) -> f64 {
    2.0 * bound * (2.0 * t as f64 * dim as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    pub value: f64,
    /// First step whose action has zero probability under the policy.
    pub impossible_step: Option<usize>,
}

/// `-(1/|xi|) sum_i log pi(a_i | s_i)`.
pub fn episode_nll(ep: &Episode, policy: &Policy) -> Result<Nll> {
    let steps: Vec<_> = ep.steps.iter().filter(|(_, a)| *a != Action::AtGoal).collect();
    if steps.is_empty() {
        return Err(DarkoError::EmptyEpisode);
    }
    let mut total = 0.0;
    for (i, &&(s, a)) in steps.iter().enumerate() {
        let p = if policy.acts(s.0) { policy.prob(s, a) } else { 0.0 };
        if p <= 0.0 {
            return Ok(Nll { value: f64::INFINITY, impossible_step: Some(i) });
        }
        total -= p.ln();
    }
    Ok(Nll { value: total / steps.len() as f64, impossible_step: None })
}

/// Forecast horizon used for feature expectations: `max(4 |xi|, 10 |S|)`.
pub fn default_horizon(episode_len: usize, num_states: usize) -> usize {
    (4 * episode_len).max(10 * num_states).max(1)
}

/// Exact gradient of `episode_nll` with respect to theta, including the
/// dependence of the reward shift on theta.
pub fn episode_gradient(
    ep: &Episode,
    planner: &Planner,
    mdp: &GrowingMdp,
    theta: &[f64],
    policy: &Policy,
    horizon: usize,
) -> Result<Vec<f64>> {
    let fm = &planner.features;
    let (emp, n) = empirical_feature_sum(ep, mdp, fm);
    if n == 0 {
        return Err(DarkoError::EmptyEpisode);
    }
    let exp = expected_features(policy, mdp, fm, ep.start(), horizon, Estimator::Exact, Execution::Sequential)?;
    let fmax = fm.max_features(theta);
    let n = n as f64;
    let k = (n - exp.expected_steps) / n;
    Ok((0..fm.dim()).map(|i| (exp.sum[i] - emp[i]) / n + k * fmax[i]).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Difference of per-step feature means, expected side normalised by
    /// expected length.
    MeanMatching,
    /// Exact negative gradient of the per-step episode loss.
    #[default]
    ExactGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Schedule,
    Constant(f64),
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Schedule
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig {
    pub bound: f64,
    pub step_size: StepSize,
    pub update: UpdateRule,
    pub estimator: Estimator,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig { bound: 10.0, step_size: StepSize::Schedule, update: UpdateRule::default(), estimator: Estimator::Exact }
    }
}

#[derive(Clone, Debug)]
pub struct OnlineStep {
    pub params: RewardParams,
    /// Loss of the episode under the pre-update parameters.
    pub loss: f64,
    pub lambda: f64,
    pub converged: bool,
}

/// One online update on episode number `t` (1-based). When planning fails to
/// converge the parameters are returned unchanged with `converged = false`.
pub fn online_step(
    planner: &Planner,
    cfg: &IrlConfig,
    params: &RewardParams,
    mdp: &GrowingMdp,
    ep: &Episode,
    t: usize,
) -> Result<OnlineStep> {
    let fm = &planner.features;
    let lambda = match cfg.step_size {
        StepSize::Schedule => lambda_schedule(t, cfg.bound, fm.dim()),
        StepSize::Constant(l) => l,
    };
    let values = planner.solve(&params.theta, mdp)?;
    if !values.converged {
        return Ok(OnlineStep { params: params.clone(), loss: f64::NAN, lambda, converged: false });
    }
    let policy = policy_from(&values);
    let loss = episode_nll(ep, &policy)?.value;
    let horizon = default_horizon(ep.len(), mdp.len());
    let new = match cfg.update {
        UpdateRule::MeanMatching => {
            let emp = empirical_feature_mean(ep, mdp, fm)?;
            let exp = expected_features(&policy, mdp, fm, ep.start(), horizon, cfg.estimator, Execution::Sequential)?;
            online_update(params, &emp, &exp.mean(), lambda)?
        }
        UpdateRule::ExactGradient => {
            let g = episode_gradient(ep, planner, mdp, &params.theta, &policy, horizon)?;
            let zeros = vec![0.0; g.len()];
            online_update(params, &zeros, &g, lambda)?
        }
    };
    Ok(OnlineStep { params: new, loss, lambda, converged: true })
}

/// Episodes re-expressed against the goal set of `mdp`; entries that are
/// left empty by trimming become `None`.
pub fn prepare_episodes(episodes: &[Episode], mdp: &GrowingMdp) -> Vec<Option<Episode>> {
    episodes.iter().map(|ep| ep.trimmed(|s| s != ep.goal && mdp.is_goal(s))).collect()
}

/// Per-episode losses under a fixed theta on `mdp`; `None` if planning fails.
pub fn episode_losses(planner: &Planner, theta: &[f64], mdp: &GrowingMdp, episodes: &[Episode]) -> Result<Option<Vec<f64>>> {
    let values = planner.solve(theta, mdp)?;
    if !values.converged {
        return Ok(None);
    }
    let policy = policy_from(&values);
    let mut out = Vec::with_capacity(episodes.len());
    for ep in episodes {
        out.push(episode_nll(ep, &policy)?.value);
    }
    Ok(Some(out))
}

fn batch_loss_grad(
    planner: &Planner,
    theta: &[f64],
    mdp: &GrowingMdp,
    episodes: &[Episode],
    want_grad: bool,
) -> Result<Option<(f64, Vec<f64>)>> {
    let values = planner.solve(theta, mdp)?;
    if !values.converged {
        return Ok(None);
    }
    let policy = policy_from(&values);
    let d = planner.features.dim();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    for ep in episodes {
        loss += episode_nll(ep, &policy)?.value;
        if want_grad {
            let g = episode_gradient(ep, planner, mdp, theta, &policy, default_horizon(ep.len(), mdp.len()))?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    let k = episodes.len().max(1) as f64;
    grad.iter_mut().for_each(|v| *v /= k);
    Ok(Some((loss / k, grad)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HindsightConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for HindsightConfig {
    fn default() -> Self {
        HindsightConfig { max_iters: 200, tol: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct HindsightFit {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent with backtracking on the mean episode loss,
/// started from the best of `starts`. Returns the best iterate found.
pub fn batch_hindsight_fit(
    planner: &Planner,
    mdp: &GrowingMdp,
    episodes: &[Episode],
    bound: f64,
    starts: &[Vec<f64>],
    cfg: &HindsightConfig,
) -> Result<HindsightFit> {
    let d = planner.features.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let zero = vec![0.0; d];
    for start in starts.iter().chain(std::iter::once(&zero)) {
        let mut th = start.clone();
        project(&mut th, bound);
        if let Some((l, _)) = batch_loss_grad(planner, &th, mdp, episodes, false)? {
            if l.is_finite() && best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, th));
            }
        }
    }
    let Some((_, mut theta)) = best else {
        return Ok(HindsightFit { theta: zero, loss: f64::INFINITY, iterations: 0, converged: false });
    };
    let Some((mut loss, mut grad)) = batch_loss_grad(planner, &theta, mdp, episodes, true)? else {
        return Ok(HindsightFit { theta, loss: f64::INFINITY, iterations: 0, converged: false });
    };
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            project(&mut cand, bound);
            let decrease: f64 = grad.iter().zip(theta.iter().zip(&cand)).map(|(g, (t, c))| g * (t - c)).sum();
            if let Some((l, _)) = batch_loss_grad(planner, &cand, mdp, episodes, false)? {
                if l.is_finite() && l <= loss - 1e-4 * decrease {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else {
            converged = true;
            break;
        };
        let moved = norm(&theta.iter().zip(&cand).map(|(a, b)| a - b).collect::<Vec<_>>());
        theta = cand;
        match batch_loss_grad(planner, &theta, mdp, episodes, true)? {
            Some((l, g)) => {
                loss = l;
                grad = g;
            }
            None => break,
        }
        if moved / step < cfg.tol {
            converged = true;
            break;
        }
        step = (step * 2.0).min(64.0);
    }
    Ok(HindsightFit { theta, loss, iterations, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub t: usize,
    pub loss_online: f64,
    pub loss_hindsight: f64,
    pub regret: f64,
    pub avg_regret: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<RegretRow>,
}

impl RegretLedger {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,loss_online,loss_hindsight,regret,avg_regret,bound")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.t, r.loss_online, r.loss_hindsight, r.regret, r.avg_regret, r.bound)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || DarkoError::Stream { line: i + 1, reason: "bad ledger row".into() };
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad());
            rows.push(RegretRow {
                t: f[0].trim().parse().map_err(|_| bad())?,
                loss_online: num(1)?,
                loss_hindsight: num(2)?,
                regret: num(3)?,
                avg_regret: num(4)?,
                bound: num(5)?,
            });
        }
        Ok(RegretLedger { rows })
    }
}

/// Cumulative regret of the online losses against the hindsight losses.
pub fn regret_report(online: &[f64], hindsight: &[f64], bound: f64, dim: usize) -> RegretLedger {
    let mut rows = Vec::with_capacity(online.len());
    let mut cum = 0.0;
    for (i, (&lo, &lh)) in online.iter().zip(hindsight).enumerate() {
        let t = i + 1;
        cum += lo - lh;
        rows.push(RegretRow {
            t,
            loss_online: lo,
            loss_hindsight: lh,
            regret: cum,
            avg_regret: cum / t as f64,
            bound: regret_bound(t, bound, dim),
        });
    }
    RegretLedger { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_ball() {
        let p = online_update(&RewardParams::zeros(2, 1.0), &[3.0, 4.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((p.theta[0] - 0.6).abs() < 1e-12 && (p.theta[1] - 0.8).abs() < 1e-12);
        let q = online_update(&RewardParams::zeros(2, 10.0), &[0.3, 0.4], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(q.theta, vec![0.3, 0.4]);
    }

    #[test]
    fn equal_means_leave_theta() {
        let p = RewardParams { theta: vec![0.1, -0.2, 0.3], bound: 5.0 };
        let q = online_update(&p, &[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5], 0.7).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn schedule_value() {
        assert!((lambda_schedule(1, 10.0, 8) - 1.25).abs() < 1e-12);
        assert!((regret_bound(1, 10.0, 8) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn regret_accumulates() {
        let r = regret_report(&[2.0, 1.5, 1.0], &[1.0, 1.0, 1.0], 1.0, 1);
        let regrets: Vec<f64> = r.rows.iter().map(|r| r.regret).collect();
        assert_eq!(regrets, vec![1.0, 1.5, 1.5]);
        assert!((r.rows[2].avg_regret - 0.5).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(RegretLedger::read_csv(&String::from_utf8(buf).unwrap()).unwrap(), r);
    }

    #[test]
    fn trimming_drops_goal_prefix() {
        let ep = Episode {
            steps: vec![(StateId(0), Action::Move([1, 0, 0])), (StateId(1), Action::Move([1, 0, 0])), (StateId(2), Action::Move([1, 0, 0]))],
            goal: StateId(3),
        };
        let t = ep.trimmed(|s| s == StateId(1)).unwrap();
        assert_eq!(t.steps, vec![(StateId(2), Action::Move([1, 0, 0]))]);
        assert!(ep.trimmed(|s| s == StateId(2)).is_none());
        assert_eq!(ep.trimmed(|_| false).unwrap(), ep);
    }
}
