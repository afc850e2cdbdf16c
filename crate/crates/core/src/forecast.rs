//! Forecasts from the current policy: future state and action visitation
//! counts, subspace queries, expected remaining length and the goal
//! posterior.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DarkoError, Result};
use crate::exec::Execution;
use crate::irl::Estimator;
use crate::mdp::{Action, GrowingMdp, StateId, StateVec};
use crate::planner::{policy_from, Graph, Planner, Policy};

/// Residual mass above which a visitation result is flagged as truncated.
pub const TRUNCATION_TOLERANCE: f64 = 1e-3;

/// Expected visit counts over the next `horizon` steps, not counting the
/// conditioning state at the current time.
#[derive(Clone, Debug, PartialEq)]
pub struct Visitation {
    counts: Vec<f64>,
    pub horizon: usize,
    pub residual: f64,
}

impl Visitation {
    pub fn count(&self, s: StateId) -> f64 {
        self.counts.get(s.0).copied().unwrap_or(0.0)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn truncated(&self) -> bool {
        self.residual > TRUNCATION_TOLERANCE
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(i, &c)| (StateId(i), c))
    }
}

pub fn state_visitation(
    policy: &Policy,
    start: StateId,
    horizon: usize,
    estimator: Estimator,
    exec: Execution,
) -> Result<Visitation> {
    let graph: &Arc<Graph> = policy.graph();
    let n = graph.len();
    if policy.is_goal(start.0) {
        return Ok(Visitation { counts: vec![0.0; n], horizon, residual: 0.0 });
    }
    if !policy.acts(start.0) {
        return Err(DarkoError::NoGoalReachable(start.0));
    }
    match estimator {
        Estimator::Exact => {
            let mut counts = vec![0.0; n];
            let prop = policy.propagate(start.0, horizon, |e, w| counts[graph.target(e)] += w);
            Ok(Visitation { counts, horizon, residual: prop.residual })
        }
        Estimator::MonteCarlo { rollouts, seed } => {
            let paths = exec.map_range(rollouts, |i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                policy.sample_path(start.0, horizon, &mut rng)
            });
            let mut counts = vec![0.0; n];
            let mut open = 0usize;
            for p in &paths {
                for &e in p {
                    counts[graph.target(e)] += 1.0;
                }
                let end = p.last().map_or(start.0, |&e| graph.target(e));
                open += !policy.is_goal(end) as usize;
            }
            let k = rollouts.max(1) as f64;
            counts.iter_mut().for_each(|c| *c /= k);
            Ok(Visitation { counts, horizon, residual: open as f64 / k })
        }
    }
}

/// Expected number of remaining steps: the total visit mass.
pub fn expected_length(d: &Visitation) -> f64 {
    d.counts.iter().sum()
}

pub fn subspace_visitation(d: &Visitation, mdp: &GrowingMdp, pred: impl Fn(&StateVec) -> bool) -> f64 {
    d.nonzero().filter(|(s, _)| pred(mdp.state(*s))).map(|(_, c)| c).sum()
}

pub fn joint_subspace_visitation(
    d: &Visitation,
    mdp: &GrowingMdp,
    a: impl Fn(&StateVec) -> bool,
    b: impl Fn(&StateVec) -> bool,
) -> f64 {
    subspace_visitation(d, mdp, |s| a(s) && b(s))
}

/// `D(s, a) = pi(a|s) D(s)`, stored per policy edge.
#[derive(Clone, Debug)]
pub struct ActionVisitation {
    graph: Arc<Graph>,
    counts: Vec<f64>,
}

impl ActionVisitation {
    pub fn count(&self, s: StateId, a: Action) -> f64 {
        self.graph.edge(s.0, a).map_or(0.0, |e| self.counts[e])
    }

    pub fn state_total(&self, s: StateId) -> f64 {
        self.graph.edges(s.0).map(|e| self.counts[e]).sum()
    }
}

pub fn action_state_visitation(policy: &Policy, d: &Visitation) -> ActionVisitation {
    let graph = policy.graph().clone();
    let counts = (0..graph.num_edges()).map(|e| policy.edge_prob(e) * d.count(StateId(graph.source(e)))).collect();
    ActionVisitation { graph, counts }
}

pub fn action_subspace_visitation(
    dsa: &ActionVisitation,
    mdp: &GrowingMdp,
    states: impl Fn(&StateVec) -> bool,
    actions: impl Fn(&Action) -> bool,
) -> f64 {
    let g = &dsa.graph;
    (0..g.num_edges())
        .filter(|&e| dsa.counts[e] > 0.0 && actions(&g.action(e)) && states(mdp.state(StateId(g.source(e)))))
        .map(|e| dsa.counts[e])
        .sum()
}

/// Prior over known goals: add-one smoothed detection counts, weighted by
/// `exp(goal value)` so that low-confidence goals count for less.
pub fn goal_prior(planner: &Planner, mdp: &GrowingMdp) -> Result<BTreeMap<StateId, f64>> {
    let mut w = BTreeMap::new();
    let mut total = 0.0;
    for (&g, rec) in mdp.goals() {
        let x = (rec.detections as f64 + 1.0) * planner.goal_value(rec.rho)?.exp();
        total += x;
        w.insert(g, x);
    }
    w.values_mut().for_each(|x| *x /= total);
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalPosterior {
    pub probs: BTreeMap<StateId, f64>,
    /// No goal was reachable from the current state; the result is uniform.
    pub fallback: bool,
}

impl GoalPosterior {
    pub fn by_scene(&self, mdp: &GrowingMdp) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for (g, &p) in &self.probs {
            *out.entry(mdp.goals()[g].scene).or_insert(0.0) += p;
        }
        out
    }
}

/// `P(g | s_0 -> s_t) ∝ P(g) exp(V_{s_t}(g) - V_{s_0}(g))`, with `V_s(g)` the
/// soft value of reaching `g` as the only goal. When no goal is reachable from
/// `s_t` the result is uniform over goals reachable from `s_0`, or over all
/// goals if none are.
pub fn posterior_from_values(
    prior: &BTreeMap<StateId, f64>,
    v0: impl Fn(StateId) -> f64,
    vt: impl Fn(StateId) -> f64,
) -> GoalPosterior {
    let mut logs = Vec::with_capacity(prior.len());
    for (&g, &p) in prior {
        let (a, b) = (vt(g), v0(g));
        let l = if p > 0.0 && a.is_finite() && b.is_finite() { p.ln() + a - b } else { f64::NEG_INFINITY };
        logs.push((g, l));
    }
    let m = logs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        let reachable: Vec<StateId> = prior.keys().copied().filter(|&g| v0(g).is_finite()).collect();
        let support = if reachable.is_empty() { prior.keys().copied().collect() } else { reachable };
        let z = support.len() as f64;
        let probs = prior.keys().map(|&g| (g, if support.contains(&g) { 1.0 / z } else { 0.0 })).collect();
        return GoalPosterior { probs, fallback: true };
    }
    let z: f64 = logs.iter().map(|x| (x.1 - m).exp()).sum();
    let probs = logs.into_iter().map(|(g, l)| (g, (l - m).exp() / z)).collect();
    GoalPosterior { probs, fallback: false }
}

/// Uncached goal posterior: one goal-conditioned solve per known goal.
pub fn goal_posterior(
    planner: &Planner,
    theta: &[f64],
    mdp: &GrowingMdp,
    s0: StateId,
    st: StateId,
    exec: Execution,
) -> Result<GoalPosterior> {
    if mdp.goals().is_empty() {
        return Ok(GoalPosterior { probs: BTreeMap::new(), fallback: true });
    }
    let prior = goal_prior(planner, mdp)?;
    let graph = Arc::new(Graph::from_mdp(mdp));
    let rewards = planner.edge_rewards(&graph, mdp, theta);
    let goals: Vec<StateId> = mdp.goals().keys().copied().collect();
    let tables = exec.map(&goals, |&g| planner.solve_goal_on(graph.clone(), &rewards, mdp, g));
    let mut by_goal = BTreeMap::new();
    for (g, t) in goals.into_iter().zip(tables) {
        let t = t?;
        by_goal.insert(g, (t.value(s0), t.value(st)));
    }
    Ok(posterior_from_values(&prior, |g| by_goal[&g].0, |g| by_goal[&g].1))
}

#[derive(Clone, Debug)]
struct Cached {
    v: Vec<f64>,
    log_len: usize,
    epoch: u64,
    theta_version: u64,
    goal_value: f64,
}

impl Cached {
    fn value(&self, s: StateId) -> f64 {
        self.v.get(s.0).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Still exact if no transition added since it was computed leads into a
    /// state with finite value; advances the checkpoint when so.
    fn refresh(&mut self, mdp: &GrowingMdp, theta_version: u64, goal_value: f64) -> bool {
        if self.epoch != mdp.epoch() || self.theta_version != theta_version || self.goal_value != goal_value {
            return false;
        }
        let log = mdp.edge_log();
        for &(_, a, t) in &log[self.log_len..] {
            if a != Action::AtGoal && self.value(t).is_finite() {
                return false;
            }
        }
        self.log_len = log.len();
        true
    }
}

#[derive(Clone, Debug, Default)]
pub struct EngineStats {
    pub goal_solves: usize,
    pub global_solves: usize,
    pub nonconverged: usize,
}

/// Caches goal-conditioned and all-goal value tables across ticks. Tables
/// are recomputed only when theta, the goal's value, or the part of the graph
/// that can reach the goal changes.
#[derive(Clone, Debug)]
pub struct ForecastEngine {
    planner: Planner,
    exec: Execution,
    theta: Vec<f64>,
    theta_version: u64,
    per_goal: BTreeMap<StateId, Cached>,
    global: Option<(Cached, Vec<(StateId, f64)>, Policy)>,
    pub stats: EngineStats,
}

impl ForecastEngine {
    pub fn new(planner: Planner, theta: Vec<f64>, exec: Execution) -> Self {
        ForecastEngine {
            planner,
            exec,
            theta,
            theta_version: 0,
            per_goal: BTreeMap::new(),
            global: None,
            stats: EngineStats::default(),
        }
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        if theta != self.theta.as_slice() {
            self.theta = theta.to_vec();
            self.theta_version += 1;
        }
    }

    fn refresh_goals(&mut self, mdp: &GrowingMdp) -> Result<()> {
        let mut stale = Vec::new();
        for (&g, rec) in mdp.goals() {
            let val = self.planner.goal_value(rec.rho)?;
            let ok = match self.per_goal.get_mut(&g) {
                Some(c) => c.refresh(mdp, self.theta_version, val),
                None => false,
            };
            if !ok {
                stale.push((g, val));
            }
        }
        self.per_goal.retain(|g, _| mdp.goals().contains_key(g));
        if stale.is_empty() {
            return Ok(());
        }
        let graph = Arc::new(Graph::from_mdp(mdp));
        let rewards = self.planner.edge_rewards(&graph, mdp, &self.theta);
        let planner = &self.planner;
        let tables = self.exec.map(&stale, |&(g, _)| planner.solve_goal_on(graph.clone(), &rewards, mdp, g));
        for ((g, val), t) in stale.into_iter().zip(tables) {
            let t = t?;
            self.stats.goal_solves += 1;
            if !t.converged {
                self.stats.nonconverged += 1;
            }
            let cached = Cached {
                v: t.values().to_vec(),
                log_len: mdp.edge_log().len(),
                epoch: mdp.epoch(),
                theta_version: self.theta_version,
                goal_value: val,
            };
            self.per_goal.insert(g, cached);
        }
        Ok(())
    }

    pub fn posterior(&mut self, mdp: &GrowingMdp, s0: StateId, st: StateId) -> Result<GoalPosterior> {
        if mdp.goals().is_empty() {
            return Ok(GoalPosterior { probs: BTreeMap::new(), fallback: true });
        }
        self.refresh_goals(mdp)?;
        let prior = goal_prior(&self.planner, mdp)?;
        let tables = &self.per_goal;
        Ok(posterior_from_values(&prior, |g| tables[&g].value(s0), |g| tables[&g].value(st)))
    }

    /// Policy with every known goal absorbing, cached like the goal tables.
    pub fn policy(&mut self, mdp: &GrowingMdp) -> Result<&Policy> {
        let goals = self.planner.goal_values(mdp)?;
        let ok = match self.global.as_mut() {
            Some((c, sig, _)) => *sig == goals && c.refresh(mdp, self.theta_version, 0.0),
            None => false,
        };
        if !ok {
            let values = self.planner.solve(&self.theta, mdp)?;
            self.stats.global_solves += 1;
            if !values.converged {
                self.stats.nonconverged += 1;
            }
            let cached = Cached {
                v: values.values().to_vec(),
                log_len: mdp.edge_log().len(),
                epoch: mdp.epoch(),
                theta_version: self.theta_version,
                goal_value: 0.0,
            };
            self.global = Some((cached, goals, policy_from(&values)));
        }
        Ok(&self.global.as_ref().expect("set above").2)
    }

    pub fn visitation(&mut self, mdp: &GrowingMdp, st: StateId, horizon: usize, estimator: Estimator) -> Result<Visitation> {
        let exec = self.exec;
        let policy = self.policy(mdp)?;
        state_visitation(policy, st, horizon, estimator, exec)
    }
}
