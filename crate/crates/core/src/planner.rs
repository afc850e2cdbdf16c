//! Soft (maximum-entropy) value iteration over the observed transition graph.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::mdp::{Action, FeatureMap, GrowingMdp, StateId};

/// Immutable CSR snapshot of the planning graph. `AtGoal` transitions are
/// bookkeeping only and are left out.
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    actions: Vec<Action>,
    targets: Vec<usize>,
    rev_offsets: Vec<usize>,
    rev_edges: Vec<usize>,
}

impl Graph {
    pub fn from_mdp(mdp: &GrowingMdp) -> Self {
        let n = mdp.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        let mut actions = Vec::new();
        let mut targets = Vec::new();
        offsets.push(0);
        for s in 0..n {
            for &(a, t) in mdp.outgoing(StateId(s)) {
                if a != Action::AtGoal {
                    sources.push(s);
                    actions.push(a);
                    targets.push(t.0);
                }
            }
            offsets.push(actions.len());
        }
        let mut counts = vec![0usize; n + 1];
        for &t in &targets {
            counts[t + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let rev_offsets = counts.clone();
        let mut fill = counts;
        let mut rev_edges = vec![0; targets.len()];
        for (e, &t) in targets.iter().enumerate() {
            rev_edges[fill[t]] = e;
            fill[t] += 1;
        }
        Graph { offsets, sources, actions, targets, rev_offsets, rev_edges }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn edges(&self, s: usize) -> Range<usize> {
        if s < self.len() {
            self.offsets[s]..self.offsets[s + 1]
        } else {
            0..0
        }
    }

    pub fn in_edges(&self, s: usize) -> &[usize] {
        &self.rev_edges[self.rev_offsets[s]..self.rev_offsets[s + 1]]
    }

    pub fn source(&self, e: usize) -> usize {
        self.sources[e]
    }

    pub fn action(&self, e: usize) -> Action {
        self.actions[e]
    }

    pub fn target(&self, e: usize) -> usize {
        self.targets[e]
    }

    pub fn edge(&self, s: usize, a: Action) -> Option<usize> {
        self.edges(s).find(|&e| self.actions[e] == a)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalConfidence {
    /// Goal value ln(rho).
    #[default]
    LogRho,
    /// Goal value 0 regardless of confidence.
    Binary,
}

pub fn goal_value_from_confidence(rho: f64, mode: GoalConfidence) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(DarkoError::InvalidConfidence(rho));
    }
    Ok(match mode {
        GoalConfidence::LogRho => rho.ln(),
        GoalConfidence::Binary => 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Margin subtracted from every reward on top of the maximum of theta . f,
    /// so that all rewards are at most `-step_cost`.
    pub step_cost: f64,
    pub tol: f64,
    /// Defaults to `10 |S| + 100` when unset.
    pub max_sweeps: Option<usize>,
    pub goal_confidence: GoalConfidence,
    pub divergence_limit: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            step_cost: 2.0,
            tol: 1e-6,
            max_sweeps: None,
            goal_confidence: GoalConfidence::LogRho,
            divergence_limit: 1e6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValueTables {
    graph: Arc<Graph>,
    v: Vec<f64>,
    q: Vec<f64>,
    is_goal: Vec<bool>,
    pub converged: bool,
    pub sweeps: usize,
    /// Largest absolute value change per sweep (infinite when a state first
    /// becomes finite).
    pub deltas: Vec<f64>,
}

impl ValueTables {
    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    /// Soft value; `-inf` for states that cannot reach a goal or are newer
    /// than the snapshot.
    pub fn value(&self, s: StateId) -> f64 {
        self.v.get(s.0).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self, s: StateId, a: Action) -> Option<f64> {
        self.graph.edge(s.0, a).map(|e| self.q[e])
    }

    pub fn q_edges(&self) -> &[f64] {
        &self.q
    }

    pub fn is_goal(&self, s: StateId) -> bool {
        self.is_goal.get(s.0).copied().unwrap_or(false)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Soft value iteration with explicit per-edge rewards. Goals are absorbing
/// with values pinned to the supplied constants.
pub fn solve_with_rewards(
    graph: Arc<Graph>,
    rewards: &[f64],
    goals: &[(StateId, f64)],
    config: &PlannerConfig,
) -> ValueTables {
    let n = graph.len();
    let mut v = vec![f64::NEG_INFINITY; n];
    let mut is_goal = vec![false; n];
    let mut queue = VecDeque::new();
    for &(g, val) in goals {
        if g.0 < n {
            v[g.0] = val;
            is_goal[g.0] = true;
            queue.push_back(g.0);
        }
    }
    // Backward reachability, in breadth-first order from the goals.
    let mut seen = is_goal.clone();
    let mut order = Vec::new();
    while let Some(u) = queue.pop_front() {
        for &e in graph.in_edges(u) {
            let p = graph.source(e);
            if !seen[p] {
                seen[p] = true;
                order.push(p);
                queue.push_back(p);
            }
        }
    }

    let max_sweeps = config.max_sweeps.unwrap_or(10 * n + 100);
    let mut deltas = Vec::new();
    let mut converged = order.is_empty();
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        let mut delta = 0.0f64;
        let mut top = f64::NEG_INFINITY;
        for &s in &order {
            let vals = graph.edges(s).map(|e| rewards[e] + v[graph.target(e)]);
            let new = log_sum_exp(vals);
            let d = if v[s] == f64::NEG_INFINITY {
                if new == f64::NEG_INFINITY {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (new - v[s]).abs()
            };
            delta = delta.max(d);
            top = top.max(new);
            v[s] = new;
        }
        deltas.push(delta);
        if top > config.divergence_limit || top.is_nan() {
            break;
        }
        converged = delta < config.tol;
    }

    let mut q = vec![f64::NEG_INFINITY; graph.num_edges()];
    for s in 0..n {
        if is_goal[s] {
            continue;
        }
        for e in graph.edges(s) {
            q[e] = rewards[e] + v[graph.target(e)];
        }
    }
    ValueTables { graph, v, q, is_goal, converged, sweeps, deltas }
}

/// Reward model `R(s, a) = theta . f(s, a) - shift(theta)`.
#[derive(Clone, Debug)]
pub struct Planner {
    pub config: PlannerConfig,
    pub features: FeatureMap,
}

impl Planner {
    pub fn new(config: PlannerConfig, features: FeatureMap) -> Self {
        Planner { config, features }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.features.dim() {
            return Err(DarkoError::DimensionMismatch { expected: self.features.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// Constant subtracted from every reward: the largest attainable
    /// `theta . f` plus the step cost, so `max R <= -step_cost`.
    pub fn shift(&self, theta: &[f64]) -> f64 {
        self.features.max_dot(theta) + self.config.step_cost
    }

    pub fn edge_rewards(&self, graph: &Graph, mdp: &GrowingMdp, theta: &[f64]) -> Vec<f64> {
        let shift = self.shift(theta);
        (0..graph.num_edges())
            .map(|e| {
                let s = mdp.state(StateId(graph.source(e)));
                self.features.dot(theta, s, &graph.action(e)) - shift
            })
            .collect()
    }

    pub fn goal_value(&self, rho: f64) -> Result<f64> {
        goal_value_from_confidence(rho, self.config.goal_confidence)
    }

    pub fn goal_values(&self, mdp: &GrowingMdp) -> Result<Vec<(StateId, f64)>> {
        mdp.goals().iter().map(|(&g, rec)| Ok((g, self.goal_value(rec.rho)?))).collect()
    }

    /// Values with every known goal absorbing.
    pub fn solve(&self, theta: &[f64], mdp: &GrowingMdp) -> Result<ValueTables> {
        self.check_dim(theta)?;
        let graph = Arc::new(Graph::from_mdp(mdp));
        let rewards = self.edge_rewards(&graph, mdp, theta);
        Ok(solve_with_rewards(graph, &rewards, &self.goal_values(mdp)?, &self.config))
    }

    /// Values with only `goal` absorbing; other goals are ordinary states.
    pub fn solve_goal(&self, theta: &[f64], mdp: &GrowingMdp, goal: StateId) -> Result<ValueTables> {
        self.check_dim(theta)?;
        let graph = Arc::new(Graph::from_mdp(mdp));
        let rewards = self.edge_rewards(&graph, mdp, theta);
        self.solve_goal_on(graph, &rewards, mdp, goal)
    }

    pub fn solve_goal_on(
        &self,
        graph: Arc<Graph>,
        rewards: &[f64],
        mdp: &GrowingMdp,
        goal: StateId,
    ) -> Result<ValueTables> {
        let rec = mdp.goals().get(&goal).ok_or(DarkoError::NotAGoal(goal.0))?;
        let val = self.goal_value(rec.rho)?;
        Ok(solve_with_rewards(graph, rewards, &[(goal, val)], &self.config))
    }
}

pub fn soft_value_iteration(planner: &Planner, theta: &[f64], mdp: &GrowingMdp) -> Result<ValueTables> {
    planner.solve(theta, mdp)
}

pub fn goal_conditioned_values(
    planner: &Planner,
    theta: &[f64],
    mdp: &GrowingMdp,
    goal: StateId,
) -> Result<ValueTables> {
    planner.solve_goal(theta, mdp, goal)
}

const MASS_FLOOR: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Propagation {
    /// Expected number of actions taken before absorption or truncation.
    pub expected_steps: f64,
    /// Probability mass not absorbed within the horizon.
    pub residual: f64,
    pub steps_taken: usize,
}

/// Stochastic policy `pi(a|s) = exp(Q(s, a) - V(s))`, stored per edge.
/// Goal states and states with `V = -inf` have no actions.
#[derive(Clone, Debug)]
pub struct Policy {
    graph: Arc<Graph>,
    probs: Vec<f64>,
    v: Vec<f64>,
    is_goal: Vec<bool>,
}

impl Policy {
    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn edge_prob(&self, e: usize) -> f64 {
        self.probs[e]
    }

    pub fn prob(&self, s: StateId, a: Action) -> f64 {
        self.graph.edge(s.0, a).map_or(0.0, |e| self.probs[e])
    }

    pub fn value(&self, s: StateId) -> f64 {
        self.v.get(s.0).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.is_goal.get(s).copied().unwrap_or(false)
    }

    /// True when the state has a normalised action distribution.
    pub fn acts(&self, s: usize) -> bool {
        s < self.v.len() && !self.is_goal[s] && self.v[s].is_finite()
    }

    /// Pushes unit mass from `start` through the policy for at most `horizon`
    /// actions, calling `flow(edge, mass)` for every edge traversal. Mass
    /// entering a goal is absorbed.
    pub fn propagate(&self, start: usize, horizon: usize, mut flow: impl FnMut(usize, f64)) -> Propagation {
        let n = self.graph.len();
        let mut out = Propagation { expected_steps: 0.0, residual: 0.0, steps_taken: 0 };
        if !self.acts(start) {
            return out;
        }
        let mut mass = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut active = vec![start];
        let mut next_active = Vec::new();
        mass[start] = 1.0;
        for _ in 0..horizon {
            if active.is_empty() {
                break;
            }
            out.steps_taken += 1;
            for &s in &active {
                let m = mass[s];
                mass[s] = 0.0;
                out.expected_steps += m;
                for e in self.graph.edges(s) {
                    let p = self.probs[e];
                    if p == 0.0 {
                        continue;
                    }
                    let w = m * p;
                    flow(e, w);
                    let t = self.graph.target(e);
                    if self.is_goal[t] || !self.acts(t) {
                        continue;
                    }
                    if next[t] == 0.0 {
                        next_active.push(t);
                    }
                    next[t] += w;
                }
            }
            active.clear();
            let mut live = 0.0;
            for &t in &next_active {
                if next[t] > MASS_FLOOR {
                    mass[t] = next[t];
                    live += next[t];
                    active.push(t);
                }
                next[t] = 0.0;
            }
            next_active.clear();
            active.sort_unstable();
            if live < MASS_FLOOR {
                active.clear();
            }
        }
        out.residual = active.iter().map(|&s| mass[s]).sum();
        out
    }

    /// Samples one trajectory from `start`, returning the traversed edges.
    pub fn sample_path<R: rand::Rng>(&self, start: usize, horizon: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::new();
        let mut s = start;
        while path.len() < horizon && self.acts(s) {
            let u: f64 = rng.random();
            let edges = self.graph.edges(s);
            let mut acc = 0.0;
            let mut chosen = None;
            for e in edges.clone() {
                if self.probs[e] > 0.0 {
                    acc += self.probs[e];
                    chosen = Some(e);
                    if u < acc {
                        break;
                    }
                }
            }
            let Some(e) = chosen else { break };
            path.push(e);
            s = self.graph.target(e);
        }
        path
    }

    pub fn distribution(&self, s: StateId) -> Vec<(Action, StateId, f64)> {
        self.graph
            .edges(s.0)
            .filter(|&e| self.probs[e] > 0.0)
            .map(|e| (self.graph.action(e), StateId(self.graph.target(e)), self.probs[e]))
            .collect()
    }
}

pub fn policy_from(values: &ValueTables) -> Policy {
    let graph = values.graph.clone();
    let mut probs = vec![0.0; graph.num_edges()];
    for s in 0..graph.len() {
        let vs = values.v[s];
        if values.is_goal[s] || !vs.is_finite() {
            continue;
        }
        let r = graph.edges(s);
        let mut total = 0.0;
        for e in r.clone() {
            probs[e] = (values.q[e] - vs).exp();
            total += probs[e];
        }
        if total > 0.0 {
            for e in r {
                probs[e] /= total;
            }
        }
    }
    Policy { graph, probs, v: values.v.clone(), is_goal: values.is_goal.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpConfig, Neighborhood, StateVec};

    fn chain(n: usize) -> GrowingMdp {
        let cfg = MdpConfig { bounds: [20, 0, 0], num_objects: 1, num_scenes: 1, neighborhood: Neighborhood::Six };
        let mut m = GrowingMdp::new(cfg).unwrap();
        let ids: Vec<_> = (0..n).map(|i| m.intern_state(StateVec::at([i as i32, 0, 0])).unwrap()).collect();
        for w in ids.windows(2) {
            m.record_transition(w[0], Action::Move([1, 0, 0]), w[1]).unwrap();
        }
        m
    }

    #[test]
    fn single_action_value() {
        let m = chain(2);
        let g = Arc::new(Graph::from_mdp(&m));
        let vt = solve_with_rewards(g, &[-0.7], &[(StateId(1), 0.0)], &PlannerConfig::default());
        assert!((vt.value(StateId(0)) + 0.7).abs() < 1e-12);
        let p = policy_from(&vt);
        assert!((p.prob(StateId(0), Action::Move([1, 0, 0])) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_parallel_actions_add_ln2() {
        let mut m = chain(2);
        m.record_transition(StateId(0), Action::Acquire(0), StateId(1)).unwrap();
        let g = Arc::new(Graph::from_mdp(&m));
        let r = -1.3;
        let vt = solve_with_rewards(g, &[r, r], &[(StateId(1), 0.0)], &PlannerConfig::default());
        assert!((vt.value(StateId(0)) - (r + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn goal_pinned_and_unreachable_is_neg_inf() {
        let mut m = chain(4);
        let extra = m.intern_state(StateVec::at([10, 0, 0])).unwrap();
        m.add_goal(StateId(3), 0, 0.5).unwrap();
        let fm = FeatureMap::new(m.config(), crate::mdp::FeatureMode::Full);
        let planner = Planner::new(PlannerConfig::default(), fm.clone());
        let theta = vec![0.3; fm.dim()];
        let vt = planner.solve(&theta, &m).unwrap();
        assert_eq!(vt.value(StateId(3)), 0.5f64.ln());
        assert_eq!(vt.value(extra), f64::NEG_INFINITY);
        assert!(vt.converged);
    }

    #[test]
    fn binary_mode_ignores_confidence() {
        assert_eq!(goal_value_from_confidence(0.2, GoalConfidence::Binary).unwrap(), 0.0);
        assert!((goal_value_from_confidence(0.2, GoalConfidence::LogRho).unwrap() - 0.2f64.ln()).abs() < 1e-15);
        assert!(goal_value_from_confidence(0.0, GoalConfidence::LogRho).is_err());
    }

    #[test]
    fn positive_cycle_reports_nonconvergence() {
        let mut m = chain(2);
        m.record_transition(StateId(1), Action::Move([-1, 0, 0]), StateId(0)).unwrap();
        m.record_transition(StateId(0), Action::Acquire(0), StateId(0)).unwrap();
        let goal = m.intern_state(StateVec::at([5, 0, 0])).unwrap();
        m.record_transition(StateId(1), Action::Acquire(0), goal).unwrap();
        let g = Arc::new(Graph::from_mdp(&m));
        let rewards = vec![0.5; g.num_edges()];
        let vt = solve_with_rewards(g, &rewards, &[(goal, 0.0)], &PlannerConfig::default());
        assert!(!vt.converged);
    }
}
