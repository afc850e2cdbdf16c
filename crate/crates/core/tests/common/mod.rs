//! Test-only oracles: random small MDPs and brute-force trajectory
//! enumeration, independent of the planner's iterative solvers.

#![allow(dead_code)]

use std::collections::BTreeMap;

use darko_core::mdp::{Action, FeatureMap, FeatureMode, GrowingMdp, HeldSet, MdpConfig, Neighborhood, StateId, StateVec};
use darko_core::planner::{GoalConfidence, Planner, PlannerConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn labels() -> Vec<Action> {
    let mut v: Vec<Action> = Neighborhood::Six.deltas().into_iter().map(Action::Move).collect();
    v.extend([Action::Acquire(0), Action::Acquire(1), Action::Release(0), Action::Release(1)]);
    v
}

pub fn small_config() -> MdpConfig {
    MdpConfig { bounds: [10, 5, 5], num_objects: 2, num_scenes: 2, neighborhood: Neighborhood::Six }
}

pub struct Instance {
    pub mdp: GrowingMdp,
    pub theta: Vec<f64>,
    pub planner: Planner,
}

/// Random MDP with `n` states and at most `max_out` actions per state. With
/// `acyclic` every transition goes to a higher id. The last state is always a
/// goal; others become goals with probability `goal_p`.
pub fn random_instance(seed: u64, n: usize, max_out: usize, acyclic: bool, goal_p: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config();
    let mut mdp = GrowingMdp::new(cfg.clone()).unwrap();
    for i in 0..n {
        let held = HeldSet::from_indices((0..2).filter(|_| rng.random_bool(0.5)));
        let prev = if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..2)) };
        let s = StateVec::new([i as i32, rng.random_range(0..=5), rng.random_range(0..=5)], held, prev);
        mdp.intern_state(s).unwrap();
    }
    let all = labels();
    for i in 0..n {
        let targets: Vec<usize> = if acyclic { (i + 1..n).collect() } else { (0..n).filter(|&j| j != i).collect() };
        if targets.is_empty() {
            continue;
        }
        let k = rng.random_range(1..=max_out.min(targets.len()));
        let chosen: Vec<usize> = targets.choose_multiple(&mut rng, k).copied().collect();
        let mut acts = all.clone();
        acts.shuffle(&mut rng);
        for (j, a) in chosen.into_iter().zip(acts) {
            mdp.record_transition(StateId(i), a, StateId(j)).unwrap();
        }
    }
    mdp.add_goal(StateId(n - 1), rng.random_range(0..2), rng.random_range(0.2..=1.0)).unwrap();
    for i in 1..n - 1 {
        if rng.random_bool(goal_p) {
            mdp.add_goal(StateId(i), rng.random_range(0..2), rng.random_range(0.2..=1.0)).unwrap();
        }
    }
    let fm = FeatureMap::new(&cfg, FeatureMode::Full);
    let theta: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pc = PlannerConfig { tol: 1e-13, step_cost: 1.5, goal_confidence: GoalConfidence::LogRho, ..PlannerConfig::default() };
    Instance { mdp, theta, planner: Planner::new(pc, fm) }
}

pub fn reward(inst: &Instance, theta: &[f64], s: StateId, a: Action) -> f64 {
    let f = inst.planner.features.features(inst.mdp.state(s), &a);
    let dot: f64 = f.iter().zip(theta).map(|(x, t)| x * t).sum();
    let fmax = inst.planner.features.max_features(theta);
    let shift: f64 = fmax.iter().zip(theta).map(|(x, t)| x * t).sum::<f64>() + inst.planner.config.step_cost;
    dot - shift
}

#[derive(Clone, Debug)]
pub struct Path {
    pub states: Vec<StateId>,
    pub actions: Vec<Action>,
    pub log_weight: f64,
}

/// All trajectories from `start` that end at a state of `goals` within
/// `max_len` actions, with unnormalised log weights
/// `sum R + goal value`. Goals in `goals` are absorbing.
pub fn enumerate_paths(
    inst: &Instance,
    theta: &[f64],
    start: StateId,
    goals: &BTreeMap<StateId, f64>,
    max_len: usize,
) -> Vec<Path> {
    let mut out = Vec::new();
    let mut stack = vec![Path { states: vec![start], actions: vec![], log_weight: 0.0 }];
    while let Some(p) = stack.pop() {
        let s = *p.states.last().unwrap();
        if let Some(&gv) = goals.get(&s) {
            out.push(Path { log_weight: p.log_weight + gv, ..p });
            continue;
        }
        if p.actions.len() == max_len {
            continue;
        }
        for &(a, t) in inst.mdp.outgoing(s) {
            if a == Action::AtGoal {
                continue;
            }
            let mut q = p.clone();
            q.states.push(t);
            q.actions.push(a);
            q.log_weight += reward(inst, theta, s, a);
            stack.push(q);
        }
    }
    out
}

pub fn goal_values(inst: &Instance) -> BTreeMap<StateId, f64> {
    inst.mdp.goals().iter().map(|(&g, r)| (g, inst.planner.goal_value(r.rho).unwrap())).collect()
}

pub fn log_sum(ws: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = ws.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalised trajectory probabilities.
pub fn path_probs(paths: &[Path]) -> Vec<f64> {
    let z = log_sum(paths.iter().map(|p| p.log_weight));
    paths.iter().map(|p| (p.log_weight - z).exp()).collect()
}

/// Expected visit counts excluding the start position, from enumeration.
pub fn oracle_visitation(paths: &[Path], n: usize) -> Vec<f64> {
    let probs = path_probs(paths);
    let mut d = vec![0.0; n];
    for (p, w) in paths.iter().zip(probs) {
        for s in &p.states[1..] {
            d[s.0] += w;
        }
    }
    d
}

pub fn oracle_feature_sum(inst: &Instance, paths: &[Path]) -> (Vec<f64>, f64) {
    let probs = path_probs(paths);
    let fm = &inst.planner.features;
    let mut acc = vec![0.0; fm.dim()];
    let mut len = 0.0;
    for (p, w) in paths.iter().zip(probs) {
        for (s, a) in p.states.iter().zip(&p.actions) {
            let f = fm.features(inst.mdp.state(*s), a);
            acc.iter_mut().zip(&f).for_each(|(x, y)| *x += w * y);
        }
        len += w * p.actions.len() as f64;
    }
    (acc, len)
}
