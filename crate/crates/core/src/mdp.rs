//! Growing goal-directed MDP: interned composite states, deterministic
//! transitions recorded on first observation, and the linear feature map.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};

pub type Cell = [i32; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bitset of held object indices (at most 64 objects).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeldSet(u64);

impl HeldSet {
    pub const MAX_OBJECTS: usize = 64;

    pub fn empty() -> Self {
        HeldSet(0)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        indices.into_iter().fold(HeldSet(0), |h, j| h.with(j))
    }

    pub fn contains(self, j: usize) -> bool {
        j < 64 && self.0 & (1 << j) != 0
    }

    pub fn with(self, j: usize) -> Self {
        HeldSet(self.0 | (1 << j))
    }

    pub fn without(self, j: usize) -> Self {
        HeldSet(self.0 & !(1 << j))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&j| self.0 & (1 << j) != 0)
    }

    pub fn bits(self, n: usize) -> Vec<u8> {
        (0..n).map(|j| self.contains(j) as u8).collect()
    }
}

/// Composite state: position, held-object set, and the scene of the most
/// recently reached goal (`None` before the first goal).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateVec {
    pub position: Cell,
    pub held: HeldSet,
    pub prev_goal: Option<usize>,
}

impl StateVec {
    pub fn new(position: Cell, held: HeldSet, prev_goal: Option<usize>) -> Self {
        StateVec { position, held, prev_goal }
    }

    pub fn at(position: Cell) -> Self {
        StateVec { position, held: HeldSet::empty(), prev_goal: None }
    }

    pub fn moved(&self, delta: Cell) -> Self {
        let p = self.position;
        StateVec {
            position: [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]],
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    #[default]
    Six,
    TwentySix,
}

impl Neighborhood {
    pub fn deltas(self) -> Vec<Cell> {
        match self {
            Neighborhood::Six => vec![
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ],
            Neighborhood::TwentySix => {
                let mut out = Vec::with_capacity(26);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                out.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn contains(self, d: Cell) -> bool {
        let l1: i32 = d.iter().map(|c| c.abs()).sum();
        let linf = d.iter().map(|c| c.abs()).max().unwrap_or(0);
        match self {
            Neighborhood::Six => l1 == 1,
            Neighborhood::TwentySix => linf == 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Move(Cell),
    Acquire(usize),
    Release(usize),
    AtGoal,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(d) => write!(f, "move({},{},{})", d[0], d[1], d[2]),
            Action::Acquire(j) => write!(f, "acquire({j})"),
            Action::Release(j) => write!(f, "release({j})"),
            Action::AtGoal => write!(f, "at_goal"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdpConfig {
    /// Largest valid coordinate per axis; positions range over `0..=bounds[i]`.
    pub bounds: Cell,
    pub num_objects: usize,
    pub num_scenes: usize,
    #[serde(default)]
    pub neighborhood: Neighborhood,
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.iter().any(|&b| b < 0) {
            return Err(DarkoError::Config(format!("negative bounds {:?}", self.bounds)));
        }
        if self.num_objects > HeldSet::MAX_OBJECTS {
            return Err(DarkoError::Config(format!(
                "at most {} objects supported, got {}",
                HeldSet::MAX_OBJECTS,
                self.num_objects
            )));
        }
        if self.num_scenes == 0 {
            return Err(DarkoError::Config("at least one scene type required".into()));
        }
        Ok(())
    }

    pub fn in_bounds(&self, p: Cell) -> bool {
        (0..3).all(|i| p[i] >= 0 && p[i] <= self.bounds[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub scene: usize,
    pub rho: f64,
    pub detections: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recorded {
    New,
    Existing,
    /// The pair was already mapped elsewhere; the newer successor replaced it.
    Overwritten,
}

#[derive(Clone, Debug)]
pub struct GrowingMdp {
    config: MdpConfig,
    states: Vec<StateVec>,
    index: HashMap<StateVec, StateId>,
    outgoing: Vec<Vec<(Action, StateId)>>,
    incoming: Vec<Vec<(StateId, Action)>>,
    goals: BTreeMap<StateId, GoalRecord>,
    edge_log: Vec<(StateId, Action, StateId)>,
    conflicts: usize,
    epoch: u64,
}

impl GrowingMdp {
    pub fn new(config: MdpConfig) -> Result<Self> {
        config.validate()?;
        Ok(GrowingMdp {
            config,
            states: Vec::new(),
            index: HashMap::new(),
            outgoing: Vec::new(),
            incoming: Vec::new(),
            goals: BTreeMap::new(),
            edge_log: Vec::new(),
            conflicts: 0,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &MdpConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: StateId) -> &StateVec {
        &self.states[id.0]
    }

    pub fn states(&self) -> &[StateVec] {
        &self.states
    }

    pub fn lookup(&self, s: &StateVec) -> Option<StateId> {
        self.index.get(s).copied()
    }

    fn validate_state(&self, s: &StateVec) -> Result<()> {
        if !self.config.in_bounds(s.position) {
            return Err(DarkoError::OutOfBounds { position: s.position, bounds: self.config.bounds });
        }
        if let Some(j) = s.held.iter().find(|&j| j >= self.config.num_objects) {
            return Err(DarkoError::Config(format!("held object {j} out of range")));
        }
        if let Some(k) = s.prev_goal.filter(|&k| k >= self.config.num_scenes) {
            return Err(DarkoError::Config(format!("scene {k} out of range")));
        }
        Ok(())
    }

    /// Returns the id of `s`, appending it if unseen.
    pub fn intern_state(&mut self, s: StateVec) -> Result<StateId> {
        if let Some(&id) = self.index.get(&s) {
            return Ok(id);
        }
        self.validate_state(&s)?;
        let id = StateId(self.states.len());
        self.index.insert(s.clone(), id);
        self.states.push(s);
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        Ok(id)
    }

    fn validate_action(&self, a: Action) -> Result<()> {
        let ok = match a {
            Action::Move(d) => self.config.neighborhood.contains(d),
            Action::Acquire(j) | Action::Release(j) => j < self.config.num_objects,
            Action::AtGoal => true,
        };
        if ok {
            Ok(())
        } else {
            Err(DarkoError::InvalidAction(a.to_string()))
        }
    }

    fn check_id(&self, s: StateId) -> Result<()> {
        if s.0 < self.states.len() {
            Ok(())
        } else {
            Err(DarkoError::UnknownState(s.0))
        }
    }

    pub fn record_transition(&mut self, s: StateId, a: Action, next: StateId) -> Result<Recorded> {
        self.check_id(s)?;
        self.check_id(next)?;
        self.validate_action(a)?;
        if let Some(slot) = self.outgoing[s.0].iter_mut().find(|(b, _)| *b == a) {
            if slot.1 == next {
                return Ok(Recorded::Existing);
            }
            let old = slot.1;
            slot.1 = next;
            self.incoming[old.0].retain(|&(p, b)| !(p == s && b == a));
            self.incoming[next.0].push((s, a));
            self.edge_log.push((s, a, next));
            self.conflicts += 1;
            self.epoch += 1;
            return Ok(Recorded::Overwritten);
        }
        self.outgoing[s.0].push((a, next));
        self.incoming[next.0].push((s, a));
        self.edge_log.push((s, a, next));
        Ok(Recorded::New)
    }

    pub fn successor(&self, s: StateId, a: Action) -> Option<StateId> {
        self.outgoing.get(s.0)?.iter().find(|(b, _)| *b == a).map(|&(_, n)| n)
    }

    pub fn outgoing(&self, s: StateId) -> &[(Action, StateId)] {
        &self.outgoing[s.0]
    }

    pub fn incoming(&self, s: StateId) -> &[(StateId, Action)] {
        &self.incoming[s.0]
    }

    pub fn num_transitions(&self) -> usize {
        self.outgoing.iter().map(Vec::len).sum()
    }

    /// Marks `s` as a goal. Repeated detections keep the latest label and
    /// confidence and increment the detection count.
    pub fn add_goal(&mut self, s: StateId, scene: usize, rho: f64) -> Result<()> {
        self.check_id(s)?;
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(DarkoError::InvalidConfidence(rho));
        }
        if scene >= self.config.num_scenes {
            return Err(DarkoError::Config(format!("scene {scene} out of range")));
        }
        let rec = self.goals.entry(s).or_insert(GoalRecord { scene, rho, detections: 0 });
        rec.scene = scene;
        rec.rho = rho;
        rec.detections += 1;
        Ok(())
    }

    pub fn goals(&self) -> &BTreeMap<StateId, GoalRecord> {
        &self.goals
    }

    pub fn is_goal(&self, s: StateId) -> bool {
        self.goals.contains_key(&s)
    }

    /// Distinct scene types among the known goals, ascending.
    pub fn goal_scenes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.goals.values().map(|g| g.scene).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Append-only log of recorded and overwritten transitions.
    pub fn edge_log(&self) -> &[(StateId, Action, StateId)] {
        &self.edge_log
    }

    pub fn conflicts(&self) -> usize {
        self.conflicts
    }

    /// Incremented whenever an existing transition is overwritten.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// One state per line: id, position, held bits, prev-goal one-hot, goal label.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            id: usize,
            position: Cell,
            held: Vec<u8>,
            prev_goal: Vec<u8>,
            goal: Option<&'a GoalRecord>,
        }
        for (i, s) in self.states.iter().enumerate() {
            let mut prev = vec![0u8; self.config.num_scenes];
            if let Some(k) = s.prev_goal {
                prev[k] = 1;
            }
            let line = Line {
                id: i,
                position: s.position,
                held: s.held.bits(self.config.num_objects),
                prev_goal: prev,
                goal: self.goals.get(&StateId(i)),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// State reached by the pseudo-action taken on arriving at a goal of `scene`.
pub fn apply_at_goal(s: &StateVec, scene: usize) -> StateVec {
    StateVec { prev_goal: Some(scene), ..s.clone() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Full,
    StateOnly,
    PositionOnly,
}

/// Linear features f(s, a) in [0, 1]^d, laid out as
/// `[position(3) | prev goal one-hot(K) | held bits(O) | acquire(O) release(O)]`
/// with trailing blocks dropped by the reduced modes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    mode: FeatureMode,
    bounds: Cell,
    num_scenes: usize,
    num_objects: usize,
}

impl FeatureMap {
    pub fn new(config: &MdpConfig, mode: FeatureMode) -> Self {
        FeatureMap {
            mode,
            bounds: config.bounds,
            num_scenes: config.num_scenes,
            num_objects: config.num_objects,
        }
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            FeatureMode::Full => 3 + self.num_scenes + 3 * self.num_objects,
            FeatureMode::StateOnly => 3 + self.num_scenes + self.num_objects,
            FeatureMode::PositionOnly => 3,
        }
    }

    fn has_state_blocks(&self) -> bool {
        self.mode != FeatureMode::PositionOnly
    }

    fn has_action_block(&self) -> bool {
        self.mode == FeatureMode::Full
    }

    fn coord(&self, s: &StateVec, i: usize) -> f64 {
        if self.bounds[i] > 0 {
            s.position[i] as f64 / self.bounds[i] as f64
        } else {
            0.0
        }
    }

    fn action_index(&self, a: &Action) -> Option<usize> {
        let base = 3 + self.num_scenes + self.num_objects;
        match *a {
            Action::Acquire(j) => Some(base + j),
            Action::Release(j) => Some(base + self.num_objects + j),
            _ => None,
        }
    }

    /// Calls `emit(index, value)` for each nonzero feature.
    fn for_each(&self, s: &StateVec, a: &Action, mut emit: impl FnMut(usize, f64)) {
        for i in 0..3 {
            let c = self.coord(s, i);
            if c != 0.0 {
                emit(i, c);
            }
        }
        if !self.has_state_blocks() {
            return;
        }
        if let Some(k) = s.prev_goal {
            emit(3 + k, 1.0);
        }
        let held_base = 3 + self.num_scenes;
        for j in s.held.iter() {
            emit(held_base + j, 1.0);
        }
        if self.has_action_block() {
            if let Some(i) = self.action_index(a) {
                emit(i, 1.0);
            }
        }
    }

    pub fn features(&self, s: &StateVec, a: &Action) -> Vec<f64> {
        let mut f = vec![0.0; self.dim()];
        self.for_each(s, a, |i, v| f[i] = v);
        f
    }

    pub fn dot(&self, theta: &[f64], s: &StateVec, a: &Action) -> f64 {
        let mut acc = 0.0;
        self.for_each(s, a, |i, v| acc += theta[i] * v);
        acc
    }

    /// `out += w * f(s, a)`.
    pub fn add_scaled(&self, out: &mut [f64], w: f64, s: &StateVec, a: &Action) {
        self.for_each(s, a, |i, v| out[i] += w * v);
    }

    /// Feature vector maximising `theta . f` over every representable
    /// state-action pair (not only observed ones).
    pub fn max_features(&self, theta: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim()];
        for (i, fi) in f.iter_mut().enumerate().take(3) {
            if self.bounds[i] > 0 && theta[i] > 0.0 {
                *fi = 1.0;
            }
        }
        if !self.has_state_blocks() {
            return f;
        }
        let one_hot_max = |f: &mut Vec<f64>, lo: usize, hi: usize| {
            let best = (lo..hi).filter(|&i| theta[i] > 0.0).max_by(|&a, &b| theta[a].total_cmp(&theta[b]));
            if let Some(i) = best {
                f[i] = 1.0;
            }
        };
        one_hot_max(&mut f, 3, 3 + self.num_scenes);
        let held_base = 3 + self.num_scenes;
        for j in 0..self.num_objects {
            if theta[held_base + j] > 0.0 {
                f[held_base + j] = 1.0;
            }
        }
        if self.has_action_block() {
            let base = held_base + self.num_objects;
            one_hot_max(&mut f, base, base + 2 * self.num_objects);
        }
        f
    }

    pub fn max_dot(&self, theta: &[f64]) -> f64 {
        self.max_features(theta).iter().zip(theta).map(|(f, t)| f * t).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> MdpConfig {
        MdpConfig { bounds: [10, 10, 10], num_objects: 2, num_scenes: 2, neighborhood: Neighborhood::Six }
    }

    #[test]
    fn feature_layout() {
        let fm = FeatureMap::new(&config(), FeatureMode::Full);
        let s = StateVec::new([5, 0, 0], HeldSet::from_indices([0]), None);
        let f = fm.features(&s, &Action::Release(0));
        assert_eq!(f, vec![0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(FeatureMap::new(&config(), FeatureMode::StateOnly).dim(), 7);
        assert_eq!(FeatureMap::new(&config(), FeatureMode::PositionOnly).dim(), 3);
    }

    #[test]
    fn intern_is_idempotent() {
        let mut m = GrowingMdp::new(config()).unwrap();
        let a = m.intern_state(StateVec::at([1, 2, 3])).unwrap();
        let b = m.intern_state(StateVec::at([1, 2, 3])).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut m = GrowingMdp::new(config()).unwrap();
        assert!(matches!(m.intern_state(StateVec::at([11, 0, 0])), Err(DarkoError::OutOfBounds { .. })));
        assert!(m.is_empty());
    }

    #[test]
    fn last_writer_wins() {
        let mut m = GrowingMdp::new(config()).unwrap();
        let s = m.intern_state(StateVec::at([0, 0, 0])).unwrap();
        let t1 = m.intern_state(StateVec::at([1, 0, 0])).unwrap();
        let t2 = m.intern_state(StateVec::at([2, 0, 0])).unwrap();
        let a = Action::Move([1, 0, 0]);
        assert_eq!(m.record_transition(s, a, t1).unwrap(), Recorded::New);
        assert_eq!(m.record_transition(s, a, t1).unwrap(), Recorded::Existing);
        assert_eq!(m.record_transition(s, a, t2).unwrap(), Recorded::Overwritten);
        assert_eq!(m.successor(s, a), Some(t2));
        assert_eq!(m.conflicts(), 1);
        assert!(m.incoming(t1).is_empty());
    }

    #[test]
    fn bad_actions_rejected() {
        let mut m = GrowingMdp::new(config()).unwrap();
        let s = m.intern_state(StateVec::at([0, 0, 0])).unwrap();
        assert!(m.record_transition(s, Action::Move([2, 0, 0]), s).is_err());
        assert!(m.record_transition(s, Action::Acquire(2), s).is_err());
    }

    #[test]
    fn goal_labels_latest_wins() {
        let mut m = GrowingMdp::new(config()).unwrap();
        let s = m.intern_state(StateVec::at([0, 0, 0])).unwrap();
        m.add_goal(s, 0, 0.5).unwrap();
        m.add_goal(s, 1, 0.9).unwrap();
        let g = &m.goals()[&s];
        assert_eq!((g.scene, g.rho, g.detections), (1, 0.9, 2));
        assert!(m.add_goal(s, 0, 0.0).is_err());
        assert!(m.add_goal(s, 0, 1.5).is_err());
    }

    #[test]
    fn at_goal_sets_prev() {
        let s = StateVec::new([1, 1, 0], HeldSet::from_indices([1]), Some(0));
        let t = apply_at_goal(&s, 1);
        assert_eq!(t.prev_goal, Some(1));
        assert_eq!(t.held, s.held);
        assert_eq!(t.position, s.position);
    }

    #[test]
    fn max_features_maximise() {
        let fm = FeatureMap::new(&config(), FeatureMode::Full);
        let theta = vec![0.5, -1.0, 0.0, 0.2, 0.7, -0.3, 0.4, -0.1, 0.9, 0.3, -2.0];
        let fmax = fm.max_features(&theta);
        let best = fm.max_dot(&theta);
        assert!((best - (0.5 + 0.7 + 0.4 + 0.9)).abs() < 1e-12);
        assert_eq!(fmax[4], 1.0);
        for x in 0..=10 {
            for prev in [None, Some(0), Some(1)] {
                for held in 0..4u64 {
                    let s = StateVec::new([x, 3, 7], HeldSet::from_indices((0..2).filter(|j| held & (1 << j) != 0)), prev);
                    for a in [Action::Move([1, 0, 0]), Action::Acquire(0), Action::Acquire(1), Action::Release(0), Action::Release(1)] {
                        assert!(fm.dot(&theta, &s, &a) <= best + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dump_lines() {
        let mut m = GrowingMdp::new(config()).unwrap();
        let s = m.intern_state(StateVec::new([1, 0, 0], HeldSet::from_indices([1]), Some(1))).unwrap();
        m.add_goal(s, 0, 1.0).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["held"], serde_json::json!([0, 1]));
        assert_eq!(v["prev_goal"], serde_json::json!([0, 1]));
        assert_eq!(v["goal"]["scene"], 0);
    }
}
