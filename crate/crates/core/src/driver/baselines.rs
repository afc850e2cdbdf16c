use serde::{Deserialize, Serialize};

use crate::mdp::{MdpConfig, StateVec};

/// `[position / bounds | prev goal one-hot | held bits | 1]`.
pub fn state_features(config: &MdpConfig, s: &StateVec) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 + config.num_scenes + config.num_objects);
    for i in 0..3 {
        let b = config.bounds[i];
        x.push(if b > 0 { s.position[i] as f64 / b as f64 } else { 0.0 });
    }
    x.extend((0..config.num_scenes).map(|k| (s.prev_goal == Some(k)) as u8 as f64));
    x.extend((0..config.num_objects).map(|j| s.held.contains(j) as u8 as f64));
    x.push(1.0);
    x
}

/// Equal mass on every discovered scene.
pub fn uniform_baseline(num_scenes: usize, known: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; num_scenes];
    if known.is_empty() {
        return p;
    }
    let u = 1.0 / known.len() as f64;
    for &k in known {
        p[k] = u;
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub step: f64,
    pub passes: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { step: 0.1, passes: 50 }
    }
}

/// Multinomial logistic regression from state features to the scene of the
/// episode's terminal goal, refit by SGD on all past pairs after every episode.
#[derive(Clone, Debug)]
pub struct LogisticBaseline {
    cfg: LogisticConfig,
    weights: Vec<Vec<f64>>,
    seen: Vec<bool>,
    data: Vec<(Vec<f64>, usize)>,
}

impl LogisticBaseline {
    pub fn new(cfg: LogisticConfig, num_scenes: usize, dim: usize) -> Self {
        LogisticBaseline { cfg, weights: vec![vec![0.0; dim]; num_scenes], seen: vec![false; num_scenes], data: Vec::new() }
    }

    pub fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn scores(&self, x: &[f64], out: &mut [f64]) {
        let mut m = f64::NEG_INFINITY;
        for (k, w) in self.weights.iter().enumerate() {
            out[k] = if self.seen[k] { w.iter().zip(x).map(|(a, b)| a * b).sum() } else { f64::NEG_INFINITY };
            m = m.max(out[k]);
        }
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = if o.is_finite() { (*o - m).exp() } else { 0.0 };
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }

    pub fn add_episode(&mut self, samples: impl IntoIterator<Item = Vec<f64>>, label: usize) {
        self.seen[label] = true;
        self.data.extend(samples.into_iter().map(|x| (x, label)));
        let mut p = vec![0.0; self.weights.len()];
        for _ in 0..self.cfg.passes {
            for (x, y) in &self.data {
                self.scores(x, &mut p);
                for (k, w) in self.weights.iter_mut().enumerate() {
                    if !self.seen[k] {
                        continue;
                    }
                    let g = p[k] - (k == *y) as u8 as f64;
                    if g != 0.0 {
                        w.iter_mut().zip(x).for_each(|(wi, xi)| *wi -= self.cfg.step * g * xi);
                    }
                }
            }
        }
    }

    /// Posterior over scenes; uniform over `known` before any training data.
    pub fn predict(&self, x: &[f64], known: &[usize]) -> Vec<f64> {
        if self.data.is_empty() {
            return uniform_baseline(self.weights.len(), known);
        }
        let mut p = vec![0.0; self.weights.len()];
        self.scores(x, &mut p);
        p
    }
}

/// Remaining-length predictor: answers with the remaining length of the
/// closest stored (state, elapsed steps) pair from completed episodes.
#[derive(Clone, Debug, Default)]
pub struct NearestLength {
    entries: Vec<(Vec<f64>, f64)>,
}

/// Elapsed steps are divided by this before entering the distance.
const ELAPSED_SCALE: f64 = 50.0;

impl NearestLength {
    fn key(mut x: Vec<f64>, elapsed: usize) -> Vec<f64> {
        x.push(elapsed as f64 / ELAPSED_SCALE);
        x
    }

    /// `states[j]` is the state after `j` steps of an episode of length `states.len()`.
    pub fn add_episode(&mut self, states: Vec<Vec<f64>>) {
        let n = states.len();
        for (j, x) in states.into_iter().enumerate() {
            self.entries.push((Self::key(x, j), (n - j) as f64));
        }
    }

    pub fn predict(&self, x: Vec<f64>, elapsed: usize) -> Option<f64> {
        let q = Self::key(x, elapsed);
        let d = |k: &[f64]| k.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.entries.iter().map(|(k, r)| (d(k), *r)).min_by(|a, b| a.0.total_cmp(&b.0)).map(|(_, r)| r)
    }
}
