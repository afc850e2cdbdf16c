use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::mdp::HeldSet;

use super::env::Environment;

/// One scripted errand: fetch `acquire` objects, walk to the `target` scene,
/// stay for `dwell` ticks, then put down `release` objects there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub label: String,
    #[serde(default)]
    pub acquire: Vec<usize>,
    pub target: usize,
    pub dwell: u32,
    #[serde(default)]
    pub release: Vec<usize>,
    #[serde(default)]
    pub day: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub directions: Vec<Direction>,
}

impl Script {
    pub fn validate(&self, env: &Environment) -> Result<()> {
        for (i, d) in self.directions.iter().enumerate() {
            if env.room_for_scene(d.target).is_none() {
                return Err(DarkoError::Config(format!("direction {i} targets scene {} with no room", d.target)));
            }
            if let Some(o) = d.acquire.iter().chain(&d.release).find(|&&o| o >= env.num_objects()) {
                return Err(DarkoError::Config(format!("direction {i} references unknown object {o}")));
            }
        }
        Ok(())
    }

    pub fn num_days(&self) -> usize {
        self.directions.iter().map(|d| d.day + 1).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub name: String,
    #[serde(default)]
    pub acquire: Vec<usize>,
    pub target: usize,
    #[serde(default)]
    pub release: Vec<usize>,
    pub next: Vec<Transition>,
}

/// Markov chain over activities from which daily scripts are sampled. Each
/// day ends with `day_end`, which is also where the first day begins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Routine {
    pub activities: Vec<Activity>,
    pub day_end: usize,
    pub directions_per_day: usize,
    pub dwell: u32,
}

impl Routine {
    pub fn validate(&self, env: &Environment) -> Result<()> {
        let n = self.activities.len();
        if self.day_end >= n {
            return Err(DarkoError::Config("day_end out of range".into()));
        }
        for a in &self.activities {
            if env.room_for_scene(a.target).is_none() {
                return Err(DarkoError::Config(format!("activity {} targets a scene with no room", a.name)));
            }
            if a.acquire.iter().chain(&a.release).any(|&o| o >= env.num_objects()) {
                return Err(DarkoError::Config(format!("activity {} references an unknown object", a.name)));
            }
            if a.next.iter().any(|t| t.to >= n || t.weight < 0.0) || !a.next.iter().any(|t| t.to != self.day_end && t.weight > 0.0) {
                return Err(DarkoError::Config(format!("activity {} has no usable successor", a.name)));
            }
        }
        Ok(())
    }

    fn pick(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        let cur = &self.activities[from];
        let ok = |t: &&Transition| t.to != self.day_end && t.weight > 0.0 && self.activities[t.to].target != cur.target;
        let mut options: Vec<&Transition> = cur.next.iter().filter(ok).collect();
        if options.is_empty() {
            options = cur.next.iter().filter(|t| t.to != self.day_end && t.weight > 0.0).collect();
        }
        let total: f64 = options.iter().map(|t| t.weight).sum();
        let mut u = rng.random::<f64>() * total;
        for t in &options {
            if u < t.weight {
                return t.to;
            }
            u -= t.weight;
        }
        options.last().expect("validated").to
    }

    /// Samples `days` days. Acquisitions of held objects and releases of
    /// objects not held are dropped so every direction is executable.
    pub fn sample_script(&self, days: usize, seed: u64) -> Script {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held = HeldSet::empty();
        let mut current = self.day_end;
        let mut directions = Vec::new();
        let mut push = |idx: usize, day: usize, held: &mut HeldSet| {
            let a = &self.activities[idx];
            let acquire: Vec<usize> = a.acquire.iter().copied().filter(|&o| !held.contains(o)).collect();
            for &o in &acquire {
                *held = held.with(o);
            }
            let release: Vec<usize> = a.release.iter().copied().filter(|&o| held.contains(o)).collect();
            for &o in &release {
                *held = held.without(o);
            }
            directions.push(Direction { label: a.name.clone(), acquire, target: a.target, dwell: self.dwell, release, day });
        };
        for day in 0..days {
            for _ in 1..self.directions_per_day {
                current = self.pick(current, &mut rng);
                push(current, day, &mut held);
            }
            current = self.day_end;
            push(current, day, &mut held);
        }
        Script { directions }
    }
}
