use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};

use super::{Event, EventStream};

/// Spurious goal detections: random tick, random scene, low confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalNoise {
    pub rho_mean: f64,
    pub rho_std: f64,
    /// Sampled confidences are clipped into `[rho_floor, 1]`.
    pub rho_floor: f64,
}

impl Default for GoalNoise {
    fn default() -> Self {
        GoalNoise { rho_mean: 0.1, rho_std: 0.05, rho_floor: 1e-3 }
    }
}

impl GoalNoise {
    pub fn sample_rho<R: Rng>(&self, rng: &mut R) -> f64 {
        let n = Normal::new(self.rho_mean, self.rho_std).expect("finite parameters");
        n.sample(rng).clamp(self.rho_floor, 1.0)
    }
}

/// Inserts `floor(rate * N)` spurious detections, `N` being the number of
/// detections already present, at uniformly random ticks of the stream.
pub fn inject_goal_noise(
    stream: &EventStream,
    rate: f64,
    num_scenes: usize,
    noise: &GoalNoise,
    seed: u64,
) -> Result<EventStream> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(DarkoError::Config(format!("noise rate must be non-negative, got {rate}")));
    }
    if noise.rho_std < 0.0 || !(noise.rho_floor > 0.0 && noise.rho_floor <= 1.0) {
        return Err(DarkoError::Config("invalid confidence distribution".into()));
    }
    let true_count = stream.detected_goals().len();
    let k = (rate * true_count as f64 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = stream.events.first().map_or(0, Event::step);
    let last = stream.last_step();
    let mut events = stream.events.clone();
    for _ in 0..k {
        let step = rng.random_range(first..=last);
        let scene = rng.random_range(0..num_scenes);
        let rho = noise.sample_rho(&mut rng);
        events.push(Event::GoalDetected { step, scene, rho });
    }
    Ok(EventStream::new(events))
}

/// Replaces each detected object label, with probability `1 - accuracy`, by a
/// uniformly chosen different object.
pub fn inject_action_noise(stream: &EventStream, accuracy: f64, num_objects: usize, seed: u64) -> Result<EventStream> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(DarkoError::Config(format!("accuracy must lie in [0, 1], got {accuracy}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = stream.events.clone();
    for e in events.iter_mut() {
        if let Event::ActionDetected { object, .. } = e {
            if num_objects > 1 && !rng.random_bool(accuracy) {
                let mut o = rng.random_range(0..num_objects - 1);
                if o >= *object {
                    o += 1;
                }
                *object = o;
            }
        }
    }
    Ok(EventStream::new(events))
}
