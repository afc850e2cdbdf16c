use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use super::{Event, EventStream};

/// Turns every ground-truth goal marker into a detection with confidence `rho`.
/// Existing detections are dropped.
pub fn ground_truth_detections(stream: &EventStream, rho: f64) -> EventStream {
    let mut events = stream.without_detections().events;
    events.extend(stream.ground_truth_goals().into_iter().map(|(step, scene)| Event::GoalDetected { step, scene, rho }));
    EventStream::new(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopDetector {
    pub window: usize,
    pub threshold: f64,
}

impl Default for StopDetector {
    fn default() -> Self {
        StopDetector { window: 5, threshold: 0.2 }
    }
}

/// Fires when the mean per-tick displacement over the last `window` ticks
/// drops below `threshold`. After firing it waits at least `window` ticks and
/// until the agent moves again. The scene label is that of the room the agent
/// stands in, or the nearest one.
pub fn stop_detector(stream: &EventStream, env: &Environment, cfg: &StopDetector) -> EventStream {
    let positions = stream.positions_by_tick();
    let window = cfg.window.max(1);
    let mut disp = vec![0.0; positions.len()];
    for t in 1..positions.len() {
        if let (Some(a), Some(b)) = (positions[t - 1], positions[t]) {
            disp[t] = (0..3).map(|i| ((b[i] - a[i]) as f64).powi(2)).sum::<f64>().sqrt();
        }
    }
    let mut events = stream.without_detections().events;
    let mut armed = true;
    let mut quiet_until = 0;
    let mut running = 0.0;
    for t in 1..positions.len() {
        running += disp[t];
        if t > window {
            running -= disp[t - window];
        }
        if t < window {
            continue;
        }
        let mean = running / window as f64;
        if mean >= cfg.threshold {
            armed = true;
            continue;
        }
        if armed && t >= quiet_until {
            if let Some(scene) = positions[t].and_then(|p| env.nearest_scene(p)) {
                events.push(Event::GoalDetected { step: t as u64, scene, rho: 1.0 });
                armed = false;
                quiet_until = t + window;
            }
        }
    }
    EventStream::new(events)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDetector {
    pub window: usize,
    /// Per-tick probability of a spurious detection with a random label.
    pub false_fire_rate: f64,
    pub seed: u64,
}

impl Default for SceneDetector {
    fn default() -> Self {
        SceneDetector { window: 5, false_fire_rate: 0.02, seed: 0 }
    }
}

/// Fires once per room visit after the agent has been inside the room for
/// `window` consecutive ticks, plus random false fires.
pub fn scene_detector(stream: &EventStream, env: &Environment, cfg: &SceneDetector) -> EventStream {
    let positions = stream.positions_by_tick();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut events = stream.without_detections().events;
    let mut current: Option<usize> = None;
    let mut inside = 0usize;
    for (t, p) in positions.iter().enumerate() {
        let room = p.and_then(|p| env.room_at(p)).map(|r| r.scene);
        if room.is_some() && room == current {
            inside += 1;
        } else {
            current = room;
            inside = room.is_some() as usize;
        }
        if let Some(scene) = current.filter(|_| inside == cfg.window.max(1)) {
            events.push(Event::GoalDetected { step: t as u64, scene, rho: 1.0 });
        }
        if cfg.false_fire_rate > 0.0 && rng.random_bool(cfg.false_fire_rate.min(1.0)) {
            let scene = rng.random_range(0..env.num_scenes());
            events.push(Event::GoalDetected { step: t as u64, scene, rho: 1.0 });
        }
    }
    EventStream::new(events)
}
