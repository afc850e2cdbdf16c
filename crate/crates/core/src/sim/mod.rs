//! Synthetic everyday-activity streams: grid environments, scripted days,
//! goal detectors and noise injection.

mod detect;
mod env;
mod noise;
mod script;
mod simulate;
pub mod templates;

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DarkoError, Result};
use crate::mdp::Cell;

pub use detect::{ground_truth_detections, scene_detector, stop_detector, SceneDetector, StopDetector};
pub use env::{build_environment, Environment, EnvironmentSpec, Region, RoomSpec};
pub use noise::{inject_action_noise, inject_goal_noise, GoalNoise};
pub use script::{Activity, Direction, Routine, Script};
pub use simulate::simulate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectAction {
    Acquire,
    Release,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Goal { scene: usize },
    Action { action: ObjectAction, object: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Position { step: u64, position: Cell },
    ActionDetected { step: u64, action: ObjectAction, object: usize, confidence: f64 },
    GoalDetected { step: u64, scene: usize, rho: f64 },
    GroundTruth { step: u64, marker: Marker },
}

impl Event {
    pub fn step(&self) -> u64 {
        match *self {
            Event::Position { step, .. }
            | Event::ActionDetected { step, .. }
            | Event::GoalDetected { step, .. }
            | Event::GroundTruth { step, .. } => step,
        }
    }

    /// Order of processing within one tick.
    fn rank(&self) -> u8 {
        match self {
            Event::Position { .. } => 0,
            Event::ActionDetected { .. } | Event::GroundTruth { marker: Marker::Action { .. }, .. } => 1,
            Event::GoalDetected { .. } | Event::GroundTruth { marker: Marker::Goal { .. }, .. } => 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(events: Vec<Event>) -> Self {
        let mut s = EventStream { events };
        s.normalize();
        s
    }

    /// Stable sort by tick, then by processing rank.
    pub fn normalize(&mut self) {
        self.events.sort_by_key(|e| (e.step(), e.rank()));
    }

    pub fn last_step(&self) -> u64 {
        self.events.iter().map(Event::step).max().unwrap_or(0)
    }

    /// Ticks and scenes of ground-truth goal arrivals.
    pub fn ground_truth_goals(&self) -> Vec<(u64, usize)> {
        self.events
            .iter()
            .filter_map(|e| match *e {
                Event::GroundTruth { step, marker: Marker::Goal { scene } } => Some((step, scene)),
                _ => None,
            })
            .collect()
    }

    pub fn detected_goals(&self) -> Vec<(u64, usize, f64)> {
        self.events
            .iter()
            .filter_map(|e| match *e {
                Event::GoalDetected { step, scene, rho } => Some((step, scene, rho)),
                _ => None,
            })
            .collect()
    }

    /// Position at every tick from 0 to the last tick, carrying the last
    /// reported position forward.
    pub fn positions_by_tick(&self) -> Vec<Option<Cell>> {
        let mut out = vec![None; self.last_step() as usize + 1];
        for e in &self.events {
            if let Event::Position { step, position } = *e {
                out[step as usize] = Some(position);
            }
        }
        let mut last = None;
        for p in out.iter_mut() {
            match p {
                Some(_) => last = *p,
                None => *p = last,
            }
        }
        out
    }

    pub fn without_detections(&self) -> EventStream {
        EventStream { events: self.events.iter().copied().filter(|e| !matches!(e, Event::GoalDetected { .. })).collect() }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    /// Parses one event per line; blank lines are ignored. Lines that do not
    /// parse are skipped and counted.
    pub fn read_jsonl(text: &str) -> (EventStream, usize) {
        let mut events = Vec::new();
        let mut skipped = 0;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(line) {
                Ok(e) => events.push(e),
                Err(_) => skipped += 1,
            }
        }
        (EventStream::new(events), skipped)
    }

    /// Strict variant of [`EventStream::read_jsonl`].
    pub fn parse_jsonl(text: &str) -> Result<EventStream> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str::<Event>(line)
                .map_err(|err| DarkoError::Stream { line: i + 1, reason: err.to_string() })?;
            events.push(e);
        }
        Ok(EventStream::new(events))
    }

    /// SHA-256 of the JSONL serialisation, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_jsonl()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_and_order() {
        let s = EventStream::new(vec![
            Event::GoalDetected { step: 1, scene: 0, rho: 0.5 },
            Event::Position { step: 1, position: [1, 0, 0] },
            Event::GroundTruth { step: 1, marker: Marker::Action { action: ObjectAction::Acquire, object: 2 } },
            Event::Position { step: 0, position: [0, 0, 0] },
        ]);
        assert!(matches!(s.events[0], Event::Position { step: 0, .. }));
        assert!(matches!(s.events[3], Event::GoalDetected { .. }));
        let text = String::from_utf8(s.to_jsonl()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"kind\":\"position\""));
        let (back, skipped) = EventStream::read_jsonl(&format!("{text}not json\n"));
        assert_eq!(skipped, 1);
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert!(EventStream::parse_jsonl("{").is_err());
    }

    #[test]
    fn positions_carry_forward() {
        let s = EventStream::new(vec![
            Event::Position { step: 0, position: [0, 0, 0] },
            Event::Position { step: 3, position: [1, 0, 0] },
        ]);
        assert_eq!(s.positions_by_tick(), vec![Some([0, 0, 0]), Some([0, 0, 0]), Some([0, 0, 0]), Some([1, 0, 0])]);
    }
}
