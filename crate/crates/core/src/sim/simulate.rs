use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DarkoError, Result};
use crate::mdp::{Cell, HeldSet};

use super::env::Environment;
use super::script::Script;
use super::{Event, EventStream, Marker, ObjectAction};

struct Walker<'a> {
    env: &'a Environment,
    rng: ChaCha8Rng,
    noise: f64,
    pos: Cell,
    tick: u64,
    events: Vec<Event>,
    fields: HashMap<Cell, Vec<u32>>,
}

impl Walker<'_> {
    fn advance(&mut self) {
        self.tick += 1;
        self.events.push(Event::Position { step: self.tick, position: self.pos });
    }

    /// Shortest-path walk with deterministic tie-breaking; with probability
    /// `noise` each step goes to a random free neighbour instead.
    fn walk_to(&mut self, target: Cell) -> Result<()> {
        let env = self.env;
        let field = self.fields.entry(target).or_insert_with(|| env.distance_field(target));
        if field[env.index(self.pos)] == u32::MAX {
            return Err(DarkoError::Config(format!("{target:?} unreachable from {:?}", self.pos)));
        }
        while self.pos != target {
            let nbrs = env.neighbors(self.pos);
            self.pos = if self.noise > 0.0 && self.rng.random_bool(self.noise) {
                nbrs[self.rng.random_range(0..nbrs.len())]
            } else {
                let d = field[env.index(self.pos)];
                *nbrs.iter().find(|&&n| field[env.index(n)] + 1 == d).expect("distance field is consistent")
            };
            self.tick += 1;
            self.events.push(Event::Position { step: self.tick, position: self.pos });
        }
        Ok(())
    }

    fn act(&mut self, action: ObjectAction, object: usize) {
        self.advance();
        let step = self.tick;
        self.events.push(Event::ActionDetected { step, action, object, confidence: 1.0 });
        self.events.push(Event::GroundTruth { step, marker: Marker::Action { action, object } });
    }
}

/// Executes `script` tick by tick: one cell move, one object action or one
/// idle tick per tick. Positions are reported every tick; ground-truth goal
/// markers are emitted on arrival at each direction's target spot.
pub fn simulate(env: &Environment, script: &Script, agent_noise: f64, seed: u64) -> Result<EventStream> {
    script.validate(env)?;
    if !(0.0..1.0).contains(&agent_noise) {
        return Err(DarkoError::Config(format!("agent noise must lie in [0, 1), got {agent_noise}")));
    }
    let mut w = Walker {
        env,
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: agent_noise,
        pos: env.spec.start,
        tick: 0,
        events: vec![Event::Position { step: 0, position: env.spec.start }],
        fields: HashMap::new(),
    };
    let mut held = HeldSet::empty();
    let mut location: Vec<Cell> = env.spec.object_spawns.clone();
    for d in &script.directions {
        let began = w.tick;
        for &o in &d.acquire {
            if held.contains(o) {
                continue;
            }
            w.walk_to(location[o])?;
            w.act(ObjectAction::Acquire, o);
            held = held.with(o);
        }
        let spot = env.room_for_scene(d.target).expect("validated").spot;
        w.walk_to(spot)?;
        if w.tick == began {
            w.advance();
        }
        w.events.push(Event::GroundTruth { step: w.tick, marker: Marker::Goal { scene: d.target } });
        for _ in 0..d.dwell {
            w.advance();
        }
        for &o in &d.release {
            if !held.contains(o) {
                continue;
            }
            w.act(ObjectAction::Release, o);
            held = held.without(o);
            location[o] = w.pos;
        }
    }
    Ok(EventStream::new(w.events))
}
