//! Built-in environment templates with daily routines: two homes, two
//! offices and a lab. Floors share one layout: a row of rooms below a
//! two-cell corridor and a row above it, each room opening onto the corridor
//! through a one-cell door.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::mdp::Cell;

use super::env::{build_environment, Environment, EnvironmentSpec, Region, RoomSpec};
use super::script::{Activity, Routine, Transition};

pub const NAMES: [&str; 5] = ["home1", "home2", "office1", "office2", "lab1"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub environment: EnvironmentSpec,
    pub routine: Routine,
}

impl Template {
    pub fn build(&self) -> Result<Environment> {
        let env = build_environment(self.environment.clone())?;
        self.routine.validate(&env)?;
        Ok(env)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Template> {
        Ok(toml::from_str(text)?)
    }
}

pub fn template(name: &str) -> Result<Template> {
    match name {
        "home1" => Ok(home1()),
        "home2" => Ok(home2()),
        "office1" => Ok(office1()),
        "office2" => Ok(office2()),
        "lab1" => Ok(lab1()),
        _ => Err(DarkoError::Config(format!("unknown template {name}; expected one of {}", NAMES.join(", ")))),
    }
}

const DEPTH: i32 = 16;

enum Side {
    Below,
    Above,
}

struct Builder {
    name: String,
    width: i32,
    floors: i32,
    scenes: Vec<String>,
    objects: Vec<String>,
    rooms: Vec<RoomSpec>,
    corridors: Vec<Region>,
    doors: Vec<Cell>,
    stairs: Vec<[i32; 2]>,
    spawns: Vec<Cell>,
    slots: HashMap<usize, usize>,
}

impl Builder {
    fn new(name: &str, width: i32, floors: i32, scenes: &[&str]) -> Self {
        let corridors = (0..floors).map(|z| Region { min: [0, 7, z], max: [width - 1, 8, z] }).collect();
        Builder {
            name: name.into(),
            width,
            floors,
            scenes: scenes.iter().map(|s| s.to_string()).collect(),
            objects: Vec::new(),
            rooms: Vec::new(),
            corridors,
            doors: Vec::new(),
            stairs: Vec::new(),
            spawns: Vec::new(),
            slots: HashMap::new(),
        }
    }

    fn scene(&self, name: &str) -> usize {
        self.scenes.iter().position(|s| s == name).unwrap_or_else(|| panic!("unknown scene {name}"))
    }

    fn object(&self, name: &str) -> usize {
        self.objects.iter().position(|s| s == name).unwrap_or_else(|| panic!("unknown object {name}"))
    }

    /// Room spanning `x0..=x1`; the door sits at `door_x`, the activity spot at
    /// `spot_x`, two cells in from the back wall.
    fn room(&mut self, scene: &str, z: i32, side: Side, x0: i32, x1: i32, door_x: i32, spot_x: i32) -> &mut Self {
        let (y0, y1, door_y, spot_y) = match side {
            Side::Below => (0, 5, 6, 1),
            Side::Above => (10, 15, 9, 14),
        };
        let scene = self.scene(scene);
        self.rooms.push(RoomSpec { scene, region: Region { min: [x0, y0, z], max: [x1, y1, z] }, spot: [spot_x, spot_y, z] });
        self.doors.push([door_x, door_y, z]);
        self
    }

    /// Places the object in the next free back-corner slot of the room.
    fn spawn(&mut self, object: &str, scene: &str) -> &mut Self {
        let scene = self.scene(scene);
        let r = self.rooms.iter().position(|r| r.scene == scene).expect("room exists");
        let reg = self.rooms[r].region;
        let back = if reg.min[1] == 0 { 0 } else { DEPTH - 1 };
        let k = self.slots.entry(r).or_insert(0);
        let x = if *k % 2 == 0 { reg.max[0] - (*k / 2) as i32 } else { reg.min[0] + (*k / 2) as i32 };
        *k += 1;
        self.objects.push(object.into());
        self.spawns.push([x, back, reg.min[2]]);
        self
    }

    fn stairs(&mut self, x: i32, y: i32) -> &mut Self {
        self.stairs.push([x, y]);
        self
    }

    fn finish(&self, start_scene: &str, routine: &[(&str, &[&str], &str, &[&str], &[(&str, f64)])], day_end: &str) -> Template {
        let start = self.rooms.iter().find(|r| r.scene == self.scene(start_scene)).expect("start room").spot;
        let environment = EnvironmentSpec {
            name: self.name.clone(),
            extent: [self.width, DEPTH, self.floors],
            scenes: self.scenes.clone(),
            objects: self.objects.clone(),
            rooms: self.rooms.clone(),
            corridors: self.corridors.clone(),
            doors: self.doors.clone(),
            stairs: self.stairs.clone(),
            walls: Vec::new(),
            object_spawns: self.spawns.clone(),
            start,
            seed: 0,
        };
        let index = |n: &str| routine.iter().position(|a| a.0 == n).unwrap_or_else(|| panic!("unknown activity {n}"));
        let activities = routine
            .iter()
            .map(|(name, acquire, target, release, next)| Activity {
                name: name.to_string(),
                acquire: acquire.iter().map(|o| self.object(o)).collect(),
                target: self.scene(target),
                release: release.iter().map(|o| self.object(o)).collect(),
                next: next.iter().map(|(n, w)| Transition { to: index(n), weight: *w }).collect(),
            })
            .collect();
        Template { environment, routine: Routine { activities, day_end: index(day_end), directions_per_day: 10, dwell: 8 } }
    }
}

type Act<'a> = (&'a str, &'a [&'a str], &'a str, &'a [&'a str], &'a [(&'a str, f64)]);

fn home1() -> Template {
    let mut b = Builder::new(
        "home1",
        20,
        2,
        &["bathroom", "bedroom", "exit", "dining room", "kitchen", "living room", "office"],
    );
    b.room("kitchen", 0, Side::Below, 0, 5, 4, 2)
        .room("dining room", 0, Side::Below, 7, 12, 8, 10)
        .room("living room", 0, Side::Below, 14, 19, 15, 17)
        .room("exit", 0, Side::Above, 0, 5, 3, 2)
        .room("bedroom", 1, Side::Below, 0, 5, 4, 1)
        .room("bathroom", 1, Side::Below, 7, 12, 8, 11)
        .room("office", 1, Side::Above, 14, 19, 15, 17)
        .stairs(10, 8);
    b.spawn("bookbag", "bedroom")
        .spawn("book", "living room")
        .spawn("blanket", "bedroom")
        .spawn("coat", "exit")
        .spawn("laptop", "office")
        .spawn("mug", "kitchen")
        .spawn("plate", "kitchen")
        .spawn("snack", "kitchen")
        .spawn("towel", "bathroom");
    let routine: &[Act] = &[
        ("sleep", &[], "bedroom", &[], &[("shower", 0.9), ("coffee", 0.1)]),
        ("shower", &["towel"], "bathroom", &["towel"], &[("dress", 1.0)]),
        ("dress", &[], "bedroom", &[], &[("coffee", 1.0)]),
        ("coffee", &["mug"], "kitchen", &["mug"], &[("breakfast", 0.9), ("work", 0.1)]),
        ("breakfast", &["plate", "snack"], "dining room", &["plate", "snack"], &[("clean", 1.0)]),
        ("clean", &["plate"], "kitchen", &["plate"], &[("work", 0.9), ("leave", 0.1)]),
        ("work", &["laptop"], "office", &["laptop"], &[("lunch", 0.9), ("tv", 0.1)]),
        ("lunch", &["snack", "plate"], "dining room", &["snack", "plate"], &[("tv", 0.85), ("leave", 0.15)]),
        ("tv", &["blanket"], "living room", &["blanket"], &[("read", 0.9), ("lunch", 0.1)]),
        ("read", &["book"], "bedroom", &["book"], &[("tv", 0.5), ("work", 0.5)]),
        ("leave", &["coat", "bookbag"], "exit", &["coat", "bookbag"], &[("come back", 1.0)]),
        ("come back", &[], "living room", &[], &[("read", 0.6), ("work", 0.4)]),
    ];
    b.finish("bedroom", routine, "sleep")
}

fn home2() -> Template {
    let mut b = Builder::new(
        "home2",
        20,
        2,
        &["bathroom", "bedroom", "exit", "dining room", "kitchen", "living room", "office", "laundry room"],
    );
    b.room("living room", 0, Side::Below, 0, 5, 5, 2)
        .room("kitchen", 0, Side::Below, 7, 12, 7, 11)
        .room("dining room", 0, Side::Below, 14, 19, 14, 16)
        .room("exit", 0, Side::Above, 0, 5, 2, 3)
        .room("laundry room", 0, Side::Above, 14, 19, 16, 18)
        .room("office", 1, Side::Below, 0, 5, 1, 3)
        .room("bedroom", 1, Side::Above, 7, 12, 10, 9)
        .room("bathroom", 1, Side::Below, 14, 19, 17, 15)
        .stairs(6, 7);
    b.spawn("bookbag", "office")
        .spawn("book", "bedroom")
        .spawn("blanket", "living room")
        .spawn("coat", "exit")
        .spawn("laptop", "office")
        .spawn("mug", "kitchen")
        .spawn("plate", "kitchen")
        .spawn("snack", "kitchen")
        .spawn("towel", "bathroom")
        .spawn("clothes", "bedroom")
        .spawn("keys", "exit");
    let routine: &[Act] = &[
        ("sleep", &[], "bedroom", &[], &[("shower", 0.9), ("laundry", 0.1)]),
        ("shower", &["towel"], "bathroom", &["towel"], &[("laundry", 0.85), ("coffee", 0.15)]),
        ("laundry", &["clothes"], "laundry room", &["clothes"], &[("coffee", 1.0)]),
        ("coffee", &["mug"], "kitchen", &["mug"], &[("breakfast", 0.9), ("work", 0.1)]),
        ("breakfast", &["plate", "snack"], "dining room", &["plate", "snack"], &[("clean", 1.0)]),
        ("clean", &["plate"], "kitchen", &["plate"], &[("work", 0.9), ("tv", 0.1)]),
        ("work", &["laptop"], "office", &["laptop"], &[("lunch", 0.9), ("leave", 0.1)]),
        ("lunch", &["snack", "plate"], "dining room", &["snack", "plate"], &[("tv", 0.9), ("leave", 0.1)]),
        ("tv", &["blanket"], "living room", &["blanket"], &[("read", 0.9), ("work", 0.1)]),
        ("read", &["book"], "bedroom", &["book"], &[("tv", 0.5), ("laundry", 0.5)]),
        ("leave", &["coat", "keys", "bookbag"], "exit", &["coat", "keys", "bookbag"], &[("come back", 1.0)]),
        ("come back", &[], "living room", &[], &[("read", 0.6), ("coffee", 0.4)]),
    ];
    b.finish("bedroom", routine, "sleep")
}

fn office1() -> Template {
    let mut b = Builder::new(
        "office1",
        24,
        1,
        &["exit", "desk", "meeting room", "kitchen", "printer room", "lounge", "restroom"],
    );
    b.room("exit", 0, Side::Below, 0, 4, 3, 1)
        .room("desk", 0, Side::Below, 6, 11, 7, 9)
        .room("meeting room", 0, Side::Below, 13, 18, 17, 15)
        .room("restroom", 0, Side::Below, 20, 23, 21, 22)
        .room("kitchen", 0, Side::Above, 0, 5, 4, 2)
        .room("printer room", 0, Side::Above, 7, 11, 8, 10)
        .room("lounge", 0, Side::Above, 13, 18, 14, 17);
    b.spawn("coat", "exit")
        .spawn("bookbag", "exit")
        .spawn("laptop", "desk")
        .spawn("mug", "kitchen")
        .spawn("notebook", "desk")
        .spawn("papers", "printer room")
        .spawn("snack", "kitchen")
        .spawn("water bottle", "kitchen")
        .spawn("phone", "desk");
    let routine: &[Act] = &[
        ("leave", &["coat", "bookbag"], "exit", &["coat", "bookbag"], &[("arrive", 1.0)]),
        ("arrive", &[], "desk", &[], &[("coffee", 0.9), ("print", 0.1)]),
        ("coffee", &["mug"], "kitchen", &["mug"], &[("desk work", 1.0)]),
        ("desk work", &[], "desk", &[], &[("print", 0.9), ("meeting", 0.1)]),
        ("print", &["papers"], "printer room", &["papers"], &[("meeting", 0.9), ("back to desk", 0.1)]),
        ("meeting", &["notebook", "laptop"], "meeting room", &["notebook", "laptop"], &[("back to desk", 1.0)]),
        ("back to desk", &[], "desk", &[], &[("lunch", 0.9), ("restroom", 0.1)]),
        ("lunch", &["snack", "water bottle"], "lounge", &["snack", "water bottle"], &[("restroom", 0.9), ("coffee", 0.1)]),
        ("restroom", &[], "restroom", &[], &[("call", 0.85), ("back to desk", 0.15)]),
        ("call", &["phone"], "lounge", &["phone"], &[("back to desk", 1.0)]),
    ];
    b.finish("exit", routine, "leave")
}

fn office2() -> Template {
    let mut b = Builder::new(
        "office2",
        20,
        2,
        &["exit", "desk", "meeting room", "kitchen", "printer room", "lounge", "restroom"],
    );
    b.room("exit", 0, Side::Below, 0, 5, 2, 4)
        .room("kitchen", 0, Side::Below, 7, 12, 11, 8)
        .room("lounge", 0, Side::Above, 7, 12, 8, 10)
        .room("restroom", 0, Side::Above, 14, 19, 18, 16)
        .room("desk", 1, Side::Below, 0, 5, 3, 1)
        .room("meeting room", 1, Side::Above, 7, 12, 12, 9)
        .room("printer room", 1, Side::Below, 14, 19, 15, 18)
        .stairs(19, 8);
    b.spawn("coat", "exit")
        .spawn("bookbag", "exit")
        .spawn("laptop", "desk")
        .spawn("mug", "kitchen")
        .spawn("notebook", "desk")
        .spawn("papers", "printer room")
        .spawn("snack", "kitchen")
        .spawn("water bottle", "lounge")
        .spawn("phone", "desk");
    let routine: &[Act] = &[
        ("leave", &["coat", "bookbag"], "exit", &["coat", "bookbag"], &[("arrive", 1.0)]),
        ("arrive", &[], "desk", &[], &[("coffee", 0.9), ("meeting", 0.1)]),
        ("coffee", &["mug"], "kitchen", &["mug"], &[("desk work", 1.0)]),
        ("desk work", &[], "desk", &[], &[("meeting", 0.9), ("print", 0.1)]),
        ("meeting", &["notebook", "laptop"], "meeting room", &["notebook", "laptop"], &[("back to desk", 1.0)]),
        ("back to desk", &[], "desk", &[], &[("lunch", 0.9), ("print", 0.1)]),
        ("lunch", &["snack"], "lounge", &["snack"], &[("restroom", 0.9), ("call", 0.1)]),
        ("restroom", &[], "restroom", &[], &[("print", 0.85), ("coffee", 0.15)]),
        ("print", &["papers"], "printer room", &["papers"], &[("call", 0.9), ("back to desk", 0.1)]),
        ("call", &["phone"], "lounge", &["phone"], &[("back to desk", 1.0)]),
    ];
    b.finish("exit", routine, "leave")
}

fn lab1() -> Template {
    let mut b = Builder::new("lab1", 20, 1, &["exit", "desk", "computer", "workbench", "storage", "sink"]);
    b.room("exit", 0, Side::Below, 0, 5, 4, 2)
        .room("desk", 0, Side::Below, 7, 12, 8, 11)
        .room("computer", 0, Side::Below, 14, 19, 17, 15)
        .room("workbench", 0, Side::Above, 0, 5, 1, 3)
        .room("storage", 0, Side::Above, 7, 12, 11, 8)
        .room("sink", 0, Side::Above, 14, 19, 14, 18);
    b.spawn("coat", "exit")
        .spawn("laptop", "desk")
        .spawn("tools", "storage")
        .spawn("samples", "storage")
        .spawn("notebook", "desk");
    let routine: &[Act] = &[
        ("leave", &["coat"], "exit", &["coat"], &[("arrive", 1.0)]),
        ("arrive", &[], "desk", &[], &[("check data", 0.9), ("fetch", 0.1)]),
        ("check data", &["laptop"], "computer", &["laptop"], &[("fetch", 1.0)]),
        ("fetch", &["tools", "samples"], "workbench", &["tools", "samples"], &[("clean", 0.9), ("notes", 0.1)]),
        ("clean", &[], "sink", &[], &[("store", 1.0)]),
        ("store", &[], "storage", &[], &[("notes", 1.0)]),
        ("notes", &["notebook"], "desk", &["notebook"], &[("check data", 0.85), ("fetch", 0.15)]),
    ];
    b.finish("exit", routine, "leave")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_build_and_roundtrip() {
        let expected = [("home1", 7, 9), ("home2", 8, 11), ("office1", 7, 9), ("office2", 7, 9), ("lab1", 6, 5)];
        for (name, scenes, objects) in expected {
            let t = template(name).unwrap();
            let env = t.build().unwrap();
            assert_eq!((env.num_scenes(), env.num_objects()), (scenes, objects), "{name}");
            let back = Template::from_toml(&t.to_toml().unwrap()).unwrap();
            assert_eq!(back, t);
            let script = t.routine.sample_script(3, 1);
            script.validate(&env).unwrap();
            let targets: std::collections::BTreeSet<usize> = t.routine.activities.iter().map(|a| a.target).collect();
            assert_eq!(targets.len(), scenes, "{name}: every scene is a target");
        }
        assert!(template("nope").is_err());
    }
}
