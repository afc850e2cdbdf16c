use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{DarkoError, Result};
use crate::mdp::{Cell, MdpConfig, Neighborhood};

/// Axis-aligned box of cells, bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub min: Cell,
    pub max: Cell,
}

impl Region {
    pub fn contains(&self, c: Cell) -> bool {
        (0..3).all(|i| c[i] >= self.min[i] && c[i] <= self.max[i])
    }

    pub fn overlaps(&self, o: &Region) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min[2]..=self.max[2]).flat_map(move |z| {
            (self.min[1]..=self.max[1]).flat_map(move |y| (self.min[0]..=self.max[0]).map(move |x| [x, y, z]))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub scene: usize,
    pub region: Region,
    /// Cell where activities in this room take place.
    pub spot: Cell,
}

/// Declarative environment: free space is the union of rooms, corridors and
/// doors, minus explicit walls. Vertical moves are allowed only at stairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub name: String,
    pub extent: Cell,
    pub scenes: Vec<String>,
    pub objects: Vec<String>,
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub corridors: Vec<Region>,
    #[serde(default)]
    pub doors: Vec<Cell>,
    #[serde(default)]
    pub stairs: Vec<[i32; 2]>,
    #[serde(default)]
    pub walls: Vec<Cell>,
    pub object_spawns: Vec<Cell>,
    pub start: Cell,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Environment {
    pub spec: EnvironmentSpec,
    free: Vec<bool>,
    room_of: Vec<Option<usize>>,
    stairs: HashSet<[i32; 2]>,
}

impl Environment {
    pub fn extent(&self) -> Cell {
        self.spec.extent
    }

    pub fn num_scenes(&self) -> usize {
        self.spec.scenes.len()
    }

    pub fn num_objects(&self) -> usize {
        self.spec.objects.len()
    }

    pub fn mdp_config(&self) -> MdpConfig {
        let e = self.spec.extent;
        MdpConfig {
            bounds: [e[0] - 1, e[1] - 1, e[2] - 1],
            num_objects: self.num_objects(),
            num_scenes: self.num_scenes(),
            neighborhood: Neighborhood::Six,
        }
    }

    pub fn in_grid(&self, c: Cell) -> bool {
        (0..3).all(|i| c[i] >= 0 && c[i] < self.spec.extent[i])
    }

    pub fn index(&self, c: Cell) -> usize {
        let e = self.spec.extent;
        ((c[2] * e[1] + c[1]) * e[0] + c[0]) as usize
    }

    pub fn num_cells(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_grid(c) && self.free[self.index(c)]
    }

    pub fn room_at(&self, c: Cell) -> Option<&RoomSpec> {
        if !self.in_grid(c) {
            return None;
        }
        self.room_of[self.index(c)].map(|r| &self.spec.rooms[r])
    }

    pub fn room_for_scene(&self, scene: usize) -> Option<&RoomSpec> {
        self.spec.rooms.iter().find(|r| r.scene == scene)
    }

    /// Free neighbours in a fixed order: +x, -x, +y, -y, then vertical moves
    /// where stairs connect floors.
    pub fn neighbors(&self, c: Cell) -> Vec<Cell> {
        let mut out = Vec::with_capacity(6);
        for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]] {
            let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
            if self.is_free(n) {
                out.push(n);
            }
        }
        if self.stairs.contains(&[c[0], c[1]]) {
            for dz in [1, -1] {
                let n = [c[0], c[1], c[2] + dz];
                if self.is_free(n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Breadth-first distance from every cell to `target` (`u32::MAX` when
    /// unreachable).
    pub fn distance_field(&self, target: Cell) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.free.len()];
        if !self.is_free(target) {
            return dist;
        }
        dist[self.index(target)] = 0;
        let mut q = VecDeque::from([target]);
        while let Some(c) = q.pop_front() {
            let d = dist[self.index(c)];
            for n in self.neighbors(c) {
                let i = self.index(n);
                if dist[i] == u32::MAX {
                    dist[i] = d + 1;
                    q.push_back(n);
                }
            }
        }
        dist
    }

    /// Scene of the room containing `c`, or of the nearest room by walking
    /// distance.
    pub fn nearest_scene(&self, c: Cell) -> Option<usize> {
        if let Some(r) = self.room_at(c) {
            return Some(r.scene);
        }
        if !self.is_free(c) {
            return None;
        }
        let mut seen = vec![false; self.free.len()];
        seen[self.index(c)] = true;
        let mut q = VecDeque::from([c]);
        while let Some(u) = q.pop_front() {
            for n in self.neighbors(u) {
                let i = self.index(n);
                if seen[i] {
                    continue;
                }
                if let Some(r) = self.room_of[i] {
                    return Some(self.spec.rooms[r].scene);
                }
                seen[i] = true;
                q.push_back(n);
            }
        }
        None
    }
}

pub fn build_environment(spec: EnvironmentSpec) -> Result<Environment> {
    let e = spec.extent;
    if e.iter().any(|&x| x <= 0) {
        return Err(DarkoError::Config(format!("extent must be positive, got {e:?}")));
    }
    if spec.objects.len() > crate::mdp::HeldSet::MAX_OBJECTS {
        return Err(DarkoError::Config("too many objects".into()));
    }
    if spec.object_spawns.len() != spec.objects.len() {
        return Err(DarkoError::Config("one spawn cell per object required".into()));
    }
    for (i, r) in spec.rooms.iter().enumerate() {
        if r.scene >= spec.scenes.len() {
            return Err(DarkoError::Config(format!("room {i} has unknown scene {}", r.scene)));
        }
        if !r.region.contains(r.spot) {
            return Err(DarkoError::Config(format!("room {i} spot outside its region")));
        }
        for (j, o) in spec.rooms.iter().enumerate().skip(i + 1) {
            if r.region.overlaps(&o.region) {
                return Err(DarkoError::Config(format!("rooms {i} and {j} overlap")));
            }
            if r.scene == o.scene {
                return Err(DarkoError::Config(format!("scene {} has two rooms", r.scene)));
            }
        }
    }
    let n = (e[0] * e[1] * e[2]) as usize;
    let mut env = Environment { free: vec![false; n], room_of: vec![None; n], stairs: spec.stairs.iter().copied().collect(), spec };
    let open = |env: &mut Environment, c: Cell, room: Option<usize>| -> Result<()> {
        if !env.in_grid(c) {
            return Err(DarkoError::Config(format!("cell {c:?} outside the grid")));
        }
        let i = env.index(c);
        env.free[i] = true;
        if room.is_some() {
            env.room_of[i] = room;
        }
        Ok(())
    };
    for r in 0..env.spec.rooms.len() {
        let region = env.spec.rooms[r].region;
        for c in region.cells() {
            open(&mut env, c, Some(r))?;
        }
    }
    for region in env.spec.corridors.clone() {
        for c in region.cells() {
            open(&mut env, c, None)?;
        }
    }
    for c in env.spec.doors.clone() {
        open(&mut env, c, None)?;
    }
    for c in env.spec.walls.clone() {
        if env.in_grid(c) {
            let i = env.index(c);
            env.free[i] = false;
            env.room_of[i] = None;
        }
    }
    let mut required: Vec<(String, Cell)> = vec![("start".into(), env.spec.start)];
    for r in &env.spec.rooms {
        required.push((format!("{} spot", env.spec.scenes[r.scene]), r.spot));
    }
    for (o, &c) in env.spec.objects.iter().zip(&env.spec.object_spawns) {
        required.push((format!("{o} spawn"), c));
    }
    for (what, c) in &required {
        if !env.is_free(*c) {
            return Err(DarkoError::Config(format!("{what} {c:?} is blocked")));
        }
    }
    let dist = env.distance_field(env.spec.start);
    let unreachable: Vec<String> =
        required.iter().filter(|(_, c)| dist[env.index(*c)] == u32::MAX).map(|(w, _)| w.clone()).collect();
    if !unreachable.is_empty() {
        return Err(DarkoError::DisconnectedRooms(unreachable.join(", ")));
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rooms(door: bool) -> EnvironmentSpec {
        EnvironmentSpec {
            name: "t".into(),
            extent: [7, 3, 1],
            scenes: vec!["a".into(), "b".into()],
            objects: vec!["o".into()],
            rooms: vec![
                RoomSpec { scene: 0, region: Region { min: [0, 0, 0], max: [2, 2, 0] }, spot: [1, 1, 0] },
                RoomSpec { scene: 1, region: Region { min: [4, 0, 0], max: [6, 2, 0] }, spot: [5, 1, 0] },
            ],
            corridors: vec![],
            doors: if door { vec![[3, 1, 0]] } else { vec![] },
            stairs: vec![],
            walls: vec![],
            object_spawns: vec![[0, 0, 0]],
            start: [1, 1, 0],
            seed: 0,
        }
    }

    #[test]
    fn wall_separated_rooms_rejected() {
        assert!(matches!(build_environment(two_rooms(false)), Err(DarkoError::DisconnectedRooms(_))));
        let env = build_environment(two_rooms(true)).unwrap();
        assert_eq!(env.distance_field([5, 1, 0])[env.index([1, 1, 0])], 4);
        assert_eq!(env.nearest_scene([2, 1, 0]), Some(0));
        assert!(env.nearest_scene([3, 1, 0]).is_some());
        assert_eq!(env.room_at([5, 2, 0]).unwrap().scene, 1);
    }

    #[test]
    fn stairs_gate_vertical_moves() {
        let mut spec = two_rooms(true);
        spec.extent = [7, 3, 2];
        spec.corridors = vec![Region { min: [0, 0, 1], max: [6, 0, 1] }];
        let env = build_environment(spec.clone()).unwrap();
        assert!(!env.neighbors([1, 0, 0]).contains(&[1, 0, 1]));
        spec.stairs = vec![[1, 0]];
        let env = build_environment(spec).unwrap();
        assert!(env.neighbors([1, 0, 0]).contains(&[1, 0, 1]));
    }
}
