//! Deterministic voxel world.
//!
//! Coordinates are `(x, y, z)` with `y` vertical. A column is an `(x, z)` pair.
//! North is `-z`, east is `+x`, south is `+z`, west is `-x`. There is no gravity:
//! agents may occupy any non-solid voxel they can reach with axis moves.
//!
//! The grid is stored flat, indexed by `x + w * (z + l * y)`. Out-of-bounds
//! reads return air.

mod blocks;
mod gen;
mod observe;
pub mod path;
mod snapshot;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blocks::*;
pub use gen::{biome_map, gen_world, WorldConfig};
pub use observe::{AudioCue, Grid2, Observation, VIEW_RADIUS};

/// Per-invocation cap on `MoveTo` path length.
pub const MOVE_TO_CAP: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("invalid mine: {0}")]
    InvalidMine(String),
    #[error("unknown agent {0}")]
    UnknownAgent(u32),
    #[error("snapshot parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl WorldError {
    pub fn kind(&self) -> &'static str {
        match self {
            WorldError::Config(_) => "ConfigError",
            WorldError::InvalidPlacement(_) => "InvalidPlacement",
            WorldError::InvalidMine(_) => "InvalidMine",
            WorldError::UnknownAgent(_) => "UnknownAgent",
            WorldError::Parse { .. } => "ParseError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Pos { x, y, z }
    }

    pub fn column(self) -> Column {
        Column { x: self.x, z: self.z }
    }

    pub fn step(self, dir: Dir) -> Pos {
        let (dx, dy, dz) = dir.offset();
        Pos::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Pos {
        Pos::new(self.x + dx, self.y + dy, self.z + dz)
    }

    /// Direction of a unit axis offset from `self` to `other`, if adjacent.
    pub fn dir_to(self, other: Pos) -> Option<Dir> {
        Dir::ALL.into_iter().find(|d| self.step(*d) == other)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Column {
    pub x: i32,
    pub z: i32,
}

impl Column {
    pub const fn new(x: i32, z: i32) -> Self {
        Column { x, z }
    }

    pub fn at(self, y: i32) -> Pos {
        Pos::new(self.x, y, self.z)
    }

    pub fn step(self, dir: Dir) -> Column {
        let (dx, _, dz) = dir.offset();
        Column::new(self.x + dx, self.z + dz)
    }

    pub fn manhattan(self, other: Column) -> i32 {
        (self.x - other.x).abs() + (self.z - other.z).abs()
    }

    pub fn chebyshev(self, other: Column) -> i32 {
        (self.x - other.x).abs().max((self.z - other.z).abs())
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.z)
    }
}

/// Axis-aligned column rectangle, `x0..x1` by `z0..z1` (half-open).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub z0: i32,
    pub x1: i32,
    pub z1: i32,
}

impl Rect {
    pub const fn new(x0: i32, z0: i32, x1: i32, z1: i32) -> Self {
        Rect { x0, z0, x1, z1 }
    }

    pub fn full(dims: Dims) -> Self {
        Rect::new(0, 0, dims.w, dims.l)
    }

    pub fn width(self) -> i32 {
        (self.x1 - self.x0).max(0)
    }

    pub fn length(self) -> i32 {
        (self.z1 - self.z0).max(0)
    }

    pub fn area(self) -> usize {
        (self.width() * self.length()) as usize
    }

    pub fn is_empty(self) -> bool {
        self.area() == 0
    }

    pub fn contains(self, c: Column) -> bool {
        c.x >= self.x0 && c.x < self.x1 && c.z >= self.z0 && c.z < self.z1
    }

    pub fn intersects(self, other: Rect) -> bool {
        self.x0.max(other.x0) < self.x1.min(other.x1) && self.z0.max(other.z0) < self.z1.min(other.z1)
    }

    pub fn center(self) -> Column {
        Column::new((self.x0 + self.x1 - 1).div_euclid(2), (self.z0 + self.z1 - 1).div_euclid(2))
    }

    pub fn columns(self) -> impl Iterator<Item = Column> {
        (self.z0..self.z1).flat_map(move |z| (self.x0..self.x1).map(move |x| Column::new(x, z)))
    }

    pub fn within(self, dims: Dims) -> bool {
        self.x0 >= 0 && self.z0 >= 0 && self.x1 <= dims.w && self.z1 <= dims.l && self.x0 <= self.x1 && self.z0 <= self.z1
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})x[{},{})", self.x0, self.x1, self.z0, self.z1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    North,
    East,
    South,
    West,
    Up,
    Down,
}

impl Dir {
    pub const ALL: [Dir; 6] = [Dir::North, Dir::East, Dir::South, Dir::West, Dir::Up, Dir::Down];
    /// Tie-break order used by every search in the crate.
    pub const HORIZONTAL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn offset(self) -> (i32, i32, i32) {
        match self {
            Dir::North => (0, 0, -1),
            Dir::East => (1, 0, 0),
            Dir::South => (0, 0, 1),
            Dir::West => (-1, 0, 0),
            Dir::Up => (0, 1, 0),
            Dir::Down => (0, -1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dir::North => "north",
            Dir::East => "east",
            Dir::South => "south",
            Dir::West => "west",
            Dir::Up => "up",
            Dir::Down => "down",
        }
    }

    pub fn from_name(s: &str) -> Option<Dir> {
        Dir::ALL.into_iter().find(|d| d.name() == s)
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::North => Dir::South,
            Dir::South => Dir::North,
            Dir::East => Dir::West,
            Dir::West => Dir::East,
            Dir::Up => Dir::Down,
            Dir::Down => Dir::Up,
        }
    }

    /// Bucket an offset by its dominant axis. Horizontal axes win ties, then
    /// the `ALL` order.
    pub fn bucket(dx: i32, dy: i32, dz: i32) -> Dir {
        let (ax, ay, az) = (dx.abs(), dy.abs(), dz.abs());
        if az >= ax && az >= ay && az > 0 {
            if dz < 0 {
                Dir::North
            } else {
                Dir::South
            }
        } else if ax >= ay && ax > 0 {
            if dx > 0 {
                Dir::East
            } else {
                Dir::West
            }
        } else if dy < 0 {
            Dir::Down
        } else {
            Dir::Up
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dims {
    pub w: i32,
    pub l: i32,
    pub h: i32,
}

impl Dims {
    pub const fn new(w: i32, l: i32, h: i32) -> Self {
        Dims { w, l, h }
    }

    pub fn volume(self) -> usize {
        (self.w * self.l * self.h) as usize
    }

    pub fn columns(self) -> usize {
        (self.w * self.l) as usize
    }

    pub fn contains(self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x < self.w && p.y < self.h && p.z < self.l
    }

    pub fn contains_column(self, c: Column) -> bool {
        c.x >= 0 && c.z >= 0 && c.x < self.w && c.z < self.l
    }

    pub fn column_index(self, c: Column) -> usize {
        (c.x + self.w * c.z) as usize
    }

    pub fn column_at(self, idx: usize) -> Column {
        Column::new(idx as i32 % self.w, idx as i32 / self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Biome {
    Plains,
    Forest,
    Desert,
    Mountains,
}

impl Biome {
    pub fn name(self) -> &'static str {
        match self {
            Biome::Plains => "plains",
            Biome::Forest => "forest",
            Biome::Desert => "desert",
            Biome::Mountains => "mountains",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Manager,
    Conductor,
    Actor,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Manager => "manager",
            Role::Conductor => "conductor",
            Role::Actor => "actor",
        }
    }

    pub fn from_name(s: &str) -> Option<Role> {
        match s {
            "manager" => Some(Role::Manager),
            "conductor" => Some(Role::Conductor),
            "actor" => Some(Role::Actor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentBody {
    pub agent_id: u32,
    pub position: Pos,
    pub inventory: BTreeMap<BlockId, u32>,
    pub role: Role,
}

impl AgentBody {
    pub fn count(&self, b: BlockId) -> u32 {
        self.inventory.get(&b).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Move(Dir),
    MoveTo(Column),
    Mine(Dir),
    Place(Dir, BlockId),
    Announce(Vec<String>),
    NoOp,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(d) => write!(f, "move_{}", d.name()),
            Action::MoveTo(c) => write!(f, "move_to({c})"),
            Action::Mine(d) => write!(f, "mine_{}", d.name()),
            Action::Place(d, b) => write!(f, "place_{}:{}", d.name(), name(*b)),
            Action::Announce(tags) => write!(f, "announce({})", tags.join("|")),
            Action::NoOp => write!(f, "noop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Moved { agent: u32, from: Pos, to: Pos },
    Bumped { agent: u32, at: Pos },
    Mined { agent: u32, at: Pos, block: BlockId },
    Placed { agent: u32, at: Pos, block: BlockId },
    Announced { agent: u32, tags: Vec<String> },
    Idle { agent: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub dims: Dims,
    grid: Vec<BlockId>,
    biome: Vec<Biome>,
    pub agents: Vec<AgentBody>,
    pub tick: u64,
    pub seed: u64,
    audio: Vec<Pos>,
}

impl WorldState {
    /// An all-air world. Biomes are derived from `(seed, w, l)`.
    pub fn empty(dims: Dims, seed: u64) -> Self {
        WorldState {
            dims,
            grid: vec![AIR; dims.volume()],
            biome: biome_map(seed, dims),
            agents: Vec::new(),
            tick: 0,
            seed,
            audio: Vec::new(),
        }
    }

    fn index(&self, p: Pos) -> Option<usize> {
        self.dims
            .contains(p)
            .then(|| (p.x + self.dims.w * (p.z + self.dims.l * p.y)) as usize)
    }

    pub fn get(&self, p: Pos) -> BlockId {
        self.index(p).map(|i| self.grid[i]).unwrap_or(AIR)
    }

    /// Write a voxel; out-of-bounds writes are ignored.
    pub fn set(&mut self, p: Pos, b: BlockId) {
        assert!(is_valid(b), "invalid block id {b}");
        if let Some(i) = self.index(p) {
            let old = self.grid[i];
            self.grid[i] = b;
            if block(old).audio.is_some() || block(b).audio.is_some() {
                self.rebuild_audio();
            }
        }
    }

    pub fn is_solid(&self, p: Pos) -> bool {
        is_solid(self.get(p))
    }

    /// In bounds and not solid.
    pub fn is_open(&self, p: Pos) -> bool {
        self.dims.contains(p) && !self.is_solid(p)
    }

    pub fn biome(&self, c: Column) -> Biome {
        if self.dims.contains_column(c) {
            self.biome[self.dims.column_index(c)]
        } else {
            Biome::Plains
        }
    }

    pub fn audio_sources(&self) -> &[Pos] {
        &self.audio
    }

    pub(crate) fn rebuild_audio(&mut self) {
        self.audio.clear();
        for y in 0..self.dims.h {
            for z in 0..self.dims.l {
                for x in 0..self.dims.w {
                    let p = Pos::new(x, y, z);
                    if block(self.get(p)).audio.is_some() {
                        self.audio.push(p);
                    }
                }
            }
        }
    }

    /// Total count of a block in the grid (full scan).
    pub fn count_blocks(&self, b: BlockId) -> usize {
        self.grid.iter().filter(|&&v| v == b).count()
    }

    /// Grid count plus every agent's inventory.
    pub fn total_with_inventories(&self, b: BlockId) -> u64 {
        self.count_blocks(b) as u64 + self.agents.iter().map(|a| a.count(b) as u64).sum::<u64>()
    }

    pub fn voxels(&self) -> impl Iterator<Item = (Pos, BlockId)> + '_ {
        let d = self.dims;
        self.grid.iter().enumerate().map(move |(i, &b)| {
            let i = i as i32;
            let x = i % d.w;
            let z = (i / d.w) % d.l;
            let y = i / (d.w * d.l);
            (Pos::new(x, y, z), b)
        })
    }

    pub fn agent(&self, id: u32) -> Result<&AgentBody, WorldError> {
        self.agents.iter().find(|a| a.agent_id == id).ok_or(WorldError::UnknownAgent(id))
    }

    fn agent_index(&self, id: u32) -> Result<usize, WorldError> {
        self.agents.iter().position(|a| a.agent_id == id).ok_or(WorldError::UnknownAgent(id))
    }

    fn occupied_by_agent(&self, p: Pos) -> bool {
        self.agents.iter().any(|a| a.position == p)
    }

    /// Add an agent at an open voxel. Ids must be unique.
    pub fn add_agent(&mut self, agent_id: u32, position: Pos, role: Role) -> Result<(), WorldError> {
        if self.agents.iter().any(|a| a.agent_id == agent_id) {
            return Err(WorldError::Config(format!("duplicate agent id {agent_id}")));
        }
        if !self.is_open(position) {
            return Err(WorldError::Config(format!("agent {agent_id} spawn {position} is not open")));
        }
        self.agents.push(AgentBody { agent_id, position, inventory: BTreeMap::new(), role });
        Ok(())
    }

    /// Spawn `n` agents on distinct open cells of layer `y`, closest first
    /// (BFS from `near`). Returns the new ids.
    pub fn spawn_agents(&mut self, n: usize, near: Column, y: i32) -> Result<Vec<u32>, WorldError> {
        let start = near.at(y);
        if !self.is_open(start) {
            return Err(WorldError::Config(format!("spawn point {start} is not open")));
        }
        let cells = path::reachable_columns(self, start);
        if cells.len() < n {
            return Err(WorldError::Config(format!("only {} open spawn cells for {n} agents", cells.len())));
        }
        let base = self.agents.iter().map(|a| a.agent_id + 1).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(n);
        for (i, c) in cells.into_iter().take(n).enumerate() {
            let id = base + i as u32;
            self.add_agent(id, c.at(y), Role::Conductor)?;
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn set_role(&mut self, id: u32, role: Role) -> Result<(), WorldError> {
        let i = self.agent_index(id)?;
        self.agents[i].role = role;
        Ok(())
    }

    pub fn give(&mut self, id: u32, b: BlockId, n: u32) -> Result<(), WorldError> {
        let i = self.agent_index(id)?;
        if n > 0 {
            *self.agents[i].inventory.entry(b).or_insert(0) += n;
        }
        Ok(())
    }

    /// Apply one action. On error the world is left untouched (tick included).
    pub fn step(&mut self, agent_id: u32, action: &Action) -> Result<Vec<Event>, WorldError> {
        let ai = self.agent_index(agent_id)?;
        let pos = self.agents[ai].position;
        let event = match action {
            Action::Move(dir) => {
                let to = pos.step(*dir);
                if self.is_open(to) {
                    self.agents[ai].position = to;
                    Event::Moved { agent: agent_id, from: pos, to }
                } else {
                    Event::Bumped { agent: agent_id, at: pos }
                }
            }
            Action::MoveTo(target) => {
                let route = path::move_to_route(self, pos, *target);
                match route.last() {
                    Some(&to) => {
                        self.agents[ai].position = to;
                        Event::Moved { agent: agent_id, from: pos, to }
                    }
                    None => Event::Bumped { agent: agent_id, at: pos },
                }
            }
            Action::Mine(dir) => {
                let at = pos.step(*dir);
                let b = self.get(at);
                if !self.dims.contains(at) || !block(b).mineable {
                    return Err(WorldError::InvalidMine(format!("{} at {at}", name(b))));
                }
                self.set(at, AIR);
                *self.agents[ai].inventory.entry(b).or_insert(0) += 1;
                Event::Mined { agent: agent_id, at, block: b }
            }
            Action::Place(dir, b) => {
                let at = pos.step(*dir);
                if !is_valid(*b) || *b == AIR {
                    return Err(WorldError::InvalidPlacement(format!("block id {b}")));
                }
                if !self.dims.contains(at) || self.get(at) != AIR || self.occupied_by_agent(at) {
                    return Err(WorldError::InvalidPlacement(format!("{at} is occupied")));
                }
                let inv = &mut self.agents[ai].inventory;
                match inv.get_mut(b) {
                    Some(n) if *n > 0 => {
                        *n -= 1;
                        if *n == 0 {
                            inv.remove(b);
                        }
                    }
                    _ => {
                        return Err(WorldError::InvalidPlacement(format!("no {} in inventory", name(*b))))
                    }
                }
                self.set(at, *b);
                Event::Placed { agent: agent_id, at, block: *b }
            }
            Action::Announce(tags) => Event::Announced { agent: agent_id, tags: tags.clone() },
            Action::NoOp => Event::Idle { agent: agent_id },
        };
        self.tick += 1;
        Ok(vec![event])
    }

    pub fn observe(&self, agent_id: u32) -> Result<Observation, WorldError> {
        observe::observe(self, agent_id)
    }

    pub fn to_snapshot(&self) -> String {
        snapshot::write(self)
    }

    pub fn from_snapshot(text: &str) -> Result<WorldState, WorldError> {
        snapshot::read(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> WorldState {
        let mut w = WorldState::empty(Dims::new(10, 10, 5), 1);
        for z in 0..10 {
            for x in 0..10 {
                w.set(Pos::new(x, 0, z), STONE);
            }
        }
        w.add_agent(0, Pos::new(5, 2, 5), Role::Conductor).unwrap();
        w
    }

    #[test]
    fn move_into_air() {
        let mut w = flat();
        let ev = w.step(0, &Action::Move(Dir::East)).unwrap();
        assert_eq!(w.agents[0].position, Pos::new(6, 2, 5));
        assert!(matches!(ev[0], Event::Moved { .. }));
        assert_eq!(w.tick, 1);
    }

    #[test]
    fn move_into_solid_or_out_of_bounds_is_noop() {
        let mut w = flat();
        w.set(Pos::new(5, 2, 4), STONE);
        w.step(0, &Action::Move(Dir::North)).unwrap();
        assert_eq!(w.agents[0].position, Pos::new(5, 2, 5));
        w.agents[0].position = Pos::new(9, 2, 5);
        w.step(0, &Action::Move(Dir::East)).unwrap();
        assert_eq!(w.agents[0].position, Pos::new(9, 2, 5));
        assert_eq!(w.tick, 2);
    }

    #[test]
    fn mine_conserves_totals() {
        let mut w = flat();
        w.set(Pos::new(6, 2, 5), STONE);
        let before = w.total_with_inventories(STONE);
        w.step(0, &Action::Mine(Dir::East)).unwrap();
        assert_eq!(w.get(Pos::new(6, 2, 5)), AIR);
        assert_eq!(w.agents[0].count(STONE), 1);
        assert_eq!(w.total_with_inventories(STONE), before);
    }

    #[test]
    fn invalid_place_and_mine_leave_world_untouched() {
        let mut w = flat();
        w.set(Pos::new(6, 2, 5), STONE);
        w.give(0, STONE, 1).unwrap();
        let snapshot = w.clone();
        let err = w.step(0, &Action::Place(Dir::East, STONE)).unwrap_err();
        assert_eq!(err.kind(), "InvalidPlacement");
        assert_eq!(w, snapshot);
        let err = w.step(0, &Action::Mine(Dir::West)).unwrap_err();
        assert_eq!(err.kind(), "InvalidMine");
        let err = w.step(0, &Action::Place(Dir::West, BRICK)).unwrap_err();
        assert_eq!(err.kind(), "InvalidPlacement");
        w.set(Pos::new(4, 2, 5), BEDROCK);
        assert_eq!(w.step(0, &Action::Mine(Dir::West)).unwrap_err().kind(), "InvalidMine");
        w.set(Pos::new(4, 2, 5), AIR);
        assert_eq!(w.tick, snapshot.tick);
    }

    #[test]
    fn place_consumes_inventory() {
        let mut w = flat();
        w.give(0, BRICK, 2).unwrap();
        w.step(0, &Action::Place(Dir::South, BRICK)).unwrap();
        assert_eq!(w.get(Pos::new(5, 2, 6)), BRICK);
        assert_eq!(w.agents[0].count(BRICK), 1);
    }

    #[test]
    fn unknown_agent() {
        let mut w = flat();
        assert_eq!(w.step(9, &Action::NoOp).unwrap_err(), WorldError::UnknownAgent(9));
        assert!(w.observe(9).is_err());
    }

    #[test]
    fn move_to_is_capped() {
        let mut w = WorldState::empty(Dims::new(80, 3, 3), 0);
        w.add_agent(0, Pos::new(0, 1, 1), Role::Conductor).unwrap();
        w.step(0, &Action::MoveTo(Column::new(79, 1))).unwrap();
        assert_eq!(w.agents[0].position, Pos::new(MOVE_TO_CAP as i32, 1, 1));
        w.step(0, &Action::MoveTo(Column::new(79, 1))).unwrap();
        assert_eq!(w.agents[0].position, Pos::new(79, 1, 1));
    }

    #[test]
    fn bucket_prefers_dominant_axis() {
        assert_eq!(Dir::bucket(3, 0, -1), Dir::East);
        assert_eq!(Dir::bucket(0, 0, -4), Dir::North);
        assert_eq!(Dir::bucket(1, 5, 0), Dir::Up);
        assert_eq!(Dir::bucket(0, -2, 1), Dir::Down);
        assert_eq!(Dir::bucket(2, 0, 2), Dir::South);
    }
}
