use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::*;

/// Vision radius: the patch is a `(2r+1)^3` cube.
pub const VIEW_RADIUS: i32 = 2;

/// Row-major 2D grid of block ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid2 {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<BlockId>,
}

impl Grid2 {
    pub fn filled(width: usize, height: usize, value: BlockId) -> Self {
        Grid2 { width, height, cells: vec![value; width * height] }
    }

    pub fn get(&self, col: usize, row: usize) -> BlockId {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: BlockId) {
        self.cells[row * self.width + col] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioCue {
    pub event: String,
    pub direction: Dir,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_id: u32,
    pub position: Pos,
    pub biome: Biome,
    pub inventory: BTreeMap<BlockId, u32>,
    pub tick: u64,
    /// Patch around the agent, index `((dy + r) * n + (dz + r)) * n + (dx + r)`.
    pub s_v: Vec<BlockId>,
    /// First non-air block looking down each patch column (air if none); width/height = n.
    pub top_view: Grid2,
    pub s_a: Vec<AudioCue>,
    pub s_p: BTreeMap<String, String>,
}

impl Observation {
    pub fn side() -> usize {
        (2 * VIEW_RADIUS + 1) as usize
    }

    pub fn patch_index(dx: i32, dy: i32, dz: i32) -> usize {
        let n = 2 * VIEW_RADIUS + 1;
        (((dy + VIEW_RADIUS) * n + (dz + VIEW_RADIUS)) * n + (dx + VIEW_RADIUS)) as usize
    }

    /// Block at a patch-relative offset; `None` outside the patch.
    pub fn at(&self, dx: i32, dy: i32, dz: i32) -> Option<BlockId> {
        let r = VIEW_RADIUS;
        if dx.abs() > r || dy.abs() > r || dz.abs() > r {
            return None;
        }
        Some(self.s_v[Self::patch_index(dx, dy, dz)])
    }

    pub fn offsets() -> impl Iterator<Item = (i32, i32, i32)> {
        let r = VIEW_RADIUS;
        (-r..=r).flat_map(move |dy| (-r..=r).flat_map(move |dz| (-r..=r).map(move |dx| (dx, dy, dz))))
    }

    /// World positions holding `b` inside the patch.
    pub fn positions_of(&self, b: BlockId) -> Vec<Pos> {
        Self::offsets()
            .filter(|&(dx, dy, dz)| self.s_v[Self::patch_index(dx, dy, dz)] == b)
            .map(|(dx, dy, dz)| self.position.offset(dx, dy, dz))
            .collect()
    }

    /// Columns whose patch cells are all within world bounds on the agent's layer.
    pub fn visible_columns(&self, dims: Dims) -> Vec<Column> {
        let r = VIEW_RADIUS;
        let mut out = Vec::new();
        for dz in -r..=r {
            for dx in -r..=r {
                let c = Column::new(self.position.x + dx, self.position.z + dz);
                if dims.contains_column(c) {
                    out.push(c);
                }
            }
        }
        out
    }
}

pub(super) fn inventory_text(inv: &BTreeMap<BlockId, u32>) -> String {
    if inv.is_empty() {
        return "-".to_string();
    }
    inv.iter().map(|(b, n)| format!("{}:{n}", name(*b))).collect::<Vec<_>>().join(",")
}

pub(super) fn observe(world: &WorldState, agent_id: u32) -> Result<Observation, WorldError> {
    let agent = world.agent(agent_id)?;
    let p = agent.position;
    let r = VIEW_RADIUS;
    let n = Observation::side();
    let mut s_v = Vec::with_capacity(n * n * n);
    for (dx, dy, dz) in Observation::offsets() {
        s_v.push(world.get(p.offset(dx, dy, dz)));
    }
    let mut top_view = Grid2::filled(n, n, AIR);
    for dz in -r..=r {
        for dx in -r..=r {
            let hit = (-r..=r).rev().map(|dy| s_v[Observation::patch_index(dx, dy, dz)]).find(|&b| b != AIR);
            top_view.set((dx + r) as usize, (dz + r) as usize, hit.unwrap_or(AIR));
        }
    }
    let mut s_a = Vec::new();
    for &src in world.audio_sources() {
        let emitter = match block(world.get(src)).audio {
            Some(e) => e,
            None => continue,
        };
        let (dx, dy, dz) = (src.x - p.x, src.y - p.y, src.z - p.z);
        let dist = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
        if dist <= emitter.range as f64 {
            s_a.push(AudioCue {
                event: emitter.event.to_string(),
                direction: Dir::bucket(dx, dy, dz),
                distance: dist.floor() as u32,
            });
        }
    }
    let biome = world.biome(p.column());
    let mut s_p = BTreeMap::new();
    s_p.insert("position".to_string(), p.to_string());
    s_p.insert("biome".to_string(), biome.name().to_string());
    s_p.insert("inventory".to_string(), inventory_text(&agent.inventory));
    s_p.insert("tick".to_string(), world.tick.to_string());
    Ok(Observation {
        agent_id,
        position: p,
        biome,
        inventory: agent.inventory.clone(),
        tick: world.tick,
        s_v,
        top_view,
        s_a,
        s_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_matches_brute_force_scan() {
        let mut w = WorldState::empty(Dims::new(9, 9, 9), 3);
        w.add_agent(0, Pos::new(1, 4, 4), Role::Actor).unwrap();
        for p in [Pos::new(0, 4, 4), Pos::new(2, 5, 3), Pos::new(3, 6, 6), Pos::new(4, 4, 4)] {
            w.set(p, DIAMOND);
        }
        let obs = w.observe(0).unwrap();
        assert_eq!(obs.s_v.len(), 125);
        let brute = (-2..=2)
            .flat_map(|dx| (-2..=2).flat_map(move |dy| (-2..=2).map(move |dz| (dx, dy, dz))))
            .filter(|&(dx, dy, dz)| w.get(Pos::new(1 + dx, 4 + dy, 4 + dz)) == DIAMOND)
            .count();
        assert_eq!(brute, 3);
        assert_eq!(obs.s_v.iter().filter(|&&b| b == DIAMOND).count(), brute);
        assert!(obs.s_a.is_empty());
        assert_eq!(obs, w.observe(0).unwrap());
    }

    #[test]
    fn audio_respects_range() {
        let mut w = WorldState::empty(Dims::new(40, 3, 3), 0);
        w.add_agent(0, Pos::new(0, 1, 1), Role::Actor).unwrap();
        w.set(Pos::new(12, 1, 1), BELL);
        w.set(Pos::new(13, 1, 1), JUKEBOX);
        let obs = w.observe(0).unwrap();
        assert_eq!(obs.s_a.len(), 1);
        assert_eq!(obs.s_a[0].event, "chime");
        assert_eq!(obs.s_a[0].direction, Dir::East);
        assert_eq!(obs.s_a[0].distance, 12);
    }

    #[test]
    fn top_view_takes_highest_block() {
        let mut w = WorldState::empty(Dims::new(5, 5, 5), 0);
        w.add_agent(0, Pos::new(2, 2, 2), Role::Actor).unwrap();
        w.set(Pos::new(2, 0, 2), STONE);
        w.set(Pos::new(2, 1, 2), GLASS);
        let obs = w.observe(0).unwrap();
        assert_eq!(obs.top_view.get(2, 2), GLASS);
        assert_eq!(obs.top_view.get(0, 0), AIR);
        assert!(obs.s_p.contains_key("position") && obs.s_p.contains_key("inventory"));
    }
}
