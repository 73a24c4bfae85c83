use rand::Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::expert::TemplateLibrary;
use crate::seed;

/// World generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: i32,
    pub length: i32,
    pub height: i32,
    /// Walk layer: the first air layer above the surface. Clamped to `1..=height-2`.
    pub ground: i32,
    pub tree_density: f64,
    pub boulder_density: f64,
    pub ore_density: f64,
    pub diamond_density: f64,
    pub landmarks: usize,
    pub audio_sources: usize,
    pub agents: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 32,
            length: 32,
            height: 12,
            ground: 4,
            tree_density: 0.04,
            boulder_density: 0.02,
            ore_density: 0.03,
            diamond_density: 0.01,
            landmarks: 3,
            audio_sources: 3,
            agents: 1,
        }
    }
}

impl WorldConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.length, self.height)
    }

    /// Effective walk layer after clamping.
    pub fn walk_layer(&self) -> i32 {
        self.ground.clamp(1, (self.height - 2).max(1))
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, v) in [("width", self.width), ("length", self.length), ("height", self.height)] {
            if v < 4 {
                return Err(WorldError::Config(format!("{name} must be >= 4, got {v}")));
            }
        }
        for (name, v) in [
            ("tree_density", self.tree_density),
            ("boulder_density", self.boulder_density),
            ("ore_density", self.ore_density),
            ("diamond_density", self.diamond_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(WorldError::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.agents > 8 {
            return Err(WorldError::Config(format!("at most 8 agents, got {}", self.agents)));
        }
        Ok(())
    }
}

const NOISE_CELL: i32 = 8;

fn lattice(seed: u64, ix: i32, iz: i32) -> f64 {
    let h = seed::derive_index(seed::derive_index(seed, ix as u32 as u64), iz as u32 as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: i32, z: i32) -> f64 {
    let (cx, cz) = (x.div_euclid(NOISE_CELL), z.div_euclid(NOISE_CELL));
    let tx = smooth(x.rem_euclid(NOISE_CELL) as f64 / NOISE_CELL as f64);
    let tz = smooth(z.rem_euclid(NOISE_CELL) as f64 / NOISE_CELL as f64);
    let a = lattice(seed, cx, cz);
    let b = lattice(seed, cx + 1, cz);
    let c = lattice(seed, cx, cz + 1);
    let d = lattice(seed, cx + 1, cz + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * tz
}

/// Biome per column, a function of `(seed, w, l)` only.
pub fn biome_map(seed: u64, dims: Dims) -> Vec<Biome> {
    let heat = seed::derive(seed, "biome-heat");
    let wet = seed::derive(seed, "biome-wet");
    let mut out = Vec::with_capacity(dims.columns());
    for z in 0..dims.l {
        for x in 0..dims.w {
            let t = value_noise(heat, x, z);
            let m = value_noise(wet, x, z);
            out.push(if t > 0.62 && m < 0.5 {
                Biome::Desert
            } else if t < 0.3 {
                Biome::Mountains
            } else if m > 0.55 {
                Biome::Forest
            } else {
                Biome::Plains
            });
        }
    }
    out
}

fn spawn_zone(dims: Dims, c: Column) -> bool {
    (c.x - dims.w / 2).abs() <= 2 && (c.z - dims.l / 2).abs() <= 2
}

/// Generate a world. Deterministic in `(seed, config)`.
pub fn gen_world(seed: u64, config: &WorldConfig) -> Result<WorldState, WorldError> {
    config.validate()?;
    let dims = config.dims();
    let g = config.walk_layer();
    let mut world = WorldState::empty(dims, seed);
    let mut rng = seed::rng_for(seed, "terrain");

    for z in 0..dims.l {
        for x in 0..dims.w {
            let col = Column::new(x, z);
            let biome = world.biome(col);
            world.set(col.at(0), BEDROCK);
            for y in 1..g {
                let b = if y == g - 1 {
                    match biome {
                        Biome::Desert => SAND,
                        Biome::Mountains => STONE,
                        _ => GRASS,
                    }
                } else if y == g - 2 {
                    if biome == Biome::Desert {
                        SANDSTONE
                    } else {
                        DIRT
                    }
                } else {
                    STONE
                };
                world.set(col.at(y), b);
            }
        }
    }

    // Ore veins below the surface. Diamonds sit in the two layers under the
    // walk layer so they show up in observation patches from the surface.
    let mut ore_rng = seed::rng_for(seed, "ore");
    for y in 1..g - 1 {
        for z in 0..dims.l {
            for x in 0..dims.w {
                let p = Pos::new(x, y, z);
                if ore_rng.gen_bool(config.ore_density) {
                    let b = if ore_rng.gen_bool(0.6) { COAL_ORE } else { IRON_ORE };
                    vein(&mut world, &mut ore_rng, p, b, 3, g - 1);
                }
            }
        }
    }
    let mut diamond_rng = seed::rng_for(seed, "diamond");
    for y in (g - 2).max(1)..g {
        for z in 0..dims.l {
            for x in 0..dims.w {
                if diamond_rng.gen_bool(config.diamond_density) {
                    vein(&mut world, &mut diamond_rng, Pos::new(x, y, z), DIAMOND, 2, g);
                }
            }
        }
    }

    // Surface features.
    for z in 0..dims.l {
        for x in 0..dims.w {
            let col = Column::new(x, z);
            if spawn_zone(dims, col) {
                continue;
            }
            let biome = world.biome(col);
            let tree_p = match biome {
                Biome::Forest => (config.tree_density * 3.0).min(1.0),
                Biome::Desert | Biome::Mountains => config.tree_density * 0.25,
                Biome::Plains => config.tree_density,
            };
            let boulder_p = match biome {
                Biome::Mountains => (config.boulder_density * 4.0).min(1.0),
                _ => config.boulder_density,
            };
            let roll: f64 = rng.gen();
            if roll < tree_p {
                tree(&mut world, col, g);
            } else if roll < tree_p + boulder_p {
                let b = if rng.gen_bool(0.5) { STONE } else { COBBLESTONE };
                world.set(col.at(g), b);
            } else if rng.gen_bool(config.diamond_density * 0.5) {
                world.set(col.at(g), DIAMOND);
            }
        }
    }

    let library = TemplateLibrary::builtin();
    let mut lm_rng = seed::rng_for(seed, "landmarks");
    for _ in 0..config.landmarks {
        let t = &library.templates()[lm_rng.gen_range(0..library.len())];
        let od = t.occupancy.dims;
        if od.w + 2 > dims.w || od.l + 2 > dims.l {
            continue;
        }
        // A few tries to keep the spawn zone clear.
        for _ in 0..8 {
            let ox = lm_rng.gen_range(1..=dims.w - od.w - 1);
            let oz = lm_rng.gen_range(1..=dims.l - od.l - 1);
            let hits_spawn = (ox - 3..ox + od.w + 3).contains(&(dims.w / 2))
                && (oz - 3..oz + od.l + 3).contains(&(dims.l / 2));
            if hits_spawn {
                continue;
            }
            for y in g..dims.h {
                for z in oz..oz + od.l {
                    for x in ox..ox + od.w {
                        world.set(Pos::new(x, y, z), AIR);
                    }
                }
            }
            for (p, b) in t.occupancy.blocks() {
                let at = Pos::new(ox + p.x, g + p.y, oz + p.z);
                if at.y < dims.h {
                    world.set(at, b);
                }
            }
            break;
        }
    }

    let mut audio_rng = seed::rng_for(seed, "audio");
    let emitters = [JUKEBOX, BELL, BEEHIVE];
    for i in 0..config.audio_sources {
        for _ in 0..32 {
            let col = Column::new(audio_rng.gen_range(0..dims.w), audio_rng.gen_range(0..dims.l));
            if spawn_zone(dims, col) || world.get(col.at(g)) != AIR {
                continue;
            }
            world.set(col.at(g), emitters[i % emitters.len()]);
            break;
        }
    }

    let center = Column::new(dims.w / 2, dims.l / 2);
    for z in center.z - 2..=center.z + 2 {
        for x in center.x - 2..=center.x + 2 {
            for y in g..dims.h {
                world.set(Pos::new(x, y, z), AIR);
            }
        }
    }
    if config.agents > 0 {
        world.spawn_agents(config.agents, center, g)?;
    }
    Ok(world)
}

fn vein(world: &mut WorldState, rng: &mut impl Rng, start: Pos, b: BlockId, len: usize, y_max: i32) {
    let mut p = start;
    for _ in 0..len {
        if world.dims.contains(p) && p.y >= 1 && p.y < y_max {
            world.set(p, b);
        }
        let d = Dir::ALL[rng.gen_range(0..6)];
        p = p.step(d);
    }
}

fn tree(world: &mut WorldState, col: Column, g: i32) {
    let h = world.dims.h;
    for y in g..(g + 2).min(h) {
        world.set(col.at(y), WOOD);
    }
    let crown = g + 2;
    if crown < h {
        world.set(col.at(crown), LEAVES);
        for d in Dir::HORIZONTAL {
            let c = col.step(d);
            if world.dims.contains_column(c) && world.get(c.at(crown)) == AIR {
                world.set(c.at(crown), LEAVES);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig::default();
        let a = gen_world(7, &cfg).unwrap();
        let b = gen_world(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_world(8, &cfg).unwrap();
        assert!(a.voxels().zip(c.voxels()).any(|(x, y)| x.1 != y.1));
    }

    #[test]
    fn zero_diamond_density_means_no_diamonds() {
        let cfg = WorldConfig { diamond_density: 0.0, ..WorldConfig::default() };
        for s in 0..5 {
            assert_eq!(gen_world(s, &cfg).unwrap().count_blocks(DIAMOND), 0);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = WorldConfig { width: 3, ..WorldConfig::default() };
        assert_eq!(gen_world(0, &bad).unwrap_err().kind(), "ConfigError");
        let bad = WorldConfig { ore_density: 1.5, ..WorldConfig::default() };
        assert_eq!(gen_world(0, &bad).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn tiny_world_is_valid() {
        let cfg = WorldConfig { width: 4, length: 4, height: 4, landmarks: 0, ..WorldConfig::default() };
        let w = gen_world(1, &cfg).unwrap();
        assert_eq!(w.agents.len(), 1);
        assert!(w.is_open(w.agents[0].position));
    }

    #[test]
    fn default_world_has_features() {
        let w = gen_world(3, &WorldConfig::default()).unwrap();
        assert!(w.count_blocks(DIAMOND) > 0);
        assert_eq!(w.audio_sources().len(), 3);
        assert!(w.count_blocks(BEDROCK) == 32 * 32);
    }
}
