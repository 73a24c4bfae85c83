use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ExpertError;
use crate::world::{is_valid, BlockId, Dims, Grid2, Pos, AIR};

/// Where an occupancy came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub template: Option<usize>,
    pub mutation_seed: u64,
}

/// Dense 3D block grid; 0 means empty. Indexed `(y * l + z) * w + x`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub dims: Dims,
    pub cells: Vec<BlockId>,
    pub provenance: Provenance,
}

impl Occupancy {
    pub fn empty(dims: Dims) -> Self {
        Occupancy { dims, cells: vec![AIR; dims.volume()], provenance: Provenance::default() }
    }

    fn index(&self, x: i32, y: i32, z: i32) -> usize {
        ((y * self.dims.l + z) * self.dims.w + x) as usize
    }

    pub fn get(&self, x: i32, y: i32, z: i32) -> BlockId {
        if self.dims.contains(Pos::new(x, y, z)) {
            self.cells[self.index(x, y, z)]
        } else {
            AIR
        }
    }

    pub fn set(&mut self, x: i32, y: i32, z: i32, b: BlockId) {
        let i = self.index(x, y, z);
        self.cells[i] = b;
    }

    /// Non-empty cells as (local position, block), storage order.
    pub fn blocks(&self) -> impl Iterator<Item = (Pos, BlockId)> + '_ {
        let d = self.dims;
        self.cells.iter().enumerate().filter(|(_, &b)| b != AIR).map(move |(i, &b)| {
            let i = i as i32;
            (Pos::new(i % d.w, i / (d.w * d.l), (i / d.w) % d.l), b)
        })
    }

    pub fn count_nonempty(&self) -> usize {
        self.cells.iter().filter(|&&b| b != AIR).count()
    }

    /// Block counts needed to build this occupancy.
    pub fn material_bill(&self) -> BTreeMap<BlockId, u32> {
        let mut bill = BTreeMap::new();
        for (_, b) in self.blocks() {
            *bill.entry(b).or_insert(0) += 1;
        }
        bill
    }

    /// Quarter turn about the vertical axis: `(x, z) -> (l - 1 - z, x)`.
    pub fn rotate_quarter(&self) -> Occupancy {
        let d = self.dims;
        let mut out = Occupancy::empty(Dims::new(d.l, d.w, d.h));
        out.provenance = self.provenance;
        for (p, b) in self.blocks() {
            out.set(d.l - 1 - p.z, p.y, p.x, b);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let d = self.dims;
        let mut out = format!("occ {} {} {}\n", d.w, d.l, d.h);
        for (p, b) in self.blocks() {
            writeln!(out, "{} {} {} {}", p.x, p.y, p.z, b).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Occupancy, ExpertError> {
        let err = |line: usize, msg: String| ExpertError::Parse { line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty occupancy".into()))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let dim = |s: &str| s.parse::<i32>().ok().filter(|&v| v > 0);
        let dims = match f.as_slice() {
            ["occ", w, l, h] => match (dim(w), dim(l), dim(h)) {
                (Some(w), Some(l), Some(h)) => Dims::new(w, l, h),
                _ => return Err(err(1, format!("bad dims in {header:?}"))),
            },
            _ => return Err(err(1, "expected `occ W L H`".into())),
        };
        let mut occ = Occupancy::empty(dims);
        for (i, line) in lines {
            let v: Vec<i64> = line
                .split_whitespace()
                .map(|s| s.parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err(i + 1, format!("bad line {line:?}")))?;
            let [x, y, z, b] = v[..] else {
                return Err(err(i + 1, format!("expected `x y z block_id`, got {line:?}")));
            };
            let p = Pos::new(x as i32, y as i32, z as i32);
            if !dims.contains(p) || !(0..=255).contains(&b) || !is_valid(b as BlockId) {
                return Err(err(i + 1, format!("out of range: {line:?}")));
            }
            occ.set(p.x, p.y, p.z, b as BlockId);
        }
        Ok(occ)
    }
}

/// Background value in rendered views.
pub const BACKGROUND: BlockId = 255;

/// Orthographic projections of an occupancy. Side views have row 0 at the top
/// layer; columns follow the ascending world axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Views {
    pub north: Grid2,
    pub east: Grid2,
    pub south: Grid2,
    pub west: Grid2,
    pub top: Grid2,
}

pub fn render_views(occ: &Occupancy) -> Views {
    let d = occ.dims;
    let (w, l, h) = (d.w as usize, d.l as usize, d.h as usize);
    fn first(mut it: impl Iterator<Item = BlockId>) -> BlockId {
        it.find(|&b| b != AIR).unwrap_or(BACKGROUND)
    }
    let mut top = Grid2::filled(w, l, BACKGROUND);
    for z in 0..d.l {
        for x in 0..d.w {
            top.set(x as usize, z as usize, first((0..d.h).rev().map(|y| occ.get(x, y, z))));
        }
    }
    let mut north = Grid2::filled(w, h, BACKGROUND);
    let mut south = Grid2::filled(w, h, BACKGROUND);
    for y in 0..d.h {
        let row = (d.h - 1 - y) as usize;
        for x in 0..d.w {
            north.set(x as usize, row, first((0..d.l).map(|z| occ.get(x, y, z))));
            south.set(x as usize, row, first((0..d.l).rev().map(|z| occ.get(x, y, z))));
        }
    }
    let mut east = Grid2::filled(l, h, BACKGROUND);
    let mut west = Grid2::filled(l, h, BACKGROUND);
    for y in 0..d.h {
        let row = (d.h - 1 - y) as usize;
        for z in 0..d.l {
            east.set(z as usize, row, first((0..d.w).rev().map(|x| occ.get(x, y, z))));
            west.set(z as usize, row, first((0..d.w).map(|x| occ.get(x, y, z))));
        }
    }
    Views { north, east, south, west, top }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: usize,
    pub name: String,
    pub tokens: BTreeSet<String>,
    pub occupancy: Occupancy,
}

/// Structures available to the occupancy generator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateLibrary {
    templates: Vec<Template>,
}

const BUILTIN_INDEX: &str = include_str!("../../templates/index.txt");
const BUILTIN_FILES: [(&str, &str); 6] = [
    ("pyramid.occ", include_str!("../../templates/pyramid.occ")),
    ("pagoda.occ", include_str!("../../templates/pagoda.occ")),
    ("house.occ", include_str!("../../templates/house.occ")),
    ("tower.occ", include_str!("../../templates/tower.occ")),
    ("wall.occ", include_str!("../../templates/wall.occ")),
    ("bridge.occ", include_str!("../../templates/bridge.occ")),
];

/// Jaccard similarity of two token sets; 1.0 when both are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

impl TemplateLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// The bundled structures (pyramid, pagoda, house, tower, wall, bridge).
    pub fn builtin() -> &'static TemplateLibrary {
        static LIB: OnceLock<TemplateLibrary> = OnceLock::new();
        LIB.get_or_init(|| {
            TemplateLibrary::from_index(BUILTIN_INDEX, |file| {
                BUILTIN_FILES.iter().find(|(f, _)| *f == file).map(|(_, t)| t.to_string())
            })
            .expect("bundled templates are well formed")
        })
    }

    /// Parse an index (`id name file tokens...` per line, `#` comments) and load
    /// each file through `load`.
    pub fn from_index(index: &str, load: impl Fn(&str) -> Option<String>) -> Result<Self, ExpertError> {
        let mut lib = TemplateLibrary::new();
        for (i, line) in index.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 3 {
                return Err(ExpertError::Parse { line: i + 1, msg: "expected `id name file tokens...`".into() });
            }
            let text = load(f[2])
                .ok_or_else(|| ExpertError::Parse { line: i + 1, msg: format!("missing file {}", f[2]) })?;
            let occ = Occupancy::parse(&text)?;
            let mut tokens: BTreeSet<String> = f[3..].iter().map(|s| s.to_string()).collect();
            tokens.insert(f[1].to_string());
            lib.push(f[1], tokens, occ);
        }
        Ok(lib)
    }

    pub fn push(&mut self, name: &str, tokens: BTreeSet<String>, mut occupancy: Occupancy) -> usize {
        let id = self.templates.len();
        occupancy.provenance = Provenance { template: Some(id), mutation_seed: 0 };
        self.templates.push(Template { id, name: name.to_string(), tokens, occupancy });
        id
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.name == name)
    }

    /// Jaccard similarity of `tokens` to every template, by id.
    pub fn similarities(&self, tokens: &BTreeSet<String>) -> Vec<f64> {
        self.templates.iter().map(|t| jaccard(tokens, &t.tokens)).collect()
    }

    /// Template with maximal similarity, lowest id on ties.
    pub fn best_match(&self, tokens: &BTreeSet<String>) -> Result<&Template, ExpertError> {
        let sims = self.similarities(tokens);
        let mut best: Option<usize> = None;
        for (i, s) in sims.iter().enumerate() {
            if best.map_or(true, |b| *s > sims[b]) {
                best = Some(i);
            }
        }
        best.map(|i| &self.templates[i]).ok_or(ExpertError::EmptyLibrary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{BRICK, STONE};

    #[test]
    fn builtin_library_loads() {
        let lib = TemplateLibrary::builtin();
        let names: Vec<_> = lib.templates().iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["pyramid", "pagoda", "house", "tower", "wall", "bridge"]);
        for t in lib.templates() {
            assert_eq!(t.occupancy.dims, Dims::new(8, 8, 8));
            assert!(t.occupancy.count_nonempty() > 0);
        }
        let q: BTreeSet<String> = ["pyramid".to_string()].into();
        assert_eq!(lib.best_match(&q).unwrap().name, "pyramid");
        assert!(TemplateLibrary::new().best_match(&q).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut occ = Occupancy::empty(Dims::new(3, 2, 4));
        occ.set(2, 3, 1, BRICK);
        occ.set(0, 0, 0, STONE);
        let back = Occupancy::parse(&occ.to_text()).unwrap();
        assert_eq!(back, occ);
        assert!(Occupancy::parse("occ 2 2 2\n3 0 0 1\n").is_err());
        assert!(Occupancy::parse("voxels 2 2 2\n").is_err());
    }

    #[test]
    fn views_shapes_and_single_block() {
        let mut occ = Occupancy::empty(Dims::new(5, 3, 4));
        let v = render_views(&occ);
        for g in [&v.north, &v.east, &v.south, &v.west, &v.top] {
            assert!(g.cells.iter().all(|&c| c == BACKGROUND));
        }
        assert_eq!((v.top.width, v.top.height), (5, 3));
        assert_eq!((v.north.width, v.north.height), (5, 4));
        assert_eq!((v.east.width, v.east.height), (3, 4));
        occ.set(2, 1, 1, BRICK);
        let v = render_views(&occ);
        assert_eq!(v.top.cells.iter().filter(|&&c| c != BACKGROUND).count(), 1);
        assert_eq!(v.top.get(2, 1), BRICK);
    }

    #[test]
    fn rotation_four_times_is_identity() {
        let occ = TemplateLibrary::builtin().by_name("house").unwrap().occupancy.clone();
        let r = occ.rotate_quarter().rotate_quarter().rotate_quarter().rotate_quarter();
        assert_eq!(r, occ);
        assert_ne!(occ.rotate_quarter(), occ);
    }
}
