use std::collections::BTreeSet;
use std::fmt::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::occupancy::{Occupancy, Provenance, TemplateLibrary};
use super::ExpertError;
use crate::seed::{self, SimRng};
use crate::world::{BlockId, Dims, NUM_BLOCKS};

/// Patch edge length.
pub const PATCH: i32 = 4;
/// Voxels per patch.
pub const PATCH_VOXELS: usize = (PATCH * PATCH * PATCH) as usize;
/// Default codebook size.
pub const DEFAULT_K: usize = 256;
/// Default per-patch mutation probability.
pub const DEFAULT_MUTATION_RATE: f64 = 0.02;

/// A `p^3` patch as block ids, local index `(y * p + z) * p + x`.
pub type Patch = Vec<BlockId>;

/// One-hot encoding of a patch: `PATCH_VOXELS * NUM_BLOCKS` entries.
pub fn one_hot(patch: &[BlockId]) -> Vec<f64> {
    let mut v = vec![0.0; patch.len() * NUM_BLOCKS];
    for (i, &b) in patch.iter().enumerate() {
        v[i * NUM_BLOCKS + b as usize] = 1.0;
    }
    v
}

/// Squared distance between a one-hot patch and a centroid, computed from the
/// centroid's squared norm: `|x|^2 - 2 x.c + |c|^2` with `|x|^2 = voxels`.
fn patch_distance(patch: &[BlockId], centroid: &[f64], norm2: f64) -> f64 {
    let dot: f64 = patch.iter().enumerate().map(|(i, &b)| centroid[i * NUM_BLOCKS + b as usize]).sum();
    (patch.len() as f64 - 2.0 * dot + norm2).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub patch: i32,
    pub blocks: usize,
    pub centroids: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

/// Result of [`learn_codebook`].
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFit {
    pub codebook: Codebook,
    /// Total quantization error after each assignment step.
    pub error_curve: Vec<f64>,
    /// Set when the requested K exceeded the number of distinct patches.
    pub reduced: bool,
}

impl Codebook {
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Result<Self, ExpertError> {
        let dim = PATCH_VOXELS * NUM_BLOCKS;
        if centroids.is_empty() {
            return Err(ExpertError::InvalidArgument("codebook needs at least one centroid".into()));
        }
        if let Some(c) = centroids.iter().find(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(ExpertError::Shape(format!("centroid of length {} (expected {dim}, finite)", c.len())));
        }
        let norms = centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        Ok(Codebook { patch: PATCH, blocks: NUM_BLOCKS, centroids, norms })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        PATCH_VOXELS * self.blocks
    }

    pub fn distance(&self, patch: &[BlockId], code: usize) -> f64 {
        patch_distance(patch, &self.centroids[code], self.norms[code])
    }

    /// Codes ordered by distance (lowest index on ties), first two only.
    fn two_nearest(&self, patch: &[BlockId]) -> (usize, f64, Option<usize>) {
        let mut best = (0, f64::INFINITY);
        let mut second: Option<(usize, f64)> = None;
        for k in 0..self.k() {
            let d = self.distance(patch, k);
            if d < best.1 {
                second = Some(best).filter(|b| b.1.is_finite());
                best = (k, d);
            } else if second.map_or(true, |s| d < s.1) {
                second = Some((k, d));
            }
        }
        (best.0, best.1, second.map(|s| s.0))
    }

    /// Nearest code and its squared distance.
    pub fn nearest(&self, patch: &[BlockId]) -> (usize, f64) {
        let (k, d, _) = self.two_nearest(patch);
        (k, d)
    }

    /// Per-voxel argmax of a centroid (lowest block id on ties).
    pub fn decode(&self, code: usize) -> Patch {
        let c = &self.centroids[code];
        (0..PATCH_VOXELS)
            .map(|v| {
                let row = &c[v * NUM_BLOCKS..(v + 1) * NUM_BLOCKS];
                let mut best = 0;
                for (b, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = b;
                    }
                }
                best as BlockId
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("cb {} {} {} {}\n", self.k(), self.dim(), self.patch, self.blocks);
        for c in &self.centroids {
            let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ExpertError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ExpertError::Parse { line: 1, msg: "empty codebook".into() })?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let expected = format!("{}", PATCH_VOXELS * NUM_BLOCKS);
        let p = PATCH.to_string();
        let b = NUM_BLOCKS.to_string();
        let k: usize = match f.as_slice() {
            ["cb", k, dim, pp, bb] if *dim == expected && *pp == p && *bb == b => {
                k.parse().map_err(|_| ExpertError::Parse { line: 1, msg: "bad K".into() })?
            }
            _ => return Err(ExpertError::Parse { line: 1, msg: format!("expected `cb K {expected} {p} {b}`") }),
        };
        let mut centroids = Vec::with_capacity(k);
        for (i, line) in lines {
            let row = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| ExpertError::Parse { line: i + 1, msg: "bad centroid value".into() })?;
            centroids.push(row);
        }
        if centroids.len() != k {
            return Err(ExpertError::Parse { line: 1, msg: format!("header says {k} centroids, found {}", centroids.len()) });
        }
        Codebook::from_centroids(centroids)
    }
}

fn total_error(patches: &[Patch], cb: &Codebook, assign: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (i, p) in patches.iter().enumerate() {
        let (k, d) = cb.nearest(p);
        assign[i] = k;
        total += d;
    }
    total
}

/// k-means over one-hot patches: k-means++ seeding then Lloyd iterations.
///
/// `k` larger than the number of distinct patches is reduced to that count
/// and flagged in the result.
pub fn learn_codebook(patches: &[Patch], k: usize, iters: usize, rng: &mut SimRng) -> Result<CodebookFit, ExpertError> {
    if patches.is_empty() {
        return Err(ExpertError::InvalidArgument("no patches to learn from".into()));
    }
    if k == 0 {
        return Err(ExpertError::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(p) = patches.iter().find(|p| p.len() != PATCH_VOXELS || p.iter().any(|&b| b as usize >= NUM_BLOCKS)) {
        return Err(ExpertError::Shape(format!("patch of {} voxels", p.len())));
    }
    let distinct = patches.iter().collect::<BTreeSet<_>>().len();
    let reduced = k > distinct;
    let k = k.min(distinct);

    // k-means++ seeding.
    let first = rng.gen_range(0..patches.len());
    let mut centroids = vec![one_hot(&patches[first])];
    let mut d2: Vec<f64> = patches.iter().map(|p| mismatch(p, &patches[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                chosen = Some(i);
                if pick < d {
                    break;
                }
                pick -= d;
            }
        }
        let i = chosen.expect("k <= distinct patches leaves a positive weight");
        centroids.push(one_hot(&patches[i]));
        for (j, p) in patches.iter().enumerate() {
            d2[j] = d2[j].min(mismatch(p, &patches[i]));
        }
    }

    let mut cb = Codebook::from_centroids(centroids)?;
    let mut assign = vec![0; patches.len()];
    let mut curve = vec![total_error(patches, &cb, &mut assign)];
    for _ in 0..iters {
        let dim = cb.dim();
        let mut sums = vec![vec![0.0; dim]; cb.k()];
        let mut counts = vec![0usize; cb.k()];
        for (p, &a) in patches.iter().zip(&assign) {
            counts[a] += 1;
            for (v, &b) in p.iter().enumerate() {
                sums[a][v * NUM_BLOCKS + b as usize] += 1.0;
            }
        }
        let next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .enumerate()
            .map(|(j, (s, &n))| {
                if n == 0 {
                    cb.centroids[j].clone()
                } else {
                    s.into_iter().map(|v| v / n as f64).collect()
                }
            })
            .collect();
        let prev = assign.clone();
        cb = Codebook::from_centroids(next)?;
        curve.push(total_error(patches, &cb, &mut assign));
        if assign == prev {
            break;
        }
    }
    Ok(CodebookFit { codebook: cb, error_curve: curve, reduced })
}

// Squared one-hot distance between two patches: twice the mismatch count.
fn mismatch(a: &[BlockId], b: &[BlockId]) -> f64 {
    2.0 * a.iter().zip(b).filter(|(x, y)| x != y).count() as f64
}

/// Cut an occupancy into `p^3` patches in (y, z, x) patch order.
pub fn patches_of(occ: &Occupancy) -> Result<(Dims, Vec<Patch>), ExpertError> {
    let d = occ.dims;
    if d.w % PATCH != 0 || d.l % PATCH != 0 || d.h % PATCH != 0 {
        return Err(ExpertError::Shape(format!("dims {}x{}x{} not divisible by {PATCH}", d.w, d.l, d.h)));
    }
    let grid = Dims::new(d.w / PATCH, d.l / PATCH, d.h / PATCH);
    let mut out = Vec::with_capacity(grid.volume());
    for py in 0..grid.h {
        for pz in 0..grid.l {
            for px in 0..grid.w {
                let mut patch = Vec::with_capacity(PATCH_VOXELS);
                for y in 0..PATCH {
                    for z in 0..PATCH {
                        for x in 0..PATCH {
                            patch.push(occ.get(px * PATCH + x, py * PATCH + y, pz * PATCH + z));
                        }
                    }
                }
                out.push(patch);
            }
        }
    }
    Ok((grid, out))
}

fn assemble(dims: Dims, grid: Dims, patches: &[Patch]) -> Occupancy {
    let mut occ = Occupancy::empty(dims);
    let mut i = 0;
    for py in 0..grid.h {
        for pz in 0..grid.l {
            for px in 0..grid.w {
                let patch = &patches[i];
                i += 1;
                let mut v = 0;
                for y in 0..PATCH {
                    for z in 0..PATCH {
                        for x in 0..PATCH {
                            occ.set(px * PATCH + x, py * PATCH + y, pz * PATCH + z, patch[v]);
                            v += 1;
                        }
                    }
                }
            }
        }
    }
    occ
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    /// Patch-grid dims (occupancy dims divided by the patch size).
    pub grid: Dims,
    /// One code per patch, (y, z, x) patch order.
    pub codes: Vec<usize>,
    pub reconstruction: Occupancy,
    pub error: f64,
}

pub fn quantize(occ: &Occupancy, cb: &Codebook) -> Result<Quantized, ExpertError> {
    let (grid, patches) = patches_of(occ)?;
    let mut codes = Vec::with_capacity(patches.len());
    let mut error = 0.0;
    let mut decoded = Vec::with_capacity(patches.len());
    for p in &patches {
        let (k, d) = cb.nearest(p);
        codes.push(k);
        error += d;
        decoded.push(cb.decode(k));
    }
    let mut reconstruction = assemble(occ.dims, grid, &decoded);
    reconstruction.provenance = occ.provenance;
    Ok(Quantized { grid, codes, reconstruction, error })
}

/// Code-usage counts of an occupancy: one entry per codebook code.
pub fn code_histogram(occ: &Occupancy, cb: &Codebook) -> Result<Vec<f64>, ExpertError> {
    let q = quantize(occ, cb)?;
    let mut h = vec![0.0; cb.k()];
    for c in q.codes {
        h[c] += 1.0;
    }
    Ok(h)
}

/// Retrieve the best-matching template for `tokens`, push it through the
/// codebook and, per patch with probability `mutation_rate`, swap in the
/// second-nearest code.
pub fn generate_occupancy(
    tokens: &[String],
    library: &TemplateLibrary,
    codebook: &Codebook,
    mutation_rate: f64,
    rng: &mut SimRng,
) -> Result<Occupancy, ExpertError> {
    let query: BTreeSet<String> = tokens.iter().cloned().collect();
    let template = library.best_match(&query)?;
    generate_from_template(template.id, library, codebook, mutation_rate, rng)
}

pub fn generate_from_template(
    template: usize,
    library: &TemplateLibrary,
    codebook: &Codebook,
    mutation_rate: f64,
    rng: &mut SimRng,
) -> Result<Occupancy, ExpertError> {
    let t = library.get(template).ok_or(ExpertError::EmptyLibrary)?;
    let mutation_seed: u64 = rng.gen();
    let mut mrng = seed::rng(mutation_seed);
    let (grid, patches) = patches_of(&t.occupancy)?;
    let decoded: Vec<Patch> = patches
        .iter()
        .map(|p| {
            let (best, _, second) = codebook.two_nearest(p);
            let code = match second {
                Some(s) if mutation_rate > 0.0 && mrng.gen_bool(mutation_rate.min(1.0)) => s,
                _ => best,
            };
            codebook.decode(code)
        })
        .collect();
    let mut occ = assemble(t.occupancy.dims, grid, &decoded);
    occ.provenance = Provenance { template: Some(t.id), mutation_seed };
    Ok(occ)
}

/// All patches of every template in the library.
pub fn library_patches(library: &TemplateLibrary) -> Result<Vec<Patch>, ExpertError> {
    let mut out = Vec::new();
    for t in library.templates() {
        out.extend(patches_of(&t.occupancy)?.1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{BRICK, STONE};

    #[test]
    fn identical_patches_single_centroid() {
        let patch: Patch = vec![STONE; PATCH_VOXELS];
        let fit = learn_codebook(&vec![patch.clone(); 5], 1, 10, &mut seed::rng(0)).unwrap();
        assert_eq!(fit.codebook.centroids[0], one_hot(&patch));
        assert_eq!(*fit.error_curve.last().unwrap(), 0.0);
        assert!(!fit.reduced);
        let fit = learn_codebook(&vec![patch; 5], 4, 10, &mut seed::rng(0)).unwrap();
        assert!(fit.reduced);
        assert_eq!(fit.codebook.k(), 1);
    }

    #[test]
    fn library_is_reproduced_exactly() {
        let lib = TemplateLibrary::builtin();
        let patches = library_patches(lib).unwrap();
        let fit = learn_codebook(&patches, DEFAULT_K, 20, &mut seed::rng(1)).unwrap();
        assert_eq!(*fit.error_curve.last().unwrap(), 0.0);
        for t in lib.templates() {
            let q = quantize(&t.occupancy, &fit.codebook).unwrap();
            assert_eq!(q.error, 0.0);
            assert_eq!(q.reconstruction.cells, t.occupancy.cells);
            assert_eq!(q.grid, Dims::new(2, 2, 2));
        }
    }

    #[test]
    fn quantize_rejects_bad_shape() {
        let cb = Codebook::from_centroids(vec![one_hot(&vec![BRICK; PATCH_VOXELS])]).unwrap();
        let occ = Occupancy::empty(Dims::new(5, 4, 4));
        assert_eq!(quantize(&occ, &cb).unwrap_err().kind(), "ShapeError");
    }

    #[test]
    fn codebook_text_round_trip() {
        let patches: Vec<Patch> = (0..6).map(|i| vec![(i % 3) as BlockId; PATCH_VOXELS]).collect();
        let cb = learn_codebook(&patches, 2, 5, &mut seed::rng(3)).unwrap().codebook;
        assert_eq!(Codebook::parse(&cb.to_text()).unwrap(), cb);
    }
}
