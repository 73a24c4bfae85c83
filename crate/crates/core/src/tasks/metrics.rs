use super::TaskError;
use crate::expert::{code_histogram, Codebook, Occupancy};
use crate::world::AIR;

/// Matching non-empty voxels (same block id) over voxels non-empty in either
/// occupancy; 1.0 when both are empty.
pub fn voxel_iou(a: &Occupancy, b: &Occupancy) -> Result<f64, TaskError> {
    if a.dims != b.dims {
        return Err(TaskError::Shape(format!("{:?} vs {:?}", a.dims, b.dims)));
    }
    let (mut matching, mut either) = (0usize, 0usize);
    for y in 0..a.dims.h {
        for z in 0..a.dims.l {
            for x in 0..a.dims.w {
                let (u, v) = (a.get(x, y, z), b.get(x, y, z));
                if u != AIR || v != AIR {
                    either += 1;
                    if u == v {
                        matching += 1;
                    }
                }
            }
        }
    }
    Ok(if either == 0 { 1.0 } else { matching as f64 / either as f64 })
}

/// Per-dimension mean and population variance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self, TaskError> {
        let n = samples.len();
        let dim = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(TaskError::Shape("histograms of different lengths".into()));
        }
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m) / n as f64;
            }
        }
        Ok(DiagonalGaussian { mean, var })
    }
}

/// Fréchet distance between two diagonal Gaussians.
pub fn frechet_diagonal(a: &DiagonalGaussian, b: &DiagonalGaussian) -> Result<f64, TaskError> {
    if a.mean.len() != b.mean.len() {
        return Err(TaskError::Shape(format!("{} vs {} dimensions", a.mean.len(), b.mean.len())));
    }
    let mut d = 0.0;
    for i in 0..a.mean.len() {
        let dm = a.mean[i] - b.mean[i];
        let (va, vb) = (a.var[i], b.var[i]);
        d += dm * dm + (va + vb) - 2.0 * (va * vb).sqrt();
    }
    Ok(d.max(0.0))
}

/// Fréchet distance between diagonal Gaussians fitted to two sets of code
/// histograms. Each side needs at least two samples.
pub fn code_fid(codes_a: &[Vec<f64>], codes_b: &[Vec<f64>]) -> Result<f64, TaskError> {
    if codes_a.len() < 2 || codes_b.len() < 2 {
        return Err(TaskError::InsufficientSamples { a: codes_a.len(), b: codes_b.len() });
    }
    frechet_diagonal(&DiagonalGaussian::fit(codes_a)?, &DiagonalGaussian::fit(codes_b)?)
}

/// Code histograms of the four quarter-turn rotations of `occ`.
pub fn rotation_histograms(occ: &Occupancy, cb: &Codebook) -> Result<Vec<Vec<f64>>, TaskError> {
    let mut out = Vec::with_capacity(4);
    let mut cur = occ.clone();
    for _ in 0..4 {
        out.push(code_histogram(&cur, cb)?);
        cur = cur.rotate_quarter();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Dims, PLANKS, STONE};

    fn occ(cells: &[(i32, i32, i32, u8)]) -> Occupancy {
        let mut o = Occupancy::empty(Dims::new(4, 4, 4));
        for &(x, y, z, b) in cells {
            o.set(x, y, z, b);
        }
        o
    }

    #[test]
    fn iou_identities() {
        let a = occ(&[(0, 0, 0, STONE), (1, 0, 0, STONE), (2, 0, 0, STONE), (3, 0, 0, STONE)]);
        let b = occ(&[(0, 1, 0, STONE), (1, 1, 0, STONE), (2, 1, 0, STONE), (3, 1, 0, STONE)]);
        let c = occ(&[(0, 0, 0, STONE), (0, 0, 1, STONE), (0, 0, 2, STONE), (0, 0, 3, STONE)]);
        assert_eq!(voxel_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(voxel_iou(&a, &b).unwrap(), 0.0);
        assert!((voxel_iou(&a, &c).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        let empty = Occupancy::empty(Dims::new(4, 4, 4));
        assert_eq!(voxel_iou(&empty, &empty).unwrap(), 1.0);
        // same voxel, different block: not a match
        let d = occ(&[(0, 0, 0, PLANKS)]);
        assert_eq!(voxel_iou(&d, &occ(&[(0, 0, 0, STONE)])).unwrap(), 0.0);
        let err = voxel_iou(&a, &Occupancy::empty(Dims::new(4, 4, 5))).unwrap_err();
        assert_eq!(err.kind(), "ShapeError");
    }

    #[test]
    fn fid_identities() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 2.0]];
        let b = vec![vec![0.0, 5.0], vec![4.0, 1.0]];
        assert_eq!(code_fid(&a, &a).unwrap(), 0.0);
        assert_eq!(code_fid(&a, &b).unwrap(), code_fid(&b, &a).unwrap());
        // means 0 and 1, unit variances
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![vec![0.0], vec![2.0]];
        assert!((code_fid(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(code_fid(&a[..1], &b).unwrap_err().kind(), "InsufficientSamples");
    }
}
