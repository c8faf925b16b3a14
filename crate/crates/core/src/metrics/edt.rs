//! Exact squared Euclidean distance transform on anisotropic grids.
//!
//! Three separable passes, one per axis, each computing the lower envelope
//! of parabolas rooted at the samples of the previous pass. Distances are
//! measured between voxel centres in millimetres.

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Lower envelope of parabolas `(x - pos(q))^2 + f[q]` evaluated at every
/// sample position, written to `out`. Infinite `f[q]` contributes nothing.
/// `roots` and `bounds` are scratch space of at least `f.len()` and
/// `f.len() + 1` elements.
fn envelope_1d(f: &[f64], step: f64, out: &mut [f64], roots: &mut [usize], bounds: &mut [f64]) {
    let n = f.len();
    let pos = |i: usize| i as f64 * step;
    let mut k: isize = -1;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + pos(q) * pos(q);
        loop {
            if k < 0 {
                k = 0;
                roots[0] = q;
                bounds[0] = f64::NEG_INFINITY;
                bounds[1] = f64::INFINITY;
                break;
            }
            let v = roots[k as usize];
            let fv = f[v] + pos(v) * pos(v);
            let s = (fq - fv) / (2.0 * (pos(q) - pos(v)));
            if s <= bounds[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            roots[k as usize] = q;
            bounds[k as usize] = s;
            bounds[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while bounds[j + 1] < x {
            j += 1;
        }
        let q = roots[j];
        let d = x - pos(q);
        *o = d * d + f[q];
    }
}

/// Squared EDT of a boolean field laid out x-fastest over `dims`.
pub(crate) fn squared_edt_raw(bits: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut field: Vec<f64> = bits
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut roots = vec![0usize; longest];
    let mut bounds = vec![0.0; longest + 1];

    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let (a, b) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        for j in 0..b {
            for i in 0..a {
                let start = match axis {
                    0 => nx * (i + ny * j),
                    1 => i + nx * ny * j,
                    _ => i + nx * j,
                };
                for t in 0..n {
                    line[t] = field[start + t * stride];
                }
                if line[..n].iter().all(|v| v.is_infinite()) {
                    continue;
                }
                envelope_1d(
                    &line[..n],
                    spacing[axis],
                    &mut out[..n],
                    &mut roots[..n],
                    &mut bounds[..n + 1],
                );
                for t in 0..n {
                    field[start + t * stride] = out[t];
                }
            }
        }
    }
    field
}

/// Squared distance (mm²) from every voxel centre to the nearest foreground
/// voxel centre. Zero on the foreground.
pub fn squared_edt(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(squared_edt_raw(
        mask.bits(),
        mask.grid().dims(),
        mask.grid().spacing(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn mask(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> BinaryMask {
        let grid = Grid::new(dims, spacing).unwrap();
        let mut bits = vec![false; grid.len()];
        for &[x, y, z] in on {
            bits[grid.index(x, y, z)] = true;
        }
        BinaryMask::new(grid, bits).unwrap()
    }

    #[test]
    fn single_voxel_anisotropic() {
        let m = mask([3, 3, 3], [1.0, 2.0, 3.0], &[[0, 0, 0]]);
        let d = squared_edt(&m).unwrap();
        assert_eq!(d[m.grid().index(1, 1, 1)], 14.0);
        assert_eq!(d[m.grid().index(2, 2, 2)], 4.0 + 16.0 + 36.0);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn all_foreground_is_zero() {
        let grid = Grid::new([4, 3, 2], [0.7, 1.1, 2.3]).unwrap();
        let m = BinaryMask::new(grid, vec![true; grid.len()]).unwrap();
        assert!(squared_edt(&m).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_mask_errors() {
        let m = mask([2, 2, 2], [1.0; 3], &[]);
        assert!(matches!(squared_edt(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn two_seeds_on_a_line() {
        let m = mask([7, 1, 1], [0.5, 1.0, 1.0], &[[0, 0, 0], [6, 0, 0]]);
        let d = squared_edt(&m).unwrap();
        let expect = [0.0, 0.25, 1.0, 2.25, 1.0, 0.25, 0.0];
        assert_eq!(d, expect);
    }
}
