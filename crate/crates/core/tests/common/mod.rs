#![allow(dead_code)]

use pedseg::metrics::BinaryMask;
use pedseg::volume::{Dims, Grid};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> Dims {
    [0; 3].map(|_| rng.random_range(1..=max))
}

pub fn random_spacing(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.5..=3.0))
}

/// Blobby random mask: a few boxes plus salt noise, at a random density.
pub fn random_mask(rng: &mut ChaCha8Rng, grid: Grid) -> BinaryMask {
    let [nx, ny, nz] = grid.dims();
    let mut bits = vec![false; grid.len()];
    for _ in 0..rng.random_range(0..4) {
        let lo = [nx, ny, nz].map(|n| rng.random_range(0..n));
        let hi = [0, 1, 2].map(|a| rng.random_range(lo[a]..[nx, ny, nz][a]));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    bits[grid.index(x, y, z)] = true;
                }
            }
        }
    }
    let density: f64 = rng.random_range(0.0..0.3);
    for b in bits.iter_mut() {
        if rng.random_bool(density) {
            *b = !*b;
        }
    }
    BinaryMask::new(grid, bits).unwrap()
}

pub fn dsc_oracle(a: &[bool], b: &[bool]) -> Option<f64> {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    (na + nb > 0).then(|| 2.0 * inter as f64 / (na + nb) as f64)
}

/// Voxels of the mask touching the outside through a face (volume border counts as outside).
pub fn surface_oracle(m: &BinaryMask) -> Vec<[usize; 3]> {
    let g = m.grid();
    let [nx, ny, nz] = g.dims();
    let inside = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && m.bits()[g.index(x as usize, y as usize, z as usize)]
    };
    let mut out = Vec::new();
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if !inside(x, y, z) {
                    continue;
                }
                let steps = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ];
                if steps
                    .iter()
                    .any(|(dx, dy, dz)| !inside(x + dx, y + dy, z + dz))
                {
                    out.push([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    out
}

pub fn dist2(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * s[k];
            d * d
        })
        .sum()
}

/// Surface Dice from every pair of surface voxels.
pub fn nsd_oracle(a: &BinaryMask, b: &BinaryMask, tau: f64) -> Option<f64> {
    let sa = surface_oracle(a);
    let sb = surface_oracle(b);
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => return None,
        (true, false) | (false, true) => return Some(0.0),
        _ => {}
    }
    let s = a.grid().spacing();
    let near = |p: &[usize; 3], other: &[[usize; 3]]| {
        other
            .iter()
            .map(|q| dist2(*p, *q, s))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
            <= tau
    };
    let hits =
        sa.iter().filter(|p| near(p, &sb)).count() + sb.iter().filter(|p| near(p, &sa)).count();
    Some(hits as f64 / (sa.len() + sb.len()) as f64)
}

/// Squared distance to the nearest foreground voxel, by exhaustive search.
pub fn edt_oracle(m: &BinaryMask) -> Vec<f64> {
    let g = m.grid();
    let fg: Vec<[usize; 3]> = (0..g.len())
        .filter(|&i| m.bits()[i])
        .map(|i| g.coords(i))
        .collect();
    (0..g.len())
        .map(|i| {
            let p = g.coords(i);
            fg.iter()
                .map(|q| dist2(p, *q, g.spacing()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn bin_path() -> &'static str {
    env!("CARGO_BIN_EXE_pedseg")
}
