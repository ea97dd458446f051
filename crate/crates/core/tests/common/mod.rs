#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfi_core::field::{GridSpec, ScalarField};

/// Random field smoothed by a few passes of 5-point averaging, then mapped
/// affinely onto `[lo, hi]`.
pub fn smooth_random_field(grid: GridSpec, seed: u64, lo: f64, hi: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut v: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
    for _ in 0..4 {
        let mut next = v.clone();
        for j in 0..ny {
            for i in 0..nx {
                let mut s = v[j * nx + i];
                let mut c = 1.0;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                        s += v[jj as usize * nx + ii as usize];
                        c += 1.0;
                    }
                }
                next[j * nx + i] = s / c;
            }
        }
        v = next;
    }
    let (mn, mx) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let vals = v.iter().map(|x| lo + (hi - lo) * (x - mn) / (mx - mn)).collect();
    ScalarField::new(grid, vals).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
