//! Real spherical-harmonic basis up to degree 3 for view-dependent base color.
//!
//! The degree-0 basis function is 1 (the normalization constant is absorbed
//! into the coefficient), so a degree-0 cloud stores plain RGB.

use nalgebra::Vector3;

const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_DEGREE: usize = 3;

pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values for a unit direction, first `coeff_count(degree)` entries valid.
pub fn basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = 1.0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * z * z - x * x - y * y);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (x * x - y * y);
    }
    if degree >= 3 {
        b[9] = C3[0] * y * (3.0 * x * x - y * y);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * z * z - x * x - y * y);
        b[12] = C3[3] * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y);
        b[13] = C3[4] * x * (4.0 * z * z - x * x - y * y);
        b[14] = C3[5] * z * (x * x - y * y);
        b[15] = C3[6] * x * (x * x - 3.0 * y * y);
    }
    b
}

/// Partial derivatives of each basis function w.r.t. the (unnormalized basis
/// input) direction components. Returns [d/dx, d/dy, d/dz] per function.
pub fn basis_grad(degree: usize, dir: &Vector3<f64>) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [-C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    }
    if degree >= 3 {
        g[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * x * x - 3.0 * y * y), 0.0];
        g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
        g[11] = [
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * z * z - x * x - 3.0 * y * y),
            8.0 * C3[2] * y * z,
        ];
        g[12] = [
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y),
        ];
        g[13] = [
            C3[4] * (4.0 * z * z - 3.0 * x * x - y * y),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        ];
        g[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (x * x - y * y)];
        g[15] = [C3[6] * (3.0 * x * x - 3.0 * y * y), -6.0 * C3[6] * x * y, 0.0];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degree0_is_identity() {
        let b = basis(0, &Vector3::new(0.2, -0.5, 0.8));
        assert_eq!(b[0], 1.0);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn basis_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let d = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let g = basis_grad(3, &d);
            for k in 0..3 {
                let h = 1e-6;
                let mut dp = d;
                dp[k] += h;
                let mut dm = d;
                dm[k] -= h;
                let bp = basis(3, &dp);
                let bm = basis(3, &dm);
                for i in 0..16 {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    assert!((fd - g[i][k]).abs() < 1e-6 * fd.abs().max(1.0), "i={i} k={k}");
                }
            }
        }
    }
}
