//! Small numeric helpers shared across the crate.

use nalgebra::{Matrix3, Vector3};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// d softplus / dx.
pub fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

/// Inverse of softplus, for picking biases that hit a target output.
pub fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_relu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Quantile with linear interpolation between closest ranks.
///
/// `q` in [0,1]; panics on an empty slice (callers validate first).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Rotation matrix from a (not necessarily unit) quaternion (w, x, y, z).
/// The quaternion is normalized internally.
pub fn quat_to_rotation(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Backward of [`quat_to_rotation`]: accumulates dL/dq given dL/dR,
/// including the internal normalization.
pub fn quat_to_rotation_backward(q: &[f64; 4], r_bar: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);

    // dR/dq̂_k as explicit matrices.
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;

    let dot = |m: &Matrix3<f64>| -> f64 { r_bar.component_mul(m).sum() };
    let g_hat = [dot(&dw), dot(&dx), dot(&dy), dot(&dz)];

    // Chain through q̂ = q / |q|: dq̂/dq = (I - q̂ q̂ᵀ) / |q|.
    let q_hat = [w, x, y, z];
    let proj: f64 = (0..4).map(|k| g_hat[k] * q_hat[k]).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g_hat[k] - proj * q_hat[k]) / n;
    }
    out
}

pub fn linf_norm(v: &Vector3<f64>) -> f64 {
    v.x.abs().max(v.y.abs()).max(v.z.abs())
}
