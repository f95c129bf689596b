//! Underwater appearance modeling: pose-conditioned embeddings and a
//! per-gaussian color network emitting channel-wise affine factors that are
//! applied to the SH-evaluated base color.

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Mlp, MlpCache};
use crate::scene::{Camera, GaussianPrimitive, FEATURE_DIM};
use crate::sh;

pub const EMBED_DIM: usize = 16;
pub const POSE_SCALARS: usize = 12;
pub const POSE_OCTAVES: usize = 4;
pub const POSE_ENC_DIM: usize = POSE_SCALARS * POSE_OCTAVES * 2; // 96

#[derive(Debug, Clone)]
pub struct AppearanceModel {
    /// Two-layer perceptron: encoded pose -> embedding.
    pub pose_embedder: Mlp,
    /// Three-layer perceptron: (dc color, feature, embedding) -> (raw gamma, beta).
    pub color_net: Mlp,
}

#[derive(Debug, Clone)]
pub struct EmbedCache {
    pub encoded: Vec<f64>,
    pub mlp: MlpCache,
}

#[derive(Debug, Clone)]
pub struct ColorCache {
    pub mlp: MlpCache,
    pub raw: Vec<f64>,
    pub basis: [f64; 16],
    pub base_eval: [f64; 3],
    /// Unnormalized view vector (position - camera center); empty norm guarded.
    pub view_vec: Vector3<f64>,
}

/// Gradients for both networks in `params_flat` layout.
#[derive(Debug, Clone)]
pub struct AppearanceGrads {
    pub pose_embedder: Vec<f64>,
    pub color_net: Vec<f64>,
}

impl AppearanceModel {
    /// `hidden` is the hidden width of both perceptrons. The color net's
    /// output layer starts at zero so the affine head is exactly (1, 0).
    pub fn new(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            pose_embedder: Mlp::new(&[POSE_ENC_DIM, hidden, EMBED_DIM], false, rng),
            color_net: Mlp::new(&[3 + FEATURE_DIM + EMBED_DIM, hidden, hidden, 6], true, rng),
        }
    }

    pub fn zero_grads(&self) -> AppearanceGrads {
        AppearanceGrads {
            pose_embedder: vec![0.0; self.pose_embedder.n_params()],
            color_net: vec![0.0; self.color_net.n_params()],
        }
    }

    /// Sin/cos positional encoding of the 12 flattened pose scalars.
    pub fn encode_pose(camera: &Camera) -> Vec<f64> {
        let mut scalars = [0.0f64; POSE_SCALARS];
        for r in 0..3 {
            for c in 0..3 {
                scalars[r * 3 + c] = camera.rotation[(r, c)];
            }
        }
        scalars[9] = camera.translation.x;
        scalars[10] = camera.translation.y;
        scalars[11] = camera.translation.z;

        let mut out = Vec::with_capacity(POSE_ENC_DIM);
        for s in scalars {
            for m in 0..POSE_OCTAVES {
                let arg = s * (1u32 << m) as f64;
                out.push(arg.sin());
                out.push(arg.cos());
            }
        }
        out
    }

    pub fn embed_pose(&self, camera: &Camera) -> (Vec<f64>, EmbedCache) {
        let encoded = Self::encode_pose(camera);
        let (e, mlp) = self.pose_embedder.forward(&encoded);
        (e, EmbedCache { encoded, mlp })
    }

    /// Evaluate the base color from SH coefficients, then apply the affine
    /// transform emitted by the color net. Output is intentionally unclamped.
    pub fn appearance_color(
        &self,
        primitive: &GaussianPrimitive,
        sh_degree: usize,
        view_vec: &Vector3<f64>,
        embedding: &[f64],
    ) -> ([f64; 3], ColorCache) {
        let dir = safe_normalize(view_vec);
        let basis = sh::basis(sh_degree, &dir);
        let coeffs = sh::coeff_count(sh_degree);
        let mut base_eval = [0.0f64; 3];
        for j in 0..coeffs {
            for ch in 0..3 {
                base_eval[ch] += basis[j] * primitive.base_color[j * 3 + ch];
            }
        }

        let mut input = Vec::with_capacity(self.color_net.in_dim());
        input.extend_from_slice(&primitive.base_color[..3]);
        input.extend_from_slice(&primitive.appearance_feature);
        input.extend_from_slice(embedding);
        let (raw, mlp) = self.color_net.forward(&input);

        let mut out = [0.0f64; 3];
        for ch in 0..3 {
            let gamma = raw[ch].exp();
            out[ch] = gamma * base_eval[ch] + raw[3 + ch];
        }
        (
            out,
            ColorCache {
                mlp,
                raw,
                basis,
                base_eval,
                view_vec: *view_vec,
            },
        )
    }

    /// Chains upstream color gradients into the color net, base-color
    /// coefficients, position (through the view direction for SH degree > 0),
    /// and the view embedding.
    #[allow(clippy::too_many_arguments)]
    pub fn color_backward(
        &self,
        primitive: &GaussianPrimitive,
        sh_degree: usize,
        cache: &ColorCache,
        upstream: &[f64; 3],
        grads: &mut AppearanceGrads,
        base_color_grad: &mut [f64],
        position_grad: &mut Vector3<f64>,
        embedding_grad: &mut [f64],
    ) {
        let mut raw_bar = vec![0.0f64; 6];
        let mut base_eval_bar = [0.0f64; 3];
        for ch in 0..3 {
            let gamma = cache.raw[ch].exp();
            raw_bar[ch] = upstream[ch] * cache.base_eval[ch] * gamma;
            raw_bar[3 + ch] = upstream[ch];
            base_eval_bar[ch] = upstream[ch] * gamma;
        }

        let gin = self.color_net.backward(&cache.mlp, &raw_bar, &mut grads.color_net);
        for ch in 0..3 {
            base_color_grad[ch] += gin[ch];
        }
        let e_off = 3 + FEATURE_DIM;
        for k in 0..EMBED_DIM {
            embedding_grad[k] += gin[e_off + k];
        }

        // Base color evaluation: linear in coefficients, nonlinear in direction.
        let coeffs = sh::coeff_count(sh_degree);
        for j in 0..coeffs {
            for ch in 0..3 {
                base_color_grad[j * 3 + ch] += base_eval_bar[ch] * cache.basis[j];
            }
        }
        if sh_degree > 0 {
            let v = cache.view_vec;
            let n = v.norm();
            if n > 1e-12 {
                let dir = v / n;
                let bgrad = sh::basis_grad(sh_degree, &dir);
                let mut dir_bar = Vector3::zeros();
                for j in 0..coeffs {
                    let mut w = 0.0;
                    for ch in 0..3 {
                        w += base_eval_bar[ch] * primitive.base_color[j * 3 + ch];
                    }
                    dir_bar += w * Vector3::new(bgrad[j][0], bgrad[j][1], bgrad[j][2]);
                }
                // d(v/|v|)/dv = (I - dir dirᵀ)/|v|
                let v_bar = (dir_bar - dir * dir.dot(&dir_bar)) / n;
                *position_grad += v_bar;
            }
        }
    }

    pub fn embed_backward(&self, cache: &EmbedCache, e_bar: &[f64], grads: &mut AppearanceGrads) {
        self.pose_embedder
            .backward(&cache.mlp, e_bar, &mut grads.pose_embedder);
    }
}

fn safe_normalize(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    }
}
