//! Tiny dense / convolutional layers with hand-written backprop.
//!
//! Everything runs in f64 and single-threaded; parameters flatten to a single
//! `Vec<f64>` per network so the optimizer and finite-difference harness can
//! treat them uniformly.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::math::{leaky_relu, leaky_relu_grad};

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major (out x in).
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    pub fn he_init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        Self {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out[o] = acc;
        }
    }

    /// Accumulates into `gx`, `gw`, `gb`.
    pub fn backward(&self, x: &[f64], gout: &[f64], gx: &mut [f64], gw: &mut [f64], gb: &mut [f64]) {
        for o in 0..self.out_dim {
            let g = gout[o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Fully-connected net with leaky-ReLU hidden activations and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// inputs[i] is the input fed to layer i; pre[i] its pre-activation output.
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims` = [in, hidden.., out]; hidden layers He-initialized. When
    /// `zero_output` is set the final layer starts at exactly zero.
    pub fn new(dims: &[usize], zero_output: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            layers.push(if last && zero_output {
                Dense::zeros(dims[i], dims[i + 1])
            } else {
                Dense::he_init(dims[i], dims[i + 1], rng)
            });
        }
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache::default();
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            layer.forward(&cur, &mut out);
            cache.inputs.push(cur);
            cache.pre.push(out.clone());
            if i + 1 < self.layers.len() {
                for v in &mut out {
                    *v = leaky_relu(*v);
                }
            }
            cur = out;
        }
        (cur, cache)
    }

    /// Backward pass; accumulates parameter grads into `gparams` (layout of
    /// [`Self::params_flat`]) and returns dL/dinput.
    pub fn backward(&self, cache: &MlpCache, gout: &[f64], gparams: &mut [f64]) -> Vec<f64> {
        let mut g = gout.to_vec();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.n_params();
        }
        debug_assert_eq!(off, gparams.len());

        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i + 1 < self.layers.len() {
                // Undo the activation applied after this layer's pre-activation.
                for (gv, pre) in g.iter_mut().zip(&cache.pre[i]) {
                    *gv *= leaky_relu_grad(*pre);
                }
            }
            let (gw, gb) = gparams[offsets[i]..offsets[i] + layer.n_params()]
                .split_at_mut(layer.w.len());
            let mut gx = vec![0.0; layer.in_dim];
            layer.backward(&cache.inputs[i], &g, &mut gx, gw, gb);
            g = gx;
        }
        g
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let wl = l.w.len();
            l.w.copy_from_slice(&params[off..off + wl]);
            off += wl;
            let bl = l.b.len();
            l.b.copy_from_slice(&params[off..off + bl]);
            off += bl;
        }
        assert_eq!(off, params.len());
    }
}

/// 3x3 convolution with zero "same" padding over channel-interleaved row-major
/// maps (the `ImageBuffer` layout generalized to C channels).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// [out_ch][in_ch][ky][kx]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

pub const KSIZE: usize = 3;

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            w: vec![0.0; in_ch * out_ch * KSIZE * KSIZE],
            b: vec![0.0; out_ch],
        }
    }

    pub fn he_init(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * KSIZE * KSIZE;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        Self {
            in_ch,
            out_ch,
            w: (0..in_ch * out_ch * KSIZE * KSIZE)
                .map(|_| normal.sample(rng))
                .collect(),
            b: vec![0.0; out_ch],
        }
    }

    #[inline]
    fn widx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_ch + ic) * KSIZE + ky) * KSIZE + kx
    }

    pub fn forward(&self, input: &[f64], w: usize, h: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), w * h * self.in_ch);
        let mut out = vec![0.0; w * h * self.out_ch];
        for y in 0..h {
            for x in 0..w {
                for oc in 0..self.out_ch {
                    let mut acc = self.b[oc];
                    for ky in 0..KSIZE {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..KSIZE {
                            let xx = x as isize + kx as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let base = (yy as usize * w + xx as usize) * self.in_ch;
                            for ic in 0..self.in_ch {
                                acc += self.w[self.widx(oc, ic, ky, kx)] * input[base + ic];
                            }
                        }
                    }
                    out[(y * w + x) * self.out_ch + oc] = acc;
                }
            }
        }
        out
    }

    /// Accumulates dL/dinput (returned), and dL/dw, dL/db into `gw`/`gb`.
    pub fn backward(
        &self,
        input: &[f64],
        gout: &[f64],
        w: usize,
        h: usize,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        let mut gin = vec![0.0; w * h * self.in_ch];
        for y in 0..h {
            for x in 0..w {
                for oc in 0..self.out_ch {
                    let g = gout[(y * w + x) * self.out_ch + oc];
                    if g == 0.0 {
                        continue;
                    }
                    gb[oc] += g;
                    for ky in 0..KSIZE {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..KSIZE {
                            let xx = x as isize + kx as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let base = (yy as usize * w + xx as usize) * self.in_ch;
                            for ic in 0..self.in_ch {
                                let wi = self.widx(oc, ic, ky, kx);
                                gw[wi] += g * input[base + ic];
                                gin[base + ic] += g * self.w[wi];
                            }
                        }
                    }
                }
            }
        }
        gin
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn mlp_backward_matches_fd() {
        let mut r = rng();
        let mlp = Mlp::new(&[5, 8, 4], false, &mut r);
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();
        let gout: Vec<f64> = (0..4).map(|i| 1.0 - 0.4 * i as f64).collect();

        let (_, cache) = mlp.forward(&x);
        let mut gparams = vec![0.0; mlp.n_params()];
        let gx = mlp.backward(&cache, &gout, &mut gparams);

        let loss = |m: &Mlp, x: &[f64]| -> f64 {
            let (y, _) = m.forward(x);
            y.iter().zip(&gout).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        // Input grads.
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
        // Parameter grads (all of them, net is tiny).
        let base = mlp.params_flat();
        for i in 0..base.len() {
            let mut m2 = mlp.clone();
            let mut p = base.clone();
            p[i] += h;
            m2.set_params_flat(&p);
            let lp = loss(&m2, &x);
            p[i] -= 2.0 * h;
            m2.set_params_flat(&p);
            let lm = loss(&m2, &x);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - gparams[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {i}: fd {fd} vs {}",
                gparams[i]
            );
        }
    }

    #[test]
    fn conv_backward_matches_fd() {
        let mut r = rng();
        let conv = Conv2d::he_init(2, 3, &mut r);
        let (w, h) = (4, 3);
        let input: Vec<f64> = (0..w * h * 2).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.4).collect();
        let gout: Vec<f64> = (0..w * h * 3).map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.5).collect();

        let mut gw = vec![0.0; conv.w.len()];
        let mut gb = vec![0.0; conv.b.len()];
        let gin = conv.backward(&input, &gout, w, h, &mut gw, &mut gb);

        let loss = |c: &Conv2d, inp: &[f64]| -> f64 {
            c.forward(inp, w, h).iter().zip(&gout).map(|(a, b)| a * b).sum()
        };
        let step = 1e-6;
        for i in 0..input.len() {
            let mut ip = input.clone();
            ip[i] += step;
            let mut im = input.clone();
            im[i] -= step;
            let fd = (loss(&conv, &ip) - loss(&conv, &im)) / (2.0 * step);
            assert!((fd - gin[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
        for i in 0..conv.w.len() {
            let mut c2 = conv.clone();
            c2.w[i] += step;
            let lp = loss(&c2, &input);
            c2.w[i] -= 2.0 * step;
            let lm = loss(&c2, &input);
            let fd = (lp - lm) / (2.0 * step);
            assert!((fd - gw[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
        for i in 0..conv.b.len() {
            let mut c2 = conv.clone();
            c2.b[i] += step;
            let lp = loss(&c2, &input);
            c2.b[i] -= 2.0 * step;
            let lm = loss(&c2, &input);
            let fd = (lp - lm) / (2.0 * step);
            assert!((fd - gb[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mut r = rng();
        let mlp = Mlp::new(&[3, 6, 2], true, &mut r);
        let (y, _) = mlp.forward(&[0.5, -0.2, 0.9]);
        assert_eq!(y, vec![0.0, 0.0]);
    }
}
