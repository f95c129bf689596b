//! Adam with per-attribute learning rates and moment-state surgery for
//! densification (rows are kept, dropped, or appended in lockstep with the
//! Gaussian cloud).

/// Standard bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// Keep rows flagged true, then append `added` zero rows. `stride` is the
    /// number of scalars per row.
    pub fn resize_rows(&mut self, keep: &[bool], added: usize, stride: usize) {
        assert_eq!(keep.len() * stride, self.m.len());
        let retain_row = |buf: &Vec<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity((keep.iter().filter(|&&k| k).count() + added) * stride);
            for (r, &k) in keep.iter().enumerate() {
                if k {
                    out.extend_from_slice(&buf[r * stride..(r + 1) * stride]);
                }
            }
            out.extend(std::iter::repeat(0.0).take(added * stride));
            out
        };
        self.m = retain_row(&self.m);
        self.v = retain_row(&self.v);
    }
}

/// Per-attribute learning rates. Position follows an exponential decay over
/// the run; everything else is constant.
#[derive(Debug, Clone, Copy)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub networks: f64,
    /// Medium heads get their own (typically faster) rate: the attenuation /
    /// object-color factorization is near-degenerate, and within a short run
    /// the heads must win that race for the decomposition to be physical.
    pub medium: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            networks: 1e-3,
            medium: 1e-2,
        }
    }
}

impl LearningRates {
    /// Log-linear interpolation from init to final across the run.
    pub fn position_at(&self, iteration: u64, total: u64) -> f64 {
        if total == 0 {
            return self.position_init;
        }
        let t = (iteration as f64 / total as f64).clamp(0.0, 1.0);
        self.position_init * (self.position_final / self.position_init).powf(t)
    }
}
