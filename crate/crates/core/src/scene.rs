//! Domain types: Gaussian primitives, clouds, cameras, image buffers, and the
//! parameterizations (covariance factorization, Fourier features) the rest of
//! the crate consumes.

use nalgebra::{Matrix3, Vector3};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{linf_norm, quantile, quat_to_rotation, quat_to_rotation_backward, sigmoid};
use crate::sh;

pub const FOURIER_OCTAVES: usize = 4;
pub const FEATURE_DIM: usize = 3 * FOURIER_OCTAVES * 2; // 24

#[derive(Debug, Clone)]
pub struct GaussianPrimitive {
    /// Center position in world units.
    pub position: Vector3<f64>,
    /// Rotation quaternion (w, x, y, z); renormalized after every optimizer step.
    pub rotation: [f64; 4],
    /// Log of the three scale axes.
    pub log_scale: Vector3<f64>,
    /// Opacity stored as a logit; sigmoid gives alpha in (0,1).
    pub opacity_logit: f64,
    /// SH color coefficients, interleaved per coefficient: [c0_r, c0_g, c0_b, c1_r, ...].
    pub base_color: Vec<f64>,
    /// Frozen Fourier appearance feature.
    pub appearance_feature: [f64; FEATURE_DIM],
}

impl Default for GaussianPrimitive {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            base_color: vec![0.0; 3],
            appearance_feature: [0.0; FEATURE_DIM],
        }
    }
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// First three entries of `base_color` (the DC / degree-0 RGB).
    pub fn dc_color(&self) -> [f64; 3] {
        [self.base_color[0], self.base_color[1], self.base_color[2]]
    }

    pub fn renormalize_rotation(&mut self) {
        let n = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in &mut self.rotation {
                *v /= n;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianCloud {
    pub primitives: Vec<GaussianPrimitive>,
    /// 0.97-quantile of the L-inf norm of positions, fixed at construction.
    pub normalization_bound: f64,
    pub sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(mut primitives: Vec<GaussianPrimitive>, sh_degree: usize) -> Result<Self> {
        let positions: Vec<Vector3<f64>> = primitives.iter().map(|p| p.position).collect();
        let bound = quantile_bound(&positions)?.max(1e-6);
        for p in &mut primitives {
            p.appearance_feature = fourier_feature(&p.position, bound);
        }
        Ok(Self {
            primitives,
            normalization_bound: bound,
            sh_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn coeffs(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }
}

/// Sigma = R S Sᵀ Rᵀ with S = diag(exp(log_scale)).
pub fn covariance_from_params(rotation: &[f64; 4], log_scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !rotation.iter().all(|v| v.is_finite()) || !log_scale.iter().all(|v| v.is_finite()) {
        return Err(Error::ParamDomain("non-finite covariance parameters".into()));
    }
    if rotation.iter().map(|v| v * v).sum::<f64>() == 0.0 {
        return Err(Error::ParamDomain("zero quaternion".into()));
    }
    let r = quat_to_rotation(rotation);
    let a = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()));
    Ok(r * a * r.transpose())
}

/// Backward of [`covariance_from_params`]: dL/dq and dL/dlog_scale from dL/dSigma
/// (full-matrix gradient, not assumed symmetric).
pub fn covariance_backward(
    rotation: &[f64; 4],
    log_scale: &Vector3<f64>,
    sigma_bar: &Matrix3<f64>,
) -> ([f64; 4], Vector3<f64>) {
    let r = quat_to_rotation(rotation);
    let a = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()));
    let r_bar = (sigma_bar + sigma_bar.transpose()) * r * a;
    let q_bar = quat_to_rotation_backward(rotation, &r_bar);
    let a_bar = r.transpose() * sigma_bar * r;
    let ls_bar = Vector3::new(
        a_bar[(0, 0)] * 2.0 * (2.0 * log_scale.x).exp(),
        a_bar[(1, 1)] * 2.0 * (2.0 * log_scale.y).exp(),
        a_bar[(2, 2)] * 2.0 * (2.0 * log_scale.z).exp(),
    );
    (q_bar, ls_bar)
}

/// Multi-scale Fourier encoding of a position, clamped to the normalization cube.
///
/// Coordinates map affinely from [-bound, bound] to [0, 1]; out-of-bound points
/// clamp to the boundary instead of aliasing.
pub fn fourier_feature(position: &Vector3<f64>, bound: f64) -> [f64; FEATURE_DIM] {
    assert!(bound > 0.0);
    let mut out = [0.0; FEATURE_DIM];
    let mut idx = 0;
    for k in 0..3 {
        let t = ((position[k] / bound + 1.0) * 0.5).clamp(0.0, 1.0);
        for m in 1..=FOURIER_OCTAVES {
            let arg = std::f64::consts::PI * t * (1u32 << m) as f64;
            out[idx] = arg.sin();
            out[idx + 1] = arg.cos();
            idx += 2;
        }
    }
    out
}

/// 0.97-quantile of per-point L-inf norms.
pub fn quantile_bound(positions: &[Vector3<f64>]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::ParamDomain("quantile_bound of empty point set".into()));
    }
    let norms: Vec<f64> = positions.iter().map(linf_norm).collect();
    Ok(quantile(&norms, 0.97))
}

#[derive(Debug, Clone)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if err > 1e-6 {
            return Err(Error::ParamDomain(format!(
                "camera rotation not orthonormal (err {err:.2e})"
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::ParamDomain("camera smaller than 8x8".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Row-major image buffer; 1 or 3 channels. Color values live unclamped during
/// optimization and are clamped only at export.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Export to 8-bit PNG, clamping to [0,1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len());
        for v in &self.data {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        match self.channels {
            1 => {
                let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("buffer size");
                img.save(path)?;
            }
            _ => {
                let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("buffer size");
                img.save(path)?;
            }
        }
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Self::from_data(w, h, 3, data)
    }

    /// Flat little-endian float32 dump (tests and depth files).
    pub fn save_f32(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_f32(path: &Path, width: usize, height: usize, channels: usize) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() != width * height * channels * 4 {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected {} floats, found {}",
                path.display(),
                width * height * channels,
                bytes.len() / 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_data(width, height, channels, data)
    }

    /// Quantize through 8 bits, like a PNG round trip.
    pub fn quantized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Minimal ASCII PLY reader: x,y,z plus r,g,b (uchar or float).
pub fn load_ply_points(path: &Path) -> Result<Vec<(Vector3<f64>, [f64; 3])>> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();

    let mut count = 0usize;
    let mut props: Vec<String> = Vec::new();
    let mut color_is_uchar = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::ParamDomain("truncated PLY header".into()))??;
        let line = line.trim().to_string();
        if line.starts_with("format") && !line.contains("ascii") {
            return Err(Error::ParamDomain("only ASCII PLY supported".into()));
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = rest
                .trim()
                .parse()
                .map_err(|_| Error::ParamDomain("bad vertex count".into()))?;
        }
        if line.starts_with("property") {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() == 3 {
                if parts[1] == "uchar" && (parts[2] == "red" || parts[2] == "r") {
                    color_is_uchar = true;
                }
                props.push(parts[2].to_string());
            }
        }
        if line == "end_header" {
            break;
        }
    }

    let find = |name: &str, alt: &str| -> Result<usize> {
        props
            .iter()
            .position(|p| p == name || p == alt)
            .ok_or_else(|| Error::ParamDomain(format!("PLY missing property {name}")))
    };
    let (ix, iy, iz) = (find("x", "x")?, find("y", "y")?, find("z", "z")?);
    let (ir, ig, ib) = (find("red", "r")?, find("green", "g")?, find("blue", "b")?);

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::ParamDomain("truncated PLY body".into()))??;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::ParamDomain("bad PLY vertex line".into()))?;
        if vals.len() < props.len() {
            return Err(Error::ParamDomain("short PLY vertex line".into()));
        }
        let scale = if color_is_uchar { 1.0 / 255.0 } else { 1.0 };
        out.push((
            Vector3::new(vals[ix], vals[iy], vals[iz]),
            [vals[ir] * scale, vals[ig] * scale, vals[ib] * scale],
        ));
    }
    Ok(out)
}

/// ASCII PLY with float positions and colors; inverse of [`load_ply_points`].
pub fn save_ply_points(path: &Path, points: &[(Vector3<f64>, [f64; 3])]) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", points.len()));
    for p in ["x", "y", "z"] {
        s.push_str(&format!("property float {p}\n"));
    }
    for p in ["red", "green", "blue"] {
        s.push_str(&format!("property float {p}\n"));
    }
    s.push_str("end_header\n");
    for (pos, rgb) in points {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            pos.x, pos.y, pos.z, rgb[0], rgb[1], rgb[2]
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Build an optimizable cloud from colored points, with isotropic scales set
/// from the mean distance to the three nearest neighbors.
pub fn cloud_from_points(
    points: &[(Vector3<f64>, [f64; 3])],
    sh_degree: usize,
    initial_opacity: f64,
) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::ParamDomain("empty point set".into()));
    }
    let coeffs = sh::coeff_count(sh_degree);
    let mut prims = Vec::with_capacity(points.len());
    for (i, (pos, rgb)) in points.iter().enumerate() {
        let mut dists: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (q, _))| (q - pos).norm())
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nn = if dists.is_empty() {
            0.1
        } else {
            let k = dists.len().min(3);
            dists[..k].iter().sum::<f64>() / k as f64
        };
        let s = nn.max(1e-4).ln();
        let mut base_color = vec![0.0; coeffs * 3];
        base_color[..3].copy_from_slice(rgb);
        prims.push(GaussianPrimitive {
            position: *pos,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::new(s, s, s),
            opacity_logit: crate::math::logit(initial_opacity),
            base_color,
            appearance_feature: [0.0; FEATURE_DIM],
        });
    }
    GaussianCloud::new(prims, sh_degree)
}
