//! On-disk dataset layout: `cameras.json`, `images/NNN.png`, optional
//! `clean/NNN.png`, `depth/NNN.f32` (little-endian float32 camera-space
//! meters), optional `medium.json` truth record.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, ImageBuffer};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    /// Rotation, 9 floats row-major (world-to-camera).
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut r = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                r[row * 3 + col] = c.rotation[(row, col)];
            }
        }
        Self {
            r,
            t: [c.translation.x, c.translation.y, c.translation.z],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        let cam = Camera {
            rotation: Matrix3::from_row_slice(&self.r),
            translation: Vector3::new(self.t[0], self.t[1], self.t[2]),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Ground-truth medium coefficients recorded by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumTruth {
    pub beta_d: [f64; 3],
    pub beta_b: [f64; 3],
    pub b_inf: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    /// Degraded observations I.
    pub images: Vec<ImageBuffer>,
    /// Clean ground truth J, when the simulator produced it.
    pub clean: Option<Vec<ImageBuffer>>,
    /// Camera-space depth per view (ground truth or supplied pseudo-depth).
    pub depths: Vec<ImageBuffer>,
    pub medium_truth: Option<MediumTruth>,
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::DatasetLoad {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn view_name(i: usize, ext: &str) -> String {
    format!("{i:03}.{ext}")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Usage("dataset has no views".into()));
        }
        if self.images.len() != self.cameras.len() || self.depths.len() != self.cameras.len() {
            return Err(Error::ShapeMismatch(format!(
                "dataset lists disagree: {} cameras, {} images, {} depths",
                self.cameras.len(),
                self.images.len(),
                self.depths.len()
            )));
        }
        if let Some(clean) = &self.clean {
            if clean.len() != self.cameras.len() {
                return Err(Error::ShapeMismatch("clean image count differs".into()));
            }
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            cam.validate()?;
            let img = &self.images[i];
            if img.width != cam.width || img.height != cam.height || img.channels != 3 {
                return Err(Error::ShapeMismatch(format!("image {i} size mismatch")));
            }
            let d = &self.depths[i];
            if d.width != cam.width || d.height != cam.height || d.channels != 1 {
                return Err(Error::ShapeMismatch(format!("depth {i} size mismatch")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("depth"))?;
        let records: Vec<CameraRecord> = self.cameras.iter().map(CameraRecord::from).collect();
        std::fs::write(
            dir.join("cameras.json"),
            serde_json::to_string_pretty(&records)?,
        )?;
        for (i, img) in self.images.iter().enumerate() {
            img.save_png(&dir.join("images").join(view_name(i, "png")))?;
        }
        for (i, d) in self.depths.iter().enumerate() {
            d.save_f32(&dir.join("depth").join(view_name(i, "f32")))?;
        }
        if let Some(clean) = &self.clean {
            std::fs::create_dir_all(dir.join("clean"))?;
            for (i, img) in clean.iter().enumerate() {
                img.save_png(&dir.join("clean").join(view_name(i, "png")))?;
            }
        }
        if let Some(truth) = &self.medium_truth {
            std::fs::write(dir.join("medium.json"), serde_json::to_string_pretty(truth)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cam_path = dir.join("cameras.json");
        let text = std::fs::read_to_string(&cam_path)
            .map_err(|e| load_err(&cam_path, format!("missing or unreadable: {e}")))?;
        let records: Vec<CameraRecord> = serde_json::from_str(&text)
            .map_err(|e| load_err(&cam_path, format!("malformed camera record: {e}")))?;
        if records.is_empty() {
            return Err(load_err(&cam_path, "no cameras listed"));
        }
        let mut cameras = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            cameras.push(
                rec.to_camera()
                    .map_err(|e| load_err(&cam_path, format!("camera {i}: {e}")))?,
            );
        }

        let mut images = Vec::with_capacity(cameras.len());
        let mut depths = Vec::with_capacity(cameras.len());
        for (i, cam) in cameras.iter().enumerate() {
            let img_path = dir.join("images").join(view_name(i, "png"));
            let img = ImageBuffer::load_png(&img_path)
                .map_err(|e| load_err(&img_path, format!("view {i}: {e}")))?;
            if img.width != cam.width || img.height != cam.height {
                return Err(load_err(&img_path, format!("view {i}: size mismatch")));
            }
            images.push(img);

            let d_path = dir.join("depth").join(view_name(i, "f32"));
            let d = ImageBuffer::load_f32(&d_path, cam.width, cam.height, 1)
                .map_err(|e| load_err(&d_path, format!("view {i}: {e}")))?;
            depths.push(d);
        }

        let clean_dir = dir.join("clean");
        let clean = if clean_dir.is_dir() {
            let mut list = Vec::with_capacity(cameras.len());
            for (i, cam) in cameras.iter().enumerate() {
                let path = clean_dir.join(view_name(i, "png"));
                let img = ImageBuffer::load_png(&path)
                    .map_err(|e| load_err(&path, format!("view {i}: {e}")))?;
                if img.width != cam.width || img.height != cam.height {
                    return Err(load_err(&path, format!("view {i}: size mismatch")));
                }
                list.push(img);
            }
            Some(list)
        } else {
            None
        };

        let medium_path: PathBuf = dir.join("medium.json");
        let medium_truth = if medium_path.is_file() {
            let text = std::fs::read_to_string(&medium_path)?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| load_err(&medium_path, format!("malformed: {e}")))?,
            )
        } else {
            None
        };

        let ds = Self {
            cameras,
            images,
            clean,
            depths,
            medium_truth,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// The dataset as it reads back after a save: images pass through 8-bit
    /// quantization, depth stays float (f32 exact for our value ranges).
    pub fn quantized(&self) -> Self {
        Self {
            cameras: self.cameras.clone(),
            images: self.images.iter().map(|i| i.quantized()).collect(),
            clean: self
                .clean
                .as_ref()
                .map(|c| c.iter().map(|i| i.quantized()).collect()),
            depths: self.depths.clone(),
            medium_truth: self.medium_truth.clone(),
        }
    }
}
