//! Binary checkpoint: "AQSP" magic, u32 version, u64 Gaussian count, cloud
//! header, f32 Gaussian attributes, then named f32/byte sections for the
//! network weights and the run configuration.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::{Model, ParamGroup};
use crate::scene::{GaussianCloud, GaussianPrimitive};
use crate::sh::coeff_count;

pub const MAGIC: &[u8; 4] = b"AQSP";
pub const VERSION: u32 = 1;

fn err(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn section_f32(&mut self, name: &str, data: &[f64]) {
        self.buf.push(name.len() as u8);
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(0);
        self.u64(data.len() as u64);
        for &v in data {
            self.f32(v);
        }
    }
    fn section_bytes(&mut self, name: &str, data: &[u8]) {
        self.buf.push(name.len() as u8);
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(1);
        self.u64(data.len() as u64);
        self.buf.extend_from_slice(data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(err("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(model: &Model, config: &Config, path: &Path) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(model.cloud.primitives.len() as u64);
    w.u32(model.cloud.sh_degree as u32);
    w.f64(model.cloud.normalization_bound);
    w.buf.push(model.identity_medium as u8);

    for p in &model.cloud.primitives {
        for k in 0..3 {
            w.f32(p.position[k]);
        }
        for k in 0..4 {
            w.f32(p.rotation[k]);
        }
        for k in 0..3 {
            w.f32(p.log_scale[k]);
        }
        w.f32(p.opacity_logit);
        for &c in &p.base_color {
            w.f32(c);
        }
        for &f in &p.appearance_feature {
            w.f32(f);
        }
    }

    w.u32(5);
    w.section_f32("pose_embedder", &model.group_params(ParamGroup::PoseEmbedder));
    w.section_f32("color_net", &model.group_params(ParamGroup::ColorNet));
    w.section_f32("backscatter_head", &model.group_params(ParamGroup::BackscatterHead));
    w.section_f32("attenuation_head", &model.group_params(ParamGroup::AttenuationHead));
    w.section_bytes("config", config.to_text().as_bytes());

    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Config)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(err("bad magic (not a checkpoint file)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = r.u64()? as usize;
    let sh_degree = r.u32()? as usize;
    if sh_degree > 3 {
        return Err(err(format!("sh degree {sh_degree} out of range")));
    }
    let bound = r.f64()?;
    let identity_medium = r.u8()? != 0;

    let k = 3 * coeff_count(sh_degree);
    let mut prims = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = GaussianPrimitive::default();
        p.position = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
        for q in 0..4 {
            p.rotation[q] = r.f32()?;
        }
        p.log_scale = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
        p.opacity_logit = r.f32()?;
        p.base_color = (0..k).map(|_| r.f32()).collect::<Result<_>>()?;
        for f in &mut p.appearance_feature {
            *f = r.f32()?;
        }
        prims.push(p);
    }

    let n_sections = r.u32()?;
    let mut f32_sections: Vec<(String, Vec<f64>)> = Vec::new();
    let mut config_text: Option<String> = None;
    for _ in 0..n_sections {
        let name_len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| err("bad section name"))?
            .to_string();
        let kind = r.u8()?;
        let len = r.u64()? as usize;
        match kind {
            0 => {
                let data = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                f32_sections.push((name, data));
            }
            1 => {
                let data = r.take(len)?;
                if name == "config" {
                    config_text =
                        Some(String::from_utf8(data.to_vec()).map_err(|_| err("bad config text"))?);
                }
            }
            _ => return Err(err(format!("unknown section kind {kind}"))),
        }
    }
    let config_text = config_text.ok_or_else(|| err("missing config section"))?;
    let mut config = Config::from_text(&config_text)?;
    config.sh_degree = sh_degree;
    config.identity_medium = identity_medium;

    // Preserve the stored normalization bound: features were computed with it.
    let mut cloud = GaussianCloud::new(prims, sh_degree)?;
    cloud.normalization_bound = bound;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(cloud, config.appearance_hidden, config.medium_hidden, &mut rng);
    model.identity_medium = identity_medium;
    for (name, data) in f32_sections {
        let group = match name.as_str() {
            "pose_embedder" => ParamGroup::PoseEmbedder,
            "color_net" => ParamGroup::ColorNet,
            "backscatter_head" => ParamGroup::BackscatterHead,
            "attenuation_head" => ParamGroup::AttenuationHead,
            other => return Err(err(format!("unknown section '{other}'"))),
        };
        if model.group_params(group).len() != data.len() {
            return Err(err(format!(
                "section '{name}' length {} does not match model ({})",
                data.len(),
                model.group_params(group).len()
            )));
        }
        model.set_group_params(group, &data);
    }
    Ok((model, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, benchmark_preset, SceneKind};
    use rand::Rng;

    fn small_model(seed: u64) -> (Model, Config) {
        let mut spec = benchmark_preset(seed);
        spec.gaussian_count = 30;
        spec.camera_count = 4;
        spec.image_size = 16;
        spec.kind = SceneKind::SphereField;
        spec.camera_radius = 2.0;
        let gen = generate_scene(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut config = Config::default();
        config.appearance_hidden = 8;
        config.medium_hidden = 4;
        config.sh_degree = 0;
        let model = Model::new(gen.init_cloud, 8, 4, &mut rng);
        (model, config)
    }

    #[test]
    fn round_trip_preserves_everything_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.aqsp");
        let (mut model, config) = small_model(21);
        let mut r = ChaCha8Rng::seed_from_u64(99);
        // Scatter the net weights so the round trip is non-trivial.
        for g in [ParamGroup::ColorNet, ParamGroup::BackscatterHead] {
            let p: Vec<f64> = model
                .group_params(g)
                .iter()
                .map(|_| r.gen_range(-1.0..1.0))
                .collect();
            model.set_group_params(g, &p);
        }
        save_checkpoint(&model, &config, &path).unwrap();
        let (loaded, lconfig) = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.cloud.primitives.len(), model.cloud.primitives.len());
        assert_eq!(lconfig.appearance_hidden, config.appearance_hidden);
        for g in ParamGroup::ALL {
            let a = model.group_params(g);
            let b = loaded.group_params(g);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(*x as f32 as f64, *y, "{}", g.name());
            }
        }
        assert_eq!(loaded.cloud.normalization_bound, model.cloud.normalization_bound);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (model, config) = small_model(4);
        let p1 = dir.path().join("a.aqsp");
        let p2 = dir.path().join("b.aqsp");
        save_checkpoint(&model, &config, &p1).unwrap();
        save_checkpoint(&model, &config, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.aqsp");
        std::fs::write(&bad, b"NOPE0000").unwrap();
        assert!(load_checkpoint(&bad).is_err());

        let (model, config) = small_model(5);
        let path = dir.path().join("m.aqsp");
        save_checkpoint(&model, &config, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&bad).is_err());
    }

    #[test]
    fn loaded_model_renders_identically() {
        use crate::pipeline::render_view;
        use crate::rasterizer::RenderSettings;
        let dir = tempfile::tempdir().unwrap();
        let (model, config) = small_model(77);
        let path = dir.path().join("m.aqsp");
        save_checkpoint(&model, &config, &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();

        // Quantize the original to f32 the same way the file does, then both
        // renders must agree bit-for-bit.
        let mut quant = model.clone();
        for g in ParamGroup::ALL {
            let p: Vec<f64> = quant.group_params(g).iter().map(|v| *v as f32 as f64).collect();
            quant.set_group_params(g, &p);
        }
        let spec = {
            let mut s = benchmark_preset(0);
            s.image_size = 16;
            s.camera_count = 4;
            s.kind = SceneKind::SphereField;
            s.camera_radius = 2.0;
            s.gaussian_count = 30;
            s
        };
        let cam = crate::sim::generate_scene(&spec).unwrap().dataset.cameras[0].clone();
        let a = render_view(&quant, &cam, &RenderSettings::default(), false).unwrap();
        let b = render_view(&loaded, &cam, &RenderSettings::default(), false).unwrap();
        assert_eq!(a.underwater.data, b.underwater.data);
    }
}
