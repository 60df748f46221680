//! Pipeline configuration as a flat key-value TOML document. Keys mirror the
//! parameter symbol names; every field is optional and falls back to the
//! default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{CylDims, Scale};
use crate::pipeline::{PipelineConfig, RefineMode};

/// Flat on-disk mirror of [`PipelineConfig`].
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    kappa_spheric: Option<f64>,
    kappa_disc: Option<f64>,
    tau_v: Option<f64>,
    tau_l: Option<f64>,
    tau_m: Option<f64>,
    tau_g: Option<f64>,
    delta_v: Option<f64>,
    n_r: Option<usize>,
    r_max: Option<f64>,
    literal_max_clamp: Option<bool>,
    n_fps: Option<usize>,
    n_patch: Option<usize>,
    h: Option<usize>,
    w: Option<usize>,
    d: Option<usize>,
    temperature: Option<f64>,
    epsilon: Option<f64>,
    max_candidates: Option<usize>,
    ransac_max_iters: Option<usize>,
    rng_seed: Option<u64>,
    scales: Option<Vec<String>>,
    refine: Option<String>,
    refine_huber_delta: Option<f64>,
    refine_iters: Option<usize>,
}

fn parse_scale(s: &str) -> Result<Scale> {
    match s.to_ascii_lowercase().as_str() {
        "local" | "l" => Ok(Scale::Local),
        "middle" | "m" => Ok(Scale::Middle),
        "global" | "g" => Ok(Scale::Global),
        other => Err(Error::InvalidParameter(format!("unknown scale `{other}`"))),
    }
}

fn parse_refine(s: &str) -> Result<RefineMode> {
    match s.to_ascii_lowercase().as_str() {
        "off" | "none" => Ok(RefineMode::Off),
        "huber" => Ok(RefineMode::Huber),
        "gm" | "geman_mcclure" => Ok(RefineMode::GemanMcclure),
        "tls" => Ok(RefineMode::Tls),
        other => Err(Error::InvalidParameter(format!("unknown refine mode `{other}`"))),
    }
}

impl FlatConfig {
    fn apply(self, mut cfg: PipelineConfig) -> Result<PipelineConfig> {
        let b = &mut cfg.bootstrap;
        if let Some(v) = self.kappa_spheric {
            b.kappa_spheric = v;
        }
        if let Some(v) = self.kappa_disc {
            b.kappa_disc = v;
        }
        if let Some(v) = self.tau_v {
            b.tau_v = v;
        }
        if let Some(v) = self.tau_l {
            b.tau_scales[0] = v;
        }
        if let Some(v) = self.tau_m {
            b.tau_scales[1] = v;
        }
        if let Some(v) = self.tau_g {
            b.tau_scales[2] = v;
        }
        if let Some(v) = self.delta_v {
            b.delta_v = v;
        }
        if let Some(v) = self.n_r {
            b.n_r = v;
        }
        if let Some(v) = self.r_max {
            b.r_max = v;
        }
        if let Some(v) = self.literal_max_clamp {
            b.literal_max_clamp = v;
        }
        if let Some(v) = self.n_fps {
            cfg.n_fps = v;
        }
        if let Some(v) = self.n_patch {
            cfg.n_patch = v;
        }
        let dims = CylDims {
            h: self.h.unwrap_or(cfg.dims.h),
            w: self.w.unwrap_or(cfg.dims.w),
            d: self.d.unwrap_or(cfg.dims.d),
        };
        cfg.dims = dims;
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if let Some(v) = self.max_candidates {
            cfg.max_candidates = v;
        }
        if let Some(v) = self.ransac_max_iters {
            cfg.ransac_max_iters = v;
        }
        if let Some(v) = self.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(scales) = self.scales {
            cfg.scales = scales
                .iter()
                .map(|s| parse_scale(s))
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(r) = self.refine {
            cfg.refine = parse_refine(&r)?;
        }
        if let Some(v) = self.refine_huber_delta {
            cfg.refine_huber_delta = v;
        }
        if let Some(v) = self.refine_iters {
            cfg.refine_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads a config file, overlaying its keys on the defaults.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)?;
    let flat: FlatConfig = toml::from_str(&text)
        .map_err(|e| Error::parse(path, "toml", e.to_string()))?;
    flat.apply(PipelineConfig::default())
}

/// Writes the full flat key set for a config.
pub fn save_config(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    let b = &cfg.bootstrap;
    let mut out = String::new();
    out.push_str(&format!("kappa_spheric = {}\n", b.kappa_spheric));
    out.push_str(&format!("kappa_disc = {}\n", b.kappa_disc));
    out.push_str(&format!("tau_v = {}\n", b.tau_v));
    out.push_str(&format!("tau_l = {}\n", b.tau_scales[0]));
    out.push_str(&format!("tau_m = {}\n", b.tau_scales[1]));
    out.push_str(&format!("tau_g = {}\n", b.tau_scales[2]));
    out.push_str(&format!("delta_v = {}\n", b.delta_v));
    out.push_str(&format!("n_r = {}\n", b.n_r));
    out.push_str(&format!("r_max = {}\n", b.r_max));
    out.push_str(&format!("literal_max_clamp = {}\n", b.literal_max_clamp));
    out.push_str(&format!("n_fps = {}\n", cfg.n_fps));
    out.push_str(&format!("n_patch = {}\n", cfg.n_patch));
    out.push_str(&format!("h = {}\n", cfg.dims.h));
    out.push_str(&format!("w = {}\n", cfg.dims.w));
    out.push_str(&format!("d = {}\n", cfg.dims.d));
    out.push_str(&format!("temperature = {}\n", cfg.temperature));
    if let Some(eps) = cfg.epsilon {
        out.push_str(&format!("epsilon = {eps}\n"));
    }
    out.push_str(&format!("max_candidates = {}\n", cfg.max_candidates));
    out.push_str(&format!("ransac_max_iters = {}\n", cfg.ransac_max_iters));
    out.push_str(&format!("rng_seed = {}\n", cfg.rng_seed));
    let scales: Vec<String> = cfg.scales.iter().map(|s| format!("\"{}\"", s.name())).collect();
    out.push_str(&format!("scales = [{}]\n", scales.join(", ")));
    let refine = match cfg.refine {
        RefineMode::Off => "off",
        RefineMode::Huber => "huber",
        RefineMode::GemanMcclure => "gm",
        RefineMode::Tls => "tls",
    };
    out.push_str(&format!("refine = \"{refine}\"\n"));
    out.push_str(&format!("refine_huber_delta = {}\n", cfg.refine_huber_delta));
    out.push_str(&format!("refine_iters = {}\n", cfg.refine_iters));
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "").unwrap();
        let cfg = load_config(&path).unwrap();
        let dflt = PipelineConfig::default();
        assert_eq!(cfg.n_fps, dflt.n_fps);
        assert_eq!(cfg.bootstrap.tau_scales, dflt.bootstrap.tau_scales);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "kappa_spheric = 0.08\nn_fps = 700\nscales = [\"middle\"]\nepsilon = 0.5\nrefine = \"tls\"\n",
        )
        .unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.bootstrap.kappa_spheric, 0.08);
        assert_eq!(cfg.n_fps, 700);
        assert_eq!(cfg.scales, vec![Scale::Middle]);
        assert_eq!(cfg.epsilon, Some(0.5));
        assert_eq!(cfg.refine, RefineMode::Tls);

        fs::write(&path, "tau_l = 0.9\n").unwrap();
        assert!(load_config(&path).is_err());
        fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(load_config(&path).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let mut cfg = PipelineConfig::default();
        cfg.rng_seed = 42;
        cfg.epsilon = Some(0.123);
        cfg.scales = vec![Scale::Middle, Scale::Global];
        save_config(&path, &cfg).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.rng_seed, 42);
        assert_eq!(loaded.epsilon, Some(0.123));
        assert_eq!(loaded.scales, cfg.scales);
    }
}
