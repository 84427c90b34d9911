//! Run configuration: pipeline parameters, inpainting settings and outputs.
//!
//! A configuration file holds flat `name = value` lines using the parameter
//! names of `PipelineParams` plus `seed`, `jobs`, `patch_side`, `iterations`
//! and `levels`. Values given on the command line take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::PipelineParams;
use crate::error::{FlareError, Result};
use crate::inpaint::{DEFAULT_ITERATIONS, DEFAULT_PATCH_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintSettings {
    pub patch_side: usize,
    pub iterations: usize,
    pub levels: Option<usize>,
}

impl Default for InpaintSettings {
    fn default() -> Self {
        Self {
            patch_side: DEFAULT_PATCH_SIDE,
            iterations: DEFAULT_ITERATIONS,
            levels: None,
        }
    }
}

/// Which artifacts a run writes next to its primary output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitFlags {
    pub mask: bool,
    pub overlay: bool,
    pub report: bool,
    pub debug: bool,
    pub inpainted: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            mask: true,
            overlay: false,
            report: true,
            debug: false,
            inpainted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: PipelineParams,
    pub inpaint: InpaintSettings,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub emit: EmitFlags,
    pub seed: u64,
    /// Number of files processed concurrently.
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(inputs: Vec<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            params: PipelineParams::default(),
            inpaint: InpaintSettings::default(),
            inputs,
            output_dir: output_dir.into(),
            emit: EmitFlags::default(),
            seed: 0,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.jobs == 0 {
            return Err(FlareError::invalid("jobs", "must be at least 1"));
        }
        let s = &self.inpaint;
        if s.patch_side < 3 || s.patch_side % 2 == 0 {
            return Err(FlareError::invalid("patch_side", "must be odd and at least 3"));
        }
        if s.iterations == 0 || s.levels == Some(0) {
            return Err(FlareError::invalid("iterations", "iterations and levels must be positive"));
        }
        Ok(())
    }

    /// Applies the values present in `file`.
    pub fn apply(&mut self, file: &ConfigFile) {
        let p = &mut self.params;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.iota, file.iota);
        set(&mut p.sigma_min, file.sigma_min);
        set(&mut p.sigma_max, file.sigma_max);
        set(&mut p.delta, file.delta);
        set(&mut p.beta, file.beta);
        set(&mut p.epsilon, file.epsilon);
        set(&mut p.alpha, file.alpha);
        set(&mut p.k, file.k);
        set(&mut p.window_fraction, file.window_fraction);
        set(&mut p.secondary_ratio, file.secondary_ratio);
        set(&mut p.opening_radius, file.opening_radius);
        if let Some(v) = file.seed {
            self.seed = v;
        }
        if let Some(v) = file.jobs {
            self.jobs = v;
        }
        if let Some(v) = file.patch_side {
            self.inpaint.patch_side = v;
        }
        if let Some(v) = file.iterations {
            self.inpaint.iterations = v;
        }
        if file.levels.is_some() {
            self.inpaint.levels = file.levels;
        }
    }
}

/// Optional overrides read from a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub iota: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub k: Option<f64>,
    pub window_fraction: Option<f64>,
    pub secondary_ratio: Option<f64>,
    pub opening_radius: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub patch_side: Option<usize>,
    pub iterations: Option<usize>,
    pub levels: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FlareError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FlareError::io(path, e))?;
        Self::parse(&text).map_err(|e| FlareError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_fixed_parameters() {
        let cfg = RunConfig::new(vec![], "out");
        assert_eq!(cfg.params, PipelineParams::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn file_values_override_defaults() {
        let file = ConfigFile::parse("iota = 98.5\nbeta = 0.6\nseed = 4\n# comment\nepsilon = 3\n").unwrap();
        let mut cfg = RunConfig::new(vec![], "out");
        cfg.apply(&file);
        assert_eq!((cfg.params.iota, cfg.params.beta, cfg.params.epsilon), (98.5, 0.6, 3.0));
        assert_eq!(cfg.params.alpha, 0.2);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ConfigFile::parse("gamma = 1"), Err(FlareError::Config(_))));
        assert!(matches!(ConfigFile::parse("beta = high"), Err(FlareError::Config(_))));
        let mut cfg = RunConfig::new(vec![], "out");
        cfg.apply(&ConfigFile::parse("alpha = 2").unwrap());
        assert!(cfg.validate().is_err());
        cfg = RunConfig::new(vec![], "out");
        cfg.apply(&ConfigFile::parse("patch_side = 4").unwrap());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            ConfigFile::load(Path::new("/nonexistent/flare.conf")),
            Err(FlareError::Io { .. })
        ));
    }
}
