//! Reconstruction settings and their flat file form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::render::LossWeights;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    /// Learning rate at the first step of each stage.
    pub lr: f64,
    /// Learning rate at the last step; the rate decays linearly in between.
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            lr_final: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemeshConfig {
    /// Steps between remeshing passes; larger than the stage length disables it.
    pub interval_steps: usize,
    /// Edges longer than `split_factor * target` are split.
    pub split_factor: f64,
    /// Edges shorter than `collapse_factor * target` are collapsed.
    pub collapse_factor: f64,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        RemeshConfig {
            interval_steps: 10,
            split_factor: 4.0 / 3.0,
            collapse_factor: 4.0 / 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: usize,
    /// World units.
    pub target_edge_length: f64,
    pub render_resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub stages: Vec<StageConfig>,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub remesh: RemeshConfig,
    /// Freeze prior vertices outside the edit region in incremental runs.
    pub freeze_prior: bool,
    /// Growth of the region box before freezing; world units.
    pub dilation: f64,
    /// Subdivision level of spheres seeded for added parts.
    pub seed_level: u32,
}

impl ReconstructionConfig {
    /// Default schedule for targets of the given resolution and half extent.
    pub fn standard(resolution: usize, half_extent: f64) -> Self {
        ConfigFile::default().resolve(resolution, half_extent)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.to_string()));
        if self.stages.is_empty() {
            return bad("reconstruction needs at least one stage");
        }
        for s in &self.stages {
            if s.steps == 0 || !(s.target_edge_length > 0.0) || s.render_resolution < 16 {
                return bad("stage needs steps >= 1, a positive edge length and resolution >= 16");
            }
        }
        self.weights.check()?;
        let a = &self.adam;
        if !(a.lr > 0.0) || !(a.lr_final >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("invalid Adam settings");
        }
        let r = &self.remesh;
        if r.interval_steps == 0 || !(r.split_factor > 1.0) || !(r.collapse_factor > 0.0 && r.collapse_factor < 1.0) {
            return bad("remesh needs interval >= 1 and split_factor > 1 > collapse_factor > 0");
        }
        if !(self.dilation >= 0.0) {
            return bad("dilation must be non-negative");
        }
        Ok(())
    }
}

/// Flat key-value form of [`ReconstructionConfig`], read from TOML.
///
/// Lengths of zero mean "derive from the targets": the first stage's edge
/// length defaults to `half_extent / 12`, and the dilation to twice that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub stages: usize,
    pub steps: usize,
    pub edge_length: f64,
    /// Factor applied to the edge length from one stage to the next.
    pub edge_length_decay: f64,
    /// Each earlier stage renders at this factor below the next one.
    pub coarse_divisor: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub w_normal: f64,
    pub w_alpha: f64,
    pub lambda_smooth: f64,
    pub remesh_interval: usize,
    pub split_factor: f64,
    pub collapse_factor: f64,
    pub freeze_prior: bool,
    pub dilation: f64,
    pub seed_level: u32,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let remesh = RemeshConfig::default();
        let w = LossWeights::default();
        ConfigFile {
            stages: 2,
            steps: 100,
            edge_length: 0.0,
            edge_length_decay: 0.5,
            coarse_divisor: 2,
            lr: adam.lr,
            lr_final: adam.lr_final,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            w_normal: w.w_normal,
            w_alpha: w.w_alpha,
            lambda_smooth: w.lambda_smooth,
            remesh_interval: remesh.interval_steps,
            split_factor: remesh.split_factor,
            collapse_factor: remesh.collapse_factor,
            freeze_prior: true,
            dilation: 0.0,
            seed_level: crate::region::DEFAULT_SEED_LEVEL,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::bad_input("config", e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::BadInput { message, .. } => Error::bad_input(path.display().to_string(), message),
            e => e,
        })
    }

    /// Expands the flat form into explicit stages for targets of the given
    /// resolution and half extent.
    pub fn resolve(&self, resolution: usize, half_extent: f64) -> ReconstructionConfig {
        let first_edge = if self.edge_length > 0.0 {
            self.edge_length
        } else {
            half_extent / 12.0
        };
        let n = self.stages;
        let stages = (0..n)
            .map(|i| {
                let mut res = resolution;
                for _ in i + 1..n {
                    if self.coarse_divisor > 1 && res % self.coarse_divisor == 0 && res / self.coarse_divisor >= 16 {
                        res /= self.coarse_divisor;
                    }
                }
                StageConfig {
                    steps: self.steps,
                    target_edge_length: first_edge * self.edge_length_decay.powi(i as i32),
                    render_resolution: res,
                }
            })
            .collect();
        ReconstructionConfig {
            stages,
            weights: LossWeights {
                w_normal: self.w_normal,
                w_alpha: self.w_alpha,
                lambda_smooth: self.lambda_smooth,
            },
            adam: AdamConfig {
                lr: self.lr,
                lr_final: self.lr_final,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            remesh: RemeshConfig {
                interval_steps: self.remesh_interval,
                split_factor: self.split_factor,
                collapse_factor: self.collapse_factor,
            },
            freeze_prior: self.freeze_prior,
            dilation: if self.dilation > 0.0 { self.dilation } else { 2.0 * first_edge },
            seed_level: self.seed_level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = ReconstructionConfig::standard(256, 1.2);
        c.check().unwrap();
        assert_eq!(c.stages.len(), 2);
        assert_eq!(c.stages[0].render_resolution, 128);
        assert_eq!(c.stages[1].render_resolution, 256);
        assert_eq!(c.stages[0].steps, 100);
        assert!((c.stages[1].target_edge_length * 2.0 - c.stages[0].target_edge_length).abs() < 1e-15);
        assert_eq!(c.weights, LossWeights::default());
        assert_eq!(c.adam, AdamConfig::default());
    }

    #[test]
    fn file_overrides_and_rejects_unknown_keys() {
        let f = ConfigFile::parse("steps = 20\nlr = 0.02\nstages = 1\n").unwrap();
        let c = f.resolve(64, 1.0);
        assert_eq!(c.stages.len(), 1);
        assert_eq!(c.stages[0].steps, 20);
        assert_eq!(c.stages[0].render_resolution, 64);
        assert_eq!(c.adam.lr, 0.02);
        let e = ConfigFile::parse("stepz = 3").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("stepz"), "{e}");
    }

    #[test]
    fn odd_resolution_keeps_full_size() {
        let c = ConfigFile::default().resolve(50, 1.0);
        assert_eq!(c.stages[0].render_resolution, 25);
        let c = ConfigFile::default().resolve(30, 1.0);
        assert_eq!(c.stages[0].render_resolution, 30);
    }
}
