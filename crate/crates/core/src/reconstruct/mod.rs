//! Vertex optimization with Adam and interleaved continuous remeshing, from
//! scratch or from a prior mesh.

mod config;
mod remesh;

use std::time::Instant;

pub use config::{AdamConfig, ConfigFile, ReconstructionConfig, RemeshConfig, StageConfig};
pub use remesh::{remesh_pass, RemeshStats};

use crate::mesh::{icosphere, validate, TriangleMesh};
use crate::region::{carve_hull, freeze_outside, seed_sphere, EditMode, EditRegion, DEFAULT_HULL_GRID};
use crate::render::{LossTargets, MultiviewSet};
use crate::{Error, Result, Vec3};

/// First and second moment estimates per vertex, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub t: u32,
}

impl AdamState {
    pub fn new(vertices: usize) -> Self {
        AdamState {
            m: vec![Vec3::zeros(); vertices],
            v: vec![Vec3::zeros(); vertices],
            t: 0,
        }
    }

    /// One update of the non-frozen vertices of `mesh`.
    pub fn step(&mut self, mesh: &mut TriangleMesh, grad: &[Vec3], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, g) in grad.iter().enumerate() {
            if mesh.is_frozen(i) {
                continue;
            }
            self.m[i] = self.m[i] * cfg.beta1 + g * (1.0 - cfg.beta1);
            self.v[i] = self.v[i] * cfg.beta2 + g.component_mul(g) * (1.0 - cfg.beta2);
            for k in 0..3 {
                let mh = self.m[i][k] / c1;
                let vh = self.v[i][k] / c2;
                mesh.positions[i][k] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }

    fn pack(&self) -> Vec<f64> {
        self.m
            .iter()
            .zip(&self.v)
            .flat_map(|(m, v)| [m.x, m.y, m.z, v.x, v.y, v.z])
            .collect()
    }

    fn unpack(packed: &[f64], t: u32) -> Self {
        let (m, v) = packed
            .chunks_exact(6)
            .map(|c| (Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5])))
            .unzip();
        AdamState { m, v, t }
    }
}

/// Remeshes and carries the Adam moments along.
pub fn remesh_with_state(
    mesh: &TriangleMesh,
    state: &AdamState,
    target: f64,
    factors: &RemeshConfig,
) -> (TriangleMesh, AdamState, RemeshStats) {
    let (out, packed, stats) = remesh::remesh_with_attrs(mesh, 6, &state.pack(), target, factors);
    (out, AdamState::unpack(&packed, state.t), stats)
}

/// Loss trace and size of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub steps: usize,
    pub resolution: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub vertices: usize,
    pub faces: usize,
    /// Times the divergence guard restored a checkpoint.
    pub restarts: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mesh: TriangleMesh,
    pub stages: Vec<StageReport>,
}

fn all_finite(grad: &[Vec3]) -> bool {
    grad.iter().all(|g| g.iter().all(|c| c.is_finite()))
}

/// Runs one stage of Adam steps against `targets`, which must already be at
/// the stage's render resolution. Weights, Adam and remeshing settings come
/// from `config`; its stage list is not consulted.
///
/// A remeshing pass runs before every `interval_steps`-th step. If the loss,
/// gradient or positions turn non-finite the stage restores the last good
/// checkpoint once with a halved learning rate; a second failure is an error
/// carrying that checkpoint.
pub fn optimize_stage(
    mesh: TriangleMesh,
    targets: &MultiviewSet,
    stage: &StageConfig,
    config: &ReconstructionConfig,
    state: &mut AdamState,
    stage_index: usize,
) -> Result<(TriangleMesh, StageReport)> {
    let started = Instant::now();
    let (adam, remesh) = (&config.adam, &config.remesh);
    let lt = LossTargets::new(targets)?;
    if state.m.len() != mesh.num_vertices() {
        *state = AdamState::new(mesh.num_vertices());
    }
    let mut mesh = mesh;
    let mut checkpoint = (mesh.clone(), state.clone());
    let mut lr_scale = 1.0;
    let mut restarts = 0;
    let mut initial_loss = f64::NAN;
    let mut step = 0;
    while step < stage.steps {
        if step > 0 && step % remesh.interval_steps == 0 {
            let (m, s, _) = remesh_with_state(&mesh, state, stage.target_edge_length, remesh);
            mesh = m;
            *state = s;
        }
        let (terms, grad) = lt.evaluate(&mesh, &config.weights)?;
        let mut ok = terms.total.is_finite() && all_finite(&grad);
        if ok {
            if step == 0 {
                initial_loss = terms.total;
            }
            let frac = if stage.steps > 1 {
                step as f64 / (stage.steps - 1) as f64
            } else {
                0.0
            };
            let lr = lr_scale * (adam.lr + (adam.lr_final - adam.lr) * frac);
            checkpoint = (mesh.clone(), state.clone());
            state.step(&mut mesh, &grad, lr, adam);
            ok = mesh.positions.iter().all(|p| p.iter().all(|c| c.is_finite()));
        }
        if ok {
            step += 1;
            continue;
        }
        if restarts > 0 {
            return Err(Error::Diverged {
                stage: stage_index,
                step,
                last_valid: Box::new(checkpoint.0),
            });
        }
        restarts += 1;
        lr_scale *= 0.5;
        (mesh, *state) = checkpoint.clone();
    }
    let (terms, _) = lt.evaluate(&mesh, &config.weights)?;
    let report = StageReport {
        stage: stage_index,
        steps: stage.steps,
        resolution: targets.resolution(),
        initial_loss,
        final_loss: terms.total,
        vertices: mesh.num_vertices(),
        faces: mesh.num_faces(),
        restarts,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((mesh, report))
}

/// Runs every stage of `config` starting from `mesh`.
fn run_stages(mesh: TriangleMesh, targets: &MultiviewSet, config: &ReconstructionConfig) -> Result<Reconstruction> {
    config.check()?;
    let mut mesh = mesh;
    let mut stages = Vec::new();
    if mesh.num_vertices() == mesh.frozen_count() {
        // Nothing may move; skip the work and return the input untouched.
        return Ok(Reconstruction { mesh, stages });
    }
    for (i, stage) in config.stages.iter().enumerate() {
        let t = targets.at_resolution(stage.render_resolution)?;
        let mut state = AdamState::new(mesh.num_vertices());
        let (m, report) = optimize_stage(mesh, &t, stage, config, &mut state, i)?;
        mesh = m;
        stages.push(report);
    }
    let (mesh, _) = remesh_pass(&mesh, 0.0, &config.remesh);
    let report = validate(&mesh);
    if !report.is_valid() {
        return Err(Error::Structural(format!("reconstructed mesh is invalid: {}", report.summary())));
    }
    Ok(Reconstruction { mesh, stages })
}

/// Icosphere level whose edges are closest to `edge` for radius `r`, capped.
fn sphere_level(r: f64, edge: f64) -> u32 {
    let mut level = 0;
    // Level-0 edges are about 1.05 r long and halve with each level.
    while level < 5 && 1.05 * r / f64::powi(2.0, level as i32) > 1.5 * edge {
        level += 1;
    }
    level
}

/// Reconstructs a mesh from views alone, starting from a sphere fitted to
/// the visual hull of the target masks.
pub fn reconstruct_from_scratch(targets: &MultiviewSet, config: &ReconstructionConfig) -> Result<Reconstruction> {
    targets.check()?;
    config.check()?;
    if targets.views.iter().all(|v| v.foreground_count(0.5) == 0) {
        return Err(Error::EmptyTarget);
    }
    let cameras: Vec<_> = targets.views.iter().map(|v| v.camera).collect();
    let h = cameras[0].half_extent;
    let (center, radius) = if cameras.len() >= 2 {
        let masks: Vec<_> = targets.views.iter().map(|v| v.mask(0.5)).collect();
        let hull = carve_hull(&masks, &cameras, DEFAULT_HULL_GRID)?;
        if hull.is_empty() {
            (Vec3::zeros(), 0.5 * h)
        } else {
            (hull.center(), 0.5 * hull.extent().max())
        }
    } else {
        (Vec3::zeros(), 0.5 * h)
    };
    let level = sphere_level(radius, config.stages[0].target_edge_length);
    let init = icosphere(center, radius, level)?;
    run_stages(init, targets, config)
}

/// Reconstructs starting from `prior`.
///
/// With a region and `freeze_prior`, prior vertices are frozen per
/// [`freeze_outside`], and an added part gets a seeded sphere as a separate
/// shell. Without a region every vertex is free.
pub fn reconstruct_incremental(
    prior: &TriangleMesh,
    targets: &MultiviewSet,
    config: &ReconstructionConfig,
    region: Option<&EditRegion>,
) -> Result<Reconstruction> {
    targets.check()?;
    config.check()?;
    prior.check_indices()?;
    let mut start = prior.clone();
    start.frozen = None;
    if let Some(r) = region {
        r.check_against(targets)?;
        if r.resolution != targets.resolution() {
            return Err(Error::Contract("edit region resolution differs from the targets".into()));
        }
        if config.freeze_prior {
            start = freeze_outside(&start, r, config.dilation);
        }
        if r.mode == EditMode::Added && !r.is_empty() {
            start.append(&seed_sphere(r, config.seed_level)?);
        }
    }
    run_stages(start, targets, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{standard_rig_six, OrthoCamera};
    use crate::render::{render_conditions, MultiviewSet};

    #[test]
    fn adam_moves_against_gradient() {
        let mut m = TriangleMesh::new(vec![Vec3::zeros()], vec![]);
        let mut s = AdamState::new(1);
        s.step(&mut m, &[Vec3::new(2.0, -1.0, 0.0)], 0.1, &AdamConfig::default());
        assert!((m.positions[0] - Vec3::new(-0.1, 0.1, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn zero_rate_stage_is_identity() {
        let rig = standard_rig_six(32, 1.0).unwrap();
        let target = icosphere(Vec3::zeros(), 0.5, 1).unwrap();
        let views = render_conditions(&target, &rig).unwrap();
        let mesh = icosphere(Vec3::zeros(), 0.4, 1).unwrap();
        let stage = StageConfig {
            steps: 5,
            target_edge_length: 0.1,
            render_resolution: 32,
        };
        let mut config = ReconstructionConfig::standard(32, 1.0);
        config.adam.lr = 0.0;
        config.adam.lr_final = 0.0;
        let mut st = AdamState::default();
        let (out, rep) = optimize_stage(mesh.clone(), &views, &stage, &config, &mut st, 0).unwrap();
        assert_eq!(out.positions, mesh.positions);
        assert!(rep.initial_loss.is_finite() && rep.final_loss.is_finite());
    }

    #[test]
    fn triangle_follows_shifted_target() {
        let cam = OrthoCamera::new(0.0, 0.0, 1.0, 64).unwrap();
        // Camera-facing triangle in the y = 0 plane.
        let tri = |dx: f64| {
            TriangleMesh::new(
                vec![Vec3::new(-0.4 + dx, 0.0, -0.3), Vec3::new(0.3 + dx, 0.0, -0.3), Vec3::new(dx, 0.0, 0.4)],
                vec![[0, 2, 1]],
            )
        };
        let shift = 3.0 / cam.pixel_scale();
        let target = crate::render::rasterize(&tri(shift), &cam, Default::default()).unwrap();
        let views = MultiviewSet::new(vec![target]).unwrap();
        let stage = StageConfig {
            steps: 50,
            target_edge_length: 10.0,
            render_resolution: 64,
        };
        let mut config = ReconstructionConfig::standard(64, 1.0);
        config.weights.lambda_smooth = 0.0;
        config.remesh.interval_steps = 1000;
        let mut st = AdamState::default();
        let (_, rep) = optimize_stage(tri(0.0), &views, &stage, &config, &mut st, 0).unwrap();
        assert!(rep.final_loss < 0.1 * rep.initial_loss, "{rep:?}");
    }

    #[test]
    fn empty_targets_are_rejected() {
        let rig = standard_rig_six(32, 1.0).unwrap();
        let views = render_conditions(&TriangleMesh::default(), &rig).unwrap();
        let err = reconstruct_from_scratch(&views, &ReconstructionConfig::standard(32, 1.0)).unwrap_err();
        assert!(matches!(err, Error::EmptyTarget));
    }

    #[test]
    fn fully_frozen_prior_is_returned_untouched() {
        let rig = standard_rig_six(32, 1.0).unwrap();
        let prior = icosphere(Vec3::zeros(), 0.5, 2).unwrap();
        let views = render_conditions(&prior, &rig).unwrap();
        let region = EditRegion::empty(6, 32);
        let out = reconstruct_incremental(&prior, &views, &ReconstructionConfig::standard(32, 1.0), Some(&region)).unwrap();
        assert_eq!(out.mesh.positions, prior.positions);
        assert_eq!(out.mesh.faces, prior.faces);
    }

    #[test]
    fn sphere_level_tracks_edge_length() {
        assert_eq!(sphere_level(1.0, 10.0), 0);
        assert!(sphere_level(1.0, 0.1) >= 3);
        assert_eq!(sphere_level(1.0, 1e-6), 5);
    }
}
