//! Command implementations behind the CLI, plus the JSON file contracts.
//!
//! Every command reads and writes files and returns what it computed, so
//! the binary only parses flags and prints.

pub mod manifest;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::camera::{default_half_extent, standard_rig_six, training_rig_eight, CameraRig, DEFAULT_RESOLUTION};
use crate::mesh::obj::{read_obj, write_obj, write_textured_obj};
use crate::mesh::TriangleMesh;
use crate::metrics::{chamfer, psnr, ssim, volume_iou, DEFAULT_CHAMFER_SAMPLES, DEFAULT_IOU_GRID};
use crate::reconstruct::ConfigFile;
use crate::reconstruct::{reconstruct_from_scratch, reconstruct_incremental, Reconstruction, StageReport};
use crate::region::{mask_diff, EditRegion, DEFAULT_MASK_THRESHOLD};
use crate::render::io::{quantize_view, read_gray, read_rgb, write_gray, write_rgb, write_view};
use crate::render::{render_conditions_with, ColorSource, MultiviewSet, Shading};
use crate::texture::{bake_atlas, bake_vertex_colors, BakeConfig, BakeMode};
use crate::{Error, Result};

pub use manifest::{load_manifest, RegionFile, RigParams, Step, StepScript, ViewEntry, ViewManifest};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_ALPHA_THRESHOLD: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RigKind {
    #[default]
    Six,
    Eight,
}

impl RigKind {
    pub fn build(self, resolution: usize, half_extent: f64) -> Result<CameraRig> {
        match self {
            RigKind::Six => standard_rig_six(resolution, half_extent),
            RigKind::Eight => training_rig_eight(resolution, half_extent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub rig: RigKind,
    pub resolution: usize,
    /// Defaults to framing the mesh's bounding sphere about the origin.
    pub half_extent: Option<f64>,
    pub shading: Shading,
    pub with_depth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            rig: RigKind::Six,
            resolution: DEFAULT_RESOLUTION,
            half_extent: None,
            shading: Shading::Crease,
            with_depth: false,
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Renders the rig's views of `mesh` into `out_dir` with a manifest.
pub fn render_views(mesh: &TriangleMesh, out_dir: &Path, opts: &RenderOptions) -> Result<(ViewManifest, MultiviewSet)> {
    mesh.check_indices()?;
    let h = match opts.half_extent {
        Some(h) => h,
        None => default_half_extent(mesh.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)),
    };
    let rig = opts.rig.build(opts.resolution, h)?;
    let mut views = render_conditions_with(mesh, &rig, opts.shading, ColorSource::Vertex)?;
    if !opts.with_depth {
        for v in &mut views.views {
            v.depth = None;
        }
    }
    create_dir(out_dir)?;
    let manifest = ViewManifest::for_rig(&rig, opts.with_depth);
    for (i, view) in views.views.iter().enumerate() {
        write_view(view, &manifest.files(out_dir, i))?;
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, views))
}

pub fn cmd_render(mesh_path: &Path, out_dir: &Path, opts: &RenderOptions) -> Result<ViewManifest> {
    let mesh = read_obj(mesh_path)?;
    Ok(render_views(&mesh, out_dir, opts)?.0)
}

/// Reconstruction from views alone, as used by `reconstruct` without an
/// initial mesh and by the first progressive step.
pub fn reconstruct_views(views: &MultiviewSet, config: &ConfigFile) -> Result<Reconstruction> {
    let cfg = config.resolve(views.resolution(), views.views[0].camera.half_extent);
    reconstruct_from_scratch(views, &cfg)
}

/// `resolution` resamples the targets first.
pub fn cmd_reconstruct(
    manifest_path: &Path,
    out_mesh: &Path,
    config: &ConfigFile,
    init_mesh: Option<&Path>,
    region: Option<&Path>,
    resolution: Option<usize>,
) -> Result<Reconstruction> {
    let (_, views) = load_manifest(manifest_path)?;
    let views = match resolution {
        Some(r) if r != views.resolution() => views.at_resolution(r)?,
        _ => views,
    };
    let rec = match init_mesh {
        None => {
            if region.is_some() {
                return Err(Error::bad_input("region", "a region needs an initial mesh"));
            }
            reconstruct_views(&views, config)?
        }
        Some(p) => {
            let prior = read_obj(p)?;
            let region = region.map(RegionFile::read_region).transpose()?;
            let cfg = config.resolve(views.resolution(), views.views[0].camera.half_extent);
            reconstruct_incremental(&prior, &views, &cfg, region.as_ref())?
        }
    };
    write_obj(out_mesh, &rec.mesh)?;
    Ok(rec)
}

/// Result of one incremental edit.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub region: EditRegion,
    pub reconstruction: Reconstruction,
    /// The reconstruction with baked colors.
    pub mesh: TriangleMesh,
}

/// Renders the prior with the targets' cameras, localizes the change and
/// reconstructs incrementally. A precomputed region skips the differencing.
pub fn edit_mesh(
    prior: &TriangleMesh,
    views: &MultiviewSet,
    config: &ConfigFile,
    region: Option<EditRegion>,
) -> Result<(EditRegion, Reconstruction)> {
    let region = match region {
        Some(r) => r,
        None => {
            let rig = views.rig();
            let rendered = render_conditions_with(prior, &rig, Shading::Vertex, ColorSource::Vertex)?;
            // Targets usually come through 8-bit files; compare like with like.
            let rendered = MultiviewSet::new(rendered.views.iter().map(quantize_view).collect())?;
            mask_diff(&rendered, views, DEFAULT_MASK_THRESHOLD)?
        }
    };
    let cfg = config.resolve(views.resolution(), views.views[0].camera.half_extent);
    let rec = reconstruct_incremental(prior, views, &cfg, Some(&region))?;
    Ok((region, rec))
}

/// Bakes `mesh` from `views` and writes it. Atlas mode also writes
/// `<stem>_texture.png` and an MTL file next to `out`.
pub fn bake_and_write(mesh: &TriangleMesh, views: &MultiviewSet, bake: &BakeConfig, out: &Path) -> Result<TriangleMesh> {
    match bake.mode {
        BakeMode::VertexColors => {
            let baked = bake_vertex_colors(mesh, views, bake)?;
            write_obj(out, &baked)?;
            Ok(baked)
        }
        BakeMode::Atlas => {
            let (baked, tex) = bake_atlas(mesh, views, bake)?;
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into());
            let tex_name = format!("{stem}_texture.png");
            write_rgb(&dir_of(out).join(&tex_name), tex.resolution, &tex.texels)?;
            write_textured_obj(out, &baked, &tex_name)?;
            Ok(baked)
        }
    }
}

/// Region file path written alongside an output mesh.
pub fn region_path_for(out_mesh: &Path) -> PathBuf {
    let stem = out_mesh.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into());
    dir_of(out_mesh).join(format!("{stem}_region.json"))
}

pub fn cmd_edit(prior_path: &Path, manifest_path: &Path, out_mesh: &Path, config: &ConfigFile, bake: &BakeConfig) -> Result<EditOutcome> {
    let prior = read_obj(prior_path)?;
    let (_, views) = load_manifest(manifest_path)?;
    let (region, rec) = edit_mesh(&prior, &views, config, None)?;
    RegionFile::write_region(&region_path_for(out_mesh), &region)?;
    let mesh = bake_and_write(&rec.mesh, &views, bake, out_mesh)?;
    Ok(EditOutcome {
        region,
        reconstruction: rec,
        mesh,
    })
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub path: PathBuf,
    /// `None` for the first step, which starts from nothing.
    pub region: Option<EditRegion>,
    pub reconstruction: Reconstruction,
}

/// Runs a step script. Step `k` is written to `out_dir/step_kk.obj` as soon
/// as it finishes, so a failure leaves every earlier step on disk; the last
/// step is also copied to `final.obj`. `on_step` sees each step as it ends.
pub fn cmd_progressive(
    script_path: &Path,
    out_dir: &Path,
    config: &ConfigFile,
    bake: &BakeConfig,
    mut on_step: impl FnMut(usize, &StepOutcome),
) -> Result<Vec<StepOutcome>> {
    let script = StepScript::read(script_path)?;
    let base = dir_of(script_path);
    create_dir(out_dir)?;
    let mut outcomes: Vec<StepOutcome> = Vec::new();
    let mut rig: Option<MultiviewSet> = None;
    let mut prev: Option<TriangleMesh> = None;
    let mut last_views: Option<MultiviewSet> = None;
    for (k, step) in script.steps.iter().enumerate() {
        let field = |f: &str| format!("script.steps[{k}].{f}");
        let (_, views) = load_manifest(&base.join(&step.views))?;
        if let Some(first) = &rig {
            if !first.same_rig(&views) {
                return Err(Error::bad_input(field("views"), "rig differs from the first step"));
            }
        }
        let (region, rec) = match &prev {
            None => {
                // The first step's prior is a set of white images: nothing to
                // difference against, so this is a reconstruction from scratch.
                if step.region.is_some() {
                    return Err(Error::bad_input(field("region"), "the first step cannot take a region"));
                }
                (None, reconstruct_views(&views, config)?)
            }
            Some(prior) => {
                let given = step.region.as_ref().map(|p| RegionFile::read_region(&base.join(p))).transpose()?;
                let (r, rec) = edit_mesh(prior, &views, config, given)?;
                (Some(r), rec)
            }
        };
        let path = out_dir.join(format!("step_{:02}.obj", k + 1));
        bake_and_write(&rec.mesh, &views, bake, &path)?;
        let outcome = StepOutcome {
            path,
            region,
            reconstruction: rec,
        };
        on_step(k + 1, &outcome);
        prev = Some(outcome.reconstruction.mesh.clone());
        if rig.is_none() {
            rig = Some(views.clone());
        }
        last_views = Some(views);
        outcomes.push(outcome);
    }
    let last = outcomes.last().expect("at least one step");
    let last_views = last_views.expect("views of the last step");
    bake_and_write(&last.reconstruction.mesh, &last_views, bake, &out_dir.join("final.obj"))?;
    Ok(outcomes)
}

pub fn cmd_bake(mesh_path: &Path, manifest_path: &Path, out: &Path, bake: &BakeConfig) -> Result<TriangleMesh> {
    let mesh = read_obj(mesh_path)?;
    let (_, views) = load_manifest(manifest_path)?;
    bake_and_write(&mesh, &views, bake, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshReport {
    pub chamfer: f64,
    pub chamfer_normalized: f64,
    pub volume_iou: f64,
    pub watertight_a: bool,
    pub watertight_b: bool,
    pub samples: usize,
    pub iou_grid: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Pixels the PSNR was computed over.
    pub pixels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub samples: usize,
    pub iou_grid: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: DEFAULT_CHAMFER_SAMPLES,
            iou_grid: DEFAULT_IOU_GRID,
            seed: 0,
        }
    }
}

pub fn eval_meshes(a: &TriangleMesh, b: &TriangleMesh, opts: &EvalOptions) -> Result<MeshReport> {
    let c = chamfer(a, b, opts.samples, opts.seed)?;
    let v = volume_iou(a, b, opts.iou_grid)?;
    Ok(MeshReport {
        chamfer: c.raw,
        chamfer_normalized: c.normalized,
        volume_iou: v.iou,
        watertight_a: v.watertight_a,
        watertight_b: v.watertight_b,
        samples: opts.samples,
        iou_grid: opts.iou_grid,
        seed: opts.seed,
    })
}

pub fn cmd_eval_meshes(a: &Path, b: &Path, opts: &EvalOptions) -> Result<MeshReport> {
    eval_meshes(&read_obj(a)?, &read_obj(b)?, opts)
}

/// PSNR (restricted to `mask` when given, a grayscale PNG thresholded at
/// one half) and SSIM of an image against a reference.
pub fn cmd_eval_images(img: &Path, reference: &Path, mask: Option<&Path>) -> Result<ImageReport> {
    let (ri, a) = read_rgb(img)?;
    let (rr, b) = read_rgb(reference)?;
    if ri != rr {
        return Err(Error::bad_input(img.display().to_string(), format!("is {ri} wide, reference is {rr}")));
    }
    let mask = match mask {
        Some(p) => {
            let (rm, m) = read_gray(p)?;
            if rm != ri {
                return Err(Error::bad_input(p.display().to_string(), "mask size differs from the images"));
            }
            Some(m.iter().map(|&g| g > 0.5).collect::<Vec<bool>>())
        }
        None => None,
    };
    let pixels = mask.as_ref().map_or(a.len(), |m| m.iter().filter(|&&x| x).count());
    Ok(ImageReport {
        psnr: psnr(&a, &b, mask.as_deref())?,
        ssim: ssim(&a, &b, ri)?,
        pixels,
    })
}

/// Foreground where the darkest channel is below `255 - threshold`.
pub fn alpha_from_color(color: &[[u8; 3]], threshold: u8) -> Vec<bool> {
    let cut = 255u16 - threshold as u16;
    color.iter().map(|c| (*c.iter().min().unwrap() as u16) < cut).collect()
}

pub fn cmd_alpha_extract(color_png: &Path, threshold: u8, out: &Path) -> Result<usize> {
    let (res, rgb) = read_rgb(color_png)?;
    let bytes: Vec<[u8; 3]> = rgb.iter().map(|c| c.map(|v| (v * 255.0).round() as u8)).collect();
    let alpha = alpha_from_color(&bytes, threshold);
    let gray: Vec<f64> = alpha.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    write_gray(out, res, &gray)?;
    Ok(alpha.iter().filter(|&&a| a).count())
}

/// One `key=value` line per stage.
pub fn stage_line(r: &StageReport) -> String {
    format!(
        "stage={} steps={} resolution={} initial_loss={:.6e} final_loss={:.6e} vertices={} faces={} restarts={} seconds={:.3}",
        r.stage, r.steps, r.resolution, r.initial_loss, r.final_loss, r.vertices, r.faces, r.restarts, r.seconds
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_threshold_arithmetic() {
        assert!(alpha_from_color(&[[255; 3]; 4], 10).iter().all(|&a| !a));
        assert!(alpha_from_color(&[[255, 0, 0]; 4], 10).iter().all(|&a| a));
        let px = [[255, 255, 255], [200, 200, 200], [245, 245, 245], [244, 255, 255]];
        assert_eq!(alpha_from_color(&px, 10), vec![false, true, false, true]);
    }

    #[test]
    fn stage_line_is_key_value() {
        let r = StageReport {
            stage: 1,
            steps: 100,
            resolution: 256,
            initial_loss: 0.5,
            final_loss: 0.01,
            vertices: 10,
            faces: 16,
            restarts: 0,
            seconds: 1.5,
        };
        let line = stage_line(&r);
        for tok in line.split(' ') {
            let (k, v) = tok.split_once('=').unwrap();
            assert!(!k.is_empty() && !v.is_empty());
        }
    }
}
