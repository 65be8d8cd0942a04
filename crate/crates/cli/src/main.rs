use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use incremesh::pipeline::{self, EvalOptions, RenderOptions, RigKind, DEFAULT_ALPHA_THRESHOLD};
use incremesh::reconstruct::{ConfigFile, Reconstruction};
use incremesh::render::Shading;
use incremesh::texture::{BakeConfig, BakeMode};
use incremesh::{Error, Result};

/// Multiview mesh reconstruction, incremental editing and texture baking.
///
/// Exit codes: 0 success, 2 bad input, 3 optimization diverged, 4 contract
/// violation (mismatched rigs, regions or sizes).
#[derive(Parser)]
#[command(name = "incremesh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Reconstruction config (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for stochastic steps such as surface sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Render resolution, or the resolution targets are resampled to.
    #[arg(long, global = true)]
    res: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Rig::Six)]
    rig: Rig,

    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rig {
    Six,
    Eight,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShadingArg {
    Face,
    Vertex,
    Crease,
}

#[derive(Clone, Copy, ValueEnum)]
enum BakeArg {
    Vertex,
    Atlas,
}

#[derive(Args, Clone, Copy)]
struct BakeFlags {
    /// How colors are stored on the output mesh.
    #[arg(long, value_enum, default_value_t = BakeArg::Vertex)]
    bake: BakeArg,
    #[arg(long, default_value_t = 1024)]
    atlas_res: usize,
    #[arg(long, default_value_t = 4)]
    seam_padding: usize,
}

impl BakeFlags {
    fn config(&self) -> BakeConfig {
        BakeConfig {
            mode: match self.bake {
                BakeArg::Vertex => BakeMode::VertexColors,
                BakeArg::Atlas => BakeMode::Atlas,
            },
            atlas_resolution: self.atlas_res,
            seam_padding: self.seam_padding,
            ..BakeConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render color, normal and alpha views of a mesh plus a manifest.
    Render {
        mesh: PathBuf,
        #[arg(long, value_enum, default_value_t = ShadingArg::Crease)]
        shading: ShadingArg,
        /// Half of the visible width; defaults to framing the mesh.
        #[arg(long)]
        half_extent: Option<f64>,
        /// Also write 16-bit depth images.
        #[arg(long)]
        depth: bool,
    },
    /// Reconstruct a mesh from a view manifest.
    Reconstruct {
        manifest: PathBuf,
        /// Start from this mesh instead of from scratch.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Region file restricting which part of the initial mesh may move.
        #[arg(long, requires = "init")]
        region: Option<PathBuf>,
    },
    /// Apply an edit given as a full set of edited views.
    Edit {
        prior: PathBuf,
        manifest: PathBuf,
        #[command(flatten)]
        bake: BakeFlags,
    },
    /// Build a mesh part by part from a step script.
    Progressive {
        script: PathBuf,
        #[command(flatten)]
        bake: BakeFlags,
    },
    /// Bake view colors onto a mesh.
    Bake {
        mesh: PathBuf,
        manifest: PathBuf,
        #[command(flatten)]
        bake: BakeFlags,
    },
    /// Compare two meshes (OBJ) or two images (PNG); prints a JSON report.
    Eval {
        a: PathBuf,
        b: PathBuf,
        /// Restrict image PSNR to this grayscale mask.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = incremesh::metrics::DEFAULT_CHAMFER_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = incremesh::metrics::DEFAULT_IOU_GRID)]
        grid: usize,
    },
    /// Derive an alpha mask from a color image on a white background.
    AlphaExtract {
        color: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA_THRESHOLD)]
        threshold: u8,
    },
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::BadInput {
            field: "--out".into(),
            message: "this command needs an output path".into(),
        })
}

fn config(cli: &Cli) -> Result<ConfigFile> {
    match &cli.config {
        Some(p) => ConfigFile::read(p),
        None => Ok(ConfigFile::default()),
    }
}

fn print_stages(prefix: &str, rec: &Reconstruction) {
    for s in &rec.stages {
        println!("{prefix}{}", pipeline::stage_line(s));
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Render {
            mesh,
            shading,
            half_extent,
            depth,
        } => {
            let out = out_path(cli)?;
            let opts = RenderOptions {
                rig: match cli.rig {
                    Rig::Six => RigKind::Six,
                    Rig::Eight => RigKind::Eight,
                },
                resolution: cli.res.unwrap_or(incremesh::camera::DEFAULT_RESOLUTION),
                half_extent: *half_extent,
                shading: match shading {
                    ShadingArg::Face => Shading::Face,
                    ShadingArg::Vertex => Shading::Vertex,
                    ShadingArg::Crease => Shading::Crease,
                },
                with_depth: *depth,
            };
            let m = pipeline::cmd_render(mesh, out, &opts)?;
            println!(
                "views={} resolution={} half_extent={} manifest={}",
                m.entries.len(),
                m.rig.resolution,
                m.rig.half_extent,
                out.join(pipeline::MANIFEST_FILE).display()
            );
        }
        Command::Reconstruct { manifest, init, region } => {
            let out = out_path(cli)?;
            let rec = pipeline::cmd_reconstruct(manifest, out, &config(cli)?, init.as_deref(), region.as_deref(), cli.res)?;
            print_stages("", &rec);
            println!("vertices={} faces={} out={}", rec.mesh.num_vertices(), rec.mesh.num_faces(), out.display());
        }
        Command::Edit { prior, manifest, bake } => {
            let out = out_path(cli)?;
            let e = pipeline::cmd_edit(prior, manifest, out, &config(cli)?, &bake.config())?;
            let b = e.region.bounding_box;
            println!(
                "mode={} changed_pixels={} box_min={},{},{} box_max={},{},{}",
                format!("{:?}", e.region.mode).to_lowercase(),
                e.region.changed_pixels(),
                b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
            );
            print_stages("", &e.reconstruction);
            println!(
                "vertices={} faces={} frozen={} out={}",
                e.mesh.num_vertices(),
                e.mesh.num_faces(),
                e.reconstruction.mesh.frozen_count(),
                out.display()
            );
        }
        Command::Progressive { script, bake } => {
            let out = out_path(cli)?;
            let steps = pipeline::cmd_progressive(script, out, &config(cli)?, &bake.config(), |k, s| {
                print_stages(&format!("step={k} "), &s.reconstruction);
                println!(
                    "step={k} vertices={} faces={} components={} out={}",
                    s.reconstruction.mesh.num_vertices(),
                    s.reconstruction.mesh.num_faces(),
                    s.reconstruction.mesh.face_component_count(),
                    s.path.display()
                );
            })?;
            println!("steps={} out={}", steps.len(), out.join("final.obj").display());
        }
        Command::Bake { mesh, manifest, bake } => {
            let out = out_path(cli)?;
            let m = pipeline::cmd_bake(mesh, manifest, out, &bake.config())?;
            println!("vertices={} faces={} out={}", m.num_vertices(), m.num_faces(), out.display());
        }
        Command::Eval {
            a,
            b,
            mask,
            samples,
            grid,
        } => {
            let is_png = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            let json = if is_png(a) && is_png(b) {
                to_json(&pipeline::cmd_eval_images(a, b, mask.as_deref())?)
            } else {
                let opts = EvalOptions {
                    samples: *samples,
                    iou_grid: *grid,
                    seed: cli.seed,
                };
                to_json(&pipeline::cmd_eval_meshes(a, b, &opts)?)
            };
            match &cli.out {
                Some(p) => std::fs::write(p, json + "\n").map_err(|e| Error::Io { path: p.clone(), source: e })?,
                None => println!("{json}"),
            }
        }
        Command::AlphaExtract { color, threshold } => {
            let out = out_path(cli)?;
            let n = pipeline::cmd_alpha_extract(color, *threshold, out)?;
            println!("foreground={n} out={}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
