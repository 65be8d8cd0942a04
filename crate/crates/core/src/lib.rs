//! Multiview-conditioned triangle mesh reconstruction and editing.
//!
//! The engine lifts sets of per-view color, normal and alpha images into
//! triangle meshes by differentiable rasterization, Adam and continuous
//! remeshing. Reconstruction can start from a prior mesh so that only an
//! edited region changes, and can be chained part by part.
//!
//! Module map:
//!
//! - [`mesh`]: indexed triangle meshes, local topology edits, validation, OBJ IO
//! - [`camera`]: orthographic cameras and the fixed view rigs
//! - [`render`]: forward rasterizer and the differentiable image loss
//! - [`reconstruct`]: Adam + remeshing optimization, from scratch or incremental
//! - [`region`]: mask differencing, visual-hull localization, freezing and seeding
//! - [`texture`]: baking multiview colors to vertex colors or a box-projected atlas
//! - [`metrics`]: Chamfer distance, volume IoU, PSNR and SSIM
//! - [`pipeline`]: view manifests, step scripts and the command implementations

pub mod camera;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod reconstruct;
pub mod region;
pub mod render;
pub mod texture;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
