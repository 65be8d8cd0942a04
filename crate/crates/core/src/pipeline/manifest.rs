//! JSON file contracts: view manifests, edit regions and step scripts.
//!
//! Paths inside a file are stored as written and resolved against the
//! directory of the file that contains them. Unknown fields are ignored so
//! newer writers stay readable.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::camera::{CameraRig, OrthoCamera};
use crate::region::{Aabb, EditMode, EditRegion};
use crate::render::io::{read_gray, read_view, write_gray, ViewFiles};
use crate::render::MultiviewSet;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigParams {
    pub resolution: usize,
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub azimuth: f64,
    pub elevation: f64,
    pub color_path: String,
    pub normal_path: String,
    pub alpha_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
}

/// A rig plus the image files of each of its views, in rig order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewManifest {
    pub version: u32,
    pub rig: RigParams,
    pub entries: Vec<ViewEntry>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    base.join(p)
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses JSON, naming the offending field path in the error.
fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { what.to_string() } else { format!("{what}.{field}") };
        Error::bad_input(field, e.into_inner().to_string())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version == 0 {
        return Err(Error::bad_input(format!("{what}.version"), "must be at least 1"));
    }
    Ok(())
}

impl ViewManifest {
    /// Manifest for `rig` with files `<stem>_color.png` etc., stems `view_00`, `view_01`, ...
    pub fn for_rig(rig: &CameraRig, with_depth: bool) -> Self {
        let entries = rig
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let stem = format!("view_{i:02}");
                ViewEntry {
                    azimuth: c.azimuth,
                    elevation: c.elevation,
                    color_path: format!("{stem}_color.png"),
                    normal_path: format!("{stem}_normal.png"),
                    alpha_path: format!("{stem}_alpha.png"),
                    depth_path: with_depth.then(|| format!("{stem}_depth.png")),
                }
            })
            .collect();
        ViewManifest {
            version: MANIFEST_VERSION,
            rig: RigParams {
                resolution: rig.resolution(),
                half_extent: rig.half_extent(),
            },
            entries,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: ViewManifest = parse_json(text, "manifest")?;
        m.check()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Structural checks that need no file access.
    pub fn check(&self) -> Result<()> {
        check_version(self.version, "manifest")?;
        if self.entries.is_empty() {
            return Err(Error::bad_input("manifest.entries", "needs at least one view"));
        }
        self.rig().map_err(|e| Error::bad_input("manifest.rig", e.to_string()))?;
        Ok(())
    }

    pub fn rig(&self) -> Result<CameraRig> {
        let cameras = self
            .entries
            .iter()
            .map(|e| OrthoCamera::new(e.azimuth, e.elevation, self.rig.half_extent, self.rig.resolution))
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras)
    }

    /// Absolute file paths of entry `i`.
    pub fn files(&self, base: &Path, i: usize) -> ViewFiles {
        let e = &self.entries[i];
        ViewFiles {
            color: resolve(base, &e.color_path),
            normal: resolve(base, &e.normal_path),
            alpha: resolve(base, &e.alpha_path),
            depth: e.depth_path.as_deref().map(|p| resolve(base, p)),
        }
    }

    /// Loads every view, with paths relative to `base`.
    pub fn load(&self, base: &Path) -> Result<MultiviewSet> {
        let rig = self.rig()?;
        let views = rig
            .cameras
            .iter()
            .enumerate()
            .map(|(i, &cam)| read_view(cam, &self.files(base, i)))
            .collect::<Result<Vec<_>>>()?;
        MultiviewSet::new(views)
    }
}

/// Reads a manifest file and its views.
pub fn load_manifest(path: &Path) -> Result<(ViewManifest, MultiviewSet)> {
    let m = ViewManifest::read(path)?;
    let views = m.load(&parent_dir(path))?;
    Ok((m, views))
}

/// On-disk form of an [`EditRegion`]: one mask PNG per view plus the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub mode: EditMode,
    pub bounding_box: Aabb,
    pub mask_paths: Vec<String>,
}

impl RegionFile {
    /// Writes `<stem>_mask_NN.png` next to `path` and the JSON at `path`.
    pub fn write_region(path: &Path, region: &EditRegion) -> Result<RegionFile> {
        let dir = parent_dir(path);
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "region".into());
        let mut mask_paths = Vec::new();
        for (i, mask) in region.masks.iter().enumerate() {
            let name = format!("{stem}_mask_{i:02}.png");
            let gray: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            write_gray(&dir.join(&name), region.resolution, &gray)?;
            mask_paths.push(name);
        }
        let file = RegionFile {
            mode: region.mode,
            bounding_box: region.bounding_box,
            mask_paths,
        };
        write_json(path, &file)?;
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_json(text, "region")
    }

    pub fn read_region(path: &Path) -> Result<EditRegion> {
        Self::parse(&read_text(path)?)?.load(&parent_dir(path))
    }

    pub fn load(&self, base: &Path) -> Result<EditRegion> {
        let mut resolution = None;
        let mut masks = Vec::new();
        for (i, p) in self.mask_paths.iter().enumerate() {
            let (res, gray) = read_gray(&resolve(base, p))?;
            if *resolution.get_or_insert(res) != res {
                return Err(Error::bad_input(format!("region.mask_paths[{i}]"), "masks differ in size"));
            }
            masks.push(gray.iter().map(|&g| g > 0.5).collect());
        }
        let resolution = resolution.ok_or_else(|| Error::bad_input("region.mask_paths", "no masks listed"))?;
        let b = &self.bounding_box;
        if (0..3).any(|k| !(b.min[k] <= b.max[k])) {
            return Err(Error::bad_input("region.bounding_box", "min must not exceed max"));
        }
        Ok(EditRegion {
            resolution,
            masks,
            bounding_box: self.bounding_box,
            mode: self.mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Path of this step's view manifest.
    pub views: String,
    /// Optional precomputed region file; otherwise the region comes from
    /// differencing against the previous step's mesh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

/// Ordered steps of a progressive build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScript {
    pub version: u32,
    pub steps: Vec<Step>,
    /// Global reference image; kept for provenance, never read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
}

impl StepScript {
    pub fn parse(text: &str) -> Result<Self> {
        let s: StepScript = parse_json(text, "script")?;
        check_version(s.version, "script")?;
        if s.steps.is_empty() {
            return Err(Error::bad_input("script.steps", "needs at least one step"));
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::standard_rig_six;

    const GOLDEN: &str = include_str!("../../tests/data/manifest_golden.json");

    #[test]
    fn golden_manifest_fields_are_fixed() {
        let rig = standard_rig_six(256, 1.25).unwrap();
        let mut m = ViewManifest::for_rig(&rig, false);
        m.entries[0].depth_path = Some("view_00_depth.png".into());
        assert_eq!(serde_json::to_string_pretty(&m).unwrap() + "\n", GOLDEN);
        assert_eq!(ViewManifest::parse(GOLDEN).unwrap(), m);
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = std::env::temp_dir().join(format!("incremesh_manifest_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let rig = standard_rig_six(64, 0.9).unwrap();
        let m = ViewManifest::for_rig(&rig, true);
        let path = dir.join("views.json");
        m.write(&path).unwrap();
        assert_eq!(ViewManifest::read(&path).unwrap(), m);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_fields_are_tolerated() {
        let mut v: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
        v["generator"] = "someone else".into();
        v["entries"][1]["exposure"] = 1.5.into();
        assert!(ViewManifest::parse(&v.to_string()).is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
        v["entries"][2]["azimuth"] = "north".into();
        match ViewManifest::parse(&v.to_string()) {
            Err(Error::BadInput { field, .. }) => assert_eq!(field, "manifest.entries[2].azimuth"),
            other => panic!("{other:?}"),
        }
        v["entries"][2]["azimuth"] = 90.0.into();
        v["rig"]["half_extent"] = (-1.0).into();
        match ViewManifest::parse(&v.to_string()) {
            Err(Error::BadInput { field, .. }) => assert_eq!(field, "manifest.rig"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ViewManifest::parse("{"), Err(Error::BadInput { .. })));
    }

    #[test]
    fn step_script_needs_steps() {
        let s = r#"{"version": 1, "steps": []}"#;
        assert!(StepScript::parse(s).is_err());
        let s = r#"{"version": 1, "steps": [{"views": "a/views.json"}], "reference_image": "x.png"}"#;
        let script = StepScript::parse(s).unwrap();
        assert_eq!(script.steps[0].region, None);
    }
}
