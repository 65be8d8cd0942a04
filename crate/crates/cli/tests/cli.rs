use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use incremesh::mesh::obj::write_obj;
use incremesh::mesh::{cuboid, icosphere};
use incremesh::pipeline::ViewManifest;
use incremesh::render::io::read_gray;
use incremesh::Vec3;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_incremesh"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("incremesh_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, stderr(o));
    assert!(o.stderr.is_empty(), "stderr on success: {}", stderr(o));
}

fn sphere_obj(dir: &Path) -> PathBuf {
    let p = dir.join("sphere.obj");
    write_obj(&p, &icosphere(Vec3::zeros(), 0.6, 2).unwrap()).unwrap();
    p
}

#[test]
fn render_writes_eighteen_pngs_and_a_manifest() {
    let dir = scratch("render");
    let mesh = sphere_obj(&dir);
    let views = dir.join("views");
    let o = run(&["render", s(&mesh), "--res", "64", "--out", s(&views)]);
    assert_ok(&o);
    let pngs = std::fs::read_dir(&views)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 18);
    let m = ViewManifest::read(&views.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 6);
    assert_eq!(m.rig.resolution, 64);
    assert!(stdout(&o).starts_with("views=6 resolution=64"));

    let o = run(&["render", s(&mesh), "--res", "32", "--rig", "eight", "--out", s(&dir.join("eight"))]);
    assert_ok(&o);
    assert_eq!(ViewManifest::read(&dir.join("eight/manifest.json")).unwrap().entries.len(), 8);
}

#[test]
fn corrupt_manifest_exits_with_bad_input() {
    let dir = scratch("corrupt");
    let mesh = sphere_obj(&dir);
    let views = dir.join("views");
    assert_ok(&run(&["render", s(&mesh), "--res", "32", "--out", s(&views)]));
    let path = views.join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"resolution\": 32", "\"resolution\": \"big\"", 1)).unwrap();
    let o = run(&["reconstruct", s(&path), "--out", s(&dir.join("out.obj"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest.rig.resolution"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn missing_output_is_bad_input() {
    let dir = scratch("noout");
    let mesh = sphere_obj(&dir);
    let o = run(&["render", s(&mesh)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn region_on_mismatched_views_is_a_contract_error() {
    let dir = scratch("contract");
    let mesh = sphere_obj(&dir);
    let views = dir.join("views");
    assert_ok(&run(&["render", s(&mesh), "--res", "32", "--out", s(&views)]));
    let region = dir.join("region.json");
    let r = incremesh::region::EditRegion::empty(2, 32);
    incremesh::pipeline::RegionFile::write_region(&region, &r).unwrap();
    let o = run(&[
        "reconstruct",
        s(&views.join("manifest.json")),
        "--init",
        s(&mesh),
        "--region",
        s(&region),
        "--out",
        s(&dir.join("out.obj")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn reconstruct_prints_stage_lines() {
    let dir = scratch("recon");
    let mesh = sphere_obj(&dir);
    let views = dir.join("views");
    assert_ok(&run(&["render", s(&mesh), "--res", "64", "--out", s(&views)]));
    let cfg = dir.join("quick.toml");
    std::fs::write(&cfg, "steps = 10\n").unwrap();
    let out = dir.join("out.obj");
    let o = run(&["reconstruct", s(&views.join("manifest.json")), "--config", s(&cfg), "--out", s(&out)]);
    assert_ok(&o);
    let text = stdout(&o);
    let stages: Vec<&str> = text.lines().filter(|l| l.starts_with("stage=")).collect();
    assert_eq!(stages.len(), 2);
    for line in text.lines() {
        assert!(line.split(' ').all(|t| t.contains('=')), "{line}");
    }
    assert!(incremesh::mesh::obj::read_obj(&out).unwrap().num_faces() > 0);

    std::fs::write(&cfg, "steps = 10\nwarp_speed = 9\n").unwrap();
    let o = run(&["reconstruct", s(&views.join("manifest.json")), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp_speed"), "{}", stderr(&o));
}

#[test]
fn eval_of_identical_meshes() {
    let dir = scratch("eval");
    let p = dir.join("cube.obj");
    write_obj(&p, &cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5))).unwrap();
    let o = run(&["eval", s(&p), s(&p), "--samples", "20000", "--grid", "64", "--seed", "3"]);
    assert_ok(&o);
    let text = stdout(&o);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["chamfer"].as_f64(), Some(0.0));
    assert_eq!(v["volume_iou"].as_f64(), Some(1.0));
    assert_eq!(v["seed"].as_u64(), Some(3));
    for key in v.as_object().unwrap().keys() {
        assert_eq!(text.matches(&format!("\"{key}\":")).count(), 1, "{key}");
    }
}

#[test]
fn alpha_extract_threshold() {
    let dir = scratch("alpha");
    let color = dir.join("c.png");
    let mut img = image::RgbImage::from_pixel(16, 16, image::Rgb([255, 255, 255]));
    img.put_pixel(3, 5, image::Rgb([200, 200, 200]));
    img.put_pixel(4, 5, image::Rgb([250, 250, 250]));
    img.save(&color).unwrap();
    let out = dir.join("a.png");
    let o = run(&["alpha-extract", s(&color), "--out", s(&out)]);
    assert_ok(&o);
    let (_, a) = read_gray(&out).unwrap();
    let on: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.5).collect();
    assert_eq!(on, vec![5 * 16 + 3]);

    let red = dir.join("r.png");
    image::RgbImage::from_pixel(16, 16, image::Rgb([255, 0, 0])).save(&red).unwrap();
    assert_ok(&run(&["alpha-extract", s(&red), "--out", s(&out)]));
    assert!(read_gray(&out).unwrap().1.iter().all(|&x| x == 1.0));
}
