//! Projects an arm skeleton through a head camera, rasterizes the action
//! map, and computes the camera's ray map.
//!
//! `cargo run --release --example project_and_rasterize -- [out_dir]`

use std::path::Path;

use egoworld::scenecam::{plucker_raymap, project_keypoints, rasterize_action, Intrinsics, RasterStyle};
use egoworld::synthenv::{arm_keypoints, head_camera, write_ppm};
use ndarray::Axis;

pub fn run(out: &Path) -> egoworld::Result<()> {
    std::fs::create_dir_all(out).map_err(|source| egoworld::Error::Io { path: out.into(), source })?;
    let intr = Intrinsics::standard(64, 64);
    let mut frames = Vec::new();
    for k in 0..4 {
        let s = k as f64 / 3.0;
        let cam = head_camera(s, [0.0, 1.0, 2.0]);
        let wrist = [0.1 * s - 0.05, 0.35, 0.05 + 0.05 * s];
        let frame = project_keypoints(&cam, &intr, &arm_keypoints(wrist), 0.01)?;
        println!("frame {k}: {} of {} keypoints visible", frame.visible().count(), frame.points.len());
        frames.push(frame);
    }
    let map = rasterize_action(&frames, &intr, &RasterStyle::default())?;
    for (k, img) in map.raster.axis_iter(Axis(1)).enumerate() {
        write_ppm(&out.join(format!("action_{k}.ppm")), &img.to_owned())?;
    }
    let rays = plucker_raymap(&head_camera(0.0, [0.0; 3]), &intr, 16, 16)?;
    println!("ray map {:?}, center direction {:?}", rays.embedding.dim(), rays.embedding.slice(ndarray::s![..3, 8, 8]).to_vec());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/action".into());
    if let Err(e) = run(Path::new(&out)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
