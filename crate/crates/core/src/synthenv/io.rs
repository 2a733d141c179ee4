//! On-disk episode layout:
//!
//! ```text
//! ep_00000042/
//!   frames/0000.ppm ...   binary P6, 8 bit
//!   poses.jsonl           one line per frame: {"frame": i, "keypoints": {id: [x, y, z]}}
//!   camera.json           intrinsics + per-frame extrinsics
//!   meta.json             seed, task, text, length, resolution
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::script::{skeleton_edges, KEYPOINT_IDS};
use super::task::TaskSpec;
use super::Episode;
use crate::error::{Error, Result};
use crate::scenecam::{Extrinsics, Intrinsics, Keypoint3, KeypointSet3D};

pub const FORMAT_VERSION: u32 = 1;

pub fn episode_dir_name(seed: u64) -> String {
    format!("ep_{seed:08}")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    seed: u64,
    task: TaskSpec,
    text: String,
    length: usize,
    height: usize,
    width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    intrinsics: Intrinsics,
    extrinsics: Vec<Extrinsics>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseLine {
    frame: usize,
    keypoints: serde_json::Map<String, serde_json::Value>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)
        .map_err(|e| Error::file(path, e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::file(path, e.to_string()))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `3 x H x W` image in `[0, 1]` as binary PPM.
pub fn write_ppm(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::shape("ppm channels", 3, c));
    }
    let mut buf = Vec::with_capacity(h * w * 3 + 20);
    write!(buf, "P6\n{w} {h}\n255\n").expect("write to vec");
    for y in 0..h {
        for x in 0..w {
            buf.extend((0..3).map(|ch| to_u8(image[[ch, y, x]])));
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a binary 8-bit PPM into `3 x H x W` in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Array3<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::file(path, msg.to_string());
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed PPM header"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let data = bytes
        .get(pos..pos + w * h * 3)
        .ok_or_else(|| bad("truncated PPM data"))?;
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        data[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Writes every frame of a `3 x L x H x W` video as `{dir}/{i:04}.ppm`.
pub fn write_frames_dir(dir: &Path, video: &Array4<f32>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in video.axis_iter(Axis(1)).enumerate() {
        write_ppm(&dir.join(format!("{i:04}.ppm")), &frame.to_owned())?;
    }
    Ok(())
}

/// Reads `{dir}/0000.ppm, 0001.ppm, ...` until the first gap.
pub fn read_frames_dir(dir: &Path) -> Result<Array4<f32>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(format!("{:04}.ppm", frames.len()));
        if !p.exists() {
            break;
        }
        let f = read_ppm(&p)?;
        if let Some(first) = frames.first() {
            let first: &Array3<f32> = first;
            if first.dim() != f.dim() {
                return Err(Error::file(
                    p,
                    format!("frame size {:?} differs from {:?}", f.dim(), first.dim()),
                ));
            }
        }
        frames.push(f);
    }
    if frames.is_empty() {
        return Err(Error::file(dir, "no frames found (expected 0000.ppm)"));
    }
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    Ok(ndarray::stack(Axis(1), &views).expect("frames have equal shape"))
}

/// Writes an episode under `root/ep_{seed}`; returns the directory.
pub fn write_episode(root: &Path, ep: &Episode) -> Result<PathBuf> {
    ep.validate()?;
    let dir = root.join(episode_dir_name(ep.seed));
    write_frames_dir(&dir.join("frames"), &ep.frames)?;

    let poses = dir.join("poses.jsonl");
    let f = fs::File::create(&poses).map_err(|e| Error::io(&poses, e))?;
    let mut w = BufWriter::new(f);
    for (frame, k) in ep.keypoints.iter().enumerate() {
        let keypoints = k
            .points
            .iter()
            .map(|p| (p.id.clone(), serde_json::json!(p.position)))
            .collect();
        let line = serde_json::to_string(&PoseLine { frame, keypoints }).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io(&poses, e))?;
    }
    w.flush().map_err(|e| Error::io(&poses, e))?;

    write_json(
        &dir.join("camera.json"),
        &CameraFile {
            intrinsics: ep.intrinsics,
            extrinsics: ep.cameras.clone(),
        },
    )?;
    write_json(
        &dir.join("meta.json"),
        &Meta {
            format_version: FORMAT_VERSION,
            seed: ep.seed,
            task: ep.task.clone(),
            text: ep.text.clone(),
            length: ep.len(),
            height: ep.intrinsics.height,
            width: ep.intrinsics.width,
        },
    )?;
    Ok(dir)
}

fn read_poses(path: &Path) -> Result<Vec<KeypointSet3D>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::file(path, format!("line {}: {msg}", n + 1));
        let pose: PoseLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if pose.frame != out.len() {
            return Err(bad(format!(
                "expected frame {}, got {}",
                out.len(),
                pose.frame
            )));
        }
        let mut points = Vec::with_capacity(KEYPOINT_IDS.len());
        for id in KEYPOINT_IDS {
            let v = pose
                .keypoints
                .get(id)
                .ok_or_else(|| bad(format!("missing keypoint `{id}`")))?;
            let position: [f64; 3] = serde_json::from_value(v.clone())
                .map_err(|e| bad(format!("keypoint `{id}`: {e}")))?;
            points.push(Keypoint3 {
                id: id.to_string(),
                position,
            });
        }
        let set = KeypointSet3D {
            points,
            edges: skeleton_edges(),
        };
        set.validate().map_err(|e| bad(e.to_string()))?;
        out.push(set);
    }
    Ok(out)
}

/// Reads an episode directory written by [`write_episode`].
pub fn read_episode(dir: &Path) -> Result<Episode> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = read_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::file(
            &meta_path,
            format!(
                "format version {} (expected {FORMAT_VERSION})",
                meta.format_version
            ),
        ));
    }
    let cam_path = dir.join("camera.json");
    let cam: CameraFile = read_json(&cam_path)?;
    cam.intrinsics
        .validate()
        .map_err(|e| Error::file(&cam_path, e.to_string()))?;
    for e in &cam.extrinsics {
        e.validate()
            .map_err(|e| Error::file(&cam_path, e.to_string()))?;
    }
    let poses_path = dir.join("poses.jsonl");
    let keypoints = read_poses(&poses_path)?;
    let frames_dir = dir.join("frames");
    let frames = read_frames_dir(&frames_dir)?;

    let l = meta.length;
    let count_err = |path: &Path, got: usize| {
        Error::file(path, format!("has {got} frames, meta.json says {l}"))
    };
    if frames.shape()[1] != l {
        return Err(count_err(&frames_dir, frames.shape()[1]));
    }
    if keypoints.len() != l {
        return Err(count_err(&poses_path, keypoints.len()));
    }
    if cam.extrinsics.len() != l {
        return Err(count_err(&cam_path, cam.extrinsics.len()));
    }
    if frames.shape()[2] != meta.height || frames.shape()[3] != meta.width {
        return Err(Error::file(
            &frames_dir,
            "frame size disagrees with meta.json",
        ));
    }
    if cam.intrinsics.width != meta.width || cam.intrinsics.height != meta.height {
        return Err(Error::file(
            &cam_path,
            "intrinsics size disagrees with meta.json",
        ));
    }
    Ok(Episode {
        frames,
        keypoints,
        cameras: cam.extrinsics,
        intrinsics: cam.intrinsics,
        task: meta.task,
        seed: meta.seed,
        text: meta.text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_episode, TaskKind};
    use rand::SeedableRng;

    #[test]
    fn episode_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskSpec::sample(
            TaskKind::Pour,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(2),
        );
        let ep = generate_episode(42, &task, 5, (32, 48)).unwrap();
        let path = write_episode(dir.path(), &ep).unwrap();
        assert!(path.ends_with("ep_00000042"));
        let back = read_episode(&path).unwrap();
        assert_eq!(back.keypoints, ep.keypoints);
        assert_eq!(back.cameras, ep.cameras);
        assert_eq!(back.task, ep.task);
        let err = (&back.frames - &ep.frames)
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(err <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn missing_frame_names_directory() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskSpec::sample(
            TaskKind::Push,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
        );
        let ep = generate_episode(7, &task, 4, (32, 32)).unwrap();
        let path = write_episode(dir.path(), &ep).unwrap();
        fs::remove_file(path.join("frames/0003.ppm")).unwrap();
        let msg = read_episode(&path).unwrap_err().to_string();
        assert!(msg.contains("frames") && msg.contains("3 frames"), "{msg}");
    }

    #[test]
    fn corrupt_pose_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskSpec::sample(
            TaskKind::Push,
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
        );
        let ep = generate_episode(7, &task, 3, (32, 32)).unwrap();
        let path = write_episode(dir.path(), &ep).unwrap();
        fs::write(path.join("poses.jsonl"), "{\"frame\": 0}\n").unwrap();
        let msg = read_episode(&path).unwrap_err().to_string();
        assert!(msg.contains("poses.jsonl"), "{msg}");
    }

    #[test]
    fn ppm_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        fs::write(&p, b"P6\n# hi\n2 1\n255\n\xff\x00\x00\x00\xff\x00").unwrap();
        let img = read_ppm(&p).unwrap();
        assert_eq!(img.dim(), (3, 1, 2));
        assert_eq!(img[[0, 0, 0]], 1.0);
        assert_eq!(img[[1, 0, 1]], 1.0);
    }
}
