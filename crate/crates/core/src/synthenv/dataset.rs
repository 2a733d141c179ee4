use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{episode_dir_name, read_episode, write_episode, FORMAT_VERSION};
use super::task::{TaskKind, TaskSpec};
use super::{generate_episode, Episode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub height: usize,
    pub width: usize,
    /// Episode `i` gets task kind `task_mix[i % task_mix.len()]`.
    pub task_mix: Vec<TaskKind>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 500,
            min_length: 20,
            max_length: 90,
            height: 64,
            width: 64,
            task_mix: TaskKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dataset: {m}")));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.min_length < 2 || self.max_length < self.min_length {
            return bad("need 2 <= min_length <= max_length");
        }
        if self.height < 32 || self.width < 32 {
            return bad("resolution must be at least 32x32");
        }
        if self.task_mix.is_empty() {
            return bad("task_mix is empty");
        }
        Ok(())
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        self.seed + index as u64
    }

    /// Task and length for episode `index`.
    pub fn episode_plan(&self, index: usize) -> (TaskSpec, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.episode_seed(index));
        rng.set_stream(1);
        let kind = self.task_mix[index % self.task_mix.len()];
        let task = TaskSpec::sample(kind, &mut rng);
        let length = rng.random_range(self.min_length..=self.max_length);
        (task, length)
    }

    pub fn episode(&self, index: usize) -> Result<Episode> {
        let (task, length) = self.episode_plan(index);
        generate_episode(
            self.episode_seed(index),
            &task,
            length,
            (self.height, self.width),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub dir: String,
    pub task: TaskKind,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub episodes: Vec<ManifestEntry>,
}

/// Generates `cfg.count` episodes under `out`, spread over `jobs` threads.
/// Output is identical for any job count.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path, jobs: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let jobs = jobs.clamp(1, cfg.count);
    let results: Vec<Result<Vec<(usize, ManifestEntry)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                s.spawn(move || {
                    (j..cfg.count)
                        .step_by(jobs)
                        .map(|i| {
                            let ep = cfg.episode(i)?;
                            write_episode(out, &ep)?;
                            Ok((
                                i,
                                ManifestEntry {
                                    dir: episode_dir_name(ep.seed),
                                    task: ep.task.kind,
                                    seed: ep.seed,
                                    frames: ep.len(),
                                },
                            ))
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generator thread panicked"))
            .collect()
    });
    let mut entries = Vec::with_capacity(cfg.count);
    for r in results {
        entries.extend(r?);
    }
    entries.sort_by_key(|(i, _)| *i);
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        episodes: entries.into_iter().map(|(_, e)| e).collect(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::file(&path, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::file(
            &path,
            format!("unsupported format version {}", m.format_version),
        ));
    }
    Ok(m)
}

fn check_entry(root: &Path, e: &ManifestEntry) -> Result<Episode> {
    let dir = root.join(&e.dir);
    if !dir.is_dir() {
        return Err(Error::file(
            &dir,
            "episode directory listed in manifest is missing",
        ));
    }
    let ep = read_episode(&dir)?;
    if ep.len() != e.frames || ep.seed != e.seed || ep.task.kind != e.task {
        return Err(Error::file(
            &dir,
            "episode disagrees with its manifest entry",
        ));
    }
    Ok(ep)
}

/// Checks that every manifest entry exists and reads back consistently.
pub fn validate_dataset(root: &Path) -> Result<DatasetManifest> {
    let m = read_manifest(root)?;
    for e in &m.episodes {
        check_entry(root, e)?;
    }
    Ok(m)
}

/// Loads every episode listed in the manifest, in manifest order.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<Episode>)> {
    let m = read_manifest(root)?;
    let eps = m
        .episodes
        .iter()
        .map(|e| check_entry(root, e))
        .collect::<Result<_>>()?;
    Ok((m, eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            count: 6,
            min_length: 3,
            max_length: 6,
            height: 32,
            width: 32,
            ..Default::default()
        }
    }

    #[test]
    fn job_count_does_not_change_output() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(&small(), a.path(), 1).unwrap();
        let mb = generate_dataset(&small(), b.path(), 3).unwrap();
        assert_eq!(ma, mb);
        for e in &ma.episodes {
            let f = |root: &Path| fs::read(root.join(&e.dir).join("frames/0001.ppm")).unwrap();
            assert_eq!(f(a.path()), f(b.path()));
        }
        assert_eq!(
            ma.episodes
                .iter()
                .filter(|e| e.task == TaskKind::Pour)
                .count(),
            1
        );
    }

    #[test]
    fn deleted_episode_is_named() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), d.path(), 2).unwrap();
        validate_dataset(d.path()).unwrap();
        fs::remove_dir_all(d.path().join(&m.episodes[4].dir)).unwrap();
        let msg = validate_dataset(d.path()).unwrap_err().to_string();
        assert!(msg.contains(&m.episodes[4].dir), "{msg}");
    }
}
