//! Generates a small synthetic dataset and prints its manifest.
//!
//! `cargo run --release --example generate_dataset -- [out_dir]`

use std::path::Path;

use egoworld::synthenv::{generate_dataset, read_episode, DatasetConfig};

pub fn run(out: &Path) -> egoworld::Result<()> {
    let cfg = DatasetConfig {
        count: 8,
        min_length: 20,
        max_length: 40,
        ..Default::default()
    };
    let manifest = generate_dataset(&cfg, out, 2)?;
    for e in &manifest.episodes {
        let ep = read_episode(&out.join(&e.dir))?;
        println!("{:<12} {:<10} {:>3} frames  \"{}\"", e.dir, e.task.name(), e.frames, ep.task.text());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/dataset".into());
    if let Err(e) = run(Path::new(&out)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
