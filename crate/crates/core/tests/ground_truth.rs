//! The detector and pour metric on rendered ground truth.

use egoworld::eval::{detect_hand, pck, pck_threshold, pour_monotonicity, MarkerPalette};
use egoworld::scenecam::palette::marker_index;
use egoworld::synthenv::{generate_episode, DatasetConfig, TaskKind};
use ndarray::s;

fn config() -> DatasetConfig {
    DatasetConfig {
        count: 24,
        ..Default::default()
    }
}

#[test]
fn detector_recovers_projected_markers() {
    let cfg = config();
    let palette = MarkerPalette::default();
    let (mut scored, mut worst) = (0usize, 0.0f64);
    for i in 0..cfg.count {
        let ep = cfg.episode(i).unwrap();
        for (k, frame) in ep.action_frames().unwrap().iter().enumerate() {
            let det = detect_hand(&ep.frame(k), &palette).unwrap_or_default();
            for p in frame.visible().filter(|p| marker_index(&p.id).is_some()) {
                let (_, [u, v]) = det.iter().find(|d| d.0 == p.id).unwrap_or_else(|| {
                    panic!("episode {i} frame {k}: marker {} not detected", p.id)
                });
                let e = ((u - p.u).powi(2) + (v - p.v).powi(2)).sqrt();
                worst = worst.max(e);
                scored += 1;
            }
        }
    }
    assert!(scored > 1000, "only {scored} markers scored");
    assert!(worst <= 0.5, "worst detection error {worst} px");
}

#[test]
fn ground_truth_scores_perfect_pck_against_itself() {
    let ep = config().episode(1).unwrap();
    let r = pck(&ep.frames, &ep.frames, pck_threshold(64)).unwrap();
    assert_eq!(r.pck, 100.0);
    assert_eq!(r.excluded_ratio, 0.0);
}

#[test]
fn pour_is_monotone_forward_and_not_reversed() {
    let cfg = config();
    let mut pours = 0;
    for i in 0..cfg.count {
        let (task, length) = cfg.episode_plan(i);
        if task.kind != TaskKind::Pour {
            continue;
        }
        pours += 1;
        let ep = cfg.episode(i).unwrap();
        let region = ep.pour_region().unwrap();
        assert_eq!(
            pour_monotonicity(&ep.frames, &region).unwrap(),
            1.0,
            "episode {i}, {length} frames"
        );
        let short = generate_episode(cfg.episode_seed(i), &task, 16, (64, 64)).unwrap();
        let region = short.pour_region().unwrap();
        assert_eq!(pour_monotonicity(&short.frames, &region).unwrap(), 1.0);
        let reversed = short.frames.slice(s![.., ..;-1, .., ..]).to_owned();
        let m = pour_monotonicity(&reversed, &region).unwrap();
        assert!(m < 0.2, "episode {i}: reversed pour scores {m}");
    }
    assert!(pours >= 4);
}
