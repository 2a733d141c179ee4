//! Runs every example end to end.

#[path = "../examples/ablate_tiny.rs"]
mod ablate_tiny;
#[path = "../examples/codec_roundtrip.rs"]
mod codec_roundtrip;
#[path = "../examples/custom_velocity_field.rs"]
mod custom_velocity_field;
#[path = "../examples/evaluate_video.rs"]
mod evaluate_video;
#[path = "../examples/generate_dataset.rs"]
mod generate_dataset;
#[path = "../examples/project_and_rasterize.rs"]
mod project_and_rasterize;
#[path = "../examples/sample_video.rs"]
mod sample_video;
#[path = "../examples/train_tiny.rs"]
mod train_tiny;

#[test]
fn data_examples() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset::run(&dir.path().join("data")).unwrap();
    assert!(dir.path().join("data/manifest.json").is_file());
    project_and_rasterize::run(&dir.path().join("action")).unwrap();
    assert!(dir.path().join("action/action_3.ppm").is_file());
    codec_roundtrip::run().unwrap();
    evaluate_video::run().unwrap();
}

#[test]
fn model_examples() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny::run(&dir.path().join("ck")).unwrap();
    sample_video::run(&dir.path().join("ck"), &dir.path().join("sample")).unwrap();
    assert!(dir.path().join("sample/null_action/frames").is_dir());
    custom_velocity_field::run().unwrap();
    ablate_tiny::run().unwrap();
}
