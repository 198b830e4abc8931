mod common;

use std::fs;

use thermalsplat::io::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint};
use thermalsplat::io::ply::{load_ply, save_ply};
use thermalsplat::train::{run, train, TrainOutput};
use thermalsplat::Error;

#[test]
fn loss_decreases_on_tiny_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(&tmp.path().join("data"));
    let config = common::quick_config(80);
    let report = train(&data, &config, None).unwrap();
    let first = report.losses.first().unwrap().1.total;
    let last = report.losses.last().unwrap().1.total;
    assert!(last < 0.8 * first, "loss {first} -> {last}");
    assert_eq!(report.state.iteration, 80);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(&tmp.path().join("data"));
    let mut config = common::quick_config(40);
    config.checkpoints = vec![20, 40];
    let full = TrainOutput {
        dir: tmp.path().join("full"),
    };
    train(&data, &config, Some(&full)).unwrap();

    let state = load_checkpoint(&full.checkpoint_path(20)).unwrap();
    assert_eq!(state.iteration, 20);
    let (tr, te) = data.split();
    let resumed = TrainOutput {
        dir: tmp.path().join("resumed"),
    };
    run(state, &tr, &te, Some(&resumed)).unwrap();

    let a = fs::read(full.checkpoint_path(40)).unwrap();
    let b = fs::read(resumed.checkpoint_path(40)).unwrap();
    assert!(a == b, "final checkpoints differ");
}

#[test]
fn checkpoint_rejects_bad_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(&tmp.path().join("data"));
    let state = train(&data, &common::quick_config(3), None).unwrap().state;
    let bytes = encode_checkpoint(&state);
    assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
    for cut in [5, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "cut {cut}: {err}");
    }
    let missing = tmp.path().join("nope.ckpt");
    assert!(matches!(load_checkpoint(&missing), Err(Error::Io { .. })));
}

#[test]
fn ply_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = common::tiny_dataset(&tmp.path().join("data"));
    let cloud = train(&data, &common::quick_config(12), None).unwrap().state.cloud;
    let path = tmp.path().join("points.ply");
    save_ply(&cloud, &path).unwrap();
    // The active SH degree is training state and is not exported.
    let back = load_ply(&path).unwrap();
    assert_eq!(back.positions, cloud.positions);
    assert_eq!(back.log_scales, cloud.log_scales);
    assert_eq!(back.rotations, cloud.rotations);
    assert_eq!(back.opacity_logits, cloud.opacity_logits);
    assert_eq!(back.sh, cloud.sh);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_ply(&path).is_err());
}
