//! The `visocc` binary end to end on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use visocc_cli::formats::{decode_ply, read_file, MANIFEST};

const TINY: &str = "
seed = 3
sensor.channels = 8
sensor.azimuth_steps = 128
data.pretrain_scenes = 3
data.probe_train_scenes = 2
data.probe_eval_scenes = 2
data.held_out_scenes = 2
pretrain.epochs = 2
pretrain.batch_size = 2
pretrain.max_points = 64
pretrain.max_queries = 64
probe.epochs = 3
export.occupancy_samples = 40
";

fn visocc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visocc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        format!("output_dir = {}\n{TINY}{extra}", dir.join("out").display()),
    )
    .unwrap();
    path
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        text.lines().count(),
        1,
        "one-line error expected, got: {text}"
    );
    text.trim_end().to_string()
}

fn manifest_paths(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join(MANIFEST))
        .unwrap()
        .lines()
        .map(|l| l.split_once("  ").unwrap().1.to_string())
        .collect()
}

#[test]
fn simulate_with_default_config_emits_one_scan_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default.cfg");
    std::fs::write(
        &cfg,
        format!("output_dir = {}\n", dir.path().join("out").display()),
    )
    .unwrap();
    let out = visocc(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let scans = dir.path().join("out/scans/pretrain");
    let listed = manifest_paths(&scans);
    let bins = listed.iter().filter(|p| p.ends_with(".bin")).count();
    assert_eq!(bins, 256);
    assert_eq!(
        listed.len(),
        3 * 256,
        "each scan has its header and labels sidecars"
    );
}

#[test]
fn pipeline_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    for args in [
        vec!["simulate", "--config", cfg],
        vec!["make-queries", "--config", cfg],
        vec!["pretrain", "--config", cfg],
    ] {
        let out = visocc(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out_dir = dir.path().join("out");
    let ckpt = out_dir.join("pretrain/model.ckpt");
    assert_eq!(
        manifest_paths(&out_dir.join("pretrain")),
        ["curves.csv", "metrics.csv", "metrics.json", "model.ckpt"]
    );

    let ck = ckpt.to_str().unwrap();
    for args in [
        vec!["eval-occ", "--config", cfg, "--checkpoint", ck],
        vec!["probe", "--config", cfg, "--checkpoint", ck],
        vec!["probe", "--config", cfg, "--random-init"],
        vec!["separability", "--config", cfg, "--checkpoint", ck],
    ] {
        let out = visocc(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let occ: serde_json::Value =
        serde_json::from_slice(&read_file(&out_dir.join("eval-occ/metrics.json")).unwrap())
            .unwrap();
    assert!(occ["occupancy"]["vs_labels"]["accuracy"].as_f64().is_some());
    assert!(out_dir.join("probe-random-init/metrics.csv").exists());

    let scan = out_dir.join("scans/pretrain/scene_0000000.bin");
    let out = visocc(&[
        "export-ply",
        "--config",
        cfg,
        "--checkpoint",
        ck,
        "--scan",
        scan.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ply = std::fs::read_to_string(out_dir.join("export/scene_0000000.ply")).unwrap();
    let vertices = decode_ply(&ply).unwrap();
    let points = read_file(&scan).unwrap().len() / 16;
    assert_eq!(vertices.len(), points + 40);
    assert_eq!(vertices.iter().filter(|v| v.source == 1).count(), 40);
}

#[test]
fn config_errors_are_one_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pretrain.epoch = 4\n");
    let out = visocc(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error: config: line "), "{line}");
    assert!(line.contains("unknown key 'pretrain.epoch'"), "{line}");

    let cfg = write_config(dir.path(), "seed = 4\n");
    assert!(
        stderr_line(&visocc(&["simulate", "--config", cfg.to_str().unwrap()]))
            .contains("duplicate key 'seed'")
    );
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = visocc(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error: missing_input: "));
    let out = visocc(&[
        "simulate",
        "--config",
        dir.path().join("absent.cfg").to_str().unwrap(),
    ]);
    assert!(stderr_line(&out).starts_with("error: missing_input: "));
}

#[test]
fn diverging_training_dumps_its_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pretrain.lr = 1e30\n");
    let out = visocc(&[
        "pretrain",
        "--in-process",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error: non_finite: "), "{line}");
    assert!(dir
        .path()
        .join("out/pretrain/non_finite_state.ckpt")
        .exists());
}

#[test]
fn printed_defaults_are_a_valid_config() {
    let out = visocc(&["config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("pretrain.epochs = 50"));
    assert!(text.contains("labels ->"));
    assert_eq!(
        visocc_cli::RunConfig::parse(&text).unwrap(),
        visocc_cli::RunConfig::default()
    );
}

#[test]
fn mismatched_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = visocc(&[
        "pretrain",
        "--in-process",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let other = dir.path().join("other.cfg");
    std::fs::write(
        &other,
        format!(
            "output_dir = {}\n{TINY}pretrain.head = ball_avg\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let ckpt = dir.path().join("out/pretrain/model.ckpt");
    let out = visocc(&[
        "eval-occ",
        "--config",
        other.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let line = stderr_line(&out);
    assert!(
        line.starts_with("error: format: architecture mismatch"),
        "{line}"
    );
}
