use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seed = 4
images = 2
factor = 4
generator.latent_dim = 4
generator.layers = 2
generator.channels = 4
generator.mapping_hidden = 8
flow.blocks = 1
flow.hidden = 8
flow.epochs = 2
flow.samples = 1000
gaussianization.samples = 1000
solver.rls.iterations = 10
solver.rls.init_samples = 200
solver.rlsplus.iterations = 4
";

fn gprl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gprl"))
        .args(args)
        .env("GPRL_OUT", out)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    (dir, cfg.to_string_lossy().into_owned())
}

#[test]
fn pipeline_writes_weights_and_metrics() {
    let (dir, cfg) = setup();
    let out = dir.path();
    for args in [
        vec!["gen", "init", "--config", &cfg],
        vec!["flow", "train", "--config", &cfg],
        vec!["flow", "check", "--config", &cfg],
        vec![
            "sr",
            "run",
            "--config",
            &cfg,
            "--variant",
            "rls_plus",
            "--run",
            "sr",
        ],
    ] {
        let o = gprl(out, &args);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(out.join("weights/generator.gprl").is_file());
    assert!(out.join("weights/flow.gprl").is_file());
    let csv = std::fs::read_to_string(out.join("sr/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().contains(",rls_plus,"));
    assert!(out.join("sr/images/000_recon.pgm").is_file());
    let manifest = std::fs::read_to_string(out.join("sr/manifest.txt")).unwrap();
    assert!(manifest.starts_with("# command: sr run"));
}

#[test]
fn missing_weights_exit_one_with_path() {
    let (dir, cfg) = setup();
    let o = gprl(dir.path(), &["sr", "run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("generator.gprl"), "{err}");
}

#[test]
fn config_errors_exit_one() {
    let (dir, cfg) = setup();
    let o = gprl(
        dir.path(),
        &["gen", "init", "--config", &cfg, "--set", "nonsense=1"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
    let o = gprl(
        dir.path(),
        &["gen", "init", "--config", &cfg, "--factor", "3"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_two_with_trace() {
    let (dir, cfg) = setup();
    let out = dir.path();
    assert!(gprl(out, &["gen", "init", "--config", &cfg])
        .status
        .success());
    assert!(gprl(out, &["flow", "train", "--config", &cfg])
        .status
        .success());
    let o = gprl(
        out,
        &[
            "sr",
            "run",
            "--config",
            &cfg,
            "--variant",
            "rls",
            "--set",
            "solver.rls.lr=1e300",
        ],
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2), "{err}");
    assert!(err.contains("loss trace"), "{err}");
}
