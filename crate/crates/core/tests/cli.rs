use std::process::Command;

use partial_rca::pipeline::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_partial-rca"))
}

#[test]
fn config_init_output_parses() {
    let out = bin().arg("config-init").output().unwrap();
    assert!(out.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn generate_then_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[synth]\nnum_nodes = 8\nnum_masked = 1\ntimesteps = 150\nfault_windows = 2\n",
    )
    .unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/metrics.csv").exists());

    let missing = bin()
        .args(["discover", "--metrics"])
        .arg(dir.path().join("nope.csv"))
        .arg("--output")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[train]\ntau = 2.0\n").unwrap();
    let out = bin().args(["generate", "--config"]).arg(&bad_config).output().unwrap();
    assert!(!out.status.success());

    assert!(!bin().arg("no-such-command").output().unwrap().status.success());
}
