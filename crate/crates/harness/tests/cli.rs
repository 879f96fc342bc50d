//! End-to-end checks of the `oclsim` binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oclsim"))
}

fn write_config(name: &str, out: &PathBuf) -> PathBuf {
    let dir = std::env::temp_dir().join("oclsim_cli_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(
        &path,
        format!(
            "method = er\n\
             droptop = on\n\
             generator = color_shortcut\n\
             num_tasks = 2\n\
             classes_per_task = 2\n\
             samples_per_class = 16\n\
             image_size = 16\n\
             bias_ratio = 0.9\n\
             stem_channels = 4\n\
             block_channels = 6,8\n\
             batch_size = 8\n\
             memory_capacity = 8\n\
             lr = 0.1\n\
             kappa0 = 8\n\
             gamma = 8\n\
             period = 2\n\
             history_len = 2\n\
             seeds = 0\n\
             out_dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_subcommand_emits_artifacts() {
    let out = std::env::temp_dir().join("oclsim_cli_tests/run_out");
    let _ = std::fs::remove_dir_all(&out);
    let config = write_config("run.cfg", &out);
    let output = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("a_avg"), "stdout: {stdout}");
    for file in ["summary.json", "results.csv", "kappa_trace.csv", "buffer_audit.csv"] {
        assert!(out.join("seed_0").join(file).exists(), "missing {file}");
    }
    assert!(out.join("aggregate.json").exists());
}

#[test]
fn run_respects_cli_overrides() {
    let out = std::env::temp_dir().join("oclsim_cli_tests/override_out");
    let _ = std::fs::remove_dir_all(&out);
    let config = write_config("override.cfg", &out);
    let other_out = std::env::temp_dir().join("oclsim_cli_tests/override_redirect");
    let _ = std::fs::remove_dir_all(&other_out);
    let output = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--droptop", "off", "--seeds", "5", "--out"])
        .arg(&other_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary = std::fs::read_to_string(other_out.join("seed_5/summary.json")).unwrap();
    assert!(summary.contains("\"droptop\": \"off\""));
}

#[test]
fn dump_stream_writes_manifest() {
    let out = std::env::temp_dir().join("oclsim_cli_tests/dump_out");
    let _ = std::fs::remove_dir_all(&out);
    let config = write_config("dump.cfg", &out);
    let output = bin().args(["dump-stream", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success());
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("index,label,task,carries_shortcut"));
    // 2 tasks x 2 classes x 16 samples
    assert_eq!(manifest.lines().count(), 1 + 64);
}

#[test]
fn bad_config_key_is_reported() {
    let dir = std::env::temp_dir().join("oclsim_cli_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.cfg");
    std::fs::write(&path, "not_a_key = 1\n").unwrap();
    let output = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("not_a_key"), "stderr: {stderr}");
}

#[test]
fn reference_pair_subcommand_reports_agreement() {
    let out = std::env::temp_dir().join("oclsim_cli_tests/refpair_out");
    let _ = std::fs::remove_dir_all(&out);
    let config = write_config("refpair.cfg", &out);
    let output = bin().args(["reference-pair", "--config"]).arg(&config).output().unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out.join("reference_pair.json").exists());
    assert!(out.join("seed_0/kappa_trace_single.csv").exists());
    assert!(out.join("seed_0/kappa_trace_pair.csv").exists());
}

#[test]
fn sweep_subcommand_writes_report() {
    let out = std::env::temp_dir().join("oclsim_cli_tests/sweep_out");
    let _ = std::fs::remove_dir_all(&out);
    let config = write_config("sweep.cfg", &out);
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--axis", "alpha", "--values", "0.85,0.9"])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
