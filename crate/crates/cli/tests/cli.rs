//! End-to-end tests of the `blockcs` binary: scenario outputs, config
//! validation diagnostics, byte-level reproducibility, and replay.

use std::path::Path;
use std::process::{Command, Output};

fn blockcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockcs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn coherence_scenario_emits_per_block_gram_norms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "coh.toml",
        r#"
scenario = "coherence"
seed = 42

[dictionary]
kind = "line-blocks"
transform = "dft"
dim = 16

[coherence]
s = 4
"#,
    );
    let out_dir = dir.path().join("out");
    let out = blockcs(&[
        "coherence",
        &config,
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("coherence.json")).unwrap())
            .unwrap();
    let per_block = json["report"]["per_block_gram_sup_norm"]
        .as_array()
        .unwrap();
    assert_eq!(per_block.len(), 16);
    for v in per_block {
        assert!((v.as_f64().unwrap() - 1.0 / 16.0).abs() <= 1e-12);
    }
    assert_eq!(json["provenance"]["scenario"], "coherence");
    assert!(json["provenance"]["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn optimal_pi_scenario_on_one_plus_fourier() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "opi.toml",
        r#"
scenario = "optimal-pi"
seed = 1

[dictionary]
kind = "one-plus-fourier"
dim = 64
"#,
    );
    let out_dir = dir.path().join("out");
    let out = blockcs(&[
        "optimal-pi",
        &config,
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("optimal_pi.json")).unwrap())
            .unwrap();
    let probs = json["report"]["probabilities"].as_array().unwrap();
    assert!((probs[0].as_f64().unwrap() - 0.5).abs() <= 1e-12);
    assert!((probs[1].as_f64().unwrap() - 1.0 / 126.0).abs() <= 1e-12);
}

#[test]
fn empty_m_grid_is_rejected_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "phase.toml",
        r#"
scenario = "phase"
seed = 7

[dictionary]
kind = "isolated"
transform = "dft"
dim = 16

[signal]
class = "generic"
s = 2

[grid]
m = []
trials = 5
"#,
    );
    let out = blockcs(&["phase", &config]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("grid.m"),
        "diagnostic does not name the field: {stderr}"
    );
}

#[test]
fn scenario_subcommand_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "coh.toml",
        r#"
scenario = "coherence"
seed = 1

[dictionary]
kind = "line-blocks"
dim = 4

[coherence]
s = 2
"#,
    );
    let out = blockcs(&["phase", &config]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("scenario"), "{stderr}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.toml",
        r#"
scenario = "optimal-pi"
seed = 1
mystery_knob = 3

[dictionary]
kind = "line-blocks"
dim = 4
"#,
    );
    let out = blockcs(&["optimal-pi", &config]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mystery_knob"), "{stderr}");
}

const PHASE_CONFIG: &str = r#"
scenario = "phase"
seed = 21

[dictionary]
kind = "isolated"
transform = "dft"
dim = 16

[signal]
class = "generic"
s = 2

[grid]
m = [4, 8]
trials = 6
"#;

#[test]
fn runs_are_byte_identical_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "phase.toml", PHASE_CONFIG);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();

    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    assert!(
        blockcs(&["phase", &config, "--output-dir", out1.to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        blockcs(&["phase", &config, "--output-dir", out2.to_str().unwrap()])
            .status
            .success()
    );
    assert_eq!(read(&out1, "phase.csv"), read(&out2, "phase.csv"));
    assert_eq!(read(&out1, "phase.json"), read(&out2, "phase.json"));

    // A different worker count must not change a byte.
    let worker_config = write_config(
        dir.path(),
        "phase_workers.toml",
        &PHASE_CONFIG.replace("seed = 21", "seed = 21\nworkers = 3"),
    );
    let out3 = dir.path().join("c");
    assert!(blockcs(&[
        "phase",
        &worker_config,
        "--output-dir",
        out3.to_str().unwrap()
    ])
    .status
    .success());
    // Strip the provenance header (the hash covers the workers knob) and
    // compare the data bodies.
    let body = |d: &Path| {
        let text = String::from_utf8(read(d, "phase.csv")).unwrap();
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&out1), body(&out3));

    // Seed override changes the data.
    let out4 = dir.path().join("d");
    assert!(blockcs(&[
        "phase",
        &config,
        "--seed",
        "22",
        "--output-dir",
        out4.to_str().unwrap()
    ])
    .status
    .success());
    assert_ne!(read(&out1, "phase.csv"), read(&out4, "phase.csv"));
}

#[test]
fn replay_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "phase.toml", PHASE_CONFIG);
    let out_dir = dir.path().join("out");
    assert!(
        blockcs(&["phase", &config, "--output-dir", out_dir.to_str().unwrap()])
            .status
            .success()
    );
    let artifact = out_dir.join("phase.csv");

    let ok = blockcs(&["replay", &config, "--file", artifact.to_str().unwrap()]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );

    // Flip one data byte: replay must fail.
    let mut bytes = std::fs::read(&artifact).unwrap();
    let idx = bytes.len() - 2;
    bytes[idx] = if bytes[idx] == b'1' { b'2' } else { b'1' };
    std::fs::write(&artifact, bytes).unwrap();
    let bad = blockcs(&["replay", &config, "--file", artifact.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("MISMATCH"));

    // A config with a different seed does not own this artifact.
    let other = write_config(
        dir.path(),
        "other.toml",
        &PHASE_CONFIG.replace("seed = 21", "seed = 99"),
    );
    let foreign = blockcs(&["replay", &other, "--file", artifact.to_str().unwrap()]);
    assert!(!foreign.status.success());
    assert!(String::from_utf8_lossy(&foreign.stderr).contains("config hash"));
}

#[test]
fn sample_scenario_writes_wellformed_mask() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sample.toml",
        r#"
scenario = "sample"
seed = 3

[dictionary]
kind = "line-blocks"
dim = 4

[sample]
m = 3
"#,
    );
    let out_dir = dir.path().join("out");
    assert!(
        blockcs(&["sample", &config, "--output-dir", out_dir.to_str().unwrap()])
            .status
            .success()
    );
    let pgm = std::fs::read_to_string(out_dir.join("mask.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
    assert!(pgm.contains("4 4\n255\n"));
    let data_lines: Vec<&str> = pgm.lines().skip_while(|l| *l != "255").skip(1).collect();
    assert_eq!(data_lines.len(), 4);
    for line in data_lines {
        for v in line.split_whitespace() {
            assert!(v == "0" || v == "255", "unexpected pixel {v}");
        }
    }
    // Drawn lines cover whole grid rows: each mask row is all-0 or all-255.
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sample.json")).unwrap())
            .unwrap();
    assert_eq!(json["report"]["m"], 3);
    assert_eq!(json["report"]["drawn_indices"].as_array().unwrap().len(), 3);
}

#[test]
fn identify_line_class_flags_deficient_block_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "identify.toml",
        r#"
scenario = "identify"
seed = 9

[dictionary]
kind = "line-blocks"
dim = 16

[identify]
s = 5
mode = "exhaustive"
m = 9
class = "line-class"
"#,
    );
    let out_dir = dir.path().join("out");
    assert!(blockcs(&[
        "identify",
        &config,
        "--output-dir",
        out_dir.to_str().unwrap()
    ])
    .status
    .success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("identify.json")).unwrap())
            .unwrap();
    assert_eq!(json["report"]["report"]["identifiable"], false);
    assert_eq!(json["report"]["report"]["conclusive"], true);
    assert!(json["report"]["report"]["witness"].is_object());
}
