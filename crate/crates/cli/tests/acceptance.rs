//! End-to-end checks of the `efcxr` binary: full-pipeline determinism,
//! exit-code conventions, and the conditional licensed-dataset pathway.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn efcxr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efcxr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

const PIPELINE_CONFIG: &str = r#"
run_id = "det"
seed = 19

[cohort.synthetic]
n = 60
class_signal = 1.0

[model]
backbone = "tiny_conv"
pretrained = "none"
input_size = [32, 32]

[train]
initial_lr = 0.03
max_epochs = 3
batch_size = 16

[explain]
k = 2
"#;

fn run_pipeline(root: &Path) -> PathBuf {
    write_config(root, PIPELINE_CONFIG);
    for stage in ["cohort-build", "split", "train", "evaluate", "explain"] {
        let out = efcxr(root, &[stage, "--config", "run.toml"]);
        assert!(
            out.status.success(),
            "{stage} failed:\n{}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    root.join("out/det")
}

#[test]
fn full_pipeline_is_deterministic_across_runs() {
    let t0 = std::time::Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = run_pipeline(a.path());
    let run_b = run_pipeline(b.path());

    for file in [
        "split.csv",
        "history.csv",
        "metrics.json",
        "predictions.csv",
        "figures/selection.json",
        "manifest.csv",
    ] {
        let left = fs::read(run_a.join(file)).unwrap();
        let right = fs::read(run_b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
    // Attribution figures must also be byte-identical.
    let mut maps = Vec::new();
    for group in ["correct", "false_positive", "false_negative"] {
        let dir = run_a.join("figures").join(group);
        if !dir.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&dir).unwrap() {
            let name = entry.unwrap().file_name();
            maps.push(format!("figures/{group}/{}", name.to_string_lossy()));
        }
    }
    assert!(!maps.is_empty());
    for rel in &maps {
        assert_eq!(
            fs::read(run_a.join(rel)).unwrap(),
            fs::read(run_b.join(rel)).unwrap(),
            "{rel} differs between identical runs"
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "pipeline pair took {elapsed:.0}s");
    println!(
        "[PASS] full synthetic pipeline twice -> identical split/history/metrics/selection/figures ({elapsed:.1}s)"
    );
}

#[test]
fn split_same_seed_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), PIPELINE_CONFIG);
    let out = efcxr(dir.path(), &["cohort-build", "--config", "run.toml"]);
    assert!(out.status.success());
    assert!(efcxr(dir.path(), &["split", "--config", "run.toml"]).status.success());
    let first = fs::read(dir.path().join("out/det/split.csv")).unwrap();
    assert!(efcxr(dir.path(), &["split", "--config", "run.toml"]).status.success());
    let second = fs::read(dir.path().join("out/det/split.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn synthetic_overrides_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), PIPELINE_CONFIG);
    let out = efcxr(
        dir.path(),
        &[
            "cohort-build",
            "--config",
            "run.toml",
            "--synthetic",
            "n=80",
            "seed=7",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("out/det/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 81, "header + 80 records");
}

#[test]
fn usage_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // Missing ICD map file, named in the message.
    let source_config = r#"
run_id = "src"
[cohort.source]
metadata_csv = "meta.csv"
icd_map = "no-such-map.csv"
image_root = "images"
[model]
backbone = "tiny_conv"
pretrained = "none"
input_size = [32, 32]
"#;
    fs::write(dir.path().join("meta.csv"), "study_id,patient_id,image_ref,icd_codes,age,sex,race_ethnicity\n").unwrap();
    write_config(dir.path(), source_config);
    let out = efcxr(dir.path(), &["cohort-build", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-map.csv"));

    // Fractions that do not sum to one.
    let bad_fractions = format!("{PIPELINE_CONFIG}\n[split]\ntrain_fraction = 0.9\n");
    write_config(dir.path(), &bad_fractions);
    let out = efcxr(dir.path(), &["split", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown config key fails before any side effect.
    let unknown_key = format!("{PIPELINE_CONFIG}\nbogus = true\n");
    write_config(dir.path(), &unknown_key);
    let out = efcxr(dir.path(), &["cohort-build", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/det/manifest.csv").exists());

    // Stage run before its inputs exist.
    write_config(dir.path(), PIPELINE_CONFIG);
    let out = efcxr(dir.path(), &["evaluate", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing config file.
    let out = efcxr(dir.path(), &["train", "--config", "nope.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn explain_with_k_1_renders_groups_that_exist() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = run_pipeline(dir.path());
    let out = efcxr(
        dir.path(),
        &[
            "explain",
            "--config",
            "run.toml",
            "--k",
            "1",
            "--methods",
            "saliency",
        ],
    );
    assert!(out.status.success());
    let selection: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("figures/selection.json")).unwrap())
            .unwrap();
    for group in ["correct", "false_positive", "false_negative"] {
        let cases = selection[group].as_array().unwrap();
        assert!(cases.len() <= 1);
        for case in cases {
            let study = case["study_id"].as_str().unwrap();
            let figure = run_dir
                .join("figures")
                .join(group)
                .join(format!("{study}.saliency.png"));
            assert!(figure.is_file(), "{}", figure.display());
        }
    }
}

/// Licensed-dataset pathway: only meaningful where the restricted-access
/// imaging archive and clinical records are present locally. Point the
/// three environment variables at them and run with `--ignored`.
#[test]
#[ignore = "requires locally licensed clinical dataset"]
fn licensed_dataset_cohort_matches_reference_counts() {
    let metadata = std::env::var("EFCXR_DATASET_METADATA").expect("EFCXR_DATASET_METADATA");
    let icd_map = std::env::var("EFCXR_DATASET_ICD_MAP").expect("EFCXR_DATASET_ICD_MAP");
    let image_root = std::env::var("EFCXR_DATASET_IMAGE_ROOT").expect("EFCXR_DATASET_IMAGE_ROOT");
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"
run_id = "clinical"
[cohort.source]
metadata_csv = "{metadata}"
icd_map = "{icd_map}"
image_root = "{image_root}"
[model]
backbone = "resnet50"
pretrained = "none"
input_size = [224, 224]
"#
    );
    write_config(dir.path(), &config);
    let out = efcxr(dir.path(), &["cohort-build", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("out/clinical/manifest.csv")).unwrap();
    let records = manifest.lines().count() - 1;
    assert_eq!(records, 3488, "expected the reference cohort size");
    let reduced = manifest.lines().filter(|l| l.contains(",reduced,")).count();
    let preserved = manifest.lines().filter(|l| l.contains(",preserved,")).count();
    assert_eq!((reduced, preserved), (2010, 1478));
    // Downstream per-class F1 comparison against the published augmented
    // backbone run is best-effort: train with `--arch resnet50
    // --augment on`, evaluate, and compare metrics.json to the published
    // 0.62 / 0.75 within +-0.10.
}
