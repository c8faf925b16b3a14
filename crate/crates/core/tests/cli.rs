mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::bin_path;

fn run(dir: &Path, cmd: &str) -> Output {
    Command::new(bin_path())
        .args(cmd.split_whitespace())
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, cmd: &str) {
    let out = run(dir, cmd);
    assert!(
        out.status.success(),
        "{cmd}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn cohort(dir: &Path) {
    ok(
        dir,
        "phantom --n-adult 5 --n-pediatric 5 --out ph --split 0.6,0.1,0.3",
    );
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), "phantom --bogus").status.code(), Some(2));
    assert_eq!(
        run(d.path(), "resample --in a --out b").status.code(),
        Some(2)
    );
    assert!(run(d.path(), "eval --help").status.success());
}

#[test]
fn validation_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    let bad_p = run(d, "plan --manifest ph/manifest.json --kind cl --p 1.5");
    assert_eq!(bad_p.status.code(), Some(2));
    let missing = run(d, "plan --manifest nowhere.json --kind adult");
    assert_eq!(missing.status.code(), Some(1));
    let bad_split = run(
        d,
        "phantom --n-adult 2 --n-pediatric 2 --out x --split 0.5,0.5",
    );
    assert_eq!(bad_split.status.code(), Some(2));
}

#[test]
fn eval_names_the_mismatched_case() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    std::fs::create_dir(d.join("pred")).unwrap();
    for entry in std::fs::read_dir(d.join("ph/labels")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), d.join("pred").join(entry.file_name())).unwrap();
    }
    ok(
        d,
        "eval --pred-dir pred --gt-dir ph/labels --manifest ph/manifest.json --out perfect.csv",
    );
    let csv = std::fs::read_to_string(d.join("perfect.csv")).unwrap();
    let defined = csv.lines().skip(1).filter(|l| l.ends_with(",1"));
    assert!(defined.into_iter().all(|l| l.contains(",1,1,")));

    ok(
        d,
        "resample --in ph/labels/A002.nii.gz --out pred/A002.nii.gz --scale 1.5 --label",
    );
    let out = run(
        d,
        "eval --pred-dir pred --gt-dir ph/labels --manifest ph/manifest.json",
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("A002"));
}

#[test]
fn train_predict_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    ok(
        d,
        "plan --manifest ph/manifest.json --kind adult --epochs 5 --out adult.json",
    );
    ok(
        d,
        "train --plan adult.json --manifest ph/manifest.json --out model",
    );
    for f in ["final.json", "stage1.json", "loss.csv"] {
        assert!(d.join("model").join(f).exists(), "missing {f}");
    }
    for entry in std::fs::read_dir(d.join("ph/images")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        let base = format!("predict --model model/final.json --in ph/images/{name}");
        ok(d, &format!("{base} --out direct/{name}"));
        ok(d, &format!("{base} --out da/{name} --da-factor 1.5"));
    }
    for m in ["direct", "da"] {
        ok(d, &format!(
            "eval --pred-dir {m} --gt-dir ph/labels --manifest ph/manifest.json --split test --out m/{m}.csv"
        ));
    }
    ok(d, "report --metrics m/direct.csv m/da.csv --manifest ph/manifest.json --out table.md --per-age ages.csv");
    let table = std::fs::read_to_string(d.join("table.md")).unwrap();
    assert!(table.starts_with("| Method | 0-3 |"));
    assert!(table.contains("| direct |") && table.contains("| da |"));
    let ages = std::fs::read_to_string(d.join("ages.csv")).unwrap();
    assert!(ages.starts_with("case_id,age_years,bin,mean_dsc,mean_nsd,method"));
    ok(d, "report --metrics m/direct.csv --manifest ph/manifest.json --format csv --micro --out table.csv");
    let csv = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert!(csv.starts_with("method,bin,"));
}

#[test]
fn remap_applies_a_merge_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cohort(d);
    std::fs::write(
        d.join("merge.csv"),
        "0,0\n1,5\n2,5\n3,3\n4,4\n5,5\n6,6\n7,7\n8,8\n",
    )
    .unwrap();
    ok(
        d,
        "remap --mapping merge.csv --in ph/labels/A000.nii.gz --out merged.nii.gz",
    );
    let hist = |f: &str| pedseg::io::read_label(d.join(f)).unwrap().histogram();
    let (before, after) = (hist("ph/labels/A000.nii.gz"), hist("merged.nii.gz"));
    assert_eq!(after[5], before[1] + before[2] + before[5]);
    assert_eq!(after[1] + after[2], 0);
}

#[test]
fn seeded_commands_repeat_byte_for_byte() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let d = dir.path();
        ok(
            d,
            "--seed 3 phantom --n-adult 4 --n-pediatric 4 --out ph --split 0.5,0.25,0.25",
        );
        ok(d, "--seed 3 plan --manifest ph/manifest.json --kind sequential --stage1-epochs 2 --stage2-epochs 2");
        ok(
            d,
            "--seed 3 train --plan plan.json --manifest ph/manifest.json",
        );
    }
    let files = [
        "ph/manifest.json",
        "ph/images/P001.nii.gz",
        "ph/labels/A003.nii.gz",
        "plan.json",
        "model/final.json",
        "model/loss.csv",
    ];
    for f in files {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}
