use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn age2hie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_age2hie"))
        .args(args)
        .env_remove("AGE2HIE_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = age2hie(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit status 1 with exactly one diagnostic line and no panic output.
fn fails(args: &[&str]) -> String {
    let out = age2hie(args);
    assert_eq!(out.status.code(), Some(1), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("age2hie: ") && !err.contains("panicked"), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("volumes")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() && path.file_name().unwrap() != "run_config.txt" {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((name, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synthetic_cohort_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth-hie", "--n", "40", "--dims", "16", "--seed", "7", "--out", s(dir)]);
    }
    let files = tree(&a);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".vol3")).count(), 40);
    assert!(files.iter().any(|(n, _)| n == "manifest.csv"));
    assert_eq!(files, tree(&b));
    let config = fs::read_to_string(a.join("run_config.txt")).unwrap();
    assert!(config.contains("command=synth-hie\n") && config.contains("n_hie=40\n"));
}

#[test]
fn user_errors_exit_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let err = fails(&["refine", "--pretrained", "missing.a2h", "--out", s(&out)]);
    assert!(err.contains("missing.a2h"), "{err}");
    assert!(!out.exists(), "nothing is written when inputs are missing");

    fails(&["pretrain", "--no-such-flag", "1"]);
    fails(&["synth-hie", "--n", "7", "--out", s(&out)]);
    assert!(!out.exists());
    fails(&["synth-age", "--n", "4"]);
    fails(&["cross-validate", "--arm", "transfer", "--out", s(&out)]);
    fails(&["inspect-checkpoint", "--checkpoint", s(&tmp.path().join("none.a2h"))]);

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "width=8\nwidth=16\n").unwrap();
    let err = fails(&["synth-age", "--config", s(&bad), "--out", s(&out)]);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn output_root_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_age2hie"))
        .args(["synth-age", "--n", "2", "--dims", "8"])
        .env("AGE2HIE_OUT", tmp.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(tmp.path().join("manifest.csv").exists());
}

fn report_body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("# out="))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn pipeline_composes_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |n: &str| tmp.path().join(n);
    let small = ["--dims", "16", "--width", "8"];

    ok(&["synth-age", "--n", "16", "--dims", "16", "--seed", "1", "--out", s(&dir("age"))]);
    ok(&["synth-hie", "--n", "20", "--dims", "16", "--seed", "2", "--out", s(&dir("hie"))]);
    let age = dir("age").join("manifest.csv");
    let hie = dir("hie").join("manifest.csv");

    let pre = dir("pre");
    let mut args = vec!["pretrain", "--age-manifest", s(&age), "--pretrain-epochs", "1", "--out", s(&pre)];
    args.extend(small);
    let printed = String::from_utf8(ok(&args).stdout).unwrap();
    assert!(printed.contains("stage=pretrained"));
    let ck = pre.join("pretrained.a2h");

    let info = String::from_utf8(ok(&["inspect-checkpoint", "--checkpoint", s(&ck)]).stdout).unwrap();
    assert!(info.contains("stage=pretrained") && info.contains("width=8"), "{info}");

    let cv = dir("cv");
    let mut args = vec![
        "cross-validate", "--arm", "transfer", "--pretrained", s(&ck), "--hie-manifest", s(&hie),
        "--k", "5", "--seed", "3", "--refine-epochs", "1", "--finetune-epochs", "1", "--out", s(&cv),
    ];
    args.extend(small);
    ok(&args);
    let report = report_body(&cv.join("report.txt"));
    let rows: Vec<&str> = report.lines().filter(|l| l.starts_with("fold=")).collect();
    assert_eq!(rows.len(), 6, "{report}");
    assert!(rows[5].starts_with("fold=aggregate acc="));
    assert!(report.contains("# arm=transfer protocol=same-site"));

    // the recorded configuration replays the run
    let recorded = cv.join("run_config.txt");
    ok(&["cross-validate", "--config", s(&recorded), "--out", s(&dir("cv2"))]);
    assert_eq!(report_body(&dir("cv2").join("report.txt")), report);

    ok(&["refine", "--pretrained", s(&ck), "--hie-manifest", s(&hie), "--refine-epochs", "1", "--out", s(&dir("ref"))]);
    let refined = dir("ref").join("refined.a2h");
    ok(&["predict", "--checkpoint", s(&refined), "--hie-manifest", s(&hie), "--out", s(&dir("pred"))]);
    let csv = fs::read_to_string(dir("pred").join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,class,probability"));
    assert_eq!(csv.lines().count(), 21);

    // finetune refuses a pretrained checkpoint
    let err = fails(&["finetune", "--checkpoint", s(&ck), "--hie-manifest", s(&hie), "--out", s(&dir("ft"))]);
    assert!(err.contains("pretrained"), "{err}");
}
