use std::path::Path;
use std::process::{Command, Output};

/// Run `volsr` in `dir` with whitespace-separated `args`.
fn volsr(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volsr"))
        .current_dir(dir)
        .env_remove("VOLSR_OUTPUT_DIR")
        .args(args.split_whitespace())
        .output()
        .expect("spawn volsr")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = volsr(dir, args);
    assert!(
        out.status.success(),
        "{args} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_category(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("stderr is one JSON object");
    v["error"].as_str().unwrap().to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn small_pipeline(dir: &Path) {
    ok(dir, "simulate --seed 1 --n 2 --dims 16,16,16 --bars");
    for (plane, seed) in [("in-plane", 2), ("through-plane", 3)] {
        ok(
            dir,
            &format!("train --seed {seed} --data dataset --plane {plane} --iterations 20 --patch-size 16"),
        );
    }
}

#[test]
fn simulate_writes_requested_pairs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), "simulate --seed 5 --n 2 --dims 8,8,8");
    let m = read_json(&dir.path().join("dataset/dataset.json"));
    assert_eq!(m["pairs"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("dataset/pair_001_lr.raw").exists());
    assert!(!dir.path().join("dataset/phantom.json").exists());
}

#[test]
fn infer_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pipeline(d);
    let infer = |threads: usize, out: &str| {
        ok(
            d,
            &format!(
                "--threads {threads} infer --seed 9 --input dataset/bars_lr --in-plane in-plane.ckpt \
                 --through-plane through-plane.ckpt --steps 8 --out {out}"
            ),
        );
        std::fs::read(d.join(out).with_extension("raw")).unwrap()
    };
    assert_eq!(infer(1, "a"), infer(2, "b"));

    let run = read_json(&d.join("a.run.json"));
    assert_eq!(run["results"]["sweeps"], 8);
    assert_eq!(run["results"]["denoiser_calls"], 8 * 32);
}

#[test]
fn eval_of_reference_against_itself_is_unity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "simulate --seed 1 --n 1 --dims 8,8,8 --bars");
    let table = ok(
        d,
        "eval-mtf --phantom-manifest dataset/phantom.json --reference dataset/bars_hr \
         --inputs dataset/bars_hr dataset/bars_lr --labels hr lr",
    );
    assert!(table.contains("frequency,hr,lr"));
    let csv = std::fs::read_to_string(d.join("mtf/through-plane/mtf_hr.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let m: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((m - 1.0).abs() < 1e-12, "{line}");
    }
    let lr = std::fs::read_to_string(d.join("mtf/in-plane/mtf_lr.csv")).unwrap();
    let first: f64 = lr.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(first < 1.0);
}

#[test]
fn exit_codes_follow_categories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = volsr(d, "simulate --seed 1 --bogus");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_category(&out), "usage");

    let out = volsr(d, "infer --seed 1 --input nothing");
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_category(&out), "missing-input");

    std::fs::write(d.join("bad.toml"), "[train]\nlearning_rat = 1.0\n").unwrap();
    let out = volsr(d, "--config bad.toml simulate --seed 1");
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_category(&out), "config");

    let out = volsr(d, "simulate --seed 1 --dims 8,8");
    assert_eq!(out.status.code(), Some(4));

    ok(d, "simulate --seed 1 --n 1 --dims 8,8,8");
    let raw = d.join("dataset/pair_000_lr.raw");
    let mut bytes = std::fs::read(&raw).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&raw, bytes).unwrap();
    let out = volsr(d, "train --seed 1 --data dataset --plane in-plane --patch-size 8");
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(error_category(&out), "format");
}

#[test]
fn failed_commands_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, "simulate --seed 1 --n 1 --dims 8,8,8");
    let out = volsr(d, "infer --seed 1 --input dataset/pair_000_lr --mode xyz-all --out sr");
    assert_eq!(out.status.code(), Some(4));
    let out = volsr(
        d,
        "train --seed 1 --data dataset --plane in-plane --patch-size 64 --out n.ckpt",
    );
    assert_eq!(out.status.code(), Some(4));
    let mut left: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
    left.sort();
    assert_eq!(left, ["dataset"]);
}

#[test]
fn version_reports_formats() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), "version");
    assert!(text.contains("volume format volsr-volume v1"));
}
