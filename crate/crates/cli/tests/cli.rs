use std::path::Path;
use std::process::{Command, Output};

fn chordmixer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chordmixer"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

/// Value following `"key":` in a JSON line, as raw text.
fn json_field<'a>(line: &'a str, key: &str) -> &'a str {
    let pat = format!("\"{key}\":");
    let start = line.find(&pat).unwrap_or_else(|| panic!("{key} in {line}")) + pat.len();
    let rest = &line[start..];
    let end = rest.find([',', '}']).unwrap();
    &rest[..end]
}

fn toy_training(dir: &Path) {
    ok(chordmixer(&["generate", "--lambda", "8", "--count", "240", "--seed", "5", "--out", "toy.add"], dir));
    ok(chordmixer(
        &[
            "train", "--dataset", "toy.add", "--track-size", "3", "--hidden", "8", "--epochs", "2",
            "--lr", "1e-3", "--batch-size", "4", "--seed", "9", "--out", "run",
        ],
        dir,
    ));
}

#[test]
fn generate_is_deterministic_and_reports_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(chordmixer(&["generate", "--lambda", "16000", "--count", "1000", "--seed", "3", "--out", "a.add"], p));
    ok(chordmixer(&["generate", "--lambda", "16000", "--count", "1000", "--seed", "3", "--out", "b.add"], p));
    assert_eq!(std::fs::read(p.join("a.add")).unwrap(), std::fs::read(p.join("b.add")).unwrap());

    let median: f64 = out
        .split_whitespace()
        .find_map(|w| w.strip_prefix("median="))
        .unwrap()
        .parse()
        .unwrap();
    let expected = 16000.0 * 0.5f64.exp();
    assert!((median / expected - 1.0).abs() < 0.1, "median {median}");

    let zero = chordmixer(&["generate", "--lambda", "16", "--count", "0", "--out", "c.add"], p);
    assert!(!zero.status.success());
}

#[test]
fn missing_dataset_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = chordmixer(&["train", "--dataset", "nope.add"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.add"));
}

#[test]
fn config_files_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(chordmixer(&["generate", "--lambda", "8", "--count", "60", "--out", "d.add"], p));
    std::fs::write(
        p.join("run.conf"),
        "# toy run\ndataset = d.add\nhidden = 6  # small\ntrack-size = 2\nepochs = 1\nout = r1\n",
    )
    .unwrap();
    let out = ok(chordmixer(&["train", "--config", "run.conf"], p));
    assert!(out.contains(" h=6 "), "{out}");
    let out = ok(chordmixer(&["train", "--config", "run.conf", "--hidden", "5", "--out", "r2"], p));
    assert!(out.contains(" h=5 "), "{out}");
    assert!(p.join("r2/metrics.jsonl").exists() && p.join("r1/best.chmx").exists());

    std::fs::write(p.join("bad.conf"), "dataset = d.add\nhiden = 3\n").unwrap();
    let o = chordmixer(&["train", "--config", "bad.conf"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn help_lists_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(chordmixer(&["train", "--help"], dir.path()));
    for flag in [
        "--config", "--seed", "--out", "--lambda", "--count", "--track-size", "--hidden", "--lr",
        "--batch-size", "--epochs", "--n-max", "--head", "--dropout", "--eval-bins",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn eval_reproduces_logged_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    toy_training(p);
    let metrics = std::fs::read_to_string(p.join("run/metrics.jsonl")).unwrap();
    let logged = |split: &str| {
        metrics
            .lines()
            .find(|l| l.contains(&format!("\"split\":\"final/{split}\"")))
            .unwrap()
            .to_string()
    };

    let val = ok(chordmixer(&["eval", "--checkpoint", "run/best.chmx", "--dataset", "toy.add", "--split", "val"], p));
    let rec = logged("val");
    assert_eq!(json_field(&val, "loss"), json_field(&rec, "loss"));
    assert_eq!(json_field(&val, "accuracy"), json_field(&rec, "accuracy"));

    let train = ok(chordmixer(&["eval", "--checkpoint", "run/best.chmx", "--dataset", "toy.add", "--split", "train"], p));
    let got: f64 = json_field(&train, "accuracy").parse().unwrap();
    let want: f64 = json_field(&logged("train"), "accuracy").parse().unwrap();
    assert!(got >= want - 1e-9);
}

#[test]
fn training_twice_gives_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    toy_training(a.path());
    toy_training(b.path());
    let read = |d: &Path, f: &str| std::fs::read(d.join("run").join(f)).unwrap();
    assert_eq!(read(a.path(), "metrics.jsonl"), read(b.path(), "metrics.jsonl"));
    assert_eq!(read(a.path(), "last.chmx"), read(b.path(), "last.chmx"));
}

#[test]
fn resume_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    toy_training(p);
    let out = ok(chordmixer(
        &[
            "train", "--dataset", "toy.add", "--track-size", "3", "--hidden", "8", "--epochs", "3",
            "--lr", "1e-3", "--batch-size", "4", "--seed", "9", "--out", "more", "--resume", "run/last.chmx",
        ],
        p,
    ));
    let metrics = std::fs::read_to_string(p.join("more/metrics.jsonl")).unwrap();
    assert!(metrics.lines().next().unwrap().contains("\"epoch\":2"), "{out}");
}

#[test]
fn analyses() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(chordmixer(&["analyze", "reach-prob", "--n", "5000", "--hops", "14", "--out", "rp"], p));
    let mean: f64 = out
        .split_whitespace()
        .find_map(|w| w.strip_prefix("mean="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 2e-4).abs() < 1e-12);
    let csv = std::fs::read_to_string(p.join("rp/reach_prob.csv")).unwrap();
    assert!(csv.starts_with("target_node,probability\n"));
    assert_eq!(csv.lines().count(), 5001);

    let out = ok(chordmixer(&["analyze", "reachability", "--n", "256"], p));
    let hops: usize = out
        .split_whitespace()
        .find_map(|w| w.strip_prefix("hops="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(hops <= 8);

    let out = ok(chordmixer(&["analyze", "params", "--d", "208", "--h", "128", "--blocks", "13"], p));
    assert_eq!(out.trim(), (13 * (2 * 208 * 128 + 128 + 208)).to_string());

    let out = ok(chordmixer(&["analyze", "rank", "--d", "4", "--n", "16", "--out", "rk"], p));
    assert!(out.contains("\"full_rank\":true"));
    assert!(p.join("rk/rank.json").exists());
    let big = chordmixer(&["analyze", "rank", "--d", "8", "--n", "9"], p);
    assert!(!big.status.success());
}

#[test]
fn export_writes_one_file_per_traversed_block() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut text = String::new();
    for k in 0..12 {
        let seq: String = (0..3 + k).map(|i| if (i * 7 + k) % 3 == 0 { 'x' } else { 'y' }).collect();
        text.push_str(&format!("{}\t{seq}\n", k % 2));
    }
    std::fs::write(p.join("seqs.txt"), text).unwrap();
    ok(chordmixer(
        &[
            "train", "--dataset", "seqs.txt", "--track-size", "2", "--hidden", "4", "--epochs", "1",
            "--n-max", "6655", "--out", "run",
        ],
        p,
    ));
    let seq: String = (0..40).map(|i| if i % 3 == 0 { 'x' } else { 'y' }).collect();
    let export = |out: &str| {
        ok(chordmixer(
            &["export-activations", "--checkpoint", "run/best.chmx", "--sequence", &seq, "--out", out],
            p,
        ))
    };
    export("act1");
    export("act2");

    let mut files: Vec<_> = std::fs::read_dir(p.join("act1")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 7);
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().count(), 26, "{f:?}");
        assert!(text.lines().all(|l| l.split(',').count() == 40));
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(p.join("act2").join(name)).unwrap(), text.as_bytes());
    }

    let too_long: String = "x".repeat(7000);
    let o = chordmixer(
        &["export-activations", "--checkpoint", "run/best.chmx", "--sequence", &too_long, "--out", "act3"],
        p,
    );
    assert!(!o.status.success());
}
