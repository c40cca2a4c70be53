use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memseeker"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

/// A small run config writing under `dir`.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    let text = format!(
        "model.d_model = 8\n\
         model.n_heads = 2\n\
         model.mlp_hidden = 16\n\
         model.seg_len = 8\n\
         model.max_position = 512\n\
         train.steps = 4\n\
         train.batch_size = 2\n\
         task.t_min = 12\n\
         task.t_max = 24\n\
         task.train_size = 8\n\
         task.val_size = 4\n\
         task.test_size = 4\n\
         eval.niah_lengths = 16, 32\n\
         eval.niah_depths = 0, 1\n\
         eval.niah_trials = 2\n\
         paths.out_dir = {out}\n\
         paths.checkpoint = {out}/checkpoint.bin\n",
        out = dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn score_miou_prints_fixture_table() {
    let out = ok(bin()
        .args(["score-miou", "--pred"])
        .arg(fixture("pred.txt"))
        .arg("--gt")
        .arg(fixture("gt.txt"))
        .output()
        .unwrap());
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("theta,mean_miou,n"));
    let rows: Vec<(f64, f64, usize)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let expected = [(5.0, 61.0 / 150.0), (10.0, 0.6), (15.0, 0.7)];
    assert_eq!(rows.len(), 3);
    for ((theta, mean, n), (et, em)) in rows.into_iter().zip(expected) {
        assert_eq!((theta, n), (et, 5));
        assert!((mean - em).abs() < 1e-12, "theta {theta}: {mean} vs {em}");
    }
}

#[test]
fn score_miou_counts_unreadable_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("p.txt"), dir.path().join("g.txt"));
    fs::write(&pred, "3\nnot-a-number\n").unwrap();
    fs::write(&gt, "3\n8\n").unwrap();
    let out = ok(bin().arg("score-miou").arg("--pred").arg(&pred).arg("--gt").arg(&gt).args(["--theta", "1"]).output().unwrap());
    assert!(out.contains("1,0.5,2"), "{out}");
    assert!(out.contains("# 1 predictions had unreadable timestamps"), "{out}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_override_fails_with_message() {
    let o = bin().args(["profile", "--set", "model.alpah=8", "--lengths", "64"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.alpah"));
}

#[test]
fn profile_honours_set_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |alpha: &str| {
        ok(bin()
            .arg("profile")
            .arg("--config")
            .arg(&cfg)
            .args(["--set", &format!("model.alpha={alpha}"), "--lengths", "64"])
            .output()
            .unwrap())
    };
    // 8 segments of 8 frames: 4 memory rows each at alpha 2, 1 at alpha 8.
    let p_final = |text: &str| text.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_eq!(p_final(&run("2")), "32");
    assert_eq!(p_final(&run("8")), "8");
    assert!(dir.path().join("out/profile.csv").exists());
}

#[test]
fn train_then_evaluate_inspect_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");

    ok(bin().arg("train").arg("--config").arg(&cfg).output().unwrap());
    for f in ["checkpoint.bin", "train_log.csv", "eval_log.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(), 5);

    ok(bin().arg("eval").arg("--config").arg(&cfg).output().unwrap());
    let eval = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(eval.starts_with("task,n,accuracy\nneedle,4,"), "{eval}");

    let text = ok(bin().arg("niah").arg("--config").arg(&cfg).output().unwrap());
    assert!(text.starts_with("depth\\length,16,32\n"));
    assert!(fs::read_to_string(out.join("niah.csv")).unwrap().starts_with("depth\\length,16,32\n"));
    let svg = fs::read_to_string(out.join("niah.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 4);

    let info = ok(bin().arg("inspect-ckpt").arg("--config").arg(&cfg).output().unwrap());
    assert!(info.contains("d_model 8"), "{info}");
    assert!(info.contains("optimizer: 4 steps taken"), "{info}");
    assert!(info.contains("train.steps = 4"), "{info}");
}

#[test]
fn corrupted_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    fs::write(&path, b"not a checkpoint").unwrap();
    let o = bin().arg("inspect-ckpt").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}
