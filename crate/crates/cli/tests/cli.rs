use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
[sim]
horizon = 40
[train]
n1 = 2
fault_levels = [0.0, 1.0]
window_len = 10
onset_step = 20
window_stride = 2
batch_size = 16
max_epochs = 3
min_epochs = 1
[train.architecture.lstm]
hidden = 4
head = [4]
[eval]
n_test_traj = 2
onset_step = 20
fault_levels = [0.0, 0.5, 1.0]
"#;

fn quadfdi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadfdi")).current_dir(dir).args(args).output().expect("spawn quadfdi")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn help_and_usage_errors() {
    let dir = setup();
    assert_eq!(code(&quadfdi(dir.path(), &["--help"])), 0);
    assert_eq!(code(&quadfdi(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&quadfdi(dir.path(), &["train"])), 1);
    assert_eq!(code(&quadfdi(dir.path(), &["train", "--scale", "huge", "--out", "x"])), 1);
    fs::write(dir.path().join("bad.toml"), "[train]\nno_such_key = 1\n").unwrap();
    assert_eq!(code(&quadfdi(dir.path(), &["train", "--config", "bad.toml", "--out", "x"])), 1);
    assert_eq!(code(&quadfdi(dir.path(), &["train", "--config", "missing.toml", "--out", "x"])), 3);
}

#[test]
fn gen_data_is_reproducible_and_balanced() {
    let dir = setup();
    let p = dir.path();
    for out in ["a.qfd", "b.qfd"] {
        assert_eq!(code(&quadfdi(p, &["gen-data", "--config", "tiny.toml", "--out", out])), 0);
    }
    assert_eq!(fs::read(p.join("a.qfd")).unwrap(), fs::read(p.join("b.qfd")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(p.join("a.qfd.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["rollouts"], 4);
    assert_eq!(m["rollouts_per_level"], serde_json::json!([2, 2]));
    assert_eq!(m["seed"], 3);
    assert_eq!(code(&quadfdi(p, &["gen-data", "--config", "tiny.toml", "--seed", "4", "--out", "c.qfd"])), 0);
    assert_ne!(fs::read(p.join("a.qfd")).unwrap(), fs::read(p.join("c.qfd")).unwrap());
}

#[test]
fn train_writes_checkpoint_and_one_loss_row_per_epoch() {
    let dir = setup();
    let p = dir.path();
    let out = quadfdi(p, &["train", "--config", "tiny.toml", "--out", "m.ckpt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loss = fs::read_to_string(p.join("m.ckpt.loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss,buffer_size,dropped,learning_rate"));
    assert_eq!(lines.count(), 3);

    assert_eq!(code(&quadfdi(p, &["gen-data", "--config", "tiny.toml", "--out", "d.qfd"])), 0);
    assert_eq!(code(&quadfdi(p, &["train", "--config", "tiny.toml", "--dataset", "d.qfd", "--out", "n.ckpt"])), 0);
    assert!(p.join("n.ckpt").exists());
}

#[test]
fn non_finite_training_exits_with_numeric_code_and_dump() {
    let dir = setup();
    let p = dir.path();
    fs::write(p.join("hot.toml"), format!("{TINY}\n").replace("min_epochs = 1", "min_epochs = 1\nlearning_rate = inf"))
        .unwrap();
    let out = quadfdi(p, &["train", "--config", "hot.toml", "--out", "h.ckpt"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("h.ckpt.failure.json").exists());
    assert!(!p.join("h.ckpt").exists());
}

#[test]
fn eval_reports_carry_the_checkpoint_hash() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(code(&quadfdi(p, &["train", "--config", "tiny.toml", "--out", "m.ckpt"])), 0);
    let unknown = quadfdi(p, &["eval", "--config", "tiny.toml", "--checkpoint", "m.ckpt", "--experiment", "fig-7", "--out", "r"]);
    assert_eq!(code(&unknown), 1);

    let out = quadfdi(p, &["eval", "--config", "tiny.toml", "--checkpoint", "m.ckpt", "--experiment", "rotation-cases", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let hash = {
        use sha2::Digest;
        hex::encode(sha2::Sha256::digest(fs::read(p.join("m.ckpt")).unwrap()))
    };
    let csv_path = p.join(format!("r/rotation-cases-{}.csv", &hash[..12]));
    let text = fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.iter().all(|r| r.contains(&hash)));
    let motors: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.split(',').nth(7).unwrap()).collect();
    assert_eq!(motors.len(), 5, "four faulty-motor curves plus no-fault");
    assert!(p.join(format!("r/rotation-cases-{}.json", &hash[..12])).exists());

    fs::write(p.join("junk.ckpt"), b"TNETCKPT garbage").unwrap();
    let corrupt = quadfdi(p, &["eval", "--config", "tiny.toml", "--checkpoint", "junk.ckpt", "--experiment", "rotation-cases", "--out", "r"]);
    assert_eq!(code(&corrupt), 3);
}

#[test]
fn compare_concatenates_one_experiment_only() {
    let dir = setup();
    let p = dir.path();
    for (seed, name) in [("1", "a.ckpt"), ("2", "b.ckpt")] {
        assert_eq!(code(&quadfdi(p, &["train", "--config", "tiny.toml", "--seed", seed, "--out", name])), 0);
    }
    for ck in ["a.ckpt", "b.ckpt"] {
        let out = quadfdi(p, &["eval", "--config", "tiny.toml", "--checkpoint", ck, "--experiment", "rotation-cases", "--out", "r"]);
        assert_eq!(code(&out), 0);
    }
    let out = quadfdi(p, &["eval", "--config", "tiny.toml", "--checkpoint", "a.ckpt", "--experiment", "fault-levels", "--out", "f"]);
    assert_eq!(code(&out), 0);
    let mut reports: Vec<String> =
        fs::read_dir(p.join("r")).unwrap().map(|e| e.unwrap().path()).filter(|x| x.extension().unwrap() == "csv").map(|x| x.display().to_string()).collect();
    reports.sort();
    assert_eq!(reports.len(), 2);
    let rows = |f: &str| fs::read_to_string(f).unwrap().lines().count() - 1;
    let mut args = vec!["compare"];
    args.extend(reports.iter().map(String::as_str));
    args.extend(["--out", "merged.csv"]);
    assert_eq!(code(&quadfdi(p, &args)), 0);
    let merged = p.join("merged.csv").display().to_string();
    assert_eq!(rows(&merged), rows(&reports[0]) + rows(&reports[1]));
    let header = |f: &str| fs::read_to_string(f).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(header(&merged), header(&reports[0]));

    let fault_levels = fs::read_dir(p.join("f")).unwrap().map(|e| e.unwrap().path()).find(|x| x.extension().unwrap() == "csv").unwrap();
    let mixed = quadfdi(p, &["compare", &reports[0], &fault_levels.display().to_string(), "--out", "bad.csv"]);
    assert_eq!(code(&mixed), 1);
}
