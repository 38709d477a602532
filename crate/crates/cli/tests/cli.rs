use std::path::Path;
use std::process::{Command, Output};

fn sainet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sainet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("SAINET_THREADS")
        .output()
        .expect("spawn sainet")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
schema_version = 1
seed = 3
crop_size = 32
samples = 8
test_samples = 4
batch_size = 4
epochs = 1

[dataset.synthetic]
count = 4
width = 48
height = 48

[network]
depth = 2
base_channels = 8
"#;

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sainet(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(sainet(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sainet(&[], dir.path()).status.code(), Some(1));
    assert_eq!(sainet(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(sainet(&["eval", "--scope", "partial"], dir.path()).status.code(), Some(1));
    assert_eq!(sainet(&["train", "--seed", "abc"], dir.path()).status.code(), Some(1));

    std::fs::write(dir.path().join("bad.toml"), "schema_version = 1\ncrop_size = 100\n").unwrap();
    let o = sainet(&["--config", "bad.toml", "maskbank"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("crop_size"), "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_sainet"))
        .args(["maskbank"])
        .current_dir(dir.path())
        .env("SAINET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = sainet(&["--config", "nowhere/run.toml", "maskbank"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere/run.toml"), "{}", stderr(&o));
}

#[test]
fn missing_data_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TINY).unwrap();
    let o = sainet(&["--config", "run.toml", "eval", "--checkpoint", "ghost.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("ghost.ckpt"), "{}", stderr(&o));

    let o = sainet(&["--config", "run.toml", "infer", "--checkpoint", "ghost.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("ghost.ckpt"), "{}", stderr(&o));
}

#[test]
fn nonfinite_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace("epochs = 1\n", "epochs = 1\nlearning_rate = 1e300\n");
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    for cmd in [&["maskbank"][..], &["datagen"]] {
        let mut args = vec!["--config", "run.toml", "--deterministic"];
        args.extend_from_slice(cmd);
        assert_eq!(sainet(&args, dir.path()).status.code(), Some(0));
    }
    let o = sainet(&["--config", "run.toml", "--deterministic", "train"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn full_pipeline_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), TINY).unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "run.toml", "--deterministic"];
        all.extend_from_slice(args);
        let o = sainet(&all, d);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["maskbank"]);
    run(&["datagen"]);
    run(&["datagen", "--split", "test"]);
    run(&["train"]);
    assert!(d.join("runs/checkpoints/epoch_001.ckpt").is_file());
    assert!(d.join("runs/checkpoints/latest.ckpt").is_file());
    let log = std::fs::read_to_string(d.join("runs/train_log.txt")).unwrap();
    assert!(log.lines().next().unwrap().starts_with("epoch step total"));

    let out = run(&["infer", "--output", "out"]);
    assert!(out.contains("4 images"), "{out}");
    assert_eq!(std::fs::read_dir(d.join("out")).unwrap().count(), 4);

    let full = run(&["eval"]);
    assert!(full.contains("psnr"), "{full}");
    let synth = run(&["eval", "--scope", "synthesis"]);
    assert!(synth.contains("synthesis"), "{synth}");
    assert!(d.join("runs/eval/summary.json").is_file());

    run(&["--seed", "4", "datagen", "--square-masks"]);
}
