use std::path::Path;
use std::process::{Command, Output};

fn matnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TOY: &str = "\
d_model = 16
heads = 2
layers = 1
ffn_dim = 64
epochs = 3
batch_size = 8
synth_days = 30
boundary = 2012-05-24
pv_csv = \"pv.csv\"
weather_csv = \"weather.csv\"
";

/// A temp dir holding synthetic CSVs, a toy config and a trained checkpoint.
fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    for cmd in ["synth", "train"] {
        let o = matnet(&[cmd, "--config", "toy.toml"], dir.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    dir
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = matnet(&["train", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = matnet(&["nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        "--config",
        "--seed",
        "--pv-csv",
        "--weather-csv",
        "--checkpoint",
        "--out",
        "--encoder",
        "--interpolation",
        "--ablate-pv",
        "--ablate-hw",
        "--ablate-fw",
        "--daylight-only",
        "--epochs",
        "--stride",
    ];
    for sub in [
        "synth",
        "train",
        "evaluate",
        "ablate",
        "predict",
        "gradcheck",
        "plot",
    ] {
        let o = matnet(&[sub, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{sub}");
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn misspelled_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "epochz = 3\n").unwrap();
    let o = matnet(&["synth", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn missing_data_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = matnet(
        &[
            "train",
            "--pv-csv",
            "absent.csv",
            "--weather-csv",
            "absent.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = matnet(&["train"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(1),
        "no data paths is a configuration error"
    );
}

#[test]
fn synth_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str| std::fs::read(dir.path().join(sub).join("pv.csv")).unwrap();
    for (out, seed) in [("a", "4"), ("b", "4"), ("c", "5")] {
        let o = matnet(
            &["synth", "--days", "3", "--seed", seed, "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn train_evaluate_predict_plot() {
    let dir = trained();
    let d = dir.path();
    let history = std::fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch,train_mse,val_mse,lr"));

    let o = matnet(&["evaluate", "--config", "toy.toml", "--daylight-only"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("day_id,rmse,mae,wmape,mase"));
    assert!(metrics.lines().count() >= 2);
    assert!(stdout(&o).contains("MASE"));

    let o = matnet(
        &["predict", "--config", "toy.toml", "--day", "2012-05-26"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows[0].starts_with("2012-05-26T01:00:00,"));
    assert!(rows.iter().all(|r| {
        let v: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        v > 0.0 && v < 1.0
    }));

    let o = matnet(
        &[
            "plot",
            "--config",
            "toy.toml",
            "--rank",
            "best",
            "--rank-by",
            "rmse",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let path = stdout(&o).trim().to_string();
    let plot = std::fs::read_to_string(d.join(path)).unwrap();
    assert_eq!(plot.lines().count(), 25);
    assert!(plot.starts_with("hour,actual,forecast,previous_day"));

    let o = matnet(&["plot", "--config", "toy.toml"], d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablation_flags_change_the_forecast() {
    let dir = trained();
    let d = dir.path();
    let run = |extra: &[&str]| {
        let mut args = vec!["predict", "--config", "toy.toml"];
        args.extend_from_slice(extra);
        let o = matnet(&args, d);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_ne!(run(&[]), run(&["--ablate-fw"]));
    let o = matnet(
        &[
            "predict",
            "--config",
            "toy.toml",
            "--ablate-pv",
            "--ablate-hw",
            "--ablate-fw",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = trained();
    let d = dir.path();
    let path = d.join("model.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let o = matnet(&["evaluate", "--config", "toy.toml"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}
