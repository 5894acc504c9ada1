use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use pcae::cli::{Cli, Command as Sub, OnOff};
use pcae::io::{read_any, PointFormat};

fn pcae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcae")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pcae(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Synthesizes 10 small clouds and trains a tiny model on them.
fn fixture(dir: &Path) {
    ok(dir, &["synth", "--count", "10", "--points", "200", "--seed", "4", "--out", "ds"]);
    ok(dir, &["train", "--data", "ds", "--tier", "32", "--latent", "8", "--epochs", "2", "--progress", "0", "--out", "m.pcae"]);
}

#[test]
fn train_defaults_follow_the_published_protocol() {
    let cli = Cli::try_parse_from(["pcae", "train", "--data", "d", "--out", "m"]).unwrap();
    let Sub::Train(t) = cli.command else { panic!() };
    assert_eq!((t.lr, t.batch, t.entropy, t.epochs, t.tier), (0.0005, 8, OnOff::On, None, 2048));
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let m = fs::read_to_string(dir.path().join("m.pcae.manifest")).unwrap();
    for line in ["lr=0.0005", "batch=8", "entropy=on", "epochs=2", "tier=32", "latent=8"] {
        assert!(m.lines().any(|l| l == line), "{line} missing from\n{m}");
    }
    assert_eq!(pcae_core::training::default_epochs(false), 500);
    assert_eq!(pcae_core::training::default_epochs(true), 1200);
}

#[test]
fn synth_splits_ninety_ten_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--count", "10", "--points", "64", "--seed", "9", "--out", "a"]);
    ok(d, &["synth", "--count", "10", "--points", "64", "--seed", "9", "--out", "b"]);
    assert_eq!(fs::read_dir(d.join("a/train")).unwrap().count(), 9);
    assert_eq!(fs::read_dir(d.join("a/test")).unwrap().count(), 1);
    for split in ["train", "test"] {
        for e in fs::read_dir(d.join("a").join(split)).unwrap() {
            let p = e.unwrap().path();
            let q = d.join("b").join(split).join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(q).unwrap());
            assert_eq!(read_any(&p).unwrap().count(), 64);
        }
    }
    let c = Cli::try_parse_from(["pcae", "synth", "--out", "x"]).unwrap();
    let Sub::Synth(s) = c.command else { panic!() };
    assert_eq!(s.points, 2048);
}

#[test]
fn compress_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    // batch mode: every file of the directory
    ok(d, &["compress", "--model", "m.pcae", "--in", "ds/train", "--out", "bits"]);
    let pcc = fs::read_dir(d.join("bits")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "pcc").count();
    assert_eq!(pcc, 9);
    ok(d, &["decompress", "--model", "m.pcae", "--in", "bits", "--out", "recon"]);
    let plys: Vec<_> = fs::read_dir(d.join("recon")).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().unwrap() == "ply").collect();
    assert_eq!(plys.len(), 9);
    for p in &plys {
        assert_eq!(read_any(p).unwrap().count(), 32);
    }
    // single file, explicit text format
    let test = fs::read_dir(d.join("ds/test")).unwrap().next().unwrap().unwrap().path();
    ok(d, &["compress", "--model", "m.pcae", "--in", test.to_str().unwrap(), "--out", "one.pcc", "--tier", "32"]);
    ok(d, &["decompress", "--model", "m.pcae", "--in", "one.pcc", "--out", "one.txt", "--format", "xyz"]);
    assert_eq!(pcae::io::read_point_cloud(&d.join("one.txt"), PointFormat::Xyz).unwrap().count(), 32);

    // another model cannot decode the stream
    ok(d, &["train", "--data", "ds", "--tier", "32", "--latent", "8", "--epochs", "1", "--seed", "1", "--progress", "0", "--out", "other.pcae"]);
    let out = pcae(d, &["decompress", "--model", "other.pcae", "--in", "one.pcc", "--out", "x.ply"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
    assert!(!d.join("x.ply").exists());

    let out = pcae(d, &["compress", "--model", "m.pcae", "--in", test.to_str().unwrap(), "--out", "y.pcc", "--tier", "64"]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(d.join("bad.pcc"), b"PCCB\x01").unwrap();
    assert_eq!(pcae(d, &["decompress", "--model", "m.pcae", "--in", "bad.pcc", "--out", "z.ply"]).status.code(), Some(4));
    assert_eq!(pcae(d, &["compress", "--model", "missing.pcae", "--in", "ds/test", "--out", "q"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--count", "4", "--points", "300", "--out", "ds"]);
    let out = pcae(d, &["train", "--data", "ds", "--tier", "300", "--out", "m.pcae"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tier"));
    assert_eq!(pcae(d, &["train", "--data", "ds", "--out", "m.pcae", "--batch", "1"]).status.code(), Some(1));
    assert_eq!(pcae(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(pcae(d, &["synth", "--count", "x", "--out", "o"]).status.code(), Some(1));
}

#[test]
fn manifest_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    ok(d, &["compress", "--model", "m.pcae", "--in", "ds/test", "--out", "c"]);
    let first: Vec<_> = fs::read_dir(d.join("c")).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().unwrap() == "pcc").collect();
    let before: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    ok(d, &["compress", "--config", "c/compress.manifest"]);
    let after: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    // flags after --config win
    ok(d, &["train", "--config", "m.pcae.manifest", "--out", "again.pcae"]);
    assert_eq!(fs::read(d.join("m.pcae")).unwrap(), fs::read(d.join("again.pcae")).unwrap());
}

#[test]
fn eval_writes_curves_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    fs::create_dir(d.join("set")).unwrap();
    for (i, lambda) in ["10", "100"].iter().enumerate() {
        let out = format!("set/m{i}.pcae");
        ok(d, &["train", "--data", "ds", "--tier", "32", "--latent", "8", "--epochs", "1", "--lambda", lambda, "--progress", "0", "--out", &out]);
    }
    let stdout = ok(d, &["eval", "--model-set", "A=m.pcae", "--model-set", "set", "--data", "ds", "--baseline", "grid", "--out", "rd.csv"]);
    assert!(stdout.contains("BD-rate"));
    let rows = pcae::sweep::parse_csv(Path::new("rd.csv"), &fs::read_to_string(d.join("rd.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().filter(|r| r.label == "A").count(), 1);
    assert_eq!(rows.iter().filter(|r| r.label == "set").count(), 2);
    assert_eq!(rows.iter().filter(|r| r.label == "grid").count(), 5);
    assert!(rows.iter().all(|r| r.n_clouds == 1));
    for label in ["A", "set", "grid"] {
        assert!(d.join(format!("rd.csv.{label}.dat")).exists());
    }
    assert!(d.join("rd.csv.manifest").exists());
}

#[test]
fn fdcheck_reports_every_primitive() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["fdcheck", "--instances", "1"]);
    for name in ["linear", "batch_norm_train", "segment_max", "chamfer", "rate", "rd_loss (entropy on)"] {
        assert!(stdout.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{name}:\n{stdout}");
    }
    // an impossible tolerance must fail with the numeric exit code
    let out = pcae(dir.path(), &["fdcheck", "--instances", "1", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(3));
}
