use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kat_core::anchor_masks::PatchGrid;
use kat_core::autodiff::Tensor;
use kat_core::bag_io::{write_bag, FeatureBag};

const OVERFIT: &str = "\
# eight tiny bags, all in the train split
n_bags = 8
d_f = 8
side_min = 5
side_max = 7
motif_radius = 1.5
synth_seed = 3
split = 1:0:0

[model]
d_e = 8
heads = 2
blocks = 2
nk = 8

[training]
lr = 0.01
max_epochs = 200
patience = 200
batch_size = 2
seed = 11
";

fn kat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn failed(out: &Output, code: i32) -> String {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with("error kind=") && err.contains(&format!("exit={code}:")),
        "{err}"
    );
    err
}

/// Synthesizes the overfit set and a manifest that reuses the train bags
/// for validation.
fn overfit_data(dir: &Path) {
    fs::write(dir.join("c.ini"), OVERFIT).unwrap();
    ok(&kat(&["synth", "--config", "c.ini", "--out", "data"], dir));
    let m = fs::read_to_string(dir.join("data/manifest.txt")).unwrap();
    let extra: String = m
        .lines()
        .skip(1)
        .map(|l| l.replace("\ttrain\t", "\tval\t") + "\n")
        .collect();
    fs::write(dir.join("data/m2.txt"), m + &extra).unwrap();
}

#[test]
fn synth_train_eval_overfits_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    overfit_data(dir);
    let manifest_before = fs::read(dir.join("data/m2.txt")).unwrap();

    let train = ["train", "--manifest", "data/m2.txt", "--config", "c.ini"];
    ok(&kat(
        &[&train[..], &["--out", "a.katm", "--log", "a.log"]].concat(),
        dir,
    ));
    let out = ok(&kat(
        &[
            "eval",
            "--manifest",
            "data/m2.txt",
            "--model",
            "a.katm",
            "--split",
            "train",
        ],
        dir,
    ));
    let header = out.lines().next().unwrap();
    assert!(header.contains("Acc.") && header.contains("mAUC") && header.contains("wAUC"));
    let row: Vec<&str> = out.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[2], "1.000", "{out}");

    // same inputs, and the resolved config on its own, reproduce the run
    ok(&kat(
        &[&train[..], &["--out", "b.katm", "--log", "b.log"]].concat(),
        dir,
    ));
    let resolved = ["train", "--manifest", "data/m2.txt", "--config", "a.katm.run.ini"];
    ok(&kat(
        &[&resolved[..], &["--out", "c.katm", "--log", "c.log"]].concat(),
        dir,
    ));
    let a = fs::read(dir.join("a.katm")).unwrap();
    assert_eq!(a, fs::read(dir.join("b.katm")).unwrap());
    assert_eq!(a, fs::read(dir.join("c.katm")).unwrap());
    let log = fs::read_to_string(dir.join("a.log")).unwrap();
    assert_eq!(log, fs::read_to_string(dir.join("c.log")).unwrap());
    assert_eq!(log.lines().count(), 200);
    assert!(log.lines().all(|l| l.starts_with("{\"epoch\":")));

    assert_eq!(fs::read(dir.join("data/m2.txt")).unwrap(), manifest_before);
    let again = ok(&kat(
        &[
            "eval",
            "--manifest",
            "data/m2.txt",
            "--model",
            "a.katm",
            "--split",
            "train",
        ],
        dir,
    ));
    assert_eq!(out, again);
}

#[test]
fn synth_writes_bags_manifest_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = ok(&kat(
        &[
            "synth",
            "--out",
            "d",
            "--set",
            "n_bags=20",
            "--set",
            "side_max=14",
            "--set",
            "d_f=4",
        ],
        dir,
    ));
    assert!(out.contains("train 12, val 2, test 6"), "{out}");
    let bags = fs::read_dir(dir.join("d/bags")).unwrap().count();
    assert_eq!(bags, 20);
    let cfg = fs::read_to_string(dir.join("d/run.ini")).unwrap();
    assert!(cfg.contains("n_bags = 20") && cfg.contains("d_f = 4"));
    let manifest = fs::read_to_string(dir.join("d/manifest.txt")).unwrap();
    assert!(manifest.starts_with("classes=2 dim=4\n"));
}

#[test]
fn maskgen_handles_a_single_row_of_patches() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let n = 40;
    let bag = FeatureBag {
        id: "row".into(),
        grid: PatchGrid::new((0..n).map(|i| (3, i)).collect()).unwrap(),
        features: Tensor::zeros(&[n as usize, 2]),
        label: 0,
    };
    write_bag(&bag, dir.join("row.katb")).unwrap();
    let out = ok(&kat(
        &[
            "maskgen", "--bag", "row.katb", "--nk", "8", "--scales", "3", "--seed", "7", "--out", "m.txt", "--plot",
            "p.txt",
        ],
        dir,
    ));
    assert!(out.contains("5 kernels"), "{out}");
    let text = fs::read_to_string(dir.join("m.txt")).unwrap();
    assert!(text.starts_with("5 40 3\n"));
    let plot = fs::read_to_string(dir.join("p.txt")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 3 * 40);
    assert_eq!(plot.lines().filter(|l| l.ends_with(" 1")).count(), 3 * 5);
    assert!(dir.join("m.txt.run.ini").exists());
}

#[test]
fn bench_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = ok(&kat(
        &[
            "bench",
            "--np",
            "256,512,1024,2048",
            "--k",
            "8",
            "--de",
            "256",
            "--heads",
            "8",
            "--blocks",
            "4",
            "--out",
            "r.txt",
            "--plot",
            "r.dat",
        ],
        dir,
    ));
    assert_eq!(out, fs::read_to_string(dir.join("r.txt")).unwrap());
    assert!(out.contains("KA full blocks"));
    assert_eq!(fs::read_to_string(dir.join("r.dat")).unwrap().lines().count(), 4);
}

#[test]
fn failures_print_one_line_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    failed(&kat(&["bogus"], dir), 2);
    failed(&kat(&["bench", "--np", "10", "--frobnicate"], dir), 2);
    failed(&kat(&["synth", "--out", "x", "--set", "learning_rate=1"], dir), 2);
    failed(&kat(&["bench", "--np", "10,20"], dir), 2);
    let e = failed(
        &kat(&["eval", "--manifest", "missing.txt", "--model", "m.katm"], dir),
        3,
    );
    assert!(e.contains("missing.txt"));

    overfit_data(dir);
    let e = failed(
        &kat(
            &[
                "train",
                "--manifest",
                "data/m2.txt",
                "--config",
                "c.ini",
                "--set",
                "scales=3",
                "--out",
                "x.katm",
            ],
            dir,
        ),
        2,
    );
    assert!(e.contains("scales"));
    failed(
        &kat(
            &[
                "train",
                "--manifest",
                "data/m2.txt",
                "--set",
                "d_f=9",
                "--out",
                "x.katm",
            ],
            dir,
        ),
        2,
    );

    // a truncated model file is a format error
    let train = [
        "train",
        "--manifest",
        "data/m2.txt",
        "--config",
        "c.ini",
        "--set",
        "max_epochs=1",
    ];
    ok(&kat(&[&train[..], &["--out", "m.katm"]].concat(), dir));
    let bytes = fs::read(dir.join("m.katm")).unwrap();
    fs::write(dir.join("cut.katm"), &bytes[..bytes.len() - 2]).unwrap();
    let e = failed(
        &kat(
            &[
                "eval",
                "--manifest",
                "data/m2.txt",
                "--model",
                "cut.katm",
                "--split",
                "val",
            ],
            dir,
        ),
        3,
    );
    assert!(e.contains("offset"));
    failed(
        &kat(
            &[
                "eval",
                "--manifest",
                "data/m2.txt",
                "--model",
                "m.katm",
                "--split",
                "holdout",
            ],
            dir,
        ),
        2,
    );

    // NaN features surface as a numeric failure
    let bag = FeatureBag {
        id: "nan".into(),
        grid: PatchGrid::new((0..9).map(|i| (i / 3, i % 3)).collect()).unwrap(),
        features: Tensor::matrix(9, 8, [vec![f64::NAN], vec![0.0; 71]].concat()).unwrap(),
        label: 0,
    };
    write_bag(&bag, dir.join("nan.katb")).unwrap();
    fs::write(dir.join("nan.txt"), "classes=2 dim=8\nnan.katb\ttest\t0\n").unwrap();
    failed(&kat(&["eval", "--manifest", "nan.txt", "--model", "m.katm"], dir), 4);
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kat"))
        .args(["bench", "--np", "8,16,32"])
        .env("KAT_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    failed(&out, 2);
    let out = Command::new(env!("CARGO_BIN_EXE_kat"))
        .args(["bench", "--np", "8,16,32"])
        .env("KAT_THREADS", "1")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    ok(&out);
}
