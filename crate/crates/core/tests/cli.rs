use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use igcd::eval::parse_reports;
use tempfile::TempDir;

const DESK: &str = "epochs_initial = 3\nepochs_stage = 2\nbatch_size = 64\nproj_dim = 8\n";

fn igcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igcd")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generated benchmark plus a short-schedule config file.
fn fixture() -> (TempDir, String, String) {
    let dir = TempDir::new().unwrap();
    let bench = dir.path().join("bench");
    let cfg = dir.path().join("run.txt");
    fs::write(&cfg, DESK).unwrap();
    let o = igcd(&[
        "gen",
        "--out",
        p(&bench),
        "--seed",
        "9",
        "--set",
        "samples_per_category=30",
        "--set",
        "eval_per_category=5",
        "--set",
        "n_stages=3",
        "--set",
        "categories_new_per_stage=3,3",
        "--set",
        "categories_old_per_stage=3,3",
        "--set",
        "dim=16",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    let (b, c) = (p(&bench).to_string(), p(&cfg).to_string());
    (dir, b, c)
}

#[test]
fn run_writes_every_artifact_and_eval_agrees() {
    let (dir, bench, cfg) = fixture();
    let out = dir.path().join("run");
    let o = igcd(&["run", "--bench", &bench, "--config", &cfg, "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["stage_0.txt", "stage_1.txt", "stage_2.txt", "reports.txt", "summary.csv", "config.txt", "checkpoint.igck"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let reports = parse_reports(&fs::read_to_string(out.join("reports.txt")).unwrap()).unwrap();
    assert_eq!(reports.len(), 3);

    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "stage0/All");
    assert!(header.contains(&"stage2/Old"));
    assert_eq!(&header[header.len() - 2..], ["M_f", "M_d"]);

    let o = igcd(&["eval", "--checkpoint", p(&out.join("checkpoint.igck")), "--bench", &bench, "--config", &cfg]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 3);
    let last: f64 = stdout(&o).lines().last().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    let m_d: f64 = stdout(&igcd(&["run", "--bench", &bench, "--config", &cfg, "--out", p(&dir.path().join("again"))]))
        .lines()
        .find_map(|l| l.strip_prefix("M_d = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((last - m_d).abs() < 1e-4);
}

#[test]
fn unlabeled_mode_has_no_all_or_old_columns_after_stage_zero() {
    let (dir, bench, cfg) = fixture();
    let out = dir.path().join("u");
    let o = igcd(&["run", "--bench", &bench, "--config", &cfg, "--mode", "igcd-u", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "stage0/All,stage1/New,stage1/S-0,stage2/New,stage2/S-1,stage2/S-0,M_f,M_d"
    );
}

#[test]
fn estimate_k_and_ablate() {
    let (dir, bench, cfg) = fixture();
    let o = igcd(&["estimate-k", "--embeddings", p(&Path::new(&bench).join("stage_1.igcd")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let k: usize = stdout(&o).trim().parse().unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("peaks.txt")).unwrap().lines().count(), k);

    let o = igcd(&[
        "ablate", "--bench", &bench, "--config", &cfg, "--param", "support_per_category", "--values", "1,3",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "support_per_category,M_f,M_d");
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("3,"));
}

#[test]
fn exit_codes() {
    let (dir, bench, cfg) = fixture();
    let out = dir.path().join("x");
    let out = p(&out);
    assert_eq!(code(&igcd(&[])), 2);
    assert_eq!(code(&igcd(&["frobnicate"])), 2);
    assert_eq!(code(&igcd(&["--help"])), 0);
    assert_eq!(code(&igcd(&["run", "--bench", &bench, "--out", out, "--set", "no_such_key=1"])), 2);
    assert_eq!(code(&igcd(&["run", "--bench", &bench, "--out", out, "--set", "dim=4"])), 2);
    assert_eq!(code(&igcd(&["run", "--bench", &bench, "--out", out, "--set", "k_density=0"])), 2);
    assert_eq!(code(&igcd(&["run", "--bench", &bench, "--out", out, "--mode", "igcd-x"])), 2);
    assert_eq!(code(&igcd(&["ablate", "--bench", &bench, "--config", &cfg, "--param", "lr", "--values", "1"])), 2);
    assert_eq!(code(&igcd(&["ablate", "--bench", &bench, "--config", &cfg, "--param", "k_iou", "--values", ","])), 2);
    assert_eq!(code(&igcd(&["run", "--bench", p(dir.path()), "--out", out])), 3);

    let bad = dir.path().join("bad.igck");
    fs::write(&bad, b"IGCK\x01\x00").unwrap();
    assert_eq!(code(&igcd(&["eval", "--checkpoint", p(&bad), "--bench", &bench])), 3);
}
