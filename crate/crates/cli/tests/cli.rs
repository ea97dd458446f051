use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[dataset]
samples = 4
train = 3
"#;

fn wfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfi")).args(args).env("WFI_WORKERS", "2").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = wfi(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.toml"), config).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }

    fn gen(&self) {
        ok(&["gen-data", "--config", &self.s("c.toml"), "--out", &self.s("data")]);
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn single_sample_dataset_has_three_files_and_reruns_identically() {
    let f = Fixture::new("[dataset]\nsamples = 1\ntrain = 1\n");
    f.gen();
    let first = files(&f.p("data"));
    assert_eq!(first.len(), 3);
    f.gen();
    ok(&["gen-data", "--config", &f.s("c.toml"), "--out", &f.s("again")]);
    assert_eq!(files(&f.p("data")), first);
    assert_eq!(files(&f.p("again")), first);
}

#[test]
fn infeasible_ellipse_range_is_a_usage_error() {
    let f = Fixture::new("[dataset]\na_range = [0.1, 0.6]\n");
    let o = wfi(&["gen-data", "--config", &f.s("c.toml"), "--out", &f.s("data")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("a_range"));
}

#[test]
fn differing_outputs_are_not_overwritten_without_force() {
    let f = Fixture::new(SMALL);
    f.gen();
    let o = wfi(&["gen-data", "--config", &f.s("c.toml"), "--seed", "5", "--out", &f.s("data")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    ok(&["gen-data", "--config", &f.s("c.toml"), "--seed", "5", "--out", &f.s("data"), "--force"]);
}

#[test]
fn pretraining_contracts() {
    let f = Fixture::new(SMALL);
    f.gen();
    let (c, d) = (f.s("c.toml"), f.s("data"));
    let base = ["pretrain", "--config", c.as_str(), "--data", d.as_str()];
    let with = |extra: &[&'static str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };

    let out = f.s("p2");
    ok(&strs(&[with(&["--n-d", "2", "--epochs", "50", "--out"]), vec![out]].concat()));
    let csv = std::fs::read_to_string(f.p("p2/history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(f.p("p2/checkpoint.wfc").is_file());

    ok(&strs(&[with(&["--n-d", "0", "--out"]), vec![f.s("p0")]].concat()));
    assert_eq!(std::fs::read_to_string(f.p("p0/history.csv")).unwrap().lines().count(), 1);
    assert!(f.p("p0/checkpoint.wfc").is_file());

    assert_eq!(code(&wfi(&strs(&[with(&["--n-d", "4", "--out"]), vec![f.s("p4")]].concat()))), 2);
}

#[test]
fn config_hash_binding() {
    let f = Fixture::new(SMALL);
    f.gen();
    std::fs::write(f.p("other.toml"), format!("{SMALL}\n[material]\neps = 0.002\n")).unwrap();
    let args = ["pretrain", "--config", &f.s("other.toml"), "--data", &f.s("data"), "--n-d", "0", "--out", &f.s("p")];
    let o = wfi(&args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--allow-config-mismatch"));
    ok(&[&args[..], &["--allow-config-mismatch"]].concat());
}

#[test]
fn inversion_contracts() {
    let f = Fixture::new(SMALL);
    f.gen();
    let c = f.s("c.toml");
    let d = f.s("data");
    ok(&["pretrain", "--config", &c, "--data", &d, "--n-d", "2", "--epochs", "3", "--out", &f.s("pre")]);
    let ck = f.s("pre/checkpoint.wfc");
    let inv = |out: &str, extra: &[&str]| {
        let mut a = vec!["invert", "--config", &c, "--data", &d, "--sample", "3", "--out", out];
        a.extend_from_slice(extra);
        a.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |args: Vec<String>| wfi(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let o = run(inv(&f.s("r1"), &["--checkpoint", &ck, "--max-epochs", "2", "--no-early-stop", "--snapshot-every", "1"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(f.p("r1/history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert!(!cells[3].is_empty(), "AP missing in {line}");
    }
    let meta = std::fs::read_to_string(f.p("r1/run.json")).unwrap();
    assert!(meta.contains("N_D=2"));
    assert_eq!(std::fs::read_dir(f.p("r1/snapshots")).unwrap().count(), 3);

    run(inv(&f.s("r2"), &["--checkpoint", &ck, "--max-epochs", "2", "--no-early-stop", "--snapshot-every", "1"]));
    assert_eq!(files(&f.p("r1")), files(&f.p("r2")));

    let o = run(inv(&f.s("r0"), &["--max-epochs", "0"]));
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(f.p("r0/history.csv")).unwrap().lines().count(), 2);

    let o = run(vec!["invert".into(), "--config".into(), c.clone(), "--data".into(), d.clone(), "--sample".into(), "9".into(), "--out".into(), f.s("rx")]);
    assert_eq!(code(&o), 2);

    std::fs::write(f.p("wide.toml"), format!("{SMALL}\n[network]\nencoder = [8, 32]\n")).unwrap();
    let o = wfi(&["invert", "--config", &f.s("wide.toml"), "--data", &d, "--sample", "3", "--checkpoint", &ck, "--out", &f.s("ry")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("architecture"));

    // report over one run, then a mismatched pair
    ok(&["report", &f.s("r1"), "--out", &f.s("rep")]);
    let agg = std::fs::read_to_string(f.p("rep/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 4);
    let first_in = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap();
    let first_out = agg.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert_eq!(first_in, first_out);
    assert!(f.p("rep/loss.svg").is_file() && f.p("rep/ap.svg").is_file());
    assert_eq!(std::fs::read_dir(f.p("rep/mosaics")).unwrap().count(), 1);

    let o = run(inv(&f.s("r3"), &["--checkpoint", &ck, "--max-epochs", "1", "--no-early-stop"]));
    assert!(o.status.success());
    let o = wfi(&["report", &f.s("r1"), &f.s("r3"), "--out", &f.s("rep2")]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("r3"));
}

#[test]
fn report_without_runs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wfi(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_worker_cap_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_wfi"))
        .args(["report", "--out", "x"])
        .env("WFI_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn shipped_config_matches_built_in_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = wfi_core::config::ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, wfi_core::config::ExperimentConfig::default());
}
