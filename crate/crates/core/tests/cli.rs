use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn opfree(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opfree"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn convolve_semicircles_within_budget() {
    let tmp = TempDir::new().unwrap();
    let cfg = bundled("convolve_semicircles.toml");
    let o = opfree(&["convolve", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("crosscheck.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[6], "true");
        let dev: f64 = rec[2].parse().unwrap();
        let budget: f64 = rec[3].parse().unwrap();
        assert!(dev <= budget);
        rows += 1;
    }
    assert_eq!(rows, 3);
    let conv = read_json(&tmp.path().join("convolved.json"));
    assert_eq!(conv["dim"], 1);
    assert!(tmp.path().join("metadata.json").exists());
}

#[test]
fn convolving_with_zero_point_mass_reproduces_the_file() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let cfg = bundled("convolve_semicircles.toml");
    assert!(opfree(&["convolve", "--config", cfg.to_str().unwrap()], &first).status.success());
    let input = first.join("convolved.json");
    let cfg = write(
        tmp.path(),
        "zero.toml",
        &format!(
            "dim = 1\nprobes = [{{ z = [0.0, 5.0] }}]\n[left]\nkind = \"file\"\npath = {:?}\n[right]\nkind = \"point_mass\"\nvalue = [[0.0]]\n",
            input.to_str().unwrap()
        ),
    );
    let second = tmp.path().join("second");
    let o = opfree(&["convolve", "--config", cfg.to_str().unwrap()], &second);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&input).unwrap(), fs::read(second.join("convolved.json")).unwrap());
}

#[test]
fn malformed_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "dim = \"two\"\n[left\n");
    let o = opfree(&["convolve", "--config", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = opfree(&["steinitz", "--input", "/nonexistent/vectors.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn steinitz_zero_sum_rearrangement() {
    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "v.csv", "1,0\n0,1\n-1,0\n0,-1\n");
    let o = opfree(&["steinitz", "--input", input.to_str().unwrap()], &tmp.path().join("out"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = read_json(&tmp.path().join("out/selection.json"));
    let mut idx: Vec<u64> = sel["indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    idx.sort();
    assert_eq!(idx, vec![0, 1, 2, 3]);
    assert!(sel["achieved_deviation"].as_f64().unwrap() <= sel["certified_bound"].as_f64().unwrap());
}

#[test]
fn steinitz_without_t_on_nonzero_sum_exits_3() {
    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "v.csv", "1,0\n0,1\n");
    let o = opfree(&["steinitz", "--input", input.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn steinitz_subset_selection() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::new();
    for i in 0..500 {
        let a = ((i * 37) % 101) as f64 / 101.0 - 0.5;
        let b = ((i * 53) % 89) as f64 / 89.0 - 0.5;
        let c = ((i * 29) % 97) as f64 / 97.0 - 0.5;
        text.push_str(&format!("{a},{b},{c}\n"));
    }
    let input = write(tmp.path(), "v.csv", &text);
    let o = opfree(&["steinitz", "--input", input.to_str().unwrap(), "--t", "0.37"], &tmp.path().join("out"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = read_json(&tmp.path().join("out/selection.json"));
    assert!(sel["achieved_deviation"].as_f64().unwrap() <= sel["certified_bound"].as_f64().unwrap());
}

#[test]
fn bundled_hinchin_example_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = bundled("hinchin_example.toml");
    let o = opfree(&["hinchin", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&tmp.path().join("report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["verdict"] == "PASS"));
    let lines = fs::read_to_string(tmp.path().join("rows.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("row,n,subset_size,deviation,budget,verdict"));
}

#[test]
fn hinchin_reports_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = bundled("hinchin_example.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(opfree(&["hinchin", "--config", cfg.to_str().unwrap(), "--seed", "11"], &a).status.success());
    assert!(opfree(&["hinchin", "--config", cfg.to_str().unwrap(), "--seed", "11", "--jobs", "3"], &b).status.success());
    for f in ["report.json", "rows.jsonl", "summary.csv", "infinitesimality.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

const SMALL: &str = r#"
dim = 1
order = 4
rows = [4, 8]
[target]
kind = "semicircular"
covariance = [{ kind = "identity", scale = 1.0 }]
"#;

#[test]
fn hinchin_p1_is_trivial_pass() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "p1.toml", &format!("p = 1\n{SMALL}"));
    let o = opfree(&["hinchin", "--config", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&tmp.path().join("out/report.json"));
    for r in report["rows"].as_array().unwrap() {
        assert_eq!(r["verdict"], "PASS");
        assert_eq!(r["subset_size"], r["n"]);
    }
}

#[test]
fn hinchin_small_lambda_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "lam.toml", &format!("p = 2\n{SMALL}[probes]\nlambda = 1.0\n"));
    let o = opfree(&["hinchin", "--config", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_flags_realized_and_forged_documents() {
    let tmp = TempDir::new().unwrap();
    let good = write(
        tmp.path(),
        "good.json",
        r#"{"dim": 1, "order": 4, "bound": 2.0, "moments": [[[[0, 0]]], [[[1, 0]]], [[[0, 0]]], [[[2, 0]]]]}"#,
    );
    let o = opfree(&["check", "--input", good.to_str().unwrap()], &tmp.path().join("a"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&tmp.path().join("a/check.json"))["pass"], true);

    let bad = write(
        tmp.path(),
        "bad.json",
        r#"{"dim": 1, "order": 4, "bound": 1.0, "moments": [[[[0, 0]]], [[[-1, 0]]], [[[0, 0]]], [[[1, 0]]]]}"#,
    );
    let o = opfree(&["check", "--input", bad.to_str().unwrap()], &tmp.path().join("b"));
    assert!(o.status.success());
    assert_eq!(read_json(&tmp.path().join("b/check.json"))["pass"], false);
}
