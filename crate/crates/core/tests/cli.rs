use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["bench", "synth", "--fid", "1", "--seed", "7", "--n-train", "200", "--n-test", "50", "--out", path(d)]);
    }
    for f in ["train.csv", "test.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("fid = 1") && manifest.contains("seed = 7"));
}

#[test]
fn train_predict_interactions_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("model");
    let common = ["--fid", "1", "--n-train", "500", "--n-test", "200", "--steps", "400"];
    let mut args = vec!["train", "--preset", "addnn", "--subnets", "3", "--out", path(&m)];
    args.extend(common);
    ok(&args);
    for f in ["manifest.toml", "model.toml", "model.bin", "trace.csv", "metrics.csv"] {
        assert!(m.join(f).is_file(), "{f}");
    }

    let p = dir.path().join("pred");
    ok(&["predict", "--model", path(&m), "--fid", "1", "--n-train", "500", "--n-test", "200", "--out", path(&p)]);
    let rows = fs::read_to_string(p.join("predictions.csv")).unwrap().lines().count();
    assert_eq!(rows, 201);

    let i = dir.path().join("inter");
    ok(&["interactions", "--model", path(&m), "--draws", "2", "--heatmap-grid", "5", "--heatmap-pairs", "1", "--out", path(&i)]);
    let report = fs::read_to_string(i.join("interactions.csv")).unwrap();
    assert!(report.starts_with("rank,subset,order,strength,strength_std"));
    assert!(fs::read_dir(&i).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("heatmap_")));

    let again = dir.path().join("again");
    ok(&["replay", path(&i.join("manifest.toml")), "--out", path(&again)]);
    assert_eq!(fs::read(i.join("interactions.csv")).unwrap(), fs::read(again.join("interactions.csv")).unwrap());
}

#[test]
fn kernel_check_rate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["kernel-check", "--sigma", "relu", "--r", "64,256,1024,4096", "--out", path(dir.path())]);
    let mut rdr = csv::Reader::from_path(dir.path().join("kernel_check.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (ri, ei) = (headers.iter().position(|h| h == "r").unwrap(), headers.iter().position(|h| h == "sup_error").unwrap());
    let mut by_r: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        by_r.entry(rec[ri].parse().unwrap()).or_default().push(rec[ei].parse().unwrap());
    }
    // Least-squares slope of log mean error against log r.
    let pts: Vec<(f64, f64)> = by_r.iter().map(|(r, e)| ((*r as f64).ln(), (e.iter().sum::<f64>() / e.len() as f64).ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn equiv_check_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["equiv-check", "--out", path(dir.path())]);
    let text = fs::read_to_string(dir.path().join("equiv_check.csv")).unwrap();
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!bnn(&["train", "--no-such-flag"]).status.success());
    assert!(!bnn(&["train", "--data", "/no/such.csv", "--target", "y", "--out", path(dir.path())]).status.success());
    let sk = dir.path().join("sk.toml");
    fs::write(&sk, "layers = [1, 1]\nwidths = [10, 1]\n").unwrap();
    let pol = dir.path().join("policy.toml");
    fs::write(&pol, "[default]\nstages = [{ kind = \"inducing\", points = 4 }]\n").unwrap();
    let out = bnn(&["train", "--skeleton", path(&sk), "--policy", path(&pol), "--fid", "1", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kernel"));
}

#[test]
fn skeleton_validates_and_canonicalizes() {
    let dir = tempfile::tempdir().unwrap();
    let sk = dir.path().join("sk.toml");
    fs::write(&sk, "layers = [2, 1]\nwidths = [[3, 1], 1]\n").unwrap();
    let text = ok(&["skeleton", "--config", path(&sk)]);
    assert!(text.contains("edges = [[[0, 1]]]"), "{text}");
    fs::write(&sk, "layers = [2, 1]\nedges = [[[0, 5]]]\n").unwrap();
    assert!(!bnn(&["skeleton", "--config", path(&sk)]).status.success());
}
