mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use cdc_core::raster::RawImage;

fn cdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdc")).args(args).env("CDC_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn compress_reports_factor_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    common::noise_image(40, 30, 1).save(&img).unwrap();
    let out = cdc(&["compress", "--in", p(&img), "--out", p(&dir.path().join("a.cdc")), "--bits", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("nominal factor 2.667"), "{text}");
    assert!(text.contains("achieved ratio 2.6"), "{text}");
    let out = cdc(&["compress", "--in", p(&img), "--out", p(&dir.path().join("b.cdc")), "--bits", "4"]);
    assert!(stdout(&out).contains("nominal factor 2.000"));
    let lossless = cdc(&["compress", "--in", p(&img), "--out", p(&dir.path().join("c.cdc")), "--bits", "0"]);
    assert!(stdout(&lossless).contains("nominal factor 1.000"));
    assert!(stdout(&lossless).contains("achieved ratio 0.99"));
}

#[test]
fn validation_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.ppm");
    common::noise_image(4, 4, 0).save(&img).unwrap();
    let out = cdc(&["compress", "--in", p(&img), "--out", p(&dir.path().join("x.cdc")), "--bits", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0..=7"));
    assert!(!dir.path().join("x.cdc").exists());

    let bogus = dir.path().join("bogus.cdc");
    std::fs::write(&bogus, b"PNG?nothing here").unwrap();
    let out = cdc(&["decompress", "--in", p(&bogus), "--out", p(&dir.path().join("y.ppm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    let out = cdc(&["decompress", "--in", p(&dir.path().join("missing.cdc")), "--out", p(&dir.path().join("z.ppm"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = common::noise_image(23, 17, 5);
    let src = dir.path().join("src.ppm");
    img.save(&src).unwrap();
    let packed = dir.path().join("p.cdc");
    let back = dir.path().join("back.ppm");
    assert!(cdc(&["compress", "--in", p(&src), "--out", p(&packed), "--bits", "0"]).status.success());
    assert!(cdc(&["decompress", "--in", p(&packed), "--out", p(&back)]).status.success());
    assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&back).unwrap());

    assert!(cdc(&["compress", "--in", p(&src), "--out", p(&packed), "--bits", "5"]).status.success());
    assert!(cdc(&["decompress", "--in", p(&packed), "--out", p(&back)]).status.success());
    let naive = RawImage::load(&back).unwrap();
    assert!(cdc_core::metrics::max_abs_err(&naive, &img).unwrap() <= 16);
}

#[test]
fn train_eval_and_model_decompress() {
    let data = tempfile::tempdir().unwrap();
    common::write_scenes(data.path(), 2);
    let runs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for run in &runs {
        let out = cdc(&[
            "train", "--data", p(data.path()), "--out", p(run.path()), "--steps", "3", "--bits", "5", "--seed", "1",
            "--crop-size", "16", "--levels", "2", "--base-channels", "4", "--disc-downsample", "2", "--batch-size", "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let log = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(log(runs[0].path()), log(runs[1].path()));
    let model = runs[0].path().join("model.cdck");

    let out = cdc(&["eval", "--model", p(&model), "--data", p(data.path()), "--bits", "4", "--csv", p(&runs[0].path().join("e.csv"))]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(runs[0].path().join("e.csv")).unwrap();
    let header: Vec<_> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "max_abs_err_naive").unwrap();
    for row in csv.lines().skip(1) {
        let v: f64 = row.split(',').nth(col).unwrap().parse().unwrap();
        assert!(v <= 8.0);
    }
    assert!(stdout(&out).contains("nominal factor 2.000"));

    let img = common::noise_image(30, 20, 8);
    let src = data.path().join("x.png");
    img.save(&src).unwrap();
    let packed = runs[1].path().join("x.cdc");
    let recon = runs[1].path().join("x.png");
    assert!(cdc(&["compress", "--in", p(&src), "--out", p(&packed), "--bits", "5"]).status.success());
    let out = cdc(&["decompress", "--in", p(&packed), "--out", p(&recon), "--model", p(&model)]);
    assert!(out.status.success());
    let r = RawImage::load(&recon).unwrap();
    assert_eq!((r.width(), r.height()), (30, 20));
}

#[test]
fn serve_study_prints_its_port() {
    let (o, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    common::noise_image(4, 4, 1).save(o.path().join("a.ppm")).unwrap();
    common::noise_image(4, 4, 2).save(r.path().join("a.ppm")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_cdc"))
        .args(["serve-study", "--originals", p(o.path()), "--reconstructed", p(r.path()), "--port", "0"])
        .args(["--log", p(&o.path().join("log.jsonl"))])
        .env("CDC_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let port: u16 = lines
        .by_ref()
        .map_while(Result::ok)
        .find_map(|l| l.strip_prefix("port ").map(|p| p.parse().unwrap()))
        .unwrap();
    assert_ne!(port, 0);
    let mut resp = ureq::get(format!("http://127.0.0.1:{port}/api/results")).call().unwrap();
    let body: serde_json::Value = resp.body_mut().read_json().unwrap();
    assert_eq!(body["original"]["shown"], 0);
    child.kill().unwrap();
    child.wait().unwrap();
}
