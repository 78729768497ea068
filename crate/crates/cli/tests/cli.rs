use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use matting::checkpoint::Checkpoint;
use matting::io;
use matting::net::{init_params, NetConfig};
use matting::tensor::{Shape, Tensor};
use matting::trimap::Trimap;
use serde_json::Value;

fn matting(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matting"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to spawn the matting binary")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_checkpoint(path: &Path, attention: bool) {
    let cfg = NetConfig {
        stages: 2,
        base_channels: 4,
        convs_per_stage: 1,
        attention,
        ..NetConfig::default()
    };
    Checkpoint {
        params: init_params(&cfg).unwrap(),
        step: 0,
    }
    .save(path)
    .unwrap();
}

fn test_image(path: &Path, h: usize, w: usize) {
    let img = Tensor::from_fn(Shape::new(h, w, 3), |y, x, c| ((3 * y + 5 * x + 7 * c) % 11) as f64 / 10.0);
    io::write_rgb(path, &img).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_the_requested_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = matting(&["gen-data", "--out", p(&out), "--count", "4", "--size", "32", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest = read_json(&out.join("manifest.json"));
    let ids: Vec<&str> = manifest["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 4);
    for id in &ids {
        for plane in ["images", "alphas", "fgs", "bgs", "trimaps"] {
            assert!(out.join(plane).join(format!("{id}.png")).exists(), "{plane}/{id}");
        }
    }
    let resolved = read_json(&out.join("gen_data_config.json"));
    assert_eq!(resolved["command"], "gen-data");
    assert_eq!(resolved["config"]["count"], 4);
    assert_eq!(resolved["config"]["test_count"], 1);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = matting(&["gen-data", "--out", p(out), "--count", "3", "--size", "32"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("images/00002.png")).unwrap(),
        fs::read(b.join("images/00002.png")).unwrap()
    );
}

#[test]
fn gen_data_rejects_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = matting(&["gen-data", "--out", p(dir.path()), "--count", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--count"));
}

#[test]
fn trimap_of_a_full_white_mask_is_a_border_ring() {
    let dir = tempfile::tempdir().unwrap();
    let (mask, out) = (dir.path().join("mask.png"), dir.path().join("trimap.png"));
    io::write_gray(&mask, &Tensor::full(Shape::new(40, 50, 1), 1.0)).unwrap();
    let o = matting(&["trimap", "--mask", p(&mask), "--out", p(&out), "--rate", "0.03"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let t = io::read_trimap(&out).unwrap();
    let levels = t.to_levels();
    assert!(levels.iter().all(|&v| v == 255 || v == 128));
    for y in 0..40 {
        for x in 0..50 {
            let border = y == 0 || x == 0 || y == 39 || x == 49;
            assert_eq!(levels[y * 50 + x] == 128, border, "pixel ({y}, {x})");
        }
    }
    let resolved = read_json(&dir.path().join("trimap.config.json"));
    assert_eq!(resolved["config"]["rate"], 0.03);
}

#[test]
fn trimap_of_an_empty_mask_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (mask, out) = (dir.path().join("mask.png"), dir.path().join("trimap.png"));
    io::write_gray(&mask, &Tensor::zeros(Shape::new(16, 16, 1))).unwrap();
    let o = matting(&["trimap", "--mask", p(&mask), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("empty object"), "{err}");
    assert!(err.contains("mask.png"), "{err}");
    assert!(!out.exists());
}

#[test]
fn infer_with_an_all_foreground_trimap_is_all_white() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_checkpoint(&d.join("net.ckpt"), true);
    test_image(&d.join("img.png"), 20, 27);
    io::write_trimap(d.join("tri.png"), &Trimap::uniform(20, 27, 1.0).unwrap()).unwrap();

    let out = d.join("alpha.png");
    let o = matting(&[
        "infer",
        "--checkpoint",
        p(&d.join("net.ckpt")),
        "--image",
        p(&d.join("img.png")),
        "--trimap",
        p(&d.join("tri.png")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let alpha = io::read_gray(&out).unwrap();
    assert_eq!(alpha.shape(), Shape::new(20, 27, 1));
    assert!(alpha.data().iter().all(|&a| a == 1.0));
    assert!(d.join("alpha.config.json").exists());
}

#[test]
fn infer_reports_a_size_mismatch_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_checkpoint(&d.join("net.ckpt"), true);
    test_image(&d.join("img.png"), 20, 20);
    io::write_trimap(d.join("small.png"), &Trimap::uniform(10, 10, 0.5).unwrap()).unwrap();
    let o = matting(&[
        "infer",
        "--checkpoint",
        p(&d.join("net.ckpt")),
        "--image",
        p(&d.join("img.png")),
        "--trimap",
        p(&d.join("small.png")),
        "--out",
        p(&d.join("alpha.png")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("small.png"), "{}", stderr(&o));
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = matting(&["gen-data", "--out", p(&data), "--count", "3", "--test-count", "2", "--size", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = dir.path().join("metrics.csv");
    let o = matting(&[
        "eval",
        "--data",
        p(&data),
        "--pred-dir",
        p(&data.join("alphas")),
        "--out",
        p(&csv),
        "--name",
        "gt",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "gt");
    for v in &fields[1..5] {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{row}");
    }
    assert_eq!(read_json(&dir.path().join("metrics.config.json"))["config"]["split"], "test");
}

#[test]
fn eval_of_a_checkpoint_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(matting(&["gen-data", "--out", p(&data), "--count", "2", "--size", "32"])
        .status
        .success());
    tiny_checkpoint(&dir.path().join("tiny.ckpt"), false);
    let csv = dir.path().join("m.csv");
    let o = matting(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&dir.path().join("tiny.ckpt")),
        "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("tiny,"));
}

#[test]
fn eval_with_a_missing_prediction_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(matting(&["gen-data", "--out", p(&data), "--count", "2", "--size", "32"])
        .status
        .success());
    let empty = dir.path().join("preds");
    fs::create_dir(&empty).unwrap();
    let o = matting(&[
        "eval",
        "--data",
        p(&data),
        "--pred-dir",
        p(&empty),
        "--out",
        p(&dir.path().join("m.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("00001.png"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_on_the_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grad.csv");
    let o = matting(&["gradcheck", "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + matting::selfcheck::operator_names().len());
}

#[test]
fn gradcheck_fails_with_an_impossible_tolerance() {
    let o = matting(&["gradcheck", "--seeds", "1", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn export_attention_writes_one_pair_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_checkpoint(&d.join("net.ckpt"), true);
    test_image(&d.join("img.png"), 24, 24);
    let mask = Tensor::from_fn(Shape::new(24, 24, 1), |y, x, _| if (6..18).contains(&y) && (5..20).contains(&x) { 1.0 } else { 0.0 });
    io::write_gray(d.join("mask.png"), &mask).unwrap();

    let out = d.join("maps");
    let o = matting(&[
        "export-attention",
        "--checkpoint",
        p(&d.join("net.ckpt")),
        "--image",
        p(&d.join("img.png")),
        "--mask",
        p(&d.join("mask.png")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for (stage, side) in [(0, 24), (1, 12)] {
        for kind in ["enc", "dec"] {
            let map = io::read_gray(out.join(format!("stage{stage}_{kind}.png"))).unwrap();
            assert_eq!(map.shape(), Shape::new(side, side, 1));
            let (lo, hi) = map.min_max();
            assert!(lo == 0.0 && (hi == 1.0 || hi == 0.0), "stage{stage}_{kind}: [{lo}, {hi}]");
        }
    }
    assert!(out.join("export_attention_config.json").exists());
}

#[test]
fn export_attention_needs_an_attention_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_checkpoint(&d.join("plain.ckpt"), false);
    test_image(&d.join("img.png"), 16, 16);
    io::write_trimap(d.join("tri.png"), &Trimap::uniform(16, 16, 0.5).unwrap()).unwrap();
    let o = matting(&[
        "export-attention",
        "--checkpoint",
        p(&d.join("plain.ckpt")),
        "--image",
        p(&d.join("img.png")),
        "--trimap",
        p(&d.join("tri.png")),
        "--out",
        p(&d.join("maps")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("without attention"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(matting(&["gen-data", "--out", "x", "--bogus"]).status.code(), Some(1));
    assert_eq!(matting(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(matting(&["train", "--data", "d", "--out", "o", "--crop", "8", "--no-crop"]).status.code(), Some(1));
    assert_eq!(matting(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_option_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = matting(&["train", "--data", p(dir.path()), "--out", p(dir.path()), "--lr", "-1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_data_errors_that_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    let o = matting(&["trimap", "--mask", p(&missing), "--out", p(&dir.path().join("t.png"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.png"), "{}", stderr(&o));

    let o = matting(&["train", "--data", p(&dir.path().join("no_data")), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_data"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file_and_the_result_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{ "rate": 0.2, "min_radius": 3 }"#).unwrap();
    let mask = dir.path().join("mask.png");
    let m = Tensor::from_fn(Shape::new(30, 30, 1), |y, x, _| if (10..20).contains(&y) && (10..20).contains(&x) { 1.0 } else { 0.0 });
    io::write_gray(&mask, &m).unwrap();

    let out = dir.path().join("t.png");
    let o = matting(&["trimap", "--mask", p(&mask), "--out", p(&out), "--config", p(&cfg), "--rate", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = read_json(&dir.path().join("t.config.json"));
    assert_eq!(resolved["config"]["rate"], 0.1);
    assert_eq!(resolved["config"]["min_radius"], 3);
    assert_eq!(resolved["paths"]["mask"], p(&mask));

    // radius max(3, round(0.1 · 10)) = 3: the unknown band is 6 pixels wide.
    let t = io::read_trimap(&out).unwrap();
    assert_eq!(t.count(0.5), 16 * 16 - 4 * 4);
}

#[test]
fn training_from_the_command_line_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(matting(&["gen-data", "--out", p(&data), "--count", "3", "--size", "32"])
        .status
        .success());
    let run = dir.path().join("run");
    let o = matting(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--epochs",
        "1",
        "--no-crop",
        "--stages",
        "2",
        "--base-channels",
        "4",
        "--convs-per-stage",
        "1",
        "--no-attention",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["final.ckpt", "best.ckpt", "loss.csv", "train_config.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let cfg = read_json(&run.join("train_config.json"));
    assert_eq!(cfg["ablation"], "no_attention");
    assert_eq!(cfg["crop"], Value::Null);
    let ck = Checkpoint::load(run.join("final.ckpt")).unwrap();
    assert!(!ck.params.config.attention);
}
