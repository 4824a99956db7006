use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pano_roi::{ErpDims, ErpImage, SaliencyMap};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pano-roi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene(dir: &Path) -> PathBuf {
    let d = ErpDims::from_height(256).unwrap();
    let path = dir.join("scene.png");
    ErpImage::from_fn(d, 3, |x, y, c| {
        let near = |cx: f64, cy: f64| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < 400.0;
        if near(120.0, 100.0) || near(380.0, 150.0) {
            0.95
        } else {
            0.2 + 0.04 * ((x / 12 + y / 12 + c) % 4) as f64
        }
    })
    .unwrap()
    .save_png(&path)
    .unwrap();
    path
}

#[test]
fn help_lists_subcommands() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["augment", "propose", "select", "render", "eval", "pipeline"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    assert_eq!(run(&["select", "--bogus"]).status.code(), Some(2));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let image = scene(dir.path());
    let regions = dir.path().join("regions.json");
    let rois = dir.path().join("rois.json");
    let rendered = dir.path().join("render");

    ok(&[
        "propose",
        "--image",
        s(&image),
        "--out",
        s(&regions),
        "--min-size",
        "30",
    ]);
    let r = json(&regions);
    assert_eq!(r["width"], 512);
    assert!(r["regions"].as_array().unwrap().len() >= 3);

    ok(&[
        "select",
        "--image",
        s(&image),
        "--regions",
        s(&regions),
        "--out",
        s(&rois),
        "--n",
        "3",
        "--a",
        "0.2",
        "--trace",
    ]);
    let sel = json(&rois);
    assert_eq!(sel["regions"].as_array().unwrap().len(), 3);
    assert!(sel["gamma"].as_f64().unwrap() <= sel["initial_gamma"].as_f64().unwrap());
    assert!(sel["trace"].is_array());

    ok(&[
        "render",
        "--image",
        s(&image),
        "--rois",
        s(&rois),
        "--out-dir",
        s(&rendered),
    ]);
    assert!(rendered.join("overlay.png").is_file());
    for i in 0..3 {
        assert!(rendered.join(format!("crops/crop_{i:02}.png")).is_file());
    }

    // predictions scored against themselves as an annotation
    let anno = dir.path().join("anno.json");
    let regions_only: Vec<Value> = sel["regions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| serde_json::json!({"x": r["x"], "y": r["y"], "w": r["w"], "h": r["h"]}))
        .collect();
    std::fs::write(
        &anno,
        serde_json::json!({"image_id": "scene", "annotator_id": "a1", "regions": regions_only})
            .to_string(),
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = ok(&[
        "eval",
        "--mode",
        "roi",
        "--pred",
        s(&rois),
        "--gt",
        s(&anno),
        "--baseline-regions",
        s(&regions),
        "--out",
        s(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean"));
    let rep = json(&report);
    assert_eq!(rep["mean"]["eval1_iou"], 1.0);
    assert_eq!(rep["mean"]["eval2_l2"], 0.0);
    assert!(rep["random_baseline"].is_object());
}

#[test]
fn pipeline_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let image = scene(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&out),
        "--n",
        "2",
        "--min-size",
        "30",
    ]);
    for f in [
        "rois.json",
        "overlay.png",
        "manifest.json",
        "crops/crop_00.png",
        "crops/crop_01.png",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let replay = dir.path().join("replay");
    ok(&[
        "pipeline",
        "--replay",
        s(&out.join("manifest.json")),
        "--out-dir",
        s(&replay),
    ]);
    assert_eq!(
        std::fs::read(out.join("rois.json")).unwrap(),
        std::fs::read(replay.join("rois.json")).unwrap()
    );

    let lean = dir.path().join("lean");
    ok(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&lean),
        "--n",
        "2",
        "--min-size",
        "30",
        "--no-overlay",
        "--no-crops",
    ]);
    assert!(lean.join("rois.json").is_file());
    assert!(!lean.join("overlay.png").exists());
    assert!(!lean.join("crops").exists());
}

#[test]
fn batch_pipeline_writes_one_dir_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let image = scene(dir.path());
    let second = dir.path().join("other.png");
    std::fs::copy(&image, &second).unwrap();
    let out = dir.path().join("batch");
    let status = bin()
        .env("PANO_ROI_THREADS", "2")
        .args([
            "pipeline",
            "--image",
            s(&image),
            s(&second),
            "--out-dir",
            s(&out),
            "--n",
            "2",
            "--min-size",
            "30",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(out.join("scene/rois.json")).unwrap(),
        std::fs::read(out.join("other/rois.json")).unwrap()
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.png");
    let res = run(&["pipeline", "--image", s(&missing), "--out-dir", s(&out)]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing.png"));
    assert!(!out.exists());

    let image = scene(dir.path());
    let res = run(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&out),
        "--n",
        "1",
    ]);
    assert_eq!(res.status.code(), Some(3));
    let res = run(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&out),
        "--a",
        "1.5",
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let image = scene(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n = 4\na = 0.3\nmin_size = 30\n").unwrap();
    let out = dir.path().join("out");
    ok(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&out),
        "--config",
        s(&cfg),
        "--n",
        "2",
    ]);
    let rois = json(&out.join("rois.json"));
    assert_eq!(rois["regions"].as_array().unwrap().len(), 2);
    assert_eq!(rois["params"]["a"], 0.3);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"nn": 3}"#).unwrap();
    let res = run(&[
        "pipeline",
        "--image",
        s(&image),
        "--out-dir",
        s(&out),
        "--config",
        s(&bad),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn augment_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    let d = ErpDims::from_height(32).unwrap();
    ErpImage::from_fn(d, 3, |x, y, c| ((x * 3 + y + c) % 9) as f64 / 9.0)
        .unwrap()
        .save_png(&input.join("p.png"))
        .unwrap();
    let out = dir.path().join("aug");
    ok(&[
        "augment",
        "--input-dir",
        s(&input),
        "--output-dir",
        s(&out),
        "--count",
        "2",
        "--seed",
        "7",
    ]);
    let lines: Vec<Value> = std::fs::read_to_string(out.join("augmentations.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["source_id"], "p");
    assert!(out.join("p_rot000.png").is_file() && out.join("p_rot001.png").is_file());
}

#[test]
fn saliency_eval_reports_all_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = ErpDims::from_height(16).unwrap();
    let gt = dir.path().join("gt.bin");
    let pred = dir.path().join("pred.bin");
    SaliencyMap::from_fn(d, |x, y, _| {
        0.01 + ((x as f64 - 10.0).powi(2) + (y as f64 - 8.0).powi(2) < 9.0) as u8 as f64
    })
    .unwrap()
    .save(&gt)
    .unwrap();
    SaliencyMap::from_fn(d, |x, y, _| {
        (-((x as f64 - 11.0).powi(2) + (y as f64 - 8.0).powi(2)) / 10.0).exp()
    })
    .unwrap()
    .save(&pred)
    .unwrap();
    let fix = dir.path().join("fix.json");
    std::fs::write(&fix, "[[10,8],[9,7],[11,9]]").unwrap();
    let out = ok(&[
        "eval",
        "--mode",
        "saliency",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--fixations",
        s(&fix),
        "--json",
    ]);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    let m = &rep;
    for k in ["auc_judd", "auc_borji", "nss", "cc", "sim", "kld"] {
        assert!(m[k].is_number(), "missing {k}");
    }
    assert!(m["auc_judd"].as_f64().unwrap() > 0.9);
    assert!(m["cc"].as_f64().unwrap() > 0.3);

    let res = run(&[
        "eval",
        "--mode",
        "saliency",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
    ]);
    assert_eq!(res.status.code(), Some(3));
}
