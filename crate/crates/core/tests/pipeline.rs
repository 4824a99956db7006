use std::path::Path;

use pano_roi::augmentation::{angles_for_seed, augment_directory, AugmentOptions};
use pano_roi::formats::RoisFile;
use pano_roi::geometry::Interpolation;
use pano_roi::pipeline::{
    replay_manifest, run_batch, run_pipeline, PipelineConfig, SaliencySource, Stage, MANIFEST_FILE,
    ROIS_FILE,
};
use pano_roi::saliency::read_saliency;
use pano_roi::{ErpDims, ErpImage, SaliencyMap};

fn disk_scene(path: &Path) -> (f64, f64) {
    let d = ErpDims::from_height(256).unwrap();
    let (cx, cy) = (300.0, 110.0);
    let img = ErpImage::from_fn(d, 3, |x, y, c| {
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if r2 < 18.0 * 18.0 {
            0.98
        } else {
            0.15 + 0.05 * ((x / 16 + y / 16 + c) % 3) as f64
        }
    })
    .unwrap();
    img.save_png(path).unwrap();
    (cx, cy)
}

fn base_config(dir: &Path, image: &Path) -> PipelineConfig {
    PipelineConfig {
        image: image.to_path_buf(),
        out_dir: dir.join("out"),
        n: 2,
        a: 0.1,
        min_size: 30,
        ..PipelineConfig::default()
    }
}

#[test]
fn bright_disk_is_found_first() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("disk.png");
    let (cx, cy) = disk_scene(&input);
    let out = run_pipeline(&base_config(dir.path(), &input)).unwrap();
    assert_eq!(out.rois.len(), 2);
    assert!(out.selection.scores.iter().all(|&g| g > 0.0));
    let top = (0..2)
        .max_by(|&i, &j| out.selection.scores[i].total_cmp(&out.selection.scores[j]))
        .unwrap();
    let b = out.rois[top];
    assert!(
        (b.x as f64) <= cx && cx < b.right() as f64 && (b.y as f64) <= cy && cy < b.bottom() as f64,
        "top RoI {b:?} misses the disk"
    );
    let written = RoisFile::load(&dir.path().join("out").join(ROIS_FILE)).unwrap();
    assert_eq!(written.boxes().unwrap(), out.rois);
}

#[test]
fn rerun_and_replay_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("disk.png");
    disk_scene(&input);
    let config = base_config(dir.path(), &input);
    run_pipeline(&config).unwrap();
    let first = std::fs::read(config.out_dir.join(ROIS_FILE)).unwrap();

    let again = PipelineConfig {
        out_dir: dir.path().join("again"),
        ..config.clone()
    };
    run_pipeline(&again).unwrap();
    assert_eq!(std::fs::read(again.out_dir.join(ROIS_FILE)).unwrap(), first);

    let replay = dir.path().join("replay");
    replay_manifest(&config.out_dir.join(MANIFEST_FILE), Some(&replay)).unwrap();
    assert_eq!(std::fs::read(replay.join(ROIS_FILE)).unwrap(), first);
}

#[test]
fn external_saliency_at_another_size_is_resampled() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("disk.png");
    let (cx, cy) = disk_scene(&input);
    let small = ErpDims::from_height(64).unwrap();
    // map at a quarter of the image size, peaked on the disk
    let map = SaliencyMap::from_fn(small, |x, y, _| {
        let (dx, dy) = (x as f64 * 4.0 + 2.0 - cx, y as f64 * 4.0 + 2.0 - cy);
        (-(dx * dx + dy * dy) / 800.0).exp()
    })
    .unwrap();
    let sal = dir.path().join("sal.bin");
    map.save(&sal).unwrap();
    assert_eq!(read_saliency(&sal).unwrap().dims(), small);
    let config = PipelineConfig {
        saliency: SaliencySource::File(sal),
        ..base_config(dir.path(), &input)
    };
    let out = run_pipeline(&config).unwrap();
    assert!(out.selection.scores.iter().any(|&g| g > 0.2));
}

#[test]
fn failures_name_their_stage_and_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("disk.png");
    disk_scene(&input);

    let missing_sal = PipelineConfig {
        saliency: SaliencySource::File(dir.path().join("nope.png")),
        ..base_config(dir.path(), &input)
    };
    let err = run_pipeline(&missing_sal).unwrap_err();
    assert_eq!(err.stage, Stage::Saliency);
    assert!(!missing_sal.out_dir.exists());

    let too_many = PipelineConfig {
        n: 100_000,
        ..base_config(dir.path(), &input)
    };
    let err = run_pipeline(&too_many).unwrap_err();
    assert_eq!(err.stage, Stage::Selection);
    assert!(!too_many.out_dir.exists());

    // builtin saliency needs enough pyramid levels
    let tiny = dir.path().join("tiny.png");
    ErpImage::from_fn(ErpDims::from_height(32).unwrap(), 3, |_, _, _| 0.5)
        .unwrap()
        .save_png(&tiny)
        .unwrap();
    let err = run_pipeline(&base_config(dir.path(), &tiny)).unwrap_err();
    assert_eq!(err.stage, Stage::Saliency);
}

#[test]
fn batch_matches_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("disk.png");
    disk_scene(&input);
    let configs: Vec<PipelineConfig> = (0..3)
        .map(|i| PipelineConfig {
            out_dir: dir.path().join(format!("b{i}")),
            ..base_config(dir.path(), &input)
        })
        .collect();
    let results = run_batch(&configs, Some(2)).unwrap();
    let single = run_pipeline(&base_config(dir.path(), &input)).unwrap();
    for r in results {
        assert_eq!(r.unwrap().rois, single.rois);
    }
}

#[test]
fn augment_directory_writes_reproducible_copies() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    let d = ErpDims::from_height(32).unwrap();
    ErpImage::from_fn(d, 3, |x, y, c| ((x + y + c) % 7) as f64 / 7.0)
        .unwrap()
        .save_png(&input.join("a.png"))
        .unwrap();
    SaliencyMap::from_fn(d, |x, _, _| x as f64 / 64.0)
        .unwrap()
        .save(&input.join("a_sal.png"))
        .unwrap();
    ErpImage::from_fn(d, 3, |_, y, _| y as f64 / 32.0)
        .unwrap()
        .save_png(&input.join("b.png"))
        .unwrap();

    let opts = AugmentOptions {
        count: 3,
        seed: 42,
        horizontal_only: false,
        interpolation: Interpolation::Bilinear,
    };
    let out = dir.path().join("out");
    let records = augment_directory(&input, &out, &opts).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(records[0].source_id, "a");
    assert_eq!(records[3].source_id, "b");
    for r in &records {
        assert_eq!(angles_for_seed(r.seed, false), r.angles());
    }
    let files: Vec<String> = {
        let mut v: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(files.len(), 9, "{files:?}");
    assert!(files.contains(&"a_rot002_sal.png".to_string()));

    let again = augment_directory(&input, &dir.path().join("out2"), &opts).unwrap();
    assert_eq!(again, records);
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(
        bytes(&out.join("a_rot001.png")),
        bytes(&dir.path().join("out2/a_rot001.png"))
    );

    let yaw = augment_directory(
        &input,
        &dir.path().join("yaw"),
        &AugmentOptions {
            horizontal_only: true,
            ..opts
        },
    )
    .unwrap();
    assert!(yaw.iter().all(|r| r.phi == 0.0 && r.psi == 0.0));
}
