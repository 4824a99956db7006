use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pano_roi::augmentation::{augment_directory, AugmentOptions};
use pano_roi::evaluation::{
    random_baseline, roi_scores, saliency_metrics, MetricOptions, MetricReport, RoiScores,
    DEFAULT_BORJI_SPLITS,
};
use pano_roi::formats::{load_fixations, write_json, AnnotationFile, RegionsFile, RoisFile};
use pano_roi::geometry::Interpolation;
use pano_roi::optimizer::Acceptance;
use pano_roi::pipeline::{
    detect, load_inputs, replay_manifest, rescale_box, run_batch, run_pipeline, threads_from_env,
    working_candidates, PipelineConfig, SaliencySource,
};
use pano_roi::proposals::{CandidateSet, SaliencyIntegral};
use pano_roi::render::{export_crops, overlay_rois, OverlayStyle};
use pano_roi::saliency::{load_saliency, normalize_saliency, read_saliency};
use pano_roi::{ErpImage, Error};

/// Detect regions of interest in 360° equirectangular images.
#[derive(Parser)]
#[command(name = "pano-roi", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write randomly rotated copies of every image (and saliency map) in a directory.
    Augment(AugmentArgs),
    /// Generate candidate regions for an image.
    Propose(ProposeArgs),
    /// Pick n salient, non-overlapping regions.
    Select(SelectArgs),
    /// Draw RoIs onto the image and export perspective crops.
    Render(RenderArgs),
    /// Score RoIs against annotations, or a saliency map against ground truth.
    Eval(EvalArgs),
    /// Run saliency, proposals, selection and rendering in one go.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AcceptanceArg {
    First,
    Best,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpolationArg {
    Bilinear,
    Nearest,
}

/// Settings shared by the commands that run proposals or selection. Flags override the
/// config file, which overrides the defaults.
#[derive(Args, Default)]
struct Tuning {
    /// TOML or JSON file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of RoIs.
    #[arg(long)]
    n: Option<usize>,
    /// Balance between saliency (1) and overlap (0).
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, value_enum)]
    acceptance: Option<AcceptanceArg>,
    /// Segmentation scale.
    #[arg(long)]
    k: Option<f64>,
    /// Smallest segment, in pixels.
    #[arg(long)]
    min_size: Option<usize>,
    /// Pre-smoothing for segmentation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Largest field of view a region may span, in degrees.
    #[arg(long)]
    nfov_deg: Option<f64>,
    /// Height of the grid proposals and selection run on.
    #[arg(long)]
    working_height: Option<usize>,
}

impl Tuning {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.n {
            c.n = v;
        }
        if let Some(v) = self.a {
            c.a = v;
        }
        if let Some(v) = self.acceptance {
            c.acceptance = match v {
                AcceptanceArg::First => Acceptance::FirstImprovement,
                AcceptanceArg::Best => Acceptance::BestImprovement,
            };
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.min_size {
            c.min_size = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.nfov_deg {
            c.nfov_deg = v;
        }
        if let Some(v) = self.working_height {
            c.working_height = v;
        }
        Ok(c)
    }
}

fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    Ok(parsed.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?)
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of `<id>.png|jpg` images with optional `<id>_sal.png|pgm|bin` maps.
    #[arg(long)]
    input_dir: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Rotated copies per image.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rotate about the vertical axis only.
    #[arg(long)]
    horizontal_only: bool,
    #[arg(long, value_enum, default_value = "bilinear")]
    interpolation: InterpolationArg,
}

#[derive(Args)]
struct ProposeArgs {
    #[arg(long)]
    image: PathBuf,
    /// Output regions JSON.
    #[arg(long)]
    out: PathBuf,
    /// Attach the saliency mass of each region (`builtin` or a map file).
    #[arg(long)]
    saliency: Option<SaliencySource>,
    /// Keep regions wider or taller than the field of view.
    #[arg(long)]
    no_fov_filter: bool,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    image: PathBuf,
    /// `builtin` or a saliency map file.
    #[arg(long)]
    saliency: Option<SaliencySource>,
    /// Precomputed regions JSON; proposals are generated when absent.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Output RoIs JSON.
    #[arg(long)]
    out: PathBuf,
    /// Record every accepted swap.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    rois: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Write overlay.png (default when neither output is chosen).
    #[arg(long)]
    overlay: bool,
    /// Write crops/crop_NN.png (default when neither output is chosen).
    #[arg(long)]
    crops: bool,
    #[arg(long, default_value_t = 3)]
    thickness: usize,
    /// Crop pixels per unit of tangent plane; defaults to the image's angular resolution.
    #[arg(long)]
    density: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Roi,
    Saliency,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    mode: EvalMode,
    /// RoIs JSON (roi mode) or predicted saliency map (saliency mode).
    #[arg(long)]
    pred: PathBuf,
    /// Annotation JSON files (roi mode) or the ground-truth saliency map (saliency mode).
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Fixations as `[[x, y], ...]` (saliency mode).
    #[arg(long)]
    fixations: Option<PathBuf>,
    /// Score without cos-latitude weighting.
    #[arg(long)]
    no_latitude_weighting: bool,
    #[arg(long, default_value_t = DEFAULT_BORJI_SPLITS)]
    borji_splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also score n regions drawn at random from this regions JSON (roi mode).
    #[arg(long)]
    baseline_regions: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// One or more images; with several, each gets its own subdirectory of --out-dir.
    #[arg(long, num_args = 1.., required_unless_present = "replay")]
    image: Vec<PathBuf>,
    /// `builtin` or a saliency map file (single image only).
    #[arg(long)]
    saliency: Option<SaliencySource>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    no_overlay: bool,
    #[arg(long)]
    no_crops: bool,
    #[arg(long)]
    trace: bool,
    /// Rerun the configuration recorded in a manifest.
    #[arg(long, conflicts_with = "image")]
    replay: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

fn augment(args: &AugmentArgs) -> anyhow::Result<()> {
    let opts = AugmentOptions {
        count: args.count,
        seed: args.seed,
        horizontal_only: args.horizontal_only,
        interpolation: match args.interpolation {
            InterpolationArg::Bilinear => Interpolation::Bilinear,
            InterpolationArg::Nearest => Interpolation::Nearest,
        },
    };
    let records = augment_directory(&args.input_dir, &args.output_dir, &opts)?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    let path = args.output_dir.join("augmentations.jsonl");
    std::fs::write(&path, lines)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    log::info!(
        "wrote {} rotated copies to {}",
        records.len(),
        args.output_dir.display()
    );
    Ok(())
}

fn propose(args: &ProposeArgs) -> anyhow::Result<()> {
    let mut config = args.tuning.resolve()?;
    config.image = args.image.clone();
    if let Some(s) = &args.saliency {
        config.saliency = s.clone();
    }
    config.validate()?;
    let (source, working, saliency) = if args.saliency.is_some() {
        let (s, w, m) = load_inputs(&config)?;
        (s, w, Some(m))
    } else {
        let s = ErpImage::load(&args.image)?;
        let wd = pano_roi::pipeline::working_dims(s.dims(), config.working_height);
        let w = if wd == s.dims() {
            s.clone()
        } else {
            s.resize(wd)
        };
        (s, w, None)
    };
    let source_dims = source.dims();
    let wd = working.dims();
    let mut cands = if args.no_fov_filter {
        pano_roi::proposals::propose(&working, &config.proposal_params())?
    } else {
        working_candidates(&working, &config, None)?.1
    };
    if let Some(m) = saliency {
        cands = cands.scored(&SaliencyIntegral::new(&normalize_saliency(&m)?)?);
    }
    let boxes = cands
        .regions()
        .iter()
        .map(|b| rescale_box(b, wd, source_dims))
        .collect();
    let out = match cands.scores() {
        Some(s) => CandidateSet::with_scores(boxes, s.to_vec())?,
        None => CandidateSet::new(boxes),
    };
    write_json(&args.out, &RegionsFile::from_candidates(&out, source_dims))?;
    log::info!("wrote {} regions to {}", out.len(), args.out.display());
    Ok(())
}

fn select(args: &SelectArgs) -> anyhow::Result<()> {
    let mut config = args.tuning.resolve()?;
    config.image = args.image.clone();
    if let Some(s) = &args.saliency {
        config.saliency = s.clone();
    }
    config.validate()?;
    let regions = match &args.regions {
        Some(p) => {
            let dims = ErpImage::probe(&args.image)?;
            let file = RegionsFile::load(p, Some(dims))?;
            Some((file.candidates()?, file.dims()?))
        }
        None => None,
    };
    let det = detect(&config, regions.as_ref().map(|(c, d)| (c, *d)))?;
    write_json(&args.out, &det.rois_file(args.trace))?;
    log::info!(
        "gamma {:.6} after {} swaps",
        det.selection.gamma,
        det.selection.trace.len()
    );
    Ok(())
}

fn render(args: &RenderArgs) -> anyhow::Result<()> {
    let img = ErpImage::load(&args.image)?;
    let rois_file = RoisFile::load(&args.rois)?;
    if rois_file.dims()? != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims().to_string(),
            actual: format!("{}x{}", rois_file.width, rois_file.height),
        }
        .into());
    }
    let rois = rois_file.boxes()?;
    let both = !args.overlay && !args.crops;
    let overlay = if args.overlay || both {
        let style = OverlayStyle {
            thickness: args.thickness,
            ..OverlayStyle::default()
        };
        Some(overlay_rois(&img, &rois, &style)?)
    } else {
        None
    };
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    if let Some(o) = overlay {
        o.save_png(&args.out_dir.join("overlay.png"))?;
    }
    if args.crops || both {
        export_crops(&img, &rois, &args.out_dir.join("crops"), args.density)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AnnotationScore {
    image_id: String,
    annotator_id: String,
    #[serde(flatten)]
    scores: RoiScores,
}

#[derive(Serialize)]
struct RoiReport {
    schema: &'static str,
    per_annotation: Vec<AnnotationScore>,
    mean: RoiScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    random_baseline: Option<RoiScores>,
}

#[derive(Serialize)]
struct SaliencyReport {
    schema: &'static str,
    latitude_weighting: bool,
    borji_splits: usize,
    seed: u64,
    #[serde(flatten)]
    metrics: MetricReport,
}

fn mean_scores(all: &[RoiScores]) -> RoiScores {
    let n = all.len() as f64;
    let sum = |f: fn(&RoiScores) -> f64| all.iter().map(f).sum::<f64>() / n;
    RoiScores {
        eval1_l2: sum(|s| s.eval1_l2),
        eval2_l2: sum(|s| s.eval2_l2),
        eval1_iou: sum(|s| s.eval1_iou),
        eval2_iou: sum(|s| s.eval2_iou),
    }
}

fn print_roi_row(label: &str, s: &RoiScores) {
    println!(
        "{label:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        s.eval1_l2, s.eval2_l2, s.eval1_iou, s.eval2_iou
    );
}

fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let report = match args.mode {
        EvalMode::Roi => {
            let pred = RoisFile::load(&args.pred)?;
            let dims = pred.dims()?;
            let boxes = pred.boxes()?;
            let mut per = Vec::new();
            let mut annotations = Vec::new();
            for path in &args.gt {
                let a = AnnotationFile::load(path)?;
                let anno = a.boxes()?;
                for b in &anno {
                    b.check_within(dims)?;
                }
                per.push(AnnotationScore {
                    image_id: a.image_id.clone(),
                    annotator_id: a.annotator_id.clone(),
                    scores: roi_scores(&boxes, &anno, dims)?,
                });
                annotations.push(anno);
            }
            let random = match &args.baseline_regions {
                Some(p) => {
                    let cands = RegionsFile::load(p, Some(dims))?.candidates()?;
                    let picked = random_baseline(&cands, boxes.len(), args.seed)?;
                    let all = annotations
                        .iter()
                        .map(|anno| roi_scores(&picked, anno, dims))
                        .collect::<pano_roi::Result<Vec<_>>>()?;
                    Some(mean_scores(&all))
                }
                None => None,
            };
            let scores: Vec<RoiScores> = per.iter().map(|p| p.scores).collect();
            let report = RoiReport {
                schema: "pano-roi/roi-eval/v1",
                mean: mean_scores(&scores),
                per_annotation: per,
                random_baseline: random,
            };
            if !args.json {
                println!(
                    "{:<24} {:>9} {:>9} {:>9} {:>9}",
                    "", "Eval1 L2", "Eval2 L2", "Eval1 IoU", "Eval2 IoU"
                );
                for p in &report.per_annotation {
                    print_roi_row(&format!("{}/{}", p.image_id, p.annotator_id), &p.scores);
                }
                print_roi_row("mean", &report.mean);
                if let Some(r) = &report.random_baseline {
                    print_roi_row("random baseline", r);
                }
            }
            serde_json::to_value(&report)?
        }
        EvalMode::Saliency => {
            if args.gt.len() != 1 {
                bail!(Error::InvalidInput(
                    "saliency mode takes exactly one --gt map".into()
                ));
            }
            let fix_path = args
                .fixations
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("saliency mode needs --fixations".into()))?;
            let gt = read_saliency(&args.gt[0])?;
            let pred = load_saliency(&args.pred, gt.dims())?;
            let fix = load_fixations(fix_path, gt.dims())?;
            let opts = MetricOptions {
                latitude_weighting: !args.no_latitude_weighting,
                borji_splits: args.borji_splits,
                seed: args.seed,
            };
            let m = saliency_metrics(&pred, &gt, &fix, &opts)?;
            if m.nss_degenerate {
                log::warn!("prediction is constant; NSS reported as 0");
            }
            if !args.json {
                println!(
                    "{:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                    "AUC-J", "AUC-B", "NSS", "CC", "SIM", "KLD"
                );
                println!(
                    "{:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                    m.auc_judd, m.auc_borji, m.nss, m.cc, m.sim, m.kld
                );
            }
            serde_json::to_value(SaliencyReport {
                schema: "pano-roi/saliency-eval/v1",
                latitude_weighting: opts.latitude_weighting,
                borji_splits: opts.borji_splits,
                seed: opts.seed,
                metrics: m,
            })?
        }
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn pipeline(args: &PipelineArgs) -> anyhow::Result<()> {
    if let Some(m) = &args.replay {
        let out = replay_manifest(m, args.out_dir.as_deref())?;
        log::info!("replayed into {} files", out.files.len());
        return Ok(());
    }
    let mut base = args.tuning.resolve()?;
    if let Some(s) = &args.saliency {
        base.saliency = s.clone();
    }
    if let Some(d) = &args.out_dir {
        base.out_dir = d.clone();
    }
    base.overlay &= !args.no_overlay;
    base.crops &= !args.no_crops;
    base.trace |= args.trace;

    if let [image] = args.image.as_slice() {
        let config = PipelineConfig {
            image: image.clone(),
            ..base
        };
        let out = run_pipeline(&config)?;
        log::info!(
            "gamma {:.6}, wrote {}",
            out.selection.gamma,
            config.out_dir.display()
        );
        return Ok(());
    }
    if base.saliency != SaliencySource::Builtin {
        bail!(Error::InvalidInput(
            "batch runs use the builtin saliency".into()
        ));
    }
    let mut stems = std::collections::BTreeSet::new();
    let configs = args
        .image
        .iter()
        .map(|img| {
            let stem = img
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !stems.insert(stem.clone()) {
                bail!(Error::InvalidInput(format!(
                    "two inputs share the name {stem:?}"
                )));
            }
            Ok(PipelineConfig {
                image: img.clone(),
                out_dir: base.out_dir.join(&stem),
                ..base.clone()
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let results = run_batch(&configs, threads_from_env())?;
    let mut first_err = None;
    for (config, r) in configs.iter().zip(results) {
        match r {
            Ok(_) => log::info!("{}: done", config.image.display()),
            Err(e) => {
                eprintln!("{}: {e}", config.image.display());
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

/// Exit status per error class: 3 bad input, 4 I/O, 5 no usable signal, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Domain(_)
                | Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Contract(_)
                | Error::Json(_) => 3,
                Error::File { .. } | Error::Io(_) | Error::Image(_) => 4,
                Error::DegenerateInput(_) | Error::InsufficientCandidates { .. } => 5,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Augment(a) => augment(a),
        Command::Propose(a) => propose(a),
        Command::Select(a) => select(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
