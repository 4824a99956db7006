//! End-to-end RoI detection: saliency, normalization, proposals, NFoV filtering, greedy
//! selection and rendering, with a manifest that is enough to replay the run.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_json, write_json, RoisFile};
use crate::geometry::RegionBox;
use crate::optimizer::{greedy_select, Acceptance, RoiSelection, SIoUParams, DEFAULT_EPSILON};
use crate::proposals::{
    fov_filter, propose, CandidateSet, ProposalParams, SaliencyIntegral, DEFAULT_NFOV_DEG,
};
use crate::raster::{ErpDims, ErpImage};
use crate::render::{export_crops, overlay_rois, OverlayStyle};
use crate::saliency::{
    fallback_saliency, load_saliency, normalize_saliency, SaliencyMap, DEFAULT_CENTER_LEVELS,
};

pub const MANIFEST_SCHEMA: &str = "pano-roi/manifest/v1";
pub const THREADS_ENV: &str = "PANO_ROI_THREADS";
pub const DEFAULT_WORKING_HEIGHT: usize = 512;

pub const ROIS_FILE: &str = "rois.json";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const CROPS_DIR: &str = "crops";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the saliency map comes from: `"builtin"` or a file path.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum SaliencySource {
    #[default]
    Builtin,
    File(PathBuf),
}

impl From<String> for SaliencySource {
    fn from(s: String) -> Self {
        if s == "builtin" {
            SaliencySource::Builtin
        } else {
            SaliencySource::File(s.into())
        }
    }
}

impl From<SaliencySource> for String {
    fn from(s: SaliencySource) -> Self {
        match s {
            SaliencySource::Builtin => "builtin".into(),
            SaliencySource::File(p) => p.to_string_lossy().into_owned(),
        }
    }
}

impl std::str::FromStr for SaliencySource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.to_string().into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub image: PathBuf,
    pub saliency: SaliencySource,
    pub out_dir: PathBuf,
    pub n: usize,
    pub a: f64,
    pub epsilon: f64,
    pub acceptance: Acceptance,
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
    pub nfov_deg: f64,
    /// Proposals and selection run at `2h x h`; larger inputs are downsampled.
    pub working_height: usize,
    pub center_levels: Vec<usize>,
    pub overlay: bool,
    pub crops: bool,
    pub trace: bool,
    pub overlay_thickness: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = ProposalParams::default();
        Self {
            image: PathBuf::new(),
            saliency: SaliencySource::Builtin,
            out_dir: PathBuf::from("out"),
            n: 5,
            a: 0.03,
            epsilon: DEFAULT_EPSILON,
            acceptance: Acceptance::FirstImprovement,
            k: p.k,
            min_size: p.min_size,
            sigma: p.sigma,
            nfov_deg: DEFAULT_NFOV_DEG,
            working_height: DEFAULT_WORKING_HEIGHT,
            center_levels: DEFAULT_CENTER_LEVELS.to_vec(),
            overlay: true,
            crops: true,
            trace: false,
            overlay_thickness: OverlayStyle::default().thickness,
        }
    }
}

impl PipelineConfig {
    pub fn selection_params(&self) -> SIoUParams {
        SIoUParams {
            n: self.n,
            a: self.a,
            epsilon: self.epsilon,
            acceptance: self.acceptance,
        }
    }

    pub fn proposal_params(&self) -> ProposalParams {
        ProposalParams {
            k: self.k,
            min_size: self.min_size,
            sigma: self.sigma,
            nfov_deg: self.nfov_deg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection_params().validate()?;
        self.proposal_params().validate()?;
        if self.working_height == 0 {
            return Err(Error::InvalidInput(
                "working_height must be positive".into(),
            ));
        }
        if self.center_levels.is_empty() {
            return Err(Error::InvalidInput("center_levels is empty".into()));
        }
        if self.image.as_os_str().is_empty() {
            return Err(Error::InvalidInput("no input image given".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Saliency,
    Proposals,
    Selection,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Saliency => "saliency",
            Stage::Proposals => "proposals",
            Stage::Selection => "selection",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// Written next to the outputs; replaying `config` regenerates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub source_dims: ErpDims,
    pub working_dims: ErpDims,
    pub candidates: usize,
    pub candidates_in_fov: usize,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Selection at working resolution.
    pub selection: RoiSelection,
    /// Selected boxes in source-image pixels.
    pub rois: Vec<RegionBox>,
    pub source_dims: ErpDims,
    pub working_dims: ErpDims,
    pub files: Vec<PathBuf>,
}

/// Working-resolution size for a source image.
pub fn working_dims(source: ErpDims, working_height: usize) -> ErpDims {
    if source.height <= working_height {
        source
    } else {
        ErpDims {
            width: 2 * working_height,
            height: working_height,
        }
    }
}

/// Maps a box between grids by scaling its edges and rounding, keeping at least one pixel.
pub fn rescale_box(b: &RegionBox, from: ErpDims, to: ErpDims) -> RegionBox {
    if from == to {
        return *b;
    }
    let s = to.height as f64 / from.height as f64;
    let edge = |v: usize, limit: usize| ((v as f64 * s).round() as usize).min(limit);
    let x0 = edge(b.x, to.width - 1);
    let y0 = edge(b.y, to.height - 1);
    let x1 = edge(b.right(), to.width).max(x0 + 1);
    let y1 = edge(b.bottom(), to.height).max(y0 + 1);
    RegionBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    }
}

/// Everything computed for one image, before anything is written.
#[derive(Debug, Clone)]
pub struct Detection {
    pub source: ErpImage,
    /// Selection at working resolution.
    pub selection: RoiSelection,
    /// Selected boxes in source-image pixels.
    pub rois: Vec<RegionBox>,
    pub working_dims: ErpDims,
    pub candidates: usize,
    pub candidates_in_fov: usize,
}

impl Detection {
    pub fn source_dims(&self) -> ErpDims {
        self.source.dims()
    }

    pub fn rois_file(&self, include_trace: bool) -> RoisFile {
        RoisFile::new(
            &self.selection,
            &self.rois,
            self.source_dims(),
            include_trace,
        )
    }
}

/// Loads the image at source and working resolution together with its saliency map on
/// the working grid.
pub fn load_inputs(
    config: &PipelineConfig,
) -> std::result::Result<(ErpImage, ErpImage, SaliencyMap), PipelineError> {
    config.validate().at(Stage::Config)?;
    let source = ErpImage::load(&config.image).at(Stage::Load)?;
    let wd = working_dims(source.dims(), config.working_height);
    let working = if wd == source.dims() {
        source.clone()
    } else {
        source.resize(wd)
    };
    let saliency = match &config.saliency {
        SaliencySource::Builtin => fallback_saliency(&working, &config.center_levels),
        SaliencySource::File(p) => load_saliency(p, wd),
    }
    .at(Stage::Saliency)?;
    Ok((source, working, saliency))
}

/// Candidates on the working grid: the given regions rescaled from their own grid, or
/// fresh proposals. Either way only boxes within the field of view are kept.
pub fn working_candidates(
    working: &ErpImage,
    config: &PipelineConfig,
    regions: Option<(&CandidateSet, ErpDims)>,
) -> Result<(usize, CandidateSet)> {
    let wd = working.dims();
    let raw = match regions {
        Some((set, from)) => {
            set.check_within(from)?;
            CandidateSet::new(
                set.regions()
                    .iter()
                    .map(|b| rescale_box(b, from, wd))
                    .collect(),
            )
        }
        None => propose(working, &config.proposal_params())?,
    };
    Ok((raw.len(), fov_filter(&raw, wd, config.nfov_deg)))
}

/// Saliency, proposals and greedy selection for one image; writes nothing.
pub fn detect(
    config: &PipelineConfig,
    regions: Option<(&CandidateSet, ErpDims)>,
) -> std::result::Result<Detection, PipelineError> {
    let (source, working, saliency) = load_inputs(config)?;
    let wd = working.dims();
    let normalized = normalize_saliency(&saliency).at(Stage::Saliency)?;
    let integral = SaliencyIntegral::new(&normalized).at(Stage::Saliency)?;

    let (candidates, filtered) =
        working_candidates(&working, config, regions).at(Stage::Proposals)?;
    let filtered = filtered.scored(&integral);
    log::info!(
        "{}: {} candidates, {} within the field of view",
        config.image.display(),
        candidates,
        filtered.len()
    );

    let selection =
        greedy_select(&filtered, &integral, &config.selection_params()).at(Stage::Selection)?;
    let rois = selection
        .regions
        .iter()
        .map(|b| rescale_box(b, wd, source.dims()))
        .collect();
    Ok(Detection {
        source,
        selection,
        rois,
        working_dims: wd,
        candidates,
        candidates_in_fov: filtered.len(),
    })
}

/// Runs the whole pipeline for one image and writes its artifacts into `config.out_dir`.
///
/// Every input is read and every computation finished before the output directory is
/// touched, so a failing run leaves nothing behind.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineOutput, PipelineError> {
    let det = detect(config, None)?;
    let sd = det.source_dims();

    let overlay = if config.overlay {
        let style = OverlayStyle {
            thickness: config.overlay_thickness,
            ..OverlayStyle::default()
        };
        Some(overlay_rois(&det.source, &det.rois, &style).at(Stage::Output)?)
    } else {
        None
    };

    let out = &config.out_dir;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::file(out, e))
        .at(Stage::Output)?;
    let mut files = Vec::new();

    let rois_path = out.join(ROIS_FILE);
    write_json(&rois_path, &det.rois_file(config.trace)).at(Stage::Output)?;
    files.push(rois_path);
    if let Some(img) = overlay {
        let p = out.join(OVERLAY_FILE);
        img.save_png(&p).at(Stage::Output)?;
        files.push(p);
    }
    if config.crops {
        files.extend(
            export_crops(&det.source, &det.rois, &out.join(CROPS_DIR), None).at(Stage::Output)?,
        );
    }

    let manifest_path = out.join(MANIFEST_FILE);
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        source_dims: sd,
        working_dims: det.working_dims,
        candidates: det.candidates,
        candidates_in_fov: det.candidates_in_fov,
        outputs: files
            .iter()
            .map(|p| {
                p.strip_prefix(out)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    write_json(&manifest_path, &manifest).at(Stage::Output)?;
    files.push(manifest_path);

    Ok(PipelineOutput {
        selection: det.selection,
        rois: det.rois,
        source_dims: sd,
        working_dims: det.working_dims,
        files,
    })
}

/// Reruns the configuration stored in a manifest, optionally into another directory.
pub fn replay_manifest(
    manifest: &Path,
    out_dir: Option<&Path>,
) -> std::result::Result<PipelineOutput, PipelineError> {
    let m: RunManifest = read_json(manifest).at(Stage::Config)?;
    if m.schema != MANIFEST_SCHEMA {
        return Err(PipelineError {
            stage: Stage::Config,
            source: Error::InvalidInput(format!("unknown manifest schema {:?}", m.schema)),
        });
    }
    let mut config = m.config;
    if let Some(d) = out_dir {
        config.out_dir = d.to_path_buf();
    }
    run_pipeline(&config)
}

/// Worker count from `PANO_ROI_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs several pipelines concurrently on a pool of at most `threads` workers.
pub fn run_batch(
    configs: &[PipelineConfig],
    threads: Option<usize>,
) -> Result<Vec<std::result::Result<PipelineOutput, PipelineError>>> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| configs.par_iter().map(run_pipeline).collect()))
}
