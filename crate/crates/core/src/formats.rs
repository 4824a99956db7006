//! On-disk JSON documents. Every top-level object carries a versioned `schema` tag.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::FixationSet;
use crate::geometry::RegionBox;
use crate::optimizer::{RoiSelection, SIoUParams, Swap};
use crate::proposals::CandidateSet;
use crate::raster::ErpDims;

pub const REGIONS_SCHEMA: &str = "pano-roi/regions/v1";
pub const ROIS_SCHEMA: &str = "pano-roi/rois/v1";
pub const ANNOTATION_SCHEMA: &str = "pano-roi/annotation/v1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn check_schema(found: &Option<String>, expected: &str) -> Result<()> {
    match found {
        Some(s) if s != expected => Err(Error::InvalidInput(format!(
            "schema {s:?} is not {expected:?}"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<f64>,
}

impl RegionEntry {
    pub fn region(&self) -> Result<RegionBox> {
        RegionBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Candidate regions, as written by `propose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub schema: Option<String>,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<RegionEntry>,
}

impl RegionsFile {
    pub fn from_candidates(cands: &CandidateSet, dims: ErpDims) -> Self {
        let regions = cands
            .regions()
            .iter()
            .enumerate()
            .map(|(i, b)| RegionEntry {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                saliency: cands.scores().map(|s| s[i]),
            })
            .collect();
        Self {
            schema: Some(REGIONS_SCHEMA.into()),
            width: dims.width,
            height: dims.height,
            regions,
        }
    }

    pub fn dims(&self) -> Result<ErpDims> {
        ErpDims::new(self.width, self.height)
    }

    /// Candidates in file order; scores are kept only if every entry has one.
    pub fn candidates(&self) -> Result<CandidateSet> {
        let regions = self
            .regions
            .iter()
            .map(RegionEntry::region)
            .collect::<Result<Vec<_>>>()?;
        let set = match self
            .regions
            .iter()
            .map(|r| r.saliency)
            .collect::<Option<Vec<_>>>()
        {
            Some(scores) if !scores.is_empty() => CandidateSet::with_scores(regions, scores)?,
            _ => CandidateSet::new(regions),
        };
        set.check_within(self.dims()?)?;
        Ok(set)
    }

    /// Accepts the tagged object or a bare array of regions (dimensions then come from `dims`).
    pub fn load(path: &Path, dims: Option<ErpDims>) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Tagged(RegionsFile),
            Bare(Vec<RegionEntry>),
        }
        match read_json::<Doc>(path)? {
            Doc::Tagged(f) => {
                check_schema(&f.schema, REGIONS_SCHEMA)?;
                if let Some(d) = dims {
                    if d != f.dims()? {
                        return Err(Error::DimensionMismatch {
                            expected: d.to_string(),
                            actual: format!("{}x{}", f.width, f.height),
                        });
                    }
                }
                Ok(f)
            }
            Doc::Bare(regions) => {
                let d = dims.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{}: bare region list needs image dimensions",
                        path.display()
                    ))
                })?;
                Ok(Self {
                    schema: Some(REGIONS_SCHEMA.into()),
                    width: d.width,
                    height: d.height,
                    regions,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub g: f64,
}

/// Selected RoIs, as written by `select` and `pipeline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoisFile {
    pub schema: Option<String>,
    pub width: usize,
    pub height: usize,
    pub params: SIoUParams,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gamma: Option<f64>,
    pub regions: Vec<RoiEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Swap>>,
}

impl RoisFile {
    /// `regions` replaces the selection's boxes, e.g. after rescaling to the source size.
    pub fn new(
        sel: &RoiSelection,
        regions: &[RegionBox],
        dims: ErpDims,
        include_trace: bool,
    ) -> Self {
        Self {
            schema: Some(ROIS_SCHEMA.into()),
            width: dims.width,
            height: dims.height,
            params: sel.params,
            gamma: sel.gamma,
            initial_gamma: Some(sel.initial_gamma),
            regions: regions
                .iter()
                .zip(&sel.scores)
                .map(|(b, &g)| RoiEntry {
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                    g,
                })
                .collect(),
            trace: include_trace.then(|| sel.trace.clone()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        check_schema(&f.schema, ROIS_SCHEMA)?;
        let dims = f.dims()?;
        for b in f.boxes()? {
            b.check_within(dims)?;
        }
        Ok(f)
    }

    pub fn dims(&self) -> Result<ErpDims> {
        ErpDims::new(self.width, self.height)
    }

    pub fn boxes(&self) -> Result<Vec<RegionBox>> {
        self.regions
            .iter()
            .map(|r| RegionBox::new(r.x, r.y, r.w, r.h))
            .collect()
    }
}

/// One annotator's RoIs for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub schema: Option<String>,
    pub image_id: String,
    pub annotator_id: String,
    pub regions: Vec<RegionEntry>,
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        check_schema(&f.schema, ANNOTATION_SCHEMA)?;
        Ok(f)
    }

    pub fn boxes(&self) -> Result<Vec<RegionBox>> {
        self.regions.iter().map(RegionEntry::region).collect()
    }
}

/// Reads fixations written as `[[x, y], ...]`.
pub fn load_fixations(path: &Path, dims: ErpDims) -> Result<FixationSet> {
    let points: Vec<(usize, usize)> = read_json(path)?;
    FixationSet::new(points, dims)
}
