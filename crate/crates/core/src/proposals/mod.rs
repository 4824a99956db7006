//! Candidate regions: superpixel segmentation, hierarchical grouping, NFoV filtering and
//! per-region saliency mass.

pub mod segment;
pub mod selective_search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RegionBox;
use crate::raster::{ErpDims, ErpImage};
use crate::saliency::SaliencyMap;

pub use segment::{graph_segment, SegmentLabelMap};
pub use selective_search::{hierarchical_grouping, selective_search, Hierarchy};

/// Typical normal field of view, in degrees.
pub const DEFAULT_NFOV_DEG: f64 = 65.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
    pub nfov_deg: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            k: 200.0,
            min_size: 100,
            sigma: 0.8,
            nfov_deg: DEFAULT_NFOV_DEG,
        }
    }
}

impl ProposalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0;
        if !positive(self.k)
            || self.min_size == 0
            || self.sigma.is_nan()
            || self.sigma < 0.0
            || !positive(self.nfov_deg)
        {
            return Err(Error::InvalidInput(format!(
                "invalid proposal parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Candidate regions with optional per-region saliency mass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    regions: Vec<RegionBox>,
    scores: Option<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(regions: Vec<RegionBox>) -> Self {
        Self {
            regions,
            scores: None,
        }
    }

    pub fn with_scores(regions: Vec<RegionBox>, scores: Vec<f64>) -> Result<Self> {
        if regions.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} scores", regions.len()),
                actual: format!("{}", scores.len()),
            });
        }
        Ok(Self {
            regions,
            scores: Some(scores),
        })
    }

    /// Attaches `g` for every region from a normalized saliency integral.
    pub fn scored(mut self, integral: &SaliencyIntegral) -> Self {
        self.scores = Some(
            self.regions
                .iter()
                .map(|b| integral.region_saliency(b))
                .collect(),
        );
        self
    }

    pub fn regions(&self) -> &[RegionBox] {
        &self.regions
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn check_within(&self, dims: ErpDims) -> Result<()> {
        self.regions.iter().try_for_each(|b| b.check_within(dims))
    }

    /// Keeps the regions for which `keep` holds, scores included.
    pub fn retain(&self, mut keep: impl FnMut(&RegionBox) -> bool) -> CandidateSet {
        let mask: Vec<bool> = self.regions.iter().map(&mut keep).collect();
        fn pick<T: Copy>(v: &[T], mask: &[bool]) -> Vec<T> {
            v.iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .map(|(r, _)| *r)
                .collect()
        }
        CandidateSet {
            regions: pick(&self.regions, &mask),
            scores: self.scores.as_ref().map(|s| pick(s, &mask)),
        }
    }
}

/// `(w / W) 360° <= nfov_deg` and `(h / H) 180° <= nfov_deg`, evaluated without division.
pub fn within_nfov(region: &RegionBox, dims: ErpDims, nfov_deg: f64) -> bool {
    region.w as f64 * 360.0 <= nfov_deg * dims.width as f64
        && region.h as f64 * 180.0 <= nfov_deg * dims.height as f64
}

/// Drops regions wider or taller than the normal field of view.
pub fn fov_filter(cands: &CandidateSet, dims: ErpDims, nfov_deg: f64) -> CandidateSet {
    cands.retain(|b| within_nfov(b, dims, nfov_deg))
}

/// Segments and groups `img`, returning the raw (unfiltered) candidates.
pub fn propose(img: &ErpImage, params: &ProposalParams) -> Result<CandidateSet> {
    params.validate()?;
    let seg = graph_segment(img, params.k, params.min_size, params.sigma)?;
    selective_search(img, &seg)
}

/// Summed-area table over a normalized saliency map for O(1) box sums.
#[derive(Debug, Clone)]
pub struct SaliencyIntegral {
    width: usize,
    height: usize,
    // (width + 1) x (height + 1), first row and column zero
    table: Vec<f64>,
}

impl SaliencyIntegral {
    pub fn new(sal: &SaliencyMap) -> Result<Self> {
        if !sal.is_normalized() {
            return Err(Error::Contract(
                "region saliency needs a latitude-weighted, sum-normalized map".into(),
            ));
        }
        let d = sal.dims();
        let stride = d.width + 1;
        let mut table = vec![0.0; stride * (d.height + 1)];
        for y in 0..d.height {
            let mut row = 0.0;
            for x in 0..d.width {
                row += sal.get(x, y);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Ok(Self {
            width: d.width,
            height: d.height,
            table,
        })
    }

    pub fn dims(&self) -> ErpDims {
        ErpDims {
            width: self.width,
            height: self.height,
        }
    }

    pub fn total(&self) -> f64 {
        self.table[self.table.len() - 1]
    }

    /// `g(I)`: saliency mass inside the box. The box must lie within the map.
    pub fn region_saliency(&self, b: &RegionBox) -> f64 {
        debug_assert!(b.fits(self.width, self.height));
        let s = self.width + 1;
        let (l, t, r, btm) = (b.x, b.y, b.right(), b.bottom());
        let sum = self.table[btm * s + r] - self.table[t * s + r] - self.table[btm * s + l]
            + self.table[t * s + l];
        // cancellation can leave a tiny negative residue on empty regions
        sum.max(0.0)
    }
}

/// One-off `g(I)` for a single box.
pub fn region_saliency(b: &RegionBox, sal: &SaliencyMap) -> Result<f64> {
    b.check_within(sal.dims())?;
    Ok(SaliencyIntegral::new(sal)?.region_saliency(b))
}
