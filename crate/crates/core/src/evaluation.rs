//! Evaluation: saliency-map metrics under latitude weighting, and comparison of predicted
//! region sets against annotated ones.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{row_weights, RegionBox};
use crate::optimizer::iou;
use crate::proposals::CandidateSet;
use crate::raster::ErpDims;
use crate::saliency::SaliencyMap;

pub const DEFAULT_BORJI_SPLITS: usize = 100;
pub const KLD_EPSILON: f64 = 1e-12;

/// Ground-truth gaze fixations as `(x, y)` pixel positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixationSet {
    points: Vec<(usize, usize)>,
}

impl FixationSet {
    pub fn new(points: Vec<(usize, usize)>, dims: ErpDims) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|(x, y)| *x >= dims.width || *y >= dims.height)
        {
            return Err(Error::Domain(format!(
                "fixation {p:?} outside a {dims} image"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn indices(&self, width: usize) -> Vec<usize> {
        self.points.iter().map(|(x, y)| y * width + x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Multiply both maps by `cos(latitude)` before scoring.
    pub latitude_weighting: bool,
    pub borji_splits: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            latitude_weighting: true,
            borji_splits: DEFAULT_BORJI_SPLITS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_judd: f64,
    pub auc_borji: f64,
    pub nss: f64,
    pub cc: f64,
    pub sim: f64,
    pub kld: f64,
    /// The prediction had zero variance, so NSS was reported as 0.
    pub nss_degenerate: bool,
}

fn weighted(map: &SaliencyMap, enabled: bool) -> Vec<f64> {
    if !enabled {
        return map.values().to_vec();
    }
    let d = map.dims();
    let rows = row_weights(d.height);
    map.values()
        .chunks_exact(d.width)
        .zip(&rows)
        .flat_map(|(row, &w)| row.iter().map(move |v| v * w))
        .collect()
}

fn sum_normalized(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateInput(format!("{what} map has no mass")));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson correlation coefficient; 0 when either input is constant.
pub fn cc(p: &[f64], q: &[f64]) -> f64 {
    let (mp, sp) = mean_std(p);
    let (mq, sq) = mean_std(q);
    if is_constant(p) || is_constant(q) || sp == 0.0 || sq == 0.0 {
        return 0.0;
    }
    let cov = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - mp) * (b - mq))
        .sum::<f64>()
        / p.len() as f64;
    (cov / (sp * sq)).clamp(-1.0, 1.0)
}

/// Histogram intersection of two sum-normalized distributions.
pub fn sim(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

/// `sum q log(q / (p + eps))` with `q` the ground truth; zero-mass bins of `q` contribute 0.
pub fn kld(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(_, &qi)| qi > 0.0)
        .map(|(&pi, &qi)| qi * (qi / (pi + KLD_EPSILON)).ln())
        .sum()
}

/// Mean z-scored prediction at the fixations; `None` if the prediction is constant.
pub fn nss(p: &[f64], fixations: &[usize]) -> Option<f64> {
    let (mean, std) = mean_std(p);
    // rounding in the mean leaves a tiny nonzero std on constant input
    if is_constant(p) || std == 0.0 {
        return None;
    }
    let total: f64 = fixations.iter().map(|&i| (p[i] - mean) / std).sum();
    Some(total / fixations.len() as f64)
}

/// ROC area with thresholds at the distinct fixation values; every pixel without a
/// fixation is a negative.
pub fn auc_judd(p: &[f64], fixations: &[usize]) -> f64 {
    let mut is_fix = vec![false; p.len()];
    for &i in fixations {
        is_fix[i] = true;
    }
    let mut negatives: Vec<f64> = p
        .iter()
        .zip(&is_fix)
        .filter(|(_, f)| !**f)
        .map(|(v, _)| *v)
        .collect();
    let mut positives: Vec<f64> = fixations.iter().map(|&i| p[i]).collect();
    negatives.sort_by(|a, b| b.total_cmp(a));
    positives.sort_by(|a, b| b.total_cmp(a));
    let (np, nn) = (positives.len() as f64, negatives.len().max(1) as f64);

    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < positives.len() {
        let t = positives[i];
        while i < positives.len() && positives[i] == t {
            i += 1;
        }
        let above = negatives.partition_point(|v| *v >= t);
        points.push((above as f64 / nn, i as f64 / np));
    }
    points.push((1.0, 1.0));
    trapezoid(&points)
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Exact ROC area between positive and negative scores (ties count one half).
pub fn roc_area(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut neg = negatives.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    let mut wins = 0.0;
    for &s in positives {
        let below = neg.partition_point(|v| *v < s);
        let not_above = neg.partition_point(|v| *v <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (positives.len() as f64 * neg.len() as f64)
}

/// Negative pixel indices for each split: `count` uniform draws over all pixels.
pub fn borji_negative_samples(
    pixels: usize,
    count: usize,
    splits: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..splits)
        .map(|_| (0..count).map(|_| rng.random_range(0..pixels)).collect())
        .collect()
}

/// Mean ROC area of fixations against uniformly drawn pixels, one draw per split.
pub fn auc_borji(p: &[f64], fixations: &[usize], splits: usize, seed: u64) -> f64 {
    let positives: Vec<f64> = fixations.iter().map(|&i| p[i]).collect();
    let samples = borji_negative_samples(p.len(), fixations.len(), splits, seed);
    let total: f64 = samples
        .iter()
        .map(|idx| {
            let neg: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            roc_area(&positives, &neg)
        })
        .sum();
    total / splits as f64
}

/// All six saliency metrics for one prediction.
pub fn saliency_metrics(
    pred: &SaliencyMap,
    gt_map: &SaliencyMap,
    gt_fix: &FixationSet,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if pred.dims() != gt_map.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt_map.dims().to_string(),
            actual: pred.dims().to_string(),
        });
    }
    if gt_fix.is_empty() {
        return Err(Error::InvalidInput("fixation set is empty".into()));
    }
    if opts.borji_splits == 0 {
        return Err(Error::InvalidInput("borji_splits must be positive".into()));
    }
    let d = pred.dims();
    let fix = gt_fix.indices(d.width);
    if fix.iter().any(|&i| i >= d.pixel_count()) {
        return Err(Error::Domain("fixation outside the map".into()));
    }
    let p = weighted(pred, opts.latitude_weighting);
    let q = weighted(gt_map, opts.latitude_weighting);
    let pn = sum_normalized(&p, "predicted")?;
    let qn = sum_normalized(&q, "ground-truth")?;
    let nss_value = nss(&p, &fix);
    Ok(MetricReport {
        auc_judd: auc_judd(&p, &fix),
        auc_borji: auc_borji(&p, &fix, opts.borji_splits, opts.seed),
        nss: nss_value.unwrap_or(0.0),
        cc: cc(&pn, &qn),
        sim: sim(&pn, &qn),
        kld: kld(&pn, &qn),
        nss_degenerate: nss_value.is_none(),
    })
}

/// Normalized distance between two points with horizontal wrap-around; `1` is the
/// largest possible separation (half a turn apart, pole to pole).
pub fn wrap_distance_points(a: (f64, f64), b: (f64, f64), dims: ErpDims) -> f64 {
    let (w, h) = (dims.width as f64, dims.height as f64);
    let dx = (a.0 - b.0).abs();
    let dx = dx.min(w - dx);
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt() / ((w / 2.0).powi(2) + h * h).sqrt()
}

/// [`wrap_distance_points`] between region centers.
pub fn wrap_distance(alpha: &RegionBox, beta: &RegionBox, dims: ErpDims) -> f64 {
    wrap_distance_points(alpha.center(), beta.center(), dims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMetric {
    L2,
    #[serde(rename = "iou")]
    IoU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// For every prediction, the best annotation (precision-like).
    Eval1,
    /// For every annotation, the best prediction (recall-like).
    Eval2,
}

/// Averages, over one set, the best score against the other set.
pub fn match_sets(
    pred: &[RegionBox],
    anno: &[RegionBox],
    metric: MatchMetric,
    direction: Direction,
    dims: ErpDims,
) -> Result<f64> {
    if pred.is_empty() || anno.is_empty() {
        return Err(Error::InvalidInput("region sets must be non-empty".into()));
    }
    let (outer, inner) = match direction {
        Direction::Eval1 => (pred, anno),
        Direction::Eval2 => (anno, pred),
    };
    let total: f64 = outer
        .iter()
        .map(|o| {
            let scores = inner.iter().map(|i| match metric {
                MatchMetric::L2 => wrap_distance(o, i, dims),
                MatchMetric::IoU => iou(o, i),
            });
            match metric {
                MatchMetric::L2 => scores.fold(f64::INFINITY, f64::min),
                MatchMetric::IoU => scores.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .sum();
    Ok(total / outer.len() as f64)
}

/// Eval1/Eval2 under both L2 distance and IoU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiScores {
    pub eval1_l2: f64,
    pub eval2_l2: f64,
    pub eval1_iou: f64,
    pub eval2_iou: f64,
}

pub fn roi_scores(pred: &[RegionBox], anno: &[RegionBox], dims: ErpDims) -> Result<RoiScores> {
    Ok(RoiScores {
        eval1_l2: match_sets(pred, anno, MatchMetric::L2, Direction::Eval1, dims)?,
        eval2_l2: match_sets(pred, anno, MatchMetric::L2, Direction::Eval2, dims)?,
        eval1_iou: match_sets(pred, anno, MatchMetric::IoU, Direction::Eval1, dims)?,
        eval2_iou: match_sets(pred, anno, MatchMetric::IoU, Direction::Eval2, dims)?,
    })
}

/// `n` candidates drawn uniformly without replacement, in candidate order.
pub fn random_baseline(cands: &CandidateSet, n: usize, seed: u64) -> Result<Vec<RegionBox>> {
    if cands.len() < n {
        return Err(Error::InsufficientCandidates {
            needed: n,
            available: cands.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, cands.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| cands.regions()[i]).collect())
}
