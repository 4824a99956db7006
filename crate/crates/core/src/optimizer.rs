//! Salient-IoU objective and the greedy replacement search over candidate regions.
//!
//! For a subset `S` of `n` regions,
//!
//! ```text
//! gamma(S) = a/n * sum_i 1 / (g(I_i) + eps)  +  (1 - a) / C(n, 2) * sum_{i<j} IoU(I_i, I_j)
//! ```
//!
//! where `g` is the normalized saliency mass of a region. Lower is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RegionBox;
use crate::proposals::{CandidateSet, SaliencyIntegral};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// How a swap is chosen among the `n` slots for one target region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceptance {
    /// Take the first slot, in index order, whose replacement strictly lowers gamma.
    #[default]
    FirstImprovement,
    /// Take the slot giving the lowest gamma, if it is strictly lower.
    BestImprovement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SIoUParams {
    pub n: usize,
    pub a: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub acceptance: Acceptance,
}

impl Default for SIoUParams {
    fn default() -> Self {
        Self {
            n: 5,
            a: 0.03,
            epsilon: DEFAULT_EPSILON,
            acceptance: Acceptance::FirstImprovement,
        }
    }
}

impl SIoUParams {
    pub fn new(n: usize, a: f64) -> Result<Self> {
        let p = Self {
            n,
            a,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!(
                "n must be at least 2 for the overlap term, got {}",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::InvalidInput(format!(
                "a must lie in [0, 1], got {}",
                self.a
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes on the same grid (no seam wrap).
pub fn iou(a: &RegionBox, b: &RegionBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Salient-IoU from precomputed saliency masses. For `n = 1` the overlap term is zero.
pub fn gamma_from_scores(boxes: &[RegionBox], g: &[f64], params: &SIoUParams) -> f64 {
    debug_assert_eq!(boxes.len(), g.len());
    let n = boxes.len();
    let inverse_mass: f64 = g.iter().map(|gi| 1.0 / (gi + params.epsilon)).sum();
    let mut overlap = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            overlap += iou(&boxes[i], &boxes[j]);
        }
    }
    let pairs = n * n.saturating_sub(1) / 2;
    let overlap_term = if pairs == 0 {
        0.0
    } else {
        (1.0 - params.a) * overlap / pairs as f64
    };
    params.a / n as f64 * inverse_mass + overlap_term
}

/// Salient-IoU of `regions` against a normalized saliency map.
pub fn salient_iou(
    regions: &[RegionBox],
    integral: &SaliencyIntegral,
    params: &SIoUParams,
) -> Result<f64> {
    if regions.len() != params.n {
        return Err(Error::InvalidInput(format!(
            "expected {} regions, got {}",
            params.n,
            regions.len()
        )));
    }
    let dims = integral.dims();
    regions.iter().try_for_each(|r| r.check_within(dims))?;
    let g: Vec<f64> = regions
        .iter()
        .map(|r| integral.region_saliency(r))
        .collect();
    Ok(gamma_from_scores(regions, &g, params))
}

/// One accepted replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Swap {
    /// Candidate index that entered the selection.
    pub candidate: usize,
    /// Slot it replaced.
    pub slot: usize,
    /// Candidate index that was displaced (and discarded).
    pub displaced: usize,
    /// Gamma after the swap.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSelection {
    pub regions: Vec<RegionBox>,
    /// `g` of each selected region.
    pub scores: Vec<f64>,
    /// Position of each selected region in the candidate set.
    pub candidate_indices: Vec<usize>,
    pub gamma: f64,
    /// Gamma of the initial top-n selection.
    pub initial_gamma: f64,
    pub params: SIoUParams,
    pub trace: Vec<Swap>,
}

impl RoiSelection {
    /// Mean pairwise IoU among the selected regions.
    pub fn mean_pairwise_iou(&self) -> f64 {
        let n = self.regions.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += iou(&self.regions[i], &self.regions[j]);
            }
        }
        let pairs = n * n.saturating_sub(1) / 2;
        if pairs == 0 {
            0.0
        } else {
            total / pairs as f64
        }
    }
}

/// Greedy replacement search.
///
/// The selection starts as the `n` candidates with the highest `g` (ties by candidate
/// order). The remaining candidates then become the target one at a time, highest `g`
/// first; each target is tried in slots `0..n` and the first (or, with
/// [`Acceptance::BestImprovement`], the best) replacement that strictly lowers gamma is
/// kept. A target is consumed whether or not it was accepted, and displaced regions are
/// not reconsidered.
pub fn greedy_select(
    cands: &CandidateSet,
    integral: &SaliencyIntegral,
    params: &SIoUParams,
) -> Result<RoiSelection> {
    params.validate()?;
    let n = params.n;
    if cands.len() < n {
        return Err(Error::InsufficientCandidates {
            needed: n,
            available: cands.len(),
        });
    }
    if integral.total().is_nan() || integral.total() <= 0.0 {
        return Err(Error::DegenerateInput("saliency map has no mass".into()));
    }
    cands.check_within(integral.dims())?;
    let boxes = cands.regions();
    let g: Vec<f64> = match cands.scores() {
        Some(s) => s.to_vec(),
        None => boxes.iter().map(|b| integral.region_saliency(b)).collect(),
    };

    let mut order: Vec<usize> = (0..boxes.len()).collect();
    // stable: equal g keeps candidate order
    order.sort_by(|&i, &j| g[j].total_cmp(&g[i]));

    let mut chosen: Vec<usize> = order[..n].to_vec();
    let mut sel_boxes: Vec<RegionBox> = chosen.iter().map(|&i| boxes[i]).collect();
    let mut sel_g: Vec<f64> = chosen.iter().map(|&i| g[i]).collect();
    let initial_gamma = gamma_from_scores(&sel_boxes, &sel_g, params);
    let mut current = initial_gamma;
    let mut trace = Vec::new();

    for &target in &order[n..] {
        let mut accepted: Option<(usize, f64)> = None;
        for slot in 0..n {
            let (old_box, old_g) = (sel_boxes[slot], sel_g[slot]);
            sel_boxes[slot] = boxes[target];
            sel_g[slot] = g[target];
            let trial = gamma_from_scores(&sel_boxes, &sel_g, params);
            sel_boxes[slot] = old_box;
            sel_g[slot] = old_g;
            let best_so_far = accepted.map_or(current, |(_, v)| v);
            if trial < best_so_far {
                accepted = Some((slot, trial));
                if params.acceptance == Acceptance::FirstImprovement {
                    break;
                }
            }
        }
        if let Some((slot, value)) = accepted {
            let displaced = chosen[slot];
            chosen[slot] = target;
            sel_boxes[slot] = boxes[target];
            sel_g[slot] = g[target];
            current = value;
            trace.push(Swap {
                candidate: target,
                slot,
                displaced,
                gamma: value,
            });
        }
    }

    Ok(RoiSelection {
        gamma: gamma_from_scores(&sel_boxes, &sel_g, params),
        regions: sel_boxes,
        scores: sel_g,
        candidate_indices: chosen,
        initial_gamma,
        params: *params,
        trace,
    })
}

/// Runs [`greedy_select`] once per balancing weight.
pub fn sweep_a(
    cands: &CandidateSet,
    integral: &SaliencyIntegral,
    base: &SIoUParams,
    a_values: &[f64],
) -> Result<Vec<RoiSelection>> {
    a_values
        .iter()
        .map(|&a| greedy_select(cands, integral, &SIoUParams { a, ..*base }))
        .collect()
}

/// Balancing weights used for the qualitative sweep.
pub const SWEEP_A_VALUES: [f64; 6] = [0.0, 0.01, 0.03, 0.1, 0.4, 1.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ErpDims;
    use crate::saliency::{normalize_saliency, SaliencyMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rb(x: usize, y: usize, w: usize, h: usize) -> RegionBox {
        RegionBox::new(x, y, w, h).unwrap()
    }

    fn integral(d: ErpDims, seed: u64) -> SaliencyIntegral {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = SaliencyMap::from_fn(d, |_, _, _| rng.random::<f64>().powi(4)).unwrap();
        SaliencyIntegral::new(&normalize_saliency(&m).unwrap()).unwrap()
    }

    fn random_boxes(rng: &mut ChaCha8Rng, d: ErpDims, count: usize) -> Vec<RegionBox> {
        (0..count)
            .map(|_| {
                let w = rng.random_range(1..=d.width / 4);
                let h = rng.random_range(1..=d.height / 2);
                rb(
                    rng.random_range(0..=d.width - w),
                    rng.random_range(0..=d.height - h),
                    w,
                    h,
                )
            })
            .collect()
    }

    #[test]
    fn iou_reference_values() {
        let a = rb(0, 0, 4, 4);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &rb(4, 0, 4, 4)), 0.0);
        assert!((iou(&a, &rb(2, 2, 4, 4)) - 4.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        // n = 2, a = 0.5, g = (0.5, 0.25), IoU = 0.2
        let p = SIoUParams {
            n: 2,
            a: 0.5,
            epsilon: 0.0,
            acceptance: Acceptance::FirstImprovement,
        };
        // 6x1 and 6x1 overlapping by 2 columns -> 2 / 10 = 0.2
        let boxes = [rb(0, 0, 6, 1), rb(4, 0, 6, 1)];
        assert!((iou(&boxes[0], &boxes[1]) - 0.2).abs() < 1e-15);
        let g = gamma_from_scores(&boxes, &[0.5, 0.25], &p);
        assert!((g - 1.6).abs() < 1e-15);
    }

    #[test]
    fn overlap_only_vanishes_for_disjoint_boxes() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 1);
        let p = SIoUParams::new(3, 0.0).unwrap();
        let boxes = [rb(0, 0, 5, 5), rb(10, 0, 5, 5), rb(20, 10, 5, 5)];
        assert_eq!(salient_iou(&boxes, &s, &p).unwrap(), 0.0);
    }

    #[test]
    fn saliency_only_is_one_on_full_support() {
        let d = ErpDims::from_height(16).unwrap();
        let m = SaliencyMap::from_fn(d, |x, y, _| {
            if (4..8).contains(&x) && (6..9).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let s = SaliencyIntegral::new(&normalize_saliency(&m).unwrap()).unwrap();
        let p = SIoUParams::new(3, 1.0).unwrap();
        let boxes = [rb(4, 6, 4, 3), rb(2, 5, 8, 6), rb(0, 0, 12, 12)];
        assert!((salient_iou(&boxes, &s, &p).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_subset_size_is_rejected() {
        let d = ErpDims::from_height(8).unwrap();
        let s = integral(d, 1);
        let p = SIoUParams::new(3, 0.5).unwrap();
        assert!(salient_iou(&[rb(0, 0, 1, 1)], &s, &p).is_err());
    }

    #[test]
    fn gamma_is_permutation_invariant() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SIoUParams::new(5, 0.3).unwrap();
        for _ in 0..50 {
            let mut boxes = random_boxes(&mut rng, d, 5);
            let a = salient_iou(&boxes, &s, &p).unwrap();
            boxes.reverse();
            boxes.swap(0, 3);
            let b = salient_iou(&boxes, &s, &p).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn exactly_n_candidates_are_returned_unchanged() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 3);
        let boxes = vec![rb(0, 0, 5, 5), rb(3, 3, 5, 5), rb(20, 10, 5, 5)];
        let p = SIoUParams::new(3, 0.2).unwrap();
        let sel = greedy_select(&CandidateSet::new(boxes.clone()), &s, &p).unwrap();
        let mut got = sel.regions.clone();
        got.sort();
        let mut want = boxes.clone();
        want.sort();
        assert_eq!(got, want);
        assert!(sel.trace.is_empty());
        assert_eq!(sel.gamma, salient_iou(&sel.regions, &s, &p).unwrap());
    }

    #[test]
    fn too_few_candidates() {
        let d = ErpDims::from_height(8).unwrap();
        let s = integral(d, 3);
        let p = SIoUParams::new(3, 0.2).unwrap();
        let r = greedy_select(&CandidateSet::new(vec![rb(0, 0, 1, 1)]), &s, &p);
        assert!(matches!(
            r,
            Err(Error::InsufficientCandidates {
                needed: 3,
                available: 1
            })
        ));
    }

    #[test]
    fn params_are_validated() {
        assert!(SIoUParams::new(1, 0.5).is_err());
        assert!(SIoUParams::new(5, 1.5).is_err());
        assert!(SIoUParams::new(5, -0.1).is_err());
    }

    #[test]
    fn trace_is_strictly_decreasing_for_both_acceptance_rules() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for acceptance in [Acceptance::FirstImprovement, Acceptance::BestImprovement] {
            for _ in 0..30 {
                let boxes = random_boxes(&mut rng, d, 40);
                let p = SIoUParams {
                    acceptance,
                    ..SIoUParams::new(4, rng.random_range(0.0..1.0)).unwrap()
                };
                let sel = greedy_select(&CandidateSet::new(boxes), &s, &p).unwrap();
                let mut last = sel.initial_gamma;
                for swap in &sel.trace {
                    assert!(swap.gamma < last);
                    last = swap.gamma;
                }
                assert!(sel.gamma <= sel.initial_gamma);
                assert_eq!(sel.gamma, salient_iou(&sel.regions, &s, &p).unwrap());
            }
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = CandidateSet::new(random_boxes(&mut rng, d, 60));
        let p = SIoUParams::new(5, 0.1).unwrap();
        assert_eq!(
            greedy_select(&c, &s, &p).unwrap(),
            greedy_select(&c, &s, &p).unwrap()
        );
    }

    #[test]
    fn singleton_sweep_equals_greedy() {
        let d = ErpDims::from_height(32).unwrap();
        let s = integral(d, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = CandidateSet::new(random_boxes(&mut rng, d, 30));
        let p = SIoUParams::new(5, 0.4).unwrap();
        let sweep = sweep_a(&c, &s, &p, &[0.4]).unwrap();
        assert_eq!(sweep, vec![greedy_select(&c, &s, &p).unwrap()]);
    }

    #[test]
    fn disjoint_candidates_reach_zero_overlap() {
        let d = ErpDims::from_height(64).unwrap();
        let s = integral(d, 7);
        // a stack of heavily overlapping boxes plus three mutually disjoint ones
        let mut boxes: Vec<RegionBox> = (0..8).map(|i| rb(10 + i, 10 + i, 30, 30)).collect();
        boxes.extend([rb(60, 5, 10, 10), rb(80, 30, 10, 10), rb(100, 50, 10, 10)]);
        let p = SIoUParams::new(3, 0.0).unwrap();
        let sel = greedy_select(&CandidateSet::new(boxes), &s, &p).unwrap();
        assert_eq!(sel.gamma, 0.0);
        assert_eq!(sel.mean_pairwise_iou(), 0.0);
    }

    #[test]
    fn scaling_saliency_does_not_change_selection() {
        let d = ErpDims::from_height(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw: Vec<f64> = (0..d.pixel_count())
            .map(|_| rng.random::<f64>().powi(3))
            .collect();
        let scaled: Vec<f64> = raw.iter().map(|v| v * 4.0).collect();
        let c = CandidateSet::new(random_boxes(&mut rng, d, 40));
        let p = SIoUParams::new(4, 0.05).unwrap();
        let pick = |v: Vec<f64>| {
            let n = normalize_saliency(&SaliencyMap::new(d, v).unwrap()).unwrap();
            let mut idx = greedy_select(&c, &SaliencyIntegral::new(&n).unwrap(), &p)
                .unwrap()
                .candidate_indices;
            idx.sort();
            idx
        };
        assert_eq!(pick(raw), pick(scaled));
    }
}
