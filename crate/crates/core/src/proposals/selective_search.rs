//! Hierarchical grouping of superpixels (single-strategy Selective Search, HSV color space).

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::RegionBox;
use crate::proposals::segment::{smooth, SegmentLabelMap};
use crate::proposals::CandidateSet;
use crate::raster::{ErpImage, Raster};

pub const COLOR_BINS: usize = 25;
pub const TEXTURE_ORIENTATIONS: usize = 8;
pub const TEXTURE_BINS: usize = 10;
const CHANNELS: usize = 3;
pub const COLOR_LEN: usize = COLOR_BINS * CHANNELS;
pub const TEXTURE_LEN: usize = TEXTURE_ORIENTATIONS * TEXTURE_BINS * CHANNELS;

/// Low-level description of one region (initial superpixel or merge product).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDescriptor {
    pub bbox: RegionBox,
    pub size: usize,
    /// HSV histogram, `COLOR_BINS` per channel, L1-normalized.
    pub color_hist: Vec<f64>,
    /// Oriented-gradient histogram, `TEXTURE_ORIENTATIONS x TEXTURE_BINS` per channel,
    /// L1-normalized.
    pub texture_hist: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub merged: usize,
    pub similarity: f64,
}

/// Every region formed during grouping plus the merge sequence that produced them.
///
/// `regions[..initial_count]` are the superpixels in label order.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub regions: Vec<RegionDescriptor>,
    pub merges: Vec<Merge>,
    pub initial_count: usize,
    pub image_size: usize,
}

impl Hierarchy {
    pub fn candidates(&self) -> CandidateSet {
        let mut seen = HashSet::new();
        let regions = self
            .regions
            .iter()
            .map(|r| r.bbox)
            .filter(|b| seen.insert(*b))
            .collect();
        CandidateSet::new(regions)
    }
}

/// Similarity terms between two regions, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub color: f64,
    pub texture: f64,
    pub size: f64,
    pub fill: f64,
}

impl Similarity {
    pub fn total(&self) -> f64 {
        self.color + self.texture + self.size + self.fill
    }
}

fn intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

pub fn similarity(a: &RegionDescriptor, b: &RegionDescriptor, image_size: usize) -> Similarity {
    let n = image_size as f64;
    let joint = (a.size + b.size) as f64;
    let bbox = a.bbox.union_bounds(&b.bbox).area() as f64;
    Similarity {
        color: intersection(&a.color_hist, &b.color_hist),
        texture: intersection(&a.texture_hist, &b.texture_hist),
        size: 1.0 - joint / n,
        fill: 1.0 - (bbox - joint) / n,
    }
}

/// Size-weighted combination of two regions' descriptors.
pub fn merge_descriptors(a: &RegionDescriptor, b: &RegionDescriptor) -> RegionDescriptor {
    let size = a.size + b.size;
    let (wa, wb) = (a.size as f64, b.size as f64);
    let total = size as f64;
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(u, v)| (wa * u + wb * v) / total)
            .collect()
    };
    RegionDescriptor {
        bbox: a.bbox.union_bounds(&b.bbox),
        size,
        color_hist: mix(&a.color_hist, &b.color_hist),
        texture_hist: mix(&a.texture_hist, &b.texture_hist),
    }
}

pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h.clamp(0.0, 1.0), s, max]
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Per-pixel color and texture bin indices.
pub(crate) struct PixelBins {
    /// `CHANNELS` color bins per pixel, already offset into the color histogram.
    color: Vec<u16>,
    /// `CHANNELS * TEXTURE_ORIENTATIONS` texture bins per pixel, offset likewise.
    texture: Vec<u16>,
}

pub(crate) fn pixel_bins(rgb: &Raster) -> PixelBins {
    let n = rgb.width() * rgb.height();
    let mut color = Vec::with_capacity(n * CHANNELS);
    for px in rgb.data().chunks_exact(3) {
        let hsv = rgb_to_hsv(px[0], px[1], px[2]);
        for (c, v) in hsv.iter().enumerate() {
            color.push((c * COLOR_BINS + bin_of(*v, COLOR_BINS)) as u16);
        }
    }

    // directional derivatives of the sigma = 1 smoothed channels
    let smoothed = smooth(rgb, 1.0);
    let (w, h) = (rgb.width(), rgb.height());
    let dirs: Vec<(f64, f64)> = (0..TEXTURE_ORIENTATIONS)
        .map(|o| {
            let a = o as f64 * 2.0 * PI / TEXTURE_ORIENTATIONS as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let mut responses = vec![0.0f64; n * CHANNELS * TEXTURE_ORIENTATIONS];
    let mut peak = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for c in 0..CHANNELS {
                let gx = (smoothed.get(xr, y, c) - smoothed.get(xl, y, c)) / 2.0;
                let gy = (smoothed.get(x, yd, c) - smoothed.get(x, yu, c)) / 2.0;
                for (o, (dc, ds)) in dirs.iter().enumerate() {
                    let r = (gx * dc + gy * ds).max(0.0);
                    responses[((y * w + x) * CHANNELS + c) * TEXTURE_ORIENTATIONS + o] = r;
                    peak = peak.max(r);
                }
            }
        }
    }
    let texture = responses
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let co = i % (CHANNELS * TEXTURE_ORIENTATIONS);
            let bin = if peak > 0.0 {
                bin_of(r / peak, TEXTURE_BINS)
            } else {
                0
            };
            (co * TEXTURE_BINS + bin) as u16
        })
        .collect();
    PixelBins { color, texture }
}

fn initial_descriptors(img: &ErpImage, seg: &SegmentLabelMap) -> Vec<RegionDescriptor> {
    let rgb = img.to_rgb();
    let bins = pixel_bins(rgb.raster());
    let m = seg.segment_count();
    let mut color = vec![vec![0.0; COLOR_LEN]; m];
    let mut texture = vec![vec![0.0; TEXTURE_LEN]; m];
    let mut sizes = vec![0usize; m];
    let mut bounds = vec![(usize::MAX, usize::MAX, 0usize, 0usize); m];
    let w = seg.width();
    for (i, &l) in seg.labels().iter().enumerate() {
        let l = l as usize;
        let (x, y) = (i % w, i / w);
        sizes[l] += 1;
        let b = &mut bounds[l];
        *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        for &c in &bins.color[i * CHANNELS..(i + 1) * CHANNELS] {
            color[l][c as usize] += 1.0;
        }
        let per_px = CHANNELS * TEXTURE_ORIENTATIONS;
        for &t in &bins.texture[i * per_px..(i + 1) * per_px] {
            texture[l][t as usize] += 1.0;
        }
    }
    (0..m)
        .map(|l| {
            let l1 = |v: &mut Vec<f64>| {
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
            };
            l1(&mut color[l]);
            l1(&mut texture[l]);
            let (x0, y0, x1, y1) = bounds[l];
            RegionDescriptor {
                bbox: RegionBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0 + 1,
                    h: y1 - y0 + 1,
                },
                size: sizes[l],
                color_hist: std::mem::take(&mut color[l]),
                texture_hist: std::mem::take(&mut texture[l]),
            }
        })
        .collect()
}

fn adjacency(seg: &SegmentLabelMap) -> Vec<BTreeSet<usize>> {
    let (w, h) = (seg.width(), seg.height());
    let mut nb = vec![BTreeSet::new(); seg.segment_count()];
    for y in 0..h {
        for x in 0..w {
            let l = seg.label(x, y) as usize;
            if x + 1 < w {
                let r = seg.label(x + 1, y) as usize;
                if r != l {
                    nb[l].insert(r);
                    nb[r].insert(l);
                }
            }
            if y + 1 < h {
                let d = seg.label(x, y + 1) as usize;
                if d != l {
                    nb[l].insert(d);
                    nb[d].insert(l);
                }
            }
        }
    }
    nb
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    similarity: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Pair {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pair {}

impl PartialOrd for Pair {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pair {
    // max-heap: most similar first, then lowest ids
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

/// Greedily merges the most similar adjacent pair until a single region remains.
pub fn hierarchical_grouping(img: &ErpImage, seg: &SegmentLabelMap) -> Result<Hierarchy> {
    if img.width() != seg.width() || img.height() != seg.height() {
        return Err(Error::DimensionMismatch {
            expected: img.dims().to_string(),
            actual: format!("{}x{}", seg.width(), seg.height()),
        });
    }
    let image_size = seg.width() * seg.height();
    let mut regions = initial_descriptors(img, seg);
    let initial_count = regions.len();
    let mut neighbours = adjacency(seg);
    let mut alive = vec![true; initial_count];
    let mut heap = BinaryHeap::new();
    for (a, nb) in neighbours.iter().enumerate() {
        for &b in nb.range(a + 1..) {
            let s = similarity(&regions[a], &regions[b], image_size).total();
            heap.push(Pair {
                similarity: s,
                a,
                b,
            });
        }
    }

    let mut merges = Vec::with_capacity(initial_count.saturating_sub(1));
    while let Some(Pair {
        similarity: s,
        a,
        b,
    }) = heap.pop()
    {
        if !alive[a] || !alive[b] {
            continue;
        }
        let t = regions.len();
        regions.push(merge_descriptors(&regions[a], &regions[b]));
        alive[a] = false;
        alive[b] = false;
        alive.push(true);
        merges.push(Merge {
            a,
            b,
            merged: t,
            similarity: s,
        });

        let mut joined: BTreeSet<usize> = std::mem::take(&mut neighbours[a]);
        joined.append(&mut std::mem::take(&mut neighbours[b]));
        joined.remove(&a);
        joined.remove(&b);
        for &n in &joined {
            neighbours[n].remove(&a);
            neighbours[n].remove(&b);
            neighbours[n].insert(t);
            let s = similarity(&regions[n], &regions[t], image_size).total();
            heap.push(Pair {
                similarity: s,
                a: n,
                b: t,
            });
        }
        neighbours.push(joined);
    }

    Ok(Hierarchy {
        regions,
        merges,
        initial_count,
        image_size,
    })
}

/// Bounding boxes of every region formed by [`hierarchical_grouping`], deduplicated.
pub fn selective_search(img: &ErpImage, seg: &SegmentLabelMap) -> Result<CandidateSet> {
    Ok(hierarchical_grouping(img, seg)?.candidates())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposals::segment::graph_segment;
    use crate::raster::ErpDims;

    fn blocks_image() -> (ErpImage, SegmentLabelMap) {
        let d = ErpDims::from_height(16).unwrap();
        let img = ErpImage::from_fn(d, 3, |x, y, c| {
            let cell = (x / 8 + 4 * (y / 8)) as f64;
            ((cell * 0.13 + c as f64 * 0.31) % 1.0).abs()
        })
        .unwrap();
        let raw: Vec<u32> = (0..d.pixel_count())
            .map(|i| ((i % d.width) / 8 + 4 * ((i / d.width) / 8)) as u32)
            .collect();
        let seg = SegmentLabelMap::from_labels(d.width, d.height, &raw).unwrap();
        (img, seg)
    }

    #[test]
    fn single_segment_gives_full_box() {
        let d = ErpDims::from_height(8).unwrap();
        let img = ErpImage::from_fn(d, 3, |_, _, _| 0.5).unwrap();
        let seg = graph_segment(&img, 200.0, 1, 0.0).unwrap();
        let c = selective_search(&img, &seg).unwrap();
        assert_eq!(c.regions(), &[RegionBox::full(d)]);
    }

    #[test]
    fn merge_count_arithmetic() {
        let (img, seg) = blocks_image();
        let m = seg.segment_count();
        let h = hierarchical_grouping(&img, &seg).unwrap();
        assert_eq!(h.initial_count, m);
        assert_eq!(h.regions.len(), 2 * m - 1);
        assert_eq!(h.merges.len(), m - 1);
        assert_eq!(h.regions.last().unwrap().size, seg.width() * seg.height());
    }

    #[test]
    fn histograms_are_normalized_and_merge_by_size() {
        let (img, seg) = blocks_image();
        let h = hierarchical_grouping(&img, &seg).unwrap();
        for r in &h.regions {
            assert!((r.color_hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((r.texture_hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for m in &h.merges {
            let (a, b, t) = (&h.regions[m.a], &h.regions[m.b], &h.regions[m.merged]);
            let total = (a.size + b.size) as f64;
            for i in 0..COLOR_LEN {
                let expect =
                    (a.size as f64 * a.color_hist[i] + b.size as f64 * b.color_hist[i]) / total;
                assert_eq!(t.color_hist[i], expect);
            }
            assert_eq!(t.size, a.size + b.size);
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded() {
        let (img, seg) = blocks_image();
        let h = hierarchical_grouping(&img, &seg).unwrap();
        // similarity is only defined between disjoint regions
        let mut pairs: Vec<(usize, usize)> = h.merges.iter().map(|m| (m.a, m.b)).collect();
        for i in 0..h.initial_count {
            for j in 0..h.initial_count {
                if i != j {
                    pairs.push((i, j));
                }
            }
        }
        for (i, j) in pairs {
            let (a, b) = (&h.regions[i], &h.regions[j]);
            {
                let s = similarity(a, b, h.image_size);
                let r = similarity(b, a, h.image_size);
                assert_eq!(s, r);
                for v in [s.color, s.texture, s.size, s.fill] {
                    assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                }
                assert!((0.0..=4.0).contains(&s.total()));
            }
        }
    }

    #[test]
    fn hsv_reference_values() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0), [0.0, 1.0, 1.0]);
        let g = rgb_to_hsv(0.0, 1.0, 0.0);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        let b = rgb_to_hsv(0.0, 0.0, 0.5);
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12 && b[2] == 0.5);
        assert_eq!(rgb_to_hsv(0.2, 0.2, 0.2), [0.0, 0.0, 0.2]);
    }
}
