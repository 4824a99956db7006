//! Efficient graph-based segmentation into superpixels.
//!
//! Pixels are nodes, 4-neighbours are joined by edges weighted with the RGB distance
//! (on a 0..255 scale) of the pre-smoothed image. Edges are visited in non-decreasing
//! weight order and two components merge when the edge is no heavier than either
//! component's internal difference plus `k / |C|`. Components smaller than `min_size`
//! are then absorbed along the remaining edges in the same order.

use crate::error::{Error, Result};
use crate::raster::{ErpImage, Raster};

/// Per-pixel segment ids, contiguous in `0..segment_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    segment_count: usize,
}

impl SegmentLabelMap {
    /// Builds a label map from arbitrary ids, renumbering them in raster order.
    pub fn from_labels(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height || raw.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", width * height),
                actual: format!("{}", raw.len()),
            });
        }
        let mut remap = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = remap.len() as u32;
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self {
            width,
            height,
            labels,
            segment_count: remap.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.segment_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    threshold: Vec<f32>,
}

impl DisjointSet {
    fn new(n: usize, k: f32) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            threshold: vec![k; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Joins two roots; the larger one stays root.
    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (root, child) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[child as usize] = root;
        self.size[root as usize] += self.size[child as usize];
        root
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with edge clamping.
pub(crate) fn smooth(raster: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return raster.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut tmp = Raster::filled(w, h, ch, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * raster.get(xx, y, c);
                }
                tmp.set(x, y, c, acc);
            }
        }
    }
    let mut out = Raster::filled(w, h, ch, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp.get(x, yy, c);
                }
                out.set(x, y, c, acc);
            }
        }
    }
    out
}

/// Segments `img` into 4-connected superpixels.
///
/// `k` sets the scale of observation (larger means larger segments), `min_size` the
/// smallest segment kept, `sigma` the pre-smoothing standard deviation (0 disables it).
/// Ties in edge weight resolve by edge index, so the output is deterministic.
pub fn graph_segment(
    img: &ErpImage,
    k: f64,
    min_size: usize,
    sigma: f64,
) -> Result<SegmentLabelMap> {
    if k.is_nan() || k <= 0.0 {
        return Err(Error::InvalidInput(format!("k must be positive, got {k}")));
    }
    if min_size == 0 {
        return Err(Error::InvalidInput("min_size must be at least 1".into()));
    }
    let smoothed = smooth(img.to_rgb().raster(), sigma);
    let (w, h) = (smoothed.width(), smoothed.height());

    let dist = |a: usize, b: usize| -> f32 {
        let pa = &smoothed.data()[a * 3..a * 3 + 3];
        let pb = &smoothed.data()[b * 3..b * 3 + 3];
        let s: f64 = pa
            .iter()
            .zip(pb)
            .map(|(u, v)| ((u - v) * 255.0).powi(2))
            .sum();
        s.sqrt() as f32
    };

    let mut edges: Vec<(f32, u32, u32)> = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edges.push((dist(i, i + 1), i as u32, (i + 1) as u32));
            }
            if y + 1 < h {
                edges.push((dist(i, i + w), i as u32, (i + w) as u32));
            }
        }
    }
    // stable sort keeps creation order among equal weights
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));

    let k = k as f32;
    let mut sets = DisjointSet::new(w * h, k);
    for &(weight, u, v) in &edges {
        let a = sets.find(u);
        let b = sets.find(v);
        if a != b && weight <= sets.threshold[a as usize] && weight <= sets.threshold[b as usize] {
            let root = sets.union(a, b);
            sets.threshold[root as usize] = weight + k / sets.size[root as usize] as f32;
        }
    }
    for &(_, u, v) in &edges {
        let a = sets.find(u);
        let b = sets.find(v);
        if a != b
            && (sets.size[a as usize] < min_size as u32 || sets.size[b as usize] < min_size as u32)
        {
            sets.union(a, b);
        }
    }

    let roots: Vec<u32> = (0..(w * h) as u32).map(|i| sets.find(i)).collect();
    SegmentLabelMap::from_labels(w, h, &roots)
}
