//! Saliency maps: loading external predictions, latitude-weighted normalization and a
//! classical center-surround fallback for when no learned predictor is available.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::geometry::row_weights;
use crate::raster::{ErpDims, ErpImage, Raster};

/// Scalar, non-negative saliency over an ERP grid.
///
/// A *normalized* map has been multiplied by `cos(latitude)` and divided by its total,
/// so its values sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    raster: Raster,
    normalized: bool,
}

impl SaliencyMap {
    /// Wraps raw values as an unnormalized map.
    pub fn new(dims: ErpDims, values: Vec<f64>) -> Result<Self> {
        let raster = Raster::new(dims.width, dims.height, 1, values)?;
        Self::from_raster(raster)
    }

    pub fn from_raster(raster: Raster) -> Result<Self> {
        ErpDims::new(raster.width(), raster.height())?;
        if raster.channels() != 1 {
            return Err(Error::InvalidInput(format!(
                "saliency map must have one channel, got {}",
                raster.channels()
            )));
        }
        if let Some(v) = raster.data().iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!("negative saliency value {v}")));
        }
        Ok(Self {
            raster,
            normalized: false,
        })
    }

    pub fn from_fn(dims: ErpDims, f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        Self::from_raster(Raster::from_fn(dims.width, dims.height, 1, f))
    }

    pub fn dims(&self) -> ErpDims {
        ErpDims {
            width: self.raster.width(),
            height: self.raster.height(),
        }
    }

    pub fn values(&self) -> &[f64] {
        self.raster.data()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.raster.get(x, y, 0)
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total(&self) -> f64 {
        self.raster.data().iter().sum()
    }

    /// Bilinear resample to `dims`. The result is unnormalized.
    pub fn resize(&self, dims: ErpDims) -> SaliencyMap {
        let mut r = self.raster.resize(dims.width, dims.height);
        let clamped: Vec<f64> = r.data().iter().map(|v| v.max(0.0)).collect();
        r = Raster::new(dims.width, dims.height, 1, clamped).expect("resized map is finite");
        SaliencyMap {
            raster: r,
            normalized: false,
        }
    }

    /// Writes the map. `.bin`/`.raw`/`.f32` get the raw float format, `.png`/`.pgm` a 16-bit
    /// grayscale image of the values clamped to `[0, 1]`.
    pub fn save(&self, path: &Path) -> Result<()> {
        match extension(path).as_str() {
            "bin" | "raw" | "f32" => save_raw_f32(&self.raster, path),
            _ => {
                let d = self.dims();
                let px: Vec<u16> = self
                    .values()
                    .iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                    .collect();
                let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
                    d.width as u32,
                    d.height as u32,
                    px,
                )
                .expect("buffer length matches dimensions");
                buf.save(path)?;
                Ok(())
            }
        }
    }

    /// Writes an 8-bit grayscale image, values clamped to `[0, 1]`.
    pub fn save_8bit(&self, path: &Path) -> Result<()> {
        self.raster.save_png(path)
    }

    /// Rescales by the maximum so the peak becomes one, for visualization.
    pub fn peak_scaled(&self) -> SaliencyMap {
        let max = self.values().iter().fold(0.0f64, |m, &v| m.max(v));
        let data = if max > 0.0 {
            self.values().iter().map(|v| v / max).collect()
        } else {
            self.values().to_vec()
        };
        SaliencyMap::new(self.dims(), data).expect("scaled map stays valid")
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn save_raw_f32(raster: &Raster, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + raster.data().len() * 4);
    bytes.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    for v in raster.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn load_raw_f32(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "{}: raw float map shorter than its header",
            path.display()
        )));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != width * height * 4 {
        return Err(Error::DimensionMismatch {
            expected: format!("{} payload bytes for {width}x{height}", width * height * 4),
            actual: format!("{} bytes", body.len()),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Raster::new(width, height, 1, data)
}

fn decode_grayscale(img: DynamicImage) -> Result<Raster> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(b) => b
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(f64::from)
            .collect(),
        DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLumaA16(_) => img
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        other => other
            .into_luma8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
    };
    Raster::new(w, h, 1, data)
}

fn read_raster(path: &Path) -> Result<Raster> {
    let raster = match extension(path).as_str() {
        "bin" | "raw" | "f32" => load_raw_f32(path)?,
        _ => {
            let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
            decode_grayscale(image::load_from_memory(&bytes)?)?
        }
    };
    if let Some(v) = raster.data().iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "{}: negative saliency value {v}",
            path.display()
        )));
    }
    Ok(raster)
}

/// Loads a saliency map at its stored size.
pub fn read_saliency(path: &Path) -> Result<SaliencyMap> {
    SaliencyMap::from_raster(read_raster(path)?)
}

/// Loads an externally predicted saliency map and brings it to `dims`.
///
/// Accepts 8/16-bit grayscale PNG or PGM (scaled to `[0, 1]`) and the raw float format
/// (`u32` LE width, `u32` LE height, then `f32` LE samples) taken verbatim. A map with a
/// different 2:1 size is resampled bilinearly with a warning.
pub fn load_saliency(path: &Path, dims: ErpDims) -> Result<SaliencyMap> {
    let raster = read_raster(path)?;
    if raster.width() == dims.width && raster.height() == dims.height {
        return SaliencyMap::from_raster(raster);
    }
    if raster.width() != 2 * raster.height() {
        return Err(Error::DimensionMismatch {
            expected: format!("{dims} or another 2:1 size"),
            actual: format!("{}x{}", raster.width(), raster.height()),
        });
    }
    log::warn!(
        "{}: saliency map is {}x{}, resampling to {dims}",
        path.display(),
        raster.width(),
        raster.height()
    );
    Ok(SaliencyMap::from_raster(raster)?.resize(dims))
}

/// Weights every pixel by `cos(latitude)` and rescales so the map sums to one.
pub fn normalize_saliency(map: &SaliencyMap) -> Result<SaliencyMap> {
    normalize_saliency_with(map, &row_weights(map.dims().height))
}

/// [`normalize_saliency`] with explicit per-row weights.
pub fn normalize_saliency_with(map: &SaliencyMap, rows: &[f64]) -> Result<SaliencyMap> {
    let d = map.dims();
    if rows.len() != d.height {
        return Err(Error::DimensionMismatch {
            expected: format!("{} row weights", d.height),
            actual: format!("{}", rows.len()),
        });
    }
    let weighted: Vec<f64> = map
        .values()
        .chunks_exact(d.width)
        .zip(rows)
        .flat_map(|(row, &w)| row.iter().map(move |v| v * w))
        .collect();
    let total: f64 = weighted.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "saliency map has no positive mass".into(),
        ));
    }
    let values = weighted.into_iter().map(|v| v / total).collect();
    Ok(SaliencyMap {
        raster: Raster::new(d.width, d.height, 1, values)?,
        normalized: true,
    })
}

// Center-surround fallback
//
// Levels are successive 2x reductions: blur with the binomial [1 4 6 4 1]/16 kernel
// (wrapping in longitude, clamping in latitude), then average 2x2 blocks. Both steps are
// mirror-symmetric, so left-right symmetric inputs give left-right symmetric saliency.

const PYRAMID_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Default center levels; surrounds sit 3 and 4 levels below.
pub const DEFAULT_CENTER_LEVELS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.w + x]
    }

    fn blur(&self) -> Plane {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kw) in PYRAMID_KERNEL.iter().enumerate() {
                    let xx = (x as isize + k as isize - 2).rem_euclid(w as isize) as usize;
                    acc += kw * self.at(xx, y);
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kw) in PYRAMID_KERNEL.iter().enumerate() {
                    let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += kw * tmp[yy * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        Plane { w, h, v: out }
    }

    fn reduce(&self) -> Plane {
        let b = self.blur();
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = 0.25
                    * (b.at(2 * x, 2 * y)
                        + b.at(2 * x + 1, 2 * y)
                        + b.at(2 * x, 2 * y + 1)
                        + b.at(2 * x + 1, 2 * y + 1));
            }
        }
        Plane { w, h, v }
    }

    /// Bilinear resample with centered pixels; wraps columns, clamps rows.
    fn resample(&self, w: usize, h: usize) -> Plane {
        let sx = self.w as f64 / w as f64;
        let sy = self.h as f64 / h as f64;
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                let x0f = fx.floor();
                let tx = fx - x0f;
                let x0 = (x0f as isize).rem_euclid(self.w as isize) as usize;
                let x1 = (x0 + 1) % self.w;
                let top = self.at(x0, y0) + (self.at(x1, y0) - self.at(x0, y0)) * tx;
                let bot = self.at(x0, y1) + (self.at(x1, y1) - self.at(x0, y1)) * tx;
                v[y * w + x] = top + (bot - top) * ty;
            }
        }
        Plane { w, h, v }
    }

    fn peak_normalized(mut self) -> Plane {
        let max = self.v.iter().fold(0.0f64, |m, &x| m.max(x));
        // below this the map is numerical noise from a featureless channel
        if max <= 1e-9 {
            self.v.iter_mut().for_each(|x| *x = 0.0);
        } else {
            self.v.iter_mut().for_each(|x| *x /= max);
        }
        self
    }
}

fn feature_channels(img: &ErpImage) -> Vec<Plane> {
    let rgb = img.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let mut intensity = Vec::with_capacity(w * h);
    let mut red_green = Vec::with_capacity(w * h);
    let mut blue_yellow = Vec::with_capacity(w * h);
    for px in rgb.data().chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        intensity.push((r + g + b) / 3.0);
        red_green.push(r - g);
        blue_yellow.push(b - 0.5 * (r + g));
    }
    vec![
        Plane { w, h, v: intensity },
        Plane { w, h, v: red_green },
        Plane {
            w,
            h,
            v: blue_yellow,
        },
    ]
}

/// Multi-scale center-surround contrast saliency over intensity and two color-opponent
/// channels, rescaled to `[0, 1]`.
///
/// For every center level `c` in `center_levels` and surround `s = c + 3, c + 4`, the
/// feature map is `|P_c - up(P_s)|`. Feature maps are peak-normalized per channel,
/// accumulated at the finest center level, averaged over channels and upsampled.
pub fn fallback_saliency(img: &ErpImage, center_levels: &[usize]) -> Result<SaliencyMap> {
    if center_levels.is_empty() {
        return Err(Error::InvalidInput("no pyramid levels given".into()));
    }
    let dims = img.dims();
    let deepest = center_levels.iter().max().unwrap() + 4;
    if deepest >= usize::BITS as usize || dims.height < (1usize << deepest) {
        return Err(Error::Domain(format!(
            "image height {} is below 2^{deepest} required by the pyramid",
            dims.height
        )));
    }
    let finest = *center_levels.iter().min().unwrap();
    let (acc_w, acc_h) = (dims.width >> finest, dims.height >> finest);

    let mut combined = vec![0.0; acc_w * acc_h];
    for channel in feature_channels(img) {
        let mut pyramid = vec![channel];
        for _ in 0..deepest {
            let next = pyramid.last().unwrap().reduce();
            pyramid.push(next);
        }
        let mut conspicuity = Plane {
            w: acc_w,
            h: acc_h,
            v: vec![0.0; acc_w * acc_h],
        };
        for &c in center_levels {
            let center = &pyramid[c];
            for s in [c + 3, c + 4] {
                let surround = pyramid[s].resample(center.w, center.h);
                let diff = Plane {
                    w: center.w,
                    h: center.h,
                    v: center
                        .v
                        .iter()
                        .zip(&surround.v)
                        .map(|(a, b)| (a - b).abs())
                        .collect(),
                };
                let diff = diff.peak_normalized().resample(acc_w, acc_h);
                conspicuity
                    .v
                    .iter_mut()
                    .zip(&diff.v)
                    .for_each(|(a, b)| *a += b);
            }
        }
        let conspicuity = conspicuity.peak_normalized();
        combined
            .iter_mut()
            .zip(&conspicuity.v)
            .for_each(|(a, b)| *a += b / 3.0);
    }
    let full = Plane {
        w: acc_w,
        h: acc_h,
        v: combined,
    }
    .resample(dims.width, dims.height)
    .peak_normalized();
    SaliencyMap::new(dims, full.v.into_iter().map(|v| v.max(0.0)).collect())
}
