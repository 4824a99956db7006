//! Plain floating-point rasters and the equirectangular image type built on them.

use std::ops::Deref;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved raster of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "raster must be non-empty, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height * channels),
                actual: format!("{} samples", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a raster by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Extracts one channel as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Samples at continuous pixel coordinates where pixel `i` has its center at `i`.
    ///
    /// Columns wrap around (longitude is periodic), rows clamp to the first and last row.
    pub fn sample_bilinear_wrapped(&self, cx: f64, cy: f64, c: usize) -> f64 {
        let w = self.width as isize;
        let cy = cy.clamp(0.0, (self.height - 1) as f64);
        let x0f = cx.floor();
        let y0f = cy.floor();
        let fx = cx - x0f;
        let fy = cy - y0f;
        let x0 = (x0f as isize).rem_euclid(w) as usize;
        let x1 = (x0 + 1) % self.width;
        let y0 = y0f as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        // lerp as a + (b - a) t so that constant neighborhoods reproduce exactly
        let top = lerp(self.get(x0, y0, c), self.get(x1, y0, c), fx);
        let bottom = lerp(self.get(x0, y1, c), self.get(x1, y1, c), fx);
        lerp(top, bottom, fy)
    }

    /// Nearest-neighbour counterpart of [`Raster::sample_bilinear_wrapped`].
    pub fn sample_nearest_wrapped(&self, cx: f64, cy: f64, c: usize) -> f64 {
        let x = (cx.round() as isize).rem_euclid(self.width as isize) as usize;
        let y = cy.round().clamp(0.0, (self.height - 1) as f64) as usize;
        self.get(x, y, c)
    }

    /// Resamples to a new size with a triangle (bilinear) filter.
    pub fn resize(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let (nw, nh) = (width as u32, height as u32);
        let mut data = Vec::with_capacity(width * height * self.channels);
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| v as f32).collect())
                        .expect("buffer length matches dimensions");
                let out = imageops::resize(&buf, nw, nh, FilterType::Triangle);
                data.extend(out.into_raw().into_iter().map(f64::from));
            }
            3 => {
                let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| v as f32).collect())
                        .expect("buffer length matches dimensions");
                let out = imageops::resize(&buf, nw, nh, FilterType::Triangle);
                data.extend(out.into_raw().into_iter().map(f64::from));
            }
            _ => {
                for c in 0..self.channels {
                    let plane = self.channel(c).resize(width, height);
                    if data.is_empty() {
                        data = vec![0.0; width * height * self.channels];
                    }
                    for (i, v) in plane.data.iter().enumerate() {
                        data[i * self.channels + c] = *v;
                    }
                }
            }
        }
        Raster {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    /// Writes an 8-bit PNG, clamping samples to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| to_u8(v)).collect())
                        .expect("buffer length matches dimensions");
                buf.save(path)?;
            }
            3 => {
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(w, h, self.data.iter().map(|&v| to_u8(v)).collect())
                        .expect("buffer length matches dimensions");
                buf.save(path)?;
            }
            n => {
                return Err(Error::InvalidInput(format!(
                    "cannot encode a {n}-channel raster as PNG"
                )))
            }
        }
        Ok(())
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Width and height of an equirectangular raster; width is always twice the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ErpDims {
    pub width: usize,
    pub height: usize,
}

impl ErpDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::Domain(format!(
                "equirectangular dimensions must satisfy width == 2 * height > 0, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn from_height(height: usize) -> Result<Self> {
        Self::new(2 * height, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

impl std::fmt::Display for ErpDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Equirectangular image covering the full sphere, samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage(Raster);

impl ErpImage {
    pub fn new(raster: Raster) -> Result<Self> {
        ErpDims::new(raster.width, raster.height)?;
        if raster.channels != 1 && raster.channels != 3 {
            return Err(Error::InvalidInput(format!(
                "equirectangular image needs 1 or 3 channels, got {}",
                raster.channels
            )));
        }
        if let Some(i) = raster.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "sample {} at index {i} outside [0, 1]",
                raster.data[i]
            )));
        }
        Ok(Self(raster))
    }

    pub fn from_fn(
        dims: ErpDims,
        channels: usize,
        f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        Self::new(Raster::from_fn(dims.width, dims.height, channels, f))
    }

    pub fn dims(&self) -> ErpDims {
        ErpDims {
            width: self.0.width,
            height: self.0.height,
        }
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }

    /// Dimensions of an image file, read from its header.
    pub fn probe(path: &Path) -> Result<ErpDims> {
        let (w, h) = image::ImageReader::open(path)
            .map_err(|e| Error::file(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::file(path, e))?
            .into_dimensions()?;
        ErpDims::new(w as usize, h as usize)
    }

    /// Loads any PNG, JPEG or PNM file as an RGB image.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let img = image::load_from_memory(&bytes)?.into_rgb32f();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v).clamp(0.0, 1.0))
            .collect();
        Self::new(Raster::new(w as usize, h as usize, 3, data)?)
    }

    pub fn to_rgb(&self) -> ErpImage {
        if self.0.channels == 3 {
            return self.clone();
        }
        let r = &self.0;
        ErpImage(Raster::from_fn(r.width, r.height, 3, |x, y, _| {
            r.get(x, y, 0)
        }))
    }

    pub fn resize(&self, dims: ErpDims) -> ErpImage {
        let mut r = self.0.resize(dims.width, dims.height);
        for v in r.data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        ErpImage(r)
    }
}

impl Deref for ErpImage {
    type Target = Raster;

    fn deref(&self) -> &Raster {
        &self.0
    }
}
