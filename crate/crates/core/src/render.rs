//! RoI overlays on the ERP image and perspective crops.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    default_pixel_density, gnomonic_dims, gnomonic_project, Interpolation, RegionBox,
};
use crate::raster::ErpImage;

/// Outline colors, cycled by RoI index.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub thickness: usize,
    pub palette: Vec<[u8; 3]>,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            thickness: 3,
            palette: PALETTE.to_vec(),
        }
    }
}

impl OverlayStyle {
    fn color(&self, i: usize) -> [f64; 3] {
        let c = if self.palette.is_empty() {
            PALETTE[i % PALETTE.len()]
        } else {
            self.palette[i % self.palette.len()]
        };
        c.map(|v| v as f64 / 255.0)
    }
}

/// Pixels on the outline of `b`, `thickness` pixels deep from the box edge inward.
pub fn border_pixels(b: &RegionBox, thickness: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let t = thickness.max(1);
    (b.y..b.bottom()).flat_map(move |y| {
        (b.x..b.right()).filter_map(move |x| {
            let edge =
                x - b.x < t || b.right() - 1 - x < t || y - b.y < t || b.bottom() - 1 - y < t;
            edge.then_some((x, y))
        })
    })
}

/// Copy of `img` (as RGB) with each RoI outline drawn in its palette color.
pub fn overlay_rois(img: &ErpImage, rois: &[RegionBox], style: &OverlayStyle) -> Result<ErpImage> {
    let dims = img.dims();
    for r in rois {
        r.check_within(dims)?;
    }
    let mut raster = img.to_rgb().into_raster();
    for (i, r) in rois.iter().enumerate() {
        let color = style.color(i);
        for (x, y) in border_pixels(r, style.thickness) {
            raster.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
    ErpImage::new(raster)
}

/// File name of the `index`-th crop.
pub fn crop_file_name(index: usize) -> String {
    format!("crop_{index:02}.png")
}

/// Writes one perspective crop per RoI into `out_dir`, in RoI order.
///
/// `pixel_density` defaults to the ERP angular resolution at the tangent point.
pub fn export_crops(
    img: &ErpImage,
    rois: &[RegionBox],
    out_dir: &Path,
    pixel_density: Option<f64>,
) -> Result<Vec<PathBuf>> {
    let dims = img.dims();
    let density = pixel_density.unwrap_or_else(|| default_pixel_density(dims, 1.0));
    let sizes = rois
        .iter()
        .map(|r| {
            r.check_within(dims)?;
            gnomonic_dims(r, dims, 1.0, density)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    rois.par_iter()
        .zip(&sizes)
        .enumerate()
        .map(|(i, (r, &(h, w)))| {
            let crop = gnomonic_project(img, r, h, w, Interpolation::Bilinear)?;
            let path = out_dir.join(crop_file_name(i));
            crop.save_png(&path)?;
            Ok(path)
        })
        .collect()
}
