//! Equirectangular (ERP) coordinate conventions, sphere rotations and
//! tangent-plane (gnomonic) projection.
//!
//! Conventions used throughout the crate:
//!
//! * Pixel `i` covers the continuous interval `[i, i + 1)` and has its center at `i + 0.5`.
//!   Continuous coordinates returned by [`sphere_to_erp`] are expressed so that pixel
//!   `i`'s center sits at exactly `i`.
//! * Longitude grows to the right from `-π` at the left edge; latitude is `+π/2` at the top.
//! * Unit vectors are y-up: `(cos λ sin θ, sin λ, cos λ cos θ)`, so longitude `0` on the
//!   equator is `+z`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ErpDims, ErpImage, Raster};

/// A point on the unit sphere in geographic form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereCoord {
    longitude: f64,
    latitude: f64,
}

impl SphereCoord {
    /// Wraps longitude into `[-π, π)`; rejects latitudes outside `[-π/2, π/2]`.
    pub fn new(longitude: f64, latitude: f64) -> Result<Self> {
        if !longitude.is_finite() || !latitude.is_finite() {
            return Err(Error::Domain("non-finite sphere coordinate".into()));
        }
        if latitude.abs() > FRAC_PI_2 {
            return Err(Error::Domain(format!(
                "latitude {latitude} outside [-pi/2, pi/2]"
            )));
        }
        let longitude = if latitude.abs() == FRAC_PI_2 {
            0.0
        } else {
            wrap_longitude(longitude)
        };
        Ok(Self {
            longitude,
            latitude,
        })
    }

    pub fn longitude(&self) -> f64 {
        self.longitude
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn to_unit_vector(&self) -> Vector3<f64> {
        let (sl, cl) = self.latitude.sin_cos();
        let (st, ct) = self.longitude.sin_cos();
        Vector3::new(cl * st, sl, cl * ct)
    }

    /// Inverse of [`SphereCoord::to_unit_vector`]; the input need not be normalized.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        let n = v.norm();
        let y = (v.y / n).clamp(-1.0, 1.0);
        let latitude = y.asin();
        let longitude = if v.x == 0.0 && v.z == 0.0 {
            0.0
        } else {
            wrap_longitude(v.x.atan2(v.z))
        };
        Self {
            longitude,
            latitude,
        }
    }
}

fn wrap_longitude(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Maps a continuous pixel position to the sphere.
pub fn erp_to_sphere(px: (f64, f64), dims: ErpDims) -> Result<SphereCoord> {
    let (x, y) = px;
    let (w, h) = (dims.width as f64, dims.height as f64);
    if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
        return Err(Error::Domain(format!(
            "pixel ({x}, {y}) outside {}x{} image",
            dims.width, dims.height
        )));
    }
    let longitude = ((x + 0.5) / w - 0.5) * TAU;
    let latitude = (0.5 - (y + 0.5) / h) * PI;
    SphereCoord::new(longitude, latitude)
}

/// Maps a sphere point to continuous pixel coordinates (pixel centers at integers).
///
/// The returned column lies in `[-0.5, W - 0.5)`.
pub fn sphere_to_erp(c: SphereCoord, dims: ErpDims) -> (f64, f64) {
    let (w, h) = (dims.width as f64, dims.height as f64);
    let lon = wrap_longitude(c.longitude);
    let x = (lon / TAU + 0.5) * w - 0.5;
    let y = (0.5 - c.latitude / PI) * h - 0.5;
    (x, y)
}

/// Three rotation angles, in radians, about the gravity, grazing and perpendicular axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAngles {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
}

impl RotationAngles {
    pub const IDENTITY: RotationAngles = RotationAngles {
        theta: 0.0,
        phi: 0.0,
        psi: 0.0,
    };

    pub fn new(theta: f64, phi: f64, psi: f64) -> Result<Self> {
        let ok = (-PI..=PI).contains(&theta)
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&phi)
            && (-PI..=PI).contains(&psi);
        if !ok {
            return Err(Error::Domain(format!(
                "rotation angles ({theta}, {phi}, {psi}) outside [-pi,pi] x [-pi/2,pi/2] x [-pi,pi]"
            )));
        }
        Ok(Self { theta, phi, psi })
    }
}

/// `R = R_y(theta) * R_x(phi) * R_z(psi)`: gravity (y, up), grazing (x), perpendicular (z).
///
/// Applied to column vectors, so `psi` acts first.
pub fn compose_rotation(angles: RotationAngles) -> Matrix3<f64> {
    let gravity = Rotation3::from_axis_angle(&Vector3::y_axis(), angles.theta);
    let grazing = Rotation3::from_axis_angle(&Vector3::x_axis(), angles.phi);
    let perpendicular = Rotation3::from_axis_angle(&Vector3::z_axis(), angles.psi);
    (gravity * grazing * perpendicular).into_inner()
}

/// Axis-aligned rectangle on the ERP pixel grid. Never wraps across the seam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl RegionBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!("empty box {w}x{h}")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn full(dims: ErpDims) -> Self {
        Self {
            x: 0,
            y: 0,
            w: dims.width,
            h: dims.height,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    /// Continuous center in pixel-edge coordinates, `(x + w/2, y + h/2)`.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    pub fn check_within(&self, dims: ErpDims) -> Result<()> {
        if self.fits(dims.width, dims.height) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "box ({}, {}, {}, {}) does not fit a {dims} image",
                self.x, self.y, self.w, self.h
            )))
        }
    }

    pub fn intersection_area(&self, other: &RegionBox) -> usize {
        let ix = self
            .right()
            .min(other.right())
            .saturating_sub(self.x.max(other.x));
        let iy = self
            .bottom()
            .min(other.bottom())
            .saturating_sub(self.y.max(other.y));
        ix * iy
    }

    /// Smallest box containing both.
    pub fn union_bounds(&self, other: &RegionBox) -> RegionBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        RegionBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }
}

/// Physical extent `(H_p, W_p)` of the tangent plane covering `region` on a sphere of radius `r`.
///
/// `H_p = 2 r tan((B_h / H) π/2)` and `W_p = 2 r tan((B_w / W) π)`.
pub fn tangent_plane_extent(region: &RegionBox, dims: ErpDims, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!(
            "sphere radius must be positive, got {r}"
        )));
    }
    // half-angles must stay below pi/2: B_h < H and B_w < W/2
    if region.h >= dims.height || 2 * region.w >= dims.width {
        return Err(Error::Domain(format!(
            "box {}x{} spans >= 180 degrees of field of view on a {dims} image",
            region.w, region.h
        )));
    }
    let half_v = region.h as f64 / dims.height as f64 * FRAC_PI_2;
    let half_h = region.w as f64 / dims.width as f64 * PI;
    Ok((2.0 * r * half_v.tan(), 2.0 * r * half_h.tan()))
}

/// Output pixel density matching the ERP angular resolution at the tangent point.
pub fn default_pixel_density(dims: ErpDims, r: f64) -> f64 {
    dims.width as f64 / (TAU * r)
}

/// Pixel size `(height, width)` of the gnomonic crop for `region`.
pub fn gnomonic_dims(
    region: &RegionBox,
    dims: ErpDims,
    r: f64,
    pixel_density: f64,
) -> Result<(usize, usize)> {
    if !(pixel_density > 0.0 && pixel_density.is_finite()) {
        return Err(Error::Domain(format!(
            "pixel density must be positive, got {pixel_density}"
        )));
    }
    let (hp, wp) = tangent_plane_extent(region, dims, r)?;
    let to_px = |v: f64| ((v * pixel_density).round() as usize).max(1);
    Ok((to_px(hp), to_px(wp)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

pub(crate) fn sample(raster: &Raster, pos: (f64, f64), c: usize, interp: Interpolation) -> f64 {
    match interp {
        Interpolation::Bilinear => raster.sample_bilinear_wrapped(pos.0, pos.1, c),
        Interpolation::Nearest => raster.sample_nearest_wrapped(pos.0, pos.1, c),
    }
}

/// Renders the distortion-free perspective view of `region` onto an `out_h x out_w` raster.
///
/// The tangent plane touches the sphere at the region center; its extent follows
/// [`tangent_plane_extent`] on the unit sphere.
pub fn gnomonic_project(
    img: &ErpImage,
    region: &RegionBox,
    out_h: usize,
    out_w: usize,
    interp: Interpolation,
) -> Result<Raster> {
    let dims = img.dims();
    region.check_within(dims)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput("empty output size".into()));
    }
    let (plane_h, plane_w) = tangent_plane_extent(region, dims, 1.0)?;
    let (cx, cy) = region.center();
    // center in pixel-index units (pixel i centered at i)
    let center = erp_to_sphere((cx - 0.5, cy - 0.5), dims)?;
    let (forward, right, up) = tangent_frame(center);

    let channels = img.channels();
    let mut out = Raster::filled(out_w, out_h, channels, 0.0);
    for i in 0..out_h {
        let v = (0.5 - (i as f64 + 0.5) / out_h as f64) * plane_h;
        for j in 0..out_w {
            let u = ((j as f64 + 0.5) / out_w as f64 - 0.5) * plane_w;
            let dir = forward + right * u + up * v;
            let pos = sphere_to_erp(SphereCoord::from_vector(&dir), dims);
            for c in 0..channels {
                out.set(j, i, c, sample(img, pos, c, interp));
            }
        }
    }
    Ok(out)
}

/// Orthonormal `(forward, right, up)` frame at `c`; right follows increasing longitude.
pub fn tangent_frame(c: SphereCoord) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (sl, cl) = c.latitude().sin_cos();
    let (st, ct) = c.longitude().sin_cos();
    let forward = Vector3::new(cl * st, sl, cl * ct);
    let right = Vector3::new(ct, 0.0, -st);
    let up = Vector3::new(-sl * st, cl, -sl * ct);
    (forward, right, up)
}

/// `cos(latitude)` of each pixel row, mirrored so the two hemispheres match bit for bit.
pub fn row_weights(height: usize) -> Vec<f64> {
    let mut w = vec![0.0; height];
    let h = height as f64;
    for y in 0..height.div_ceil(2) {
        let lat = (h - 1.0 - 2.0 * y as f64) / (2.0 * h) * PI;
        w[y] = lat.cos();
        w[height - 1 - y] = w[y];
    }
    w
}

/// Per-pixel `cos(latitude)` weights as a single-channel raster.
pub fn latitude_weights(dims: ErpDims) -> Raster {
    let rows = row_weights(dims.height);
    Raster::from_fn(dims.width, dims.height, 1, |_, y, _| rows[y])
}
