//! Spherical random-rotation augmentation of paired ERP images and saliency maps.
//!
//! Each output pixel is pulled from the input: the pixel's direction is rotated by
//! `R^T` and the input is sampled there, so content at direction `v` ends up at `R v`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compose_rotation, erp_to_sphere, sample, sphere_to_erp, Interpolation, RotationAngles,
    SphereCoord,
};
use crate::raster::{ErpDims, ErpImage, Raster};
use crate::saliency::{load_saliency, SaliencyMap};

/// Rasters that can be resampled on the sphere.
pub trait ErpRaster: Sized {
    fn raster(&self) -> &Raster;

    /// Rebuilds a raster of the same kind from resampled data.
    fn with_raster(&self, raster: Raster) -> Self;
}

impl ErpRaster for ErpImage {
    fn raster(&self) -> &Raster {
        ErpImage::raster(self)
    }

    fn with_raster(&self, raster: Raster) -> Self {
        ErpImage::new(clamped(raster, 0.0, 1.0)).expect("samples clamped to [0, 1]")
    }
}

impl ErpRaster for SaliencyMap {
    fn raster(&self) -> &Raster {
        SaliencyMap::raster(self)
    }

    fn with_raster(&self, raster: Raster) -> Self {
        SaliencyMap::from_raster(clamped(raster, 0.0, f64::INFINITY))
            .expect("values clamped to be non-negative")
    }
}

// interpolation can overshoot the input range by an ulp
fn clamped(raster: Raster, lo: f64, hi: f64) -> Raster {
    let (w, h, c) = (raster.width(), raster.height(), raster.channels());
    let data = raster
        .into_data()
        .into_iter()
        .map(|v| v.clamp(lo, hi))
        .collect();
    Raster::new(w, h, c, data).expect("clamping keeps the shape")
}

/// Draws `theta ~ U[-π, π]`, `phi ~ U[-π/2, π/2]`, `psi ~ U[-π, π]` independently.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationAngles {
    let theta = rng.random_range(-PI..=PI);
    let phi = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
    let psi = rng.random_range(-PI..=PI);
    RotationAngles { theta, phi, psi }
}

/// Gravity-axis-only rotation, `theta ~ U[-π, π]`.
pub fn sample_yaw<R: Rng + ?Sized>(rng: &mut R) -> RotationAngles {
    RotationAngles {
        theta: rng.random_range(-PI..=PI),
        phi: 0.0,
        psi: 0.0,
    }
}

/// Rotates `raster` on the sphere by `compose_rotation(angles)`.
pub fn rotate_erp<T: ErpRaster>(raster: &T, angles: RotationAngles, interp: Interpolation) -> T {
    rotate_erp_matrix(raster, &compose_rotation(angles), interp)
}

/// Rotates `raster` by an arbitrary rotation matrix.
pub fn rotate_erp_matrix<T: ErpRaster>(
    raster: &T,
    rotation: &Matrix3<f64>,
    interp: Interpolation,
) -> T {
    let src = raster.raster();
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let dims = ErpDims {
        width: w,
        height: h,
    };
    let inverse = rotation.transpose();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w * ch);
            for x in 0..w {
                let c = erp_to_sphere((x as f64, y as f64), dims).expect("pixel inside image");
                let v = inverse * c.to_unit_vector();
                let pos = sphere_to_erp(SphereCoord::from_vector(&v), dims);
                for k in 0..ch {
                    row.push(sample(src, pos, k, interp));
                }
            }
            row
        })
        .collect();
    let data = rows.concat();
    raster.with_raster(Raster::new(w, h, ch, data).expect("rotation output is finite"))
}

/// Provenance of one augmented copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_id: String,
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
    /// Seed the angles were drawn from; `angles_for_seed(seed, ..)` reproduces them.
    pub seed: u64,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl AugmentationRecord {
    pub fn angles(&self) -> RotationAngles {
        RotationAngles {
            theta: self.theta,
            phi: self.phi,
            psi: self.psi,
        }
    }
}

/// Per-copy seed from the master seed, source id and copy index (FNV-1a, stable across
/// platforms and releases).
pub fn derive_seed(master_seed: u64, source_id: &str, copy: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let bytes = master_seed
        .to_le_bytes()
        .into_iter()
        .chain(source_id.bytes())
        .chain([0xff])
        .chain(copy.to_le_bytes());
    for b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

pub fn angles_for_seed(seed: u64, horizontal_only: bool) -> RotationAngles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if horizontal_only {
        sample_yaw(&mut rng)
    } else {
        sample_rotation(&mut rng)
    }
}

/// Rotates an image and its saliency map by the same angles.
pub fn augment_pair(
    img: &ErpImage,
    sal: &SaliencyMap,
    angles: RotationAngles,
    interp: Interpolation,
    source_id: &str,
    seed: u64,
) -> Result<(ErpImage, SaliencyMap, AugmentationRecord)> {
    if img.dims() != sal.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims().to_string(),
            actual: sal.dims().to_string(),
        });
    }
    let rotation = compose_rotation(angles);
    let out_img = rotate_erp_matrix(img, &rotation, interp);
    let out_sal = rotate_erp_matrix(sal, &rotation, interp);
    let record = AugmentationRecord {
        source_id: source_id.to_owned(),
        theta: angles.theta,
        phi: angles.phi,
        psi: angles.psi,
        seed,
        interpolation: interp,
    };
    Ok((out_img, out_sal, record))
}

/// Suffix marking a saliency map next to its image, as in `<id>_sal.png`.
pub const SALIENCY_SUFFIX: &str = "_sal";
const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "pnm"];
const SALIENCY_EXTENSIONS: [&str; 4] = ["png", "pgm", "bin", "f32"];

/// An image and its optional saliency map found in an input directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePair {
    pub id: String,
    pub image: PathBuf,
    pub saliency: Option<PathBuf>,
}

/// Pairs every `<id>.<png|jpg|ppm>` in `dir` with `<id>_sal.<png|pgm|bin>` when present,
/// sorted by id.
pub fn find_sources(dir: &Path) -> Result<Vec<SourcePair>> {
    let mut pairs = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if stem.ends_with(SALIENCY_SUFFIX)
            || !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str())
        {
            continue;
        }
        let saliency = SALIENCY_EXTENSIONS
            .iter()
            .map(|e| dir.join(format!("{stem}{SALIENCY_SUFFIX}.{e}")))
            .find(|p| p.is_file());
        pairs.push(SourcePair {
            id: stem.to_owned(),
            image: path,
            saliency,
        });
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.image.cmp(&b.image)));
    if let Some(w) = pairs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput(format!(
            "two images share the id {:?}",
            w[0].id
        )));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOptions {
    pub count: u64,
    pub seed: u64,
    pub horizontal_only: bool,
    pub interpolation: Interpolation,
}

/// Name of the `copy`-th rotated version of `id`.
pub fn augmented_id(id: &str, copy: u64) -> String {
    format!("{id}_rot{copy:03}")
}

/// Writes `count` rotated copies of every source pair into `out_dir` and returns the
/// provenance records in output order.
pub fn augment_directory(
    input_dir: &Path,
    out_dir: &Path,
    opts: &AugmentOptions,
) -> Result<Vec<AugmentationRecord>> {
    let sources = find_sources(input_dir)?;
    if sources.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no images found in {}",
            input_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut records = Vec::new();
    for src in &sources {
        let img = ErpImage::load(&src.image)?;
        let sal = src
            .saliency
            .as_deref()
            .map(|p| load_saliency(p, img.dims()))
            .transpose()?;
        for copy in 0..opts.count {
            let seed = derive_seed(opts.seed, &src.id, copy);
            let angles = angles_for_seed(seed, opts.horizontal_only);
            let rotation = compose_rotation(angles);
            let name = augmented_id(&src.id, copy);
            rotate_erp_matrix(&img, &rotation, opts.interpolation)
                .save_png(&out_dir.join(format!("{name}.png")))?;
            if let (Some(sal), Some(path)) = (&sal, &src.saliency) {
                let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png");
                let ext = if ext == "pgm" { "png" } else { ext };
                rotate_erp_matrix(sal, &rotation, opts.interpolation)
                    .save(&out_dir.join(format!("{name}{SALIENCY_SUFFIX}.{ext}")))?;
            }
            records.push(AugmentationRecord {
                source_id: src.id.clone(),
                theta: angles.theta,
                phi: angles.phi,
                psi: angles.psi,
                seed,
                interpolation: opts.interpolation,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::row_weights;

    fn dims(h: usize) -> ErpDims {
        ErpDims::from_height(h).unwrap()
    }

    fn noise_image(d: ErpDims) -> ErpImage {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ErpImage::from_fn(d, 3, |_, _, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn identical_seed_gives_identical_angles() {
        let a = sample_rotation(&mut ChaCha8Rng::seed_from_u64(0));
        let b = sample_rotation(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(a, b);
        assert_eq!(
            angles_for_seed(derive_seed(5, "p1", 0), false),
            angles_for_seed(derive_seed(5, "p1", 0), false)
        );
        assert_ne!(derive_seed(5, "p1", 0), derive_seed(5, "p2", 0));
        assert_ne!(derive_seed(5, "p1", 0), derive_seed(5, "p1", 1));
    }

    #[test]
    fn draws_are_uniform_on_their_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sum = 0.0;
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..n {
            let a = sample_rotation(&mut rng);
            sum += a.theta;
            lo = lo.min(a.theta);
            hi = hi.max(a.theta);
            assert!(a.phi.abs() <= FRAC_PI_2);
            assert!(a.psi.abs() <= PI);
        }
        assert!((sum / n as f64).abs() < 0.02 * PI);
        assert!(lo >= -PI && hi <= PI);
        assert!(lo < -PI + 0.01 && hi > PI - 0.01);
    }

    #[test]
    fn phi_never_leaves_its_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1_000_000 {
            assert!(sample_rotation(&mut rng).phi.abs() <= FRAC_PI_2);
        }
    }

    #[test]
    fn identity_nearest_is_exact_copy() {
        let img = noise_image(dims(32));
        let out = rotate_erp(&img, RotationAngles::IDENTITY, Interpolation::Nearest);
        assert_eq!(out, img);
    }

    #[test]
    fn half_turn_yaw_is_column_shift() {
        let d = dims(32);
        let img = noise_image(d);
        let out = rotate_erp(
            &img,
            RotationAngles::new(PI, 0.0, 0.0).unwrap(),
            Interpolation::Nearest,
        );
        for y in 0..d.height {
            for x in 0..d.width {
                assert_eq!(out.pixel(x, y), img.pixel((x + d.width / 2) % d.width, y));
            }
        }
    }

    #[test]
    fn quarter_turn_yaw_commutes_with_shift() {
        let d = dims(32);
        let img = noise_image(d);
        let out = rotate_erp(
            &img,
            RotationAngles::new(PI / 2.0, 0.0, 0.0).unwrap(),
            Interpolation::Nearest,
        );
        let shift = d.width / 4;
        for y in 0..d.height {
            for x in 0..d.width {
                assert_eq!(out.pixel((x + shift) % d.width, y), img.pixel(x, y));
            }
        }
    }

    #[test]
    fn pair_dims_must_match() {
        let img = noise_image(dims(16));
        let sal = SaliencyMap::new(dims(8), vec![0.5; 128]).unwrap();
        let r = augment_pair(
            &img,
            &sal,
            RotationAngles::IDENTITY,
            Interpolation::Nearest,
            "x",
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn identity_pair_is_unchanged() {
        let d = dims(16);
        let img = noise_image(d);
        let sal = SaliencyMap::from_fn(d, |x, y, _| (x * y) as f64 / 512.0).unwrap();
        let (oi, os, rec) = augment_pair(
            &img,
            &sal,
            RotationAngles::IDENTITY,
            Interpolation::Nearest,
            "p",
            3,
        )
        .unwrap();
        assert_eq!(oi, img);
        assert_eq!(os, sal);
        assert_eq!(rec.seed, 3);
        assert_eq!(rec.angles(), RotationAngles::IDENTITY);
    }

    #[test]
    fn isolated_peak_follows_rotation() {
        let d = dims(128);
        let (px, py) = (40usize, 50usize);
        let peak = erp_to_sphere((px as f64, py as f64), d)
            .unwrap()
            .to_unit_vector();
        let sigma = 2.0 * std::f64::consts::PI / d.width as f64;
        let sal = SaliencyMap::from_fn(d, |x, y, _| {
            let v = erp_to_sphere((x as f64, y as f64), d)
                .unwrap()
                .to_unit_vector();
            let angle = v.dot(&peak).clamp(-1.0, 1.0).acos();
            (-(angle * angle) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap();
        let img = ErpImage::from_fn(d, 1, |_, _, _| 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let angles = sample_rotation(&mut rng);
            let (_, out, _) =
                augment_pair(&img, &sal, angles, Interpolation::Nearest, "peak", 0).unwrap();
            let r = compose_rotation(angles);
            let (ex, ey) = sphere_to_erp(SphereCoord::from_vector(&(r * peak)), d);
            let i = (0..d.pixel_count())
                .max_by(|&a, &b| out.values()[a].total_cmp(&out.values()[b]).then(b.cmp(&a)))
                .unwrap();
            let (x, y) = (i % d.width, i / d.width);
            // compare on the sphere: one pixel of arc, widened in longitude near the poles
            let dx = (x as f64 - ex).abs();
            let dx = dx.min(d.width as f64 - dx);
            let lat = erp_to_sphere((x as f64, y as f64), d).unwrap().latitude();
            assert!(
                dx * lat.cos() <= 1.0 + 1e-9 && (y as f64 - ey).abs() <= 1.0,
                "argmax at ({x}, {y}), expected ({ex:.2}, {ey:.2})"
            );
        }
    }

    #[test]
    fn yaw_preserves_latitude_histogram() {
        let d = dims(64);
        let sal = SaliencyMap::from_fn(d, |x, y, _| {
            ((x as f64 * 0.2).sin() + 1.0) * (y as f64 * 0.1).cos().abs()
        })
        .unwrap();
        let out = rotate_erp(
            &sal,
            RotationAngles::new(1.234, 0.0, 0.0).unwrap(),
            Interpolation::Bilinear,
        );
        let rows = row_weights(d.height);
        let hist = |m: &SaliencyMap| -> Vec<f64> {
            (0..d.height)
                .map(|y| (0..d.width).map(|x| m.get(x, y)).sum::<f64>() * rows[y])
                .collect()
        };
        let (a, b) = (hist(&sal), hist(&out));
        let total: f64 = a.iter().sum();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() / total < 1e-6);
        }
    }
}
