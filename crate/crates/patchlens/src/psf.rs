//! Spatially varying PSF fields: synthetic base kernels, per-patch variation
//! models for controlled experiments, and file-based loading of measured PSFs.
//!
//! Every local PSF is kept nonnegative and normalized to unit sum. Synthetic
//! base kernels are rejected and reseeded when their spectrum has near-zeros,
//! so noiseless inversion experiments stay well-posed.

use std::f64::consts::PI;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fft::{fft2_plane, ifft2_real, Spectrum};
use crate::grid::ImageGrid;
use crate::layout::PatchLayout;
use crate::{Error, Result};

/// Ratio of smallest to largest spectral magnitude below which a generated
/// base PSF is rejected and reseeded.
const SPECTRAL_FLOOR: f64 = 1e-6;
const MAX_GENERATION_ATTEMPTS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasePsfKind {
    /// Smoothed positive random field, a diffuser-style speckle analog.
    GaussianSpeckle,
    /// Thin randomized closed contour, a phase-mask-style analog.
    ContourRim,
    /// Single unit impulse at the kernel center.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationMode {
    /// Sub-pixel translation growing with patch distance from the center.
    Shift,
    /// Rotation about the kernel center scaled by patch eccentricity.
    RotateWarp,
    /// Gaussian blur with sigma growing radially outward.
    BlurGradient,
}

impl VariationMode {
    pub fn name(&self) -> &'static str {
        match self {
            VariationMode::Shift => "shift",
            VariationMode::RotateWarp => "rotate-warp",
            VariationMode::BlurGradient => "blur-gradient",
        }
    }
}

/// Record of how a field's local PSFs were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationDescriptor {
    pub mode: String,
    pub strength: f64,
    pub seed: u64,
}

/// A base PSF plus one locally valid PSF per layout patch, row-major.
#[derive(Debug, Clone)]
pub struct PsfField {
    base: ImageGrid,
    locals: Vec<ImageGrid>,
    bx: usize,
    by: usize,
    pub descriptor: VariationDescriptor,
}

impl PsfField {
    pub fn base(&self) -> &ImageGrid {
        &self.base
    }

    pub fn local(&self, b: usize) -> &ImageGrid {
        &self.locals[b]
    }

    pub fn locals(&self) -> &[ImageGrid] {
        &self.locals
    }

    pub fn bx(&self) -> usize {
        self.bx
    }

    pub fn by(&self) -> usize {
        self.by
    }

    pub fn n_patches(&self) -> usize {
        self.bx * self.by
    }

    pub fn psf_rows(&self) -> usize {
        self.base.rows()
    }

    pub fn psf_cols(&self) -> usize {
        self.base.cols()
    }

    /// Assembles a field from an explicit base and per-patch locals
    /// (row-major), validating dimensions and normalization.
    pub fn from_parts(
        base: ImageGrid,
        locals: Vec<ImageGrid>,
        bx: usize,
        by: usize,
        descriptor: VariationDescriptor,
    ) -> Result<Self> {
        if locals.len() != bx * by {
            return Err(Error::Config(format!(
                "expected {} locals for a {by}x{bx} field, got {}",
                bx * by,
                locals.len()
            )));
        }
        for l in &locals {
            if l.rows() != base.rows() || l.cols() != base.cols() {
                return Err(Error::Dimension(
                    "local PSF dimensions do not match the base".into(),
                ));
            }
            if (l.sum() - 1.0).abs() > 1e-9 || l.min() < 0.0 {
                return Err(Error::Data(
                    "local PSFs must be nonnegative with unit sum".into(),
                ));
            }
        }
        Ok(Self {
            base,
            locals,
            bx,
            by,
            descriptor,
        })
    }

    /// Field with every local equal to the base (no spatial variation).
    pub fn uniform(base: ImageGrid, bx: usize, by: usize) -> Self {
        let locals = vec![base.clone(); bx * by];
        Self {
            base,
            locals,
            bx,
            by,
            descriptor: VariationDescriptor {
                mode: "none".into(),
                strength: 0.0,
                seed: 0,
            },
        }
    }

    /// Local PSF nearest to the fractional grid position `(fr, fc)` in
    /// `[0, 1]^2`. Exact when the query grid matches the field grid.
    pub fn local_nearest(&self, fr: f64, fc: f64) -> &ImageGrid {
        let pr = ((fr * self.by as f64) as usize).min(self.by - 1);
        let pc = ((fc * self.bx as f64) as usize).min(self.bx - 1);
        &self.locals[pr * self.bx + pc]
    }
}

// ---------------------------------------------------------------------------
// shared raster helpers (also used by the enhancement module)
// ---------------------------------------------------------------------------

pub(crate) enum BlurEdge {
    Zero,
    Replicate,
}

/// Separable Gaussian blur of one plane.
pub(crate) fn gaussian_blur_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    sigma: f64,
    edge: BlurEdge,
) -> Vec<f64> {
    if sigma <= 1e-12 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= ksum;
    }

    let sample = |data: &[f64], r: isize, c: isize| -> f64 {
        match edge {
            BlurEdge::Zero => {
                if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                    0.0
                } else {
                    data[r as usize * cols + c as usize]
                }
            }
            BlurEdge::Replicate => {
                let rr = r.clamp(0, rows as isize - 1) as usize;
                let cc = c.clamp(0, cols as isize - 1) as usize;
                data[rr * cols + cc]
            }
        }
    };

    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * sample(plane, r, c + i as isize - radius);
            }
            tmp[r as usize * cols + c as usize] = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * sample(&tmp, r + i as isize - radius, c);
            }
            out[r as usize * cols + c as usize] = acc;
        }
    }
    out
}

/// Bilinear rotation about the plane center; samples outside are zero.
fn rotate_plane(plane: &[f64], rows: usize, cols: usize, angle_deg: f64) -> Vec<f64> {
    let theta = angle_deg * PI / 180.0;
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // inverse map: rotate destination back into the source
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let sy = cy + dy * cos_t + dx * sin_t;
            let sx = cx - dy * sin_t + dx * cos_t;
            let r0 = sy.floor();
            let c0 = sx.floor();
            let fy = sy - r0;
            let fx = sx - c0;
            let mut acc = 0.0;
            for (ri, wy) in [(r0, 1.0 - fy), (r0 + 1.0, fy)] {
                for (ci, wx) in [(c0, 1.0 - fx), (c0 + 1.0, fx)] {
                    if ri >= 0.0 && ci >= 0.0 && (ri as usize) < rows && (ci as usize) < cols {
                        acc += wy * wx * plane[ri as usize * cols + ci as usize];
                    }
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Sub-pixel circular shift via a frequency-domain phase ramp. Keeps the
/// kernel band-limited and exactly real (Nyquist bins get a real factor).
fn subpixel_shift(plane: &[f64], rows: usize, cols: usize, dy: f64, dx: f64) -> Vec<f64> {
    let spec = fft2_plane(plane, rows, cols, rows, cols).expect("pad >= dims");
    let axis_factors = |n: usize, d: f64| -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                if n % 2 == 0 && k == n / 2 {
                    Complex64::new((PI * d).cos(), 0.0)
                } else {
                    let phase = -2.0 * PI * m * d / n as f64;
                    Complex64::new(phase.cos(), phase.sin())
                }
            })
            .collect()
    };
    let fr = axis_factors(rows, dy);
    let fc = axis_factors(cols, dx);
    let mut shifted = Spectrum::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            shifted.set(r, c, spec.get(r, c) * fr[r] * fc[c]);
        }
    }
    ifft2_real(&shifted)
}

fn normalize_psf(mut plane: Vec<f64>, rows: usize, cols: usize) -> Result<ImageGrid> {
    for v in &mut plane {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = plane.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Data("PSF has zero or negative total mass".into()));
    }
    for v in &mut plane {
        *v /= sum;
    }
    ImageGrid::from_plane(rows, cols, plane)
}

fn spectral_ratio(psf: &ImageGrid) -> f64 {
    let spec = fft2_plane(psf.plane(0), psf.rows(), psf.cols(), psf.rows(), psf.cols())
        .expect("pad >= dims");
    let max = spec.max_abs();
    if max == 0.0 {
        return 0.0;
    }
    spec.min_abs() / max
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over seed + salt
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn speckle_candidate(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows * cols;
    let sharp: Vec<f64> = uniform_plane(rng, n).iter().map(|v| v * v).collect();
    let smooth = gaussian_blur_plane(
        &uniform_plane(rng, n),
        rows,
        cols,
        (rows.min(cols) as f64 / 16.0).clamp(1.0, 4.0),
        BlurEdge::Replicate,
    );
    sharp
        .iter()
        .zip(smooth.iter())
        .map(|(a, b)| 0.35 * a + 0.65 * b)
        .collect()
}

fn contour_candidate(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows * cols;
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let r0 = 0.30 * rows.min(cols) as f64;
    let harmonics: Vec<(f64, f64)> = (1..=5)
        .map(|k| {
            (
                rng.random_range(-0.10..0.10) / k as f64,
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut rim = vec![0.0; n];
    let steps = 16 * rows.max(cols);
    for t in 0..steps {
        let theta = 2.0 * PI * t as f64 / steps as f64;
        let mut radius = r0;
        for (k, (a, phi)) in harmonics.iter().enumerate() {
            radius += r0 * a * ((k as f64 + 1.0) * theta + phi).cos();
        }
        let y = cy + radius * theta.sin();
        let x = cx + radius * theta.cos();
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (ri, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
            for (ci, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                if ri >= 0.0 && ci >= 0.0 && (ri as usize) < rows && (ci as usize) < cols {
                    rim[ri as usize * cols + ci as usize] += wy * wx;
                }
            }
        }
    }
    let rim = gaussian_blur_plane(&rim, rows, cols, 0.6, BlurEdge::Zero);
    let rim_sum: f64 = rim.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    // diffuse floor keeps the spectrum away from zero
    let bg = gaussian_blur_plane(&uniform_plane(rng, n), rows, cols, 2.0, BlurEdge::Replicate);
    let bg_sum: f64 = bg.iter().sum();
    rim.iter()
        .zip(bg.iter())
        .map(|(r, b)| r / rim_sum + 0.06 * b / bg_sum)
        .collect()
}

/// Synthesizes a base PSF of the requested kind, deterministic in `seed`.
pub fn make_base_psf(kind: BasePsfKind, rows: usize, cols: usize, seed: u64) -> Result<ImageGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("PSF dimensions must be at least 1".into()));
    }
    match kind {
        BasePsfKind::Delta => {
            let mut plane = vec![0.0; rows * cols];
            plane[(rows / 2) * cols + cols / 2] = 1.0;
            ImageGrid::from_plane(rows, cols, plane)
        }
        BasePsfKind::GaussianSpeckle | BasePsfKind::ContourRim => {
            for attempt in 0..MAX_GENERATION_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, attempt));
                let candidate = match kind {
                    BasePsfKind::GaussianSpeckle => speckle_candidate(rows, cols, &mut rng),
                    _ => contour_candidate(rows, cols, &mut rng),
                };
                let psf = normalize_psf(candidate, rows, cols)?;
                if spectral_ratio(&psf) >= SPECTRAL_FLOOR {
                    return Ok(psf);
                }
                log::debug!("reseeding PSF generation, attempt {attempt} spectrally deficient");
            }
            Err(Error::Numeric(format!(
                "could not generate a PSF with spectral ratio >= {SPECTRAL_FLOOR} in {MAX_GENERATION_ATTEMPTS} attempts"
            )))
        }
    }
}

/// Eccentricity vector of each patch center relative to the scene center,
/// scaled so the most distant patch has unit norm. Returns `(dy, dx, ecc)`
/// per patch in row-major order.
fn patch_eccentricities(layout: &PatchLayout) -> Vec<(f64, f64, f64)> {
    let cy = layout.scene_rows() as f64 / 2.0;
    let cx = layout.scene_cols() as f64 / 2.0;
    let raw: Vec<(f64, f64)> = (0..layout.n_patches())
        .map(|b| {
            let n = layout.nominal(b);
            let py = (n.r0 + n.r1) as f64 / 2.0;
            let px = (n.c0 + n.c1) as f64 / 2.0;
            (py - cy, px - cx)
        })
        .collect();
    let max_norm = raw
        .iter()
        .map(|(dy, dx)| (dy * dy + dx * dx).sqrt())
        .fold(0.0f64, f64::max);
    raw.iter()
        .map(|&(dy, dx)| {
            let norm = (dy * dy + dx * dx).sqrt();
            if max_norm == 0.0 || norm == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                (dy / norm, dx / norm, norm / max_norm)
            }
        })
        .collect()
}

/// The translation applied to the local PSF of patch `b` in shift mode:
/// magnitude `strength * eccentricity`, directed radially outward.
pub fn prescribed_shift(layout: &PatchLayout, b: usize, strength: f64) -> (f64, f64) {
    let (uy, ux, ecc) = patch_eccentricities(layout)[b];
    (strength * ecc * uy, strength * ecc * ux)
}

/// Derives per-patch local PSFs from `base` under the chosen variation model.
pub fn synthesize_field(
    base: &ImageGrid,
    layout: &PatchLayout,
    mode: VariationMode,
    strength: f64,
    seed: u64,
) -> Result<PsfField> {
    if strength < 0.0 {
        return Err(Error::Config(format!(
            "variation strength must be nonnegative, got {strength}"
        )));
    }
    if base.channels() != 1 {
        return Err(Error::Dimension("base PSF must be single-channel".into()));
    }
    let (rows, cols) = (base.rows(), base.cols());
    let eccs = patch_eccentricities(layout);
    let mut locals = Vec::with_capacity(layout.n_patches());
    for b in 0..layout.n_patches() {
        let (uy, ux, ecc) = eccs[b];
        if strength == 0.0 || ecc == 0.0 {
            locals.push(base.clone());
            continue;
        }
        let plane = match mode {
            VariationMode::Shift => {
                let (dy, dx) = (strength * ecc * uy, strength * ecc * ux);
                subpixel_shift(base.plane(0), rows, cols, dy, dx)
            }
            VariationMode::RotateWarp => rotate_plane(base.plane(0), rows, cols, strength * ecc),
            VariationMode::BlurGradient => {
                gaussian_blur_plane(base.plane(0), rows, cols, strength * ecc, BlurEdge::Zero)
            }
        };
        locals.push(normalize_psf(plane, rows, cols)?);
    }
    Ok(PsfField {
        base: base.clone(),
        locals,
        bx: layout.bx(),
        by: layout.by(),
        descriptor: VariationDescriptor {
            mode: mode.name().into(),
            strength,
            seed,
        },
    })
}

/// Source for file-based PSF fields: one shared kernel or one per patch.
#[derive(Debug, Clone)]
pub enum FieldSource {
    Single(PathBuf),
    PerPatch(Vec<PathBuf>),
}

/// Loads a PSF field from disk, normalizing each kernel to unit sum.
/// Kernels whose mass deviates from 1 by more than 1% are renormalized with
/// a warning.
pub fn load_field(source: &FieldSource, layout: &PatchLayout) -> Result<PsfField> {
    let load_one = |path: &PathBuf| -> Result<ImageGrid> {
        let img = crate::io::read_grid(path)?;
        let img = if img.channels() == 1 {
            img
        } else {
            // measured PSF stacks are collapsed to a single plane
            let n = img.rows() * img.cols();
            let mut plane = vec![0.0; n];
            for c in 0..img.channels() {
                for (p, v) in plane.iter_mut().zip(img.plane(c)) {
                    *p += v / img.channels() as f64;
                }
            }
            ImageGrid::from_plane(img.rows(), img.cols(), plane)?
        };
        let sum = img.sum();
        if sum <= 0.0 {
            return Err(Error::Data(format!(
                "PSF file {} has non-positive total mass",
                path.display()
            )));
        }
        if (sum - 1.0).abs() > 0.01 {
            log::warn!(
                "PSF file {} renormalized: mass {sum:.6} differed from 1 by more than 1%",
                path.display()
            );
        }
        normalize_psf(img.plane(0).to_vec(), img.rows(), img.cols())
    };

    match source {
        FieldSource::Single(path) => {
            let base = load_one(path)?;
            Ok(PsfField {
                locals: vec![base.clone(); layout.n_patches()],
                base,
                bx: layout.bx(),
                by: layout.by(),
                descriptor: VariationDescriptor {
                    mode: "loaded".into(),
                    strength: 0.0,
                    seed: 0,
                },
            })
        }
        FieldSource::PerPatch(paths) => {
            if paths.len() != layout.n_patches() {
                return Err(Error::Config(format!(
                    "expected {} per-patch PSF files, got {}",
                    layout.n_patches(),
                    paths.len()
                )));
            }
            let locals: Vec<ImageGrid> = paths.iter().map(load_one).collect::<Result<_>>()?;
            for l in &locals[1..] {
                if l.rows() != locals[0].rows() || l.cols() != locals[0].cols() {
                    return Err(Error::Data(
                        "per-patch PSF files have inconsistent dimensions".into(),
                    ));
                }
            }
            // central patch stands in for the base kernel
            let center = (layout.by() / 2) * layout.bx() + layout.bx() / 2;
            Ok(PsfField {
                base: locals[center].clone(),
                locals,
                bx: layout.bx(),
                by: layout.by(),
                descriptor: VariationDescriptor {
                    mode: "loaded".into(),
                    strength: 0.0,
                    seed: 0,
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner_distance(field: &PsfField) -> f64 {
        let base = field.base().plane(0);
        let corner = field.local(0).plane(0);
        base.iter()
            .zip(corner.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Integer-lag circular cross-correlation argmax between two planes
    /// (circular because the shift model wraps; means are removed so the DC
    /// mass cannot bias the peak).
    fn xcorr_peak(a: &ImageGrid, b: &ImageGrid, max_lag: isize) -> (isize, isize) {
        let (rows, cols) = (a.rows() as isize, a.cols() as isize);
        let n = (rows * cols) as f64;
        let am = a.sum() / n;
        let bm = b.sum() / n;
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for dy in -max_lag..=max_lag {
            for dx in -max_lag..=max_lag {
                let mut acc = 0.0;
                for r in 0..rows {
                    for c in 0..cols {
                        let sr = (r - dy).rem_euclid(rows);
                        let sc = (c - dx).rem_euclid(cols);
                        acc += (a.get(0, r as usize, c as usize) - am)
                            * (b.get(0, sr as usize, sc as usize) - bm);
                    }
                }
                if acc > best_v {
                    best_v = acc;
                    best = (dy, dx);
                }
            }
        }
        best
    }

    #[test]
    fn delta_is_centered_unit_impulse() {
        let psf = make_base_psf(BasePsfKind::Delta, 9, 7, 0).unwrap();
        assert_eq!(psf.get(0, 4, 3), 1.0);
        assert!((psf.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn speckle_is_deterministic() {
        let a = make_base_psf(BasePsfKind::GaussianSpeckle, 32, 32, 42).unwrap();
        let b = make_base_psf(BasePsfKind::GaussianSpeckle, 32, 32, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn speckle_spectrum_has_no_near_zeros() {
        let psf = make_base_psf(BasePsfKind::GaussianSpeckle, 64, 64, 7).unwrap();
        assert!(spectral_ratio(&psf) >= SPECTRAL_FLOOR);
        assert!(psf.min() >= 0.0);
        assert!((psf.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contour_rim_is_normalized_and_conditioned() {
        let psf = make_base_psf(BasePsfKind::ContourRim, 33, 33, 3).unwrap();
        assert!(psf.min() >= 0.0);
        assert!((psf.sum() - 1.0).abs() < 1e-12);
        assert!(spectral_ratio(&psf) >= SPECTRAL_FLOOR);
    }

    #[test]
    fn unknown_dims_rejected() {
        assert!(matches!(
            make_base_psf(BasePsfKind::Delta, 0, 5, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_strength_locals_equal_base() {
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 17, 17, 5).unwrap();
        let layout = PatchLayout::new(64, 96, 3, 2, 8).unwrap();
        for mode in [
            VariationMode::Shift,
            VariationMode::RotateWarp,
            VariationMode::BlurGradient,
        ] {
            let field = synthesize_field(&base, &layout, mode, 0.0, 1).unwrap();
            for b in 0..field.n_patches() {
                assert_eq!(field.local(b), &base);
            }
        }
    }

    #[test]
    fn negative_strength_rejected() {
        let base = make_base_psf(BasePsfKind::Delta, 5, 5, 0).unwrap();
        let layout = PatchLayout::new(32, 32, 2, 2, 4).unwrap();
        assert!(matches!(
            synthesize_field(&base, &layout, VariationMode::Shift, -1.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn locals_are_normalized_after_synthesis() {
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 17, 17, 9).unwrap();
        let layout = PatchLayout::new(96, 128, 5, 4, 16).unwrap();
        for mode in [
            VariationMode::Shift,
            VariationMode::RotateWarp,
            VariationMode::BlurGradient,
        ] {
            let field = synthesize_field(&base, &layout, mode, 3.0, 1).unwrap();
            for b in 0..field.n_patches() {
                assert!((field.local(b).sum() - 1.0).abs() <= 1e-12);
                assert!(field.local(b).min() >= 0.0);
            }
        }
    }

    #[test]
    fn corner_shift_matches_prescription() {
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 21, 21, 11).unwrap();
        let layout = PatchLayout::new(64, 64, 2, 2, 8).unwrap();
        let strength = 3.0;
        let field = synthesize_field(&base, &layout, VariationMode::Shift, strength, 0).unwrap();
        let (dy, dx) = prescribed_shift(&layout, 0, strength);
        assert!((dy * dy + dx * dx).sqrt() <= strength + 1e-12);
        let peak = xcorr_peak(field.local(0), &base, 6);
        assert_eq!(peak.0, dy.round() as isize, "row displacement");
        assert_eq!(peak.1, dx.round() as isize, "col displacement");
    }

    #[test]
    fn divergence_monotone_in_strength() {
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 17, 17, 23).unwrap();
        let layout = PatchLayout::new(96, 128, 4, 3, 8).unwrap();
        for mode in [
            VariationMode::Shift,
            VariationMode::RotateWarp,
            VariationMode::BlurGradient,
        ] {
            let mut last = -1.0;
            for strength in [0.0, 1.0, 2.0, 4.0] {
                let field = synthesize_field(&base, &layout, mode, strength, 0).unwrap();
                let d = corner_distance(&field);
                assert!(
                    d >= last - 1e-12,
                    "mode {mode:?}: distance {d} dropped below {last} at strength {strength}"
                );
                last = d;
            }
        }
    }

    #[test]
    fn load_single_path_gives_uniform_field() {
        let dir = tempfile::TempDir::new().unwrap();
        let psf = make_base_psf(BasePsfKind::GaussianSpeckle, 7, 7, 1).unwrap();
        let path = dir.path().join("psf.plg");
        crate::io::write_plg(&psf, &path).unwrap();
        let layout = PatchLayout::new(32, 32, 3, 2, 4).unwrap();
        let field = load_field(&FieldSource::Single(path), &layout).unwrap();
        assert_eq!(field.n_patches(), 6);
        for b in 0..6 {
            assert_eq!(field.local(b), field.base());
        }
    }

    #[test]
    fn load_per_patch_preserves_row_major_order() {
        let dir = tempfile::TempDir::new().unwrap();
        let layout = PatchLayout::new(32, 32, 2, 2, 4).unwrap();
        let mut paths = Vec::new();
        for b in 0..4u64 {
            // distinct kernels, marked by seed
            let psf = make_base_psf(BasePsfKind::GaussianSpeckle, 5, 5, 100 + b).unwrap();
            let path = dir.path().join(format!("p{b}.plg"));
            crate::io::write_plg(&psf, &path).unwrap();
            paths.push(path);
        }
        let field = load_field(&FieldSource::PerPatch(paths.clone()), &layout).unwrap();
        for (b, path) in paths.iter().enumerate() {
            // loading renormalizes to unit sum
            let mut expect = crate::io::read_plg(path).unwrap();
            let sum = expect.sum();
            expect.scale(1.0 / sum);
            assert_eq!(field.local(b), &expect, "patch {b} out of order");
        }
    }

    #[test]
    fn load_zero_mass_psf_is_data_error() {
        let dir = tempfile::TempDir::new().unwrap();
        let zero = ImageGrid::zeros(5, 5, 1);
        let path = dir.path().join("zero.plg");
        crate::io::write_plg(&zero, &path).unwrap();
        let layout = PatchLayout::new(16, 16, 1, 1, 0).unwrap();
        assert!(matches!(
            load_field(&FieldSource::Single(path), &layout),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn load_renormalizes_off_unit_mass() {
        let dir = tempfile::TempDir::new().unwrap();
        let mut psf = make_base_psf(BasePsfKind::GaussianSpeckle, 5, 5, 2).unwrap();
        psf.scale(1.5); // 50% over unit mass
        let path = dir.path().join("heavy.plg");
        crate::io::write_plg(&psf, &path).unwrap();
        let layout = PatchLayout::new(16, 16, 1, 1, 0).unwrap();
        let field = load_field(&FieldSource::Single(path), &layout).unwrap();
        assert!((field.base().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn load_wrong_count_rejected() {
        let dir = tempfile::TempDir::new().unwrap();
        let psf = make_base_psf(BasePsfKind::Delta, 5, 5, 0).unwrap();
        let path = dir.path().join("one.plg");
        crate::io::write_plg(&psf, &path).unwrap();
        let layout = PatchLayout::new(16, 16, 2, 2, 0).unwrap();
        assert!(matches!(
            load_field(&FieldSource::PerPatch(vec![path]), &layout),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn field_determinism_bitwise() {
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 17, 17, 2).unwrap();
        let layout = PatchLayout::new(96, 128, 5, 4, 16).unwrap();
        let a = synthesize_field(&base, &layout, VariationMode::Shift, 2.0, 77).unwrap();
        let b = synthesize_field(&base, &layout, VariationMode::Shift, 2.0, 77).unwrap();
        for k in 0..a.n_patches() {
            assert_eq!(a.local(k), b.local(k));
        }
    }
}
