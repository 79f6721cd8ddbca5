//! Measurement synthesis: globally shift-invariant convolution, the locally
//! convolutional patch superposition model, sensor truncation, and noise.
//!
//! Linear convolution is carried out on the zero-padded support grid of size
//! `(P+K-1) x (Q+L-1)` so wraparound never aliases into the sensor window.
//! The window crop is applied before noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fft::{fft2_plane, ifft2_real, Spectrum};
use crate::grid::{apply_window, ImageGrid, SensorWindow};
use crate::layout::PatchLayout;
use crate::psf::PsfField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
}

/// Additive sampling-noise specification. The seed fully determines the
/// noise field, so identical specs reproduce identical measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Same spec with the seed mixed by a stream index, for independent noise
    /// fields across scenes/windows that stay reproducible.
    pub fn with_stream(&self, stream: u64) -> Self {
        Self {
            seed: self
                .seed
                .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..*self
        }
    }

    fn apply(&self, img: &mut ImageGrid) {
        if let NoiseKind::Gaussian = self.kind {
            if self.sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let dist = Normal::new(0.0, self.sigma).expect("sigma validated");
                for v in img.data_mut() {
                    *v += dist.sample(&mut rng);
                }
            }
        }
    }
}

/// Full linear-convolution support of a scene/PSF pair.
pub fn support_dims(
    scene_rows: usize,
    scene_cols: usize,
    psf_rows: usize,
    psf_cols: usize,
) -> (usize, usize) {
    (scene_rows + psf_rows - 1, scene_cols + psf_cols - 1)
}

/// Linear convolution of one scene plane with a pre-transformed PSF spectrum,
/// on the support grid the spectrum was padded to.
fn conv_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    psf_spec: &Spectrum,
) -> Result<Vec<f64>> {
    let xspec = fft2_plane(plane, rows, cols, psf_spec.rows(), psf_spec.cols())?;
    Ok(ifft2_real(&xspec.hadamard(psf_spec)?))
}

fn check_window(window: &SensorWindow, sr: usize, sc: usize) -> Result<()> {
    if !window.fits_within(sr, sc) {
        return Err(Error::Dimension(format!(
            "window ({},{})+{}x{} exceeds {sr}x{sc} support",
            window.row_offset, window.col_offset, window.rows, window.cols
        )));
    }
    Ok(())
}

/// Measurement under the globally shift-invariant model:
/// convolve, crop to the sensor window, add noise.
pub fn forward_global(
    scene: &ImageGrid,
    psf: &ImageGrid,
    window: &SensorWindow,
    noise: &NoiseSpec,
) -> Result<ImageGrid> {
    if psf.channels() != 1 {
        return Err(Error::Dimension("PSF must be single-channel".into()));
    }
    noise.validate()?;
    let (sr, sc) = support_dims(scene.rows(), scene.cols(), psf.rows(), psf.cols());
    check_window(window, sr, sc)?;
    let psf_spec = fft2_plane(psf.plane(0), psf.rows(), psf.cols(), sr, sc)?;
    let mut planes = Vec::with_capacity(scene.channels());
    for c in 0..scene.channels() {
        planes.push(conv_plane(scene.plane(c), scene.rows(), scene.cols(), &psf_spec)?);
    }
    let full = ImageGrid::from_planes(sr, sc, planes)?.with_peak(scene.peak);
    let mut meas = apply_window(&full, window)?;
    noise.apply(&mut meas);
    Ok(meas)
}

/// Measurement under the locally convolutional model: each patch of the scene
/// is convolved with its own local PSF, contributions are superposed in
/// row-major patch order, then cropped and noised.
pub fn forward_local(
    scene: &ImageGrid,
    field: &PsfField,
    layout: &PatchLayout,
    window: &SensorWindow,
    noise: &NoiseSpec,
) -> Result<ImageGrid> {
    if field.bx() != layout.bx() || field.by() != layout.by() {
        return Err(Error::Config(format!(
            "PSF field grid {}x{} does not match layout {}x{}",
            field.by(),
            field.bx(),
            layout.by(),
            layout.bx()
        )));
    }
    if layout.scene_rows() != scene.rows() || layout.scene_cols() != scene.cols() {
        return Err(Error::Config(format!(
            "layout extent {}x{} does not match scene {}x{}",
            layout.scene_rows(),
            layout.scene_cols(),
            scene.rows(),
            scene.cols()
        )));
    }
    noise.validate()?;
    let (sr, sc) = support_dims(
        scene.rows(),
        scene.cols(),
        field.psf_rows(),
        field.psf_cols(),
    );
    check_window(window, sr, sc)?;

    let psf_specs: Vec<Spectrum> = (0..field.n_patches())
        .map(|b| {
            fft2_plane(
                field.local(b).plane(0),
                field.psf_rows(),
                field.psf_cols(),
                sr,
                sc,
            )
        })
        .collect::<Result<_>>()?;

    let mut planes = Vec::with_capacity(scene.channels());
    for c in 0..scene.channels() {
        let mut acc = vec![0.0f64; sr * sc];
        let mut masked = vec![0.0f64; scene.rows() * scene.cols()];
        for b in 0..layout.n_patches() {
            // scene restricted to the nominal (non-overlapping) rectangle,
            // so the patch decomposition sums back to the scene exactly
            let nom = layout.nominal(b);
            for v in &mut masked {
                *v = 0.0;
            }
            let plane = scene.plane(c);
            for r in nom.r0..nom.r1 {
                let row = r * scene.cols();
                masked[row + nom.c0..row + nom.c1]
                    .copy_from_slice(&plane[row + nom.c0..row + nom.c1]);
            }
            let contrib = conv_plane(&masked, scene.rows(), scene.cols(), &psf_specs[b])?;
            for (a, v) in acc.iter_mut().zip(contrib.iter()) {
                *a += v;
            }
        }
        planes.push(acc);
    }
    let full = ImageGrid::from_planes(sr, sc, planes)?.with_peak(scene.peak);
    let mut meas = apply_window(&full, window)?;
    noise.apply(&mut meas);
    Ok(meas)
}

/// Centered windows whose areas approximate the requested fractions of the
/// full support. Fractions must lie in `(0, 1]` and be sorted descending.
pub fn windows_for_fractions(
    support_rows: usize,
    support_cols: usize,
    fractions: &[f64],
) -> Result<Vec<SensorWindow>> {
    if fractions.is_empty() {
        return Err(Error::Config("empty truncation fraction list".into()));
    }
    for pair in fractions.windows(2) {
        if pair[1] > pair[0] {
            return Err(Error::Config(
                "truncation fractions must be sorted descending".into(),
            ));
        }
    }
    fractions
        .iter()
        .map(|&f| {
            if f <= 0.0 || f > 1.0 {
                return Err(Error::Config(format!(
                    "truncation fraction {f} outside (0, 1]"
                )));
            }
            let s = f.sqrt();
            let rows = ((support_rows as f64 * s).round() as usize).clamp(1, support_rows);
            let cols = ((support_cols as f64 * s).round() as usize).clamp(1, support_cols);
            SensorWindow::centered(support_rows, support_cols, rows, cols)
        })
        .collect()
}

/// One measurement per truncation fraction, windows centered, areas
/// nonincreasing. The noise stream is remixed per window so the fields are
/// independent yet reproducible.
pub fn truncation_series(
    scene: &ImageGrid,
    field: &PsfField,
    layout: &PatchLayout,
    fractions: &[f64],
    noise: &NoiseSpec,
) -> Result<Vec<(SensorWindow, ImageGrid)>> {
    let (sr, sc) = support_dims(
        scene.rows(),
        scene.cols(),
        field.psf_rows(),
        field.psf_cols(),
    );
    let windows = windows_for_fractions(sr, sc, fractions)?;
    windows
        .into_iter()
        .enumerate()
        .map(|(k, w)| {
            let meas = forward_local(scene, field, layout, &w, &noise.with_stream(k as u64))?;
            Ok((w, meas))
        })
        .collect()
}
