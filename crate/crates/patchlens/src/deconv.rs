//! Patch-wise frequency-domain deconvolution.
//!
//! A [`KernelBank`] holds one complex kernel and one normalization scalar per
//! patch (per channel). Applying a bank filters the embedded measurement with
//! each kernel in Fourier space, inverse-transforms, scales, crops each result
//! to its extended patch rectangle, and fuses the pieces with the layout's
//! partition-of-unity blend weights.
//!
//! Kernels come from three fitters: the closed-form Wiener inverse of a known
//! PSF, a per-frequency least-squares fit over training pairs, and full-batch
//! gradient descent on a Huber-smoothed L1 objective that honors the spatial
//! masks and blending during optimization.

use num_complex::Complex64;

use crate::fft::{fft2_plane, ifft2_real, Spectrum};
use crate::grid::{embed_window, ImageGrid, SensorWindow};
use crate::layout::{PatchLayout, Rect};
use crate::psf::PsfField;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// regularization
// ---------------------------------------------------------------------------

/// Tikhonov regularization weight, either absolute or relative to the mean
/// per-bin energy of the denominator it stabilizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSpec {
    pub value: f64,
    pub relative: bool,
}

impl LambdaSpec {
    pub fn relative(value: f64) -> Self {
        Self {
            value,
            relative: true,
        }
    }

    pub fn absolute(value: f64) -> Self {
        Self {
            value,
            relative: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.value < 0.0 || !self.value.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and nonnegative, got {}",
                self.value
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, mean_bin_energy: f64) -> f64 {
        if self.relative {
            self.value * mean_bin_energy
        } else {
            self.value
        }
    }
}

impl Default for LambdaSpec {
    fn default() -> Self {
        // default: 1e-4 relative to mean per-bin energy
        Self::relative(1e-4)
    }
}

// ---------------------------------------------------------------------------
// kernel bank
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Wiener,
    LeastSquares,
    SmoothedL1,
}

impl FitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FitMethod::Wiener => "wiener",
            FitMethod::LeastSquares => "l2",
            FitMethod::SmoothedL1 => "l1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitMeta {
    pub method: FitMethod,
    pub lambda: f64,
    pub iterations: usize,
    pub final_loss: f64,
}

/// Per-patch complex deconvolution kernels and normalization scalars, all on
/// one common grid. Kernels and alphas are stored channel-major, patches
/// row-major within a channel.
#[derive(Debug, Clone)]
pub struct KernelBank {
    layout: PatchLayout,
    grid_rows: usize,
    grid_cols: usize,
    channels: usize,
    kernels: Vec<Spectrum>,
    alphas: Vec<f64>,
    pub fit_meta: FitMeta,
}

impl KernelBank {
    pub fn new(
        layout: PatchLayout,
        grid_rows: usize,
        grid_cols: usize,
        channels: usize,
        kernels: Vec<Spectrum>,
        alphas: Vec<f64>,
        fit_meta: FitMeta,
    ) -> Result<Self> {
        let n = layout.n_patches() * channels;
        if kernels.len() != n || alphas.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} kernels/alphas, got {}/{}",
                kernels.len(),
                alphas.len()
            )));
        }
        if grid_rows < layout.scene_rows() || grid_cols < layout.scene_cols() {
            return Err(Error::Dimension(format!(
                "grid {grid_rows}x{grid_cols} smaller than scene {}x{}",
                layout.scene_rows(),
                layout.scene_cols()
            )));
        }
        for k in &kernels {
            if k.rows() != grid_rows || k.cols() != grid_cols {
                return Err(Error::Dimension(format!(
                    "kernel {}x{} does not match grid {grid_rows}x{grid_cols}",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        if !alphas.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(Error::Numeric(
                "normalization coefficients must be finite and positive".into(),
            ));
        }
        Ok(Self {
            layout,
            grid_rows,
            grid_cols,
            channels,
            kernels,
            alphas,
            fit_meta,
        })
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn idx(&self, channel: usize, patch: usize) -> usize {
        channel * self.layout.n_patches() + patch
    }

    pub fn kernel(&self, channel: usize, patch: usize) -> &Spectrum {
        &self.kernels[self.idx(channel, patch)]
    }

    pub fn alpha(&self, channel: usize, patch: usize) -> f64 {
        self.alphas[self.idx(channel, patch)]
    }

    /// Mutable kernel access for calibration and gradient checks.
    pub fn kernel_mut(&mut self, channel: usize, patch: usize) -> &mut Spectrum {
        let i = self.idx(channel, patch);
        &mut self.kernels[i]
    }

    /// Mutable coefficient access for calibration and gradient checks.
    pub fn alpha_mut(&mut self, channel: usize, patch: usize) -> &mut f64 {
        let i = self.idx(channel, patch);
        &mut self.alphas[i]
    }

    pub fn kernels(&self) -> &[Spectrum] {
        &self.kernels
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Total trainable parameter count: two reals per kernel bin plus one
    /// normalization scalar per patch, per channel.
    pub fn param_count(&self) -> usize {
        self.channels * self.layout.n_patches() * (2 * self.grid_rows * self.grid_cols + 1)
    }

    /// Bank with the same Wiener kernel in every patch.
    pub fn wiener_from_psf(
        psf: &ImageGrid,
        layout: PatchLayout,
        grid_rows: usize,
        grid_cols: usize,
        channels: usize,
        lambda: LambdaSpec,
    ) -> Result<Self> {
        let (kernel, lam) = wiener_kernel_resolved(psf, grid_rows, grid_cols, lambda)?;
        let n = layout.n_patches() * channels;
        let kernels = vec![kernel; n];
        let alphas = vec![1.0; n];
        Self::new(
            layout,
            grid_rows,
            grid_cols,
            channels,
            kernels,
            alphas,
            FitMeta {
                method: FitMethod::Wiener,
                lambda: lam,
                iterations: 0,
                final_loss: f64::NAN,
            },
        )
    }

    /// Bank with one Wiener kernel per patch, taken from the spatially
    /// nearest local PSF of the field.
    pub fn wiener_from_field(
        field: &PsfField,
        layout: PatchLayout,
        grid_rows: usize,
        grid_cols: usize,
        channels: usize,
        lambda: LambdaSpec,
    ) -> Result<Self> {
        let mut per_patch = Vec::with_capacity(layout.n_patches());
        let mut lam0 = 0.0;
        for b in 0..layout.n_patches() {
            let nom = layout.nominal(b);
            let fr = (nom.r0 + nom.r1) as f64 / (2.0 * layout.scene_rows() as f64);
            let fc = (nom.c0 + nom.c1) as f64 / (2.0 * layout.scene_cols() as f64);
            let psf = field.local_nearest(fr, fc);
            let (kernel, lam) = wiener_kernel_resolved(psf, grid_rows, grid_cols, lambda)?;
            if b == 0 {
                lam0 = lam;
            }
            per_patch.push(kernel);
        }
        let mut kernels = Vec::with_capacity(per_patch.len() * channels);
        for _ in 0..channels {
            kernels.extend(per_patch.iter().cloned());
        }
        let alphas = vec![1.0; kernels.len()];
        Self::new(
            layout,
            grid_rows,
            grid_cols,
            channels,
            kernels,
            alphas,
            FitMeta {
                method: FitMethod::Wiener,
                lambda: lam0,
                iterations: 0,
                final_loss: f64::NAN,
            },
        )
    }
}

// ---------------------------------------------------------------------------
// Wiener kernel
// ---------------------------------------------------------------------------

fn wiener_kernel_resolved(
    psf: &ImageGrid,
    grid_rows: usize,
    grid_cols: usize,
    lambda: LambdaSpec,
) -> Result<(Spectrum, f64)> {
    if psf.channels() != 1 {
        return Err(Error::Dimension("PSF must be single-channel".into()));
    }
    lambda.validate()?;
    let h = fft2_plane(psf.plane(0), psf.rows(), psf.cols(), grid_rows, grid_cols)?;
    let mean_energy = h.energy() / h.data().len() as f64;
    let lam = lambda.resolve(mean_energy);
    if lam == 0.0 && h.min_abs() <= 1e-12 {
        return Err(Error::Numeric(
            "singular inversion: PSF spectrum has a near-zero bin and lambda is 0".into(),
        ));
    }
    let data = h
        .data()
        .iter()
        .map(|z| z.conj() / (z.norm_sqr() + lam))
        .collect();
    Ok((Spectrum::from_vec(grid_rows, grid_cols, data)?, lam))
}

/// Regularized frequency-domain inverse `conj(H) / (|H|^2 + lambda)` of a PSF
/// zero-padded to the deconvolution grid.
pub fn wiener_kernel(
    psf: &ImageGrid,
    grid_rows: usize,
    grid_cols: usize,
    lambda: f64,
) -> Result<Spectrum> {
    let (kernel, _) =
        wiener_kernel_resolved(psf, grid_rows, grid_cols, LambdaSpec::absolute(lambda))?;
    Ok(kernel)
}

// ---------------------------------------------------------------------------
// stitching
// ---------------------------------------------------------------------------

/// Crops a grid-sized plane to a rectangle.
fn crop_plane(plane: &[f64], grid_cols: usize, rect: &Rect) -> Vec<f64> {
    let mut out = Vec::with_capacity(rect.area());
    for r in rect.r0..rect.r1 {
        let row = r * grid_cols;
        out.extend_from_slice(&plane[row + rect.c0..row + rect.c1]);
    }
    out
}

/// Fuses per-patch rasters (over their extended rectangles) into one scene
/// plane with the layout's partition-of-unity weights.
///
/// The sum is evaluated in delta form around the nominal-owner tiling, so
/// patches that agree everywhere reassemble bitwise exactly.
fn blend_planes(layout: &PatchLayout, patch_planes: &[Vec<f64>]) -> Vec<f64> {
    let (sr, sc) = (layout.scene_rows(), layout.scene_cols());
    let mut base = vec![0.0f64; sr * sc];
    for b in 0..layout.n_patches() {
        let (nom, ext) = (layout.nominal(b), layout.extended(b));
        let ecols = ext.cols();
        for r in nom.r0..nom.r1 {
            let src = (r - ext.r0) * ecols + (nom.c0 - ext.c0);
            let dst = r * sc + nom.c0;
            base[dst..dst + nom.cols()]
                .copy_from_slice(&patch_planes[b][src..src + nom.cols()]);
        }
    }
    let mut out = base.clone();
    for b in 0..layout.n_patches() {
        let ext = layout.extended(b);
        let w = layout.weights(b);
        let v = &patch_planes[b];
        let mut k = 0;
        for r in ext.r0..ext.r1 {
            let row = r * sc;
            for c in ext.c0..ext.c1 {
                out[row + c] += w[k] * (v[k] - base[row + c]);
                k += 1;
            }
        }
    }
    out
}

/// Fuses independently processed patches into a scene-extent image with the
/// layout's partition-of-unity blend weights. Each entry pairs a patch's
/// extended rectangle with its raster.
pub fn overlap_blend(patches: &[(Rect, ImageGrid)], layout: &PatchLayout) -> Result<ImageGrid> {
    if patches.len() != layout.n_patches() {
        return Err(Error::Dimension(format!(
            "expected {} patches, got {}",
            layout.n_patches(),
            patches.len()
        )));
    }
    let channels = patches[0].1.channels();
    for (b, (rect, img)) in patches.iter().enumerate() {
        if *rect != layout.extended(b) {
            return Err(Error::Dimension(format!(
                "patch {b} rectangle does not match the layout's extended rectangle"
            )));
        }
        if img.rows() != rect.rows() || img.cols() != rect.cols() || img.channels() != channels {
            return Err(Error::Dimension(format!(
                "patch {b} raster does not match its rectangle"
            )));
        }
    }
    let mut planes = Vec::with_capacity(channels);
    for c in 0..channels {
        let patch_planes: Vec<Vec<f64>> =
            patches.iter().map(|(_, img)| img.plane(c).to_vec()).collect();
        planes.push(blend_planes(layout, &patch_planes));
    }
    Ok(
        ImageGrid::from_planes(layout.scene_rows(), layout.scene_cols(), planes)?
            .with_peak(patches[0].1.peak),
    )
}

/// Filters one embedded-measurement spectrum with every patch kernel of one
/// channel and stitches the results over the scene extent.
fn apply_channel(
    layout: &PatchLayout,
    grid_cols: usize,
    kernels: &[Spectrum],
    alphas: &[f64],
    yspec: &Spectrum,
) -> Result<Vec<f64>> {
    let mut patch_planes = Vec::with_capacity(layout.n_patches());
    for b in 0..layout.n_patches() {
        let filtered = kernels[b].hadamard(yspec)?;
        let full = ifft2_real(&filtered);
        let ext = layout.extended(b);
        let mut raster = crop_plane(&full, grid_cols, &ext);
        let a = alphas[b];
        if a != 1.0 {
            for v in &mut raster {
                *v *= a;
            }
        }
        patch_planes.push(raster);
    }
    Ok(blend_planes(layout, &patch_planes))
}

/// Reconstructs the scene from a windowed measurement: embed onto the bank's
/// grid, filter per patch in the frequency domain, inverse-transform, scale by
/// the patch's normalization coefficient, crop to the extended rectangle, and
/// blend. The output is cropped to the scene extent.
pub fn apply_patch_deconv(
    meas: &ImageGrid,
    window: &SensorWindow,
    bank: &KernelBank,
) -> Result<ImageGrid> {
    if meas.channels() != bank.channels {
        return Err(Error::Dimension(format!(
            "measurement has {} channels, bank has {}",
            meas.channels(),
            bank.channels
        )));
    }
    let embedded = embed_window(meas, window, bank.grid_rows, bank.grid_cols)?;
    let n_patches = bank.layout.n_patches();
    let mut planes = Vec::with_capacity(bank.channels);
    for c in 0..bank.channels {
        let yspec = fft2_plane(
            embedded.plane(c),
            bank.grid_rows,
            bank.grid_cols,
            bank.grid_rows,
            bank.grid_cols,
        )?;
        planes.push(apply_channel(
            &bank.layout,
            bank.grid_cols,
            &bank.kernels[c * n_patches..(c + 1) * n_patches],
            &bank.alphas[c * n_patches..(c + 1) * n_patches],
            &yspec,
        )?);
    }
    Ok(
        ImageGrid::from_planes(bank.layout.scene_rows(), bank.layout.scene_cols(), planes)?
            .with_peak(meas.peak),
    )
}

// ---------------------------------------------------------------------------
// closed-form least-squares fit
// ---------------------------------------------------------------------------

fn check_training_set(
    train: &[(ImageGrid, ImageGrid)],
    layout: &PatchLayout,
) -> Result<(usize, usize, usize)> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let (gr, gc) = (train[0].0.rows(), train[0].0.cols());
    let channels = train[0].0.channels();
    for (meas, scene) in train {
        if meas.rows() != gr || meas.cols() != gc || meas.channels() != channels {
            return Err(Error::Dimension(
                "training measurements must share one common grid".into(),
            ));
        }
        if scene.rows() != layout.scene_rows()
            || scene.cols() != layout.scene_cols()
            || scene.channels() != channels
        {
            return Err(Error::Dimension(
                "training scenes must match the layout extent".into(),
            ));
        }
    }
    if gr < layout.scene_rows() || gc < layout.scene_cols() {
        return Err(Error::Dimension(
            "measurement grid smaller than the scene extent".into(),
        ));
    }
    Ok((gr, gc, channels))
}

/// Masks a scene plane to a rectangle and embeds it at the origin of the
/// deconvolution grid.
fn masked_scene_spectrum(
    scene: &ImageGrid,
    channel: usize,
    rect: &Rect,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Spectrum> {
    let mut buf = vec![0.0f64; grid_rows * grid_cols];
    let plane = scene.plane(channel);
    for r in rect.r0..rect.r1 {
        let src = r * scene.cols();
        let dst = r * grid_cols;
        buf[dst + rect.c0..dst + rect.c1].copy_from_slice(&plane[src + rect.c0..src + rect.c1]);
    }
    fft2_plane(&buf, grid_rows, grid_cols, grid_rows, grid_cols)
}

/// Solves the Hermitian positive-definite system `A x = rhs` in place by
/// complex Cholesky factorization. `A` is row-major `n x n`.
fn solve_hermitian(a: &mut [Complex64], rhs: &mut [Complex64], n: usize) -> Result<()> {
    // factorize A = L L^H, L lower-triangular stored over A
    for j in 0..n {
        let mut diag = a[j * n + j].re;
        for k in 0..j {
            diag -= a[j * n + k].norm_sqr();
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numeric(
                "rank-deficient per-frequency system (zero-energy bin?)".into(),
            ));
        }
        let diag = diag.sqrt();
        a[j * n + j] = Complex64::new(diag, 0.0);
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = v / diag;
        }
    }
    // forward substitution L z = rhs
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= a[i * n + k] * rhs[k];
        }
        rhs[i] = v / a[i * n + i].re;
    }
    // back substitution L^H x = z
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in i + 1..n {
            v -= a[k * n + i].conj() * rhs[k];
        }
        rhs[i] = v / a[i * n + i].re;
    }
    Ok(())
}

/// Closed-form per-frequency least-squares kernels.
///
/// The patch-superposition model is diagonal in frequency:
/// `Y_i(f) = sum_b h_b(f) X_b_i(f)` with `X_b_i` the scene masked to the
/// nominal patch rectangle. The fit solves this brute-force, one frequency
/// bin at a time: accumulate the `B x B` Hermitian normal equations over the
/// training pairs and solve for all local transfers `h_b(f)` jointly (a tiny
/// diagonal jitter keeps rank-deficient bins solvable). The deconvolution
/// kernel is then the regularized inverse
/// `w_b(f) = conj(h_b) / (|h_b|^2 + lambda)` of each estimated transfer, so
/// `lambda` plays exactly its Wiener role. The spatial selection mask is not
/// enforced on the kernels during fitting; it acts at stitch time, where it
/// removes the cross-patch leakage the per-bin solve leaves behind. With one
/// patch the whole construction reduces to the classical global estimate.
///
/// Each `alpha_b` is then fit by scalar least squares between the
/// blend-weighted filtered result and the ground truth on the patch region —
/// still closed form, and exactly 1 for the identity system.
pub fn fit_kernels_l2(
    train: &[(ImageGrid, ImageGrid)],
    layout: &PatchLayout,
    lambda: LambdaSpec,
) -> Result<KernelBank> {
    lambda.validate()?;
    let (gr, gc, channels) = check_training_set(train, layout)?;
    let n_bins = gr * gc;
    let n_patches = layout.n_patches();

    let mut kernels: Vec<Spectrum> = Vec::with_capacity(channels * n_patches);
    let mut alphas = Vec::with_capacity(channels * n_patches);
    let mut lambda_resolved = 0.0;
    for c in 0..channels {
        // upper-triangle normal matrix and right-hand side per frequency bin
        let tri = n_patches * (n_patches + 1) / 2;
        let mut normal = vec![Complex64::ZERO; n_bins * tri];
        let mut rhs = vec![Complex64::ZERO; n_bins * n_patches];
        for (meas, scene) in train {
            let yspec = fft2_plane(meas.plane(c), gr, gc, gr, gc)?;
            let xspecs: Vec<Spectrum> = (0..n_patches)
                .map(|b| masked_scene_spectrum(scene, c, &layout.nominal(b), gr, gc))
                .collect::<Result<_>>()?;
            for f in 0..n_bins {
                let y = yspec.data()[f];
                let nrow = &mut normal[f * tri..(f + 1) * tri];
                let rrow = &mut rhs[f * n_patches..(f + 1) * n_patches];
                let mut t = 0;
                for j in 0..n_patches {
                    let xj = xspecs[j].data()[f];
                    let xjc = xj.conj();
                    for k in j..n_patches {
                        nrow[t] += xjc * xspecs[k].data()[f];
                        t += 1;
                    }
                    rrow[j] += xjc * y;
                }
            }
        }

        // numerical jitter for the estimation solve; the user's lambda
        // regularizes the inversion below
        let mut diag_sum = 0.0;
        for f in 0..n_bins {
            let nrow = &normal[f * tri..(f + 1) * tri];
            let mut t = 0;
            for j in 0..n_patches {
                diag_sum += nrow[t].re;
                t += n_patches - j;
            }
        }
        let lam_fwd = 1e-10 * diag_sum / (n_bins * n_patches) as f64;

        // per-bin Hermitian solve for the local transfers
        let mut transfers = vec![Complex64::ZERO; n_patches * n_bins];
        let mut a_full = vec![Complex64::ZERO; n_patches * n_patches];
        let mut b_vec = vec![Complex64::ZERO; n_patches];
        for f in 0..n_bins {
            let nrow = &normal[f * tri..(f + 1) * tri];
            let mut t = 0;
            for j in 0..n_patches {
                for k in j..n_patches {
                    a_full[j * n_patches + k] = nrow[t];
                    a_full[k * n_patches + j] = nrow[t].conj();
                    t += 1;
                }
                a_full[j * n_patches + j] += lam_fwd;
            }
            b_vec.copy_from_slice(&rhs[f * n_patches..(f + 1) * n_patches]);
            solve_hermitian(&mut a_full, &mut b_vec, n_patches).map_err(|_| {
                Error::Numeric(format!(
                    "zero-energy frequency bin {f} leaves the per-bin system singular \
                     (lambda {lam_fwd})"
                ))
            })?;
            for (b, h) in b_vec.iter().enumerate() {
                transfers[b * n_bins + f] = *h;
            }
        }

        // total transfer energy per bin, for the cross-talk term
        let mut total_energy = vec![0.0f64; n_bins];
        for b in 0..n_patches {
            for (t, h) in total_energy
                .iter_mut()
                .zip(&transfers[b * n_bins..(b + 1) * n_bins])
            {
                *t += h.norm_sqr();
            }
        }

        let scene_area = (layout.scene_rows() * layout.scene_cols()) as f64;
        let mut channel_kernels = Vec::with_capacity(n_patches);
        for b in 0..n_patches {
            let transfer = &transfers[b * n_bins..(b + 1) * n_bins];
            let transfer_energy =
                transfer.iter().map(|z| z.norm_sqr()).sum::<f64>() / n_bins as f64;
            let lam_inv = lambda.resolve(transfer_energy);
            if c == 0 && b == 0 {
                lambda_resolved = lam_inv;
            }
            if lam_inv == 0.0 {
                if let Some(i) = transfer.iter().position(|z| z.norm() <= 1e-12) {
                    return Err(Error::Numeric(format!(
                        "singular inversion at bin {i} with lambda 0 (patch {b})"
                    )));
                }
            }
            // Inverting h_b alone would amplify other patches' content at
            // h_b's spectral dips into delocalized ringing; the stitch mask
            // keeps roughly the patch's area share of that ringing, so other
            // patches' transfer energy enters the denominator with the area
            // fraction as its weight. Lambda is inflated by the same factor
            // the cross term adds when all transfers coincide, so zero
            // variation reduces to the classical inversion (up to the scalar
            // normalization below) and patching never penalizes the
            // shift-invariant case. With one patch this is plain Wiener.
            let area_frac = layout.nominal(b).area() as f64 / scene_area;
            let lam_scaled = lam_inv * (1.0 + area_frac * (n_patches as f64 - 1.0));
            let data = transfer
                .iter()
                .zip(total_energy.iter())
                .map(|(h, tot)| {
                    let own = h.norm_sqr();
                    h.conj() / (own + area_frac * (tot - own) + lam_scaled)
                })
                .collect();
            channel_kernels.push(Spectrum::from_vec(gr, gc, data)?);
        }

        // scalar regression per patch between the filtered result and the
        // truth, weighted by the blend weights actually used at stitch time
        let mut num_a = vec![0.0f64; n_patches];
        let mut den_a = vec![0.0f64; n_patches];
        for (meas, scene) in train {
            let yspec = fft2_plane(meas.plane(c), gr, gc, gr, gc)?;
            let truth = scene.plane(c);
            for b in 0..n_patches {
                let filtered = channel_kernels[b].hadamard(&yspec)?;
                let full = ifft2_real(&filtered);
                let ext = layout.extended(b);
                let w = layout.weights(b);
                let mut k = 0;
                for r in ext.r0..ext.r1 {
                    for col in ext.c0..ext.c1 {
                        let rv = full[r * gc + col];
                        num_a[b] += w[k] * rv * truth[r * scene.cols() + col];
                        den_a[b] += w[k] * rv * rv;
                        k += 1;
                    }
                }
            }
        }
        kernels.extend(channel_kernels);
        for b in 0..n_patches {
            let a = num_a[b] / den_a[b];
            alphas.push(if a.is_finite() && a > 0.0 { a } else { 1.0 });
        }
    }

    KernelBank::new(
        layout.clone(),
        gr,
        gc,
        channels,
        kernels,
        alphas,
        FitMeta {
            method: FitMethod::LeastSquares,
            lambda: lambda_resolved,
            iterations: 0,
            final_loss: f64::NAN,
        },
    )
}

// ---------------------------------------------------------------------------
// smoothed-L1 gradient refinement
// ---------------------------------------------------------------------------

/// Options for the gradient-descent kernel refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Options {
    pub lr: f64,
    pub epochs: usize,
    /// Transition point of the Huber smoothing, in image units.
    pub huber_delta: f64,
    /// Epoch indices at which the learning rate is scaled by 0.1.
    pub milestones: Vec<usize>,
    /// Use the raw L1 subgradient instead of the Huber smoothing.
    pub pure_l1: bool,
    /// Share one normalization coefficient across all patches of a channel.
    pub tie_alpha: bool,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 200,
            huber_delta: 1e-3,
            milestones: vec![50, 100, 150],
            pure_l1: false,
            tie_alpha: false,
        }
    }
}

impl L1Options {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.huber_delta <= 0.0 {
            return Err(Error::Config("huber_delta must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn rho(e: f64, delta: f64, pure: bool) -> f64 {
    if pure {
        e.abs()
    } else if e.abs() <= delta {
        e * e / (2.0 * delta)
    } else {
        e.abs() - delta / 2.0
    }
}

#[inline]
fn rho_prime(e: f64, delta: f64, pure: bool) -> f64 {
    if pure {
        if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        }
    } else if e.abs() <= delta {
        e / delta
    } else if e > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Loss, and gradients with respect to every kernel bin (packed as
/// `d/d(re) + i d/d(im)`) and every normalization coefficient.
#[derive(Debug, Clone)]
pub struct L1Gradients {
    pub loss: f64,
    pub kernels: Vec<Spectrum>,
    pub alphas: Vec<f64>,
}

/// Evaluates the Huber-smoothed L1 objective between stitched reconstructions
/// and ground truths, together with its analytic gradients through the
/// inverse transform, spatial masking, and blending chain.
///
/// Measurements must already live on the bank's deconvolution grid.
pub fn smoothed_l1_loss_and_gradients(
    train: &[(ImageGrid, ImageGrid)],
    bank: &KernelBank,
    opts: &L1Options,
) -> Result<L1Gradients> {
    opts.validate()?;
    let layout = &bank.layout;
    let (gr, gc, channels) = check_training_set(train, layout)?;
    if gr != bank.grid_rows || gc != bank.grid_cols || channels != bank.channels {
        return Err(Error::Dimension(
            "training grid does not match the kernel bank".into(),
        ));
    }
    let n_patches = layout.n_patches();
    let n_bins = gr * gc;
    let (sr, sc) = (layout.scene_rows(), layout.scene_cols());
    let norm = 1.0 / (train.len() * sr * sc * channels) as f64;

    let mut grad_kernels = vec![Spectrum::zeros(gr, gc); channels * n_patches];
    let mut grad_alphas = vec![0.0f64; channels * n_patches];
    let mut loss = 0.0f64;

    for (meas, scene) in train {
        for c in 0..channels {
            let yspec = fft2_plane(meas.plane(c), gr, gc, gr, gc)?;

            // forward: per-patch filtered rasters, then stitched reconstruction
            let mut rasters: Vec<Vec<f64>> = Vec::with_capacity(n_patches);
            let mut scaled: Vec<Vec<f64>> = Vec::with_capacity(n_patches);
            for b in 0..n_patches {
                let filtered = bank.kernel(c, b).hadamard(&yspec)?;
                let full = ifft2_real(&filtered);
                let raster = crop_plane(&full, gc, &layout.extended(b));
                let a = bank.alpha(c, b);
                scaled.push(raster.iter().map(|v| a * v).collect());
                rasters.push(raster);
            }
            let recon = blend_planes(layout, &scaled);

            // residual and cotangent over the scene extent
            let truth = scene.plane(c);
            let mut g = vec![0.0f64; sr * sc];
            for (k, (rv, tv)) in recon.iter().zip(truth.iter()).enumerate() {
                let e = rv - tv;
                loss += norm * rho(e, opts.huber_delta, opts.pure_l1);
                g[k] = norm * rho_prime(e, opts.huber_delta, opts.pure_l1);
            }

            // backward through blend -> mask -> inverse transform
            for b in 0..n_patches {
                let ext = layout.extended(b);
                let w = layout.weights(b);
                let a = bank.alpha(c, b);
                let mut cotangent = vec![0.0f64; n_bins];
                let mut k = 0;
                let mut dalpha = 0.0;
                for r in ext.r0..ext.r1 {
                    let grow = r * sc;
                    let crow = r * gc;
                    for col in ext.c0..ext.c1 {
                        let gw = g[grow + col] * w[k];
                        cotangent[crow + col] = gw * a;
                        dalpha += gw * rasters[b][k];
                        k += 1;
                    }
                }
                grad_alphas[c * n_patches + b] += dalpha;
                let gspec = fft2_plane(&cotangent, gr, gc, gr, gc)?;
                let gk = grad_kernels[c * n_patches + b].data_mut();
                let inv_n = 1.0 / n_bins as f64;
                for ((gkv, y), gz) in gk.iter_mut().zip(yspec.data()).zip(gspec.data()) {
                    *gkv += y.conj() * gz * inv_n;
                }
            }
        }
    }

    if opts.tie_alpha {
        // tied coefficient: every patch of a channel receives the channel sum
        for c in 0..channels {
            let total: f64 = grad_alphas[c * n_patches..(c + 1) * n_patches].iter().sum();
            for b in 0..n_patches {
                grad_alphas[c * n_patches + b] = total;
            }
        }
    }

    Ok(L1Gradients {
        loss,
        kernels: grad_kernels,
        alphas: grad_alphas,
    })
}

/// Full-batch gradient descent on the smoothed L1 objective, starting from
/// `init`. Returns the refined bank and the accepted loss curve.
///
/// The step is monitored: an epoch that increases the loss is rejected and
/// halves the learning rate, so the final loss never exceeds the initial one.
pub fn fit_kernels_l1_with_curve(
    train: &[(ImageGrid, ImageGrid)],
    layout: &PatchLayout,
    init: &KernelBank,
    opts: &L1Options,
) -> Result<(KernelBank, Vec<f64>)> {
    opts.validate()?;
    if !layout.same_geometry(&init.layout) {
        return Err(Error::Config(
            "layout does not match the initial kernel bank".into(),
        ));
    }
    if opts.epochs == 0 {
        return Ok((init.clone(), Vec::new()));
    }

    let mut bank = init.clone();
    let grads = smoothed_l1_loss_and_gradients(train, &bank, opts)?;
    let init_loss = grads.loss;
    let mut cur = grads;
    let mut curve = vec![init_loss];
    let mut lr = opts.lr;

    for epoch in 0..opts.epochs {
        if opts.milestones.contains(&epoch) {
            lr *= 0.1;
        }
        let mut candidate = bank.clone();
        for (k, gk) in candidate.kernels.iter_mut().zip(cur.kernels.iter()) {
            for (w, g) in k.data_mut().iter_mut().zip(gk.data()) {
                *w -= lr * g;
            }
        }
        for (a, g) in candidate.alphas.iter_mut().zip(cur.alphas.iter()) {
            *a -= lr * g;
        }
        if !candidate.alphas.iter().all(|a| a.is_finite() && *a > 0.0) {
            lr *= 0.5;
            curve.push(cur.loss);
            continue;
        }
        let next = smoothed_l1_loss_and_gradients(train, &candidate, opts)?;
        if !next.loss.is_finite() || next.loss > 1e6 * init_loss.max(f64::MIN_POSITIVE) {
            return Err(Error::Numeric(format!(
                "kernel fit diverged at epoch {epoch}: loss {:.6e} vs initial {:.6e}",
                next.loss, init_loss
            )));
        }
        if next.loss > cur.loss {
            // reject the step, back off
            lr *= 0.5;
            curve.push(cur.loss);
            continue;
        }
        bank = candidate;
        cur = next;
        curve.push(cur.loss);
    }

    bank.fit_meta = FitMeta {
        method: FitMethod::SmoothedL1,
        lambda: init.fit_meta.lambda,
        iterations: opts.epochs,
        final_loss: cur.loss,
    };
    Ok((bank, curve))
}

/// [`fit_kernels_l1_with_curve`] without the loss curve.
pub fn fit_kernels_l1(
    train: &[(ImageGrid, ImageGrid)],
    layout: &PatchLayout,
    init: &KernelBank,
    opts: &L1Options,
) -> Result<KernelBank> {
    fit_kernels_l1_with_curve(train, layout, init, opts).map(|(bank, _)| bank)
}
