//! Hierarchical local-to-global enhancement scaffold.
//!
//! The image is re-processed over a fine-to-coarse scale schedule — patches,
//! vertical blocks, horizontal blocks, full image — each scale extracting
//! overlapping regions, enhancing them with a pluggable non-learned enhancer,
//! blending them back, and fusing with the previous level's result.

use crate::deconv::overlap_blend;
use crate::grid::ImageGrid;
use crate::layout::{PatchLayout, Rect};
use crate::psf::{gaussian_blur_plane, BlurEdge};
use crate::{Error, Result};

/// One level of the scale schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSpec {
    /// Full patch grid.
    Patches { bx: usize, by: usize, overlap: usize },
    /// Full-width strips stacked vertically.
    VerticalBlocks { by: usize, overlap: usize },
    /// Full-height strips side by side.
    HorizontalBlocks { bx: usize, overlap: usize },
    /// The whole image as a single region.
    FullImage,
}

impl ScaleSpec {
    fn layout_for(&self, rows: usize, cols: usize) -> Result<PatchLayout> {
        match *self {
            ScaleSpec::Patches { bx, by, overlap } => {
                PatchLayout::new(rows, cols, bx, by, overlap)
            }
            ScaleSpec::VerticalBlocks { by, overlap } => PatchLayout::new(rows, cols, 1, by, overlap),
            ScaleSpec::HorizontalBlocks { bx, overlap } => {
                PatchLayout::new(rows, cols, bx, 1, overlap)
            }
            ScaleSpec::FullImage => PatchLayout::new(rows, cols, 1, 1, 0),
        }
    }
}

/// Ordered fine-to-coarse scale list; the full-image scale is always last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSchedule {
    scales: Vec<ScaleSpec>,
}

impl ScaleSchedule {
    pub fn new(scales: Vec<ScaleSpec>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("scale schedule is empty".into()));
        }
        if *scales.last().unwrap() != ScaleSpec::FullImage {
            return Err(Error::Config(
                "the full-image scale must come last in the schedule".into(),
            ));
        }
        Ok(Self { scales })
    }

    /// The standard four-level schedule built from a stage-one patch grid.
    pub fn standard(bx: usize, by: usize, overlap: usize) -> Self {
        Self {
            scales: vec![
                ScaleSpec::Patches { bx, by, overlap },
                ScaleSpec::VerticalBlocks { by, overlap },
                ScaleSpec::HorizontalBlocks { bx, overlap },
                ScaleSpec::FullImage,
            ],
        }
    }

    pub fn scales(&self) -> &[ScaleSpec] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// Non-learned per-region enhancer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Enhancer {
    Identity,
    TvDenoise { weight: f64, iters: usize },
    Unsharp { sigma: f64, amount: f64 },
}

impl Enhancer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Enhancer::Identity => Ok(()),
            Enhancer::TvDenoise { weight, iters } => {
                if !weight.is_finite() || weight < 0.0 {
                    return Err(Error::Config(format!(
                        "tv-denoise weight must be finite and nonnegative, got {weight}"
                    )));
                }
                if iters == 0 {
                    return Err(Error::Config("tv-denoise needs at least 1 iteration".into()));
                }
                Ok(())
            }
            Enhancer::Unsharp { sigma, amount } => {
                if !sigma.is_finite() || sigma < 0.0 || !amount.is_finite() {
                    return Err(Error::Config("unsharp parameters must be finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid> {
        match *self {
            Enhancer::Identity => Ok(img.clone()),
            Enhancer::TvDenoise { weight, iters } => tv_denoise(img, weight, iters),
            Enhancer::Unsharp { sigma, amount } => unsharp(img, sigma, amount),
        }
    }
}

fn crop_rect(img: &ImageGrid, rect: &Rect) -> ImageGrid {
    let mut planes = Vec::with_capacity(img.channels());
    for c in 0..img.channels() {
        let src = img.plane(c);
        let mut plane = Vec::with_capacity(rect.area());
        for r in rect.r0..rect.r1 {
            let row = r * img.cols();
            plane.extend_from_slice(&src[row + rect.c0..row + rect.c1]);
        }
        planes.push(plane);
    }
    ImageGrid::from_planes(rect.rows(), rect.cols(), planes)
        .expect("rect within image")
        .with_peak(img.peak)
}

/// Processes the image through the schedule fine-to-coarse. At each scale the
/// regions are extracted with overlap, enhanced, blended back, and fused with
/// the running result as `fuse_weight * current + (1 - fuse_weight) * previous`.
pub fn enhance_hierarchical(
    img: &ImageGrid,
    schedule: &ScaleSchedule,
    per_scale: &[Enhancer],
    fuse_weight: f64,
) -> Result<ImageGrid> {
    if per_scale.len() != schedule.len() {
        return Err(Error::Config(format!(
            "schedule has {} scales but {} enhancers were given",
            schedule.len(),
            per_scale.len()
        )));
    }
    if !(0.0..=1.0).contains(&fuse_weight) {
        return Err(Error::Config(format!(
            "fuse_weight must lie in [0, 1], got {fuse_weight}"
        )));
    }
    for e in per_scale {
        e.validate()?;
    }

    let mut cur = img.clone();
    for (scale, enhancer) in schedule.scales().iter().zip(per_scale) {
        let layout = scale.layout_for(cur.rows(), cur.cols())?;
        let mut patches = Vec::with_capacity(layout.n_patches());
        for b in 0..layout.n_patches() {
            let ext = layout.extended(b);
            let region = crop_rect(&cur, &ext);
            let enhanced = enhancer.apply(&region)?;
            if !enhanced.same_shape(&region) {
                return Err(Error::Dimension(
                    "enhancer changed the region dimensions".into(),
                ));
            }
            patches.push((ext, enhanced));
        }
        let blended = overlap_blend(&patches, &layout)?;
        cur = if fuse_weight == 1.0 {
            blended
        } else if fuse_weight == 0.0 {
            cur
        } else {
            let mut fused = cur.clone();
            for (f, b) in fused.data_mut().iter_mut().zip(blended.data()) {
                *f += fuse_weight * (b - *f);
            }
            fused
        };
    }
    Ok(cur)
}

/// Isotropic total variation of an image (forward differences, summed over
/// channels).
pub fn total_variation(img: &ImageGrid) -> f64 {
    let (rows, cols) = (img.rows(), img.cols());
    let mut tv = 0.0;
    for c in 0..img.channels() {
        let p = img.plane(c);
        for r in 0..rows {
            for j in 0..cols {
                let gx = if j + 1 < cols {
                    p[r * cols + j + 1] - p[r * cols + j]
                } else {
                    0.0
                };
                let gy = if r + 1 < rows {
                    p[(r + 1) * cols + j] - p[r * cols + j]
                } else {
                    0.0
                };
                tv += (gx * gx + gy * gy).sqrt();
            }
        }
    }
    tv
}

/// Total-variation denoising by dual projection: iterates
/// `p <- (p + tau * grad(div p - f / weight)) / (1 + tau * |grad(...)|)` and
/// returns `f - weight * div p`. Weight 0 is the identity.
pub fn tv_denoise(img: &ImageGrid, weight: f64, iters: usize) -> Result<ImageGrid> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::Config(format!(
            "tv weight must be finite and nonnegative, got {weight}"
        )));
    }
    if iters == 0 {
        return Err(Error::Config("tv iterations must be at least 1".into()));
    }
    if weight == 0.0 {
        return Ok(img.clone());
    }
    let (rows, cols) = (img.rows(), img.cols());
    let n = rows * cols;
    let tau = 0.25;

    let mut out_planes = Vec::with_capacity(img.channels());
    for c in 0..img.channels() {
        let f = img.plane(c);
        let mut p1 = vec![0.0f64; n]; // dual field, x component
        let mut p2 = vec![0.0f64; n]; // dual field, y component
        let mut div = vec![0.0f64; n];
        for _ in 0..iters {
            // divergence of p with the adjoint boundary convention
            for r in 0..rows {
                for j in 0..cols {
                    let i = r * cols + j;
                    let dx = if j == 0 {
                        p1[i]
                    } else if j == cols - 1 {
                        -p1[i - 1]
                    } else {
                        p1[i] - p1[i - 1]
                    };
                    let dy = if r == 0 {
                        p2[i]
                    } else if r == rows - 1 {
                        -p2[i - cols]
                    } else {
                        p2[i] - p2[i - cols]
                    };
                    div[i] = dx + dy;
                }
            }
            // gradient step on (div p - f / weight), then pointwise projection
            for r in 0..rows {
                for j in 0..cols {
                    let i = r * cols + j;
                    let here = div[i] - f[i] / weight;
                    let gx = if j + 1 < cols {
                        (div[i + 1] - f[i + 1] / weight) - here
                    } else {
                        0.0
                    };
                    let gy = if r + 1 < rows {
                        (div[i + cols] - f[i + cols] / weight) - here
                    } else {
                        0.0
                    };
                    let mag = (gx * gx + gy * gy).sqrt();
                    let denom = 1.0 + tau * mag;
                    p1[i] = (p1[i] + tau * gx) / denom;
                    p2[i] = (p2[i] + tau * gy) / denom;
                }
            }
        }
        // final divergence for the primal solution
        let mut out = vec![0.0f64; n];
        for r in 0..rows {
            for j in 0..cols {
                let i = r * cols + j;
                let dx = if j == 0 {
                    p1[i]
                } else if j == cols - 1 {
                    -p1[i - 1]
                } else {
                    p1[i] - p1[i - 1]
                };
                let dy = if r == 0 {
                    p2[i]
                } else if r == rows - 1 {
                    -p2[i - cols]
                } else {
                    p2[i] - p2[i - cols]
                };
                out[i] = f[i] - weight * (dx + dy);
            }
        }
        out_planes.push(out);
    }
    Ok(ImageGrid::from_planes(rows, cols, out_planes)?.with_peak(img.peak))
}

/// Unsharp masking: `img + amount * (img - blur(img, sigma))`.
pub fn unsharp(img: &ImageGrid, sigma: f64, amount: f64) -> Result<ImageGrid> {
    if !sigma.is_finite() || sigma < 0.0 || !amount.is_finite() {
        return Err(Error::Config("unsharp parameters must be finite".into()));
    }
    let mut planes = Vec::with_capacity(img.channels());
    for c in 0..img.channels() {
        let blurred = gaussian_blur_plane(img.plane(c), img.rows(), img.cols(), sigma, BlurEdge::Replicate);
        planes.push(
            img.plane(c)
                .iter()
                .zip(blurred.iter())
                .map(|(v, b)| v + amount * (v - b))
                .collect(),
        );
    }
    Ok(ImageGrid::from_planes(img.rows(), img.cols(), planes)?.with_peak(img.peak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_stripes(rows: usize, cols: usize, sigma: f64, seed: u64) -> (ImageGrid, ImageGrid) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean: Vec<f64> = (0..rows * cols)
            .map(|i| if (i % cols) / 8 % 2 == 0 { 0.2 } else { 0.8 })
            .collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| v + sigma * (rng.random::<f64>() - 0.5) * 3.46)
            .collect();
        (
            ImageGrid::from_plane(rows, cols, clean).unwrap(),
            ImageGrid::from_plane(rows, cols, noisy).unwrap(),
        )
    }

    #[test]
    fn identity_chain_is_exact_for_any_fuse_weight() {
        let (_, img) = noisy_stripes(24, 32, 0.1, 1);
        let schedule = ScaleSchedule::standard(3, 2, 6);
        let enhancers = vec![Enhancer::Identity; 4];
        for fw in [0.0, 0.3, 0.5, 1.0] {
            let out = enhance_hierarchical(&img, &schedule, &enhancers, fw).unwrap();
            assert_eq!(out.data(), img.data(), "fuse weight {fw}");
        }
    }

    #[test]
    fn fuse_weight_one_is_pure_chain() {
        let (_, img) = noisy_stripes(24, 32, 0.1, 2);
        let schedule = ScaleSchedule::new(vec![ScaleSpec::FullImage]).unwrap();
        let enh = vec![Enhancer::TvDenoise {
            weight: 0.05,
            iters: 20,
        }];
        let chained = enhance_hierarchical(&img, &schedule, &enh, 1.0).unwrap();
        let direct = tv_denoise(&img, 0.05, 20).unwrap();
        assert_eq!(chained.data(), direct.data());
    }

    #[test]
    fn schedule_must_end_with_full_image() {
        assert!(matches!(
            ScaleSchedule::new(vec![ScaleSpec::Patches {
                bx: 2,
                by: 2,
                overlap: 4
            }]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn enhancer_count_must_match_schedule() {
        let img = ImageGrid::zeros(16, 16, 1);
        let schedule = ScaleSchedule::standard(2, 2, 4);
        assert!(matches!(
            enhance_hierarchical(&img, &schedule, &[Enhancer::Identity], 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tv_denoise_reduces_total_variation_at_every_scale() {
        let (_, noisy) = noisy_stripes(32, 40, 0.15, 3);
        let schedule = ScaleSchedule::standard(2, 2, 8);
        let enhancers = vec![
            Enhancer::TvDenoise {
                weight: 0.08,
                iters: 30,
            };
            4
        ];
        let out = enhance_hierarchical(&noisy, &schedule, &enhancers, 0.5).unwrap();
        assert!(total_variation(&out) <= total_variation(&noisy));
    }

    #[test]
    fn tv_weight_zero_is_identity() {
        let (_, img) = noisy_stripes(16, 16, 0.2, 4);
        let out = tv_denoise(&img, 0.0, 10).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn tv_constant_image_is_fixed_point() {
        let img = ImageGrid::constant(20, 20, 1, 0.42);
        for weight in [0.01, 0.1, 1.0] {
            let out = tv_denoise(&img, weight, 40).unwrap();
            for v in out.data() {
                assert!((v - 0.42).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tv_never_increases_total_variation() {
        let (_, noisy) = noisy_stripes(24, 24, 0.2, 5);
        for weight in [0.02, 0.1, 0.5] {
            let out = tv_denoise(&noisy, weight, 50).unwrap();
            assert!(
                total_variation(&out) <= total_variation(&noisy) + 1e-12,
                "weight {weight}"
            );
        }
    }

    #[test]
    fn tv_improves_noisy_step_edge() {
        let rows = 24;
        let cols = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean: Vec<f64> = (0..rows * cols)
            .map(|i| if i % cols < cols / 2 { 0.2 } else { 0.8 })
            .collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| v + 0.1 * (rng.random::<f64>() - 0.5) * 3.46)
            .collect();
        let noisy_img = ImageGrid::from_plane(rows, cols, noisy.clone()).unwrap();
        let denoised = tv_denoise(&noisy_img, 0.1, 50).unwrap();
        let mse = |est: &[f64]| {
            est.iter()
                .zip(clean.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / est.len() as f64
        };
        assert!(mse(denoised.data()) < mse(&noisy));
    }

    #[test]
    fn unsharp_sharpens_an_edge() {
        let rows = 16;
        let cols = 16;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in cols / 2..cols {
                data[r * cols + c] = 1.0;
            }
        }
        let img = ImageGrid::from_plane(rows, cols, data).unwrap();
        let soft = tv_denoise(&img, 0.2, 30).unwrap();
        let sharpened = unsharp(&soft, 1.5, 1.0).unwrap();
        // the jump across the edge grows
        let jump = |g: &ImageGrid| g.get(0, 8, cols / 2) - g.get(0, 8, cols / 2 - 1);
        assert!(jump(&sharpened) > jump(&soft));
    }

    #[test]
    fn blend_correctness_reassembles_unmodified_regions() {
        let (_, img) = noisy_stripes(20, 28, 0.3, 7);
        for spec in [
            ScaleSpec::Patches {
                bx: 3,
                by: 2,
                overlap: 6,
            },
            ScaleSpec::VerticalBlocks { by: 3, overlap: 6 },
            ScaleSpec::HorizontalBlocks { bx: 4, overlap: 6 },
            ScaleSpec::FullImage,
        ] {
            let layout = spec.layout_for(20, 28).unwrap();
            let patches: Vec<(Rect, ImageGrid)> = (0..layout.n_patches())
                .map(|b| {
                    let ext = layout.extended(b);
                    (ext, crop_rect(&img, &ext))
                })
                .collect();
            let out = overlap_blend(&patches, &layout).unwrap();
            assert_eq!(out.data(), img.data(), "scale {spec:?}");
        }
    }
}
