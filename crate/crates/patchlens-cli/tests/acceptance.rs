//! Acceptance suite: one test per criterion, each printing a pass line with
//! its measured numbers (run with `--nocapture` to see them all).
//!
//! The shared benchmark: 64 natural-mix scenes at 96x128, a 17x17
//! gaussian-speckle base PSF, a shift-mode PSF field of strength 2 varying on
//! a 10x8 grid (finer than any reconstruction layout tested), noiseless,
//! full sensor window; reconstruction uses a 4x5 patch layout with the
//! default overlap and regularization; the first 48 scenes train, the last
//! 16 are held out.

use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchlens::deconv::{
    apply_patch_deconv, fit_kernels_l2, smoothed_l1_loss_and_gradients, wiener_kernel, FitMeta,
    FitMethod, KernelBank, L1Options, LambdaSpec,
};
use patchlens::fft::{fft2, ifft2_real, Spectrum};
use patchlens::forward::{
    forward_global, forward_local, support_dims, windows_for_fractions, NoiseSpec,
};
use patchlens::grid::{ImageGrid, SensorWindow};
use patchlens::layout::PatchLayout;
use patchlens::metrics::{evaluate, psnr, ssim, PSNR_CAP_DB};
use patchlens::psf::{make_base_psf, synthesize_field, BasePsfKind, PsfField, VariationMode};
use patchlens::scenes::{generate_scenes, SceneKind};

const TRAIN: usize = 48;

fn pass(criterion: usize, what: &str, detail: String) {
    println!("[PASS] criterion {criterion:2}: {what} — {detail}");
}

struct Bench {
    scenes: Vec<ImageGrid>,
    base: ImageGrid,
    sim_layout: PatchLayout,
    field: PsfField,
    meas_full: Vec<ImageGrid>,
    support: (usize, usize),
}

fn bench() -> &'static Bench {
    static BENCH: OnceLock<Bench> = OnceLock::new();
    BENCH.get_or_init(|| {
        let scenes = generate_scenes(SceneKind::NaturalMix, 64, 96, 128, 1, 7).unwrap();
        let base = make_base_psf(BasePsfKind::GaussianSpeckle, 17, 17, 7).unwrap();
        let sim_layout = PatchLayout::new(96, 128, 10, 8, 0).unwrap();
        let field = synthesize_field(&base, &sim_layout, VariationMode::Shift, 2.0, 7).unwrap();
        let (sr, sc) = support_dims(96, 128, 17, 17);
        let full = SensorWindow::full(sr, sc);
        let meas_full = scenes
            .iter()
            .map(|s| forward_local(s, &field, &sim_layout, &full, &NoiseSpec::none()).unwrap())
            .collect();
        Bench {
            scenes,
            base,
            sim_layout,
            field,
            meas_full,
            support: (sr, sc),
        }
    })
}

fn clipped(mut img: ImageGrid) -> ImageGrid {
    img.clip(0.0, 1.0);
    img
}

fn held_out_scores(bank: &KernelBank, meas: &[ImageGrid], scenes: &[ImageGrid]) -> (f64, f64) {
    let (sr, sc) = (bank.grid_rows(), bank.grid_cols());
    let full = SensorWindow::full(sr, sc);
    let recons: Vec<ImageGrid> = meas[TRAIN..]
        .iter()
        .map(|m| clipped(apply_patch_deconv(m, &full, bank).unwrap()))
        .collect();
    let report = evaluate(&recons, &scenes[TRAIN..], vec![]).unwrap();
    (report.mean_psnr_db, report.mean_ssim)
}

fn train_pairs(b: &Bench) -> Vec<(ImageGrid, ImageGrid)> {
    b.meas_full[..TRAIN]
        .iter()
        .cloned()
        .zip(b.scenes[..TRAIN].iter().cloned())
        .collect()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_forward_model_matches_nested_loop_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err = 0.0f64;
    for _ in 0..50 {
        let (p, q) = (rng.random_range(4..=16), rng.random_range(4..=16));
        let (k, l) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let scene = ImageGrid::from_plane(
            p,
            q,
            (0..p * q).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let psf = ImageGrid::from_plane(
            k,
            l,
            (0..k * l).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let (sr, sc) = support_dims(p, q, k, l);
        let meas = forward_global(
            &scene,
            &psf,
            &SensorWindow::full(sr, sc),
            &NoiseSpec::none(),
        )
        .unwrap();
        // direct nested-loop linear convolution
        let mut oracle = vec![0.0f64; sr * sc];
        for r in 0..p {
            for c in 0..q {
                for i in 0..k {
                    for j in 0..l {
                        oracle[(r + i) * sc + (c + j)] += scene.get(0, r, c) * psf.get(0, i, j);
                    }
                }
            }
        }
        for (a, b) in meas.data().iter().zip(oracle.iter()) {
            max_err = max_err.max((a - b).abs());
        }
    }
    let elapsed = t0.elapsed();
    assert!(max_err < 1e-10, "max abs error {max_err}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(
        1,
        "FFT forward model matches the nested-loop convolution oracle",
        format!("50 instances, max abs error {max_err:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_local_model_and_patch_apply_collapse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scene = ImageGrid::from_plane(
        48,
        60,
        (0..48 * 60).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let psf = make_base_psf(BasePsfKind::GaussianSpeckle, 9, 9, 3).unwrap();
    let (sr, sc) = support_dims(48, 60, 9, 9);
    let window = SensorWindow::centered(sr, sc, 50, 62).unwrap();

    // forward collapse: every local PSF equal to the base
    let mut fwd_err = 0.0f64;
    for (bx, by) in [(1usize, 1usize), (3, 2), (6, 5)] {
        let layout = PatchLayout::new(48, 60, bx, by, 10).unwrap();
        let field = PsfField::uniform(psf.clone(), bx, by);
        let local = forward_local(&scene, &field, &layout, &window, &NoiseSpec::none()).unwrap();
        let global = forward_global(&scene, &psf, &window, &NoiseSpec::none()).unwrap();
        for (a, b) in local.data().iter().zip(global.data()) {
            fwd_err = fwd_err.max((a - b).abs());
        }
    }
    assert!(fwd_err < 1e-10, "forward collapse error {fwd_err}");

    // apply collapse: identical kernels across patches, all tested overlaps
    let meas = ImageGrid::from_plane(
        sr,
        sc,
        (0..sr * sc).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let kernel = wiener_kernel(&psf, sr, sc, 1e-4).unwrap();
    let yspec = fft2(&meas, sr, sc).unwrap();
    let filtered = ifft2_real(&yspec.hadamard(&kernel).unwrap());
    let mut apply_err = 0.0f64;
    for overlap in [0usize, 10, 16, 20] {
        let layout = PatchLayout::new(48, 60, 4, 3, overlap).unwrap();
        let n = layout.n_patches();
        let bank = KernelBank::new(
            layout,
            sr,
            sc,
            1,
            vec![kernel.clone(); n],
            vec![1.0; n],
            FitMeta {
                method: FitMethod::Wiener,
                lambda: 1e-4,
                iterations: 0,
                final_loss: f64::NAN,
            },
        )
        .unwrap();
        let out = apply_patch_deconv(&meas, &SensorWindow::full(sr, sc), &bank).unwrap();
        for r in 0..48 {
            for c in 0..60 {
                apply_err = apply_err.max((out.get(0, r, c) - filtered[r * sc + c]).abs());
            }
        }
    }
    assert!(apply_err < 1e-10, "apply collapse error {apply_err}");
    pass(
        2,
        "uniform field and identical kernels collapse to the global model",
        format!("forward {fwd_err:.2e}, apply {apply_err:.2e}"),
    );
}

#[test]
fn criterion_03_blend_weights_form_partition_of_unity() {
    let mut worst = 0.0f64;
    for bx in 1..=8 {
        for by in 1..=8 {
            for overlap in [0usize, 10, 16, 20] {
                let layout = PatchLayout::new(96, 128, bx, by, overlap).unwrap();
                let mut sums = vec![0.0f64; 96 * 128];
                for b in 0..layout.n_patches() {
                    let ext = layout.extended(b);
                    let w = layout.weights(b);
                    let mut k = 0;
                    for r in ext.r0..ext.r1 {
                        for c in ext.c0..ext.c1 {
                            sums[r * 128 + c] += w[k];
                            k += 1;
                        }
                    }
                }
                for s in sums {
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-12, "worst deviation {worst}");
    pass(
        3,
        "blend weights sum to one at every pixel",
        format!("64 layouts x 4 overlaps, worst |sum-1| = {worst:.2e}"),
    );
}

#[test]
fn criterion_04_analytic_gradients_match_finite_differences() {
    let opts = L1Options {
        huber_delta: 0.1,
        ..L1Options::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let layout = PatchLayout::new(12, 12, 2, 2, 4).unwrap();
        let scene = ImageGrid::from_plane(
            12,
            12,
            (0..144).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let meas = ImageGrid::from_plane(
            16,
            16,
            (0..256).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let kernels: Vec<Spectrum> = (0..4)
            .map(|_| {
                Spectrum::from_vec(
                    16,
                    16,
                    (0..256)
                        .map(|_| {
                            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let alphas: Vec<f64> = (0..4).map(|_| 0.5 + rng.random::<f64>()).collect();
        let bank = KernelBank::new(
            layout,
            16,
            16,
            1,
            kernels,
            alphas,
            FitMeta {
                method: FitMethod::SmoothedL1,
                lambda: 0.0,
                iterations: 0,
                final_loss: f64::NAN,
            },
        )
        .unwrap();
        let train = vec![(meas, scene)];
        let grads = smoothed_l1_loss_and_gradients(&train, &bank, &opts).unwrap();
        let grad_scale = grads
            .kernels
            .iter()
            .map(|k| k.max_abs())
            .fold(0.0f64, f64::max);
        let floor = 1e-4 * grad_scale;
        let eps = 1e-5;
        let loss_of = |b: &KernelBank| {
            smoothed_l1_loss_and_gradients(&train, b, &opts)
                .unwrap()
                .loss
        };
        let mut probe = |analytic: f64, plus: KernelBank, minus: KernelBank| {
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(floor);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "relative error {rel} (fd {fd}, analytic {analytic})");
        };
        for _ in 0..20 {
            let b = rng.random_range(0..4usize);
            let f = rng.random_range(0..256usize);
            let re_part = rng.random::<bool>();
            let dz = if re_part {
                Complex64::new(eps, 0.0)
            } else {
                Complex64::new(0.0, eps)
            };
            let mut plus = bank.clone();
            let mut minus = bank.clone();
            plus.kernel_mut(0, b).data_mut()[f] += dz;
            minus.kernel_mut(0, b).data_mut()[f] -= dz;
            let analytic = if re_part {
                grads.kernels[b].data()[f].re
            } else {
                grads.kernels[b].data()[f].im
            };
            probe(analytic, plus, minus);
        }
        for b in 0..4 {
            let mut plus = bank.clone();
            let mut minus = bank.clone();
            *plus.alpha_mut(0, b) += eps;
            *minus.alpha_mut(0, b) -= eps;
            probe(grads.alphas[b], plus, minus);
        }
    }
    pass(
        4,
        "analytic smoothed-L1 gradients match central finite differences",
        format!("10 seeds x (20 kernel entries + 4 alphas), worst rel err {worst:.2e}"),
    );
}

#[test]
fn criterion_05_patch_wise_fit_beats_global_fit() {
    let b = bench();
    let t0 = Instant::now();
    let train = train_pairs(b);
    let layout = PatchLayout::new(96, 128, 5, 4, 16).unwrap();
    let global = PatchLayout::new(96, 128, 1, 1, 0).unwrap();
    let bank_patch = fit_kernels_l2(&train, &layout, LambdaSpec::default()).unwrap();
    let bank_global = fit_kernels_l2(&train, &global, LambdaSpec::default()).unwrap();
    let (pp, ps) = held_out_scores(&bank_patch, &b.meas_full, &b.scenes);
    let (gp, gs) = held_out_scores(&bank_global, &b.meas_full, &b.scenes);
    let elapsed = t0.elapsed();
    assert!(
        pp - gp >= 0.5,
        "PSNR margin {:.3} dB below 0.5 (patch {pp:.3}, global {gp:.3})",
        pp - gp
    );
    assert!(
        ps - gs >= 0.01,
        "SSIM margin {:.4} below 0.01 (patch {ps:.4}, global {gs:.4})",
        ps - gs
    );
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(
        5,
        "patch-wise kernels beat the global baseline on held-out scenes",
        format!(
            "patch {pp:.2} dB / {ps:.3} vs global {gp:.2} dB / {gs:.3} (margins {:.2} dB, {:.3}), {elapsed:.1?}",
            pp - gp,
            ps - gs
        ),
    );
}

#[test]
fn criterion_06_wiener_psnr_decreases_with_truncation() {
    let b = bench();
    let t0 = Instant::now();
    let (sr, sc) = b.support;
    let fractions = [1.0, 0.65, 0.25, 0.08];
    let windows = windows_for_fractions(sr, sc, &fractions).unwrap();
    let global = PatchLayout::new(96, 128, 1, 1, 0).unwrap();
    let bank =
        KernelBank::wiener_from_psf(&b.base, global, sr, sc, 1, LambdaSpec::default()).unwrap();
    // reconstructions from different sensor areas carry different total
    // energy; a per-sample least-squares intensity alignment makes PSNR
    // track information content instead of global dimming
    let mut means = Vec::new();
    for w in &windows {
        let mut acc = 0.0;
        for scene in &b.scenes {
            let meas =
                forward_local(scene, &b.field, &b.sim_layout, w, &NoiseSpec::none()).unwrap();
            let recon = apply_patch_deconv(&meas, w, &bank).unwrap();
            let (mut rx, mut rr) = (0.0, 0.0);
            for (a, s) in recon.data().iter().zip(scene.data()) {
                rx += a * s;
                rr += a * a;
            }
            let mut aligned = recon;
            if rr > 0.0 {
                aligned.scale(rx / rr);
            }
            acc += psnr(&clipped(aligned), scene).unwrap();
        }
        means.push(acc / b.scenes.len() as f64);
    }
    let elapsed = t0.elapsed();
    for pair in means.windows(2) {
        assert!(
            pair[1] < pair[0],
            "PSNR not strictly decreasing: {means:.3?}"
        );
    }
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(
        6,
        "global Wiener PSNR strictly decreases with sensor truncation",
        format!(
            "fractions {fractions:?} -> {:?} dB, {elapsed:.1?}",
            means.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_07_patch_count_sweep_is_monotone() {
    let b = bench();
    let t0 = Instant::now();
    let train = train_pairs(b);
    let mut rows = Vec::new();
    for n in [1usize, 2, 4] {
        let layout = PatchLayout::new(96, 128, n + 1, n, 16).unwrap();
        let bank = fit_kernels_l2(&train, &layout, LambdaSpec::default()).unwrap();
        let (p, s) = held_out_scores(&bank, &b.meas_full, &b.scenes);
        rows.push((n, p, s, bank.param_count()));
    }
    let elapsed = t0.elapsed();
    for pair in rows.windows(2) {
        assert!(
            pair[1].1 >= pair[0].1,
            "PSNR decreased from N={} ({:.3}) to N={} ({:.3})",
            pair[0].0,
            pair[0].1,
            pair[1].0,
            pair[1].1
        );
    }
    // parameter count grows as N(N+1)
    let (sr, sc) = b.support;
    for (n, _, _, params) in &rows {
        assert_eq!(*params, n * (n + 1) * (2 * sr * sc + 1));
    }
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    pass(
        7,
        "held-out PSNR is nondecreasing in the patch count",
        format!(
            "{} , {elapsed:.1?}",
            rows.iter()
                .map(|(n, p, _, k)| format!("N={n}: {p:.2} dB ({k} params)"))
                .collect::<Vec<_>>()
                .join("; ")
        ),
    );
}

#[test]
fn criterion_08_no_variation_means_no_penalty() {
    let b = bench();
    // the shift-invariant case: every measurement comes from the base PSF
    let (sr, sc) = b.support;
    let full = SensorWindow::full(sr, sc);
    let meas: Vec<ImageGrid> = b
        .scenes
        .iter()
        .map(|s| forward_global(s, &b.base, &full, &NoiseSpec::none()).unwrap())
        .collect();
    let train: Vec<(ImageGrid, ImageGrid)> = meas[..TRAIN]
        .iter()
        .cloned()
        .zip(b.scenes[..TRAIN].iter().cloned())
        .collect();
    let layout = PatchLayout::new(96, 128, 5, 4, 16).unwrap();
    let global = PatchLayout::new(96, 128, 1, 1, 0).unwrap();
    let bank_patch = fit_kernels_l2(&train, &layout, LambdaSpec::default()).unwrap();
    let bank_global = fit_kernels_l2(&train, &global, LambdaSpec::default()).unwrap();
    let (pp, _) = held_out_scores(&bank_patch, &meas, &b.scenes);
    let (gp, _) = held_out_scores(&bank_global, &meas, &b.scenes);
    assert!(
        (pp - gp).abs() <= 0.1,
        "strength-0 gap {:.4} dB exceeds 0.1 (patch {pp:.3}, global {gp:.3})",
        pp - gp
    );
    pass(
        8,
        "patching does not change the shift-invariant case",
        format!("patch {pp:.3} dB vs global {gp:.3} dB (|gap| {:.4} dB)", (pp - gp).abs()),
    );
}

/// Straightforward sliding-window SSIM, independent of the library: explicit
/// 2D Gaussian window, one nested loop per position.
fn ssim_reference(a: &ImageGrid, b: &ImageGrid) -> f64 {
    const W: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut win = [[0.0f64; W]; W];
    let mid = (W / 2) as f64;
    let mut sum = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-(((i as f64 - mid).powi(2) + (j as f64 - mid).powi(2))
                / (2.0 * SIGMA * SIGMA)))
                .exp();
            sum += *v;
        }
    }
    for row in &mut win {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let c1 = (0.01 * a.peak).powi(2);
    let c2 = (0.03 * a.peak).powi(2);
    let (rows, cols) = (a.rows(), a.cols());
    let mut acc = 0.0;
    for c in 0..a.channels() {
        let (x, y) = (a.plane(c), b.plane(c));
        let mut total = 0.0;
        let mut count = 0usize;
        for r0 in 0..=rows - W {
            for c0 in 0..=cols - W {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        mx += win[i][j] * x[(r0 + i) * cols + c0 + j];
                        my += win[i][j] * y[(r0 + i) * cols + c0 + j];
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..W {
                    for j in 0..W {
                        let dx = x[(r0 + i) * cols + c0 + j] - mx;
                        let dy = y[(r0 + i) * cols + c0 + j] - my;
                        vx += win[i][j] * dx * dx;
                        vy += win[i][j] * dy * dy;
                        cov += win[i][j] * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc += total / count as f64;
    }
    acc / a.channels() as f64
}

#[test]
fn criterion_09_metric_correctness() {
    // SSIM vs the independent reference
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = ImageGrid::from_plane(
            64,
            64,
            (0..64 * 64).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut bimg = a.clone();
        for v in bimg.data_mut() {
            *v = (*v + 0.3 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
        let fast = ssim(&a, &bimg).unwrap();
        let slow = ssim_reference(&a, &bimg);
        worst = worst.max((fast - slow).abs());
        assert!((fast - slow).abs() < 1e-6, "ssim {fast} vs reference {slow}");
    }
    // PSNR spot values
    let a = ImageGrid::constant(16, 16, 1, 0.5);
    let b = ImageGrid::constant(16, 16, 1, 0.6);
    let p1 = psnr(&a, &b).unwrap();
    assert!((p1 - 20.0).abs() < 1e-4, "psnr {p1} vs 20");
    let c = ImageGrid::constant(16, 16, 1, 100.0).with_peak(255.0);
    let d = ImageGrid::constant(16, 16, 1, 101.0).with_peak(255.0);
    let p2 = psnr(&c, &d).unwrap();
    assert!((p2 - 48.1308).abs() < 1e-4, "psnr {p2} vs 48.1308");
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    pass(
        9,
        "SSIM matches the independent reference and PSNR spot values are exact",
        format!("20 pairs, worst |delta| {worst:.2e}; 20 dB and 48.1308 dB spot checks"),
    );
}

#[test]
fn criterion_10_pipeline_runs_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_patchlens");
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg_text = "\
seed = 21
scene.kind = natural-mix
scene.count = 6
scene.rows = 48
scene.cols = 64
psf.kind = gaussian-speckle
psf.rows = 9
psf.cols = 9
field.mode = shift
field.strength = 2
field.bx = 6
field.by = 4
layout.bx = 3
layout.by = 2
layout.overlap = 8
truncation.fractions = 1.0, 0.5
noise.kind = gaussian
noise.sigma = 0.005
fit.method = l2
";
    let cfg_path = tmp.path().join("exp.cfg");
    std::fs::write(&cfg_path, cfg_text).unwrap();

    let run_all = |out: &std::path::Path| {
        for cmd in ["simulate", "fit", "reconstruct", "evaluate"] {
            let status = std::process::Command::new(bin)
                .args([
                    cmd,
                    "--config",
                    cfg_path.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .env("PATCHLENS_LOG", "warn")
                .stdout(std::process::Stdio::null())
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
        }
    };
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_all(&out_a);
    run_all(&out_b);

    fn walk(root: &std::path::Path, base: &std::path::Path, files: &mut Vec<std::path::PathBuf>) {
        for entry in std::fs::read_dir(root).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, files);
            } else {
                files.push(path.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut files_a = Vec::new();
    let mut files_b = Vec::new();
    walk(&out_a, &out_a, &mut files_a);
    walk(&out_b, &out_b, &mut files_b);
    files_a.sort();
    files_b.sort();
    assert_eq!(files_a, files_b, "file inventories differ");
    let mut compared = 0usize;
    for rel in &files_a {
        let name = rel.file_name().unwrap().to_string_lossy();
        if name.starts_with("manifest_") {
            // manifests carry wall-clock timings; their checksum inventories
            // must still agree line-for-line
            let grab = |p: &std::path::Path| -> Vec<String> {
                std::fs::read_to_string(p)
                    .unwrap()
                    .lines()
                    .filter(|l| l.starts_with("output."))
                    .map(|l| l.to_string())
                    .collect()
            };
            assert_eq!(grab(&out_a.join(rel)), grab(&out_b.join(rel)), "{rel:?}");
            continue;
        }
        let a = std::fs::read(out_a.join(rel)).unwrap();
        let b = std::fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "file {rel:?} differs between runs");
        compared += 1;
    }
    pass(
        10,
        "two pipeline runs with one config and seed are byte-identical",
        format!("{compared} output files compared, plus manifest inventories"),
    );
}

#[test]
fn criterion_11_apply_throughput_on_sensor_scale_grid() {
    // 240x432 scene, 31x49 kernel -> 270x480 deconvolution grid, 5x6 bank
    let psf = make_base_psf(BasePsfKind::GaussianSpeckle, 31, 49, 5).unwrap();
    let (sr, sc) = support_dims(240, 432, 31, 49);
    assert_eq!((sr, sc), (270, 480));
    let layout = PatchLayout::new(240, 432, 6, 5, 16).unwrap();
    let bank =
        KernelBank::wiener_from_psf(&psf, layout, sr, sc, 1, LambdaSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let meas = ImageGrid::from_plane(
        sr,
        sc,
        (0..sr * sc).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap();
    let window = SensorWindow::full(sr, sc);
    // warm-up builds the FFT plans, then time the application itself
    let _ = apply_patch_deconv(&meas, &window, &bank).unwrap();
    let t0 = Instant::now();
    let recon = apply_patch_deconv(&meas, &window, &bank).unwrap();
    let elapsed = t0.elapsed();
    assert_eq!((recon.rows(), recon.cols()), (240, 432));
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "apply took {elapsed:?} (budget 1 s)"
    );
    pass(
        11,
        "patch-wise application on a 270x480 grid with a 5x6 bank runs under 1 s",
        format!("{elapsed:.3?} single-threaded"),
    );
}
