//! The five pipeline commands. Each command reads the experiment config,
//! works under `out.dir`, and leaves a checksummed manifest behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use patchlens::config::{
    ExperimentConfig, PsfSource, SceneSource, TruncationConfig,
};
use patchlens::deconv::{
    apply_patch_deconv, fit_kernels_l1_with_curve, fit_kernels_l2, FitMethod, KernelBank,
};
use patchlens::enhance::{enhance_hierarchical, ScaleSchedule};
use patchlens::forward::{forward_local, support_dims, windows_for_fractions};
use patchlens::grid::{embed_window, ImageGrid, SensorWindow};
use patchlens::io;
use patchlens::layout::PatchLayout;
use patchlens::metrics::evaluate;
use patchlens::psf::{load_field, make_base_psf, synthesize_field, FieldSource, PsfField};
use patchlens::scenes::generate_scenes;
use patchlens::{Error, Result};

use crate::manifest::RunManifest;

/// Maps crate errors onto the documented process exit codes.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Dimension(_) | Error::Data(_) | Error::Io(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn frac_dir_name(fraction: f64) -> String {
    format!("frac_{fraction:.4}")
}

fn sample_name(prefix: &str, index: usize) -> String {
    format!("{prefix}_{index:04}.plg")
}

// ---------------------------------------------------------------------------
// shared experiment context
// ---------------------------------------------------------------------------

/// Scene list plus the PSF field and geometry shared by all commands.
struct Experiment {
    scenes: Vec<ImageGrid>,
    field: PsfField,
    sim_layout: PatchLayout,
    support_rows: usize,
    support_cols: usize,
    windows: Vec<(f64, SensorWindow)>,
    train_count: usize,
}

fn scene_dims(config: &ExperimentConfig) -> Result<(usize, usize, usize)> {
    match &config.scene {
        SceneSource::Synthetic {
            rows,
            cols,
            channels,
            ..
        } => Ok((*rows, *cols, *channels)),
        SceneSource::Pairs { .. } => Err(Error::Config(
            "this command requires a synthetic scene source; \
             paired datasets carry their own measurements"
                .into(),
        )),
    }
}

fn build_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    let (rows, cols, channels) = scene_dims(config)?;
    let (kind, count) = match &config.scene {
        SceneSource::Synthetic { kind, count, .. } => (*kind, *count),
        SceneSource::Pairs { .. } => unreachable!("checked by scene_dims"),
    };
    let scenes = generate_scenes(kind, count, rows, cols, channels, config.seed)?;

    let base = match &config.psf {
        PsfSource::Synthetic {
            kind,
            rows: pr,
            cols: pc,
        } => make_base_psf(*kind, *pr, *pc, config.seed)?,
        PsfSource::File { path } => {
            let layout = PatchLayout::new(rows, cols, 1, 1, 0)?;
            load_field(&FieldSource::Single(path.clone()), &layout)?
                .base()
                .clone()
        }
    };

    // the simulated field varies on its own grid, independent of the
    // reconstruction layout
    let (field_bx, field_by) = config.field_grid();
    let sim_layout = PatchLayout::new(rows, cols, field_bx, field_by, 0)?;
    let field = match config.field.mode {
        Some(mode) => synthesize_field(&base, &sim_layout, mode, config.field.strength, config.seed)?,
        None => PsfField::uniform(base, field_bx, field_by),
    };

    let (sr, sc) = support_dims(rows, cols, field.psf_rows(), field.psf_cols());
    let windows = match &config.truncation {
        TruncationConfig::Fractions(fracs) => windows_for_fractions(sr, sc, fracs)?
            .into_iter()
            .zip(fracs.iter())
            .map(|(w, f)| (*f, w))
            .collect(),
        TruncationConfig::Window {
            rows: wr,
            cols: wc,
        } => {
            let w = SensorWindow::centered(sr, sc, *wr, *wc)?;
            let frac = w.area() as f64 / (sr * sc) as f64;
            vec![(frac, w)]
        }
    };

    let train_count = ((count as f64 * config.train_frac).floor() as usize).clamp(1, count - 1);
    Ok(Experiment {
        scenes,
        field,
        sim_layout,
        support_rows: sr,
        support_cols: sc,
        windows,
        train_count,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Generates scenes and writes one measurement per scene and truncation
/// window, plus the PSF field and window geometry files.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<()> {
    let t0 = Instant::now();
    let exp = build_experiment(config)?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out.join("gt"))?;
    std::fs::create_dir_all(out.join("psf"))?;
    let mut manifest = RunManifest::new("simulate", config, out);

    for (i, scene) in exp.scenes.iter().enumerate() {
        let path = out.join("gt").join(sample_name("gt", i));
        io::write_plg(scene, &path)?;
        manifest.add_output(&path)?;
    }

    // field manifest with per-patch kernel paths
    let base_path = out.join("psf").join("base.plg");
    io::write_plg(exp.field.base(), &base_path)?;
    manifest.add_output(&base_path)?;
    let mut field_text = String::new();
    let _ = writeln!(field_text, "mode = {}", exp.field.descriptor.mode);
    let _ = writeln!(field_text, "strength = {}", exp.field.descriptor.strength);
    let _ = writeln!(field_text, "seed = {}", exp.field.descriptor.seed);
    let _ = writeln!(field_text, "grid.bx = {}", exp.field.bx());
    let _ = writeln!(field_text, "grid.by = {}", exp.field.by());
    let _ = writeln!(field_text, "base = base.plg");
    for b in 0..exp.field.n_patches() {
        let name = format!("local_{b:04}.plg");
        let path = out.join("psf").join(&name);
        io::write_plg(exp.field.local(b), &path)?;
        manifest.add_output(&path)?;
        let _ = writeln!(field_text, "local.{b:04} = {name}");
    }
    let field_path = out.join("psf").join("field.txt");
    std::fs::write(&field_path, field_text)?;
    manifest.add_output(&field_path)?;

    let t_forward = Instant::now();
    for (k, (fraction, window)) in exp.windows.iter().enumerate() {
        let dir = out.join("meas").join(frac_dir_name(*fraction));
        std::fs::create_dir_all(&dir)?;
        let mut wtext = String::new();
        let _ = writeln!(wtext, "support.rows = {}", exp.support_rows);
        let _ = writeln!(wtext, "support.cols = {}", exp.support_cols);
        let _ = writeln!(wtext, "window.row_offset = {}", window.row_offset);
        let _ = writeln!(wtext, "window.col_offset = {}", window.col_offset);
        let _ = writeln!(wtext, "window.rows = {}", window.rows);
        let _ = writeln!(wtext, "window.cols = {}", window.cols);
        let _ = writeln!(wtext, "fraction = {fraction}");
        let wpath = dir.join("window.txt");
        std::fs::write(&wpath, wtext)?;
        manifest.add_output(&wpath)?;

        let n_windows = exp.windows.len();
        let measurements: Vec<ImageGrid> = exp
            .scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let noise = config.noise.with_stream((i * n_windows + k) as u64);
                forward_local(scene, &exp.field, &exp.sim_layout, window, &noise)
            })
            .collect::<Result<_>>()?;
        for (i, meas) in measurements.iter().enumerate() {
            let path = dir.join(sample_name("meas", i));
            io::write_plg(meas, &path)?;
            manifest.add_output(&path)?;
        }
    }
    manifest.add_timing("forward", t_forward.elapsed());
    manifest.add_timing("total", t0.elapsed());
    manifest.add_kv("scene.count", exp.scenes.len());
    manifest.add_kv("train.count", exp.train_count);
    manifest.write()?;
    log::info!(
        "simulate: {} scenes x {} windows in {:?}",
        exp.scenes.len(),
        exp.windows.len(),
        t0.elapsed()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

/// Window geometry stored next to each measurement set.
struct StoredWindow {
    support_rows: usize,
    support_cols: usize,
    window: SensorWindow,
    fraction: f64,
}

fn read_window_file(path: &Path) -> Result<StoredWindow> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<f64> {
        map.get(k)
            .ok_or_else(|| Error::Data(format!("{}: missing {k}", path.display())))?
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad {k}", path.display())))
    };
    Ok(StoredWindow {
        support_rows: get("support.rows")? as usize,
        support_cols: get("support.cols")? as usize,
        window: SensorWindow::new(
            get("window.row_offset")? as usize,
            get("window.col_offset")? as usize,
            get("window.rows")? as usize,
            get("window.cols")? as usize,
        ),
        fraction: get("fraction")?,
    })
}

/// Lexicographically sorted simulated fractions present under `out/meas`.
fn list_fraction_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let meas_root = out.join("meas");
    if !meas_root.is_dir() {
        return Err(Error::Data(format!(
            "{} not found; run `simulate` first",
            meas_root.display()
        )));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&meas_root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn load_indexed(dir: &Path, prefix: &str) -> Result<Vec<ImageGrid>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".plg"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no {prefix}_*.plg files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| io::read_plg(p)).collect()
}

fn load_sim_field(out: &Path, scene_rows: usize, scene_cols: usize) -> Result<PsfField> {
    let text = std::fs::read_to_string(out.join("psf").join("field.txt"))?;
    let mut bx = 0usize;
    let mut by = 0usize;
    let mut base_name = String::from("base.plg");
    let mut locals = Vec::new();
    let mut descriptor = patchlens::psf::VariationDescriptor {
        mode: "loaded".into(),
        strength: 0.0,
        seed: 0,
    };
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let (k, v) = (k.trim(), v.trim());
            match k {
                "grid.bx" => bx = v.parse().map_err(|_| Error::Data("bad grid.bx".into()))?,
                "grid.by" => by = v.parse().map_err(|_| Error::Data("bad grid.by".into()))?,
                "base" => base_name = v.to_string(),
                "mode" => descriptor.mode = v.to_string(),
                "strength" => {
                    descriptor.strength =
                        v.parse().map_err(|_| Error::Data("bad strength".into()))?
                }
                "seed" => descriptor.seed = v.parse().map_err(|_| Error::Data("bad seed".into()))?,
                _ if k.starts_with("local.") => locals.push(out.join("psf").join(v)),
                _ => {}
            }
        }
    }
    if bx == 0 || by == 0 || locals.len() != bx * by {
        return Err(Error::Data("malformed psf/field.txt".into()));
    }
    let layout = PatchLayout::new(scene_rows, scene_cols, bx, by, 0)?;
    let loaded = load_field(&FieldSource::PerPatch(locals), &layout)?;
    let base = io::read_plg(&out.join("psf").join(base_name))?;
    PsfField::from_parts(base, loaded.locals().to_vec(), bx, by, descriptor)
}

/// Fits a kernel bank for one layout from grid-embedded training pairs.
fn fit_bank(
    config: &ExperimentConfig,
    layout: &PatchLayout,
    train: &[(ImageGrid, ImageGrid)],
    field: Option<&PsfField>,
    grid: (usize, usize),
    channels: usize,
) -> Result<(KernelBank, Vec<f64>)> {
    match config.fit.method {
        FitMethod::Wiener => {
            let field = field.ok_or_else(|| {
                Error::Data("wiener fitting needs the simulated PSF field on disk".into())
            })?;
            // single patch = the classical global baseline built from the
            // base kernel; otherwise one kernel per patch from the nearest
            // local
            let bank = if layout.n_patches() == 1 {
                KernelBank::wiener_from_psf(
                    field.base(),
                    layout.clone(),
                    grid.0,
                    grid.1,
                    channels,
                    config.fit.lambda,
                )?
            } else {
                KernelBank::wiener_from_field(
                    field,
                    layout.clone(),
                    grid.0,
                    grid.1,
                    channels,
                    config.fit.lambda,
                )?
            };
            Ok((bank, Vec::new()))
        }
        FitMethod::LeastSquares => {
            Ok((fit_kernels_l2(train, layout, config.fit.lambda)?, Vec::new()))
        }
        FitMethod::SmoothedL1 => {
            let init = fit_kernels_l2(train, layout, config.fit.lambda)?;
            fit_kernels_l1_with_curve(train, layout, &init, &config.fit.l1)
        }
    }
}

/// Embeds all measurements of one fraction dir onto the support grid and
/// pairs them with the ground truths.
fn embedded_pairs(
    dir: &Path,
    gts: &[ImageGrid],
) -> Result<(StoredWindow, Vec<(ImageGrid, ImageGrid)>)> {
    let stored = read_window_file(&dir.join("window.txt"))?;
    let meas = load_indexed(dir, "meas")?;
    if meas.len() != gts.len() {
        return Err(Error::Data(format!(
            "{}: {} measurements vs {} ground truths",
            dir.display(),
            meas.len(),
            gts.len()
        )));
    }
    let pairs = meas
        .into_iter()
        .zip(gts.iter().cloned())
        .map(|(m, g)| {
            Ok((
                embed_window(&m, &stored.window, stored.support_rows, stored.support_cols)?,
                g,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((stored, pairs))
}

/// Fits per-fraction kernel banks: the configured patch layout plus the 1x1
/// global baseline, serialized side by side.
pub fn cmd_fit(config: &ExperimentConfig) -> Result<()> {
    let t0 = Instant::now();
    let out = &config.out_dir;
    let gts = load_indexed(&out.join("gt"), "gt")?;
    let (rows, cols) = (gts[0].rows(), gts[0].cols());
    let channels = gts[0].channels();
    let train_count =
        ((gts.len() as f64 * config.train_frac).floor() as usize).clamp(1, gts.len().max(2) - 1);
    let layout = PatchLayout::new(rows, cols, config.layout.bx, config.layout.by, config.layout.overlap)?;
    let global = PatchLayout::new(rows, cols, 1, 1, 0)?;
    let field = load_sim_field(out, rows, cols).ok();

    let mut manifest = RunManifest::new("fit", config, out);
    manifest.add_kv("train.count", train_count);
    let method = config.fit.method.name();

    for dir in list_fraction_dirs(out)? {
        let t_fit = Instant::now();
        let (stored, pairs) = embedded_pairs(&dir, &gts)?;
        let grid = (stored.support_rows, stored.support_cols);
        let train = &pairs[..train_count.min(pairs.len())];

        let frac_name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let bank_dir = out.join("banks").join(&frac_name);
        std::fs::create_dir_all(&bank_dir)?;

        for (variant, l) in [("patch", &layout), ("global", &global)] {
            let (bank, curve) = fit_bank(config, l, train, field.as_ref(), grid, channels)?;
            let path = bank_dir.join(format!("{method}_{variant}.plkb"));
            io::write_bank(&bank, &path)?;
            manifest.add_output(&path)?;
            if !curve.is_empty() {
                let mut csv = String::from("epoch,loss\n");
                for (e, l) in curve.iter().enumerate() {
                    let _ = writeln!(csv, "{e},{l}");
                }
                let cpath = bank_dir.join(format!("loss_{method}_{variant}.csv"));
                std::fs::write(&cpath, csv)?;
                manifest.add_output(&cpath)?;
                log::info!(
                    "fit {frac_name} {variant}: loss {:.6} -> {:.6}",
                    curve[0],
                    curve.last().unwrap()
                );
            }
        }
        manifest.add_timing(&format!("fit_{frac_name}"), t_fit.elapsed());
    }
    manifest.add_timing("total", t0.elapsed());
    manifest.write()?;
    log::info!("fit: done in {:?}", t0.elapsed());
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

/// Applies every fitted bank to every measurement, optionally runs the
/// hierarchical enhancement pass, clips to `[0, peak]`, and writes the
/// reconstructions.
pub fn cmd_reconstruct(config: &ExperimentConfig) -> Result<()> {
    let t0 = Instant::now();
    let out = &config.out_dir;
    let mut manifest = RunManifest::new("reconstruct", config, out);

    let schedule = ScaleSchedule::standard(config.layout.bx, config.layout.by, config.layout.overlap);

    for dir in list_fraction_dirs(out)? {
        let stored = read_window_file(&dir.join("window.txt"))?;
        let meas = load_indexed(&dir, "meas")?;
        let frac_name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let bank_dir = out.join("banks").join(&frac_name);
        if !bank_dir.is_dir() {
            return Err(Error::Data(format!(
                "{} not found; run `fit` first",
                bank_dir.display()
            )));
        }
        let mut bank_paths: Vec<PathBuf> = std::fs::read_dir(&bank_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("plkb"))
            .collect();
        bank_paths.sort();
        if bank_paths.is_empty() {
            return Err(Error::Data(format!(
                "no kernel banks in {}",
                bank_dir.display()
            )));
        }

        for bank_path in bank_paths {
            let bank = io::read_bank(&bank_path)?;
            let variant = bank_path
                .file_stem()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            let recon_dir = out.join("recon").join(&frac_name).join(&variant);
            std::fs::create_dir_all(&recon_dir)?;

            let t_var = Instant::now();
            let recons: Vec<ImageGrid> = meas
                .par_iter()
                .map(|m| {
                    let mut recon = apply_patch_deconv(m, &stored.window, &bank)?;
                    if config.enhance.enabled {
                        recon = enhance_hierarchical(
                            &recon,
                            &schedule,
                            &config.enhance.enhancers,
                            config.enhance.fuse_weight,
                        )?;
                    }
                    recon.clip(0.0, recon.peak);
                    Ok(recon)
                })
                .collect::<Result<_>>()?;
            let per_image = t_var.elapsed().as_secs_f64() / meas.len() as f64;
            manifest.add_kv(
                &format!("timing.recon_per_image_s.{frac_name}.{variant}"),
                format!("{per_image:.4}"),
            );
            for (i, r) in recons.iter().enumerate() {
                let path = recon_dir.join(sample_name("recon", i));
                io::write_plg(r, &path)?;
                manifest.add_output(&path)?;
                let png = recon_dir.join(format!("recon_{i:04}.png"));
                io::write_png(r, &png)?;
                manifest.add_output(&png)?;
            }
        }
    }
    manifest.add_timing("total", t0.elapsed());
    manifest.write()?;
    log::info!("reconstruct: done in {:?}", t0.elapsed());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn normalize_panel(img: &ImageGrid) -> ImageGrid {
    let mut p = img.clone();
    let max = p.max_abs();
    if max > 0.0 {
        p.scale(1.0 / max);
    }
    p.clip(0.0, 1.0);
    p
}

/// Side-by-side montage: truth | measurement | one panel per variant.
fn write_montage(
    path: &Path,
    truth: &ImageGrid,
    meas: &ImageGrid,
    recons: &[(String, ImageGrid)],
) -> Result<()> {
    let mut panels = vec![normalize_panel(truth), normalize_panel(meas)];
    panels.extend(recons.iter().map(|(_, r)| normalize_panel(r)));
    let gap = 2usize;
    let height = panels.iter().map(|p| p.rows()).max().unwrap();
    let width: usize =
        panels.iter().map(|p| p.cols()).sum::<usize>() + gap * (panels.len() - 1);
    let mut buf = vec![255u8; height * width]; // white background and gaps
    let mut x0 = 0usize;
    for p in &panels {
        let plane = p.plane(0);
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                buf[r * width + x0 + c] = (plane[r * p.cols() + c] * 255.0).round() as u8;
            }
        }
        x0 += p.cols() + gap;
    }
    let img: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_raw(width as u32, height as u32, buf)
            .expect("buffer sized to montage");
    img.save(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Scores held-out reconstructions per (variant, fraction), writes one CSV
/// per condition, a side-by-side table, and sample montages.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<()> {
    let t0 = Instant::now();
    let out = &config.out_dir;
    let gts = load_indexed(&out.join("gt"), "gt")?;
    let train_count =
        ((gts.len() as f64 * config.train_frac).floor() as usize).clamp(1, gts.len().max(2) - 1);
    let eval_gts = &gts[train_count.min(gts.len() - 1)..];
    let mut manifest = RunManifest::new("evaluate", config, out);
    let eval_dir = out.join("eval");
    std::fs::create_dir_all(&eval_dir)?;

    let mut table_rows: Vec<(String, String, f64, f64)> = Vec::new();
    for dir in list_fraction_dirs(out)? {
        let frac_name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let stored = read_window_file(&dir.join("window.txt"))?;
        let meas = load_indexed(&dir, "meas")?;
        let recon_root = out.join("recon").join(&frac_name);
        if !recon_root.is_dir() {
            return Err(Error::Data(format!(
                "{} not found; run `reconstruct` first",
                recon_root.display()
            )));
        }
        let mut variant_dirs: Vec<PathBuf> = std::fs::read_dir(&recon_root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        variant_dirs.sort();

        let mut montage_recons: Vec<Vec<(String, ImageGrid)>> = Vec::new();
        for vdir in &variant_dirs {
            let variant = vdir.file_name().unwrap().to_string_lossy().into_owned();
            let recons = load_indexed(vdir, "recon")?;
            if recons.len() != gts.len() {
                return Err(Error::Data(format!(
                    "{}: {} reconstructions vs {} ground truths",
                    vdir.display(),
                    recons.len(),
                    gts.len()
                )));
            }
            let eval_recons = &recons[train_count.min(recons.len() - 1)..];
            let meta = vec![
                ("variant".to_string(), variant.clone()),
                ("fraction".to_string(), stored.fraction.to_string()),
                (
                    "layout".to_string(),
                    format!("{}x{}", config.layout.by, config.layout.bx),
                ),
                ("overlap".to_string(), config.layout.overlap.to_string()),
                (
                    "field".to_string(),
                    format!(
                        "{}:{}",
                        config
                            .field
                            .mode
                            .map(|m| m.name().to_string())
                            .unwrap_or_else(|| "none".into()),
                        config.field.strength
                    ),
                ),
            ];
            let report = evaluate(eval_recons, eval_gts, meta)?;
            let csv_path = eval_dir.join(format!("report_{variant}_{frac_name}.csv"));
            std::fs::write(&csv_path, report.to_csv())?;
            manifest.add_output(&csv_path)?;
            table_rows.push((
                variant.clone(),
                frac_name.clone(),
                report.mean_psnr_db,
                report.mean_ssim,
            ));
            for (k, r) in eval_recons.iter().take(4).enumerate() {
                if montage_recons.len() <= k {
                    montage_recons.push(Vec::new());
                }
                montage_recons[k].push((variant.clone(), r.clone()));
            }
        }
        for (k, recons) in montage_recons.iter().enumerate() {
            let idx = train_count.min(gts.len() - 1) + k;
            let path = eval_dir.join(format!("montage_{frac_name}_{idx:04}.png"));
            write_montage(&path, &gts[idx], &meas[idx], recons)?;
            manifest.add_output(&path)?;
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "{:<24} {:<14} {:>10} {:>8}", "variant", "meas", "PSNR(dB)", "SSIM");
    let _ = writeln!(summary, "{}", "-".repeat(60));
    for (variant, frac, psnr, ssim) in &table_rows {
        let _ = writeln!(summary, "{variant:<24} {frac:<14} {psnr:>10.3} {ssim:>8.4}");
    }
    let sum_path = eval_dir.join("summary.txt");
    std::fs::write(&sum_path, &summary)?;
    manifest.add_output(&sum_path)?;
    print!("{summary}");

    manifest.add_timing("total", t0.elapsed());
    manifest.write()?;
    log::info!("evaluate: done in {:?}", t0.elapsed());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep-patches
// ---------------------------------------------------------------------------

/// One pipeline pass (fit + reconstruct + evaluate, in memory) per patch
/// count `N`, using an `N x (N+1)` layout, written to `sweep/sweep.csv`.
pub fn cmd_sweep_patches(config: &ExperimentConfig, n_list: &[usize]) -> Result<()> {
    let t0 = Instant::now();
    if n_list.is_empty() {
        return Err(Error::Config("empty patch-count list".into()));
    }
    let out = &config.out_dir;
    let gts = load_indexed(&out.join("gt"), "gt")?;
    let (rows, cols) = (gts[0].rows(), gts[0].cols());
    let channels = gts[0].channels();
    let train_count =
        ((gts.len() as f64 * config.train_frac).floor() as usize).clamp(1, gts.len().max(2) - 1);
    let field = load_sim_field(out, rows, cols).ok();

    // sweep runs on the largest simulated fraction
    let dir = list_fraction_dirs(out)?
        .into_iter()
        .map(|d| {
            let frac = read_window_file(&d.join("window.txt")).map(|w| w.fraction)?;
            Ok((d, frac))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(d, _)| d)
        .ok_or_else(|| Error::Data("no simulated measurements found".into()))?;
    let (stored, pairs) = embedded_pairs(&dir, &gts)?;
    let grid = (stored.support_rows, stored.support_cols);
    let train = &pairs[..train_count.min(pairs.len())];

    let mut manifest = RunManifest::new("sweep-patches", config, out);
    let sweep_dir = out.join("sweep");
    std::fs::create_dir_all(&sweep_dir)?;
    let mut csv = String::from("n,psnr_db,ssim,param_count\n");
    for &n in n_list {
        if n == 0 {
            return Err(Error::Config("patch count N must be at least 1".into()));
        }
        let t_n = Instant::now();
        let layout = PatchLayout::new(rows, cols, n + 1, n, config.layout.overlap)?;
        let (bank, _) = fit_bank(config, &layout, train, field.as_ref(), grid, channels)?;
        let recons: Vec<ImageGrid> = pairs[train_count..]
            .par_iter()
            .map(|(m, _)| {
                let mut r = apply_patch_deconv(m, &SensorWindow::full(grid.0, grid.1), &bank)?;
                r.clip(0.0, r.peak);
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let report = evaluate(&recons, &gts[train_count..], vec![])?;
        let _ = writeln!(
            csv,
            "{n},{},{},{}",
            report.mean_psnr_db,
            report.mean_ssim,
            bank.param_count()
        );
        manifest.add_timing(&format!("sweep_n{n}"), t_n.elapsed());
        log::info!(
            "sweep N={n}: {:.3} dB / {:.4} ssim, {} params",
            report.mean_psnr_db,
            report.mean_ssim,
            bank.param_count()
        );
    }
    let csv_path = sweep_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv)?;
    manifest.add_output(&csv_path)?;
    manifest.add_timing("total", t0.elapsed());
    manifest.write()?;
    Ok(())
}

/// Parses a sweep CSV back into `(n, psnr, ssim, params)` rows.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(usize, f64, f64, usize)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Data(format!("bad sweep row: {line}")));
            }
            Ok((
                f[0].parse().map_err(|_| Error::Data("bad n".into()))?,
                f[1].parse().map_err(|_| Error::Data("bad psnr".into()))?,
                f[2].parse().map_err(|_| Error::Data("bad ssim".into()))?,
                f[3].parse().map_err(|_| Error::Data("bad params".into()))?,
            ))
        })
        .collect()
}
