//! Reconstruction quality metrics (PSNR, SSIM) and experiment-level
//! aggregation into comparison reports.

use crate::grid::ImageGrid;
use crate::{Error, Result};

/// PSNR sentinel: identical images report 99 dB instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn check_pair(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.rows(),
            a.cols(),
            a.channels(),
            b.rows(),
            b.cols(),
            b.channels()
        )));
    }
    if a.peak != b.peak {
        return Err(Error::Dimension(format!(
            "image peaks differ: {} vs {}",
            a.peak, b.peak
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB, `10 log10(peak^2 / MSE)`, capped at
/// [`PSNR_CAP_DB`] for (near-)identical images.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (a.peak * a.peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel_1d() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - mid).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-region separable Gaussian filtering: output is
/// `(rows-10) x (cols-10)`.
fn filter_valid(plane: &[f64], rows: usize, cols: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_cols = cols - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; rows * out_cols];
    for r in 0..rows {
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[r * cols + c + i];
            }
            horiz[r * out_cols + c] = acc;
        }
    }
    let out_rows = rows - SSIM_WINDOW + 1;
    let mut out = vec![0.0; out_rows * out_cols];
    for r in 0..out_rows {
        for c in 0..out_cols {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(r + i) * out_cols + c];
            }
            out[r * out_cols + c] = acc;
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], rows: usize, cols: usize, peak: f64) -> f64 {
    let k = gaussian_kernel_1d();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, rows, cols, &k);
    let mu_y = filter_valid(y, rows, cols, &k);
    let e_xx = filter_valid(&xx, rows, cols, &k);
    let e_yy = filter_valid(&yy, rows, cols, &k);
    let e_xy = filter_valid(&xy, rows, cols, &k);

    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    acc / mu_x.len() as f64
}

/// Mean local structural similarity with an 11x11 Gaussian window
/// (sigma 1.5) and stability constants `(0.01 peak)^2`, `(0.03 peak)^2`.
/// Multi-channel images report the mean of per-channel SSIM.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_pair(a, b)?;
    if a.rows() < SSIM_WINDOW || a.cols() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.rows(),
            a.cols()
        )));
    }
    let mut acc = 0.0;
    for c in 0..a.channels() {
        acc += ssim_plane(a.plane(c), b.plane(c), a.rows(), a.cols(), a.peak);
    }
    Ok(acc / a.channels() as f64)
}

/// Per-sample metric entry. `lpips` is reserved so external tooling can merge
/// perceptual scores; it is never computed here.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

/// Per-sample metrics plus aggregate means and experiment metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub meta: Vec<(String, String)>,
    pub samples: Vec<SampleEval>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn new(meta: Vec<(String, String)>, samples: Vec<SampleEval>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("report needs at least one sample".into()));
        }
        let n = samples.len() as f64;
        let mean_psnr_db = samples.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let mean_ssim = samples.iter().map(|s| s.ssim).sum::<f64>() / n;
        Ok(Self {
            meta,
            samples,
            mean_psnr_db,
            mean_ssim,
        })
    }

    /// CSV serialization: `# key = value` metadata lines, a header, one row
    /// per sample, and a final aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str("sample,psnr_db,ssim,lpips\n");
        for (i, s) in self.samples.iter().enumerate() {
            let lpips = s.lpips.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{i},{},{},{lpips}\n", s.psnr_db, s.ssim));
        }
        out.push_str(&format!("mean,{},{},\n", self.mean_psnr_db, self.mean_ssim));
        out
    }

    pub fn from_csv(text: &str) -> Result<EvalReport> {
        let mut meta = Vec::new();
        let mut samples = Vec::new();
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Data(format!("bad metadata line: {line}")))?;
                meta.push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
            if !saw_header {
                if line != "sample,psnr_db,ssim,lpips" {
                    return Err(Error::Data(format!("unexpected header: {line}")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!("expected 4 fields: {line}")));
            }
            if fields[0] == "mean" {
                continue; // re-derived from samples
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Data(format!("bad number {s:?}")))
            };
            samples.push(SampleEval {
                psnr_db: parse(fields[1])?,
                ssim: parse(fields[2])?,
                lpips: if fields[3].is_empty() {
                    None
                } else {
                    Some(parse(fields[3])?)
                },
            });
        }
        EvalReport::new(meta, samples)
    }
}

/// Scores aligned reconstruction/ground-truth lists.
pub fn evaluate(
    recons: &[ImageGrid],
    truths: &[ImageGrid],
    meta: Vec<(String, String)>,
) -> Result<EvalReport> {
    if recons.len() != truths.len() {
        return Err(Error::Config(format!(
            "{} reconstructions vs {} ground truths",
            recons.len(),
            truths.len()
        )));
    }
    let samples = recons
        .iter()
        .zip(truths.iter())
        .map(|(r, t)| {
            Ok(SampleEval {
                psnr_db: psnr(r, t)?,
                ssim: ssim(r, t)?,
                lpips: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(meta, samples)
}
