//! File formats: the PLG1 binary grid format, 8/16-bit PNG, paired datasets,
//! and the PLKB kernel-bank format.
//!
//! PLG1 layout: magic `PLG1`, little-endian u32 rows, cols, channels, then
//! `rows*cols*channels` little-endian f64 samples, channel-planar row-major.
//!
//! PLKB layout: magic `PLKB`, little-endian u32 bx, by, overlap, scene_rows,
//! scene_cols, grid_rows, grid_cols, channels, then a fit-meta record
//! (u8 method tag, f64 lambda, u32 iterations, f64 final loss), then per
//! channel, per patch in row-major order: the kernel raster as little-endian
//! f64 (re, im) pairs followed by the patch's f64 alpha.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use crate::deconv::{FitMeta, FitMethod, KernelBank};
use crate::fft::Spectrum;
use crate::grid::ImageGrid;
use crate::layout::PatchLayout;
use crate::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"PLG1";
const BANK_MAGIC: &[u8; 4] = b"PLKB";

// ---------------------------------------------------------------------------
// PLG1
// ---------------------------------------------------------------------------

pub fn write_plg(img: &ImageGrid, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRID_MAGIC)?;
    w.write_u32::<LittleEndian>(img.rows() as u32)?;
    w.write_u32::<LittleEndian>(img.cols() as u32)?;
    w.write_u32::<LittleEndian>(img.channels() as u32)?;
    for v in img.data() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plg(path: &Path) -> Result<ImageGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, not a PLG1 file",
            path.display()
        )));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let channels = r.read_u32::<LittleEndian>()? as usize;
    let n = rows
        .checked_mul(cols)
        .and_then(|x| x.checked_mul(channels))
        .ok_or_else(|| Error::Data(format!("{}: absurd dimensions", path.display())))?;
    let mut data = vec![0.0f64; n];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    ImageGrid::from_vec(rows, cols, channels, data)
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Reads an 8- or 16-bit PNG, mapping sample values linearly to `[0, 1]`.
pub fn read_png(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    use image::DynamicImage as D;
    let (rows, cols);
    let grid = match img {
        D::ImageLuma8(buf) => {
            (cols, rows) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageGrid::from_vec(rows, cols, 1, data)?
        }
        D::ImageLuma16(buf) => {
            (cols, rows) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            ImageGrid::from_vec(rows, cols, 1, data)?
        }
        other => {
            // interleaved RGB (8- or 16-bit) to channel-planar
            let rgb = other.to_rgb16();
            (cols, rows) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let n = rows * cols;
            let mut data = vec![0.0f64; n * 3];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * n + i] = px[c] as f64 / 65535.0;
                }
            }
            ImageGrid::from_vec(rows, cols, 3, data)?
        }
    };
    Ok(grid)
}

/// Writes a 16-bit PNG (gray or RGB), mapping `[0, peak]` linearly to the
/// sample range. Values are clamped first.
pub fn write_png(img: &ImageGrid, path: &Path) -> Result<ImageGrid> {
    let n = img.rows() * img.cols();
    let quant = |v: f64| -> u16 {
        let t = (v / img.peak).clamp(0.0, 1.0);
        (t * 65535.0).round() as u16
    };
    match img.channels() {
        1 => {
            let raw: Vec<u16> = img.plane(0).iter().map(|&v| quant(v)).collect();
            let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(img.cols() as u32, img.rows() as u32, raw)
                    .expect("raw buffer sized to image");
            buf.save(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        3 => {
            let mut raw = vec![0u16; n * 3];
            for i in 0..n {
                for c in 0..3 {
                    raw[i * 3 + c] = quant(img.plane(c)[i]);
                }
            }
            let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(img.cols() as u32, img.rows() as u32, raw)
                    .expect("raw buffer sized to image");
            buf.save(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        c => {
            return Err(Error::Dimension(format!(
                "cannot write {c}-channel PNG"
            )))
        }
    }
    read_png(path)
}

/// Reads a grid by file extension: `.plg` or `.png`.
pub fn read_grid(path: &Path) -> Result<ImageGrid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("plg") => read_plg(path),
        Some("png") => read_png(path),
        _ => Err(Error::Data(format!(
            "{}: unsupported extension (want .plg or .png)",
            path.display()
        ))),
    }
}

/// Writes a grid by file extension: `.plg` (exact) or `.png` (quantized).
pub fn write_grid(img: &ImageGrid, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("plg") => write_plg(img, path),
        Some("png") => write_png(img, path).map(|_| ()),
        _ => Err(Error::Data(format!(
            "{}: unsupported extension (want .plg or .png)",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------------------
// paired datasets
// ---------------------------------------------------------------------------

/// Loads `meas_*` / `gt_*` pairs from a directory, sorted lexicographically by
/// the shared key after the prefix. Dimensions must be consistent within each
/// role; the two roles may differ.
pub fn load_pairs(dir: &Path) -> Result<Vec<(ImageGrid, ImageGrid)>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut meas: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    let mut gt: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = path.file_stem().and_then(|n| n.to_str()) else {
            continue;
        };
        if !name.ends_with(".plg") && !name.ends_with(".png") {
            continue;
        }
        if let Some(key) = stem.strip_prefix("meas_") {
            meas.insert(key.to_string(), path);
        } else if let Some(key) = stem.strip_prefix("gt_") {
            gt.insert(key.to_string(), path);
        }
    }
    let unmatched_meas: Vec<&String> = meas.keys().filter(|k| !gt.contains_key(*k)).collect();
    let unmatched_gt: Vec<&String> = gt.keys().filter(|k| !meas.contains_key(*k)).collect();
    if !unmatched_meas.is_empty() || !unmatched_gt.is_empty() {
        return Err(Error::Data(format!(
            "unmatched files in {}: meas without gt {unmatched_meas:?}, gt without meas {unmatched_gt:?}",
            dir.display()
        )));
    }
    if meas.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no meas_*/gt_* pairs",
            dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(meas.len());
    for (key, mpath) in &meas {
        let m = read_grid(mpath)?;
        let g = read_grid(&gt[key])?;
        pairs.push((m, g));
    }
    for (m, g) in &pairs[1..] {
        if m.rows() != pairs[0].0.rows()
            || m.cols() != pairs[0].0.cols()
            || m.channels() != pairs[0].0.channels()
        {
            return Err(Error::Data("inconsistent measurement dimensions".into()));
        }
        if g.rows() != pairs[0].1.rows()
            || g.cols() != pairs[0].1.cols()
            || g.channels() != pairs[0].1.channels()
        {
            return Err(Error::Data("inconsistent ground-truth dimensions".into()));
        }
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// PLKB
// ---------------------------------------------------------------------------

fn method_tag(m: FitMethod) -> u8 {
    match m {
        FitMethod::Wiener => 0,
        FitMethod::LeastSquares => 1,
        FitMethod::SmoothedL1 => 2,
    }
}

fn method_from_tag(t: u8) -> Result<FitMethod> {
    match t {
        0 => Ok(FitMethod::Wiener),
        1 => Ok(FitMethod::LeastSquares),
        2 => Ok(FitMethod::SmoothedL1),
        _ => Err(Error::Data(format!("unknown fit-method tag {t}"))),
    }
}

pub fn write_bank(bank: &KernelBank, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BANK_MAGIC)?;
    let layout = bank.layout();
    for v in [
        layout.bx(),
        layout.by(),
        layout.overlap(),
        layout.scene_rows(),
        layout.scene_cols(),
        bank.grid_rows(),
        bank.grid_cols(),
        bank.channels(),
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u8(method_tag(bank.fit_meta.method))?;
    w.write_f64::<LittleEndian>(bank.fit_meta.lambda)?;
    w.write_u32::<LittleEndian>(bank.fit_meta.iterations as u32)?;
    w.write_f64::<LittleEndian>(bank.fit_meta.final_loss)?;
    for c in 0..bank.channels() {
        for b in 0..layout.n_patches() {
            for z in bank.kernel(c, b).data() {
                w.write_f64::<LittleEndian>(z.re)?;
                w.write_f64::<LittleEndian>(z.im)?;
            }
            w.write_f64::<LittleEndian>(bank.alpha(c, b))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<KernelBank> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BANK_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, not a PLKB file",
            path.display()
        )));
    }
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let [bx, by, overlap, scene_rows, scene_cols, grid_rows, grid_cols, channels] = dims;
    let fit_meta = FitMeta {
        method: method_from_tag(r.read_u8()?)?,
        lambda: r.read_f64::<LittleEndian>()?,
        iterations: r.read_u32::<LittleEndian>()? as usize,
        final_loss: r.read_f64::<LittleEndian>()?,
    };
    let layout = PatchLayout::new(scene_rows, scene_cols, bx, by, overlap)?;
    let n_bins = grid_rows * grid_cols;
    let mut kernels = Vec::with_capacity(channels * layout.n_patches());
    let mut alphas = Vec::with_capacity(channels * layout.n_patches());
    for _ in 0..channels * layout.n_patches() {
        let mut raw = vec![0.0f64; 2 * n_bins];
        r.read_f64_into::<LittleEndian>(&mut raw)?;
        let data: Vec<Complex64> = raw
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        kernels.push(Spectrum::from_vec(grid_rows, grid_cols, data)?);
        alphas.push(r.read_f64::<LittleEndian>()?);
    }
    KernelBank::new(
        layout, grid_rows, grid_cols, channels, kernels, alphas, fit_meta,
    )
}
