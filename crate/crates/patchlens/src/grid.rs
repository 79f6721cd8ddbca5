//! Real-valued 2D rasters (scenes, measurements, reconstructions, PSFs) and
//! the sensor-window primitives that model finite-sensor truncation.
//!
//! Data is stored channel-planar, row-major: the sample at channel `c`,
//! row `r`, column `j` lives at index `(c * rows + r) * cols + j`.

use crate::{Error, Result};

/// A real-valued image raster with 1 or 3 channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    /// Declared dynamic-range maximum, used as the PSNR peak. Defaults to 1.0.
    pub peak: f64,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            peak: 1.0,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn constant(rows: usize, cols: usize, channels: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            channels,
            peak: 1.0,
            data: vec![value; rows * cols * channels],
        }
    }

    /// Builds a grid from raw channel-planar row-major samples, enforcing the
    /// length and finiteness invariants.
    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::Dimension(format!(
                "data length {} does not match {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("grid contains non-finite samples".into()));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            peak: 1.0,
            data,
        })
    }

    /// Single-channel constructor from a plane of samples.
    pub fn from_plane(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(rows, cols, 1, data)
    }

    pub fn with_peak(mut self, peak: f64) -> Self {
        self.peak = peak;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies one channel out as a single-channel grid.
    pub fn channel(&self, c: usize) -> ImageGrid {
        ImageGrid {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            peak: self.peak,
            data: self.plane(c).to_vec(),
        }
    }

    /// Assembles a multi-channel grid from per-channel planes.
    pub fn from_planes(rows: usize, cols: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        let mut data = Vec::with_capacity(rows * cols * channels);
        for p in planes {
            if p.len() != rows * cols {
                return Err(Error::Dimension("plane length mismatch".into()));
            }
            data.extend_from_slice(&p);
        }
        Self::from_vec(rows, cols, channels, data)
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, j: usize) -> f64 {
        self.data[(c * self.rows + r) * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, j: usize, v: f64) {
        self.data[(c * self.rows + r) * self.cols + j] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Clamps every sample into `[lo, hi]`.
    pub fn clip(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    /// Scales every sample by `s`.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// The sensor's effective sampling region: an axis-aligned crop within a
/// larger support grid. Offsets locate the window's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorWindow {
    pub row_offset: usize,
    pub col_offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SensorWindow {
    pub fn new(row_offset: usize, col_offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            row_offset,
            col_offset,
            rows,
            cols,
        }
    }

    /// A window covering the whole `rows x cols` support.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self::new(0, 0, rows, cols)
    }

    /// A centered window of the given extent within the support. Odd leftover
    /// pixels go to the bottom/right side.
    pub fn centered(
        support_rows: usize,
        support_cols: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if rows > support_rows || cols > support_cols {
            return Err(Error::Dimension(format!(
                "window {rows}x{cols} exceeds support {support_rows}x{support_cols}"
            )));
        }
        Ok(Self::new(
            (support_rows - rows) / 2,
            (support_cols - cols) / 2,
            rows,
            cols,
        ))
    }

    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    /// True when the window lies fully inside a `rows x cols` support grid.
    pub fn fits_within(&self, rows: usize, cols: usize) -> bool {
        self.row_offset + self.rows <= rows && self.col_offset + self.cols <= cols
    }
}

/// Crops `img` to the window: values inside the window are preserved exactly,
/// everything outside is discarded.
pub fn apply_window(img: &ImageGrid, w: &SensorWindow) -> Result<ImageGrid> {
    if !w.fits_within(img.rows(), img.cols()) {
        return Err(Error::Dimension(format!(
            "window ({},{})+{}x{} outside {}x{} grid",
            w.row_offset,
            w.col_offset,
            w.rows,
            w.cols,
            img.rows(),
            img.cols()
        )));
    }
    let mut out = ImageGrid::zeros(w.rows, w.cols, img.channels());
    out.peak = img.peak;
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for r in 0..w.rows {
            let s0 = (w.row_offset + r) * img.cols() + w.col_offset;
            let d0 = r * w.cols;
            dst[d0..d0 + w.cols].copy_from_slice(&src[s0..s0 + w.cols]);
        }
    }
    Ok(out)
}

/// Adjoint of [`apply_window`]: places a window-sized measurement back onto a
/// zero-filled support grid at the window offset.
pub fn embed_window(
    meas: &ImageGrid,
    w: &SensorWindow,
    support_rows: usize,
    support_cols: usize,
) -> Result<ImageGrid> {
    if meas.rows() != w.rows || meas.cols() != w.cols {
        return Err(Error::Dimension(format!(
            "measurement {}x{} does not match window {}x{}",
            meas.rows(),
            meas.cols(),
            w.rows,
            w.cols
        )));
    }
    if !w.fits_within(support_rows, support_cols) {
        return Err(Error::Dimension(format!(
            "window ({},{})+{}x{} outside {support_rows}x{support_cols} support",
            w.row_offset, w.col_offset, w.rows, w.cols
        )));
    }
    let mut out = ImageGrid::zeros(support_rows, support_cols, meas.channels());
    out.peak = meas.peak;
    for c in 0..meas.channels() {
        let src = meas.plane(c);
        let dst = out.plane_mut(c);
        for r in 0..w.rows {
            let d0 = (w.row_offset + r) * support_cols + w.col_offset;
            let s0 = r * w.cols;
            dst[d0..d0 + w.cols].copy_from_slice(&src[s0..s0 + w.cols]);
        }
    }
    Ok(out)
}
