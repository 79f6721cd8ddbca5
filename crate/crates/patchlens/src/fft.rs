//! Zero-padded 2D FFT plumbing.
//!
//! Convention used throughout the crate: unnormalized forward transform,
//! `1/(rows*cols)` scaling on the inverse. Linear convolution is realized by
//! zero-padding both operands to the full support size before transforming,
//! so circular wraparound never aliases into the sensor window.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::grid::ImageGrid;
use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// A complex frequency-domain raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "spectrum data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Spectrum) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Pointwise (Hadamard) product with another spectrum of the same shape.
    pub fn hadamard(&self, other: &Spectrum) -> Result<Spectrum> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "spectrum shapes differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Spectrum {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Sum of squared magnitudes over all bins.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn min_abs(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()))
    }
}

fn fft_rows_inplace(data: &mut [Complex64], cols: usize, dir: FftDirection) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft(cols, dir);
        let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
        for row in data.chunks_exact_mut(cols) {
            fft.process_with_scratch(row, &mut scratch);
        }
    });
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn fft2_complex(mut data: Vec<Complex64>, rows: usize, cols: usize, dir: FftDirection) -> Vec<Complex64> {
    fft_rows_inplace(&mut data, cols, dir);
    let mut t = transpose(&data, rows, cols);
    fft_rows_inplace(&mut t, rows, dir);
    transpose(&t, cols, rows)
}

/// Forward zero-padded 2D DFT of a single-channel plane.
pub(crate) fn fft2_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    pad_rows: usize,
    pad_cols: usize,
) -> Result<Spectrum> {
    if pad_rows < rows || pad_cols < cols {
        return Err(Error::Dimension(format!(
            "pad {pad_rows}x{pad_cols} smaller than image {rows}x{cols}"
        )));
    }
    let mut buf = vec![Complex64::ZERO; pad_rows * pad_cols];
    for r in 0..rows {
        for c in 0..cols {
            buf[r * pad_cols + c] = Complex64::new(plane[r * cols + c], 0.0);
        }
    }
    let data = fft2_complex(buf, pad_rows, pad_cols, FftDirection::Forward);
    Ok(Spectrum {
        rows: pad_rows,
        cols: pad_cols,
        data,
    })
}

/// Forward zero-padded 2D DFT of a single-channel image.
pub fn fft2(img: &ImageGrid, pad_rows: usize, pad_cols: usize) -> Result<Spectrum> {
    if img.channels() != 1 {
        return Err(Error::Dimension(
            "fft2 operates on single-channel grids; transform planes individually".into(),
        ));
    }
    fft2_plane(img.plane(0), img.rows(), img.cols(), pad_rows, pad_cols)
}

fn ifft2_complex(spec: &Spectrum) -> Vec<Complex64> {
    let mut data = fft2_complex(
        spec.data.clone(),
        spec.rows,
        spec.cols,
        FftDirection::Inverse,
    );
    let scale = 1.0 / (spec.rows * spec.cols) as f64;
    for z in &mut data {
        *z *= scale;
    }
    data
}

/// Inverse 2D DFT of a spectrum known to come from a real-valued origin.
///
/// The imaginary residue is discarded after checking that it stays below
/// `1e-9` of the largest real magnitude; a larger residue means the input was
/// not conjugate-symmetric and is reported as a numeric error.
pub fn ifft2(spec: &Spectrum) -> Result<ImageGrid> {
    let data = ifft2_complex(spec);
    let max_re = data.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let max_im = data.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    if max_im > 1e-9 * max_re {
        return Err(Error::Numeric(format!(
            "inverse transform has imaginary residue {max_im:.3e} vs real peak {max_re:.3e}; \
             input spectrum is not conjugate-symmetric"
        )));
    }
    let re: Vec<f64> = data.iter().map(|z| z.re).collect();
    ImageGrid::from_plane(spec.rows, spec.cols, re)
}

/// Inverse 2D DFT keeping only the real part, with no symmetry check.
///
/// Used where the spectrum is a product with a freely parameterized kernel and
/// the caller accepts the real-part projection.
pub fn ifft2_real(spec: &Spectrum) -> Vec<f64> {
    ifft2_complex(spec).iter().map(|z| z.re).collect()
}
