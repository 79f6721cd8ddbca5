//! Scene partition into a grid of patches with overlap-extended rectangles
//! and partition-of-unity blend weights.
//!
//! Nominal rectangles tile the scene exactly (remainder pixels go to the last
//! row/column of patches). Extended rectangles reach past each interior edge
//! so that two neighbors share an overlap zone `overlap` pixels wide; blend
//! weights ramp linearly across that zone, separably per axis, and are then
//! normalized per pixel so the weights of all patches sum to exactly one
//! everywhere.

use crate::{Error, Result};

/// Half-open pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Rect {
    pub fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn cols(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }
}

/// A `by x bx` partition of a scene with per-patch blend weights.
///
/// Patches are indexed row-major: patch `(pr, pc)` has flat index
/// `pr * bx + pc`.
#[derive(Debug, Clone)]
pub struct PatchLayout {
    bx: usize,
    by: usize,
    overlap: usize,
    scene_rows: usize,
    scene_cols: usize,
    nominal: Vec<Rect>,
    extended: Vec<Rect>,
    /// Per-patch blend weights over the extended rectangle, normalized so all
    /// patches covering a pixel sum to 1 there.
    weights: Vec<Vec<f64>>,
}

/// One-dimensional nominal segments: even split, remainder to the last one.
fn split_axis(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts)
        .map(|i| {
            let lo = i * base;
            let hi = if i + 1 == parts { len } else { lo + base };
            (lo, hi)
        })
        .collect()
}

/// Trapezoid profile along one axis: 1 in the interior, linear ramps across
/// the `overlap`-wide zones straddling interior nominal edges.
fn axis_profile(x: usize, n0: usize, n1: usize, axis_len: usize, overlap: usize) -> f64 {
    if overlap == 0 {
        return 1.0;
    }
    let ov = overlap as f64;
    let mut w = 1.0;
    if n0 > 0 {
        // ascending ramp over [n0 - overlap/2, n0 - overlap/2 + overlap)
        let z0 = n0 as f64 - (overlap / 2) as f64;
        let t = x as f64 - z0;
        if t < ov {
            w *= (t + 0.5) / ov;
        }
    }
    if n1 < axis_len {
        // descending ramp over [n1 - overlap/2, n1 - overlap/2 + overlap)
        let z0 = n1 as f64 - (overlap / 2) as f64;
        let t = x as f64 - z0;
        if t >= 0.0 {
            w *= (ov - t - 0.5) / ov;
        }
    }
    debug_assert!(w > 0.0 && w <= 1.0);
    w
}

impl PatchLayout {
    /// Builds the partition for a `scene_rows x scene_cols` scene with `bx`
    /// patches across and `by` patches down, sharing `overlap`-pixel zones.
    pub fn new(
        scene_rows: usize,
        scene_cols: usize,
        bx: usize,
        by: usize,
        overlap: usize,
    ) -> Result<Self> {
        if bx == 0 || by == 0 {
            return Err(Error::Config("patch counts must be at least 1".into()));
        }
        if by > scene_rows || bx > scene_cols {
            return Err(Error::Config(format!(
                "cannot split {scene_rows}x{scene_cols} scene into {by}x{bx} patches"
            )));
        }
        let row_segs = split_axis(scene_rows, by);
        let col_segs = split_axis(scene_cols, bx);

        let ext_lo = overlap / 2; // extension past a leading interior edge
        let ext_hi = overlap - overlap / 2; // extension past a trailing interior edge

        let mut nominal = Vec::with_capacity(bx * by);
        let mut extended = Vec::with_capacity(bx * by);
        for &(r0, r1) in &row_segs {
            for &(c0, c1) in &col_segs {
                nominal.push(Rect { r0, c0, r1, c1 });
                extended.push(Rect {
                    r0: r0.saturating_sub(if r0 > 0 { ext_lo } else { 0 }),
                    c0: c0.saturating_sub(if c0 > 0 { ext_lo } else { 0 }),
                    r1: if r1 < scene_rows {
                        (r1 + ext_hi).min(scene_rows)
                    } else {
                        r1
                    },
                    c1: if c1 < scene_cols {
                        (c1 + ext_hi).min(scene_cols)
                    } else {
                        c1
                    },
                });
            }
        }

        // Raw separable weights, then per-pixel normalization to an exact
        // partition of unity (needed where clipping or very small patches
        // distort the ramps).
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(nominal.len());
        let mut total = vec![0.0f64; scene_rows * scene_cols];
        for b in 0..nominal.len() {
            let (nom, ext) = (nominal[b], extended[b]);
            let mut w = Vec::with_capacity(ext.area());
            for r in ext.r0..ext.r1 {
                let wr = axis_profile(r, nom.r0, nom.r1, scene_rows, overlap);
                for c in ext.c0..ext.c1 {
                    let wc = axis_profile(c, nom.c0, nom.c1, scene_cols, overlap);
                    let v = wr * wc;
                    w.push(v);
                    total[r * scene_cols + c] += v;
                }
            }
            raw.push(w);
        }
        let mut weights = raw;
        for b in 0..nominal.len() {
            let ext = extended[b];
            let w = &mut weights[b];
            let mut k = 0;
            for r in ext.r0..ext.r1 {
                for c in ext.c0..ext.c1 {
                    w[k] /= total[r * scene_cols + c];
                    k += 1;
                }
            }
        }

        Ok(Self {
            bx,
            by,
            overlap,
            scene_rows,
            scene_cols,
            nominal,
            extended,
            weights,
        })
    }

    pub fn bx(&self) -> usize {
        self.bx
    }

    pub fn by(&self) -> usize {
        self.by
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn scene_rows(&self) -> usize {
        self.scene_rows
    }

    pub fn scene_cols(&self) -> usize {
        self.scene_cols
    }

    pub fn n_patches(&self) -> usize {
        self.bx * self.by
    }

    pub fn nominal(&self, b: usize) -> Rect {
        self.nominal[b]
    }

    pub fn extended(&self, b: usize) -> Rect {
        self.extended[b]
    }

    /// Blend weights over `extended(b)`, row-major.
    pub fn weights(&self, b: usize) -> &[f64] {
        &self.weights[b]
    }

    /// Flat index of the patch whose nominal rectangle owns `(r, c)`.
    pub fn owner(&self, r: usize, c: usize) -> usize {
        // Nominal segments are uniform except the last one takes remainder.
        let base_r = self.scene_rows / self.by;
        let base_c = self.scene_cols / self.bx;
        let pr = (r / base_r).min(self.by - 1);
        let pc = (c / base_c).min(self.bx - 1);
        pr * self.bx + pc
    }

    /// True when `other` describes the same partition geometry.
    pub fn same_geometry(&self, other: &PatchLayout) -> bool {
        self.bx == other.bx
            && self.by == other.by
            && self.overlap == other.overlap
            && self.scene_rows == other.scene_rows
            && self.scene_cols == other.scene_cols
    }
}
