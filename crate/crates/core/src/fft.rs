//! Row-major complex FFTs in two and three dimensions with cached plans.
//!
//! Multi-dimensional transforms are built from 1-D row passes separated by
//! transposes (2-D) or axis rotations (3-D), so every pass runs on contiguous
//! rows and parallelises safely. Forward transforms are plain unnormalized
//! sums; inverses carry the `1/N^d` factor.
//!
//! The `*_corner` variants serve the zero-padded linear convolution: input
//! data occupies the low corner of a doubled box, and row passes skip lines
//! that are identically zero (forward) or never read (inverse).

use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

const TILE: usize = 32;

pub struct NdFft {
    shape: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    spare: Mutex<Vec<Vec<Complex64>>>,
}

impl NdFft {
    pub fn new(shape: &[usize]) -> Self {
        assert!(shape.len() == 2 || shape.len() == 3, "dim must be 2 or 3");
        let mut planner = FftPlanner::new();
        let fwd = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            shape: shape.to_vec(),
            fwd,
            inv,
            spare: Mutex::new(Vec::new()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take_buffer(&self) -> Vec<Complex64> {
        let mut pool = self.spare.lock().unwrap();
        pool.pop()
            .unwrap_or_else(|| vec![Complex64::default(); self.len()])
    }

    fn put_buffer(&self, buf: Vec<Complex64>) {
        self.spare.lock().unwrap().push(buf);
    }

    /// Forward transform, natural layout in and out.
    pub fn forward(&self, data: &mut Vec<Complex64>) {
        self.transform(data, true, &[], &[]);
    }

    /// Inverse transform (with 1/N^d), natural layout in and out.
    pub fn inverse(&self, data: &mut Vec<Complex64>) {
        self.transform(data, false, &[], &[]);
        let scale = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    /// Forward transform of data supported on the low corner
    /// `[0, corner[k])` along each axis; zero rows are skipped.
    pub fn forward_corner(&self, data: &mut Vec<Complex64>, corner: &[usize]) {
        self.transform(data, true, corner, &[]);
    }

    /// Inverse transform when only the low corner of the result is read.
    /// Rows that cannot influence the corner are skipped and only the corner
    /// block is scaled; entries outside it are unspecified.
    pub fn inverse_to_corner(&self, data: &mut Vec<Complex64>, corner: &[usize]) {
        self.transform(data, false, &[], corner);
        let scale = 1.0 / self.len() as f64;
        match self.shape.len() {
            2 => {
                let n1 = self.shape[1];
                for i in 0..corner[0] {
                    for z in &mut data[i * n1..i * n1 + corner[1]] {
                        *z *= scale;
                    }
                }
            }
            _ => {
                let (n1, n2) = (self.shape[1], self.shape[2]);
                for i in 0..corner[0] {
                    for j in 0..corner[1] {
                        let base = (i * n1 + j) * n2;
                        for z in &mut data[base..base + corner[2]] {
                            *z *= scale;
                        }
                    }
                }
            }
        }
    }

    /// Shared driver. `in_corner` restricts the nonzero input support,
    /// `out_corner` restricts the region of the output that will be read;
    /// either may be empty for "full".
    fn transform(
        &self,
        data: &mut Vec<Complex64>,
        forward: bool,
        in_corner: &[usize],
        out_corner: &[usize],
    ) {
        let plans = if forward { &self.fwd } else { &self.inv };
        let d = self.shape.len();
        let full = |axis: usize| self.shape[axis];
        let ic = |axis: usize| {
            if in_corner.is_empty() {
                full(axis)
            } else {
                in_corner[axis]
            }
        };
        let oc = |axis: usize| {
            if out_corner.is_empty() {
                full(axis)
            } else {
                out_corner[axis]
            }
        };

        if d == 2 {
            let (n0, n1) = (self.shape[0], self.shape[1]);
            // pass over axis 1: rows indexed by i; input support limits rows,
            // output corner cannot (axis-0 mixing happens later).
            fft_rows(&plans[1], data, n1, ic(0));
            let mut buf = self.take_buffer();
            transpose2(data, &mut buf, n0, n1);
            // pass over axis 0 (now contiguous): rows indexed by j; all rows
            // carry input data, but only rows j < oc(1) are ever read back.
            fft_rows(&plans[0], &mut buf, n0, oc(1));
            transpose2(&buf, data, n1, n0);
            self.put_buffer(buf);
        } else {
            let (n0, n1, n2) = (self.shape[0], self.shape[1], self.shape[2]);
            // axis 2 on natural layout: rows (i, j)
            fft_rows_filtered(&plans[2], data, n2, |r| r / n1 < ic(0) && r % n1 < ic(1));
            let mut buf = self.take_buffer();
            rotate3(data, &mut buf, n0, n1, n2);
            // layout (k, i, j): contiguous axis = original 1; rows (k, i)
            fft_rows_filtered(&plans[1], &mut buf, n1, |r| {
                r / n0 < oc(2) && r % n0 < ic(0)
            });
            rotate3(&buf, data, n2, n0, n1);
            // layout (j, k, i): contiguous axis = original 0; rows (j, k)
            fft_rows_filtered(&plans[0], data, n0, |r| {
                r / n2 < oc(1) && r % n2 < oc(2)
            });
            rotate3(data, &mut buf, n1, n2, n0);
            std::mem::swap(data, &mut buf);
            self.put_buffer(buf);
        }
    }
}

/// FFT the first `active` rows of `data` in place. Contiguous active rows
/// are handed to the plan as one batch.
fn fft_rows(plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64], row_len: usize, active: usize) {
    let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
    plan.process_with_scratch(&mut data[..active * row_len], &mut scratch);
}

/// FFT rows selected by a predicate on the row index.
fn fft_rows_filtered<F>(plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64], row_len: usize, keep: F)
where
    F: Fn(usize) -> bool + Sync,
{
    let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
    for (r, row) in data.chunks_mut(row_len).enumerate() {
        if keep(r) {
            plan.process_with_scratch(row, &mut scratch);
        }
    }
}

/// `dst[(j, i)] = src[(i, j)]` for an `n0 x n1` row-major `src`, tiled.
fn transpose2(src: &[Complex64], dst: &mut [Complex64], n0: usize, n1: usize) {
    for j0 in (0..n1).step_by(TILE) {
        let jn = (j0 + TILE).min(n1);
        for i0 in (0..n0).step_by(TILE) {
            let in_ = (i0 + TILE).min(n0);
            for j in j0..jn {
                let row = &mut dst[j * n0..(j + 1) * n0];
                for i in i0..in_ {
                    row[i] = src[i * n1 + j];
                }
            }
        }
    }
}

/// `dst[(k, i, j)] = src[(i, j, k)]`; `src` is `n0 x n1 x n2` row-major,
/// `dst` becomes `n2 x n0 x n1`.
fn rotate3(src: &[Complex64], dst: &mut [Complex64], n0: usize, n1: usize, n2: usize) {
    for (k, plane) in dst.chunks_mut(n0 * n1).enumerate() {
        for i in 0..n0 {
            let out_row = &mut plane[i * n1..(i + 1) * n1];
            let base = i * n1 * n2 + k;
            for (j, z) in out_row.iter_mut().enumerate() {
                *z = src[base + j * n2];
            }
        }
    }
}
