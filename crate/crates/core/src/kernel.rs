//! Pointwise collision kernel `(a, b, c)` and FFT assembly of the convolved
//! coefficient fields `(ā, b̄, c̄)`, with ellipticity and coefficient-growth
//! diagnostics.
//!
//! The kernel components grow polynomially, so they are truncated at radius
//! `r_trunc` and convolved with the density by zero-padded DFTs of size `2N`
//! per axis: exact linear convolution of the truncated kernel, no circular
//! aliasing. Derivatives of coefficient fields are assembled by convolving
//! the kernel with the spectral derivative of `f` (the derivative falls on
//! the smooth, box-supported factor), which keeps them clean of the
//! periodization kinks the raw coefficient fields have at the box boundary.

use std::sync::Mutex;

use rustfft::num_complex::Complex64;

use crate::eigen;
use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::grid::{sym_index, Field, SpectralOps, VelocityGrid};
use crate::multiindex::MultiIndex;

/// Kernel exponent and truncation radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub gamma: f64,
    pub dim: usize,
    pub r_trunc: f64,
}

impl KernelParams {
    pub fn new(gamma: f64, dim: usize, r_trunc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Domain(format!(
                "gamma = {gamma} outside [0, 1] (Maxwellian molecules or hard potentials only)"
            )));
        }
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if !(r_trunc > 0.0) {
            return Err(Error::Domain(format!("r_trunc = {r_trunc} must be positive")));
        }
        Ok(Self { gamma, dim, r_trunc })
    }

    /// Default truncation radius for a grid: half the box edge, which covers
    /// every physical pair when the density stays inside |v| <= L/4.
    pub fn for_grid(gamma: f64, grid: &VelocityGrid) -> Result<Self> {
        Self::new(gamma, grid.dim(), 0.5 * grid.edge())
    }

    pub fn validate_against(&self, grid: &VelocityGrid) -> Result<()> {
        if self.dim != grid.dim() {
            return Err(Error::Dimension(self.dim));
        }
        if self.r_trunc < 0.5 * grid.edge() {
            return Err(Error::GridConfig(format!(
                "r_trunc = {} below L/2 = {}",
                self.r_trunc,
                0.5 * grid.edge()
            )));
        }
        Ok(())
    }
}

/// Pointwise kernel: the projection matrix `a_ij = (δ_ij - w_i w_j/|w|²)|w|^{γ+2}`
/// (packed upper triangle), its divergence `b_i = (1-d)|w|^γ w_i` and the
/// double divergence `c = (1-d)(d+γ)|w|^γ`, with the removable singularities
/// `a(0) = 0`, `b(0) = 0` and, for γ = 0, `|0|⁰ := 1` in `c`.
pub fn kernel_eval(w: &[f64; 3], params: &KernelParams) -> ([f64; 6], [f64; 3], f64) {
    let d = params.dim;
    let gamma = params.gamma;
    let r2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let mut a = [0.0; 6];
    let mut b = [0.0; 3];
    let c;
    if r2 == 0.0 {
        c = if gamma == 0.0 {
            (1.0 - d as f64) * (d as f64 + gamma)
        } else {
            0.0
        };
        return (a, b, c);
    }
    let r_gamma = if gamma == 0.0 { 1.0 } else { r2.powf(0.5 * gamma) };
    let r_gamma2 = r_gamma * r2; // |w|^{γ+2}
    for i in 0..d {
        for j in i..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            a[sym_index(d, i, j)] = (delta - w[i] * w[j] / r2) * r_gamma2;
        }
    }
    let bf = (1.0 - d as f64) * r_gamma;
    for i in 0..d {
        b[i] = bf * w[i];
    }
    c = (1.0 - d as f64) * (d as f64 + gamma) * r_gamma;
    (a, b, c)
}

/// Convolved coefficient fields on a grid: per-point symmetric matrix ā
/// (packed components), vector b̄ and scalar c̄.
#[derive(Debug, Clone)]
pub struct CoefficientFields {
    grid: VelocityGrid,
    gamma: f64,
    abar: Vec<Vec<f64>>,
    bbar: Vec<Vec<f64>>,
    cbar: Vec<f64>,
}

impl CoefficientFields {
    pub fn zeros(grid: VelocityGrid, gamma: f64) -> Self {
        let d = grid.dim();
        Self {
            grid,
            gamma,
            abar: vec![vec![0.0; grid.size()]; d * (d + 1) / 2],
            bbar: vec![vec![0.0; grid.size()]; d],
            cbar: vec![0.0; grid.size()],
        }
    }

    pub fn grid(&self) -> VelocityGrid {
        self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// ā component (i, j) as a flat slice.
    pub fn abar(&self, i: usize, j: usize) -> &[f64] {
        &self.abar[sym_index(self.grid.dim(), i, j)]
    }

    pub fn bbar(&self, j: usize) -> &[f64] {
        &self.bbar[j]
    }

    pub fn cbar(&self) -> &[f64] {
        &self.cbar
    }

    /// Packed symmetric ā at one grid point (d = 2 uses the first 3 slots).
    pub fn abar_packed(&self, idx: usize) -> [f64; 6] {
        let mut m = [0.0; 6];
        for (slot, comp) in self.abar.iter().enumerate() {
            m[slot] = comp[idx];
        }
        m
    }

    pub fn lambda_min_at(&self, idx: usize) -> f64 {
        eigen::lambda_min(self.grid.dim(), &self.abar_packed(idx))
    }

    pub fn lambda_max_at(&self, idx: usize) -> f64 {
        eigen::lambda_max(self.grid.dim(), &self.abar_packed(idx))
    }

    /// Largest ā eigenvalue over the whole grid (the diffusion scale that
    /// controls explicit stability).
    pub fn lambda_max_global(&self) -> f64 {
        (0..self.grid.size())
            .map(|i| self.lambda_max_at(i))
            .fold(0.0, f64::max)
    }

    /// Largest |b̄| over the whole grid.
    pub fn max_bbar_norm(&self) -> f64 {
        let d = self.grid.dim();
        (0..self.grid.size())
            .map(|i| {
                (0..d)
                    .map(|j| self.bbar[j][i] * self.bbar[j][i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.abar
            .iter()
            .chain(self.bbar.iter())
            .all(|c| c.iter().all(|v| v.is_finite()))
            && self.cbar.iter().all(|v| v.is_finite())
    }

    /// α·self + β·other, for linearity checks.
    pub fn linear_combination(&self, alpha: f64, beta: f64, other: &CoefficientFields) -> Self {
        let comb = |x: &Vec<f64>, y: &Vec<f64>| -> Vec<f64> {
            x.iter().zip(y).map(|(a, b)| alpha * a + beta * b).collect()
        };
        Self {
            grid: self.grid,
            gamma: self.gamma,
            abar: self
                .abar
                .iter()
                .zip(&other.abar)
                .map(|(x, y)| comb(x, y))
                .collect(),
            bbar: self
                .bbar
                .iter()
                .zip(&other.bbar)
                .map(|(x, y)| comb(x, y))
                .collect(),
            cbar: comb(&self.cbar, &other.cbar),
        }
    }

    pub fn max_component_difference(&self, other: &CoefficientFields) -> f64 {
        let mut m = 0.0f64;
        for (x, y) in self.abar.iter().zip(&other.abar) {
            for (a, b) in x.iter().zip(y) {
                m = m.max((a - b).abs());
            }
        }
        for (x, y) in self.bbar.iter().zip(&other.bbar) {
            for (a, b) in x.iter().zip(y) {
                m = m.max((a - b).abs());
            }
        }
        for (a, b) in self.cbar.iter().zip(&other.cbar) {
            m = m.max((a - b).abs());
        }
        m
    }
}

/// FFT-based assembler for the coefficient fields of one grid and one kernel.
/// Kernel spectra are computed once and reused across assemblies.
pub struct CoefficientAssembler {
    grid: VelocityGrid,
    params: KernelParams,
    ops: SpectralOps,
    padded: NdFft,
    kernel_hats: Vec<Vec<Complex64>>,
    pool: Mutex<Vec<Vec<Complex64>>>,
}

/// Smallest 5-smooth transform size at least `need`.
fn fast_size(need: usize) -> usize {
    let mut m = need;
    loop {
        let mut rest = m;
        for p in [2usize, 3, 5] {
            while rest % p == 0 {
                rest /= p;
            }
        }
        if rest == 1 {
            return m;
        }
        m += 1;
    }
}

impl CoefficientAssembler {
    pub fn new(grid: VelocityGrid, params: KernelParams) -> Result<Self> {
        params.validate_against(&grid)?;
        let d = grid.dim();
        let n = grid.points();
        let h = grid.spacing();
        // Per-axis kernel reach in cells. Aliased images on the padded torus
        // of size M >= N + K land at offsets beyond the truncation radius,
        // where the kernel is zero, so the circular convolution is the exact
        // linear one.
        let reach = ((params.r_trunc / h).ceil() as usize).min(n - 1);
        let m = fast_size(n + reach);
        let padded = NdFft::new(&vec![m; d]);
        let r2_max = params.r_trunc * params.r_trunc;

        // offset represented by padded index t, in velocity units
        let offset = |t: usize| -> f64 {
            let o = if t <= m / 2 {
                t as i64
            } else {
                t as i64 - m as i64
            };
            o as f64 * h
        };

        let n_comp = d * (d + 1) / 2 + d + 1;
        let mut kernel_hats = Vec::with_capacity(n_comp);
        for comp in 0..n_comp {
            let mut data = vec![Complex64::default(); padded.len()];
            match d {
                2 => {
                    for t0 in 0..m {
                        let w0 = offset(t0);
                        for t1 in 0..m {
                            let w1 = offset(t1);
                            let w = [w0, w1, 0.0];
                            if w0 * w0 + w1 * w1 <= r2_max {
                                data[t0 * m + t1] =
                                    Complex64::new(component_value(comp, &w, &params), 0.0);
                            }
                        }
                    }
                }
                _ => {
                    for t0 in 0..m {
                        let w0 = offset(t0);
                        for t1 in 0..m {
                            let w1 = offset(t1);
                            for t2 in 0..m {
                                let w2 = offset(t2);
                                let w = [w0, w1, w2];
                                if w0 * w0 + w1 * w1 + w2 * w2 <= r2_max {
                                    data[(t0 * m + t1) * m + t2] = Complex64::new(
                                        component_value(comp, &w, &params),
                                        0.0,
                                    );
                                }
                            }
                        }
                    }
                }
            }
            padded.forward(&mut data);
            kernel_hats.push(data);
        }

        Ok(Self {
            grid,
            params,
            ops: SpectralOps::new(grid),
            padded,
            kernel_hats,
            pool: Mutex::new(Vec::new()),
        })
    }

    pub fn grid(&self) -> VelocityGrid {
        self.grid
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn spectral_ops(&self) -> &SpectralOps {
        &self.ops
    }

    /// Forward spectrum of the zero-padded field.
    fn padded_spectrum(&self, f: &Field) -> Vec<Complex64> {
        let n = self.grid.points();
        let d = self.grid.dim();
        let m = self.padded.shape()[0];
        let mut data = self.lease_cleared();
        match d {
            2 => {
                for i in 0..n {
                    let src = &f.values()[i * n..(i + 1) * n];
                    let dst = &mut data[i * m..i * m + n];
                    for (z, &v) in dst.iter_mut().zip(src) {
                        *z = Complex64::new(v, 0.0);
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let src = &f.values()[(i * n + j) * n..(i * n + j + 1) * n];
                        let base = (i * m + j) * m;
                        for (z, &v) in data[base..base + n].iter_mut().zip(src) {
                            *z = Complex64::new(v, 0.0);
                        }
                    }
                }
            }
        }
        self.padded.forward_corner(&mut data, &vec![n; d]);
        data
    }

    fn lease_raw(&self) -> Vec<Complex64> {
        self.pool
            .lock()
            .unwrap()
            .pop()
            .unwrap_or_else(|| vec![Complex64::default(); self.padded.len()])
    }

    fn lease_cleared(&self) -> Vec<Complex64> {
        let mut buf = self.lease_raw();
        buf.fill(Complex64::default());
        buf
    }

    fn release(&self, buf: Vec<Complex64>) {
        self.pool.lock().unwrap().push(buf);
    }

    /// Convolve one padded spectrum with a pair of kernel components using a
    /// single packed inverse transform; returns the two corner fields scaled
    /// by h^d.
    fn convolve_pair(&self, fhat: &[Complex64], p: usize, q: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.points();
        let d = self.grid.dim();
        let hv = self.grid.cell_volume();
        let i_unit = Complex64::new(0.0, 1.0);
        let hat_p = &self.kernel_hats[p];
        let mut work = self.lease_raw();
        match q {
            Some(q) => {
                let hat_q = &self.kernel_hats[q];
                for (w, (f, (kp, kq))) in work
                    .iter_mut()
                    .zip(fhat.iter().zip(hat_p.iter().zip(hat_q)))
                {
                    *w = f * (kp + i_unit * kq);
                }
            }
            None => {
                for (w, (f, kp)) in work.iter_mut().zip(fhat.iter().zip(hat_p)) {
                    *w = f * kp;
                }
            }
        }
        self.padded.inverse_to_corner(&mut work, &vec![n; d]);
        let m = self.padded.shape()[0];
        let mut out_p = vec![0.0; self.grid.size()];
        let mut out_q = vec![0.0; if q.is_some() { self.grid.size() } else { 0 }];
        match d {
            2 => {
                for i in 0..n {
                    let row = &work[i * m..i * m + n];
                    let dst_p = &mut out_p[i * n..(i + 1) * n];
                    for (o, z) in dst_p.iter_mut().zip(row) {
                        *o = z.re * hv;
                    }
                    if q.is_some() {
                        let dst_q = &mut out_q[i * n..(i + 1) * n];
                        for (o, z) in dst_q.iter_mut().zip(row) {
                            *o = z.im * hv;
                        }
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let row = &work[(i * m + j) * m..(i * m + j) * m + n];
                        let base = (i * n + j) * n;
                        let dst_p = &mut out_p[base..base + n];
                        for (o, z) in dst_p.iter_mut().zip(row) {
                            *o = z.re * hv;
                        }
                        if q.is_some() {
                            let dst_q = &mut out_q[base..base + n];
                            for (o, z) in dst_q.iter_mut().zip(row) {
                                *o = z.im * hv;
                            }
                        }
                    }
                }
            }
        }
        self.release(work);
        (out_p, out_q)
    }

    fn assemble_from_padded(&self, fhat: &[Complex64]) -> CoefficientFields {
        let d = self.grid.dim();
        let n_a = d * (d + 1) / 2;
        let n_comp = n_a + d + 1;
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(n_comp);
        let mut comp = 0;
        while comp < n_comp {
            if comp + 1 < n_comp {
                let (x, y) = self.convolve_pair(fhat, comp, Some(comp + 1));
                comps.push(x);
                comps.push(y);
                comp += 2;
            } else {
                let (x, _) = self.convolve_pair(fhat, comp, None);
                comps.push(x);
                comp += 1;
            }
        }
        let cbar = comps.pop().expect("component count");
        let bbar = comps.split_off(n_a);
        CoefficientFields {
            grid: self.grid,
            gamma: self.params.gamma,
            abar: comps,
            bbar,
            cbar,
        }
    }

    /// The convolved coefficients `ā = a*f`, `b̄ = b*f`, `c̄ = c*f`.
    pub fn assemble(&self, f: &Field) -> Result<CoefficientFields> {
        if f.grid() != self.grid {
            return Err(Error::GridConfig(
                "field grid does not match assembler grid".to_string(),
            ));
        }
        let fhat = self.padded_spectrum(f);
        let out = self.assemble_from_padded(&fhat);
        self.release(fhat);
        Ok(out)
    }

    /// Derivatives of the coefficient fields, assembled as kernel * ∂^β f
    /// (the derivative falls on the density factor of the convolution).
    pub fn assemble_derivative(&self, f: &Field, beta: &MultiIndex) -> Result<CoefficientFields> {
        if beta.order() == 0 {
            return self.assemble(f);
        }
        let limit = self.grid.points() / 8;
        if beta.order() > limit {
            return Err(Error::DerivativeOrder {
                order: beta.order(),
                limit,
            });
        }
        let df = self.ops.derivative(f, beta)?;
        let fhat = self.padded_spectrum(&df);
        let out = self.assemble_from_padded(&fhat);
        self.release(fhat);
        Ok(out)
    }
}

fn component_value(comp: usize, w: &[f64; 3], params: &KernelParams) -> f64 {
    let d = params.dim;
    let n_a = d * (d + 1) / 2;
    let (a, b, c) = kernel_eval(w, params);
    if comp < n_a {
        a[comp]
    } else if comp < n_a + d {
        b[comp - n_a]
    } else {
        c
    }
}

/// Measured ellipticity constant: the minimum over masked grid points of
/// `λ_min(ā(v)) / (1+|v|²)^{γ/2}`. The mask keeps |v| <= mask_radius, away
/// from the truncation-polluted box boundary.
pub fn ellipticity_constant(coeffs: &CoefficientFields, gamma: f64, mask_radius: f64) -> f64 {
    let grid = coeffs.grid();
    let r2 = mask_radius * mask_radius;
    let mut k_hat = f64::INFINITY;
    for idx in 0..grid.size() {
        if grid.radius2(idx) <= r2 {
            let weight = (1.0 + grid.radius2(idx)).powf(0.5 * gamma);
            k_hat = k_hat.min(coeffs.lambda_min_at(idx) / weight);
        }
    }
    if k_hat.is_finite() {
        k_hat
    } else {
        0.0
    }
}

/// Which coefficient field a growth-ratio query targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthTarget {
    Abar11,
    Cbar,
}

/// Max over masked points of `|∂^β field| / (1+|v|²)^{γ/2}` — the measurable
/// counterpart of the weighted derivative bounds on ā and c̄.
pub fn coefficient_growth_ratio(
    assembler: &CoefficientAssembler,
    f: &Field,
    beta: &MultiIndex,
    target: GrowthTarget,
    mask_radius: f64,
) -> Result<f64> {
    let coeffs = assembler.assemble_derivative(f, beta)?;
    let grid = coeffs.grid();
    let gamma = assembler.params().gamma;
    let values = match target {
        GrowthTarget::Abar11 => coeffs.abar(0, 0),
        GrowthTarget::Cbar => coeffs.cbar(),
    };
    let r2 = mask_radius * mask_radius;
    let mut best = 0.0f64;
    for (idx, &v) in values.iter().enumerate() {
        if grid.radius2(idx) <= r2 {
            let weight = (1.0 + grid.radius2(idx)).powf(0.5 * gamma);
            best = best.max(v.abs() / weight);
        }
    }
    Ok(best)
}
