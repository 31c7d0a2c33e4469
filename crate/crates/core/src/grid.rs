//! Uniform periodic velocity-space grid, real fields and their DFT images,
//! spectral differentiation, quadrature, moments and weighted norms.
//!
//! The box is `[-L/2, L/2)^d` with `N` points per axis, `v_k = -L/2 + k·h`,
//! `h = L/N`. Quadrature is the plain `h^d` Riemann sum, which is the
//! trapezoid rule on a periodic grid and spectrally accurate for smooth
//! box-supported integrands.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::multiindex::MultiIndex;

/// Periodic velocity grid descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityGrid {
    dim: usize,
    n: usize,
    edge: f64,
}

impl VelocityGrid {
    pub fn new(dim: usize, n: usize, edge: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::GridConfig(format!(
                "N = {n} must be a power of two with N >= 8"
            )));
        }
        if !(edge > 0.0) || !edge.is_finite() {
            return Err(Error::GridConfig(format!("L = {edge} must be positive")));
        }
        Ok(Self { dim, n, edge })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.n
    }

    /// Box edge length L.
    pub fn edge(&self) -> f64 {
        self.edge
    }

    /// Grid spacing h = L/N.
    pub fn spacing(&self) -> f64 {
        self.edge / self.n as f64
    }

    /// Total number of grid points N^d.
    pub fn size(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Quadrature weight h^d.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dim]
    }

    /// Coordinate along one axis for index `k`.
    pub fn coord(&self, k: usize) -> f64 {
        -0.5 * self.edge + k as f64 * self.spacing()
    }

    /// Velocity at a flat row-major index; the third slot is 0 for d = 2.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = self.coord(rest % self.n);
            rest /= self.n;
        }
        out
    }

    /// |v|^2 at a flat index.
    pub fn radius2(&self, flat: usize) -> f64 {
        let p = self.point(flat);
        p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    }

    /// Integer frequency for DFT index `k`, in `[-N/2, N/2)`.
    pub fn freq(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// Signed wavenumber 2π·freq/L for DFT index `k`.
    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.freq(k) as f64 / self.edge
    }
}

/// Real scalar field sampled on a [`VelocityGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: VelocityGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: VelocityGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.size()],
        }
    }

    pub fn from_values(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::GridConfig(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: VelocityGrid, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let values = (0..grid.size()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> VelocityGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// self + c * other
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// DFT image of a field; unnormalized forward coefficients in row-major
/// frequency order (index `k` maps to integer frequency via [`VelocityGrid::freq`]).
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: VelocityGrid,
    values: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_values(grid: VelocityGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::GridConfig(format!(
                "spectrum length {} does not match grid size {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> VelocityGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Spectral transform/differentiation context for one grid.
pub struct SpectralOps {
    grid: VelocityGrid,
    fft: NdFft,
}

impl SpectralOps {
    pub fn new(grid: VelocityGrid) -> Self {
        Self {
            grid,
            fft: NdFft::new(&grid.shape()),
        }
    }

    pub fn grid(&self) -> VelocityGrid {
        self.grid
    }

    pub fn forward(&self, f: &Field) -> SpectralField {
        debug_assert_eq!(f.grid, self.grid);
        let mut data: Vec<Complex64> = f
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.fft.forward(&mut data);
        SpectralField {
            grid: self.grid,
            values: data,
        }
    }

    pub fn inverse(&self, s: &SpectralField) -> Field {
        let mut data = s.values.clone();
        self.fft.inverse(&mut data);
        Field {
            grid: self.grid,
            values: data.iter().map(|z| z.re).collect(),
        }
    }

    /// Per-axis symbol table for ∂^α: `tables[axis][k]` is the factor applied
    /// to frequency index `k`. Odd orders vanish on the Nyquist line so that
    /// derivatives of real fields stay real.
    fn derivative_symbols(&self, alpha: &MultiIndex) -> Vec<Vec<Complex64>> {
        let n = self.grid.points();
        (0..self.grid.dim())
            .map(|axis| {
                let ord = alpha.component(axis);
                (0..n)
                    .map(|k| {
                        if ord == 0 {
                            return Complex64::new(1.0, 0.0);
                        }
                        if ord % 2 == 1 && self.grid.freq(k) == -(n as i64) / 2 {
                            return Complex64::new(0.0, 0.0);
                        }
                        Complex64::new(0.0, self.grid.wavenumber(k)).powu(ord)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn check_order(&self, alpha: &MultiIndex) -> Result<()> {
        let limit = self.grid.points() / 4;
        if alpha.order() > limit {
            return Err(Error::DerivativeOrder {
                order: alpha.order(),
                limit,
            });
        }
        Ok(())
    }

    /// Multiply a spectrum by the ∂^α symbol.
    pub fn derivative_spectrum(
        &self,
        s: &SpectralField,
        alpha: &MultiIndex,
    ) -> Result<SpectralField> {
        self.check_order(alpha)?;
        let tables = self.derivative_symbols(alpha);
        let n = self.grid.points();
        let mut values = s.values.clone();
        match self.grid.dim() {
            2 => {
                for i in 0..n {
                    let fi = tables[0][i];
                    let row = &mut values[i * n..(i + 1) * n];
                    for (j, z) in row.iter_mut().enumerate() {
                        *z *= fi * tables[1][j];
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let fij = tables[0][i] * tables[1][j];
                        let base = (i * n + j) * n;
                        for (k, z) in values[base..base + n].iter_mut().enumerate() {
                            *z *= fij * tables[2][k];
                        }
                    }
                }
            }
        }
        Ok(SpectralField {
            grid: self.grid,
            values,
        })
    }

    /// ∂^α f as a physical field.
    pub fn derivative(&self, f: &Field, alpha: &MultiIndex) -> Result<Field> {
        let hat = self.forward(f);
        let dhat = self.derivative_spectrum(&hat, alpha)?;
        Ok(self.inverse(&dhat))
    }

    /// Two derivatives of the same spectrum with one inverse transform:
    /// the packed inverse of `∂^α1 f + i ∂^α2 f` splits into real and
    /// imaginary parts because both derivatives of a real field are real.
    pub fn derivative_pair(
        &self,
        s: &SpectralField,
        a1: &MultiIndex,
        a2: &MultiIndex,
    ) -> Result<(Field, Field)> {
        self.check_order(a1)?;
        self.check_order(a2)?;
        let t1 = self.derivative_symbols(a1);
        let t2 = self.derivative_symbols(a2);
        let n = self.grid.points();
        let i_unit = Complex64::new(0.0, 1.0);
        let mut values = s.values.clone();
        match self.grid.dim() {
            2 => {
                for i in 0..n {
                    let (p1, p2) = (t1[0][i], t2[0][i]);
                    let row = &mut values[i * n..(i + 1) * n];
                    for (j, z) in row.iter_mut().enumerate() {
                        *z *= p1 * t1[1][j] + i_unit * p2 * t2[1][j];
                    }
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let (p1, p2) = (t1[0][i] * t1[1][j], t2[0][i] * t2[1][j]);
                        let base = (i * n + j) * n;
                        for (k, z) in values[base..base + n].iter_mut().enumerate() {
                            *z *= p1 * t1[2][k] + i_unit * p2 * t2[2][k];
                        }
                    }
                }
            }
        }
        let mut data = values;
        self.fft_inverse_raw(&mut data);
        let f1 = Field {
            grid: self.grid,
            values: data.iter().map(|z| z.re).collect(),
        };
        let f2 = Field {
            grid: self.grid,
            values: data.iter().map(|z| z.im).collect(),
        };
        Ok((f1, f2))
    }

    fn fft_inverse_raw(&self, data: &mut Vec<Complex64>) {
        self.fft.inverse(data);
    }

    /// Σ_j ∂_j F_j of a real vector field. The first two components ride one
    /// packed forward transform (their spectra are recovered through the
    /// Hermitian split), so d = 2 costs one forward and one inverse FFT.
    pub fn divergence(&self, comps: &[&Field]) -> Result<Field> {
        let d = self.grid.dim();
        if comps.len() != d {
            return Err(Error::GridConfig(format!(
                "divergence needs {d} components, got {}",
                comps.len()
            )));
        }
        let n = self.grid.points();
        // first-order symbol, zeroed on the Nyquist line
        let k_table: Vec<f64> = (0..n)
            .map(|idx| {
                if self.grid.freq(idx) == -(n as i64) / 2 {
                    0.0
                } else {
                    self.grid.wavenumber(idx)
                }
            })
            .collect();
        let mut z: Vec<Complex64> = comps[0]
            .values()
            .iter()
            .zip(comps[1].values())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        self.fft.forward(&mut z);
        let mut div = vec![Complex64::default(); self.grid.size()];
        let i_unit = Complex64::new(0.0, 1.0);
        match d {
            2 => {
                for i in 0..n {
                    let ri = (n - i) % n;
                    for j in 0..n {
                        let rj = (n - j) % n;
                        let zf = z[i * n + j];
                        let zr = z[ri * n + rj].conj();
                        let f1 = 0.5 * (zf + zr);
                        let f2 = -0.5 * i_unit * (zf - zr);
                        div[i * n + j] = i_unit * (k_table[i] * f1 + k_table[j] * f2);
                    }
                }
            }
            _ => {
                let mut y: Vec<Complex64> = comps[2]
                    .values()
                    .iter()
                    .map(|&a| Complex64::new(a, 0.0))
                    .collect();
                self.fft.forward(&mut y);
                for i in 0..n {
                    let ri = (n - i) % n;
                    for j in 0..n {
                        let rj = (n - j) % n;
                        for k in 0..n {
                            let rk = (n - k) % n;
                            let idx = (i * n + j) * n + k;
                            let zf = z[idx];
                            let zr = z[(ri * n + rj) * n + rk].conj();
                            let f1 = 0.5 * (zf + zr);
                            let f2 = -0.5 * i_unit * (zf - zr);
                            div[idx] = i_unit
                                * (k_table[i] * f1 + k_table[j] * f2 + k_table[k] * y[idx]);
                        }
                    }
                }
            }
        }
        self.fft.inverse(&mut div);
        Ok(Field {
            grid: self.grid,
            values: div.iter().map(|v| v.re).collect(),
        })
    }

    /// Relative round-trip defect of forward∘inverse, for invariant checks.
    pub fn round_trip_error(&self, f: &Field) -> f64 {
        let back = self.inverse(&self.forward(f));
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in back.values.iter().zip(&f.values) {
            num = num.max((a - b).abs());
            den = den.max(b.abs());
        }
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Convenience wrapper: ∂^α f with a one-off transform context.
pub fn spectral_derivative(f: &Field, alpha: &MultiIndex) -> Result<Field> {
    SpectralOps::new(f.grid()).derivative(f, alpha)
}

/// Which weighted norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// ∫ f (1+|v|²)^{s/2} dv — not an absolute value; callers feed densities.
    L1s,
    /// ( ∫ f² (1+|v|²)^{s/2} dv )^{1/2}; the weight power `s/2` sits on the
    /// squared integrand.
    L2s,
}

/// Weighted L¹_s / L²_s norm with weight (1+|v|²)^{s/2}.
pub fn weighted_norm(f: &Field, kind: NormKind, s: f64) -> f64 {
    let grid = f.grid();
    let hv = grid.cell_volume();
    let mut acc = 0.0;
    for (i, &v) in f.values().iter().enumerate() {
        let w = (1.0 + grid.radius2(i)).powf(0.5 * s);
        match kind {
            NormKind::L1s => acc += v * w,
            NormKind::L2s => acc += v * v * w,
        }
    }
    match kind {
        NormKind::L1s => hv * acc,
        NormKind::L2s => (hv * acc).sqrt(),
    }
}

/// Mass, mean momentum, kinetic energy ½∫f|v|² and the second-moment matrix
/// P_ij = ∫ f v_i v_j (upper triangle, row-major per [`sym_index`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub second: [f64; 6],
}

/// Index of the (i, j) entry (i ≤ j) in a packed d×d symmetric matrix.
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match dim {
        2 => [[0, 1], [1, 2]][i][j],
        _ => [[0, 1, 2], [1, 3, 4], [2, 4, 5]][i][j],
    }
}

pub fn moments(f: &Field) -> Moments {
    let grid = f.grid();
    let d = grid.dim();
    let mut mass = 0.0;
    let mut momentum = [0.0; 3];
    let mut energy = 0.0;
    let mut second = [0.0; 6];
    for (idx, &v) in f.values().iter().enumerate() {
        let p = grid.point(idx);
        mass += v;
        let mut r2 = 0.0;
        for a in 0..d {
            momentum[a] += v * p[a];
            r2 += p[a] * p[a];
        }
        energy += 0.5 * v * r2;
        for i in 0..d {
            for j in i..d {
                second[sym_index(d, i, j)] += v * p[i] * p[j];
            }
        }
    }
    let hv = grid.cell_volume();
    for m in momentum.iter_mut() {
        *m *= hv;
    }
    for s in second.iter_mut() {
        *s *= hv;
    }
    Moments {
        mass: hv * mass,
        momentum,
        energy: hv * energy,
        second,
    }
}

/// ∫ f log f over cells with f > floor; cells at or below the floor
/// contribute zero.
pub fn entropy(f: &Field, floor: f64) -> f64 {
    debug_assert!(floor > 0.0);
    let hv = f.grid().cell_volume();
    let mut acc = 0.0;
    for &v in f.values() {
        if v > floor {
            acc += v * v.ln();
        }
    }
    hv * acc
}

/// Mass carried by cells with |v| > radius.
pub fn mass_outside(f: &Field, radius: f64) -> f64 {
    let grid = f.grid();
    let r2 = radius * radius;
    let mut acc = 0.0;
    for (i, &v) in f.values().iter().enumerate() {
        if grid.radius2(i) > r2 {
            acc += v;
        }
    }
    acc * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mi(d: usize, c: &[u32]) -> MultiIndex {
        MultiIndex::new(d, c).unwrap()
    }

    fn gaussian_3d(grid: VelocityGrid, sigma2: f64, mass: f64) -> Field {
        let norm = mass / (2.0 * PI * sigma2).powf(1.5);
        Field::from_fn(grid, |p| {
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            norm * (-r2 / (2.0 * sigma2)).exp()
        })
    }

    #[test]
    fn grid_validation() {
        assert!(VelocityGrid::new(2, 64, 16.0).is_ok());
        assert!(VelocityGrid::new(4, 64, 16.0).is_err());
        assert!(VelocityGrid::new(2, 48, 16.0).is_err());
        assert!(VelocityGrid::new(2, 4, 16.0).is_err());
        assert!(VelocityGrid::new(2, 64, -1.0).is_err());
    }

    #[test]
    fn grid_coordinates() {
        let g = VelocityGrid::new(2, 8, 16.0).unwrap();
        assert_eq!(g.spacing(), 2.0);
        assert_eq!(g.coord(0), -8.0);
        assert_eq!(g.coord(4), 0.0);
        let p = g.point(4 * 8 + 6);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], 4.0);
        assert_eq!(g.freq(0), 0);
        assert_eq!(g.freq(4), -4);
        assert_eq!(g.freq(7), -1);
    }

    #[test]
    fn derivative_of_sine_is_exact() {
        let grid = VelocityGrid::new(3, 16, 8.0).unwrap();
        let l = grid.edge();
        let f = Field::from_fn(grid, |p| (2.0 * PI * p[0] / l).sin());
        let df = spectral_derivative(&f, &mi(3, &[1, 0, 0])).unwrap();
        for (i, &v) in df.values().iter().enumerate() {
            let p = grid.point(i);
            let want = (2.0 * PI / l) * (2.0 * PI * p[0] / l).cos();
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_order_derivative_is_identity() {
        let grid = VelocityGrid::new(2, 16, 4.0).unwrap();
        let f = Field::from_fn(grid, |p| (p[0] + 0.3 * p[1]).sin());
        let df = spectral_derivative(&f, &mi(2, &[0, 0])).unwrap();
        for (a, b) in df.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_second_derivative_matches_hermite_form() {
        let grid = VelocityGrid::new(3, 64, 16.0).unwrap();
        let f = Field::from_fn(grid, |p| {
            (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 2.0).exp()
        });
        let df = spectral_derivative(&f, &mi(3, &[2, 0, 0])).unwrap();
        let mut max_err = 0.0f64;
        for (i, &v) in df.values().iter().enumerate() {
            let p = grid.point(i);
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            let want = (p[0] * p[0] - 1.0) * (-r2 / 2.0).exp();
            max_err = max_err.max((v - want).abs());
        }
        assert!(max_err < 1e-8, "max_err = {max_err}");
    }

    #[test]
    fn derivative_order_guard() {
        let grid = VelocityGrid::new(2, 16, 4.0).unwrap();
        let f = Field::zeros(grid);
        assert!(spectral_derivative(&f, &mi(2, &[5, 0])).is_err());
        assert!(spectral_derivative(&f, &mi(2, &[4, 0])).is_ok());
    }

    #[test]
    fn derivatives_commute() {
        let grid = VelocityGrid::new(2, 32, 8.0).unwrap();
        let f = Field::from_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1])).exp());
        let ops = SpectralOps::new(grid);
        let e1 = mi(2, &[1, 0]);
        let e2 = mi(2, &[0, 1]);
        let both = mi(2, &[1, 1]);
        let d1 = ops.derivative(&f, &e1).unwrap();
        let d12 = ops.derivative(&d1, &e2).unwrap();
        let direct = ops.derivative(&f, &both).unwrap();
        let scale = direct.max_abs();
        for (a, b) in d12.values().iter().zip(direct.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn derivative_pair_matches_single_derivatives() {
        let grid = VelocityGrid::new(2, 32, 8.0).unwrap();
        let f = Field::from_fn(grid, |p| (-(p[0] * p[0] + 2.0 * p[1] * p[1])).exp());
        let ops = SpectralOps::new(grid);
        let hat = ops.forward(&f);
        let a1 = mi(2, &[1, 0]);
        let a2 = mi(2, &[0, 2]);
        let (g1, g2) = ops.derivative_pair(&hat, &a1, &a2).unwrap();
        let w1 = ops.derivative(&f, &a1).unwrap();
        let w2 = ops.derivative(&f, &a2).unwrap();
        for (a, b) in g1.values().iter().zip(w1.values()) {
            assert!((a - b).abs() < 1e-11);
        }
        for (a, b) in g2.values().iter().zip(w2.values()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn parseval_identity() {
        let grid = VelocityGrid::new(2, 32, 8.0).unwrap();
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let f = Field::from_values(grid, (0..grid.size()).map(|_| next()).collect()).unwrap();
        let ops = SpectralOps::new(grid);
        let hat = ops.forward(&f);
        let physical: f64 =
            grid.cell_volume() * f.values().iter().map(|v| v * v).sum::<f64>();
        let nd = grid.size() as f64;
        let spectral: f64 = grid.edge().powi(grid.dim() as i32) / (nd * nd)
            * hat.values().iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((physical - spectral).abs() < 1e-12 * physical.abs());
    }

    #[test]
    fn round_trip_is_tight() {
        let grid = VelocityGrid::new(3, 16, 4.0).unwrap();
        let f = Field::from_fn(grid, |p| (p[0] * 1.3 + p[1] * 0.7 - p[2]).cos());
        let ops = SpectralOps::new(grid);
        let tol = 10.0 * f64::EPSILON * grid.size() as f64;
        assert!(ops.round_trip_error(&f) < tol);
    }

    #[test]
    fn gaussian_norms_and_moments() {
        let grid = VelocityGrid::new(3, 64, 16.0).unwrap();
        let f = gaussian_3d(grid, 1.0, 1.0);

        let m0 = weighted_norm(&f, NormKind::L1s, 0.0);
        assert!((m0 - 1.0).abs() < 1e-8);

        // ∫ e^{-|v|²} dv = π^{3/2} so the plain L² norm of e^{-|v|²/2} is π^{3/4}
        let g = Field::from_fn(grid, |p| {
            (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 2.0).exp()
        });
        let l2 = weighted_norm(&g, NormKind::L2s, 0.0);
        assert!((l2 - PI.powf(0.75)).abs() < 1e-8, "l2 = {l2}");

        let z = Field::zeros(grid);
        assert_eq!(weighted_norm(&z, NormKind::L1s, 2.0), 0.0);
        assert_eq!(weighted_norm(&z, NormKind::L2s, 1.0), 0.0);

        let mom = moments(&f);
        assert!((mom.mass - 1.0).abs() < 1e-8);
        assert!(mom.momentum.iter().all(|m| m.abs() < 1e-10));
        assert!((mom.energy - 1.5).abs() < 1e-8);
        for i in 0..3 {
            for j in i..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((mom.second[sym_index(3, i, j)] - want).abs() < 1e-8);
            }
        }

        let zero_m = moments(&Field::zeros(grid));
        assert_eq!(zero_m.mass, 0.0);
        assert_eq!(zero_m.energy, 0.0);
    }

    #[test]
    fn shifted_gaussian_moments() {
        let grid = VelocityGrid::new(3, 64, 16.0).unwrap();
        let norm = 1.0 / (2.0 * PI).powf(1.5);
        let f = Field::from_fn(grid, |p| {
            let dx = p[0] - 1.0;
            norm * (-(dx * dx + p[1] * p[1] + p[2] * p[2]) / 2.0).exp()
        });
        let mom = moments(&f);
        assert!((mom.momentum[0] - 1.0).abs() < 1e-8);
        assert!(mom.momentum[1].abs() < 1e-10);
        assert!((mom.energy - 2.0).abs() < 1e-8);
    }

    #[test]
    fn weighted_norm_monotone_in_s() {
        let grid = VelocityGrid::new(2, 32, 8.0).unwrap();
        let f = Field::from_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1])).exp());
        let n0 = weighted_norm(&f, NormKind::L2s, 0.0);
        let n1 = weighted_norm(&f, NormKind::L2s, 1.0);
        let n2 = weighted_norm(&f, NormKind::L2s, 2.0);
        assert!(n0 <= n1 && n1 <= n2);
    }

    #[test]
    fn gaussian_entropy() {
        let grid = VelocityGrid::new(3, 64, 16.0).unwrap();
        let f = gaussian_3d(grid, 1.0, 1.0);
        let want = -1.5 * (2.0 * PI).ln() - 1.5;
        let got = entropy(&f, 1e-30);
        assert!((got - want).abs() < 1e-4, "got {got}, want {want}");

        assert_eq!(entropy(&Field::zeros(grid), 1e-30), 0.0);

        // uniform density c with c·L^d = 1 has entropy log c
        let g2 = VelocityGrid::new(2, 16, 4.0).unwrap();
        let c = 1.0 / 16.0;
        let uni = Field::from_fn(g2, |_| c);
        assert!((entropy(&uni, 1e-30) - c.ln()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_spectral_convergence() {
        // moments of a marginally-resolved Gaussian improve at least 4x per
        // N doubling until saturation
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = VelocityGrid::new(2, n, 12.0).unwrap();
            let f = Field::from_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1]) / 0.08).exp());
            let mass = weighted_norm(&f, NormKind::L1s, 0.0);
            let want = std::f64::consts::PI * 0.08;
            errs.push((mass - want).abs() / want);
        }
        assert!(errs[0] > 4.0 * errs[1], "errs = {errs:?}");
    }

    #[test]
    fn divergence_matches_componentwise_derivatives() {
        for d in [2usize, 3] {
            let grid = VelocityGrid::new(d, 16, 6.0).unwrap();
            let ops = SpectralOps::new(grid);
            let comps: Vec<Field> = (0..d)
                .map(|a| {
                    Field::from_fn(grid, |p| {
                        (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
                            * (p[a] + 0.3 * p[(a + 1) % d])
                    })
                })
                .collect();
            let refs: Vec<&Field> = comps.iter().collect();
            let got = ops.divergence(&refs).unwrap();
            let mut want = Field::zeros(grid);
            for (a, comp) in comps.iter().enumerate() {
                let da = ops.derivative(comp, &MultiIndex::unit(d, a)).unwrap();
                want = want.axpy(1.0, &da);
            }
            let scale = want.max_abs();
            for (g, w) in got.values().iter().zip(want.values()) {
                assert!((g - w).abs() <= 1e-11 * scale);
            }
            // discrete mass of a divergence vanishes identically
            let total: f64 = got.values().iter().sum();
            assert!(total.abs() * grid.cell_volume() < 1e-13 * scale);
        }
    }

    #[test]
    fn mass_outside_radius() {
        let grid = VelocityGrid::new(2, 32, 8.0).unwrap();
        let f = Field::from_fn(grid, |_| 1.0);
        let total = weighted_norm(&f, NormKind::L1s, 0.0);
        let outside = mass_outside(&f, 2.0);
        let inside = total - outside;
        // area of the disk r <= 2 vs the box, crude but bounded
        assert!(inside > 0.8 * std::f64::consts::PI * 4.0);
        assert!(inside < 1.2 * std::f64::consts::PI * 4.0);
    }
}
