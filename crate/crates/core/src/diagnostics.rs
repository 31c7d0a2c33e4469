//! Measurements along trajectories: conservation records, derivative-norm
//! tables, Gevrey regularity witnesses, the energy-identity decomposition
//! behind the per-order estimates, and the sup-plus-integral trajectory
//! functionals.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{
    entropy, mass_outside, moments, weighted_norm, Field, NormKind, SpectralField, SpectralOps,
};
use crate::kernel::{ellipticity_constant, CoefficientAssembler, CoefficientFields};
use crate::multiindex::{binomial, count_order, enumerate, indices_of_order, MultiIndex};
use crate::solver::SolverState;

/// Conserved quantities and run monitors at one output time.
#[derive(Debug, Clone, Copy)]
pub struct ConservationRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub entropy: f64,
    pub min_f: f64,
    /// Measured ellipticity constant K̂ of the assembled ā.
    pub ellipticity: f64,
    pub mass_outside_mask: f64,
}

pub fn conservation_record(
    state: &SolverState,
    gamma: f64,
    mask_radius: f64,
    entropy_floor: f64,
) -> ConservationRecord {
    let m = moments(&state.f);
    ConservationRecord {
        t: state.t,
        mass: m.mass,
        momentum: m.momentum,
        energy: m.energy,
        entropy: entropy(&state.f, entropy_floor),
        min_f: state.min_f,
        ellipticity: ellipticity_constant(&state.coeffs, gamma, mask_radius),
        mass_outside_mask: mass_outside(&state.f, mask_radius),
    }
}

/// Norm table entry for one multi-index.
#[derive(Debug, Clone)]
pub struct NormTableEntry {
    pub alpha: MultiIndex,
    /// ‖∂^α f‖_{L²}
    pub l2: f64,
    /// ‖∇ ∂^α f‖_{L²_γ}
    pub grad_l2_gamma: f64,
}

/// Exhaustive derivative norms up to a maximal order, plus per-order maxima
/// `d_k = max_{|α|=k} ‖∂^α f‖_{L²}`.
#[derive(Debug, Clone)]
pub struct DerivativeNormTable {
    pub t: f64,
    pub max_order: usize,
    pub entries: Vec<NormTableEntry>,
    pub order_max: Vec<f64>,
}

impl DerivativeNormTable {
    pub fn entries_of_order(&self, k: usize) -> impl Iterator<Item = &NormTableEntry> {
        self.entries.iter().filter(move |e| e.alpha.order() == k)
    }
}

pub fn derivative_norm_table(
    ops: &SpectralOps,
    f: &Field,
    max_order: usize,
    gamma: f64,
    t: f64,
) -> Result<DerivativeNormTable> {
    let grid = f.grid();
    let d = grid.dim();
    let limit = grid.points() / 8;
    if max_order > limit {
        return Err(Error::DerivativeOrder {
            order: max_order,
            limit,
        });
    }
    let fhat = ops.forward(f);
    let mut entries = Vec::new();
    let mut order_max = vec![0.0f64; max_order + 1];
    for k in 0..=max_order {
        for alpha in indices_of_order(d, k)? {
            let dhat = ops.derivative_spectrum(&fhat, &alpha)?;
            let da = ops.inverse(&dhat);
            let l2 = weighted_norm(&da, NormKind::L2s, 0.0);
            // gradient components ride pairwise on packed inverses
            let mut grad_sq = 0.0;
            let mut axis = 0;
            while axis < d {
                if axis + 1 < d {
                    let a1 = alpha.add(&MultiIndex::unit(d, axis));
                    let a2 = alpha.add(&MultiIndex::unit(d, axis + 1));
                    let (g1, g2) = ops.derivative_pair(&fhat, &a1, &a2)?;
                    grad_sq += weighted_norm(&g1, NormKind::L2s, gamma).powi(2);
                    grad_sq += weighted_norm(&g2, NormKind::L2s, gamma).powi(2);
                    axis += 2;
                } else {
                    let a1 = alpha.add(&MultiIndex::unit(d, axis));
                    let g1 = ops.inverse(&ops.derivative_spectrum(&fhat, &a1)?);
                    grad_sq += weighted_norm(&g1, NormKind::L2s, gamma).powi(2);
                    axis += 1;
                }
            }
            order_max[k] = order_max[k].max(l2);
            entries.push(NormTableEntry {
                alpha,
                l2,
                grad_l2_gamma: grad_sq.sqrt(),
            });
        }
    }
    // exhaustiveness: one entry per multi-index of each order
    for (k, _) in order_max.iter().enumerate() {
        debug_assert_eq!(
            entries.iter().filter(|e| e.alpha.order() == k).count() as u64,
            count_order(d, k).unwrap_or(0)
        );
    }
    Ok(DerivativeNormTable {
        t,
        max_order,
        entries,
        order_max,
    })
}

/// Fitted Fourier-decay witness: `log S(r) = A - ĉ·r^{1/σ̂}` over a shell
/// window, with the fit RMS residual.
#[derive(Debug, Clone, Copy)]
pub struct GevreyFit {
    pub sigma_hat: f64,
    pub c_hat: f64,
    pub amplitude: f64,
    pub residual: f64,
    pub window: (usize, usize),
}

/// Shell maxima `S(r) = max_{|ξ| ∈ [r, r+1)} |f̂(ξ)|` for r = 0..N/2, with
/// the continuum normalization h^d·|DFT| so that S(0) ≈ ∫f.
pub fn shell_maxima(spec: &SpectralField) -> Vec<f64> {
    let grid = spec.grid();
    let n = grid.points();
    let d = grid.dim();
    let hv = grid.cell_volume();
    let rmax = n / 2;
    let mut shells = vec![0.0f64; rmax + 1];
    let freq = |idx: usize| grid.freq(idx) as f64;
    match d {
        2 => {
            for i in 0..n {
                let fi = freq(i);
                for j in 0..n {
                    let fj = freq(j);
                    let r = (fi * fi + fj * fj).sqrt();
                    let shell = r.floor() as usize;
                    if shell <= rmax {
                        let mag = spec.values()[i * n + j].norm() * hv;
                        shells[shell] = shells[shell].max(mag);
                    }
                }
            }
        }
        _ => {
            for i in 0..n {
                let fi = freq(i);
                for j in 0..n {
                    let fj = freq(j);
                    for k in 0..n {
                        let fk = freq(k);
                        let r = (fi * fi + fj * fj + fk * fk).sqrt();
                        let shell = r.floor() as usize;
                        if shell <= rmax {
                            let mag = spec.values()[(i * n + j) * n + k].norm() * hv;
                            shells[shell] = shells[shell].max(mag);
                        }
                    }
                }
            }
        }
    }
    shells
}

const SHELL_FLOOR: f64 = 1e-14;
const SIGMA_RANGE: (f64, f64) = (0.3, 6.0);

/// Least-squares fit of `log S(r) = A - c·r^{1/σ}` over `window` (inclusive
/// shell indices), by 1-D search on σ with a linear subfit on (A, c). Shells
/// at or below the floor 1e-14 are clipped from the window.
pub fn fit_shell_decay(shells: &[f64], window: (usize, usize)) -> Result<GevreyFit> {
    let (lo, hi) = window;
    if lo > hi || hi >= shells.len() {
        return Err(Error::FitDegenerate(format!(
            "window [{lo}, {hi}] invalid for {} shells",
            shells.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in lo..=hi {
        if shells[r] > SHELL_FLOOR {
            pts.push((r as f64, shells[r].ln()));
        } else if !pts.is_empty() {
            break; // clip at the first shell under the floor
        }
    }
    if pts.len() < 4 {
        return Err(Error::FitDegenerate(format!(
            "only {} shells above the floor in [{lo}, {hi}]",
            pts.len()
        )));
    }

    let eval = |sigma: f64| -> (f64, f64, f64) {
        // linear LSQ of y = A - c·x with x = r^{1/σ}
        let n = pts.len() as f64;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &(r, y) in &pts {
            let x = r.powf(1.0 / sigma);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            return (f64::INFINITY, 0.0, 0.0);
        }
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;
        let mut rss = 0.0;
        for &(r, y) in &pts {
            let x = r.powf(1.0 / sigma);
            let e = y - (intercept + slope * x);
            rss += e * e;
        }
        ((rss / n).sqrt(), intercept, -slope)
    };

    // coarse bracket then golden-section refinement
    let (s_lo, s_hi) = SIGMA_RANGE;
    let coarse = 120;
    let mut best_idx = 0;
    let mut best_res = f64::INFINITY;
    let sigma_at = |i: usize| s_lo * (s_hi / s_lo).powf(i as f64 / coarse as f64);
    for i in 0..=coarse {
        let (res, _, _) = eval(sigma_at(i));
        if res < best_res {
            best_res = res;
            best_idx = i;
        }
    }
    let mut a = sigma_at(best_idx.saturating_sub(1));
    let mut b = sigma_at((best_idx + 1).min(coarse));
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = eval(x1).0;
    let mut f2 = eval(x2).0;
    for _ in 0..200 {
        if b - a < 1e-12 * b {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = eval(x1).0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = eval(x2).0;
        }
    }
    let sigma = 0.5 * (a + b);
    let (residual, amplitude, c_hat) = eval(sigma);
    if !residual.is_finite() || !(c_hat > 0.0) {
        return Err(Error::FitDegenerate(format!(
            "no decaying fit (c = {c_hat}, residual = {residual})"
        )));
    }
    Ok(GevreyFit {
        sigma_hat: sigma,
        c_hat,
        amplitude,
        residual,
        window: (pts[0].0 as usize, pts[pts.len() - 1].0 as usize),
    })
}

/// Fourier-decay Gevrey witness of a field.
pub fn gevrey_fit_fourier(
    ops: &SpectralOps,
    f: &Field,
    window: (usize, usize),
) -> Result<GevreyFit> {
    let spec = ops.forward(f);
    fit_shell_decay(&shell_maxima(&spec), window)
}

/// Smallest constant C making `‖∂^α f‖ ≤ C^{|α|+1}(|α|!)^σ` hold over the
/// tabulated orders: `Ĉ = max_{1≤k≤m} [d_k/(k!)^σ]^{1/(k+1)}`.
pub fn gevrey_constant_witness(table: &DerivativeNormTable, sigma: f64) -> Result<f64> {
    if table.max_order < 1 {
        return Err(Error::DiagnosticsData(
            "witness needs a table of order >= 1".to_string(),
        ));
    }
    let mut best = 0.0f64;
    for k in 1..=table.max_order {
        let k_fact: f64 = (1..=k).map(|i| i as f64).product();
        let d_k = table.order_max[k];
        if d_k > 0.0 {
            best = best.max((d_k / k_fact.powf(sigma)).powf(1.0 / (k as f64 + 1.0)));
        }
    }
    Ok(best)
}

/// The Leibniz decomposition of d/dt ‖∂^μ f‖² for the nondivergence form,
/// evaluated as grid quadratures, against a central finite difference; plus
/// the masked coercive part and the bookkeeping sums.
#[derive(Debug, Clone)]
pub struct EnergyIdentityReport {
    pub mu: MultiIndex,
    pub dt: f64,
    /// central difference of ‖∂^μ f‖² over the state triple
    pub lhs_fd: f64,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    pub term_iv: f64,
    /// masked quadrature of -2 Σ_ij ∫ ā_ij (∂_j ∂^μ f)(∂_i ∂^μ f)
    pub i1_masked: f64,
    /// -2·K̂·‖∇∂^μ f‖²_{L²_γ} over the same masked quadrature
    pub coercivity_bound: f64,
    /// positive part of i1_masked - coercivity_bound
    pub coercivity_violation: f64,
    pub mismatch: f64,
    /// [G_σ(f)]_m = d_m + B^m (m!)^σ for m = 0..=|μ|
    pub gsigma: Vec<f64>,
    /// rough dt-truncation share of the finite difference
    pub fd_share_estimate: f64,
    pub dt_warning: bool,
}

/// Quadrature Σ a·b·c·h^d over the full grid.
fn triple_product_slice(a: &[f64], b: &Field, c: &Field) -> f64 {
    let hv = b.grid().cell_volume();
    let mut acc = 0.0;
    for ((x, y), z) in a.iter().zip(b.values()).zip(c.values()) {
        acc += x * y * z;
    }
    acc * hv
}

pub fn energy_identity_check(
    assembler: &CoefficientAssembler,
    states: [&SolverState; 3],
    mu: &MultiIndex,
    sigma: f64,
    b_const: f64,
    mask_radius: f64,
) -> Result<EnergyIdentityReport> {
    let [prev, mid, next] = states;
    let dt1 = mid.t - prev.t;
    let dt2 = next.t - mid.t;
    if dt1 <= 0.0 || (dt1 - dt2).abs() > 1e-9 * dt1 {
        return Err(Error::DiagnosticsData(format!(
            "identity check needs uniformly spaced states (dt = {dt1}, {dt2})"
        )));
    }
    if mu.order() > 4 {
        return Err(Error::DiagnosticsData(format!(
            "|mu| = {} exceeds the supported order 4",
            mu.order()
        )));
    }
    let dt = dt1;
    let ops = assembler.spectral_ops();
    let grid = mid.f.grid();
    let d = grid.dim();
    let gamma = assembler.params().gamma;

    let norm_sq = |f: &Field| -> Result<f64> {
        let df = ops.derivative(f, mu)?;
        Ok(weighted_norm(&df, NormKind::L2s, 0.0).powi(2))
    };
    let n_prev = norm_sq(&prev.f)?;
    let n_mid = norm_sq(&mid.f)?;
    let n_next = norm_sq(&next.f)?;
    let lhs_fd = (n_next - n_prev) / (2.0 * dt);
    let curvature = (n_next - 2.0 * n_mid + n_prev) / (dt * dt);
    let fd_share_estimate = if lhs_fd.abs() > 0.0 {
        (curvature * dt / (2.0 * lhs_fd)).abs()
    } else {
        0.0
    };
    let dt_warning = fd_share_estimate > 0.1;

    let fhat = ops.forward(&mid.f);
    let dmu = ops.inverse(&ops.derivative_spectrum(&fhat, mu)?);

    // derivative coefficient fields for every β ≤ μ (β = 0 reuses the cache)
    let betas = enumerate(mu, 0, mu.order())?;
    let mut coeff_table: Vec<(MultiIndex, CoefficientFields)> = Vec::new();
    for beta in &betas {
        let c = if beta.order() == 0 {
            mid.coeffs.clone()
        } else {
            assembler.assemble_derivative(&mid.f, beta)?
        };
        coeff_table.push((*beta, c));
    }
    let coeff_for = |beta: &MultiIndex| -> &CoefficientFields {
        &coeff_table
            .iter()
            .find(|(b, _)| b == beta)
            .expect("beta enumerated")
            .1
    };

    // (I) = 2 Σ_ij ∫ ā_ij (∂_ij ∂^μ f)(∂^μ f)
    let mut term_i = 0.0;
    for i in 0..d {
        for j in i..d {
            let factor = if i == j { 2.0 } else { 4.0 };
            let alpha = mu.add(&MultiIndex::unit(d, i)).add(&MultiIndex::unit(d, j));
            let dij = ops.inverse(&ops.derivative_spectrum(&fhat, &alpha)?);
            term_i += factor * triple_product_slice(mid.coeffs.abar(i, j), &dij, &dmu);
        }
    }

    // (II), (III): 2 Σ_ij Σ_β C_μ^β ∫ (∂^β ā_ij)(∂_ij ∂^{μ-β} f)(∂^μ f)
    let mut term_ii = 0.0;
    let mut term_iii = 0.0;
    for beta in &betas {
        if beta.order() < 1 {
            continue;
        }
        let c_mu_beta = binomial(mu, beta)? as f64;
        let dcoeffs = coeff_for(beta);
        let rest = mu.sub(beta)?;
        let mut contribution = 0.0;
        for i in 0..d {
            for j in i..d {
                let factor = if i == j { 2.0 } else { 4.0 };
                let alpha = rest
                    .add(&MultiIndex::unit(d, i))
                    .add(&MultiIndex::unit(d, j));
                let dij = ops.inverse(&ops.derivative_spectrum(&fhat, &alpha)?);
                contribution += factor * triple_product_slice(dcoeffs.abar(i, j), &dij, &dmu);
            }
        }
        if beta.order() == 1 {
            term_ii += c_mu_beta * contribution;
        } else {
            term_iii += c_mu_beta * contribution;
        }
    }

    // (IV) = -2 Σ_{β≤μ} C_μ^β ∫ (∂^{μ-β} c̄)(∂^β f)(∂^μ f)
    let mut term_iv = 0.0;
    for beta in &betas {
        let c_mu_beta = binomial(mu, beta)? as f64;
        let rest = mu.sub(beta)?;
        let dc = coeff_for(&rest);
        let dbeta_f = ops.inverse(&ops.derivative_spectrum(&fhat, beta)?);
        term_iv -= 2.0 * c_mu_beta * triple_product_slice(dc.cbar(), &dbeta_f, &dmu);
    }

    // coercive part on the masked quadrature, against the same-mask K̂
    let mask2 = mask_radius * mask_radius;
    let mut grads: Vec<Field> = Vec::with_capacity(d);
    for axis in 0..d {
        let alpha = mu.add(&MultiIndex::unit(d, axis));
        grads.push(ops.inverse(&ops.derivative_spectrum(&fhat, &alpha)?));
    }
    let hv = grid.cell_volume();
    let mut i1_masked = 0.0;
    let mut grad_norm_gamma_sq = 0.0;
    for idx in 0..grid.size() {
        if grid.radius2(idx) > mask2 {
            continue;
        }
        let weight = (1.0 + grid.radius2(idx)).powf(0.5 * gamma);
        let mut quad = 0.0;
        let mut g2 = 0.0;
        for i in 0..d {
            let gi = grads[i].values()[idx];
            g2 += gi * gi;
            for j in 0..d {
                quad += mid.coeffs.abar(i, j)[idx] * grads[j].values()[idx] * gi;
            }
        }
        i1_masked -= 2.0 * quad * hv;
        grad_norm_gamma_sq += weight * g2 * hv;
    }
    let k_hat = ellipticity_constant(&mid.coeffs, gamma, mask_radius);
    let coercivity_bound = -2.0 * k_hat * grad_norm_gamma_sq;
    let coercivity_violation = (i1_masked - coercivity_bound).max(0.0);

    // bookkeeping sums [G_σ]_m with the user-supplied B
    let table = derivative_norm_table(ops, &mid.f, mu.order(), gamma, mid.t)?;
    let gsigma = (0..=mu.order())
        .map(|m| {
            let m_fact: f64 = (1..=m).map(|i| i as f64).product();
            table.order_max[m] + b_const.powi(m as i32) * m_fact.powf(sigma)
        })
        .collect();

    let total = term_i + term_ii + term_iii + term_iv;
    let scale = lhs_fd
        .abs()
        .max(term_i.abs())
        .max(term_ii.abs())
        .max(term_iii.abs())
        .max(term_iv.abs())
        .max(1e-300);
    let mismatch = (lhs_fd - total).abs() / scale;

    Ok(EnergyIdentityReport {
        mu: *mu,
        dt,
        lhs_fd,
        term_i,
        term_ii,
        term_iii,
        term_iv,
        i1_masked,
        coercivity_bound,
        coercivity_violation,
        mismatch,
        gsigma,
        fd_share_estimate,
        dt_warning,
    })
}

/// Trajectory functional at order k:
/// `max_{|α|=k} sup_t ‖∂^α f‖_{L²} + max_{|α̃|=k} (∫₀^T ‖∇∂^α̃ f‖²_{L²_γ} dt)^{1/2}`
/// with the time integral by the trapezoid rule over uniformly spaced tables.
pub fn qk_functional(tables: &[DerivativeNormTable], k: usize) -> Result<f64> {
    if tables.is_empty() {
        return Err(Error::DiagnosticsData("no norm tables".to_string()));
    }
    if tables.iter().any(|t| t.max_order < k) {
        return Err(Error::DiagnosticsData(format!(
            "tables do not cover order {k}"
        )));
    }
    let m = tables.len();
    let sup_term = tables
        .iter()
        .map(|t| t.order_max[k])
        .fold(0.0f64, f64::max);
    let mut integral_term: f64 = 0.0;
    if m > 1 {
        let count = tables[0].entries_of_order(k).count();
        for e_idx in 0..count {
            let series: Vec<f64> = tables
                .iter()
                .map(|t| {
                    let e = t.entries_of_order(k).nth(e_idx).expect("same layout");
                    e.grad_l2_gamma * e.grad_l2_gamma
                })
                .collect();
            let mut integral = 0.0;
            for w in 0..m - 1 {
                let dt = tables[w + 1].t - tables[w].t;
                integral += 0.5 * dt * (series[w] + series[w + 1]);
            }
            integral_term = integral_term.max(integral.sqrt());
        }
    }
    Ok(sup_term + integral_term)
}

/// Normalized boundedness witnesses `w_k = Q_k^{1/k} / ((k-1)!)^{σ/k}` for
/// k = 1..=k_max.
pub fn qk_witness_sequence(
    tables: &[DerivativeNormTable],
    k_max: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    (1..=k_max)
        .map(|k| {
            let q = qk_functional(tables, k)?;
            let fact: f64 = (1..k).map(|i| i as f64).product();
            Ok(q.powf(1.0 / k as f64) / fact.powf(sigma / k as f64))
        })
        .collect()
}

/// Helper for synthetic spectra in tests and the CLI: a field whose DFT
/// magnitude is exp(-c·|ξ|^{1/σ}).
pub fn synthetic_decay_field(
    ops: &SpectralOps,
    c: f64,
    sigma: f64,
) -> Result<Field> {
    let grid = ops.grid();
    let n = grid.points();
    let d = grid.dim();
    let hv = grid.cell_volume();
    let mut values = vec![Complex64::default(); grid.size()];
    for (idx, z) in values.iter_mut().enumerate() {
        let mut r2 = 0.0f64;
        let mut rest = idx;
        for _ in 0..d {
            let fi = grid.freq(rest % n) as f64;
            r2 += fi * fi;
            rest /= n;
        }
        let r = r2.sqrt();
        *z = Complex64::new((-c * r.powf(1.0 / sigma)).exp() / hv, 0.0);
    }
    let spec = SpectralField::from_values(grid, values)?;
    Ok(ops.inverse(&spec))
}
