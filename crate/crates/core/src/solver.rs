//! Explicit RK4 time integration of the collision equation in flux form
//! (exact discrete mass conservation) or nondivergence form (the shape the
//! coefficient identities are stated in), with CFL-controlled steps.

use crate::error::{Error, Result};
use crate::grid::{entropy, mass_outside, weighted_norm, Field, NormKind, SpectralOps, VelocityGrid};
use crate::kernel::{CoefficientAssembler, CoefficientFields};
use crate::multiindex::MultiIndex;

/// Which semi-discrete right-hand side drives the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsForm {
    /// ∂_t f = Σ_j ∂_j ( Σ_i ā_ij ∂_i f − f b̄_j )
    Flux,
    /// ∂_t f = Σ_ij ā_ij ∂_ij f − c̄ f
    Nondivergence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub form: RhsForm,
    /// CFL number in (0, 1] entering the explicit diffusion step bound.
    pub cfl: f64,
    pub t_end: f64,
    /// Number of output intervals over [0, t_end]; states are reported at
    /// t_k = k·t_end/output_every, k = 0..=output_every.
    pub output_every: usize,
    /// Reassemble coefficients at every RK stage (full nonlinearity) or
    /// freeze them over the step.
    pub recompute_coeffs_every_stage: bool,
    /// Hard ceiling on dt, also the fallback when coefficients vanish.
    pub dt_max: f64,
    /// Regularization threshold for the entropy monitor.
    pub entropy_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            form: RhsForm::Flux,
            cfl: 0.5,
            t_end: 1.0,
            output_every: 10,
            recompute_coeffs_every_stage: true,
            dt_max: 0.1,
            entropy_floor: 1e-30,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Domain(format!("cfl = {} outside (0, 1]", self.cfl)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Domain(format!("t_end = {} negative", self.t_end)));
        }
        if self.output_every == 0 {
            return Err(Error::Domain("output_every must be >= 1".to_string()));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::Domain(format!("dt_max = {} must be positive", self.dt_max)));
        }
        if !(self.entropy_floor > 0.0) {
            return Err(Error::Domain("entropy_floor must be positive".to_string()));
        }
        Ok(())
    }
}

/// One point of a trajectory: time, density, matching coefficients and the
/// running minimum of f (negativity is monitored, never clipped).
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub f: Field,
    pub coeffs: CoefficientFields,
    pub min_f: f64,
}

/// Output states plus run-level monitors.
#[derive(Debug)]
pub struct Trajectory {
    pub states: Vec<SolverState>,
    /// Largest per-step increase of ∫ f log f seen during the run; an exact
    /// H-theorem discretization would keep this at round-off level.
    pub max_entropy_increment: f64,
    pub warnings: Vec<String>,
    pub steps_taken: usize,
}

impl Trajectory {
    pub fn last(&self) -> &SolverState {
        self.states.last().expect("trajectory holds at least t = 0")
    }
}

/// Largest stable explicit step for the assembled coefficients:
/// `cfl·h²/(2·d·Λ)` with `Λ = max_v λ_max(ā(v))` over the whole grid, capped
/// by `cfl·h/(2·max|b̄|)` for the advective part and by `dt_max`.
///
/// Λ is taken over all grid points, not only the masked region: the
/// truncated kernel makes ā largest outside the mask and the explicit step
/// must respect the full operator's spectral radius.
pub fn stable_dt(coeffs: &CoefficientFields, grid: &VelocityGrid, cfl: f64, dt_max: f64) -> f64 {
    let h = grid.spacing();
    let d = grid.dim() as f64;
    let lam = coeffs.lambda_max_global();
    let mut dt = dt_max;
    if lam > 0.0 {
        dt = dt.min(cfl * h * h / (2.0 * d * lam));
    }
    let b_max = coeffs.max_bbar_norm();
    if b_max > 0.0 {
        dt = dt.min(cfl * h / (2.0 * b_max));
    }
    dt
}

pub struct Solver<'a> {
    assembler: &'a CoefficientAssembler,
    config: SolverConfig,
}

impl<'a> Solver<'a> {
    pub fn new(assembler: &'a CoefficientAssembler, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { assembler, config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn ops(&self) -> &SpectralOps {
        self.assembler.spectral_ops()
    }

    /// Semi-discrete right-hand side for the configured form.
    pub fn rhs(&self, f: &Field, coeffs: &CoefficientFields) -> Result<Field> {
        self.rhs_with_form(f, coeffs, self.config.form)
    }

    pub fn rhs_with_form(
        &self,
        f: &Field,
        coeffs: &CoefficientFields,
        form: RhsForm,
    ) -> Result<Field> {
        match form {
            RhsForm::Flux => self.rhs_flux(f, coeffs),
            RhsForm::Nondivergence => self.rhs_nondivergence(f, coeffs),
        }
    }

    fn rhs_flux(&self, f: &Field, coeffs: &CoefficientFields) -> Result<Field> {
        let ops = self.ops();
        let grid = f.grid();
        let d = grid.dim();
        let fhat = ops.forward(f);
        let mut grads: Vec<Field> = Vec::with_capacity(d);
        {
            let e0 = MultiIndex::unit(d, 0);
            let e1 = MultiIndex::unit(d, 1);
            let (g0, g1) = ops.derivative_pair(&fhat, &e0, &e1)?;
            grads.push(g0);
            grads.push(g1);
            if d == 3 {
                let e2 = MultiIndex::unit(d, 2);
                let dhat = ops.derivative_spectrum(&fhat, &e2)?;
                grads.push(ops.inverse(&dhat));
            }
        }
        // F_j = Σ_i ā_ij ∂_i f − f b̄_j
        let mut fluxes: Vec<Field> = Vec::with_capacity(d);
        for j in 0..d {
            let mut vals = vec![0.0; grid.size()];
            for i in 0..d {
                let a = coeffs.abar(i, j);
                let gi = grads[i].values();
                for (v, (&ai, &g)) in vals.iter_mut().zip(a.iter().zip(gi)) {
                    *v += ai * g;
                }
            }
            let b = coeffs.bbar(j);
            for (v, (&fv, &bv)) in vals.iter_mut().zip(f.values().iter().zip(b)) {
                *v -= fv * bv;
            }
            fluxes.push(Field::from_values(grid, vals)?);
        }
        let refs: Vec<&Field> = fluxes.iter().collect();
        ops.divergence(&refs)
    }

    fn rhs_nondivergence(&self, f: &Field, coeffs: &CoefficientFields) -> Result<Field> {
        let ops = self.ops();
        let grid = f.grid();
        let d = grid.dim();
        let fhat = ops.forward(f);
        let mut out = vec![0.0; grid.size()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for i in 0..d {
            for j in i..d {
                pairs.push((i, j));
            }
        }
        let mut idx = 0;
        while idx < pairs.len() {
            let (i1, j1) = pairs[idx];
            let a1 = MultiIndex::unit(d, i1).add(&MultiIndex::unit(d, j1));
            if idx + 1 < pairs.len() {
                let (i2, j2) = pairs[idx + 1];
                let a2 = MultiIndex::unit(d, i2).add(&MultiIndex::unit(d, j2));
                let (d1, d2) = ops.derivative_pair(&fhat, &a1, &a2)?;
                accumulate_second_derivative(&mut out, coeffs, i1, j1, &d1);
                accumulate_second_derivative(&mut out, coeffs, i2, j2, &d2);
                idx += 2;
            } else {
                let dhat = ops.derivative_spectrum(&fhat, &a1)?;
                let d1 = ops.inverse(&dhat);
                accumulate_second_derivative(&mut out, coeffs, i1, j1, &d1);
                idx += 1;
            }
        }
        let c = coeffs.cbar();
        for (o, (&fv, &cv)) in out.iter_mut().zip(f.values().iter().zip(c)) {
            *o -= cv * fv;
        }
        Field::from_values(grid, out)
    }

    /// One classical RK4 step of size dt. Coefficients are reassembled at
    /// every stage when configured, otherwise frozen at the step start; the
    /// returned state always carries coefficients consistent with its f.
    pub fn step(&self, state: &SolverState, dt: f64) -> Result<SolverState> {
        let every_stage = self.config.recompute_coeffs_every_stage;
        let k1 = self.rhs(&state.f, &state.coeffs)?;

        let f2 = state.f.axpy(0.5 * dt, &k1);
        let c2_store;
        let c2 = if every_stage {
            c2_store = self.assembler.assemble(&f2)?;
            &c2_store
        } else {
            &state.coeffs
        };
        let k2 = self.rhs(&f2, c2)?;

        let f3 = state.f.axpy(0.5 * dt, &k2);
        let c3_store;
        let c3 = if every_stage {
            c3_store = self.assembler.assemble(&f3)?;
            &c3_store
        } else {
            &state.coeffs
        };
        let k3 = self.rhs(&f3, c3)?;

        let f4 = state.f.axpy(dt, &k3);
        let c4_store;
        let c4 = if every_stage {
            c4_store = self.assembler.assemble(&f4)?;
            &c4_store
        } else {
            &state.coeffs
        };
        let k4 = self.rhs(&f4, c4)?;

        let grid = state.f.grid();
        let mut values = Vec::with_capacity(grid.size());
        let sixth = dt / 6.0;
        for i in 0..grid.size() {
            values.push(
                state.f.values()[i]
                    + sixth
                        * (k1.values()[i]
                            + 2.0 * k2.values()[i]
                            + 2.0 * k3.values()[i]
                            + k4.values()[i]),
            );
        }
        let f_new = Field::from_values(grid, values)?;
        if !f_new.is_finite() {
            return Err(Error::BlowUp {
                t: state.t + dt,
                detail: format!(
                    "non-finite density after step (dt = {dt:.3e}, mass before = {:.6e}, min before = {:.3e})",
                    weighted_norm(&state.f, NormKind::L1s, 0.0),
                    state.f.min()
                ),
            });
        }
        let coeffs = self.assembler.assemble(&f_new)?;
        let min_f = state.min_f.min(f_new.min());
        Ok(SolverState {
            t: state.t + dt,
            f: f_new,
            coeffs,
            min_f,
        })
    }

    /// Integrate from f0 and report states at the configured output times.
    pub fn run(&self, f0: Field) -> Result<Trajectory> {
        if !f0.is_finite() {
            return Err(Error::Domain("initial datum not finite".to_string()));
        }
        let grid = f0.grid();
        let coeffs = self.assembler.assemble(&f0)?;
        let min_f = f0.min();
        let mut state = SolverState {
            t: 0.0,
            f: f0,
            coeffs,
            min_f,
        };
        let mass0 = weighted_norm(&state.f, NormKind::L1s, 0.0);
        let floor = self.config.entropy_floor;
        let mut trajectory = Trajectory {
            states: vec![state.clone()],
            max_entropy_increment: 0.0,
            warnings: Vec::new(),
            steps_taken: 0,
        };
        self.check_leak(&state, mass0, &mut trajectory.warnings);

        let outputs = self.config.output_every;
        for k in 1..=outputs {
            if self.config.t_end == 0.0 {
                break;
            }
            let t_target = self.config.t_end * k as f64 / outputs as f64;
            let interval = t_target - state.t;
            let dt_stable = stable_dt(&state.coeffs, &grid, self.config.cfl, self.config.dt_max);
            if state.coeffs.lambda_max_global() == 0.0 && state.f.max_abs() > 0.0 {
                trajectory
                    .warnings
                    .push(format!("degenerate coefficients at t = {}", state.t));
            }
            let n_steps = ((interval / (0.9 * dt_stable)).ceil() as usize).max(1);
            let dt = interval / n_steps as f64;
            for _ in 0..n_steps {
                let h_before = entropy(&state.f, floor);
                state = self.step(&state, dt)?;
                let h_after = entropy(&state.f, floor);
                trajectory.max_entropy_increment =
                    trajectory.max_entropy_increment.max(h_after - h_before);
                trajectory.steps_taken += 1;
            }
            state.t = t_target; // land exactly on the output time
            self.check_leak(&state, mass0, &mut trajectory.warnings);
            trajectory.states.push(state.clone());
        }
        Ok(trajectory)
    }

    fn check_leak(&self, state: &SolverState, mass0: f64, warnings: &mut Vec<String>) {
        let grid = state.f.grid();
        let leak = mass_outside(&state.f, grid.edge() / 3.0);
        if mass0 > 0.0 && leak > 1e-6 * mass0 {
            warnings.push(format!(
                "mass outside |v| <= L/3 reached {:.3e} (= {:.2e}·M0) at t = {}",
                leak,
                leak / mass0,
                state.t
            ));
        }
    }
}

fn accumulate_second_derivative(
    out: &mut [f64],
    coeffs: &CoefficientFields,
    i: usize,
    j: usize,
    dij: &Field,
) {
    let factor = if i == j { 1.0 } else { 2.0 };
    let a = coeffs.abar(i, j);
    for (o, (&av, &dv)) in out.iter_mut().zip(a.iter().zip(dij.values())) {
        *o += factor * av * dv;
    }
}
