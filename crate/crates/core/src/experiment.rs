//! Configuration, the scenario catalog, CSV/JSON/snapshot persistence and
//! the run driver behind the CLI.
//!
//! Configs are TOML documents with strict unknown-key rejection. Reruns of
//! the same config produce byte-identical artifacts: there is no hidden
//! randomness anywhere and all float formatting is shortest-round-trip.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    conservation_record, derivative_norm_table, energy_identity_check, fit_shell_decay,
    gevrey_constant_witness, gevrey_fit_fourier, qk_functional, qk_witness_sequence,
    shell_maxima, DerivativeNormTable, EnergyIdentityReport, GevreyFit,
};
use crate::error::{Error, Result};
use crate::grid::{Field, SpectralOps, VelocityGrid};
use crate::kernel::{CoefficientAssembler, KernelParams};
use crate::multiindex::MultiIndex;
use crate::solver::{stable_dt, RhsForm, Solver, SolverConfig, SolverState, Trajectory};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
    pub l: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub gamma: f64,
    /// Defaults to l/2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_trunc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// "flux" or "nondivergence".
    #[serde(default = "default_form")]
    pub form: String,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    pub output_every: usize,
    #[serde(default = "default_true")]
    pub recompute_coeffs_every_stage: bool,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Highest derivative order tabulated per output.
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_sigma_list")]
    pub sigma_list: Vec<f64>,
    /// The B entering the bookkeeping sums; affects reported ratios only.
    #[serde(default = "default_b_const")]
    pub b_const: f64,
    /// Shell window for the Fourier-decay fit; defaults to [n/8, 3n/8].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[usize; 2]>,
    #[serde(default = "default_entropy_floor")]
    pub entropy_floor: f64,
    /// Defaults to l/4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_radius: Option<f64>,
    /// Multi-indices for the energy-identity rows, e.g. ["0,0", "2,0"].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_mu: Option<Vec<String>>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            max_order: default_max_order(),
            sigma_list: default_sigma_list(),
            b_const: default_b_const(),
            fit_window: None,
            entropy_floor: default_entropy_floor(),
            mask_radius: None,
            identity_mu: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperatures: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    /// Write a snapshot every k-th output; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PropertySection {
    #[serde(default = "default_mass_tol")]
    pub mass_rel_tol: f64,
    /// Entropy may rise per step by at most this factor times |H₀|.
    #[serde(default = "default_entropy_tol")]
    pub entropy_tol_factor: f64,
    #[serde(default = "default_sigma_drift")]
    pub sigma_drift_tol: f64,
    #[serde(default = "default_c_ratio")]
    pub gevrey_constant_ratio_tol: f64,
    #[serde(default = "default_qk_ratio")]
    pub qk_max_over_median_tol: f64,
}

impl Default for PropertySection {
    fn default() -> Self {
        Self {
            mass_rel_tol: default_mass_tol(),
            entropy_tol_factor: default_entropy_tol(),
            sigma_drift_tol: default_sigma_drift(),
            gevrey_constant_ratio_tol: default_c_ratio(),
            qk_max_over_median_tol: default_qk_ratio(),
        }
    }
}

fn default_form() -> String {
    "flux".to_string()
}
fn default_cfl() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_dt_max() -> f64 {
    0.1
}
fn default_max_order() -> usize {
    4
}
fn default_sigma_list() -> Vec<f64> {
    vec![1.0]
}
fn default_b_const() -> f64 {
    4.0
}
fn default_entropy_floor() -> f64 {
    1e-30
}
fn default_mass() -> f64 {
    1.0
}
fn default_mass_tol() -> f64 {
    1e-12
}
fn default_entropy_tol() -> f64 {
    1e-8
}
fn default_sigma_drift() -> f64 {
    0.05
}
fn default_c_ratio() -> f64 {
    1.5
}
fn default_qk_ratio() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub scenario: ScenarioSection,
    pub output: OutputSection,
    #[serde(default)]
    pub properties: PropertySection,
}

impl ExperimentConfig {
    pub fn grid_spec(&self) -> Result<VelocityGrid> {
        VelocityGrid::new(self.grid.d, self.grid.n, self.grid.l)
    }

    pub fn kernel_params(&self) -> Result<KernelParams> {
        let r = self.kernel.r_trunc.unwrap_or(0.5 * self.grid.l);
        KernelParams::new(self.kernel.gamma, self.grid.d, r)
    }

    pub fn rhs_form(&self) -> Result<RhsForm> {
        match self.solver.form.as_str() {
            "flux" => Ok(RhsForm::Flux),
            "nondivergence" => Ok(RhsForm::Nondivergence),
            other => Err(Error::Config {
                path: "solver.form".to_string(),
                message: format!("unknown form `{other}` (flux | nondivergence)"),
            }),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig {
            form: self.rhs_form()?,
            cfl: self.solver.cfl,
            t_end: self.solver.t_end,
            output_every: self.solver.output_every,
            recompute_coeffs_every_stage: self.solver.recompute_coeffs_every_stage,
            dt_max: self.solver.dt_max,
            entropy_floor: self.diagnostics.entropy_floor,
        })
    }

    pub fn mask_radius(&self) -> f64 {
        self.diagnostics.mask_radius.unwrap_or(self.grid.l / 4.0)
    }

    pub fn fit_window(&self) -> (usize, usize) {
        match self.diagnostics.fit_window {
            Some([lo, hi]) => (lo, hi),
            None => (self.grid.n / 8, 3 * self.grid.n / 8),
        }
    }

    pub fn identity_mu(&self) -> Result<Vec<MultiIndex>> {
        let d = self.grid.d;
        match &self.diagnostics.identity_mu {
            Some(list) => list.iter().map(|s| parse_multi_index(s, d)).collect(),
            None => {
                let mut out = vec![MultiIndex::zero(d), MultiIndex::unit(d, 0)];
                out.push(MultiIndex::unit(d, 0).add(&MultiIndex::unit(d, 1)));
                out.push(MultiIndex::unit(d, 0).add(&MultiIndex::unit(d, 0)));
                Ok(out)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        let params = self.kernel_params()?;
        params.validate_against(&self.grid_spec()?)?;
        self.solver_config()?.validate()?;
        if self.diagnostics.max_order > self.grid.n / 8 {
            return Err(Error::Config {
                path: "diagnostics.max_order".to_string(),
                message: format!(
                    "max_order {} exceeds n/8 = {}",
                    self.diagnostics.max_order,
                    self.grid.n / 8
                ),
            });
        }
        if self.diagnostics.sigma_list.is_empty() {
            return Err(Error::Config {
                path: "diagnostics.sigma_list".to_string(),
                message: "at least one sigma required".to_string(),
            });
        }
        let (lo, hi) = self.fit_window();
        if lo >= hi || hi > self.grid.n / 2 {
            return Err(Error::Config {
                path: "diagnostics.fit_window".to_string(),
                message: format!("window [{lo}, {hi}] invalid for n = {}", self.grid.n),
            });
        }
        self.identity_mu()?;
        let _ = scenario_field(self)?; // parameter checking only
        Ok(())
    }
}

fn parse_multi_index(s: &str, d: usize) -> Result<MultiIndex> {
    let comps: std::result::Result<Vec<u32>, _> =
        s.split(',').map(|p| p.trim().parse::<u32>()).collect();
    let comps = comps.map_err(|e| Error::Config {
        path: "diagnostics.identity_mu".to_string(),
        message: format!("bad multi-index `{s}`: {e}"),
    })?;
    MultiIndex::new(d, &comps)
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: "<root>".to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

/// Build the initial datum of the configured scenario.
pub fn build_scenario(config: &ExperimentConfig) -> Result<Field> {
    let grid = config.grid_spec()?;
    let f = scenario_field(config)?;
    Ok(f(grid))
}

type ScenarioBuilder = Box<dyn Fn(VelocityGrid) -> Field>;

fn scenario_field(config: &ExperimentConfig) -> Result<ScenarioBuilder> {
    let s = &config.scenario;
    let d = config.grid.d;
    let mass = s.mass;
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(Error::Config {
            path: "scenario.mass".to_string(),
            message: format!("mass = {mass} invalid"),
        });
    }
    let need_positive = |name: &str, v: f64| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config {
                path: format!("scenario.{name}"),
                message: format!("{name} = {v} must be positive"),
            })
        }
    };
    match s.name.as_str() {
        "maxwellian" => {
            let t = need_positive("temperature", s.temperature.unwrap_or(1.0))?;
            Ok(Box::new(move |grid| gaussian(grid, [t; 3], [0.0; 3], mass)))
        }
        "anisotropic_gaussian" => {
            let ts = s.temperatures.clone().ok_or_else(|| Error::Config {
                path: "scenario.temperatures".to_string(),
                message: "anisotropic_gaussian needs `temperatures`".to_string(),
            })?;
            if ts.len() != d {
                return Err(Error::Config {
                    path: "scenario.temperatures".to_string(),
                    message: format!("expected {d} temperatures, got {}", ts.len()),
                });
            }
            let mut t = [1.0; 3];
            for (slot, &v) in t.iter_mut().zip(&ts) {
                *slot = need_positive("temperatures", v)?;
            }
            Ok(Box::new(move |grid| gaussian(grid, t, [0.0; 3], mass)))
        }
        "gaussian_mixture" => {
            let t = need_positive("temperature", s.temperature.unwrap_or(1.0))?;
            let sep = s.separation.unwrap_or(1.0);
            if !(sep >= 0.0) {
                return Err(Error::Config {
                    path: "scenario.separation".to_string(),
                    message: format!("separation = {sep} must be nonnegative"),
                });
            }
            Ok(Box::new(move |grid| {
                let a = gaussian(grid, [t; 3], [0.5 * sep, 0.0, 0.0], 0.5 * mass);
                let b = gaussian(grid, [t; 3], [-0.5 * sep, 0.0, 0.0], 0.5 * mass);
                a.axpy(1.0, &b)
            }))
        }
        "bump" => {
            let radius = need_positive("radius", s.radius.unwrap_or(2.0))?;
            Ok(Box::new(move |grid| bump(grid, radius, mass)))
        }
        other => Err(Error::Scenario(other.to_string())),
    }
}

fn gaussian(grid: VelocityGrid, t: [f64; 3], center: [f64; 3], mass: f64) -> Field {
    let d = grid.dim();
    let mut norm = mass;
    for ta in t.iter().take(d) {
        norm /= (2.0 * std::f64::consts::PI * ta).sqrt();
    }
    Field::from_fn(grid, |p| {
        let mut q = 0.0;
        for a in 0..d {
            let x = p[a] - center[a];
            q += x * x / (2.0 * t[a]);
        }
        norm * (-q).exp()
    })
}

/// Compactly supported smooth plateau, normalized to the requested discrete
/// mass.
fn bump(grid: VelocityGrid, radius: f64, mass: f64) -> Field {
    let raw = Field::from_fn(grid, |p| {
        let r2 = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (radius * radius);
        if r2 < 1.0 {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    });
    let total: f64 = raw.values().iter().sum::<f64>() * grid.cell_volume();
    if total > 0.0 && mass > 0.0 {
        raw.scale(mass / total)
    } else {
        raw.scale(0.0)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"LAND";
const SNAPSHOT_VERSION: u32 = 1;

/// Write a density snapshot: magic "LAND", u32 version, u32 d, u32 N, f64 L,
/// f64 t, f64 γ, then the row-major f64 payload, all little-endian.
pub fn write_snapshot(path: &Path, f: &Field, t: f64, gamma: f64) -> Result<()> {
    let grid = f.grid();
    let mut out = Vec::with_capacity(4 + 4 * 3 + 8 * 3 + 8 * grid.size());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.points() as u32).to_le_bytes());
    out.extend_from_slice(&grid.edge().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&gamma.to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Snapshot payload with its header metadata.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub field: Field,
    pub t: f64,
    pub gamma: f64,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 + 4 + 4 + 4 + 8 + 8 + 8 {
        return Err(Error::Snapshot("file too short for header".to_string()));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic".to_string()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let d = u32_at(8) as usize;
    let n = u32_at(12) as usize;
    let l = f64_at(16);
    let t = f64_at(24);
    let gamma = f64_at(32);
    let grid = VelocityGrid::new(d, n, l)?;
    let expected = 40 + 8 * grid.size();
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!(
            "payload length {} does not match header ({} expected)",
            bytes.len(),
            expected
        )));
    }
    let values: Vec<f64> = (0..grid.size())
        .map(|i| f64_at(40 + 8 * i))
        .collect();
    Ok(Snapshot {
        field: Field::from_values(grid, values)?,
        t,
        gamma,
    })
}

/// Property verdicts and headline quantities of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub steps_taken: usize,
    pub mass_rel_drift: f64,
    pub energy_rel_drift: f64,
    pub max_entropy_increment_rel: f64,
    pub min_f: f64,
    pub min_ellipticity: f64,
    pub sigma_hat_initial: f64,
    pub sigma_hat_drift: f64,
    pub gevrey_constant_ratio: f64,
    pub qk: Vec<f64>,
    pub qk_witness: Vec<f64>,
    pub qk_max_over_median: f64,
    pub pass_mass_conservation: bool,
    pub pass_entropy_monotone: bool,
    pub pass_ellipticity_positive: bool,
    pub pass_sigma_drift: bool,
    pub pass_gevrey_constant: bool,
    pub pass_qk_bounded: bool,
    pub warnings: Vec<String>,
    pub incomplete: bool,
}

fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

struct CsvWriter {
    rows: Vec<String>,
}

impl CsvWriter {
    fn new(header: &str) -> Self {
        Self {
            rows: vec![header.to_string()],
        }
    }

    fn row(&mut self, fields: &[String]) {
        self.rows.push(fields.join(","));
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.rows.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Execute a configured run and write `conservation.csv`, `norms.csv`,
/// `gevrey.csv`, `identity.csv`, `summary.json` and optional snapshots into
/// the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = PathBuf::from(&config.output.directory);
    fs::create_dir_all(&dir)?;

    let grid = config.grid_spec()?;
    let params = config.kernel_params()?;
    let assembler = CoefficientAssembler::new(grid, params)?;
    let solver = Solver::new(&assembler, config.solver_config()?)?;
    let f0 = build_scenario(config)?;
    let trajectory = solver.run(f0)?;

    write_artifacts(config, &assembler, &solver, &trajectory, &dir)
}

fn write_artifacts(
    config: &ExperimentConfig,
    assembler: &CoefficientAssembler,
    solver: &Solver,
    trajectory: &Trajectory,
    dir: &Path,
) -> Result<RunSummary> {
    let grid = config.grid_spec()?;
    let gamma = config.kernel.gamma;
    let mask = config.mask_radius();
    let floor = config.diagnostics.entropy_floor;
    let ops = assembler.spectral_ops();
    let d = grid.dim();
    let mut incomplete = false;
    let mut warnings = trajectory.warnings.clone();

    // conservation.csv
    let ev_cols = if d == 2 { "ev_x,ev_y" } else { "ev_x,ev_y,ev_z" };
    let mut conservation = CsvWriter::new(&format!(
        "t,mass,{ev_cols},energy,entropy,min_f,k_hat,mass_leak"
    ));
    let mut records = Vec::new();
    for state in &trajectory.states {
        let rec = conservation_record(state, gamma, mask, floor);
        let mut row = vec![format_float(rec.t), format_float(rec.mass)];
        for a in 0..d {
            row.push(format_float(rec.momentum[a]));
        }
        row.extend([
            format_float(rec.energy),
            format_float(rec.entropy),
            format_float(rec.min_f),
            format_float(rec.ellipticity),
            format_float(rec.mass_outside_mask),
        ]);
        conservation.row(&row);
        records.push(rec);
    }
    conservation.write(&dir.join("conservation.csv"))?;

    // norms.csv and the tables feeding the trajectory functionals
    let mut norms = CsvWriter::new("t,order,alpha,l2,l2gamma_grad");
    let mut tables: Vec<DerivativeNormTable> = Vec::new();
    for state in &trajectory.states {
        let table =
            derivative_norm_table(ops, &state.f, config.diagnostics.max_order, gamma, state.t)?;
        for e in &table.entries {
            norms.row(&[
                format_float(state.t),
                e.alpha.order().to_string(),
                e.alpha.to_string(),
                format_float(e.l2),
                format_float(e.grad_l2_gamma),
            ]);
        }
        tables.push(table);
    }
    norms.write(&dir.join("norms.csv"))?;

    // gevrey.csv: Fourier-decay fit plus the derivative-route witness per σ
    let sigma_cols: Vec<String> = config
        .diagnostics
        .sigma_list
        .iter()
        .map(|s| format!("c_hat_sigma_{s}"))
        .collect();
    let mut gevrey = CsvWriter::new(&format!(
        "t,sigma_hat,c_hat,fit_residual,{}",
        sigma_cols.join(",")
    ));
    let window = config.fit_window();
    let mut sigma_series: Vec<f64> = Vec::new();
    let mut witness_series: Vec<f64> = Vec::new();
    for (state, table) in trajectory.states.iter().zip(&tables) {
        let fit = gevrey_fit_fourier(ops, &state.f, window);
        let (sh, ch, res) = match &fit {
            Ok(fit) => (fit.sigma_hat, fit.c_hat, fit.residual),
            Err(e) => {
                warnings.push(format!("gevrey fit degenerate at t = {}: {e}", state.t));
                incomplete = true;
                (f64::NAN, f64::NAN, f64::NAN)
            }
        };
        sigma_series.push(sh);
        let mut row = vec![
            format_float(state.t),
            format_float(sh),
            format_float(ch),
            format_float(res),
        ];
        for &sigma in &config.diagnostics.sigma_list {
            let c = gevrey_constant_witness(table, sigma).unwrap_or(f64::NAN);
            row.push(format_float(c));
        }
        gevrey.row(&row);
        let c_first = gevrey_constant_witness(table, config.diagnostics.sigma_list[0])
            .unwrap_or(f64::NAN);
        witness_series.push(c_first);
    }
    gevrey.write(&dir.join("gevrey.csv"))?;

    // identity.csv: small-dt triples grown from each interior output state
    let mut identity = CsvWriter::new(
        "t,mu,lhs_fd,term_i,term_ii,term_iii,term_iv,i1,coercivity_bound,mismatch,violation",
    );
    let mu_list = config.identity_mu()?;
    for state in trajectory.states.iter() {
        if state.f.max_abs() == 0.0 {
            continue;
        }
        match identity_triple(solver, assembler, state, &grid, config)? {
            Some(states) => {
                for mu in &mu_list {
                    let report = energy_identity_check(
                        assembler,
                        [&states[0], &states[1], &states[2]],
                        mu,
                        config.diagnostics.sigma_list[0],
                        config.diagnostics.b_const,
                        mask,
                    )?;
                    identity.row(&[
                        format_float(states[1].t),
                        format!("\"{mu}\""),
                        format_float(report.lhs_fd),
                        format_float(report.term_i),
                        format_float(report.term_ii),
                        format_float(report.term_iii),
                        format_float(report.term_iv),
                        format_float(report.i1_masked),
                        format_float(report.coercivity_bound),
                        format_float(report.mismatch),
                        format_float(report.coercivity_violation),
                    ]);
                }
            }
            None => {
                incomplete = true;
            }
        }
    }
    identity.write(&dir.join("identity.csv"))?;

    // snapshots
    if config.output.snapshot_every > 0 {
        for (k, state) in trajectory.states.iter().enumerate() {
            if k % config.output.snapshot_every == 0 {
                let name = format!("snapshot_{k:04}.bin");
                write_snapshot(&dir.join(name), &state.f, state.t, gamma)?;
            }
        }
    }

    // summary quantities and property verdicts
    let props = &config.properties;
    let mass0 = records[0].mass;
    let energy0 = records[0].energy;
    let h0 = records[0].entropy;
    let mass_rel_drift = records
        .iter()
        .map(|r| (r.mass - mass0).abs())
        .fold(0.0f64, f64::max)
        / mass0.abs().max(1e-300);
    let energy_rel_drift = records
        .iter()
        .map(|r| (r.energy - energy0).abs())
        .fold(0.0f64, f64::max)
        / energy0.abs().max(1e-300);
    let max_entropy_increment_rel =
        trajectory.max_entropy_increment / h0.abs().max(1e-300);
    let min_f = records.iter().map(|r| r.min_f).fold(f64::INFINITY, f64::min);
    let min_ellipticity = records
        .iter()
        .map(|r| r.ellipticity)
        .fold(f64::INFINITY, f64::min);
    let sigma_hat_initial = sigma_series[0];
    let sigma_hat_drift = sigma_series
        .iter()
        .map(|&s| s - sigma_hat_initial)
        .fold(f64::NEG_INFINITY, f64::max);
    let gevrey_constant_ratio = if witness_series[0] > 0.0 {
        witness_series
            .iter()
            .fold(0.0f64, |m, &v| m.max(v / witness_series[0]))
    } else {
        f64::NAN
    };
    let k_max = config.diagnostics.max_order.min(8).max(1);
    let qk: Vec<f64> = (1..=k_max)
        .map(|k| qk_functional(&tables, k))
        .collect::<Result<_>>()?;
    let qk_witness = qk_witness_sequence(&tables, k_max, config.diagnostics.sigma_list[0])?;
    let qk_max_over_median = max_over_median(&qk_witness);

    let zero_run = mass0 == 0.0;
    let summary = RunSummary {
        config: config.clone(),
        steps_taken: trajectory.steps_taken,
        mass_rel_drift,
        energy_rel_drift,
        max_entropy_increment_rel,
        min_f,
        min_ellipticity,
        sigma_hat_initial,
        sigma_hat_drift,
        gevrey_constant_ratio,
        qk,
        qk_witness,
        qk_max_over_median,
        pass_mass_conservation: zero_run || mass_rel_drift <= props.mass_rel_tol,
        pass_entropy_monotone: zero_run
            || max_entropy_increment_rel <= props.entropy_tol_factor,
        pass_ellipticity_positive: zero_run || min_ellipticity > 0.0,
        pass_sigma_drift: zero_run
            || (sigma_hat_drift.is_finite() && sigma_hat_drift <= props.sigma_drift_tol),
        pass_gevrey_constant: zero_run
            || (gevrey_constant_ratio.is_finite()
                && gevrey_constant_ratio <= props.gevrey_constant_ratio_tol),
        pass_qk_bounded: zero_run
            || (qk_max_over_median.is_finite()
                && qk_max_over_median <= props.qk_max_over_median_tol),
        warnings,
        incomplete,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::DiagnosticsData(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

fn max_over_median(w: &[f64]) -> f64 {
    if w.is_empty() {
        return f64::NAN;
    }
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max = sorted[sorted.len() - 1];
    if median > 0.0 {
        max / median
    } else {
        f64::NAN
    }
}

/// Grow a (s, s+dt, s+2dt) triple from an output state with dt at a tenth of
/// the stable step, for centered identity checks.
fn identity_triple(
    solver: &Solver,
    _assembler: &CoefficientAssembler,
    state: &SolverState,
    grid: &VelocityGrid,
    config: &ExperimentConfig,
) -> Result<Option<[SolverState; 3]>> {
    let dt_stable = stable_dt(&state.coeffs, grid, config.solver.cfl, config.solver.dt_max);
    if !(dt_stable > 0.0) {
        return Ok(None);
    }
    let dt = dt_stable / 10.0;
    let s1 = solver.step(state, dt)?;
    let s2 = solver.step(&s1, dt)?;
    Ok(Some([state.clone(), s1, s2]))
}

/// Brute-force verification of the combinatorial identities and bounds. Used
/// by the `verify-combinatorics` subcommand; returns (all_passed, report).
pub fn verify_combinatorics(max_order: usize, sigma: f64) -> (bool, Vec<String>) {
    use crate::multiindex as mix;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, passed: bool| {
        lines.push(format!("{} {name}", if passed { "PASS" } else { "FAIL" }));
        ok &= passed;
    };

    // closed-form counts vs enumeration, d = 3 and d = 2
    let mut counts_ok = true;
    for l in 0..=max_order.min(30) {
        let closed = (l as u64 + 1) * (l as u64 + 2) / 2;
        let n3 = mix::count_order(3, l).unwrap();
        let e3 = mix::indices_of_order(3, l).unwrap().len() as u64;
        counts_ok &= n3 == closed && e3 == n3;
        let n2 = mix::count_order(2, l).unwrap();
        counts_ok &= n2 == l as u64 + 1;
    }
    check("count_order matches (l+1)(l+2)/2 and enumeration", counts_ok);

    // binomial row sums
    let mut rows_ok = true;
    for mu in mix::representatives(3, max_order.min(12)).unwrap() {
        let total: u128 = mix::enumerate(&mu, 0, mu.order())
            .unwrap()
            .iter()
            .map(|b| mix::binomial(&mu, b).unwrap())
            .sum();
        rows_ok &= total == 1u128 << mu.order();
    }
    check("binomial row sums equal 2^|mu|", rows_ok);

    // enumeration vs grouped-by-order recomputation of the sums
    let mut sums_ok = true;
    for mu in mix::representatives(3, max_order.min(20)).unwrap() {
        let (a1, a2) = mix::sub_index_sums(&mu).unwrap();
        let (b1, b2) = mix::sub_index_sums_grouped(&mu).unwrap();
        sums_ok &= (a1 - b1).abs() <= 1e-12 * a1.max(1.0);
        sums_ok &= (a2 - b2).abs() <= 1e-12 * a2.max(1.0);
    }
    check("sub-index sums match grouped recomputation", sums_ok);

    // fitted constant certifies the bounds with equality attained
    match mix::fit_bound_constant(sigma, max_order, 3) {
        Ok(c) => {
            let mut bound_ok = true;
            let mut attained = false;
            for mu in mix::representatives(3, max_order).unwrap() {
                let (s1, s2) = mix::sub_index_sums(&mu).unwrap();
                let b = c * (mu.order() as f64).powf(sigma - 1.0);
                bound_ok &= s1 <= b * (1.0 + 1e-12) && s2 <= b * (1.0 + 1e-12);
                attained |= s1 >= b * (1.0 - 1e-12) || s2 >= b * (1.0 - 1e-12);
            }
            check(
                &format!("sums bounded by {c:.6}·|mu|^{:.2} with equality", sigma - 1.0),
                bound_ok && attained,
            );
        }
        Err(e) => check(&format!("fit_bound_constant failed: {e}"), false),
    }
    (ok, lines)
}

/// Fit the Fourier-decay witness of a stored snapshot.
pub fn fit_gevrey_snapshot(path: &Path, window: Option<(usize, usize)>) -> Result<GevreyFit> {
    let snap = read_snapshot(path)?;
    let grid = snap.field.grid();
    let ops = SpectralOps::new(grid);
    let window = window.unwrap_or((grid.points() / 8, 3 * grid.points() / 8));
    let spec = ops.forward(&snap.field);
    fit_shell_decay(&shell_maxima(&spec), window)
}

/// Run the energy-identity check from a fresh scenario evolution; returns
/// one report per requested multi-index.
pub fn check_identity(
    config: &ExperimentConfig,
    mu_list: &[MultiIndex],
) -> Result<Vec<EnergyIdentityReport>> {
    let grid = config.grid_spec()?;
    let params = config.kernel_params()?;
    let assembler = CoefficientAssembler::new(grid, params)?;
    let mut solver_config = config.solver_config()?;
    // identity checks run on the nondivergence form the decomposition is
    // written in
    solver_config.form = RhsForm::Nondivergence;
    let solver = Solver::new(&assembler, solver_config)?;
    let f0 = build_scenario(config)?;
    let coeffs = assembler.assemble(&f0)?;
    let mut state = SolverState {
        t: 0.0,
        min_f: f0.min(),
        f: f0,
        coeffs,
    };
    // settle a few steps away from t = 0, then build the small-dt triple
    let dt0 = stable_dt(&state.coeffs, &grid, config.solver.cfl, config.solver.dt_max);
    for _ in 0..3 {
        state = solver.step(&state, dt0)?;
    }
    let dt = dt0 / 10.0;
    let s1 = solver.step(&state, dt)?;
    let s2 = solver.step(&s1, dt)?;
    mu_list
        .iter()
        .map(|mu| {
            energy_identity_check(
                &assembler,
                [&state, &s1, &s2],
                mu,
                config.diagnostics.sigma_list[0],
                config.diagnostics.b_const,
                config.mask_radius(),
            )
        })
        .collect()
}

/// One sweep point: the overridden parameter value and its run summary.
#[derive(Debug, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub directory: String,
    pub summary: RunSummary,
}

/// Run the config once per value of the swept parameter, each into its own
/// subdirectory. Supported keys: `gamma`, `cfl`, `t_end`, `n`.
pub fn sweep(config: &ExperimentConfig, key: &str, values: &[f64]) -> Result<Vec<SweepEntry>> {
    use rayon::prelude::*;
    let jobs: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            match key {
                "gamma" => c.kernel.gamma = v,
                "cfl" => c.solver.cfl = v,
                "t_end" => c.solver.t_end = v,
                "n" => c.grid.n = v as usize,
                other => {
                    return Err(Error::Config {
                        path: format!("sweep.{other}"),
                        message: "supported sweep keys: gamma, cfl, t_end, n".to_string(),
                    })
                }
            }
            let sub = format!("{}/{}_{}", config.output.directory, key, v);
            c.output.directory = sub;
            c.validate()?;
            Ok((v, c))
        })
        .collect::<Result<_>>()?;
    jobs.par_iter()
        .map(|(v, c)| {
            let summary = run_experiment(c)?;
            Ok(SweepEntry {
                value: *v,
                directory: c.output.directory.clone(),
                summary,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
d = 2
n = 32
l = 12.0

[kernel]
gamma = 0.0

[solver]
t_end = 0.01
output_every = 1

[scenario]
name = "maxwellian"
temperature = 0.5

[output]
directory = "out"
"#;

    #[test]
    fn parse_minimal_config_with_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.solver.form, "flux");
        assert_eq!(c.solver.cfl, 0.5);
        assert_eq!(c.diagnostics.max_order, 4);
        assert_eq!(c.mask_radius(), 3.0);
        assert_eq!(c.fit_window(), (4, 12));
        assert!(c.solver.recompute_coeffs_every_stage);
    }

    #[test]
    fn config_round_trip() {
        let c = parse_config(MINIMAL).unwrap();
        let text = toml::to_string(&c).unwrap();
        let c2 = parse_config(&text).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn gamma_outside_range_rejected() {
        let text = MINIMAL.replace("gamma = 0.0", "gamma = 1.5");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("[kernel]", "[kernel]\ntypo_key = 1.0");
        assert!(parse_config(&text).is_err());
        let text2 = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(parse_config(&text2).is_err());
    }

    #[test]
    fn scenario_validation() {
        let text = MINIMAL.replace("name = \"maxwellian\"", "name = \"unknown_thing\"");
        assert!(parse_config(&text).is_err());
        let text = MINIMAL.replace(
            "name = \"maxwellian\"\ntemperature = 0.5",
            "name = \"anisotropic_gaussian\"",
        );
        assert!(parse_config(&text).is_err(), "missing temperatures");
    }

    #[test]
    fn scenario_moments() {
        use crate::grid::moments;
        let c = parse_config(MINIMAL).unwrap();
        let f = build_scenario(&c).unwrap();
        let m = moments(&f);
        assert!((m.mass - 1.0).abs() < 1e-8);
        assert!((m.energy - 0.5).abs() < 1e-8);

        // anisotropic covariance
        let text = MINIMAL.replace(
            "name = \"maxwellian\"\ntemperature = 0.5",
            "name = \"anisotropic_gaussian\"\ntemperatures = [1.0, 0.5]",
        );
        let c = parse_config(&text).unwrap();
        let f = build_scenario(&c).unwrap();
        let m = moments(&f);
        use crate::grid::sym_index;
        assert!((m.second[sym_index(2, 0, 0)] - 1.0).abs() < 1e-6);
        assert!((m.second[sym_index(2, 1, 1)] - 0.5).abs() < 1e-6);

        // zero-separation mixture degenerates to one Gaussian
        let text = MINIMAL.replace(
            "name = \"maxwellian\"\ntemperature = 0.5",
            "name = \"gaussian_mixture\"\ntemperature = 0.5\nseparation = 0.0",
        );
        let c2 = parse_config(&text).unwrap();
        let fm = build_scenario(&c2).unwrap();
        let c1 = parse_config(MINIMAL).unwrap();
        let fg = build_scenario(&c1).unwrap();
        for (a, b) in fm.values().iter().zip(fg.values()) {
            assert!((a - b).abs() < 1e-14);
        }

        // bump: compact support and exact discrete mass
        let text = MINIMAL.replace(
            "name = \"maxwellian\"\ntemperature = 0.5",
            "name = \"bump\"\nradius = 2.0",
        );
        let c3 = parse_config(&text).unwrap();
        let fb = build_scenario(&c3).unwrap();
        let m = moments(&fb);
        assert!((m.mass - 1.0).abs() < 1e-13);
        let grid = fb.grid();
        for i in 0..grid.size() {
            if grid.radius2(i) >= 4.0 {
                assert_eq!(fb.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn snapshot_round_trip_is_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("snap.bin");
        let grid = VelocityGrid::new(2, 16, 8.0).unwrap();
        let f = Field::from_fn(grid, |p| (p[0] * 1.7 - p[1] * 0.3).sin() * 0.25 + 1e-17);
        write_snapshot(&path, &f, 0.75, 1.0).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.t, 0.75);
        assert_eq!(snap.gamma, 1.0);
        assert_eq!(snap.field.grid(), grid);
        for (a, b) in snap.field.values().iter().zip(f.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // header checks
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(read_snapshot(&path).is_err());
    }

    #[test]
    fn verify_combinatorics_passes() {
        let (ok, lines) = verify_combinatorics(12, 2.0);
        assert!(ok, "{lines:?}");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn run_experiment_writes_artifacts_and_is_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let dir1 = tmp.path().join("a");
        let dir2 = tmp.path().join("b");
        let mut c = parse_config(MINIMAL).unwrap();
        c.diagnostics.max_order = 2;
        c.output.snapshot_every = 1;
        c.output.directory = dir1.display().to_string();
        let s1 = run_experiment(&c).unwrap();
        assert!(s1.pass_mass_conservation, "drift {}", s1.mass_rel_drift);
        assert!(s1.pass_entropy_monotone);
        assert!(s1.pass_ellipticity_positive);
        assert!(!s1.incomplete);
        for name in [
            "conservation.csv",
            "norms.csv",
            "gevrey.csv",
            "identity.csv",
            "summary.json",
            "snapshot_0000.bin",
        ] {
            assert!(dir1.join(name).exists(), "{name} missing");
        }
        c.output.directory = dir2.display().to_string();
        let _s2 = run_experiment(&c).unwrap();
        for name in ["conservation.csv", "norms.csv", "gevrey.csv", "identity.csv"] {
            let a = fs::read(dir1.join(name)).unwrap();
            let b = fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn zero_t_end_single_row_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = parse_config(MINIMAL).unwrap();
        c.solver.t_end = 0.0;
        c.diagnostics.max_order = 2;
        c.output.directory = tmp.path().join("z").display().to_string();
        let s = run_experiment(&c).unwrap();
        assert_eq!(s.steps_taken, 0);
        let text = fs::read_to_string(Path::new(&c.output.directory).join("conservation.csv"))
            .unwrap();
        assert_eq!(text.lines().count(), 2); // header + t = 0 row
    }
}
