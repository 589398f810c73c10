//! Experiment drivers: the physical-to-dimensionless parameter builder,
//! Maxwell-versus-envelope convergence studies, cross-model comparisons and
//! the serializable run configurations used by the command-line tool.

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{run_envelope, BlowupThresholds, RunReport, RunStatus, SeriesRow};
use crate::dispersion::{lift_1d, Branch, MediumParams, NonlinearityKind};
use crate::envelope::{Carrier, EnvelopeSolver, EnvelopeState, ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::fit::{fit_improved, FitResult};
use crate::grid::{Fft, GridSpec, SpectralField};
use crate::maxwell::{carrier_mode, demodulate, init_wave_packet, MaxwellSolver, MaxwellState, WavePacketSpec};

/// Physical constants of a Lorentz medium and a pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Carrier period scale `t_bar`.
    pub tbar: f64,
    /// Pulse duration `T_bar`.
    pub big_t: f64,
    /// Resonance frequency `Omega_0`.
    pub omega0: f64,
    /// Damping frequency `Omega_1`.
    pub omega1: f64,
    /// Coupling `b`.
    pub b_coupling: f64,
    /// Cubic coefficient `a3`.
    pub a3: f64,
    /// Higher-order coefficient `a5`.
    pub a5: f64,
    /// Damping exponent `p`, with `Omega_1 = eps^(p+2) w1 / t_bar`.
    pub p: f64,
    /// Kind used when `a5 > 0`.
    pub kind: NonlinearityKind,
}

/// Dimensionless `(eps, medium)`: `eps = t_bar/T_bar`, `w0 = t_bar Omega_0`,
/// `gamma = b t_bar^2`, `P0 = 1/(T_bar sqrt(a3))` and `a~ eps^r = a5 P0^2/a3`.
/// `r` is chosen so that `a~ = 1` when that ratio lies in `(0, 1)`, else `r = 1`.
pub fn build_medium_from_physical(ph: &PhysicalParams) -> Result<(f64, MediumParams)> {
    for (n, v) in [("tbar", ph.tbar), ("big_t", ph.big_t), ("omega0", ph.omega0), ("b_coupling", ph.b_coupling), ("a3", ph.a3), ("p", ph.p)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{n} = {v} must be > 0")));
        }
    }
    if !(ph.omega1 >= 0.0 && ph.a5 >= 0.0) {
        return Err(Error::InvalidParameter("omega1 and a5 must be >= 0".into()));
    }
    if ph.big_t <= ph.tbar {
        return Err(Error::InvalidParameter(format!(
            "T_bar = {} must exceed t_bar = {}: eps >= 1 leaves the asymptotic regime",
            ph.big_t, ph.tbar
        )));
    }
    let eps = ph.tbar / ph.big_t;
    let p0 = 1.0 / (ph.big_t * ph.a3.sqrt());
    let ratio = ph.a5 * p0 * p0 / ph.a3;
    let (kind, r, a_tilde) = if ratio == 0.0 {
        (NonlinearityKind::Cubic, 1.0, 0.0)
    } else if ratio < 1.0 {
        (ph.kind, ratio.ln() / eps.ln(), 1.0)
    } else {
        (ph.kind, 1.0, ratio / eps)
    };
    let m = MediumParams {
        gamma: ph.b_coupling * ph.tbar * ph.tbar,
        omega0: ph.tbar * ph.omega0,
        omega1: ph.omega1 * ph.tbar / eps.powf(ph.p + 2.0),
        p: ph.p,
        nonlinearity: kind,
        r,
        a_tilde,
        ionization: None,
    };
    m.validate()?;
    Ok((eps, m))
}

/// Inverse of [`build_medium_from_physical`] given `t_bar` and `a3`.
pub fn physical_from_medium(eps: f64, m: &MediumParams, tbar: f64, a3: f64, kind: NonlinearityKind) -> PhysicalParams {
    let big_t = tbar / eps;
    let p0 = 1.0 / (big_t * a3.sqrt());
    PhysicalParams {
        tbar,
        big_t,
        omega0: m.omega0 / tbar,
        omega1: m.omega1 * eps.powf(m.p + 2.0) / tbar,
        b_coupling: m.gamma / (tbar * tbar),
        a3,
        a5: m.a_tilde * eps.powf(m.r) * a3 / (p0 * p0),
        p: m.p,
        kind,
    }
}

/// Grid section of a config: one entry per axis, `(x, z)` in 2D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: Vec<usize>,
    pub length: Vec<f64>,
}

impl GridConfig {
    pub fn build(&self) -> Result<GridSpec> {
        GridSpec::new(&self.n, &self.length)
    }
}

fn default_zero_vec() -> Vec<f64> {
    Vec::new()
}

/// Gaussian packet `A exp(-|x - c|^2 / w^2) e^{i kick.x}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketConfig {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default = "default_zero_vec")]
    pub center: Vec<f64>,
    #[serde(default = "default_zero_vec")]
    pub kick: Vec<f64>,
    /// Carrier wavenumber (Maxwell and dimensional models).
    #[serde(default)]
    pub carrier_k: Option<f64>,
    /// Required whenever a carrier is used.
    #[serde(default)]
    pub branch: Option<Branch>,
    /// Second component weight for the vector model, `v = g (cos, sin)`.
    #[serde(default)]
    pub polarization_angle: Option<f64>,
}

impl PacketConfig {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self { amplitude, width, center: vec![], kick: vec![], carrier_k: None, branch: None, polarization_angle: None }
    }

    /// Scalar profile on `grid`.
    pub fn profile(&self, grid: &GridSpec) -> Result<Vec<Complex64>> {
        let d = grid.dims();
        let pad = |v: &[f64]| -> Result<Vec<f64>> {
            match v.len() {
                0 => Ok(vec![0.0; d]),
                l if l == d => Ok(v.to_vec()),
                l => Err(Error::DimensionMismatch { expected: d, got: l }),
            }
        };
        let (c, k) = (pad(&self.center)?, pad(&self.kick)?);
        if !(self.width > 0.0) {
            return Err(Error::InvalidParameter(format!("packet width {} must be > 0", self.width)));
        }
        Ok(grid
            .points()
            .iter()
            .map(|x| {
                let r2: f64 = (0..d).map(|a| (x[a] - c[a]).powi(2)).sum();
                let ph: f64 = (0..d).map(|a| k[a] * x[a]).sum();
                Complex64::from_polar(self.amplitude * (-r2 / (self.width * self.width)).exp(), ph)
            })
            .collect())
    }

    /// Initial envelope field with the component count `model` expects.
    pub fn field(&self, grid: &GridSpec, model: ModelKind) -> Result<SpectralField> {
        let g = self.profile(grid)?;
        let data = if model == ModelKind::FamilyVect {
            let th = self.polarization_angle.unwrap_or(0.0);
            vec![g.iter().map(|z| z * th.cos()).collect(), g.iter().map(|z| z * th.sin()).collect()]
        } else {
            vec![g]
        };
        let f = SpectralField { grid: grid.clone(), data };
        f.check_boundary_decay()?;
        Ok(f)
    }

    pub fn carrier(&self) -> Result<(f64, Branch)> {
        let k = self.carrier_k.ok_or_else(|| Error::InvalidParameter("packet.carrier_k is required".into()))?;
        let b = self.branch.ok_or_else(|| Error::InvalidParameter("packet.branch is required (one of ++, +-, -+, --)".into()))?;
        Ok((k, b))
    }
}

fn default_snapshot() -> usize {
    0
}

/// `simulate maxwell` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxwellRunConfig {
    pub grid: GridConfig,
    pub epsilon: f64,
    pub medium: MediumParams,
    pub packet: PacketConfig,
    pub dt: f64,
    pub t_final: f64,
    /// Steps between snapshots; 0 writes only the final state.
    #[serde(default = "default_snapshot")]
    pub snapshot_every: usize,
    #[serde(default = "default_sample")]
    pub sample_every: usize,
}

fn default_sample() -> usize {
    10
}

/// Time series and snapshots of a Maxwell run.
#[derive(Clone, Debug)]
pub struct MaxwellRun {
    /// Rows `(t, L2^2, energy, max|E|, max rho)`.
    pub series: Vec<[f64; 5]>,
    pub snapshots: Vec<MaxwellState>,
    pub final_state: MaxwellState,
    pub status: RunStatus,
    pub message: Option<String>,
}

/// Runs the Maxwell oracle from a config.
pub fn simulate_maxwell(cfg: &MaxwellRunConfig) -> Result<MaxwellRun> {
    let grid = cfg.grid.build()?;
    let (k, branch) = cfg.packet.carrier()?;
    let spec = WavePacketSpec { envelope: cfg.packet.profile(&grid)?, carrier_k: k, branch, polarization_defect: None };
    let mut state = init_wave_packet(&spec, &cfg.medium, cfg.epsilon, &grid)?;
    let solver = MaxwellSolver::new(&grid, &cfg.medium, cfg.epsilon, cfg.dt, k)?;
    let row = |s: &MaxwellState| [s.time, s.u.l2_norm_sq(), solver.energy(s), s.max_e(), s.max_rho()];
    let mut series = vec![row(&state)];
    let mut snapshots = Vec::new();
    let steps = (cfg.t_final / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let (mut status, mut message) = (RunStatus::Completed, None);
    for i in 1..=steps {
        if let Err(e) = solver.step(&mut state) {
            status = RunStatus::Aborted;
            message = Some(e.to_string());
            break;
        }
        if i % cfg.sample_every.max(1) == 0 || i == steps {
            series.push(row(&state));
        }
        if cfg.snapshot_every > 0 && i % cfg.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(MaxwellRun { series, snapshots, final_state: state, status, message })
}

/// Carrier section for dimensional models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierConfig {
    pub medium: MediumParams,
}

/// `simulate envelope` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub packet: PacketConfig,
    #[serde(default)]
    pub medium: Option<MediumParams>,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_sample")]
    pub sample_every: usize,
    #[serde(default = "default_snapshot")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub thresholds: Option<BlowupThresholds>,
}

impl EnvelopeRunConfig {
    pub fn carrier(&self) -> Result<Option<Carrier>> {
        if !self.model.model.is_dimensional() {
            return Ok(None);
        }
        let (k0, branch) = self.packet.carrier()?;
        let medium = self.medium.clone().ok_or_else(|| Error::InvalidParameter(format!("model {} needs a [medium] section", self.model.model)))?;
        Ok(Some(Carrier { medium, k0, branch }))
    }
}

/// Result of an envelope run.
#[derive(Clone, Debug)]
pub struct EnvelopeRun {
    pub report: RunReport,
    pub snapshots: Vec<EnvelopeState>,
    pub final_state: EnvelopeState,
    pub wall_seconds: f64,
}

/// Runs one envelope model from a config.
pub fn simulate_envelope(cfg: &EnvelopeRunConfig) -> Result<EnvelopeRun> {
    let start = Instant::now();
    let grid = cfg.grid.build()?;
    let carrier = cfg.carrier()?;
    let solver = EnvelopeSolver::new(&grid, &cfg.model, carrier.as_ref(), cfg.dt)?;
    let mut state = solver.initial_state(&cfg.packet.field(&grid, cfg.model.model)?)?;
    let th = cfg.thresholds.unwrap_or_default();
    let mut snapshots = Vec::new();
    let report = if cfg.snapshot_every > 0 {
        let mut rows: Vec<SeriesRow> = Vec::new();
        let mut report = None;
        let mut t = 0.0;
        let span = cfg.dt * cfg.snapshot_every as f64;
        while t < cfg.t_final - 1e-12 {
            let next = (t + span).min(cfg.t_final);
            let part = run_envelope(&solver, &mut state, next, cfg.sample_every, th);
            let skip = if rows.is_empty() { 0 } else { 1 };
            rows.extend(part.series.iter().skip(skip).cloned());
            snapshots.push(state.clone());
            let stop = part.status != RunStatus::Completed;
            report = Some(part);
            t = next;
            if stop {
                break;
            }
        }
        let last = report.unwrap_or_else(|| RunReport::new(vec![], th));
        let mut full = RunReport::new(rows, th);
        if last.status != RunStatus::Completed {
            full.status = last.status;
            full.message = last.message;
        }
        full
    } else {
        run_envelope(&solver, &mut state, cfg.t_final, cfg.sample_every, th)
    };
    Ok(EnvelopeRun { report, snapshots, final_state: state, wall_seconds: start.elapsed().as_secs_f64() })
}

fn default_horizon() -> f64 {
    0.5
}

fn default_dt_ratio() -> f64 {
    0.125
}

fn default_snapshots() -> usize {
    4
}

fn default_fit_width() -> f64 {
    1.5
}

/// Maxwell-versus-envelope study across `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub n: usize,
    pub length: f64,
    pub medium: MediumParams,
    pub k0: f64,
    pub branch: Branch,
    pub amplitude: f64,
    pub width: f64,
    pub epsilons: Vec<f64>,
    pub models: Vec<ModelKind>,
    /// Horizon `T`; runs stop at `T/eps`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Step size over `eps` for every solver.
    #[serde(default = "default_dt_ratio")]
    pub dt_ratio: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Rational-dispersion fit; computed on the window `k0 +- fit_half_width` when absent.
    #[serde(default)]
    pub fit: Option<FitResult>,
    #[serde(default = "default_fit_width")]
    pub fit_half_width: f64,
    #[serde(default)]
    pub error_norm: ErrorNorm,
}

/// Where the oracle and a model are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    /// `max |U - 2 Re(u e^{i(kx - wt)/eps})|` over the real field, harmonics included.
    #[default]
    Physical,
    /// `max |demod(U) e^{iwt/eps} - u|` inside the carrier band.
    Envelope,
}

/// Errors and fitted slopes of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    /// Max-norm error per model, aligned with `epsilons`; `NaN` for failed cells.
    pub errors: BTreeMap<String, Vec<f64>>,
    pub slopes: BTreeMap<String, Option<f64>>,
    pub runtime_seconds: Vec<f64>,
    pub failures: Vec<String>,
}

/// Least-squares slope of `ln y` against `ln x`; needs three finite points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite()).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Envelope of the Maxwell state in the carrier frame: `demod(U) e^{i w t/eps}`.
fn maxwell_envelope(state: &MaxwellState, k0: f64, omega: f64, fft: &Fft) -> SpectralField {
    let mut env = demodulate(state, k0, fft);
    let ph = Complex64::from_polar(1.0, omega * state.time / state.epsilon);
    env.data.iter_mut().flatten().for_each(|z| *z *= ph);
    env
}

/// Four-component profile of a model state.
fn model_profile(solver: &EnvelopeSolver, state: &EnvelopeState, r: &nalgebra::Vector4<Complex64>) -> Vec<Vec<Complex64>> {
    if solver.config.model == ModelKind::EnvelopeExact {
        state.u.data.clone()
    } else {
        (0..4).map(|k| state.u.data[0].iter().map(|a| a * r[k]).collect()).collect()
    }
}

fn convergence_cell(cfg: &ConvergenceConfig, eps: f64, fit: &FitResult) -> Result<BTreeMap<String, f64>> {
    let grid = GridSpec::new_1d(cfg.n, cfg.length)?;
    carrier_mode(cfg.k0, eps, &grid)?;
    let fft = Fft::new(&grid);
    let packet = PacketConfig::gaussian(cfg.amplitude, cfg.width);
    let profile = packet.profile(&grid)?;
    let spec = WavePacketSpec { envelope: profile.clone(), carrier_k: cfg.k0, branch: cfg.branch, polarization_defect: None };
    let dt = cfg.dt_ratio * eps;
    let mut mstate = init_wave_packet(&spec, &cfg.medium, eps, &grid)?;
    let msolver = MaxwellSolver::new(&grid, &cfg.medium, eps, dt, cfg.k0)?;
    let carrier = Carrier { medium: cfg.medium.clone(), k0: cfg.k0, branch: cfg.branch };
    let r = lift_1d(cfg.k0, cfg.branch, &cfg.medium)?;
    let init = SpectralField { grid: grid.clone(), data: vec![profile] };
    let mut models = Vec::new();
    for &kind in &cfg.models {
        let mut mc = ModelConfig::new(kind, eps);
        if matches!(kind, ModelKind::NlsImproved | ModelKind::NlsPolarized) {
            mc.fit = Some(fit.clone());
        }
        let s = EnvelopeSolver::new(&grid, &mc, Some(&carrier), dt)?;
        let st = s.initial_state(&init)?;
        models.push((kind, s, st, 0.0f64));
    }
    let omega = crate::dispersion::branch_omega(cfg.k0, cfg.branch, &cfg.medium);
    let snaps = cfg.snapshots.max(1);
    for j in 1..=snaps {
        let t = cfg.horizon / eps * j as f64 / snaps as f64;
        msolver.advance_to(&mut mstate, t)?;
        let env = match cfg.error_norm {
            ErrorNorm::Envelope => maxwell_envelope(&mstate, cfg.k0, omega, &fft),
            ErrorNorm::Physical => SpectralField::zeros(&grid, 0),
        };
        let phase: Vec<Complex64> = grid.coords(0).iter().map(|x| Complex64::from_polar(1.0, (cfg.k0 * x - omega * t) / eps)).collect();
        models.par_iter_mut().try_for_each(|(_, s, st, err)| -> Result<()> {
            s.advance_to(st, t)?;
            let prof = model_profile(s, st, &r);
            let e = match cfg.error_norm {
                ErrorNorm::Physical => mstate
                    .u
                    .data
                    .iter()
                    .zip(&prof)
                    .flat_map(|(a, b)| a.iter().zip(b).zip(&phase).map(|((x, y), ph)| (x.re - 2.0 * (y * ph).re).abs()))
                    .fold(0.0, f64::max),
                ErrorNorm::Envelope => env
                    .data
                    .iter()
                    .zip(&prof)
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
                    .fold(0.0, f64::max),
            };
            *err = err.max(e);
            Ok(())
        })?;
    }
    Ok(models.into_iter().map(|(k, _, _, e)| (k.name().to_string(), e)).collect())
}

/// Runs the oracle and every requested model for each `eps`, in parallel over `eps`.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.epsilons.is_empty() {
        return Err(Error::InvalidParameter("epsilons must be nonempty".into()));
    }
    if let Some(bad) = cfg.models.iter().find(|m| !m.is_dimensional()) {
        return Err(Error::InvalidParameter(format!("model {bad} has no Maxwell counterpart; use dimensional models")));
    }
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let needs_fit = cfg.models.iter().any(|m| matches!(m, ModelKind::NlsImproved | ModelKind::NlsPolarized));
    let fit = match (&cfg.fit, needs_fit) {
        (Some(f), _) => f.clone(),
        (None, true) => fit_improved(cfg.k0, cfg.fit_half_width, cfg.branch, &cfg.medium, 1)?,
        (None, false) => FitResult::zero(1),
    };
    let cells: Vec<(f64, Result<BTreeMap<String, f64>>, f64)> = eps
        .par_iter()
        .map(|&e| {
            let start = Instant::now();
            let r = convergence_cell(cfg, e, &fit);
            (e, r, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut errors: BTreeMap<String, Vec<f64>> = cfg.models.iter().map(|m| (m.name().to_string(), Vec::new())).collect();
    let mut failures = Vec::new();
    let mut runtime = Vec::new();
    for (e, r, secs) in cells {
        runtime.push(secs);
        match r {
            Ok(map) => {
                for (k, v) in errors.iter_mut() {
                    v.push(map.get(k).copied().unwrap_or(f64::NAN));
                }
            }
            Err(err) => {
                failures.push(format!("eps = {e}: {err}"));
                errors.values_mut().for_each(|v| v.push(f64::NAN));
            }
        }
    }
    let slopes = errors.iter().map(|(k, v)| (k.clone(), loglog_slope(&eps, v))).collect();
    Ok(ConvergenceReport { epsilons: eps, errors, slopes, runtime_seconds: runtime, failures })
}

/// Cross-model experiment on a shared packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub grid: GridConfig,
    pub packet: PacketConfig,
    #[serde(default)]
    pub medium: Option<MediumParams>,
    pub models: Vec<ModelConfig>,
    /// Laboratory time; moving-frame models run to `eps t_final`.
    pub t_final: f64,
    /// Laboratory step; moving-frame models use `eps dt`.
    pub dt: f64,
    #[serde(default = "default_sample")]
    pub sample_every: usize,
    #[serde(default)]
    pub thresholds: Option<BlowupThresholds>,
}

/// One row of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub status: Option<RunStatus>,
    pub final_time: f64,
    pub mass: f64,
    pub energy: f64,
    pub max_abs: f64,
    pub grad_norm: f64,
    pub max_rho: f64,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

/// Runs every model of `cfg`, one row each, in input order.
pub fn compare_models(cfg: &CompareConfig) -> Result<Vec<CompareRow>> {
    let grid = cfg.grid.build()?;
    let th = cfg.thresholds.unwrap_or_default();
    let rows = cfg
        .models
        .par_iter()
        .map(|mc| {
            let start = Instant::now();
            let name = mc.model.name().to_string();
            let run = || -> Result<RunReport> {
                let scale = if mc.model.is_moving_frame() { mc.epsilon } else { 1.0 };
                let carrier = if mc.model.is_dimensional() {
                    let (k0, branch) = cfg.packet.carrier()?;
                    let medium = cfg.medium.clone().ok_or_else(|| Error::InvalidParameter("dimensional models need a medium".into()))?;
                    Some(Carrier { medium, k0, branch })
                } else {
                    None
                };
                let s = EnvelopeSolver::new(&grid, mc, carrier.as_ref(), cfg.dt * scale)?;
                let mut st = s.initial_state(&cfg.packet.field(&grid, mc.model)?)?;
                Ok(run_envelope(&s, &mut st, cfg.t_final * scale, cfg.sample_every, th))
            };
            match run() {
                Ok(rep) => {
                    let last = rep.series.last().cloned().expect("series has the initial sample");
                    CompareRow {
                        model: name,
                        status: Some(rep.status),
                        final_time: last.t,
                        mass: last.mass,
                        energy: last.energy,
                        max_abs: last.max_abs,
                        grad_norm: last.grad_norm,
                        max_rho: last.max_rho,
                        wall_seconds: start.elapsed().as_secs_f64(),
                        error: None,
                    }
                }
                Err(e) => CompareRow {
                    model: name,
                    status: None,
                    final_time: f64::NAN,
                    mass: f64::NAN,
                    energy: f64::NAN,
                    max_abs: f64::NAN,
                    grad_norm: f64::NAN,
                    max_rho: f64::NAN,
                    wall_seconds: start.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
