//! Conservation laws, dissipation identities, bounds and blow-up indicators
//! computed from states and time series.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envelope::{EnvelopeSolver, EnvelopeState};
use crate::error::{Error, Result};

/// Default blow-up heuristics: gradient growth and amplitude growth factors.
pub const GRAD_GROWTH: f64 = 1e3;
pub const AMPLITUDE_GROWTH: f64 = 1e6;

/// Outcome of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowupSuspected,
    Aborted,
}

/// One sample of a time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub mass: f64,
    /// `NaN` when the model has no energy functional.
    pub energy: f64,
    pub momentum: Vec<f64>,
    pub max_abs: f64,
    pub grad_norm: f64,
    pub max_rho: f64,
    /// `int |u|^4`, used by the damped energy identity.
    pub l4: f64,
}

/// Thresholds of the blow-up heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupThresholds {
    pub grad_growth: f64,
    pub amplitude_growth: f64,
}

impl Default for BlowupThresholds {
    fn default() -> Self {
        Self { grad_growth: GRAD_GROWTH, amplitude_growth: AMPLITUDE_GROWTH }
    }
}

/// Time series, status and relative drifts of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub series: Vec<SeriesRow>,
    pub status: RunStatus,
    pub drift: BTreeMap<String, f64>,
    pub thresholds: BlowupThresholds,
    pub message: Option<String>,
}

impl RunReport {
    pub fn new(series: Vec<SeriesRow>, thresholds: BlowupThresholds) -> Self {
        let mut r = Self { series, status: RunStatus::Completed, drift: BTreeMap::new(), thresholds, message: None };
        r.status = blowup_detect(&r);
        r.drift = drifts(&r.series);
        r
    }

    /// Writes `t, mass, energy, momentum_*, max_abs, grad_norm, max_rho, l4`.
    pub fn write_series_csv<W: Write>(&self, w: W) -> Result<()> {
        write_series(&self.series, w)
    }
}

/// Relative drift `max_t |q(t) - q(0)| / |q(0)|` of mass and energy.
pub fn drifts(series: &[SeriesRow]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(first) = series.first() {
        let rel = |f: &dyn Fn(&SeriesRow) -> f64| {
            let q0 = f(first);
            series.iter().map(|r| (f(r) - q0).abs()).fold(0.0, f64::max) / q0.abs().max(f64::MIN_POSITIVE)
        };
        out.insert("mass".to_string(), rel(&|r| r.mass));
        if first.energy.is_finite() {
            out.insert("energy".to_string(), rel(&|r| r.energy));
        }
    }
    out
}

/// Discrete `sum |u|^2 dV`.
pub fn mass(state: &EnvelopeState) -> f64 {
    state.u.l2_norm_sq()
}

/// Model-matched energy; see [`EnvelopeSolver::energy`].
pub fn energy(state: &EnvelopeState, solver: &EnvelopeSolver) -> Result<f64> {
    solver.energy(state)
}

/// `Im int grad u conj(u)` per axis.
pub fn momentum(state: &EnvelopeState, solver: &EnvelopeSolver) -> Vec<f64> {
    solver.momentum(state)
}

/// Conserved quadratic form of the rational-dispersion models.
pub fn p2_form(state: &EnvelopeState, solver: &EnvelopeSolver) -> f64 {
    solver.p2_form(state)
}

/// `int |u|^4 dV` (summed over components).
pub fn l4(state: &EnvelopeState) -> f64 {
    let g = state.grid();
    (0..g.size()).map(|j| state.u.data.iter().map(|c| c[j].norm_sqr()).sum::<f64>().powi(2)).sum::<f64>() * g.cell_volume()
}

/// Samples every diagnostic of a state.
pub fn sample(state: &EnvelopeState, solver: &EnvelopeSolver) -> SeriesRow {
    SeriesRow {
        t: state.time,
        mass: mass(state),
        energy: solver.energy(state).unwrap_or(f64::NAN),
        momentum: solver.momentum(state),
        max_abs: state.u.max_abs(),
        grad_norm: solver.grad_norm(state),
        max_rho: state.density.as_ref().map_or(0.0, |r| r.iter().cloned().fold(0.0, f64::max)),
        l4: l4(state),
    }
}

/// H1 bound for the cubic/quintic family: `sqrt(2 E0 + (1 + 3/(16 eps^r)) M0)`.
pub fn h1_bound_cq(mass0: f64, energy0: f64, eps: f64, r: f64) -> Result<f64> {
    let er = eps.powf(r);
    let rad = 2.0 * energy0 + (1.0 + 3.0 / (16.0 * er)) * mass0;
    if rad < 0.0 || !rad.is_finite() {
        return Err(Error::Precondition(format!("negative radicand {rad} in the H1 bound")));
    }
    Ok(rad.sqrt())
}

/// `BlowupSuspected` iff the gradient norm or the amplitude crossed its threshold.
pub fn blowup_detect(report: &RunReport) -> RunStatus {
    if report.status == RunStatus::Aborted {
        return RunStatus::Aborted;
    }
    let Some(first) = report.series.first() else {
        return RunStatus::Completed;
    };
    let th = report.thresholds;
    let hit = report
        .series
        .iter()
        .any(|r| r.grad_norm > th.grad_growth * first.grad_norm || r.max_abs > th.amplitude_growth * first.max_abs || !r.max_abs.is_finite());
    if hit {
        RunStatus::BlowupSuspected
    } else {
        RunStatus::Completed
    }
}

/// Largest residual of `dE/dt + alpha2 (||grad v||^2 - int |v|^4) = 0` by
/// central differences, relative to `max |dE/dt|` or 1.
pub fn rg7_residual(series: &[SeriesRow], alpha2: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for w in series.windows(3) {
        let de = (w[2].energy - w[0].energy) / (w[2].t - w[0].t);
        let rhs = alpha2 * (w[1].grad_norm * w[1].grad_norm - w[1].l4);
        worst = worst.max((de + rhs).abs());
        scale = scale.max(de.abs());
    }
    worst / scale
}

/// Runs `solver` to `t_final`, sampling every `sample_every` steps and halting
/// on suspected blow-up; a non-finite state yields status `Aborted`.
pub fn run_envelope(
    solver: &EnvelopeSolver,
    state: &mut EnvelopeState,
    t_final: f64,
    sample_every: usize,
    thresholds: BlowupThresholds,
) -> RunReport {
    let every = sample_every.max(1);
    let mut series = vec![sample(state, solver)];
    let (g0, a0) = (series[0].grad_norm, series[0].max_abs);
    let steps = ((t_final - state.time) / solver.dt - 1e-9).ceil().max(0.0) as usize;
    let mut status = RunStatus::Completed;
    let mut message = None;
    for i in 1..=steps {
        if let Err(e) = solver.step(state) {
            let hist: Vec<String> = series.iter().rev().take(5).map(|r| format!("t={:.4e} max|u|={:.4e}", r.t, r.max_abs)).collect();
            message = Some(format!("{e}; recent max|u|: {}", hist.join(", ")));
            status = RunStatus::Aborted;
            break;
        }
        if i % every == 0 || i == steps {
            let row = sample(state, solver);
            let hit = row.grad_norm > thresholds.grad_growth * g0 || row.max_abs > thresholds.amplitude_growth * a0;
            series.push(row);
            if hit {
                status = RunStatus::BlowupSuspected;
                message = Some(format!("blow-up suspected at t = {}", state.time));
                break;
            }
        }
    }
    let mut report = RunReport::new(series, thresholds);
    if status != RunStatus::Completed {
        report.status = status;
    }
    report.message = message;
    report
}

fn write_series<W: Write>(series: &[SeriesRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let d = series.first().map_or(0, |r| r.momentum.len());
    let mut header = vec!["t".to_string(), "mass".into(), "energy".into()];
    header.extend((0..d).map(|a| format!("momentum_{a}")));
    header.extend(["max_abs", "grad_norm", "max_rho", "l4"].map(String::from));
    wr.write_record(&header)?;
    for r in series {
        let mut rec = vec![r.t, r.mass, r.energy];
        rec.extend(&r.momentum);
        rec.extend([r.max_abs, r.grad_norm, r.max_rho, r.l4]);
        wr.write_record(rec.iter().map(|v| format!("{v:e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a series CSV to a file.
pub fn write_series_file(series: &[SeriesRow], path: &Path) -> Result<()> {
    write_series(series, std::fs::File::create(path)?)
}

/// Reads a series written by [`RunReport::write_series_csv`]; missing columns become `NaN`.
pub fn read_series<R: Read>(r: R) -> Result<Vec<SeriesRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let t_i = idx("t").ok_or_else(|| Error::InvalidParameter("series has no 't' column".into()))?;
    let mass_i = idx("mass").or_else(|| idx("l2"));
    let cols = |n: &str| idx(n);
    let mom: Vec<usize> = (0..).map_while(|a| idx(&format!("momentum_{a}"))).collect();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: Option<usize>| -> Result<f64> {
            match i {
                Some(i) => rec[i].trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad number '{}': {e}", &rec[i]))),
                None => Ok(f64::NAN),
            }
        };
        out.push(SeriesRow {
            t: get(Some(t_i))?,
            mass: get(mass_i)?,
            energy: get(cols("energy"))?,
            momentum: mom.iter().map(|&i| get(Some(i))).collect::<Result<_>>()?,
            max_abs: get(cols("max_abs").or_else(|| cols("max_e")))?,
            grad_norm: get(cols("grad_norm"))?,
            max_rho: get(cols("max_rho"))?,
            l4: get(cols("l4"))?,
        });
    }
    if out.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidParameter("series times must be strictly increasing".into()));
    }
    Ok(out)
}

/// Expected behavior of the recorded invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Mass and energy conserved.
    Conservative,
    /// Mass nonincreasing, density nondecreasing.
    Dissipative,
    /// `mass(t) = e^{-2 alpha2 t} mass(0)`.
    Damped { alpha2: f64 },
}

/// One line of the diagnose table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Recomputes drifts or monotonicity defects of a recorded series.
pub fn diagnose(series: &[SeriesRow], expect: Expectation, mass_tol: f64, energy_tol: f64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |name: &str, value: f64, tol: f64| {
        out.push(CheckResult { name: name.to_string(), value, tolerance: tol, pass: value.is_finite() && value <= tol })
    };
    let Some(first) = series.first() else {
        push("nonempty_series", f64::INFINITY, 0.0);
        return out;
    };
    match expect {
        Expectation::Conservative => {
            let d = drifts(series);
            push("mass_drift", d["mass"], mass_tol);
            if let Some(e) = d.get("energy") {
                push("energy_drift", *e, energy_tol);
            }
        }
        Expectation::Dissipative => {
            let up = series.windows(2).map(|w| (w[1].mass - w[0].mass) / first.mass.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
            push("mass_increase", up, mass_tol);
            let down = series.windows(2).map(|w| w[0].max_rho - w[1].max_rho).fold(0.0, f64::max);
            if first.max_rho.is_finite() {
                push("density_decrease", down, mass_tol);
            }
        }
        Expectation::Damped { alpha2 } => {
            let dev = series
                .iter()
                .map(|r| ((r.mass - first.mass * (-2.0 * alpha2 * (r.t - first.t)).exp()) / first.mass).abs())
                .fold(0.0, f64::max);
            push("damping_law", dev, mass_tol);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{EnvelopeSolver, ModelConfig};
    use crate::grid::{GridSpec, SpectralField};
    use crate::nonlinear::FKind;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn solver(grid: &GridSpec, cfg: &ModelConfig, dt: f64) -> EnvelopeSolver {
        EnvelopeSolver::new(grid, cfg, None, dt).unwrap()
    }

    #[test]
    fn mass_examples() {
        let g = GridSpec::new_2d(8, 16, 3.0, 5.0).unwrap();
        let s = solver(&g, &ModelConfig::family_cubic(1, 2, 0.1), 0.1);
        let zero = s.initial_state(&SpectralField::zeros(&g, 1)).unwrap();
        assert_eq!(mass(&zero), 0.0);
        assert_eq!(energy(&zero, &s).unwrap(), 0.0);
        let a = c(0.3, 0.4);
        let st = s.initial_state(&SpectralField::from_fn(&g, 1, |_| vec![a])).unwrap();
        assert!((mass(&st) - 0.25 * 15.0).abs() < 1e-12);
        assert!((energy(&st, &s).unwrap() + 0.25 * 0.0625 * 15.0).abs() < 1e-12);
        // Parseval: the spectral side with the identity form
        assert!((p2_form(&st, &s) - mass(&st)).abs() < 1e-12);
    }

    #[test]
    fn momentum_examples() {
        let g = GridSpec::new_1d(32, 2.0 * PI).unwrap();
        let s = solver(&g, &ModelConfig::family_cubic(1, 1, 0.1), 0.1);
        let real = s.initial_state(&SpectralField::from_fn(&g, 1, |x| vec![c((-x[0] * x[0]).exp(), 0.0)])).unwrap();
        assert!(momentum(&real, &s)[0].abs() < 1e-12);
        let pw = s.initial_state(&SpectralField::from_fn(&g, 1, |x| vec![Complex64::from_polar(0.5, 3.0 * x[0])])).unwrap();
        assert!((momentum(&pw, &s)[0] - 3.0 * 0.25 * 2.0 * PI).abs() < 1e-12);
        let mut conj = pw.clone();
        conj.u.data[0].iter_mut().for_each(|z| *z = z.conj());
        assert!((momentum(&conj, &s)[0] + momentum(&pw, &s)[0]).abs() < 1e-12);
    }

    #[test]
    fn h1_bound_examples() {
        assert_eq!(h1_bound_cq(0.0, 0.0, 0.5, 1.0).unwrap(), 0.0);
        assert!((h1_bound_cq(1.0, 0.0, 3.0 / 16.0, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(h1_bound_cq(1.0, -10.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn quintic_energy_rearrangement() {
        let g = GridSpec::new_2d(16, 16, 8.0, 8.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let eps: f64 = rng.gen_range(0.05..0.5);
            let cfg = ModelConfig { f_kind: Some(FKind::Quintic), ..ModelConfig::family_cubic(1, 2, eps) };
            let s = solver(&g, &cfg, 0.1);
            let amp = rng.gen_range(0.1..3.0);
            let ph: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let st = s
                .initial_state(&SpectralField::from_fn(&g, 1, |x| {
                    vec![c(amp * (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp(), 0.0) * Complex64::from_polar(1.0, ph[0] * x[0] + ph[1] * x[1])]
                }))
                .unwrap();
            let m = mass(&st);
            let h1 = m + s.grad_norm(&st).powi(2);
            let e = energy(&st, &s).unwrap();
            assert!(e >= -(0.5 + 3.0 / (32.0 * eps)) * m + 0.5 * h1 - 1e-12);
        }
    }

    fn row(t: f64, grad: f64, amp: f64) -> SeriesRow {
        SeriesRow { t, mass: 1.0, energy: 1.0, momentum: vec![0.0], max_abs: amp, grad_norm: grad, max_rho: 0.0, l4: 0.0 }
    }

    #[test]
    fn blowup_detection_thresholds() {
        let flat = RunReport::new((0..5).map(|i| row(i as f64, 1.0, 1.0)).collect(), BlowupThresholds::default());
        assert_eq!(flat.status, RunStatus::Completed);
        let grow = RunReport::new(vec![row(0.0, 1.0, 1.0), row(1.0, 2e3, 1.0)], BlowupThresholds::default());
        assert_eq!(grow.status, RunStatus::BlowupSuspected);
        let loose = RunReport::new(vec![row(0.0, 1.0, 1.0), row(1.0, 2e3, 1.0)], BlowupThresholds { grad_growth: 1e4, amplitude_growth: 1e6 });
        assert_eq!(loose.status, RunStatus::Completed);
    }

    #[test]
    fn series_csv_roundtrip() {
        let series: Vec<SeriesRow> = (0..4).map(|i| row(i as f64 * 0.5, 1.0 + i as f64, 2.0)).collect();
        let mut buf = Vec::new();
        write_series(&series, &mut buf).unwrap();
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back, series);
        let bad = "t,mass\n1,1\n0.5,1\n";
        assert!(read_series(bad.as_bytes()).is_err());
    }

    #[test]
    fn diagnose_flags_drift() {
        let mut series: Vec<SeriesRow> = (0..4).map(|i| row(i as f64, 1.0, 1.0)).collect();
        assert!(diagnose(&series, Expectation::Conservative, 1e-8, 1e-6).iter().all(|c| c.pass));
        series[3].mass = 1.1;
        assert!(!diagnose(&series, Expectation::Conservative, 1e-8, 1e-6).iter().all(|c| c.pass));
        assert!(!diagnose(&series, Expectation::Dissipative, 1e-10, 1e-6).iter().all(|c| c.pass));
    }

    #[test]
    fn cubic_conservation_and_order() {
        let g = GridSpec::new_2d(64, 64, 20.0, 20.0).unwrap();
        let init = SpectralField::from_fn(&g, 1, |x| vec![c(1.2 * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp(), 0.0) * Complex64::from_polar(1.0, 0.3 * x[0])]);
        let run = |dt: f64| {
            let s = solver(&g, &ModelConfig::family_cubic(1, 2, 0.1), dt);
            let mut st = s.initial_state(&init).unwrap();
            let rep = run_envelope(&s, &mut st, 1.0, 50, BlowupThresholds::default());
            (rep.drift["mass"], rep.drift["energy"])
        };
        let (m1, e1) = run(1e-3);
        let (_, e2) = run(5e-4);
        assert!(m1 < 1e-8, "{m1}");
        assert!(e1 < 1e-6, "{e1}");
        let order = (e1 / e2).log2();
        assert!((1.8..=2.2).contains(&order), "{order}");
    }

    #[test]
    fn damped_energy_identity() {
        let g = GridSpec::new_2d(64, 64, 20.0, 20.0).unwrap();
        let cfg = ModelConfig { alpha2: Some(0.2), ..ModelConfig::family_cubic(1, 2, 0.1) };
        let s = solver(&g, &cfg, 1e-3);
        let mut st = s.initial_state(&SpectralField::from_fn(&g, 1, |x| vec![c(1.0 * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp(), 0.0)])).unwrap();
        let rep = run_envelope(&s, &mut st, 0.5, 10, BlowupThresholds::default());
        assert!(rg7_residual(&rep.series, 0.2) < 1e-4);
        assert!(diagnose(&rep.series, Expectation::Damped { alpha2: 0.2 }, 1e-10, 0.0).iter().all(|c| c.pass));
    }
}
