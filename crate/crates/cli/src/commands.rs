//! Subcommand configs and runners. Every runner writes `report.json` plus its
//! CSV files into the output directory; wall-clock values go to JSON only.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use filament_core::diagnostics::{self, Expectation};
use filament_core::dispersion::{branch_omega, dispersion_roots, is_nonresonant, nls_coefficients, omega_at, omega_derivatives, omega_nls};
use filament_core::fit::{fit_improved, omega_imp};
use filament_core::harness::{self, EnvelopeRunConfig, MaxwellRunConfig};
use filament_core::{Branch, CompareConfig, ConvergenceConfig, MediumParams, RunStatus};

/// Exit code `0`: success.
pub const EXIT_OK: u8 = 0;
/// Exit code `2`: an invariant or expectation check failed.
pub const EXIT_INVARIANT: u8 = 2;
/// Exit code `3`: blow-up suspected where it was not expected.
pub const EXIT_BLOWUP: u8 = 3;

/// Process exit code and an optional note for stderr.
pub struct Outcome {
    pub code: u8,
    pub message: Option<String>,
}

impl Outcome {
    fn ok() -> Self {
        Self { code: EXIT_OK, message: None }
    }

    fn status_label(&self) -> &'static str {
        match self.code {
            EXIT_OK => "ok",
            EXIT_INVARIANT => "invariant_failure",
            EXIT_BLOWUP => "blowup_suspected",
            _ => "error",
        }
    }
}

/// Config text, output directory and global flags.
pub struct Context {
    pub config_path: PathBuf,
    pub config_text: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Context {
    pub fn new(config: &Path, out_dir: &Path, seed: u64, threads: Option<usize>) -> anyhow::Result<Self> {
        let config_text = fs::read_to_string(config).with_context(|| format!("reading config {}", config.display()))?;
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self { config_path: config.to_path_buf(), config_text, out_dir: out_dir.to_path_buf(), seed, threads })
    }

    fn parse<T: DeserializeOwned>(&self) -> anyhow::Result<T> {
        toml::from_str(&self.config_text).with_context(|| format!("parsing {}", self.config_path.display()))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Resolves `p` against the config file's directory.
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn report(&self, command: &str, outcome: &Outcome, result: serde_json::Value) -> anyhow::Result<()> {
        let doc = json!({
            "command": command,
            "status": outcome.status_label(),
            "exit_code": outcome.code,
            "seed": self.seed,
            "threads": self.threads,
            "config": self.config_path.display().to_string(),
            "result": result,
        });
        fs::write(self.out("report.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn default_samples() -> usize {
    201
}

fn default_dims() -> usize {
    1
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
struct CarrierSpec {
    k0: f64,
    branch: Branch,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_dims")]
    dims: usize,
}

#[derive(Debug, Deserialize)]
struct DispersionConfig {
    medium: MediumParams,
    k_min: f64,
    k_max: f64,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    carrier: Option<CarrierSpec>,
}

/// Writes `dispersion.csv` with the four curved branches, the three constant
/// sheets and the first two derivatives of the positive branches.
pub fn dispersion(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: DispersionConfig = ctx.parse()?;
    cfg.medium.validate()?;
    if !(cfg.k_max > cfg.k_min && cfg.k_min >= 0.0 && cfg.samples >= 2) {
        bail!("need 0 <= k_min < k_max and samples >= 2");
    }
    let mut w = csv_writer(&ctx.out("dispersion.csv"))?;
    w.write_record([
        "k", "omega_pp", "omega_pm", "omega_mp", "omega_mm", "const_0", "const_1", "const_2", "d1_pp", "d2_pp", "d1_pm", "d2_pm",
    ])?;
    for i in 0..cfg.samples {
        let k = cfg.k_min + (cfg.k_max - cfg.k_min) * i as f64 / (cfg.samples - 1) as f64;
        let roots = dispersion_roots(k, &cfg.medium);
        let mut row = vec![fmt(k)];
        row.extend(Branch::ALL.iter().map(|b| fmt(branch_omega(k, *b, &cfg.medium))));
        row.extend(roots.constant.iter().map(|v| fmt(*v)));
        for b in [Branch::PlusPlus, Branch::PlusMinus] {
            match omega_derivatives(k, b, &cfg.medium) {
                Ok(d) => row.extend([fmt(d.d1), fmt(d.d2)]),
                Err(_) => row.extend([fmt(f64::NAN), fmt(f64::NAN)]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    let result = match &cfg.carrier {
        Some(c) => json!({
            "coefficients": nls_coefficients(c.k0, c.branch, &cfg.medium, c.epsilon)?,
            "nonresonant": is_nonresonant(c.k0, c.branch, &cfg.medium),
            "dims": c.dims,
        }),
        None => json!({}),
    };
    let outcome = Outcome::ok();
    ctx.report("dispersion", &outcome, result)?;
    Ok(outcome)
}

#[derive(Debug, Deserialize)]
struct FitConfig {
    medium: MediumParams,
    k0: f64,
    half_width: f64,
    branch: Branch,
    #[serde(default = "default_dims")]
    dims: usize,
    #[serde(default = "default_samples")]
    samples: usize,
}

/// Writes `fit.csv` with the exact, NLS and improved relations along the
/// propagation axis across the fit window.
pub fn fit_dispersion(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: FitConfig = ctx.parse()?;
    let fit = fit_improved(cfg.k0, cfg.half_width, cfg.branch, &cfg.medium, cfg.dims)?;
    let mut w = csv_writer(&ctx.out("fit.csv"))?;
    w.write_record(["k", "omega", "omega_nls", "omega_imp"])?;
    let n = cfg.samples.max(2);
    for i in 0..n {
        let kz = cfg.k0 - cfg.half_width + 2.0 * cfg.half_width * i as f64 / (n - 1) as f64;
        let mut kp = vec![0.0; cfg.dims];
        kp[cfg.dims - 1] = kz;
        let imp = omega_imp(&kp, cfg.branch, &cfg.medium, &fit).unwrap_or(f64::NAN);
        w.write_record([
            fmt(kz),
            fmt(omega_at(&kp, cfg.branch, &cfg.medium)),
            fmt(omega_nls(&kp, cfg.k0, cfg.branch, &cfg.medium)?),
            fmt(imp),
        ])?;
    }
    w.flush()?;
    let outcome = Outcome::ok();
    ctx.report("fit-dispersion", &outcome, json!({ "fit": fit, "ratio": fit.sup_error / fit.nls_sup_error }))?;
    Ok(outcome)
}

/// Writes `series.csv`, `snapshot_NNNN.csv` and `final.csv` of a Maxwell run.
pub fn simulate_maxwell(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: MaxwellRunConfig = ctx.parse()?;
    let run = harness::simulate_maxwell(&cfg)?;
    let mut w = csv_writer(&ctx.out("series.csv"))?;
    w.write_record(["t", "l2", "energy", "max_e", "max_rho"])?;
    for r in &run.series {
        w.write_record(r.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    for (i, s) in run.snapshots.iter().enumerate() {
        s.u.write_csv_file(&ctx.out(&format!("snapshot_{i:04}.csv")))?;
    }
    run.final_state.u.write_csv_file(&ctx.out("final.csv"))?;
    let rel = |col: usize| {
        let q0 = run.series[0][col];
        run.series.iter().map(|r| ((r[col] - q0) / q0).abs()).fold(0.0, f64::max)
    };
    let outcome = match run.status {
        RunStatus::Aborted => Outcome { code: EXIT_INVARIANT, message: run.message.clone() },
        _ => Outcome::ok(),
    };
    ctx.report(
        "simulate maxwell",
        &outcome,
        json!({
            "status": run.status,
            "message": run.message,
            "final_time": run.final_state.time,
            "l2_drift": rel(1),
            "energy_drift": rel(2),
            "reality_residue": run.final_state.reality_residue(),
            "snapshots": run.snapshots.len(),
        }),
    )?;
    Ok(outcome)
}

#[derive(Debug, Deserialize)]
struct EnvelopeCli {
    #[serde(flatten)]
    run: EnvelopeRunConfig,
    #[serde(default)]
    expect_blowup: bool,
}

/// Writes `series.csv`, `snapshot_NNNN.csv` and `final.csv` of an envelope run.
pub fn simulate_envelope(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: EnvelopeCli = ctx.parse()?;
    let run = harness::simulate_envelope(&cfg.run)?;
    run.report.write_series_csv(fs::File::create(ctx.out("series.csv"))?)?;
    for (i, s) in run.snapshots.iter().enumerate() {
        s.u.write_csv_file(&ctx.out(&format!("snapshot_{i:04}.csv")))?;
    }
    run.final_state.u.write_csv_file(&ctx.out("final.csv"))?;
    let outcome = match run.report.status {
        RunStatus::BlowupSuspected if !cfg.expect_blowup => {
            Outcome { code: EXIT_BLOWUP, message: Some("blow-up suspected but not expected".into()) }
        }
        RunStatus::Aborted => Outcome { code: EXIT_INVARIANT, message: run.report.message.clone() },
        _ => Outcome::ok(),
    };
    ctx.report(
        "simulate envelope",
        &outcome,
        json!({
            "model": cfg.run.model.model.name(),
            "status": run.report.status,
            "message": run.report.message,
            "drift": run.report.drift,
            "thresholds": run.report.thresholds,
            "final_time": run.final_state.time,
            "wall_seconds": run.wall_seconds,
        }),
    )?;
    Ok(outcome)
}

#[derive(Debug, Deserialize)]
struct ConvergeCli {
    #[serde(flatten)]
    study: ConvergenceConfig,
    /// Accepted slope interval; checked for every model when present.
    #[serde(default)]
    slope_window: Option<[f64; 2]>,
}

/// Writes `errors.csv` (one column per model) and the fitted slopes.
pub fn converge(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: ConvergeCli = ctx.parse()?;
    let rep = harness::run_convergence(&cfg.study)?;
    let mut w = csv_writer(&ctx.out("errors.csv"))?;
    let mut header = vec!["epsilon".to_string()];
    header.extend(rep.errors.keys().cloned());
    w.write_record(&header)?;
    for (i, e) in rep.epsilons.iter().enumerate() {
        let mut row = vec![fmt(*e)];
        row.extend(rep.errors.values().map(|v| fmt(v[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut problems: Vec<String> = rep.failures.clone();
    if let Some([lo, hi]) = cfg.slope_window {
        for (m, s) in &rep.slopes {
            match s {
                Some(s) if (lo..=hi).contains(s) => {}
                Some(s) => problems.push(format!("{m}: slope {s:.3} outside [{lo}, {hi}]")),
                None => problems.push(format!("{m}: slope undefined")),
            }
        }
    }
    let outcome = if problems.is_empty() { Outcome::ok() } else { Outcome { code: EXIT_INVARIANT, message: Some(problems.join("\n")) } };
    ctx.report("converge", &outcome, json!({ "report": rep, "problems": problems }))?;
    Ok(outcome)
}

#[derive(Debug, Deserialize)]
struct CompareCli {
    #[serde(flatten)]
    compare: CompareConfig,
    /// Model names allowed to end in `blowup_suspected`.
    #[serde(default)]
    expected_blowup: Vec<String>,
}

/// Writes `compare.csv`, one row per model in input order.
pub fn compare(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: CompareCli = ctx.parse()?;
    let rows = harness::compare_models(&cfg.compare)?;
    let mut w = csv_writer(&ctx.out("compare.csv"))?;
    w.write_record(["model", "status", "final_time", "mass", "energy", "max_abs", "grad_norm", "max_rho", "error"])?;
    for r in &rows {
        let status = r.status.map(|s| serde_json::to_value(s).unwrap().as_str().unwrap_or_default().to_string()).unwrap_or_else(|| "error".into());
        w.write_record([
            r.model.clone(),
            status,
            fmt(r.final_time),
            fmt(r.mass),
            fmt(r.energy),
            fmt(r.max_abs),
            fmt(r.grad_norm),
            fmt(r.max_rho),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let unexpected: Vec<&str> = rows
        .iter()
        .filter(|r| r.status == Some(RunStatus::BlowupSuspected) && !cfg.expected_blowup.contains(&r.model))
        .map(|r| r.model.as_str())
        .collect();
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.error.is_some() || r.status == Some(RunStatus::Aborted))
        .map(|r| format!("{}: {}", r.model, r.error.clone().unwrap_or_else(|| "aborted".into())))
        .collect();
    let outcome = if !failed.is_empty() {
        Outcome { code: EXIT_INVARIANT, message: Some(failed.join("\n")) }
    } else if !unexpected.is_empty() {
        Outcome { code: EXIT_BLOWUP, message: Some(format!("unexpected blow-up: {}", unexpected.join(", "))) }
    } else {
        Outcome::ok()
    };
    ctx.report("compare", &outcome, json!({ "rows": rows }))?;
    Ok(outcome)
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize, Serialize)]
struct DiagnoseConfig {
    /// Series CSV, relative to the config file.
    series: PathBuf,
    expectation: Expectation,
    #[serde(default = "default_tol")]
    mass_tol: f64,
    #[serde(default = "default_tol")]
    energy_tol: f64,
}

/// Writes `diagnose.csv` with one line per check.
pub fn diagnose(ctx: &Context) -> anyhow::Result<Outcome> {
    let cfg: DiagnoseConfig = ctx.parse()?;
    let path = ctx.resolve(&cfg.series);
    let series = diagnostics::read_series(fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
    let checks = diagnostics::diagnose(&series, cfg.expectation, cfg.mass_tol, cfg.energy_tol);
    let mut w = csv_writer(&ctx.out("diagnose.csv"))?;
    w.write_record(["check", "value", "tolerance", "pass"])?;
    for c in &checks {
        w.write_record([c.name.clone(), fmt(c.value), fmt(c.tolerance), c.pass.to_string()])?;
    }
    w.flush()?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let outcome = if failed.is_empty() {
        Outcome::ok()
    } else {
        Outcome { code: EXIT_INVARIANT, message: Some(format!("failed checks: {}", failed.join(", "))) }
    };
    ctx.report("diagnose", &outcome, json!({ "checks": checks, "samples": series.len() }))?;
    Ok(outcome)
}
