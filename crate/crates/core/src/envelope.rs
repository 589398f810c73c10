//! Split-step spectral integrators for the envelope model hierarchy.
//!
//! Dimensional models (`envelope_exact`, `full_dispersion`, `nls`,
//! `nls_improved`, `nls_polarized`) evolve the electric amplitude `a(t, x)` of
//! `E ~ a e^{i(k0 z - w t)/eps} + c.c.` in the laboratory frame and time `t`.
//! Family models use the unit-coefficient forms in `tau = eps t`, in the frame
//! moving at the group velocity; the fixed-frame ionized models use `t`.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{
    branch_omega, lift_1d, lift_factors, n_sq, nls_coefficients, radial_derivatives, Branch, MediumParams,
    NlsCoefficients,
};
use crate::error::{Error, Result};
use crate::fit::{check_hyp, cubic_form, FitResult};
use crate::grid::{Fft, GridSpec, SpectralField};
use crate::maxwell::propagator;
use crate::nonlinear::{fenv_cubic, fenv_quadrature, EnvelopeIonization, FKind, RhoTildeSolver, THETA_POINTS};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// The ten envelope models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Four-component envelope with the exact symbol (1D).
    EnvelopeExact,
    /// Scalar envelope with the exact frequency `w(|k0 e_z + eps xi|)`.
    FullDispersion,
    /// Second-order Taylor dispersion.
    Nls,
    /// Rational dispersion `(b, B, C3)`.
    NlsImproved,
    /// Rational dispersion with frequency-dependent polarization on the nonlinearity.
    NlsPolarized,
    FamilyScalar,
    FamilyVect,
    IonizedFixedFrame,
    IonizedMovingFrame,
    GeneralIonized,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        Self::EnvelopeExact,
        Self::FullDispersion,
        Self::Nls,
        Self::NlsImproved,
        Self::NlsPolarized,
        Self::FamilyScalar,
        Self::FamilyVect,
        Self::IonizedFixedFrame,
        Self::IonizedMovingFrame,
        Self::GeneralIonized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EnvelopeExact => "envelope_exact",
            Self::FullDispersion => "full_dispersion",
            Self::Nls => "nls",
            Self::NlsImproved => "nls_improved",
            Self::NlsPolarized => "nls_polarized",
            Self::FamilyScalar => "family_scalar",
            Self::FamilyVect => "family_vect",
            Self::IonizedFixedFrame => "ionized_fixed_frame",
            Self::IonizedMovingFrame => "ionized_moving_frame",
            Self::GeneralIonized => "general_ionized",
        }
    }

    /// Models whose coefficients come from the medium and a carrier.
    pub fn is_dimensional(self) -> bool {
        matches!(self, Self::EnvelopeExact | Self::FullDispersion | Self::Nls | Self::NlsImproved | Self::NlsPolarized)
    }

    /// Models integrated in `tau = eps t` in the moving frame.
    pub fn is_moving_frame(self) -> bool {
        matches!(self, Self::FamilyScalar | Self::FamilyVect | Self::IonizedMovingFrame)
    }

    pub fn components(self) -> usize {
        match self {
            Self::EnvelopeExact => 4,
            Self::FamilyVect => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model '{s}'")))
    }
}

/// Model selection and coefficients; unused fields must be absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub epsilon: f64,
    #[serde(default)]
    pub alpha1: Option<i32>,
    #[serde(default)]
    pub alpha2: Option<f64>,
    /// Self-steepening vector (`c3` for `general_ionized`, an override of the
    /// computed coefficient for `nls_polarized`).
    #[serde(default)]
    pub alpha3: Option<Vec<f64>>,
    #[serde(default)]
    pub f_kind: Option<FKind>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub fit: Option<FitResult>,
    #[serde(default)]
    pub ionization: Option<EnvelopeIonization>,
}

#[derive(Clone, Copy, PartialEq)]
enum Need {
    Required,
    Optional,
    Absent,
}

impl ModelConfig {
    /// Config with only `model` and `epsilon` set.
    pub fn new(model: ModelKind, epsilon: f64) -> Self {
        Self { model, epsilon, alpha1: None, alpha2: None, alpha3: None, f_kind: None, r: None, fit: None, ionization: None }
    }

    /// Cubic `family_scalar` with `P2 = 1`, no damping and no self-steepening.
    pub fn family_cubic(alpha1: i32, dims: usize, epsilon: f64) -> Self {
        Self {
            alpha1: Some(alpha1),
            alpha2: Some(0.0),
            alpha3: Some(vec![0.0; dims]),
            f_kind: Some(FKind::Zero),
            r: Some(1.0),
            ..Self::new(ModelKind::FamilyScalar, epsilon)
        }
    }

    fn needs(&self) -> [(&'static str, Need, bool); 7] {
        use ModelKind::*;
        use Need::*;
        let (a1, a2, a3, fk, r, fit, ion) = match self.model {
            EnvelopeExact | FullDispersion | Nls => (Absent, Absent, Absent, Absent, Absent, Absent, Absent),
            NlsImproved => (Absent, Absent, Absent, Absent, Absent, Required, Absent),
            NlsPolarized => (Absent, Absent, Optional, Absent, Absent, Required, Absent),
            FamilyScalar => (Required, Required, Required, Required, Required, Optional, Absent),
            FamilyVect => (Required, Required, Required, Absent, Absent, Optional, Absent),
            IonizedFixedFrame | IonizedMovingFrame => (Required, Absent, Absent, Absent, Absent, Absent, Required),
            GeneralIonized => (Required, Required, Required, Absent, Absent, Optional, Required),
        };
        [
            ("alpha1", a1, self.alpha1.is_some()),
            ("alpha2", a2, self.alpha2.is_some()),
            ("alpha3", a3, self.alpha3.is_some()),
            ("f_kind", fk, self.f_kind.is_some()),
            ("r", r, self.r.is_some()),
            ("fit", fit, self.fit.is_some()),
            ("ionization", ion, self.ionization.is_some()),
        ]
    }

    /// Checks field presence and value ranges for a grid of dimension `dims`.
    pub fn validate(&self, dims: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {} must lie in (0, 1]", self.epsilon)));
        }
        for (name, need, present) in self.needs() {
            match (need, present) {
                (Need::Required, false) => {
                    return Err(Error::InvalidParameter(format!("model {} requires '{name}'", self.model)))
                }
                (Need::Absent, true) => {
                    return Err(Error::InvalidParameter(format!("model {} does not use '{name}'", self.model)))
                }
                _ => {}
            }
        }
        if self.model == ModelKind::EnvelopeExact && dims != 1 {
            return Err(Error::Unsupported("envelope_exact is implemented in one dimension".into()));
        }
        if let Some(a1) = self.alpha1 {
            if !(-1..=1).contains(&a1) {
                return Err(Error::InvalidParameter(format!("alpha1 = {a1} must be -1, 0 or 1")));
            }
        }
        if let Some(a2) = self.alpha2 {
            if !(a2 >= 0.0 && a2.is_finite()) {
                return Err(Error::InvalidParameter(format!("alpha2 = {a2} must be >= 0")));
            }
        }
        if let Some(a3) = &self.alpha3 {
            if a3.len() != dims || a3.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("alpha3 must be a finite {dims}-vector")));
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("r = {r} must be > 0")));
            }
        }
        if let Some(fit) = &self.fit {
            if fit.dims != dims || fit.b.len() != dims || fit.big_b.len() != dims * dims || fit.c3.len() != if dims == 1 { 1 } else { 4 } {
                return Err(Error::DimensionMismatch { expected: dims, got: fit.dims });
            }
            if !check_hyp(&fit.b, &fit.big_b) {
                return Err(Error::Hypothesis(format!("fit b = {:?}, B = {:?} violates the hyperbolicity condition", fit.b, fit.big_b)));
            }
        }
        if let Some(ion) = &self.ionization {
            ion.validate()?;
            if self.model == ModelKind::IonizedMovingFrame && ion.c_g <= 0.0 {
                return Err(Error::InvalidParameter("ionized_moving_frame needs c_g > 0".into()));
            }
        }
        Ok(())
    }
}

/// Carrier data of the dimensional models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    pub medium: MediumParams,
    pub k0: f64,
    pub branch: Branch,
}

/// Envelope field, optional density and time.
#[derive(Clone, Debug)]
pub struct EnvelopeState {
    pub u: SpectralField,
    /// `rho` for the fixed-frame ionized models, `rho~` for the moving-frame one.
    pub density: Option<Vec<f64>>,
    pub time: f64,
}

impl EnvelopeState {
    pub fn grid(&self) -> &GridSpec {
        &self.u.grid
    }
}

/// `P2(eps xi) = 1 + eps b.xi + eps^2 xi.B xi`.
pub fn p2_symbol(xi: &[f64], fit: &FitResult, eps: f64) -> f64 {
    let d: Vec<f64> = xi.iter().map(|v| eps * v).collect();
    fit.p2(&d)
}

/// Minimum of `P2` over the grid, or an error naming the offending wavevector.
pub fn check_p2_on_grid(grid: &GridSpec, fit: &FitResult, eps: f64) -> Result<f64> {
    let mut min = f64::INFINITY;
    for k in grid.wavevectors() {
        let xi = &k[..grid.dims()];
        let v = p2_symbol(xi, fit, eps);
        if !(v > 0.0) {
            return Err(Error::Hypothesis(format!("P2 = {v} <= 0 at xi = {xi:?}")));
        }
        min = min.min(v);
    }
    Ok(min)
}

/// Shift from the laboratory frame to the frame moving at `c_g e_z`: returns
/// `v(z') = u(z' + c_g t)` (exact Fourier translation).
pub fn to_moving_frame(u: &SpectralField, fft: &Fft, c_g: f64, t: f64) -> Result<SpectralField> {
    translate(u, fft, c_g * t)
}

/// Inverse of [`to_moving_frame`].
pub fn to_fixed_frame(v: &SpectralField, fft: &Fft, c_g: f64, t: f64) -> Result<SpectralField> {
    translate(v, fft, -c_g * t)
}

/// `w(x) = u(x + s e_z)` by a Fourier multiplier.
fn translate(u: &SpectralField, fft: &Fft, s: f64) -> Result<SpectralField> {
    let zi = u.grid.dims() - 1;
    let mut out = u.clone();
    out.apply_scalar_multiplier(fft, |xi| Complex64::from_polar(1.0, xi[zi] * s))?;
    Ok(out)
}

/// Twisted Galilean transform of the hyperbolic equation `i v_t + (D_perp - d_z^2) v + |v|^2 v = 0`:
/// `v_beta(t, x) = v(t, x - beta t) e^{i beta^.(x - beta t/2)/2}` with `beta^ = (beta_perp, -beta_z)`.
/// Periodicity requires `beta^/2` on the reciprocal lattice.
pub fn twisted_galilean(v: &SpectralField, fft: &Fft, beta: &[f64], t: f64) -> Result<SpectralField> {
    let grid = &v.grid;
    let d = grid.dims();
    if beta.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: beta.len() });
    }
    let mut hat = beta.to_vec();
    hat[d - 1] = -hat[d - 1];
    for a in 0..d {
        let m = hat[a] / 2.0 * grid.lengths[a] / (2.0 * std::f64::consts::PI);
        if (m - m.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("beta^/2 = {} is not a lattice wavenumber on axis {a}", hat[a] / 2.0)));
        }
    }
    let mut out = v.clone();
    out.apply_scalar_multiplier(fft, |xi| {
        let s: f64 = (0..d).map(|a| xi[a] * beta[a] * t).sum();
        Complex64::from_polar(1.0, -s)
    })?;
    let pts = grid.points();
    let shift: f64 = (0..d).map(|a| hat[a] * beta[a]).sum::<f64>() * t / 4.0;
    for comp in &mut out.data {
        for (z, x) in comp.iter_mut().zip(&pts) {
            let ph: f64 = (0..d).map(|a| hat[a] * x[a]).sum::<f64>() / 2.0 - shift;
            *z *= Complex64::from_polar(1.0, ph);
        }
    }
    Ok(out)
}

/// `phi(s)` with `F^env(z) = phi(|z|^2) z` for the scalar Kerr term of the medium.
fn kerr_env_ratio(m: &MediumParams, eps: f64, s: f64) -> f64 {
    if m.nonlinearity == crate::dispersion::NonlinearityKind::Cubic {
        return 3.0 * m.gamma / m.omega0.powi(3) * s;
    }
    if s == 0.0 {
        return 0.0;
    }
    let x = s.sqrt();
    fenv_quadrature(&[c(x, 0.0)], THETA_POINTS, |p| m.kerr(p, eps))[0].re / x
}

/// Nonlinear right-hand side of a model, in physical space.
#[derive(Clone, Debug)]
enum Nonlinear {
    /// `Q` row of the four-component model; exact update with frozen `P`.
    Exact4 { damp: f64 },
    /// `i eps kappa (phi(|p a|^2)) a` with `kappa = Im(conj(q) p)/N^2` at the carrier.
    Kerr { kappa: f64, p: f64 },
    /// Per-mode projection `conj(q(k)) FFT[F^env(IFFT[p(k) a])] / N^2(k)`.
    KerrFull { p: Vec<Complex64>, out: Vec<Complex64> },
    /// `i gain(eps^r |v|^2) |v|^2 v`.
    Family { kind: FKind, eps_r: f64 },
    /// `(i/3)((v.v) conj(v) + 2 |v|^2 v)`.
    Vect,
    /// Ionized models: `(u, rho)` system; `slaved` recomputes `rho~` from `|v|^2`.
    Ionized { ion: EnvelopeIonization, scale: f64, slaved: bool },
}

/// Precomputed operators for one model on one grid and step size.
pub struct EnvelopeSolver {
    pub grid: GridSpec,
    pub config: ModelConfig,
    pub carrier: Option<Carrier>,
    pub coefficients: Option<NlsCoefficients>,
    pub dt: f64,
    fft: Fft,
    lin: Vec<Complex64>,
    lin4: Vec<Matrix4<Complex64>>,
    nl: Nonlinear,
    /// Fourier multiplier on the nonlinearity; `None` means identity.
    mult: Option<Vec<Complex64>>,
    rho_tilde: Option<RhoTildeSolver>,
    omega: f64,
    /// Real dispersion symbol `h` of `i P2 d_t u = h u + ...`.
    ham: Vec<f64>,
    p2: Vec<f64>,
}

impl fmt::Debug for EnvelopeSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvelopeSolver").field("model", &self.config.model).field("dt", &self.dt).finish()
    }
}

impl EnvelopeSolver {
    /// Builds the solver; dimensional models need `carrier`.
    pub fn new(grid: &GridSpec, config: &ModelConfig, carrier: Option<&Carrier>, dt: f64) -> Result<Self> {
        let dims = grid.dims();
        config.validate(dims)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt = {dt} must be > 0")));
        }
        let eps = config.epsilon;
        let kind = config.model;
        let wv: Vec<Vec<f64>> = grid.wavevectors().iter().map(|k| k[..dims].to_vec()).collect();
        let zi = dims - 1;
        let fit = config.fit.clone().unwrap_or_else(|| FitResult::zero(dims));
        let p2: Vec<f64> = if config.fit.is_some() {
            check_p2_on_grid(grid, &fit, eps)?;
            wv.iter().map(|xi| p2_symbol(xi, &fit, eps)).collect()
        } else {
            vec![1.0; wv.len()]
        };
        let mut lin4 = Vec::new();
        let mut rho_tilde = None;
        let mut omega = 0.0;
        let mut coefficients = None;
        let carrier = if kind.is_dimensional() {
            let car = carrier.ok_or_else(|| Error::InvalidParameter(format!("model {kind} needs a carrier")))?;
            car.medium.validate()?;
            if car.k0 <= 0.0 {
                return Err(Error::InvalidParameter("carrier k0 must be > 0".into()));
            }
            Some(car.clone())
        } else {
            None
        };
        let (rate, nl, mult): (Vec<Complex64>, Nonlinear, Option<Vec<Complex64>>) = match kind {
            ModelKind::EnvelopeExact | ModelKind::FullDispersion | ModelKind::Nls | ModelKind::NlsImproved | ModelKind::NlsPolarized => {
                let car = carrier.as_ref().unwrap();
                let m = &car.medium;
                let nc = nls_coefficients(car.k0, car.branch, m, eps)?;
                omega = nc.omega;
                coefficients = Some(nc.clone());
                let damp = eps * nc.alpha2;
                let (q0, p0) = lift_factors(nc.omega, m)?;
                let kappa = (q0.conj() * p0).im / nc.n_sq;
                let kerr = Nonlinear::Kerr { kappa, p: p0 };
                let (cg, h) = radial_derivatives(car.k0, car.branch, m, dims)?;
                match kind {
                    ModelKind::EnvelopeExact => {
                        lin4 = wv
                            .iter()
                            .map(|xi| {
                                propagator(xi[0] + car.k0 / eps, m, eps, dt) * Complex64::from_polar(1.0, omega * dt / eps)
                            })
                            .collect();
                        let d = eps.powf(1.0 + m.p) * m.omega1;
                        (vec![ZERO; wv.len()], Nonlinear::Exact4 { damp: d }, None)
                    }
                    ModelKind::FullDispersion => {
                        let mut pk = Vec::with_capacity(wv.len());
                        let mut ok = Vec::with_capacity(wv.len());
                        let rate = wv
                            .iter()
                            .map(|xi| {
                                let kv = kappa_norm(xi, car.k0, eps);
                                let w = branch_omega(kv, car.branch, m);
                                match lift_factors(w, m) {
                                    Ok((q, p)) if kv > 0.0 => {
                                        pk.push(c(p, 0.0));
                                        ok.push(q.conj() / n_sq(kv, w, m));
                                    }
                                    _ => {
                                        pk.push(ZERO);
                                        ok.push(ZERO);
                                    }
                                }
                                c(-damp, -(w - omega) / eps)
                            })
                            .collect();
                        (rate, Nonlinear::KerrFull { p: pk, out: ok }, Some(vec![]))
                    }
                    _ => {
                        let mut mm = h.clone();
                        for i in 0..dims {
                            for j in 0..dims {
                                mm[i * dims + j] += 2.0 * cg[i] * fit.b[j];
                            }
                        }
                        let rate: Vec<Complex64> = wv
                            .iter()
                            .zip(&p2)
                            .map(|(xi, &pp)| {
                                let d: Vec<f64> = xi.iter().map(|v| eps * v).collect();
                                let num = dot(&cg, &d) + 0.5 * quad(&mm, &d) - cubic_form(&fit.c3, &d);
                                c(-damp, -num / (eps * pp))
                            })
                            .collect();
                        let mult = if kind == ModelKind::NlsPolarized {
                            let a3 = match &config.alpha3 {
                                Some(v) => v.clone(),
                                None => {
                                    let mut v = vec![0.0; dims];
                                    v[zi] = nc.alpha3_projector;
                                    v
                                }
                            };
                            Some(
                                wv.iter()
                                    .zip(&p2)
                                    .map(|(xi, &pp)| c((1.0 + eps * dot(&fit.b, xi) - eps * dot(&a3, xi)) / pp, 0.0))
                                    .collect(),
                            )
                        } else {
                            Some(p2.iter().map(|&pp| c(1.0 / pp, 0.0)).collect())
                        };
                        (rate, kerr, mult)
                    }
                }
            }
            ModelKind::FamilyScalar | ModelKind::FamilyVect => {
                let a1 = config.alpha1.unwrap() as f64;
                let a2 = config.alpha2.unwrap();
                let a3 = config.alpha3.clone().unwrap();
                let rate = wv.iter().zip(&p2).map(|(xi, &pp)| c(-a2, -lap(xi, a1)) / pp).collect();
                let mult = wv.iter().zip(&p2).map(|(xi, &pp)| c((1.0 - eps * dot(&a3, xi)) / pp, 0.0)).collect();
                let nl = if kind == ModelKind::FamilyScalar {
                    Nonlinear::Family { kind: config.f_kind.unwrap(), eps_r: eps.powf(config.r.unwrap()) }
                } else {
                    Nonlinear::Vect
                };
                (rate, nl, Some(mult))
            }
            ModelKind::IonizedFixedFrame | ModelKind::GeneralIonized => {
                let a1 = config.alpha1.unwrap() as f64;
                let a2 = config.alpha2.unwrap_or(0.0);
                let ion = config.ionization.clone().unwrap();
                let c3 = config.alpha3.clone().unwrap_or_else(|| vec![0.0; dims]);
                let rate = wv.iter().zip(&p2).map(|(xi, &pp)| c(-eps * a2, -(ion.c_g * xi[zi] + eps * lap(xi, a1))) / pp).collect();
                let mult = wv.iter().zip(&p2).map(|(xi, &pp)| c((1.0 - eps * dot(&c3, xi)) / pp, 0.0)).collect();
                (rate, Nonlinear::Ionized { ion, scale: eps, slaved: false }, Some(mult))
            }
            ModelKind::IonizedMovingFrame => {
                let a1 = config.alpha1.unwrap() as f64;
                let ion = config.ionization.clone().unwrap();
                rho_tilde = Some(RhoTildeSolver::new(grid));
                let rate = wv.iter().map(|xi| c(0.0, -lap(xi, a1))).collect();
                (rate, Nonlinear::Ionized { ion, scale: 1.0, slaved: true }, None)
            }
        };
        let mult = mult.filter(|m| !m.is_empty() && m.iter().any(|v| (v - 1.0).norm() > 0.0));
        let mult = if matches!(nl, Nonlinear::KerrFull { .. }) { None } else { mult };
        let lin = rate.iter().map(|r| (r * dt).exp()).collect();
        let ham = rate.iter().zip(&p2).map(|(r, pp)| -r.im * pp).collect();
        Ok(Self {
            grid: grid.clone(),
            config: config.clone(),
            carrier,
            coefficients,
            dt,
            fft: Fft::new(grid),
            lin,
            lin4,
            nl,
            mult,
            rho_tilde,
            omega,
            ham,
            p2,
        })
    }

    /// `sum_xi s(xi) |u^(xi)|^2` scaled to match the physical-space L2 product.
    fn spectral_form(&self, u: &SpectralField, s: &[f64]) -> f64 {
        let n = self.grid.size() as f64;
        let scale = self.grid.cell_volume() / n;
        u.data
            .iter()
            .map(|comp| {
                let mut f = comp.clone();
                self.fft.forward(&mut f);
                f.iter().zip(s).map(|(z, w)| w * z.norm_sqr()).sum::<f64>()
            })
            .sum::<f64>()
            * scale
    }

    /// Conserved quadratic form `(P2(eps D) u, u)`; equals the mass when `P2 = 1`.
    pub fn p2_form(&self, state: &EnvelopeState) -> f64 {
        self.spectral_form(&state.u, &self.p2)
    }

    /// Hamiltonian `(h u, u)/2 - (1/2) int R(|u|^2)` of the model, where the
    /// nonlinear term is `R'(|u|^2) u`. Ionized and full-dispersion models have
    /// no such functional.
    pub fn energy(&self, state: &EnvelopeState) -> Result<f64> {
        let eps = self.config.epsilon;
        let dv = self.grid.cell_volume();
        let quad = 0.5 * self.spectral_form(&state.u, &self.ham);
        let pot: f64 = match &self.nl {
            Nonlinear::Family { kind, eps_r } => state.u.data[0].iter().map(|v| kind.potential(v.norm_sqr(), *eps_r)).sum(),
            Nonlinear::Vect => (0..self.grid.size())
                .map(|j| {
                    let (a, b) = (state.u.data[0][j], state.u.data[1][j]);
                    let vv = a * a + b * b;
                    let n2 = a.norm_sqr() + b.norm_sqr();
                    (vv.norm_sqr() + 2.0 * n2 * n2) / 6.0
                })
                .sum(),
            Nonlinear::Kerr { kappa, p } => {
                let m = &self.carrier.as_ref().unwrap().medium;
                let rate = |s: f64| eps * kappa * kerr_env_ratio(m, eps, p * p * s);
                state.u.data[0]
                    .iter()
                    .map(|a| {
                        let s = a.norm_sqr();
                        if m.nonlinearity == crate::dispersion::NonlinearityKind::Cubic {
                            0.5 * rate(s) * s
                        } else {
                            simpson(&rate, s, 32)
                        }
                    })
                    .sum()
            }
            _ => return Err(Error::Unsupported(format!("no conserved energy for model {}", self.config.model))),
        };
        Ok(quad - 0.5 * pot * dv)
    }

    /// `||grad u||_{L2}` computed spectrally.
    pub fn grad_norm(&self, state: &EnvelopeState) -> f64 {
        let k2: Vec<f64> = self.grid.wavevectors().iter().map(|k| k[..self.grid.dims()].iter().map(|v| v * v).sum()).collect();
        self.spectral_form(&state.u, &k2).sqrt()
    }

    /// `Im int grad u . conj(u)`, one entry per axis.
    pub fn momentum(&self, state: &EnvelopeState) -> Vec<f64> {
        let d = self.grid.dims();
        let wv = self.grid.wavevectors();
        (0..d)
            .map(|a| {
                // the Nyquist mode has no well-defined first derivative
                let nyq = self.grid.n[a] / 2;
                let s: Vec<f64> = wv
                    .iter()
                    .enumerate()
                    .map(|(i, k)| if self.grid.n[a].is_multiple_of(2) && self.grid.unravel(i)[a] == nyq { 0.0 } else { k[a] })
                    .collect();
                self.spectral_form(&state.u, &s)
            })
            .collect()
    }

    pub fn fft(&self) -> &Fft {
        &self.fft
    }

    /// Carrier frequency of the dimensional models.
    pub fn carrier_omega(&self) -> f64 {
        self.omega
    }

    /// Initial state from an electric envelope (`[a]`, or two components for
    /// `family_vect`); `envelope_exact` lifts it onto the carrier eigenvector.
    pub fn initial_state(&self, envelope: &SpectralField) -> Result<EnvelopeState> {
        let model = self.config.model;
        let want = if model == ModelKind::EnvelopeExact { 1 } else { model.components() };
        if envelope.components() != want {
            return Err(Error::DimensionMismatch { expected: want, got: envelope.components() });
        }
        if envelope.grid != self.grid {
            return Err(Error::InvalidGrid("envelope grid differs from the solver grid".into()));
        }
        let u = if model == ModelKind::EnvelopeExact {
            let car = self.carrier.as_ref().unwrap();
            let r = lift_1d(car.k0, car.branch, &car.medium)?;
            SpectralField { grid: self.grid.clone(), data: (0..4).map(|k| envelope.data[0].iter().map(|a| a * r[k]).collect()).collect() }
        } else {
            envelope.clone()
        };
        let mut state = EnvelopeState { u, density: None, time: 0.0 };
        match (&self.nl, model) {
            (Nonlinear::Ionized { ion, .. }, ModelKind::IonizedMovingFrame) => {
                state.density = Some(self.rho_tilde.as_ref().unwrap().solve(&intensity(&state.u), self.config.epsilon, ion)?);
            }
            (Nonlinear::Ionized { .. }, _) => state.density = Some(vec![0.0; self.grid.size()]),
            _ => {}
        }
        Ok(state)
    }

    /// Electric amplitude of a state (component 1 of the four-component model).
    pub fn electric(&self, state: &EnvelopeState) -> Vec<Complex64> {
        if self.config.model == ModelKind::EnvelopeExact {
            state.u.data[1].clone()
        } else {
            state.u.data[0].clone()
        }
    }

    /// Exact linear flow over `dt`.
    pub fn linear_step(&self, state: &mut EnvelopeState) {
        for comp in &mut state.u.data {
            self.fft.forward(comp);
        }
        if self.lin4.is_empty() {
            for comp in &mut state.u.data {
                comp.iter_mut().zip(&self.lin).for_each(|(z, l)| *z *= l);
            }
        } else {
            for (i, m) in self.lin4.iter().enumerate() {
                let v = nalgebra::Vector4::new(state.u.data[0][i], state.u.data[1][i], state.u.data[2][i], state.u.data[3][i]);
                let w = m * v;
                for k in 0..4 {
                    state.u.data[k][i] = w[k];
                }
            }
        }
        for comp in &mut state.u.data {
            self.fft.inverse(comp);
        }
    }

    fn apply_mult(&self, f: &mut [Complex64]) {
        if let Some(m) = &self.mult {
            self.fft.forward(f);
            f.iter_mut().zip(m).for_each(|(z, s)| *z *= s);
            self.fft.inverse(f);
        }
    }

    /// Time derivative of the nonlinear subsystem for scalar or vector fields.
    fn nl_rhs(&self, u: &[Vec<Complex64>], rho: Option<&[f64]>) -> (Vec<Vec<Complex64>>, Option<Vec<f64>>) {
        let eps = self.config.epsilon;
        match &self.nl {
            Nonlinear::Kerr { kappa, p } => {
                let m = &self.carrier.as_ref().unwrap().medium;
                let mut out: Vec<Complex64> =
                    u[0].iter().map(|a| I * (eps * kappa * kerr_env_ratio(m, eps, p * p * a.norm_sqr())) * a).collect();
                self.apply_mult(&mut out);
                (vec![out], None)
            }
            Nonlinear::KerrFull { p, out } => {
                let m = &self.carrier.as_ref().unwrap().medium;
                let mut pf = u[0].clone();
                self.fft.forward(&mut pf);
                pf.iter_mut().zip(p).for_each(|(z, s)| *z *= s);
                self.fft.inverse(&mut pf);
                let mut f: Vec<Complex64> = pf.iter().map(|z| z * kerr_env_ratio(m, eps, z.norm_sqr())).collect();
                self.fft.forward(&mut f);
                f.iter_mut().zip(out).for_each(|(z, s)| *z *= s * eps);
                self.fft.inverse(&mut f);
                (vec![f], None)
            }
            Nonlinear::Family { kind, eps_r } => {
                let mut out: Vec<Complex64> = u[0]
                    .iter()
                    .map(|v| {
                        let s = v.norm_sqr();
                        I * (kind.gain(eps_r * s) * s) * v
                    })
                    .collect();
                self.apply_mult(&mut out);
                (vec![out], None)
            }
            Nonlinear::Vect => {
                let n = u[0].len();
                let mut out = vec![vec![ZERO; n]; 2];
                for j in 0..n {
                    let f = fenv_cubic(&[u[0][j], u[1][j]]);
                    out[0][j] = I * f[0] / 3.0;
                    out[1][j] = I * f[1] / 3.0;
                }
                for comp in &mut out {
                    self.apply_mult(comp);
                }
                (out, None)
            }
            Nonlinear::Ionized { ion, scale, slaved } => {
                let rho = rho.unwrap();
                let k = ion.k as i32;
                let s = *scale;
                let mut du: Vec<Complex64> = u[0]
                    .iter()
                    .zip(rho)
                    .map(|(v, &r)| {
                        let n2 = v.norm_sqr();
                        c(-s * ion.c * (ion.alpha4 * n2.powi(k - 1) + ion.alpha5 * r), s * (n2 - r)) * v
                    })
                    .collect();
                self.apply_mult(&mut du);
                let dr = if *slaved {
                    None
                } else {
                    Some(
                        u[0].iter()
                            .zip(rho)
                            .map(|(v, &r)| {
                                let n2 = v.norm_sqr();
                                s * ion.alpha4 * n2.powi(k) + s * ion.alpha5 * r * n2
                            })
                            .collect(),
                    )
                };
                (vec![du], dr)
            }
            Nonlinear::Exact4 { .. } => unreachable!("handled in closed form"),
        }
    }

    /// Nonlinear flow over `h`: closed form where available, otherwise one RK4 step.
    pub fn nonlinear_step(&self, state: &mut EnvelopeState, h: f64) -> Result<()> {
        let eps = self.config.epsilon;
        if let Nonlinear::Exact4 { damp } = &self.nl {
            let m = &self.carrier.as_ref().unwrap().medium;
            let decay = (-damp * h).exp();
            let grow = if *damp > 0.0 { (1.0 - decay) / damp } else { h };
            for j in 0..self.grid.size() {
                let pv = state.u.data[3][j];
                let f = pv * kerr_env_ratio(m, eps, pv.norm_sqr());
                state.u.data[2][j] = state.u.data[2][j] * decay + f * (eps * grow);
            }
            return Ok(());
        }
        if self.mult.is_none() {
            match &self.nl {
                Nonlinear::Kerr { kappa, p } => {
                    let m = &self.carrier.as_ref().unwrap().medium;
                    for a in &mut state.u.data[0] {
                        let ph = eps * kappa * kerr_env_ratio(m, eps, p * p * a.norm_sqr()) * h;
                        *a *= Complex64::from_polar(1.0, ph);
                    }
                    return Ok(());
                }
                Nonlinear::Family { kind, eps_r } => {
                    for v in &mut state.u.data[0] {
                        let s = v.norm_sqr();
                        *v *= Complex64::from_polar(1.0, kind.gain(eps_r * s) * s * h);
                    }
                    return Ok(());
                }
                _ => {}
            }
        }
        if let Nonlinear::Ionized { ion, slaved: true, .. } = &self.nl {
            let rt = self.rho_tilde.as_ref().unwrap().solve(&intensity(&state.u), eps, ion)?;
            state.density = Some(rt);
        }
        let slaved = matches!(self.nl, Nonlinear::Ionized { slaved: true, .. });
        let u0 = state.u.data.clone();
        let r0 = state.density.clone();
        let add = |a: &[Vec<Complex64>], b: &[Vec<Complex64>], s: f64| -> Vec<Vec<Complex64>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q * s).collect()).collect()
        };
        let radd = |a: &Option<Vec<f64>>, b: &Option<Vec<f64>>, s: f64| -> Option<Vec<f64>> {
            match (a, b) {
                (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| p + q * s).collect()),
                (Some(x), None) => Some(x.clone()),
                _ => None,
            }
        };
        let (k1, r1) = self.nl_rhs(&u0, r0.as_deref());
        let (k2, r2) = self.nl_rhs(&add(&u0, &k1, h / 2.0), radd(&r0, &r1, h / 2.0).as_deref());
        let (k3, r3) = self.nl_rhs(&add(&u0, &k2, h / 2.0), radd(&r0, &r2, h / 2.0).as_deref());
        let (k4, r4) = self.nl_rhs(&add(&u0, &k3, h), radd(&r0, &r3, h).as_deref());
        for (ci, comp) in state.u.data.iter_mut().enumerate() {
            for (j, z) in comp.iter_mut().enumerate() {
                *z = u0[ci][j] + (k1[ci][j] + 2.0 * k2[ci][j] + 2.0 * k3[ci][j] + k4[ci][j]) * (h / 6.0);
            }
        }
        if !slaved {
            if let (Some(rho), Some(r0), Some(r1), Some(r2), Some(r3), Some(r4)) = (state.density.as_mut(), &r0, &r1, &r2, &r3, &r4) {
                for j in 0..rho.len() {
                    // the exact density is nondecreasing; keep that under rounding
                    rho[j] = (r0[j] + (r1[j] + 2.0 * r2[j] + 2.0 * r3[j] + r4[j]) * (h / 6.0)).max(r0[j]);
                }
            }
        }
        Ok(())
    }

    /// One Strang step of length `dt`.
    pub fn step(&self, state: &mut EnvelopeState) -> Result<()> {
        self.nonlinear_step(state, 0.5 * self.dt)?;
        self.linear_step(state);
        self.nonlinear_step(state, 0.5 * self.dt)?;
        state.time += self.dt;
        if matches!(self.nl, Nonlinear::Ionized { slaved: true, .. }) {
            let ion = match &self.nl {
                Nonlinear::Ionized { ion, .. } => ion,
                _ => unreachable!(),
            };
            state.density = Some(self.rho_tilde.as_ref().unwrap().solve(&intensity(&state.u), self.config.epsilon, ion)?);
        }
        let finite = state.u.data.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
            && state.density.as_ref().is_none_or(|r| r.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Breakdown(format!("non-finite envelope at t = {}", state.time)));
        }
        Ok(())
    }

    /// Advances to `t_final`, shortening the steps evenly when `dt` does not divide the span.
    pub fn advance_to(&self, state: &mut EnvelopeState, t_final: f64) -> Result<()> {
        let steps = ((t_final - state.time) / self.dt - 1e-9).ceil().max(0.0) as usize;
        if steps == 0 {
            return Ok(());
        }
        let h = (t_final - state.time) / steps as f64;
        let other;
        let s = if (h - self.dt).abs() > 1e-15 * self.dt {
            other = Self::new(&self.grid, &self.config, self.carrier.as_ref(), h)?;
            &other
        } else {
            self
        };
        for _ in 0..steps {
            s.step(state)?;
        }
        state.time = t_final;
        Ok(())
    }
}

/// Free-function form of one Strang step; builds the operators each call.
pub fn envelope_step(
    state: &EnvelopeState,
    dt: f64,
    config: &ModelConfig,
    carrier: Option<&Carrier>,
) -> Result<EnvelopeState> {
    let solver = EnvelopeSolver::new(state.grid(), config, carrier, dt)?;
    let mut next = state.clone();
    solver.step(&mut next)?;
    Ok(next)
}

fn simpson(f: &dyn Fn(f64) -> f64, b: f64, n: usize) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let h = b / n as f64;
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0
}

fn intensity(u: &SpectralField) -> Vec<f64> {
    (0..u.grid.size()).map(|j| u.data.iter().map(|c| c[j].norm_sqr()).sum()).collect()
}

fn kappa_norm(xi: &[f64], k0: f64, eps: f64) -> f64 {
    let d = xi.len();
    let mut s = 0.0;
    for (a, v) in xi.iter().enumerate() {
        let k = eps * v + if a == d - 1 { k0 } else { 0.0 };
        s += k * k;
    }
    s.sqrt()
}

/// Symbol of `-(D_perp + alpha1 d_z^2)`.
fn lap(xi: &[f64], a1: f64) -> f64 {
    let d = xi.len();
    xi[..d - 1].iter().map(|v| v * v).sum::<f64>() + a1 * xi[d - 1] * xi[d - 1]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(m: &[f64], d: &[f64]) -> f64 {
    let n = d.len();
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| d[i] * m[i * n + j] * d[j]).sum()
}
