//! Reference solver for the dimensionless Maxwell-Lorentz system in one space
//! dimension, transverse reduction `U = (B_y, E_x, Q_x, P_x)`:
//!
//! ```text
//! d_t B + d_z E                         = 0
//! d_t E + d_z B + (sqrt(g)/eps) Q       = ion(E, rho)
//! d_t Q - (sqrt(g) E - w0 P)/eps        = eps Kerr(P) - eps^(1+p) w1 Q
//! d_t P - (w0/eps) Q                    = 0
//! ```
//!
//! Strang splitting: the stiff skew linear part is propagated exactly per
//! Fourier mode; Kerr, damping and ionization form the pointwise substep.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{lift_1d, symbol_1d, Branch, MediumParams};
use crate::error::{Error, Result};
use crate::grid::{Fft, GridSpec, SpectralField};

const E: usize = 1;
const Q: usize = 2;
const P: usize = 3;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Regularized Hilbert symbol `sqrt(2) i xi / (1 + xi^2)^(1/2)`.
pub fn hilbert_symbol(xi: f64) -> Complex64 {
    c(0.0, 2f64.sqrt() * xi / (1.0 + xi * xi).sqrt())
}

/// Field state of the oracle; components are real up to rounding.
#[derive(Clone, Debug)]
pub struct MaxwellState {
    pub u: SpectralField,
    pub rho: Option<Vec<f64>>,
    pub time: f64,
    pub epsilon: f64,
}

impl MaxwellState {
    pub fn grid(&self) -> &GridSpec {
        &self.u.grid
    }

    /// Largest imaginary part relative to the largest real part.
    pub fn reality_residue(&self) -> f64 {
        let re = self.u.data.iter().flatten().map(|z| z.re.abs()).fold(0.0, f64::max);
        let im = self.u.data.iter().flatten().map(|z| z.im.abs()).fold(0.0, f64::max);
        if re == 0.0 {
            im
        } else {
            im / re
        }
    }

    pub fn max_e(&self) -> f64 {
        self.u.data[E].iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_rho(&self) -> f64 {
        self.rho.as_ref().map_or(0.0, |r| r.iter().cloned().fold(0.0, f64::max))
    }

    fn check_finite(&self) -> Result<()> {
        let bad = self.u.data.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite()))
            || self.rho.as_ref().is_some_and(|r| r.iter().any(|v| !v.is_finite()));
        if bad {
            Err(Error::Breakdown(format!("non-finite Maxwell state at t = {}", self.time)))
        } else {
            Ok(())
        }
    }
}

/// Initial wave packet `u0(x) e^{i k x / eps} + c.c.`, with `u0` the lift of a
/// transverse electric envelope on a curved branch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WavePacketSpec {
    /// Electric amplitude at each grid node.
    pub envelope: Vec<Complex64>,
    pub carrier_k: f64,
    pub branch: Branch,
    /// Optional `O(eps)` perturbation of the 4-component profile, one entry per node.
    pub polarization_defect: Option<Vec<[Complex64; 4]>>,
}

/// Integer mode number of the carrier `k/eps`, or the error with the nearest valid `eps`.
pub fn carrier_mode(k: f64, eps: f64, grid: &GridSpec) -> Result<usize> {
    let l = grid.lengths[grid.z_axis()];
    let n = k * l / (2.0 * std::f64::consts::PI * eps);
    let r = n.round();
    if r >= 1.0 && (n - r).abs() <= 1e-9 * n.max(1.0) {
        return Ok(r as usize);
    }
    let to_eps = |m: f64| k * l / (2.0 * std::f64::consts::PI * m);
    let hi = n.ceil().max(1.0);
    let lo = n.floor().max(1.0);
    Err(Error::CarrierNotRepresentable { carrier: k / eps, below: to_eps(hi), above: to_eps(lo) })
}

/// Builds the real initial state; the density starts at zero when the medium ionizes.
pub fn init_wave_packet(spec: &WavePacketSpec, medium: &MediumParams, eps: f64, grid: &GridSpec) -> Result<MaxwellState> {
    if grid.dims() != 1 {
        return Err(Error::Unsupported("the Maxwell oracle is one-dimensional".into()));
    }
    medium.validate()?;
    if spec.envelope.len() != grid.size() {
        return Err(Error::DimensionMismatch { expected: grid.size(), got: spec.envelope.len() });
    }
    carrier_mode(spec.carrier_k, eps, grid)?;
    let env = SpectralField { grid: grid.clone(), data: vec![spec.envelope.clone()] };
    env.check_boundary_decay()?;
    let r = lift_1d(spec.carrier_k, spec.branch, medium)?;
    let mut u = SpectralField::zeros(grid, 4);
    let z = grid.coords(0);
    for (j, x) in z.iter().enumerate() {
        let ph = Complex64::from_polar(1.0, spec.carrier_k * x / eps);
        for comp in 0..4 {
            let mut v = r[comp] * spec.envelope[j];
            if let Some(d) = &spec.polarization_defect {
                v += d[j][comp];
            }
            u.data[comp][j] = c(2.0 * (v * ph).re, 0.0);
        }
    }
    let rho = medium.ionization.as_ref().map(|_| vec![0.0; grid.size()]);
    Ok(MaxwellState { u, rho, time: 0.0, epsilon: eps })
}

/// Envelope at carrier `k/eps`: multiply by `e^{-i k x/eps}` and keep `|xi| < k/eps`.
pub fn demodulate(state: &MaxwellState, k: f64, fft: &Fft) -> SpectralField {
    let grid = state.grid();
    let eps = state.epsilon;
    let z = grid.coords(0);
    let xi = grid.wavenumbers(0);
    let cut = k / eps;
    let mut out = state.u.clone();
    for comp in &mut out.data {
        for (v, x) in comp.iter_mut().zip(&z) {
            *v *= Complex64::from_polar(1.0, -k * x / eps);
        }
        fft.forward(comp);
        for (v, s) in comp.iter_mut().zip(&xi) {
            if s.abs() >= cut {
                *v = c(0.0, 0.0);
            }
        }
        fft.inverse(comp);
    }
    out
}

/// Splitting integrator with cached per-mode propagators.
#[derive(Clone, Debug)]
pub struct MaxwellSolver {
    pub grid: GridSpec,
    pub fft: Fft,
    pub medium: MediumParams,
    pub epsilon: f64,
    pub dt: f64,
    /// Laser wavenumber inside the Hilbert multiplier.
    pub k_laser: f64,
    /// Set to false to drop the Hilbert plasma current (diagnostic runs).
    pub hilbert_enabled: bool,
    props: Vec<Matrix4<Complex64>>,
    hilbert: Vec<Complex64>,
}

impl MaxwellSolver {
    /// `dt` must satisfy `0 < dt <= eps`; `k_laser` is the carrier wavenumber.
    pub fn new(grid: &GridSpec, medium: &MediumParams, eps: f64, dt: f64, k_laser: f64) -> Result<Self> {
        if grid.dims() != 1 {
            return Err(Error::Unsupported("the Maxwell oracle is one-dimensional".into()));
        }
        medium.validate()?;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {eps} must lie in (0, 1]")));
        }
        if !(dt > 0.0 && dt <= eps) {
            return Err(Error::InvalidParameter(format!("dt = {dt} must satisfy 0 < dt <= eps = {eps}")));
        }
        let props = propagators(grid, medium, eps, dt);
        let xi = grid.wavenumbers(0);
        let nyq = grid.n[0] / 2;
        let hilbert = xi
            .iter()
            .enumerate()
            .map(|(j, &x)| if j == nyq { c(0.0, 0.0) } else { hilbert_symbol(eps * x / k_laser) })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            fft: Fft::new(grid),
            medium: medium.clone(),
            epsilon: eps,
            dt,
            k_laser,
            hilbert_enabled: true,
            props,
            hilbert,
        })
    }

    /// Exact flow of the skew linear part over one full step.
    pub fn linear_step(&self, state: &mut MaxwellState) {
        for comp in &mut state.u.data {
            self.fft.forward(comp);
        }
        for (i, m) in self.props.iter().enumerate() {
            let v = nalgebra::Vector4::new(state.u.data[0][i], state.u.data[1][i], state.u.data[2][i], state.u.data[3][i]);
            let w = m * v;
            for k in 0..4 {
                state.u.data[k][i] = w[k];
            }
        }
        for comp in &mut state.u.data {
            self.fft.inverse(comp);
        }
    }

    fn hilbert_apply(&self, f: &mut [Complex64]) {
        self.fft.forward(f);
        f.iter_mut().zip(&self.hilbert).for_each(|(z, s)| *z *= s);
        self.fft.inverse(f);
    }

    /// Pointwise substep of length `h`: Kerr and damping on `Q` (exact, `P` is frozen),
    /// plus the ionization terms on `(E, rho)` by one RK4 step when present.
    pub fn pointwise_step(&self, state: &mut MaxwellState, h: f64) {
        let eps = self.epsilon;
        let m = &self.medium;
        let damp = eps.powf(1.0 + m.p) * m.omega1;
        let decay = (-damp * h).exp();
        let n = self.grid.size();
        for j in 0..n {
            let pv = state.u.data[P][j].re;
            let src = eps * m.kerr_scalar(pv, eps);
            let qv = state.u.data[Q][j];
            let grow = if damp > 0.0 { (1.0 - decay) / damp } else { h };
            state.u.data[Q][j] = qv * decay + c(src * grow, 0.0);
        }
        let (Some(ion), Some(rho)) = (m.ionization.as_ref(), state.rho.as_mut()) else {
            return;
        };
        let kk = ion.k as i32;
        let rhs = |e: &[Complex64], r: &[f64]| -> (Vec<Complex64>, Vec<f64>) {
            let mut de: Vec<Complex64> = (0..n)
                .map(|j| {
                    let a2 = e[j].re * e[j].re;
                    -eps * ion.c0 * (ion.c1 * a2.powi(kk - 1) + ion.c2 * r[j]) * e[j]
                })
                .collect();
            if self.hilbert_enabled {
                let mut re: Vec<Complex64> = (0..n).map(|j| e[j] * r[j]).collect();
                self.hilbert_apply(&mut re);
                for j in 0..n {
                    de[j] -= eps * re[j];
                }
            }
            let dr = (0..n)
                .map(|j| {
                    let a2 = e[j].re * e[j].re;
                    eps * ion.c1 * a2.powi(kk) + eps * ion.c2 * r[j] * a2
                })
                .collect();
            (de, dr)
        };
        let e0 = state.u.data[E].clone();
        let r0 = rho.clone();
        let axpy = |a: &[Complex64], b: &[Complex64], s: f64| -> Vec<Complex64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
        let raxpy = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
        let (k1e, k1r) = rhs(&e0, &r0);
        let (k2e, k2r) = rhs(&axpy(&e0, &k1e, 0.5 * h), &raxpy(&r0, &k1r, 0.5 * h));
        let (k3e, k3r) = rhs(&axpy(&e0, &k2e, 0.5 * h), &raxpy(&r0, &k2r, 0.5 * h));
        let (k4e, k4r) = rhs(&axpy(&e0, &k3e, h), &raxpy(&r0, &k3r, h));
        for j in 0..n {
            state.u.data[E][j] = e0[j] + (k1e[j] + 2.0 * k2e[j] + 2.0 * k3e[j] + k4e[j]) * (h / 6.0);
            rho[j] = (r0[j] + (k1r[j] + 2.0 * k2r[j] + 2.0 * k3r[j] + k4r[j]) * (h / 6.0)).max(r0[j]);
        }
    }

    /// One Strang step of length `self.dt`.
    pub fn step(&self, state: &mut MaxwellState) -> Result<()> {
        self.pointwise_step(state, 0.5 * self.dt);
        self.linear_step(state);
        self.pointwise_step(state, 0.5 * self.dt);
        state.time += self.dt;
        state.check_finite()
    }

    /// Advances to `t_final`, shortening the last step when needed.
    pub fn advance_to(&self, state: &mut MaxwellState, t_final: f64) -> Result<()> {
        let steps = ((t_final - state.time) / self.dt - 1e-9).ceil().max(0.0) as usize;
        if steps == 0 {
            return Ok(());
        }
        let h = (t_final - state.time) / steps as f64;
        let solver = if (h - self.dt).abs() > 1e-15 * self.dt { Some(self.with_dt(h)) } else { None };
        let s = solver.as_ref().unwrap_or(self);
        for _ in 0..steps {
            s.step(state)?;
        }
        state.time = t_final;
        Ok(())
    }

    /// Same solver with another step size.
    pub fn with_dt(&self, dt: f64) -> Self {
        let props = propagators(&self.grid, &self.medium, self.epsilon, dt);
        Self { dt, props, ..self.clone() }
    }

    /// Conserved energy of the undamped, non-ionized system:
    /// `|U|^2/2 - (eps^2/w0) int Phi(P)` with `Phi' = Kerr`.
    pub fn energy(&self, state: &MaxwellState) -> f64 {
        let eps = self.epsilon;
        let h = self.grid.cell_volume();
        let quad = state.u.l2_norm_sq() * 0.5;
        let pot: f64 = state.u.data[P]
            .iter()
            .map(|z| {
                let pv = z.re;
                // Simpson rule on [0, P]
                let n = 64;
                let dx = pv / n as f64;
                let mut s = self.medium.kerr_scalar(0.0, eps) + self.medium.kerr_scalar(pv, eps);
                for i in 1..n {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    s += w * self.medium.kerr_scalar(i as f64 * dx, eps);
                }
                s * dx / 3.0
            })
            .sum::<f64>()
            * h;
        quad - eps * eps / self.medium.omega0 * pot
    }
}

/// Per-mode propagators. The Nyquist mode keeps only the even part of the
/// generator, which stays unitary and maps real data to real data.
fn propagators(grid: &GridSpec, m: &MediumParams, eps: f64, dt: f64) -> Vec<Matrix4<Complex64>> {
    let nyq = grid.n[0] / 2;
    grid.wavenumbers(0)
        .iter()
        .enumerate()
        .map(|(j, &x)| if j == nyq && grid.n[0].is_multiple_of(2) { propagator(0.0, m, eps, dt) } else { propagator(x, m, eps, dt) })
        .collect()
}

/// `exp(-dt (i xi A1 + E/eps)) = exp(-(i dt/eps) M(eps xi))` with `M` Hermitian.
pub(crate) fn propagator(xi: f64, m: &MediumParams, eps: f64, dt: f64) -> Matrix4<Complex64> {
    let h = symbol_1d(eps * xi, m);
    let h = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut out = Matrix4::zeros();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        out += v * v.adjoint() * Complex64::from_polar(1.0, -dt * lam / eps);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::branch_omega;
    use std::f64::consts::PI;

    fn setup(eps: f64, amp: f64) -> (GridSpec, MediumParams, WavePacketSpec) {
        let g = GridSpec::new_1d(512, 8.0 * PI).unwrap();
        let m = MediumParams::cubic(1.0, 1.0);
        let env = g.coords(0).iter().map(|x| c(amp * (-x * x).exp(), 0.0)).collect();
        let _ = eps;
        (g, m, WavePacketSpec { envelope: env, carrier_k: 2.0, branch: Branch::PlusMinus, polarization_defect: None })
    }

    #[test]
    fn hilbert_values() {
        assert_eq!(hilbert_symbol(0.0), c(0.0, 0.0));
        assert!((hilbert_symbol(1.0) - c(0.0, 1.0)).norm() < 1e-15);
        assert!((hilbert_symbol(1e9) - c(0.0, 2f64.sqrt())).norm() < 1e-9);
    }

    #[test]
    fn kerr_examples() {
        let m = MediumParams::cubic(1.0, 1.0);
        assert_eq!(m.kerr(&[1.0, 0.0, 0.0], 0.3), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn carrier_must_be_on_lattice() {
        let (g, m, spec) = setup(0.1, 0.5);
        assert!(init_wave_packet(&spec, &m, 0.1, &g).is_ok());
        match init_wave_packet(&spec, &m, 0.103, &g) {
            Err(Error::CarrierNotRepresentable { below, above, .. }) => {
                assert!(below < 0.103 && above > 0.103);
                assert!(carrier_mode(2.0, below, &g).is_ok() && carrier_mode(2.0, above, &g).is_ok());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_envelope_gives_zero_state() {
        let (g, m, mut spec) = setup(0.1, 0.0);
        spec.envelope.iter_mut().for_each(|z| *z = c(0.0, 0.0));
        let mut s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        let solver = MaxwellSolver::new(&g, &m, 0.1, 0.0125, 2.0).unwrap();
        solver.step(&mut s).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
    }

    #[test]
    fn demodulation_recovers_lift() {
        let (g, m, spec) = setup(0.1, 0.5);
        let s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        assert!(s.u.boundary_ratio() < 1e-8);
        assert!(s.reality_residue() == 0.0);
        let env = demodulate(&s, 2.0, &Fft::new(&g));
        let r = lift_1d(2.0, Branch::PlusMinus, &m).unwrap();
        for j in 0..g.size() {
            for k in 0..4 {
                assert!((env.data[k][j] - r[k] * spec.envelope[j]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn single_mode_phase_is_exact() {
        let g = GridSpec::new_1d(256, 8.0 * PI).unwrap();
        let m = MediumParams::cubic(1.0, 1.0);
        let eps = 0.1;
        let xi = 2.0 / eps;
        for b in Branch::ALL {
            let r = lift_1d(2.0, b, &m).unwrap();
            let mut s = MaxwellState { u: SpectralField::from_fn(&g, 4, |x| (0..4).map(|k| r[k] * Complex64::from_polar(1e-8, xi * x[0])).collect()), rho: None, time: 0.0, epsilon: eps };
            let start = s.u.clone();
            let dt = 0.0731;
            let solver = MaxwellSolver::new(&g, &m, eps, dt, 2.0).unwrap();
            solver.linear_step(&mut s);
            let ph = Complex64::from_polar(1.0, -branch_omega(2.0, b, &m) * dt / eps);
            for k in 0..4 {
                for j in 0..256 {
                    let d = (s.u.data[k][j] - start.data[k][j] * ph).norm();
                    assert!(d < 1e-9 * 1e-8, "{b:?} {k} {j} {d} {} {}", s.u.data[k][j], start.data[k][j] * ph);
                }
            }
        }
    }

    #[test]
    fn stays_real_and_conserves_energy() {
        let (g, m, spec) = setup(0.1, 0.2);
        let mut s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        let solver = MaxwellSolver::new(&g, &m, 0.1, 0.0125, 2.0).unwrap();
        let e0 = solver.energy(&s);
        for _ in 0..1000 {
            solver.step(&mut s).unwrap();
        }
        assert!(s.reality_residue() < 1e-10);
        let e1 = solver.energy(&s);
        assert!(((e1 - e0) / e0).abs() < 1e-5, "{e0} {e1}");
    }

    #[test]
    fn small_amplitude_conserves_l2() {
        let (g, m, spec) = setup(0.1, 1e-3);
        let mut s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        let solver = MaxwellSolver::new(&g, &m, 0.1, 0.0125, 2.0).unwrap();
        let n0 = s.u.l2_norm_sq();
        for _ in 0..1000 {
            solver.step(&mut s).unwrap();
        }
        assert!(((s.u.l2_norm_sq() - n0) / n0).abs() < 1e-8);
    }

    #[test]
    fn second_order_in_time() {
        let (g, m, spec) = setup(0.1, 0.2);
        let s0 = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        let run = |dt: f64| {
            let mut s = s0.clone();
            MaxwellSolver::new(&g, &m, 0.1, dt, 2.0).unwrap().advance_to(&mut s, 2.0).unwrap();
            s
        };
        let dt = 0.05;
        let reference = run(dt / 16.0);
        let err = |s: &MaxwellState| {
            s.u.data.iter().zip(&reference.u.data).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm())).fold(0.0, f64::max)
        };
        let e1 = err(&run(dt));
        let e2 = err(&run(dt / 2.0));
        let order = (e1 / e2).log2();
        assert!((1.8..=2.2).contains(&order), "order {order} ({e1}, {e2})");
    }

    fn ionizing() -> MediumParams {
        let mut m = MediumParams::cubic(1.0, 1.0);
        m.ionization = Some(crate::dispersion::Ionization { c: 1.0, c0: 0.5, c1: 0.4, c2: 0.3, k: 2, alpha4: 0.0, alpha5: 0.0 });
        m
    }

    #[test]
    fn ionization_density_grows_monotonically() {
        let (g, _, spec) = setup(0.1, 0.2);
        let m = ionizing();
        let mut s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        assert!(s.rho.as_ref().unwrap().iter().all(|v| *v == 0.0));
        let solver = MaxwellSolver::new(&g, &m, 0.1, 0.0125, 2.0).unwrap();
        let mut prev = s.rho.clone().unwrap();
        for _ in 0..200 {
            solver.step(&mut s).unwrap();
            let now = s.rho.clone().unwrap();
            assert!(now.iter().zip(&prev).all(|(a, b)| a >= b && *a >= 0.0));
            prev = now;
        }
        assert!(s.max_rho() > 0.0);
        assert!(s.reality_residue() < 1e-10);
    }

    #[test]
    fn zero_field_freezes_density() {
        let g = GridSpec::new_1d(64, 8.0 * PI).unwrap();
        let m = ionizing();
        let rho: Vec<f64> = g.coords(0).iter().map(|x| (-x * x).exp()).collect();
        let mut s = MaxwellState { u: SpectralField::zeros(&g, 4), rho: Some(rho.clone()), time: 0.0, epsilon: 0.1 };
        MaxwellSolver::new(&g, &m, 0.1, 0.01, 2.0).unwrap().step(&mut s).unwrap();
        assert_eq!(s.rho.unwrap(), rho);
    }

    #[test]
    fn absorption_alone_dissipates_e() {
        let (g, _, spec) = setup(0.1, 0.2);
        let m = ionizing();
        let mut s = init_wave_packet(&spec, &m, 0.1, &g).unwrap();
        let mut solver = MaxwellSolver::new(&g, &m, 0.1, 0.0125, 2.0).unwrap();
        solver.hilbert_enabled = false;
        let norm = |s: &MaxwellState| s.u.data[E].iter().map(|z| z.norm_sqr()).sum::<f64>();
        let mut prev = norm(&s);
        for _ in 0..100 {
            solver.pointwise_step(&mut s, 0.05);
            let now = norm(&s);
            assert!(now <= prev);
            prev = now;
        }
    }
}
