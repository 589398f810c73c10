//! Envelope nonlinearities: the filtered Kerr term `F^env`, the filtered
//! ionization term `G^env`, the pointwise ionization right-hand side and the
//! slaved moving-frame density `rho~`.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft as RustFft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, BOUNDARY_DECAY};

/// Number of nodes of the trapezoidal rule in `theta`.
pub const THETA_POINTS: usize = 64;

/// Saturation function `f` of the model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FKind {
    Zero,
    Quintic,
    Saturated,
}

impl FKind {
    /// `1 + f(s)`: `1`, `1 - s` or `1 / (1 + s)`.
    pub fn gain(self, s: f64) -> f64 {
        match self {
            Self::Zero => 1.0,
            Self::Quintic => 1.0 - s,
            Self::Saturated => 1.0 / (1.0 + s),
        }
    }

    /// Potential `V(rho)` with `V'(rho) = (1 + f(a rho)) rho`, where `a = eps^r`.
    pub fn potential(self, rho: f64, a: f64) -> f64 {
        match self {
            Self::Zero => 0.5 * rho * rho,
            Self::Quintic => 0.5 * rho * rho - a * rho.powi(3) / 3.0,
            Self::Saturated => {
                if a == 0.0 {
                    0.5 * rho * rho
                } else {
                    rho / a - (a * rho).ln_1p() / (a * a)
                }
            }
        }
    }
}

impl FromStr for FKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "quintic" => Ok(Self::Quintic),
            "saturated" => Ok(Self::Saturated),
            _ => Err(Error::InvalidParameter(format!("unknown f_kind '{s}'"))),
        }
    }
}

fn bilinear(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(u: &[Complex64]) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum()
}

/// Closed form `(u.u) conj(u) + 2 |u|^2 u` of the filtered cubic term.
pub fn fenv_cubic(u: &[Complex64]) -> Vec<Complex64> {
    let uu = bilinear(u, u);
    let n2 = norm_sq(u);
    u.iter().map(|z| uu * z.conj() + 2.0 * n2 * z).collect()
}

/// `(1/2pi) int e^{-i theta} F(u e^{i theta} + c.c.) d theta` by the trapezoidal rule.
pub fn fenv_quadrature(u: &[Complex64], points: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); u.len()];
    let mut e = vec![0.0; u.len()];
    for j in 0..points {
        let th = 2.0 * PI * j as f64 / points as f64;
        let ph = Complex64::from_polar(1.0, th);
        for (ei, ui) in e.iter_mut().zip(u) {
            *ei = 2.0 * (ui * ph).re;
        }
        let fe = f(&e);
        for (a, v) in acc.iter_mut().zip(fe) {
            *a += ph.conj() * v;
        }
    }
    acc.iter().map(|a| a / points as f64).collect()
}

/// Filtered family nonlinearity `(1 + f(eps^r |E|^2)) |E|^2 E`; `eps_r = eps^r`.
pub fn fenv_general(u: &[Complex64], kind: FKind, eps_r: f64) -> Vec<Complex64> {
    fenv_quadrature(u, THETA_POINTS, |e| {
        let e2: f64 = e.iter().map(|v| v * v).sum();
        let s = kind.gain(eps_r * e2) * e2;
        e.iter().map(|v| s * v).collect()
    })
}

/// Filtered ionization source `G(E, w) = c1 |E|^{2K-2} E + c2 w E`.
pub fn genv(u: &[Complex64], w: f64, k: u32, c1: f64, c2: f64) -> Vec<Complex64> {
    match k {
        0 => u.iter().map(|z| z * c2 * w).collect(),
        1 => u.iter().map(|z| z * (c1 + c2 * w)).collect(),
        2 => fenv_cubic(u).iter().zip(u).map(|(f, z)| c1 * f + c2 * w * z).collect(),
        _ => fenv_quadrature(u, THETA_POINTS, |e| {
            let e2: f64 = e.iter().map(|v| v * v).sum();
            let s = c1 * e2.powi(k as i32 - 1) + c2 * w;
            e.iter().map(|v| s * v).collect()
        }),
    }
}

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Combinatorial expansion of `2 G^env . conj(u)` for `c1 = 1, c2 = 0` in closed form
/// `2^K |u|^{2K} + 2 sum_{j=1}^{K/2} C(K-1,j) C(K-j,j) (2|u|^2)^{K-2j} |u.u|^{2j}`.
pub fn closed_form_expansion(u: &[Complex64], k: u32) -> f64 {
    let n2 = norm_sq(u);
    let uu = bilinear(u, u).norm();
    let mut s = (2.0 * n2).powi(k as i32);
    for j in 1..=(k / 2) {
        s += 2.0 * binom((k - 1) as u64, j as u64) * binom((k - j) as u64, j as u64) * (2.0 * n2).powi((k - 2 * j) as i32) * uu.powi(2 * j as i32);
    }
    s
}

/// Exact theta-average of `|u e^{i theta} + c.c.|^{2K}`:
/// `sum_j K! / (j!^2 (K-2j)!) (2|u|^2)^{K-2j} |u.u|^{2j}`.
pub fn multinomial_expansion(u: &[Complex64], k: u32) -> f64 {
    let n2 = norm_sq(u);
    let uu = bilinear(u, u).norm();
    (0..=(k / 2))
        .map(|j| {
            let coef = binom(k as u64, 2 * j as u64) * binom(2 * j as u64, j as u64);
            coef * (2.0 * n2).powi((k - 2 * j) as i32) * uu.powi(2 * j as i32)
        })
        .sum()
}

/// Ionization constants of the envelope models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeIonization {
    pub c: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub k: u32,
    /// Group velocity used by the fixed-frame transport and the slaved density.
    pub c_g: f64,
}

impl EnvelopeIonization {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("ionization.k must be >= 1".into()));
        }
        for (n, v) in [("c", self.c), ("alpha4", self.alpha4), ("alpha5", self.alpha5)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("ionization.{n} = {v} must be >= 0")));
            }
        }
        if !self.c_g.is_finite() {
            return Err(Error::InvalidParameter("ionization.c_g must be finite".into()));
        }
        Ok(())
    }
}

/// Pointwise right-hand side of the fixed-frame ionized model:
/// `du = i eps (|u|^2 - rho) u - eps c (a4 |u|^{2K-2} + a5 rho) u`,
/// `drho = eps a4 |u|^{2K} + eps a5 rho |u|^2`.
pub fn ionization_rhs(u: Complex64, rho: f64, eps: f64, ion: &EnvelopeIonization) -> (Complex64, f64) {
    let n2 = u.norm_sqr();
    let nk1 = n2.powi(ion.k as i32 - 1);
    let du = Complex64::new(0.0, eps * (n2 - rho)) * u - eps * ion.c * (ion.alpha4 * nk1 + ion.alpha5 * rho) * u;
    let drho = eps * ion.alpha4 * nk1 * n2 + eps * ion.alpha5 * rho * n2;
    (du, drho)
}

/// Spectrally exact cumulative integrals along one periodic line.
#[derive(Clone)]
pub struct LineIntegrator {
    n: usize,
    length: f64,
    fwd: Arc<dyn RustFft<f64>>,
    inv: Arc<dyn RustFft<f64>>,
    inv_k: Vec<Complex64>,
}

impl LineIntegrator {
    pub fn new(n: usize, length: f64) -> Self {
        let mut p = FftPlanner::new();
        let dk = 2.0 * PI / length;
        let inv_k = (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as isize } else { j as isize - n as isize };
                if m == 0 || j == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, -1.0 / (m as f64 * dk))
                }
            })
            .collect();
        Self { n, length, fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n), inv_k }
    }

    /// `int_{z_j}^{z_0 + L} f` for every node, where `f` is sampled at `z_0 + j h`.
    pub fn from_right(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let mean = buf[0].re / n as f64;
        buf.iter_mut().zip(&self.inv_k).for_each(|(z, s)| *z *= s);
        self.inv.process(&mut buf);
        let h = self.length / n as f64;
        let per0 = buf[0].re / n as f64;
        (0..n)
            .map(|j| {
                let left = mean * j as f64 * h + buf[j].re / n as f64 - per0;
                mean * self.length - left
            })
            .collect()
    }
}

/// Slaved moving-frame density
/// `rho~(z) = int_z^inf (eps a4 / c_g) |v|^{2K}(s) exp((eps a5 / c_g) int_z^s |v|^2) ds`,
/// solved line by line along `z`.
pub struct RhoTildeSolver {
    grid: GridSpec,
    line: LineIntegrator,
}

impl RhoTildeSolver {
    pub fn new(grid: &GridSpec) -> Self {
        let z = grid.z_axis();
        Self { grid: grid.clone(), line: LineIntegrator::new(grid.n[z], grid.lengths[z]) }
    }

    /// `intensity` holds `|v|^2` at every node.
    pub fn solve(&self, intensity: &[f64], eps: f64, ion: &EnvelopeIonization) -> Result<Vec<f64>> {
        let z = self.grid.z_axis();
        let nz = self.grid.n[z];
        let rows = self.grid.size() / nz;
        if ion.c_g <= 0.0 {
            return Err(Error::InvalidParameter("moving-frame density needs c_g > 0".into()));
        }
        let peak = intensity.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return Ok(vec![0.0; intensity.len()]);
        }
        let edge = (0..rows).map(|r| intensity[r * nz + nz - 1].max(intensity[r * nz])).fold(0.0, f64::max);
        if edge.sqrt() >= BOUNDARY_DECAY * peak.sqrt() {
            return Err(Error::Precondition(format!(
                "|v| at the z edges is {:.2e} of peak; enlarge the box so the density boundary condition applies",
                (edge / peak).sqrt()
            )));
        }
        let s = eps * ion.alpha4 / ion.c_g;
        let a = eps * ion.alpha5 / ion.c_g;
        let mut out = vec![0.0; intensity.len()];
        for r in 0..rows {
            let h = &intensity[r * nz..(r + 1) * nz];
            let g: Vec<f64> = h.iter().map(|v| v.powi(ion.k as i32)).collect();
            let res = if a == 0.0 {
                self.line.from_right(&g).iter().map(|v| s * v).collect::<Vec<_>>()
            } else {
                // R(z) = int_z^end h, so int_z^s h = R(z) - R(s).
                let rh = self.line.from_right(h);
                let q: Vec<f64> = g.iter().zip(&rh).map(|(gv, rv)| s * gv * (-a * rv).exp()).collect();
                let rq = self.line.from_right(&q);
                rq.iter().zip(&rh).map(|(qv, rv)| qv * (a * rv).exp()).collect()
            };
            for (o, v) in out[r * nz..(r + 1) * nz].iter_mut().zip(res) {
                *o = v.max(0.0);
            }
        }
        Ok(out)
    }
}
