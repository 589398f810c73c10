//! Characteristic variety of the Maxwell-Lorentz system, eigenprojectors,
//! polarization lifts and the coefficients of the reduced NLS models.
//!
//! The curved sheets solve `w^4 - w^2 (w0^2 + g + k^2) + w0^2 k^2 = 0`;
//! the constant sheets are `0` (double) and `+-sqrt(g + w0^2)`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat12 = SMatrix<Complex64, 12, 12>;
pub type Vec12 = SVector<Complex64, 12>;

/// `|w^2 - w0^2|` below this is treated as resonance.
pub const RESONANCE_GUARD: f64 = 1e-8;
/// Quartic residual below this counts as lying on the variety.
pub const NONRESONANCE_TOL: f64 = 1e-6;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Shape of the Kerr saturation `1 + f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    Cubic,
    CubicQuintic,
    Saturated,
}

impl NonlinearityKind {
    /// `1 + f(x)` with `x = a eps^r |P|^2`.
    pub fn gain(self, x: f64) -> f64 {
        match self {
            Self::Cubic => 1.0,
            Self::CubicQuintic => 1.0 - x,
            Self::Saturated => (1.0 + x / 3.0) / (1.0 + 2.0 * x / 3.0).powi(2),
        }
    }
}

impl FromStr for NonlinearityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(Self::Cubic),
            "cubic_quintic" => Ok(Self::CubicQuintic),
            "saturated" => Ok(Self::Saturated),
            _ => Err(Error::InvalidParameter(format!("unknown nonlinearity kind '{s}'"))),
        }
    }
}

/// Multiphoton ionization and plasma coupling constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ionization {
    pub c: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Number of photons.
    pub k: u32,
    pub alpha4: f64,
    pub alpha5: f64,
}

impl Ionization {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("photon number K must be >= 1".into()));
        }
        for (name, v) in [
            ("c", self.c),
            ("c0", self.c0),
            ("c1", self.c1),
            ("c2", self.c2),
            ("alpha4", self.alpha4),
            ("alpha5", self.alpha5),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("ionization.{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Dimensionless Lorentz medium; omitted config fields take the undamped cubic defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Coupling `g > 0`.
    pub gamma: f64,
    /// Resonance frequency `w0 > 0`.
    pub omega0: f64,
    /// Damping `w1 >= 0`.
    #[serde(default)]
    pub omega1: f64,
    /// Damping exponent `p > 0`; damping enters as `eps^(1+p) w1`.
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default = "cubic_kind")]
    pub nonlinearity: NonlinearityKind,
    /// Saturation exponent `r > 0`.
    #[serde(default = "one")]
    pub r: f64,
    /// Saturation amplitude.
    #[serde(default)]
    pub a_tilde: f64,
    #[serde(default)]
    pub ionization: Option<Ionization>,
}

fn one() -> f64 {
    1.0
}

fn cubic_kind() -> NonlinearityKind {
    NonlinearityKind::Cubic
}

impl MediumParams {
    /// Undamped cubic medium.
    pub fn cubic(gamma: f64, omega0: f64) -> Self {
        Self {
            gamma,
            omega0,
            omega1: 0.0,
            p: 1.0,
            nonlinearity: NonlinearityKind::Cubic,
            r: 1.0,
            a_tilde: 0.0,
            ionization: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
            }
        };
        pos("gamma", self.gamma)?;
        pos("omega0", self.omega0)?;
        pos("p", self.p)?;
        pos("r", self.r)?;
        if !(self.omega1 >= 0.0 && self.omega1.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega1 = {} must be >= 0", self.omega1)));
        }
        if !self.a_tilde.is_finite() {
            return Err(Error::InvalidParameter("a_tilde must be finite".into()));
        }
        if let Some(ion) = &self.ionization {
            ion.validate()?;
        }
        Ok(())
    }

    /// Kerr source `(g/w0^3) (1 + f(eps^r |P|^2)) |P|^2 P` for a real polarization vector.
    pub fn kerr(&self, p: &[f64], eps: f64) -> Vec<f64> {
        let p2: f64 = p.iter().map(|v| v * v).sum();
        let s = self.gamma / self.omega0.powi(3) * self.nonlinearity.gain(self.a_tilde * eps.powf(self.r) * p2) * p2;
        p.iter().map(|v| s * v).collect()
    }

    /// Scalar form of [`MediumParams::kerr`].
    pub fn kerr_scalar(&self, p: f64, eps: f64) -> f64 {
        let p2 = p * p;
        self.gamma / self.omega0.powi(3) * self.nonlinearity.gain(self.a_tilde * eps.powf(self.r) * p2) * p2 * p
    }
}

/// One of the four curved sheets `w_{s1,s2}`: `s1` is the overall sign,
/// `s2` selects the upper (`+`) or lower (`-`) root of the quartic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "++")]
    PlusPlus,
    #[serde(rename = "+-")]
    PlusMinus,
    #[serde(rename = "-+")]
    MinusPlus,
    #[serde(rename = "--")]
    MinusMinus,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Self::PlusPlus, Self::PlusMinus, Self::MinusPlus, Self::MinusMinus];

    fn sign(self) -> f64 {
        match self {
            Self::PlusPlus | Self::PlusMinus => 1.0,
            _ => -1.0,
        }
    }

    fn upper(self) -> bool {
        matches!(self, Self::PlusPlus | Self::MinusPlus)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::PlusPlus => "++",
            Self::PlusMinus => "+-",
            Self::MinusPlus => "-+",
            Self::MinusMinus => "--",
        }
    }
}

impl FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "++" | "pp" | "plus_plus" => Ok(Self::PlusPlus),
            "+-" | "pm" | "plus_minus" => Ok(Self::PlusMinus),
            "-+" | "mp" | "minus_plus" => Ok(Self::MinusPlus),
            "--" | "mm" | "minus_minus" => Ok(Self::MinusMinus),
            _ => Err(Error::InvalidParameter(format!("unknown branch '{s}'"))),
        }
    }
}

/// `G(w, k) = w^4 - w^2 (w0^2 + g + k^2) + w0^2 k^2`.
pub fn quartic(omega: f64, k: f64, m: &MediumParams) -> f64 {
    let w2 = omega * omega;
    let k2 = k * k;
    w2 * w2 - w2 * (m.omega0 * m.omega0 + m.gamma + k2) + m.omega0 * m.omega0 * k2
}

/// Discriminant in the cancellation-free form `(w0^2 + g - k^2)^2 + 4 g k^2`.
pub fn discriminant(k: f64, m: &MediumParams) -> f64 {
    let a = m.omega0 * m.omega0 + m.gamma - k * k;
    a * a + 4.0 * m.gamma * k * k
}

/// Frequency of a curved sheet at `|k|`.
pub fn branch_omega(k: f64, branch: Branch, m: &MediumParams) -> f64 {
    let s = m.omega0 * m.omega0 + m.gamma + k * k;
    let big = s + discriminant(k, m).sqrt();
    let w2 = if branch.upper() { 0.5 * big } else { 2.0 * m.omega0 * m.omega0 * k * k / big };
    branch.sign() * w2.sqrt()
}

/// Curved roots `(++, +-, -+, --)` and constant sheets `(0, +sqrt(g+w0^2), -sqrt(g+w0^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roots {
    pub curved: [f64; 4],
    pub constant: [f64; 3],
}

pub fn dispersion_roots(k: f64, m: &MediumParams) -> Roots {
    let s = (m.gamma + m.omega0 * m.omega0).sqrt();
    Roots { curved: Branch::ALL.map(|b| branch_omega(k, b, m)), constant: [0.0, s, -s] }
}

/// Alternative closed form `+-(1/sqrt 2) sqrt(S +- sqrt(D))`, kept as a cross-check.
pub fn branch_omega_textbook(k: f64, branch: Branch, m: &MediumParams) -> f64 {
    let s = m.omega0 * m.omega0 + m.gamma + k * k;
    let d = (s * s - 4.0 * m.omega0 * m.omega0 * k * k).sqrt();
    let inner = if branch.upper() { s + d } else { s - d };
    branch.sign() * FRAC_1_SQRT_2 * inner.max(0.0).sqrt()
}

/// `w`, `w'` and `w''` along a branch, by implicit differentiation of `G`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub omega: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn omega_derivatives(k: f64, branch: Branch, m: &MediumParams) -> Result<Derivatives> {
    let w = branch_omega(k, branch, m);
    let w0s = m.omega0 * m.omega0;
    let s = w0s + m.gamma + k * k;
    let g_w = 4.0 * w.powi(3) - 2.0 * w * s;
    let g_k = -2.0 * k * w * w + 2.0 * w0s * k;
    let scale = w.abs().powi(3) + w.abs() * s + 1e-300;
    if g_w.abs() < 1e-12 * scale {
        return Err(Error::Resonance(format!("double root at k = {k}: derivatives undefined")));
    }
    let d1 = -g_k / g_w;
    let g_ww = 12.0 * w * w - 2.0 * s;
    let g_wk = -4.0 * k * w;
    let g_kk = -2.0 * w * w + 2.0 * w0s;
    let d2 = -(g_ww * d1 * d1 + 2.0 * g_wk * d1 + g_kk) / g_w;
    Ok(Derivatives { omega: w, d1, d2 })
}

/// `N^2 = k^2/w^2 + 1 + g (w^2 + w0^2) / (w^2 - w0^2)^2`.
pub fn n_sq(k: f64, omega: f64, m: &MediumParams) -> f64 {
    let w2 = omega * omega;
    let w0s = m.omega0 * m.omega0;
    k * k / w2 + 1.0 + m.gamma * (w2 + w0s) / (w2 - w0s).powi(2)
}

fn guard(omega: f64, m: &MediumParams) -> Result<()> {
    if omega == 0.0 {
        return Err(Error::Resonance("lift undefined at w = 0".into()));
    }
    if (omega * omega - m.omega0 * m.omega0).abs() < RESONANCE_GUARD {
        return Err(Error::Resonance(format!("w = {omega} hits the material resonance w0 = {}", m.omega0)));
    }
    Ok(())
}

/// Scalar lift factors `(q, p)` with `q# = q e`, `p# = p e` (`q` is imaginary).
pub fn lift_factors(omega: f64, m: &MediumParams) -> Result<(Complex64, f64)> {
    guard(omega, m)?;
    let den = omega * omega - m.omega0 * m.omega0;
    let sg = m.gamma.sqrt();
    Ok((c(0.0, omega * sg / den), -m.omega0 * sg / den))
}

/// Curl symbol `k x .` as a matrix.
pub fn cross_matrix(k: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0)
}

/// Lifts a transverse electric amplitude `e` to `U = (b, e, q#, p#)` on a curved sheet.
pub fn polarization_lift(k: &Vector3<f64>, e: &Vector3<Complex64>, branch: Branch, m: &MediumParams) -> Result<Vec12> {
    let kk = k.norm();
    let ek: Complex64 = e.iter().zip(k.iter()).map(|(a, b)| a * b).sum();
    if ek.norm() > 1e-12 * (1.0 + kk * e.norm()) {
        return Err(Error::InvalidParameter("polarization must satisfy e . k = 0".into()));
    }
    let w = branch_omega(kk, branch, m);
    let (q, p) = lift_factors(w, m)?;
    let kx = cross_matrix(k).map(|v| c(v, 0.0));
    let b = kx * e / c(w, 0.0);
    let mut u = Vec12::zeros();
    for i in 0..3 {
        u[i] = b[i];
        u[3 + i] = e[i];
        u[6 + i] = q * e[i];
        u[9 + i] = e[i] * p;
    }
    Ok(u)
}

/// 1D transverse lift `(B_y, E_x, Q_x, P_x)` with unit electric amplitude.
pub fn lift_1d(k: f64, branch: Branch, m: &MediumParams) -> Result<Vector4<Complex64>> {
    let w = branch_omega(k.abs(), branch, m);
    let (q, p) = lift_factors(w, m)?;
    Ok(Vector4::new(c(k / w, 0.0), c(1.0, 0.0), q, c(p, 0.0)))
}

/// Hermitian symbol `A(k) + E/i` of the 3D system; `L(w, k) = -w I + symbol`.
pub fn symbol_3d(k: &Vector3<f64>, m: &MediumParams) -> Mat12 {
    let mut s = Mat12::zeros();
    let kx = cross_matrix(k);
    let sg = m.gamma.sqrt();
    for i in 0..3 {
        for j in 0..3 {
            s[(i, 3 + j)] = c(kx[(i, j)], 0.0);
            s[(3 + i, j)] = c(-kx[(i, j)], 0.0);
        }
        // E/i = -i E
        s[(3 + i, 6 + i)] = c(0.0, -sg);
        s[(6 + i, 3 + i)] = c(0.0, sg);
        s[(6 + i, 9 + i)] = c(0.0, -m.omega0);
        s[(9 + i, 6 + i)] = c(0.0, m.omega0);
    }
    s
}

/// Skew coupling matrix `E` of the 1D transverse system.
pub fn coupling_1d(m: &MediumParams) -> Matrix4<f64> {
    let sg = m.gamma.sqrt();
    let w0 = m.omega0;
    Matrix4::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, sg, 0.0, 0.0, -sg, 0.0, w0, 0.0, 0.0, -w0, 0.0)
}

/// Hermitian symbol `k A1 + E/i` of the 1D transverse system.
pub fn symbol_1d(k: f64, m: &MediumParams) -> Matrix4<Complex64> {
    let e = coupling_1d(m);
    let mut s = e.map(|v| c(0.0, -v));
    s[(0, 1)] += c(k, 0.0);
    s[(1, 0)] += c(k, 0.0);
    s
}

/// Orthogonal eigenprojector of a curved sheet, `R Pi R* / N^2` with
/// `R = (k x / w, I, q I, p I)` and `Pi` the projection transverse to `k`.
pub fn projector(k: &Vector3<f64>, branch: Branch, m: &MediumParams) -> Result<Mat12> {
    let kk = k.norm();
    if kk == 0.0 {
        return Err(Error::InvalidParameter("projector needs k != 0".into()));
    }
    let w = branch_omega(kk, branch, m);
    let (q, p) = lift_factors(w, m)?;
    let khat = k / kk;
    let pi = (Matrix3::identity() - khat * khat.transpose()).map(|v| c(v, 0.0));
    let kx = cross_matrix(k).map(|v| c(v / w, 0.0));
    let id = Matrix3::<Complex64>::identity();
    let blocks = [kx, id, id * q, id * c(p, 0.0)];
    let n2 = n_sq(kk, w, m);
    let mut out = Mat12::zeros();
    for (bi, ri) in blocks.iter().enumerate() {
        for (bj, rj) in blocks.iter().enumerate() {
            let blk = ri * pi * rj.adjoint() / c(n2, 0.0);
            out.fixed_view_mut::<3, 3>(3 * bi, 3 * bj).copy_from(&blk);
        }
    }
    Ok(out)
}

/// Rank-one projector of the 1D transverse system.
pub fn projector_1d(k: f64, branch: Branch, m: &MediumParams) -> Result<Matrix4<Complex64>> {
    let r = lift_1d(k, branch, m)?;
    Ok(r * r.adjoint() / c(r.norm_squared(), 0.0))
}

/// Projectors onto the constant sheets `(0, +sqrt(g+w0^2), -sqrt(g+w0^2))`, obtained
/// by diagonalizing the symbol on the orthogonal complement of the curved ranges.
pub fn constant_projectors(k: &Vector3<f64>, m: &MediumParams) -> Result<[Mat12; 3]> {
    let mut curved = Mat12::zeros();
    for b in Branch::ALL {
        curved += projector(k, b, m)?;
    }
    let q = Mat12::identity() - curved;
    let l0 = symbol_3d(k, m);
    let s = (m.gamma + m.omega0 * m.omega0).sqrt();
    let shift = 10.0 * (s + k.norm() + 1.0);
    let h = q * l0 * q + (Mat12::identity() - q) * c(shift, 0.0);
    let h = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let targets = [0.0, s, -s, shift];
    let mut out = [Mat12::zeros(); 3];
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let slot = targets
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - lam).abs().total_cmp(&(b.1 - lam).abs()))
            .map(|(j, _)| j)
            .unwrap_or(3);
        if slot < 3 {
            let v = eig.eigenvectors.column(i);
            out[slot] += v * v.adjoint();
        }
    }
    Ok(out)
}

/// Checks `(2p+3)(w, k)` off the characteristic variety for every `p >= 0` with `p r < 1`.
pub fn is_nonresonant(k: f64, branch: Branch, m: &MediumParams) -> bool {
    let w = branch_omega(k, branch, m);
    let sheet = m.gamma + m.omega0 * m.omega0;
    let mut p = 0u32;
    loop {
        let n = (2 * p + 3) as f64;
        let (nw, nk) = (n * w, n * k);
        if quartic(nw, nk, m).abs() < NONRESONANCE_TOL
            || nw.abs() < NONRESONANCE_TOL
            || (nw * nw - sheet).abs() < NONRESONANCE_TOL
        {
            return false;
        }
        p += 1;
        if (p as f64) * m.r >= 1.0 {
            return true;
        }
    }
}

/// Group velocity `w' e_z` and Hessian of a radial branch at `k e_z`, in `dims` dimensions.
/// The Hessian is row-major with axes `(x, z)` in 2D.
pub fn radial_derivatives(k: f64, branch: Branch, m: &MediumParams, dims: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = omega_derivatives(k, branch, m)?;
    match dims {
        1 => Ok((vec![d.d1], vec![d.d2])),
        2 => {
            if k == 0.0 {
                return Err(Error::InvalidParameter("transverse curvature undefined at k = 0".into()));
            }
            Ok((vec![0.0, d.d1], vec![d.d1 / k, 0.0, 0.0, d.d2]))
        }
        _ => Err(Error::InvalidParameter(format!("dims must be 1 or 2, got {dims}"))),
    }
}

/// Frequency at the wavevector `kp` (length 1 or 2, last entry along `z`).
pub fn omega_at(kp: &[f64], branch: Branch, m: &MediumParams) -> f64 {
    branch_omega(kp.iter().map(|v| v * v).sum::<f64>().sqrt(), branch, m)
}

/// Second-order Taylor model `w(k0) + c_g . d + d H d / 2` with `d = kp - k0 e_z`.
pub fn omega_nls(kp: &[f64], k0: f64, branch: Branch, m: &MediumParams) -> Result<f64> {
    let dims = kp.len();
    let (cg, h) = radial_derivatives(k0, branch, m, dims)?;
    let w = branch_omega(k0, branch, m);
    let mut delta = kp.to_vec();
    delta[dims - 1] -= k0;
    let lin: f64 = cg.iter().zip(&delta).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for i in 0..dims {
        for j in 0..dims {
            quad += delta[i] * h[i * dims + j] * delta[j];
        }
    }
    Ok(w + lin + 0.5 * quad)
}

/// Coefficients of the reduced NLS at carrier `k0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsCoefficients {
    pub k0: f64,
    pub omega: f64,
    pub omega_p: f64,
    pub omega_pp: f64,
    pub group_velocity: Vec<f64>,
    /// `w' / (2 k)`.
    pub diffraction: f64,
    /// `w'' / 2`.
    pub gvd: f64,
    /// `sign(w'')`, zero when `|w''| < 1e-12`.
    pub alpha1: f64,
    /// Damping rate in the slow frame.
    pub alpha2: f64,
    /// `g^3 w / (N^2 (w^2 - w0^2)^4)`.
    pub cubic_gain: f64,
    /// Closed-form polarization slope `-(w^2 - w0^2) / (sqrt(g) w)`.
    pub alpha3: f64,
    /// Polarization slope from the log-derivative of the projected output factor.
    pub alpha3_projector: f64,
    pub n_sq: f64,
    /// Ratio `p# / e` of the lift at `k0`.
    pub p_factor: f64,
}

/// Output factor `w / ((w^2 - w0^2) N^2)` of the projection onto the branch, up to `-i sqrt(g)`.
pub fn output_factor(k: f64, branch: Branch, m: &MediumParams) -> f64 {
    let w = branch_omega(k, branch, m);
    w / ((w * w - m.omega0 * m.omega0) * n_sq(k, w, m))
}

pub fn nls_coefficients(k0: f64, branch: Branch, m: &MediumParams, eps: f64) -> Result<NlsCoefficients> {
    m.validate()?;
    let d = omega_derivatives(k0, branch, m)?;
    let w = d.omega;
    guard(w, m)?;
    let w0s = m.omega0 * m.omega0;
    let den = w * w - w0s;
    let n2 = n_sq(k0, w, m);
    let g = m.gamma;
    let dn2 = 2.0 * k0 / (w * w) - 2.0 * k0 * k0 * d.d1 / w.powi(3) - 2.0 * g * w * d.d1 * (w * w + 3.0 * w0s) / den.powi(3);
    let dlog = d.d1 / w - 2.0 * w * d.d1 / den - dn2 / n2;
    Ok(NlsCoefficients {
        k0,
        omega: w,
        omega_p: d.d1,
        omega_pp: d.d2,
        group_velocity: vec![d.d1],
        diffraction: if k0 != 0.0 { d.d1 / (2.0 * k0) } else { 0.0 },
        gvd: 0.5 * d.d2,
        alpha1: if d.d2.abs() < 1e-12 { 0.0 } else { d.d2.signum() },
        alpha2: eps.powf(m.p) * m.omega1 * g * w * w / (n2 * den * den),
        cubic_gain: g.powi(3) * w / (n2 * den.powi(4)),
        alpha3: -den / (g.sqrt() * w),
        alpha3_projector: -dlog,
        n_sq: n2,
        p_factor: -m.omega0 * g.sqrt() / den,
    })
}
