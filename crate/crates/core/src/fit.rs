//! Rational ("improved") dispersion fit
//! `w_imp(k') = w + [c_g.d + d(H + 2 c_g (x) b)d/2 - C3(d)] / (1 + b.d + dBd)`
//! with `d = k' - k0 e_z` and the cubic form tied to `B` by `C3(d) = -w' (dBd) d_z`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dispersion::{branch_omega, omega_at, omega_nls, radial_derivatives, Branch, MediumParams, RESONANCE_GUARD};
use crate::error::{Error, Result};

/// Number of sample points along each window axis.
pub const WINDOW_POINTS: usize = 201;
/// Coarse search resolution per parameter.
pub const SEARCH_POINTS: usize = 64;
pub const B_RANGE: (f64, f64) = (0.0, 4.0);
pub const BIG_B_RANGE: (f64, f64) = (1e-6, 4.0);

/// Parameters of the rational dispersion relation, with its fit quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub dims: usize,
    pub k0: f64,
    pub half_width: f64,
    /// Vector `b` (axes `(x, z)` in 2D).
    pub b: Vec<f64>,
    /// Symmetric `B`, row-major.
    pub big_b: Vec<f64>,
    /// Cubic-form coefficients ordered by increasing power of `d_z`.
    pub c3: Vec<f64>,
    pub sup_error: f64,
    pub nls_sup_error: f64,
    /// True when no admissible `(b, B)` beat the plain NLS model.
    pub fallback: bool,
}

impl FitResult {
    /// The trivial fit `b = 0, B = 0, C3 = 0`, which reproduces the NLS relation.
    pub fn zero(dims: usize) -> Self {
        Self {
            dims,
            k0: 0.0,
            half_width: 0.0,
            b: vec![0.0; dims],
            big_b: vec![0.0; dims * dims],
            c3: vec![0.0; if dims == 1 { 1 } else { 4 }],
            sup_error: f64::NAN,
            nls_sup_error: f64::NAN,
            fallback: true,
        }
    }

    /// `P2` symbol `1 + b.d + dBd` at the wavevector offset `d`.
    pub fn p2(&self, d: &[f64]) -> f64 {
        1.0 + dot(&self.b, d) + quad(&self.big_b, d)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(m: &[f64], d: &[f64]) -> f64 {
    let n = d.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += d[i] * m[i * n + j] * d[j];
        }
    }
    s
}

/// Evaluates a homogeneous cubic form; coefficient `j` multiplies `x^(3-j) z^j` in 2D.
pub fn cubic_form(c3: &[f64], d: &[f64]) -> f64 {
    match d.len() {
        1 => c3[0] * d[0].powi(3),
        _ => (0..4).map(|j| c3[j] * d[0].powi(3 - j as i32) * d[1].powi(j as i32)).sum(),
    }
}

/// Coefficients of `C3(d) = -w' (dBd) d_z`.
pub fn tie_c3(omega_p: f64, big_b: &[f64]) -> Vec<f64> {
    if big_b.len() == 1 {
        return vec![-omega_p * big_b[0]];
    }
    let (bxx, bxz, bzz) = (big_b[0], 0.5 * (big_b[1] + big_b[2]), big_b[3]);
    vec![0.0, -omega_p * bxx, -2.0 * omega_p * bxz, -omega_p * bzz]
}

/// Hyperbolicity condition: `B` symmetric positive semidefinite, `b` in the range
/// of `B`, and `4 - b.B^+ b > 0`.
pub fn check_hyp(b: &[f64], big_b: &[f64]) -> bool {
    let n = b.len();
    if big_b.len() != n * n {
        return false;
    }
    let m = DMatrix::from_row_slice(n, n, big_b);
    let scale = 1.0 + m.norm();
    if (&m - m.transpose()).norm() > 1e-12 * scale {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cut = 1e-12 * lmax.max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -cut) {
        return false;
    }
    let q = &eig.eigenvectors;
    let mut form = 0.0;
    let mut outside = 0.0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let proj: f64 = (0..n).map(|r| q[(r, i)] * b[r]).sum();
        if l > cut {
            form += proj * proj / l;
        } else {
            outside += proj * proj;
        }
    }
    let bn = b.iter().map(|v| v * v).sum::<f64>();
    outside <= 1e-20 * (1.0 + bn) && 4.0 - form > 0.0
}

/// Rational model frequency at `kp` (length = `fit.dims`).
pub fn omega_imp(kp: &[f64], branch: Branch, m: &MediumParams, fit: &FitResult) -> Result<f64> {
    let dims = kp.len();
    if dims != fit.dims {
        return Err(Error::DimensionMismatch { expected: fit.dims, got: dims });
    }
    let k0 = fit.k0;
    let (cg, h) = radial_derivatives(k0, branch, m, dims)?;
    let mut d = kp.to_vec();
    d[dims - 1] -= k0;
    let den = fit.p2(&d);
    if den <= 0.0 {
        return Err(Error::Hypothesis(format!("rational denominator {den} <= 0 at d = {d:?}")));
    }
    let mut mm = h.clone();
    for i in 0..dims {
        for j in 0..dims {
            mm[i * dims + j] += 2.0 * cg[i] * fit.b[j];
        }
    }
    let num = dot(&cg, &d) + 0.5 * quad(&mm, &d) - cubic_form(&fit.c3, &d);
    Ok(branch_omega(k0, branch, m) + num / den)
}

fn window_samples(k0: f64, hw: f64, dims: usize) -> Vec<Vec<f64>> {
    let line: Vec<f64> = (0..WINDOW_POINTS).map(|j| -hw + 2.0 * hw * j as f64 / (WINDOW_POINTS - 1) as f64).collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    if dims == 1 {
        out.extend(line.iter().map(|&d| vec![d]));
    } else {
        out.extend(line.iter().map(|&d| vec![0.0, d]));
        out.extend(line.iter().map(|&d| vec![d, 0.0]));
        let coarse = 41;
        for i in 0..coarse {
            for j in 0..coarse {
                let x = -hw + 2.0 * hw * i as f64 / (coarse - 1) as f64;
                let z = -hw + 2.0 * hw * j as f64 / (coarse - 1) as f64;
                out.push(vec![x, z]);
            }
        }
    }
    for d in &mut out {
        d[dims - 1] += k0;
    }
    out
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Coarse grid search then one refinement pass around the minimizer.
/// Ties keep the first candidate in iteration order.
fn search2(
    xs: &[f64],
    ys: &[f64],
    refine_log_y: bool,
    mut obj: impl FnMut(f64, f64) -> Option<f64>,
) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64, usize, usize)> = None;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            if let Some(e) = obj(x, y) {
                if best.is_none_or(|b| e < b.2) {
                    best = Some((x, y, e, i, j));
                }
            }
        }
    }
    let (bx, by, be, i, j) = best?;
    let (x0, x1) = (xs[i.saturating_sub(1)], xs[(i + 1).min(xs.len() - 1)]);
    let (y0, y1) = (ys[j.saturating_sub(1)], ys[(j + 1).min(ys.len() - 1)]);
    let fx = if x1 > x0 { linspace(x0, x1, SEARCH_POINTS) } else { vec![x0] };
    let fy = if y1 > y0 {
        if refine_log_y && y0 > 0.0 {
            logspace(y0, y1, SEARCH_POINTS)
        } else {
            linspace(y0, y1, SEARCH_POINTS)
        }
    } else {
        vec![y0]
    };
    let mut out = (bx, by, be);
    for &x in &fx {
        for &y in &fy {
            if let Some(e) = obj(x, y) {
                if e < out.2 {
                    out = (x, y, e);
                }
            }
        }
    }
    Some(out)
}

/// Fits `(b, B)` minimizing the sup-norm error against the exact branch on the
/// window `|k' - k0 e_z| <= half_width` (per axis). Falls back to the zero fit
/// when nothing beats the NLS relation.
pub fn fit_improved(k0: f64, half_width: f64, branch: Branch, m: &MediumParams, dims: usize) -> Result<FitResult> {
    m.validate()?;
    if !(half_width > 0.0) || !(k0 > 0.0) {
        return Err(Error::InvalidParameter("fit window needs k0 > 0 and half_width > 0".into()));
    }
    if dims != 1 && dims != 2 {
        return Err(Error::InvalidParameter(format!("dims must be 1 or 2, got {dims}")));
    }
    let samples = window_samples(k0, half_width, dims);
    let exact: Vec<f64> = samples.iter().map(|kp| omega_at(kp, branch, m)).collect();
    let w0s = m.omega0 * m.omega0;
    if exact.iter().any(|w| (w * w - w0s).abs() < RESONANCE_GUARD) {
        return Err(Error::Resonance("fit window touches the material resonance".into()));
    }
    let nls: Vec<f64> = samples.iter().map(|kp| omega_nls(kp, k0, branch, m)).collect::<Result<_>>()?;
    let nls_sup = nls.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (cg, h) = radial_derivatives(k0, branch, m, dims)?;
    let w = branch_omega(k0, branch, m);
    let omega_p = cg[dims - 1];
    // With C3 tied to B the model collapses to w + c_g.d + (dHd/2) / P2(d).
    let deltas: Vec<Vec<f64>> = samples
        .iter()
        .map(|kp| {
            let mut d = kp.clone();
            d[dims - 1] -= k0;
            d
        })
        .collect();
    let base: Vec<(f64, f64)> = deltas.iter().zip(&exact).map(|(d, e)| (w + dot(&cg, d) - e, 0.5 * quad(&h, d))).collect();
    let sup = |b: &[f64], bb: &[f64]| -> Option<f64> {
        if !check_hyp(b, bb) {
            return None;
        }
        let mut s: f64 = 0.0;
        for (d, (lin, q)) in deltas.iter().zip(&base) {
            let den = 1.0 + dot(b, d) + quad(bb, d);
            if den <= 0.0 {
                return None;
            }
            s = s.max((lin + q / den).abs());
        }
        Some(s)
    };

    let bs = linspace(B_RANGE.0, B_RANGE.1, SEARCH_POINTS);
    let bigs = logspace(BIG_B_RANGE.0, BIG_B_RANGE.1, SEARCH_POINTS);
    let (b, big_b, err) = if dims == 1 {
        match search2(&bs, &bigs, true, |b, bb| sup(&[b], &[bb])) {
            Some((b, bb, e)) => (vec![b], vec![bb], e),
            None => (vec![0.0], vec![0.0], f64::INFINITY),
        }
    } else {
        // Longitudinal pair first on the z axis, then the transverse entry on the full window.
        let zline: Vec<usize> = (0..WINDOW_POINTS).collect();
        let zsup = |b: f64, bb: f64| -> Option<f64> {
            if !check_hyp(&[b], &[bb]) {
                return None;
            }
            let mut s: f64 = 0.0;
            for &i in &zline {
                let d = deltas[i][1];
                let den = 1.0 + b * d + bb * d * d;
                s = s.max((base[i].0 + base[i].1 / den).abs());
            }
            Some(s)
        };
        match search2(&bs, &bigs, true, zsup) {
            Some((b, bzz, _)) => {
                let mut xs = vec![0.0];
                xs.extend(logspace(BIG_B_RANGE.0, BIG_B_RANGE.1, SEARCH_POINTS));
                match search2(&xs, &[bzz], true, |bxx, bzz| sup(&[0.0, b], &[bxx, 0.0, 0.0, bzz])) {
                    Some((bxx, _, e)) => (vec![0.0, b], vec![bxx, 0.0, 0.0, bzz], e),
                    None => (vec![0.0; 2], vec![0.0; 4], f64::INFINITY),
                }
            }
            None => (vec![0.0; 2], vec![0.0; 4], f64::INFINITY),
        }
    };

    let mut fit = FitResult {
        dims,
        k0,
        half_width,
        c3: tie_c3(omega_p, &big_b),
        b,
        big_b,
        sup_error: err,
        nls_sup_error: nls_sup,
        fallback: false,
    };
    if !(err < nls_sup) {
        fit = FitResult { k0, half_width, sup_error: nls_sup, nls_sup_error: nls_sup, ..FitResult::zero(dims) };
    }
    Ok(fit)
}
