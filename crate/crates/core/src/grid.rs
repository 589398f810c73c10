//! Periodic 1D/2D grids, FFT plans and Fourier multipliers.
//!
//! Axis convention: in 1D the single axis is the propagation axis `z`;
//! in 2D axis 0 is the transverse axis `x` and axis 1 is `z`. Data is
//! stored row-major, so the `z` axis is contiguous.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft as RustFft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio between boundary and peak amplitude below which a field counts as decayed.
pub const BOUNDARY_DECAY: f64 = 1e-8;

/// Periodic box `[-L/2, L/2)^d` sampled with `n` points per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl GridSpec {
    /// Validated constructor: 1 or 2 axes, even counts `>= 4`, positive lengths.
    pub fn new(n: &[usize], lengths: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 2 {
            return Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {}", n.len())));
        }
        if n.len() != lengths.len() {
            return Err(Error::InvalidGrid("point counts and lengths differ in length".into()));
        }
        for &m in n {
            if m < 4 || m % 2 != 0 {
                return Err(Error::InvalidGrid(format!("point count {m} must be even and >= 4")));
            }
        }
        for &l in lengths {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidGrid(format!("length {l} must be positive")));
            }
        }
        Ok(Self { n: n.to_vec(), lengths: lengths.to_vec() })
    }

    pub fn new_1d(n: usize, l: f64) -> Result<Self> {
        Self::new(&[n], &[l])
    }

    pub fn new_2d(nx: usize, nz: usize, lx: f64, lz: f64) -> Result<Self> {
        Self::new(&[nx, nz], &[lx, lz])
    }

    pub fn dims(&self) -> usize {
        self.n.len()
    }

    /// Index of the propagation axis.
    pub fn z_axis(&self) -> usize {
        self.dims() - 1
    }

    /// Total number of nodes.
    pub fn size(&self) -> usize {
        self.n.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.n[axis] as f64
    }

    /// Volume element of one node.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dims()).map(|a| self.spacing(a)).product()
    }

    /// Node coordinates along `axis`, starting at `-L/2`.
    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let l = self.lengths[axis];
        (0..self.n[axis]).map(|j| -0.5 * l + j as f64 * h).collect()
    }

    /// Wavenumbers `2 pi m / L`, `m = -N/2 .. N/2-1`, in standard DFT order.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.n[axis] as isize;
        let dk = 2.0 * PI / self.lengths[axis];
        (0..n).map(|j| if j < n / 2 { j } else { j - n } as f64 * dk).collect()
    }

    /// Integer mode numbers in DFT order.
    pub fn mode_numbers(&self, axis: usize) -> Vec<isize> {
        let n = self.n[axis] as isize;
        (0..n).map(|j| if j < n / 2 { j } else { j - n }).collect()
    }

    /// Splits a flat index into per-axis indices (unused slots are zero).
    pub fn unravel(&self, idx: usize) -> [usize; 2] {
        if self.dims() == 1 {
            [idx, 0]
        } else {
            [idx / self.n[1], idx % self.n[1]]
        }
    }

    /// Position of every node; only the first `dims` entries are meaningful.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let c: Vec<Vec<f64>> = (0..self.dims()).map(|a| self.coords(a)).collect();
        (0..self.size())
            .map(|i| {
                let ix = self.unravel(i);
                let mut p = [0.0; 2];
                for a in 0..self.dims() {
                    p[a] = c[a][ix[a]];
                }
                p
            })
            .collect()
    }

    /// Wavevector of every Fourier node; only the first `dims` entries are meaningful.
    pub fn wavevectors(&self) -> Vec<[f64; 2]> {
        let k: Vec<Vec<f64>> = (0..self.dims()).map(|a| self.wavenumbers(a)).collect();
        (0..self.size())
            .map(|i| {
                let ix = self.unravel(i);
                let mut p = [0.0; 2];
                for a in 0..self.dims() {
                    p[a] = k[a][ix[a]];
                }
                p
            })
            .collect()
    }

    /// Mask of the 2/3 rule: zero where any `|m| > N/3`.
    pub fn dealias_mask(&self) -> Vec<f64> {
        let m: Vec<Vec<isize>> = (0..self.dims()).map(|a| self.mode_numbers(a)).collect();
        (0..self.size())
            .map(|i| {
                let ix = self.unravel(i);
                let keep = (0..self.dims()).all(|a| 3 * m[a][ix[a]].unsigned_abs() <= self.n[a]);
                if keep {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Forward/inverse FFT plans for one grid. The inverse is normalized by `1/N`.
#[derive(Clone)]
pub struct Fft {
    n: Vec<usize>,
    fwd: Vec<Arc<dyn RustFft<f64>>>,
    inv: Vec<Arc<dyn RustFft<f64>>>,
}

impl std::fmt::Debug for Fft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft").field("n", &self.n).finish()
    }
}

impl Fft {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = grid.n.iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inv = grid.n.iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        Self { n: grid.n.clone(), fwd, inv }
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn RustFft<f64>>]) {
        if self.n.len() == 1 {
            plans[0].process(data);
            return;
        }
        let (nx, nz) = (self.n[0], self.n[1]);
        plans[1].process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..nz {
            for i in 0..nx {
                col[i] = data[i * nz + j];
            }
            plans[0].process(&mut col);
            for i in 0..nx {
                data[i * nz + j] = col[i];
            }
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform scaled by `1/N`, in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }
}

/// A field with `c` complex components per node, stored in physical space.
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub data: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: &GridSpec, components: usize) -> Self {
        let n = grid.size();
        Self { grid: grid.clone(), data: vec![vec![Complex64::new(0.0, 0.0); n]; components] }
    }

    /// Builds a field from `f(position) -> components`.
    pub fn from_fn(grid: &GridSpec, components: usize, f: impl Fn(&[f64]) -> Vec<Complex64>) -> Self {
        let mut out = Self::zeros(grid, components);
        let d = grid.dims();
        for (i, p) in grid.points().iter().enumerate() {
            let v = f(&p[..d]);
            for c in 0..components {
                out.data[c][i] = v[c];
            }
        }
        out
    }

    pub fn components(&self) -> usize {
        self.data.len()
    }

    /// Discrete `sum |u|^2 dV` over all components.
    pub fn l2_norm_sq(&self) -> f64 {
        let dv = self.grid.cell_volume();
        self.data.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>() * dv
    }

    /// Largest pointwise Euclidean norm over nodes.
    pub fn max_abs(&self) -> f64 {
        (0..self.grid.size())
            .map(|i| self.data.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Multiplies every component by `m(xi)` in Fourier space.
    pub fn apply_scalar_multiplier(&mut self, fft: &Fft, symbol: impl Fn(&[f64]) -> Complex64) -> Result<()> {
        let d = self.grid.dims();
        let table: Vec<Complex64> = self
            .grid
            .wavevectors()
            .iter()
            .map(|xi| {
                let s = symbol(&xi[..d]);
                if s.re.is_finite() && s.im.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::NonFiniteSymbol { xi: xi[..d].to_vec() })
                }
            })
            .collect::<Result<_>>()?;
        for comp in &mut self.data {
            fft.forward(comp);
            comp.iter_mut().zip(&table).for_each(|(z, s)| *z *= s);
            fft.inverse(comp);
        }
        Ok(())
    }

    /// Multiplies the component vector by the `c x c` matrix `M(xi)` in Fourier space.
    pub fn apply_matrix_multiplier(
        &mut self,
        fft: &Fft,
        symbol: impl Fn(&[f64]) -> DMatrix<Complex64>,
    ) -> Result<()> {
        let c = self.components();
        let d = self.grid.dims();
        let xis = self.grid.wavevectors();
        let mut tables = Vec::with_capacity(xis.len());
        for xi in &xis {
            let m = symbol(&xi[..d]);
            if m.nrows() != c || m.ncols() != c {
                return Err(Error::DimensionMismatch { expected: c, got: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFiniteSymbol { xi: xi[..d].to_vec() });
            }
            tables.push(m);
        }
        for comp in &mut self.data {
            fft.forward(comp);
        }
        for (i, m) in tables.iter().enumerate() {
            let v = DVector::from_iterator(c, self.data.iter().map(|comp| comp[i]));
            let w = m * v;
            for (k, comp) in self.data.iter_mut().enumerate() {
                comp[i] = w[k];
            }
        }
        for comp in &mut self.data {
            fft.inverse(comp);
        }
        Ok(())
    }

    /// Applies the 2/3 dealiasing mask to every component.
    pub fn dealias(&mut self, fft: &Fft) {
        let mask = self.grid.dealias_mask();
        for comp in &mut self.data {
            fft.forward(comp);
            comp.iter_mut().zip(&mask).for_each(|(z, m)| *z *= m);
            fft.inverse(comp);
        }
    }

    /// Largest boundary value relative to the peak, over all axes.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge: f64 = 0.0;
        for i in 0..self.grid.size() {
            let ix = self.grid.unravel(i);
            let on_edge = (0..self.grid.dims()).any(|a| ix[a] == 0 || ix[a] == self.grid.n[a] - 1);
            if on_edge {
                let v = self.data.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt();
                edge = edge.max(v);
            }
        }
        edge / peak
    }

    /// Fails unless boundary values are below [`BOUNDARY_DECAY`] of the peak.
    pub fn check_boundary_decay(&self) -> Result<()> {
        let r = self.boundary_ratio();
        if r < BOUNDARY_DECAY {
            Ok(())
        } else {
            Err(Error::Precondition(format!("boundary/peak ratio {r:.3e} exceeds {BOUNDARY_DECAY:e}")))
        }
    }

    /// Writes `x[,y], comp0_re, comp0_im, ...` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.grid.dims();
        let mut header: Vec<String> = ["x", "y"][..d].iter().map(|s| s.to_string()).collect();
        for c in 0..self.components() {
            header.push(format!("comp{c}_re"));
            header.push(format!("comp{c}_im"));
        }
        wtr.write_record(&header)?;
        for (i, p) in self.grid.points().iter().enumerate() {
            let mut row: Vec<String> = p[..d].iter().map(|v| format!("{v:.17e}")).collect();
            for comp in &self.data {
                row.push(format!("{:.17e}", comp[i].re));
                row.push(format!("{:.17e}", comp[i].im));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new_1d(6, 1.0).is_ok());
        assert!(GridSpec::new_1d(7, 1.0).is_err());
        assert!(GridSpec::new_1d(2, 1.0).is_err());
        assert!(GridSpec::new_1d(8, 0.0).is_err());
        assert!(GridSpec::new(&[4, 4, 4], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn wavenumbers_in_dft_order() {
        let g = GridSpec::new_1d(8, 2.0 * PI).unwrap();
        let k = g.wavenumbers(0);
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        assert!((g.spacing(0) - 2.0 * PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn constant_symbol_scales() {
        let g = GridSpec::new_1d(16, 3.0).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::from_fn(&g, 1, |x| vec![c(x[0].sin(), x[0].cos())]);
        let orig = f.clone();
        f.apply_scalar_multiplier(&fft, |_| c(2.0, 0.0)).unwrap();
        for (a, b) in f.data[0].iter().zip(&orig.data[0]) {
            assert!((a - 2.0 * b).norm() < 1e-13);
        }
    }

    #[test]
    fn derivative_symbol_differentiates_a_mode() {
        let g = GridSpec::new_2d(8, 16, 2.0 * PI, 4.0 * PI).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::from_fn(&g, 1, |x| vec![(c(0.0, 2.0 * x[0] + 1.5 * x[1])).exp()]);
        f.apply_scalar_multiplier(&fft, |xi| c(0.0, xi[1])).unwrap();
        for (i, p) in g.points().iter().enumerate() {
            let want = c(0.0, 1.5) * c(0.0, 2.0 * p[0] + 1.5 * p[1]).exp();
            assert!((f.data[0][i] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn non_finite_symbol_names_xi() {
        let g = GridSpec::new_1d(8, 2.0 * PI).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::zeros(&g, 1);
        let err = f.apply_scalar_multiplier(&fft, |xi| c(1.0 / xi[0], 0.0)).unwrap_err();
        assert!(err.to_string().contains("xi"));
        assert!(matches!(err, Error::NonFiniteSymbol { ref xi } if xi == &vec![0.0]));
    }

    #[test]
    fn matrix_multiplier_checks_dimensions() {
        let g = GridSpec::new_1d(8, 1.0).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::zeros(&g, 2);
        let err = f.apply_matrix_multiplier(&fft, |_| DMatrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn matrix_multiplier_swaps_components() {
        let g = GridSpec::new_1d(8, 1.0).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::from_fn(&g, 2, |x| vec![c(x[0], 0.0), c(0.0, 1.0)]);
        let orig = f.clone();
        let swap = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        f.apply_matrix_multiplier(&fft, |_| swap.clone()).unwrap();
        for i in 0..8 {
            assert!((f.data[0][i] - orig.data[1][i]).norm() < 1e-14);
            assert!((f.data[1][i] - orig.data[0][i]).norm() < 1e-14);
        }
    }

    #[test]
    fn dealias_removes_top_third() {
        let g = GridSpec::new_1d(12, 2.0 * PI).unwrap();
        let fft = Fft::new(&g);
        let mut f = SpectralField::from_fn(&g, 1, |x| vec![c((5.0 * x[0]).cos() + (2.0 * x[0]).cos(), 0.0)]);
        f.dealias(&fft);
        let p = g.points();
        for i in 0..12 {
            assert!((f.data[0][i].re - (2.0 * p[i][0]).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_decay_check() {
        let g = GridSpec::new_1d(256, 40.0).unwrap();
        let ok = SpectralField::from_fn(&g, 1, |x| vec![c((-x[0] * x[0]).exp(), 0.0)]);
        assert!(ok.check_boundary_decay().is_ok());
        let wide = SpectralField::from_fn(&g, 1, |x| vec![c((-x[0] * x[0] / 100.0).exp(), 0.0)]);
        assert!(wide.check_boundary_decay().is_err());
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::new_2d(4, 4, 1.0, 1.0).unwrap();
        let f = SpectralField::from_fn(&g, 2, |_| vec![c(1.0, 2.0), c(3.0, 4.0)]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "x,y,comp0_re,comp0_im,comp1_re,comp1_im");
        assert_eq!(s.lines().count(), 17);
    }

    fn random_field(g: &GridSpec, seed: &[f64]) -> SpectralField {
        let n = g.size();
        let mut f = SpectralField::zeros(g, 1);
        for i in 0..n {
            f.data[0][i] = c(seed[i % seed.len()] * (i as f64 * 0.37).sin(), seed[(i * 7) % seed.len()]);
        }
        f
    }

    proptest! {
        #[test]
        fn fft_roundtrip_exact(seed in proptest::collection::vec(-1.0f64..1.0, 1..32), two_d in any::<bool>()) {
            let g = if two_d { GridSpec::new_2d(8, 16, 3.0, 5.0).unwrap() } else { GridSpec::new_1d(64, 7.0).unwrap() };
            let fft = Fft::new(&g);
            let f = random_field(&g, &seed);
            let mut h = f.data[0].clone();
            fft.forward(&mut h);
            fft.inverse(&mut h);
            for (a, b) in h.iter().zip(&f.data[0]) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn multipliers_compose(seed in proptest::collection::vec(-1.0f64..1.0, 1..32),
                               a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = GridSpec::new_1d(32, 5.0).unwrap();
            let fft = Fft::new(&g);
            let f = random_field(&g, &seed);
            let m1 = move |xi: &[f64]| c(1.0 + a * xi[0], xi[0] * xi[0]);
            let m2 = move |xi: &[f64]| c((b * xi[0]).cos(), b);
            let mut two = f.clone();
            two.apply_scalar_multiplier(&fft, m1).unwrap();
            two.apply_scalar_multiplier(&fft, m2).unwrap();
            let mut one = f.clone();
            one.apply_scalar_multiplier(&fft, |xi| m1(xi) * m2(xi)).unwrap();
            for (x, y) in one.data[0].iter().zip(&two.data[0]) {
                prop_assert!((x - y).norm() < 1e-10);
            }
        }

        #[test]
        fn even_real_symbols_keep_real_data_real(seed in proptest::collection::vec(-1.0f64..1.0, 1..32), a in 0.0f64..3.0) {
            let g = GridSpec::new_2d(8, 8, 2.0, 3.0).unwrap();
            let fft = Fft::new(&g);
            let mut f = random_field(&g, &seed);
            f.data[0].iter_mut().for_each(|z| z.im = 0.0);
            f.apply_scalar_multiplier(&fft, |xi| c((-a * (xi[0] * xi[0] + xi[1] * xi[1])).exp(), 0.0)).unwrap();
            for z in &f.data[0] {
                prop_assert!(z.im.abs() < 1e-13);
            }
        }
    }
}
