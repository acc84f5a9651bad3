//! Constant-coefficient pseudodifferential numerics: the Ito diffusion
//! symbol, periodic spectral evolution on uniform grids and the matrix
//! exponential propagator of the dual-space regression.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
pub use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dual::BetaMatrix;
use crate::error::{Error, Result};

/// Relative tolerance on grid spacing when checking uniformity.
pub const UNIFORM_RTOL: f64 = 1e-9;

/// Drift vector and symmetric positive semidefinite diffusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionParams {
    pub drift: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl DiffusionParams {
    pub fn new(drift: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = drift.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::shape(format!(
                "diffusion matrix is {}x{} for drift of length {n}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if drift.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite diffusion parameter"));
        }
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("diffusion matrix is not symmetric"));
        }
        if n > 0 && sigma.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * scale {
            return Err(Error::invalid("diffusion matrix has a negative eigenvalue"));
        }
        Ok(Self { drift, sigma })
    }

    /// One-dimensional parameters with drift `a` and variance rate `s2`.
    pub fn scalar(a: f64, s2: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, a), DMatrix::from_element(1, 1, s2))
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }
}

/// `exp((i k.a - k' Sigma k) t)`.
pub fn diffusion_symbol(params: &DiffusionParams, k: &[f64], t: f64) -> Result<Complex64> {
    if k.len() != params.dim() {
        return Err(Error::shape(format!("wavenumber of length {} for dimension {}", k.len(), params.dim())));
    }
    if t < 0.0 {
        return Err(Error::invalid(format!("negative time {t}")));
    }
    let kv = DVector::from_column_slice(k);
    let drift = kv.dot(&params.drift);
    let quad = (kv.transpose() * &params.sigma * &kv)[(0, 0)];
    Ok(Complex64::new(-quad * t, drift * t).exp())
}

/// Complex samples on a uniform periodic grid stored row-major, the last
/// axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl SpectralGrid {
    pub fn new(shape: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if shape.is_empty() || shape.len() != origin.len() || shape.len() != spacing.len() {
            return Err(Error::shape("grid shape, origin and spacing disagree"));
        }
        if shape.contains(&0) {
            return Err(Error::shape("grid axis of length 0"));
        }
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let count: usize = shape.iter().product();
        if values.len() != count {
            return Err(Error::shape(format!("{} values for {count} grid points", values.len())));
        }
        Ok(Self { shape, origin, spacing, values })
    }

    /// Grid from explicit per-axis coordinates, which must be uniform.
    pub fn from_axes(axes: &[Vec<f64>], values: Vec<Complex64>) -> Result<Self> {
        let mut origin = Vec::with_capacity(axes.len());
        let mut spacing = Vec::with_capacity(axes.len());
        for (a, pts) in axes.iter().enumerate() {
            if pts.len() < 2 {
                return Err(Error::shape(format!("axis {a} needs at least two points")));
            }
            let h = pts[1] - pts[0];
            if pts.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > UNIFORM_RTOL * h.abs()) {
                return Err(Error::invalid(format!("axis {a} is not uniform")));
            }
            origin.push(pts[0]);
            spacing.push(h);
        }
        Self::new(axes.iter().map(Vec::len).collect(), origin, spacing, values)
    }

    /// One-dimensional grid sampling `f` at `n` points from `start` with step `h`.
    pub fn sample_1d(n: usize, start: f64, h: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..n).map(|i| Complex64::new(f(start + i as f64 * h), 0.0)).collect();
        Self::new(vec![n], vec![start], vec![h], values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        (0..self.shape[a]).map(|i| self.origin[a] + i as f64 * self.spacing[a]).collect()
    }

    /// Angular wavenumbers of axis `a` in transform order.
    pub fn wavenumbers(&self, a: usize) -> Vec<f64> {
        let n = self.shape[a];
        let period = n as f64 * self.spacing[a];
        (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * std::f64::consts::PI * m / period
            })
            .collect()
    }

    /// Multi-index of the flat position `flat`.
    pub fn index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.origin[a] + i as f64 * self.spacing[a])
            .collect()
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }
}

fn fft_nd(values: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::new();
    let mut stride = 1;
    for &n in shape.iter().rev() {
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let block = n * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for base in (0..values.len()).step_by(block) {
            for offset in 0..stride {
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = values[base + offset + j * stride];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    values[base + offset + j * stride] = *v;
                }
            }
        }
        stride = block;
    }
    if inverse {
        let scale = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Evolves `f` by `t` under the diffusion symbol with periodic boundaries.
/// With symbol `exp(i k.a t)` a pure drift maps `f(x)` to `f(x + a t)`.
pub fn pdo_evolve(f: &SpectralGrid, params: &DiffusionParams, t: f64) -> Result<SpectralGrid> {
    if f.dim() != params.dim() {
        return Err(Error::shape(format!("grid of dimension {} for parameters of dimension {}", f.dim(), params.dim())));
    }
    let mut values = f.values.clone();
    fft_nd(&mut values, &f.shape, false);
    let ks: Vec<Vec<f64>> = (0..f.dim()).map(|a| f.wavenumbers(a)).collect();
    let mut k = vec![0.0; f.dim()];
    for (flat, v) in values.iter_mut().enumerate() {
        for (a, &i) in f.index(flat).iter().enumerate() {
            k[a] = ks[a][i];
        }
        *v *= diffusion_symbol(params, &k, t)?;
    }
    fft_nd(&mut values, &f.shape, true);
    Ok(SpectralGrid { values, ..f.clone() })
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix_exp needs a square matrix");
    let norm = (0..n).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for j in 1..=30 {
        term = &term * &a / j as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Discrete propagator solution of `dX = beta X dt + noise dt`:
/// `exp(beta T dt) x0 + sum_t exp(beta (T - t) dt) noise_t dt`.
pub fn propagate_state(x0: &[f64], beta: &BetaMatrix, noise: &[Vec<f64>], steps: usize, dt: f64) -> Result<Vec<f64>> {
    let n = beta.dim();
    if x0.len() != n {
        return Err(Error::shape(format!("state of length {} for beta of dimension {n}", x0.len())));
    }
    if !noise.is_empty() && noise.len() != steps {
        return Err(Error::shape(format!("{} noise vectors for {steps} steps", noise.len())));
    }
    if let Some(bad) = noise.iter().find(|e| e.len() != n) {
        return Err(Error::shape(format!("noise vector of length {} for dimension {n}", bad.len())));
    }
    let b = beta.to_matrix();
    let step = matrix_exp(&(&b * dt));
    // Horner form: accumulate from the first step forward.
    let mut x = DVector::from_column_slice(x0);
    for t in 0..steps {
        x = &step * x;
        if let Some(e) = noise.get(t) {
            x += &step * DVector::from_column_slice(e) * dt;
        }
    }
    Ok(x.iter().copied().collect())
}

/// Propagator `exp(beta (big_t - t))`.
pub fn beta_symbol(beta: &BetaMatrix, t: f64, big_t: f64) -> Result<BetaMatrix> {
    if big_t < t {
        return Err(Error::invalid(format!("end time {big_t} precedes start time {t}")));
    }
    Ok(BetaMatrix::from_matrix(&matrix_exp(&(beta.to_matrix() * (big_t - t)))))
}

/// Grid rows as `x0..x{d-1},re,im`; a 1-D grid uses `point,re,im`.
pub fn write_grid_csv<W: Write>(g: &SpectralGrid, mut w: W) -> Result<()> {
    if g.dim() == 1 {
        writeln!(w, "point,re,im")?;
    } else {
        let cols: Vec<String> = (0..g.dim()).map(|a| format!("x{a}")).collect();
        writeln!(w, "{},re,im", cols.join(","))?;
    }
    for (flat, v) in g.values.iter().enumerate() {
        let p: Vec<String> = g.point(flat).iter().map(|x| x.to_string()).collect();
        writeln!(w, "{},{},{}", p.join(","), v.re, v.im)?;
    }
    Ok(())
}

/// Reads a 1-D `point,re,im` grid.
pub fn read_grid_csv<R: BufRead>(r: R) -> Result<SpectralGrid> {
    let mut points = Vec::new();
    let mut values = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("point") {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad grid field '{s}'"))))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(Error::shape(format!("grid row has {} fields", f.len())));
        }
        points.push(f[0]);
        values.push(Complex64::new(f[1], f[2]));
    }
    SpectralGrid::from_axes(&[points], values)
}
