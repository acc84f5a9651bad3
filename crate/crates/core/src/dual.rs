//! Operator regression in the Fourier dual of the state space.
//!
//! Each state row is transformed with an unnormalized DFT, the complex
//! coefficients are stacked as `[re; im]`, and the increment
//! `X~(t+1) - X~(t)` is regressed on `X~(t)` by least squares through the
//! pseudoinverse of the regressor Gram matrix. Predictions and residuals
//! are mapped back to the price-bucket space by the inverse transform
//! (scaled by `1/n`).

use std::io::{BufRead, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::StateMatrix;
use crate::stats::{pearson, population_variance, raw_correlation};

/// Largest imaginary part tolerated when mapping a dual vector back.
pub const DEFAULT_IMAG_TOLERANCE: f64 = 1e-9;

/// Eigenvalues of the Gram matrix below this fraction of the largest one
/// are treated as zero.
pub const GRAM_RCOND: f64 = 1e-12;

/// Relative norm below which a bucket's prediction or residual counts as
/// round-off in [`orthogonality_defect`].
pub const ORTHO_FLOOR: f64 = 1e-9;

/// Fourier coefficients of one state row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl DualVector {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// `[re; im]`, length `2n`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.re.clone();
        v.extend_from_slice(&self.im);
        v
    }

    pub fn from_stacked(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(Error::shape(format!("stacked dual vector of odd length {}", v.len())));
        }
        let n = v.len() / 2;
        Ok(Self {
            re: v[..n].to_vec(),
            im: v[n..].to_vec(),
        })
    }

    /// Largest violation of `c(w) = conj(c(n - w))`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|w| {
                let m = (n - w) % n;
                (self.re[w] - self.re[m]).abs().max((self.im[w] + self.im[m]).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Cached forward/inverse plans for one transform length.
#[derive(Clone)]
pub struct DualTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DualTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualTransform").field("n", &self.n).finish()
    }
}

impl DualTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `X~(w) = sum_k X(k) exp(-2 pi i w k / n)`.
    pub fn forward(&self, row: &[f64]) -> Result<DualVector> {
        if row.len() != self.n {
            return Err(Error::shape(format!("row of length {} for a {}-point transform", row.len(), self.n)));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite state entry"));
        }
        let mut buf: Vec<Complex64> = row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        Ok(DualVector {
            re: buf.iter().map(|c| c.re).collect(),
            im: buf.iter().map(|c| c.im).collect(),
        })
    }

    /// Inverse transform; returns the real part and the largest discarded
    /// imaginary magnitude.
    pub fn inverse_unchecked(&self, v: &DualVector) -> Result<(Vec<f64>, f64)> {
        if v.len() != self.n || v.im.len() != self.n {
            return Err(Error::shape(format!("dual vector of length {} for a {}-point transform", v.len(), self.n)));
        }
        let mut buf: Vec<Complex64> = v
            .re
            .iter()
            .zip(&v.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        if buf.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::invalid("non-finite dual coefficient"));
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        let max_imag = buf.iter().map(|c| (c.im * scale).abs()).fold(0.0, f64::max);
        Ok((buf.iter().map(|c| c.re * scale).collect(), max_imag))
    }

    pub fn inverse(&self, v: &DualVector, tolerance: f64) -> Result<(Vec<f64>, f64)> {
        let (re, max_imag) = self.inverse_unchecked(v)?;
        if max_imag > tolerance {
            return Err(Error::NonReal(max_imag));
        }
        Ok((re, max_imag))
    }
}

pub fn forward_dual(row: &[f64]) -> Result<DualVector> {
    DualTransform::new(row.len()).forward(row)
}

pub fn inverse_dual(v: &DualVector) -> Result<(Vec<f64>, f64)> {
    DualTransform::new(v.len()).inverse(v, DEFAULT_IMAG_TOLERANCE)
}

/// Real `2n x 2n` operator acting on stacked dual vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl BetaMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let m = self.rows.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, m, |i, j| self.rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Stacked real form of a complex `n x n` matrix `A + iB`:
/// `[[A, -B], [B, A]]`.
pub fn stack_complex(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<f64> {
    let n = re.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(re);
    out.view_mut((0, n), (n, n)).copy_from(&(-im));
    out.view_mut((n, 0), (n, n)).copy_from(im);
    out.view_mut((n, n), (n, n)).copy_from(re);
    out
}

/// Dual-space form of a real-space linear map `B`: `F B F^-1`, stacked.
pub fn dual_operator(real_space: &DMatrix<f64>) -> DMatrix<f64> {
    let n = real_space.nrows();
    let tau = std::f64::consts::TAU;
    let f = DMatrix::from_fn(n, n, |w, k| {
        Complex64::from_polar(1.0, -tau * (w * k) as f64 / n as f64)
    });
    let finv = DMatrix::from_fn(n, n, |k, w| {
        Complex64::from_polar(1.0 / n as f64, tau * (w * k) as f64 / n as f64)
    });
    let b = real_space.map(|x| Complex64::new(x, 0.0));
    let c = f * b * finv;
    stack_complex(&c.map(|z| z.re), &c.map(|z| z.im))
}

#[derive(Debug, Clone)]
pub struct OperatorFit {
    pub beta: DMatrix<f64>,
    pub rank: usize,
}

/// Least-squares fit of `targets[t] = beta * regressors[t]` through the
/// pseudoinverse of the Gram matrix (minimum-norm solution).
pub fn fit_operator(regressors: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<OperatorFit> {
    if regressors.is_empty() || regressors.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} regressor rows for {} target rows",
            regressors.len(),
            targets.len()
        )));
    }
    let p = regressors[0].len();
    let q = targets[0].len();
    let obs = regressors.len();
    let x = DMatrix::from_fn(p, obs, |i, t| regressors[t][i]);
    let y = DMatrix::from_fn(q, obs, |i, t| targets[t][i]);
    let gram = &x * x.transpose();
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = lmax * GRAM_RCOND;
    let mut rank = 0;
    let mut pinv = DMatrix::zeros(p, p);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff && l > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            pinv += (v / l) * v.transpose();
        }
    }
    let beta = y * x.transpose() * pinv;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite operator estimate".into()));
    }
    Ok(OperatorFit { beta, rank })
}

/// Fitted operator with predictions and residuals in price-bucket space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionOutput {
    /// Date of the later state row of each increment.
    pub dates: Vec<NaiveDate>,
    /// `X(t+1) - X(t)`.
    pub dependent: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    pub max_imag: f64,
    pub rank: usize,
    pub beta: BetaMatrix,
}

impl RegressionOutput {
    pub fn rows(&self) -> usize {
        self.predictions.len()
    }

    pub fn cols(&self) -> usize {
        self.predictions.first().map_or(0, Vec::len)
    }

    /// Largest `|prediction + residual - dependent|`.
    pub fn reconstruction_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.rows() {
            for n in 0..self.cols() {
                let e = (self.predictions[t][n] + self.residuals[t][n] - self.dependent[t][n]).abs();
                worst = worst.max(e);
            }
        }
        worst
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn column(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
        rows.iter().map(|r| r[n]).collect()
    }
}

pub fn fit_beta(states: &StateMatrix) -> Result<RegressionOutput> {
    fit_beta_with(states, DEFAULT_IMAG_TOLERANCE)
}

pub fn fit_beta_with(states: &StateMatrix, imag_tolerance: f64) -> Result<RegressionOutput> {
    let t_rows = states.rows();
    if t_rows < 2 {
        return Err(Error::invalid("operator fit needs at least two state rows"));
    }
    let n = states.cols();
    let transform = DualTransform::new(n);
    let duals = states
        .values
        .iter()
        .map(|r| transform.forward(r).map(|d| d.stacked()))
        .collect::<Result<Vec<_>>>()?;
    let regressors = &duals[..t_rows - 1];
    let targets: Vec<Vec<f64>> = duals
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    let fit = fit_operator(regressors, &targets)?;
    let beta = BetaMatrix::from_matrix(&fit.beta);

    let mut max_imag: f64 = 0.0;
    let mut dependent = Vec::with_capacity(t_rows - 1);
    let mut predictions = Vec::with_capacity(t_rows - 1);
    let mut residuals = Vec::with_capacity(t_rows - 1);
    for t in 0..t_rows - 1 {
        let dx: Vec<f64> = states.values[t + 1]
            .iter()
            .zip(&states.values[t])
            .map(|(a, b)| a - b)
            .collect();
        let pred_dual = DualVector::from_stacked(&beta.apply(&regressors[t]))?;
        let (pred, imag) = transform.inverse(&pred_dual, imag_tolerance)?;
        max_imag = max_imag.max(imag);
        let resid: Vec<f64> = dx.iter().zip(&pred).map(|(d, p)| d - p).collect();
        dependent.push(dx);
        predictions.push(pred);
        residuals.push(resid);
    }
    Ok(RegressionOutput {
        dates: states.dates[1..].to_vec(),
        dependent,
        predictions,
        residuals,
        max_imag,
        rank: fit.rank,
        beta,
    })
}

/// Share of each bucket's increment energy carried by the prediction (`p`)
/// and by the residual (`f`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSplit {
    pub p: Vec<f64>,
    pub f: Vec<f64>,
    /// Buckets whose increment has zero energy; both shares are 0 there.
    pub degenerate: Vec<bool>,
}

pub fn variance_split(output: &RegressionOutput, states: &StateMatrix) -> Result<VarianceSplit> {
    if states.rows() != output.rows() + 1 || states.cols() != output.cols() {
        return Err(Error::shape(format!(
            "regression output {}x{} does not match states {}x{}",
            output.rows(),
            output.cols(),
            states.rows(),
            states.cols()
        )));
    }
    let n = output.cols();
    let mut split = VarianceSplit {
        p: vec![0.0; n],
        f: vec![0.0; n],
        degenerate: vec![false; n],
    };
    for k in 0..n {
        let mut denom = 0.0;
        let mut pred = 0.0;
        let mut resid = 0.0;
        for t in 0..output.rows() {
            let dx = states.values[t + 1][k] - states.values[t][k];
            denom += dx * dx;
            pred += output.predictions[t][k].powi(2);
            resid += output.residuals[t][k].powi(2);
        }
        if denom <= 0.0 {
            split.degenerate[k] = true;
            continue;
        }
        split.p[k] = pred / denom;
        split.f[k] = resid / denom;
    }
    Ok(split)
}

fn mean_column_correlation(cols_a: &[Vec<f64>], cols_b: &[Vec<f64>]) -> f64 {
    let rs: Vec<f64> = cols_a
        .iter()
        .zip(cols_b)
        .filter_map(|(a, b)| pearson(a, b))
        .collect();
    if rs.is_empty() {
        0.0
    } else {
        rs.iter().sum::<f64>() / rs.len() as f64
    }
}

/// Similarity of two operators: the mean Pearson correlation between
/// matching columns, and between matching rows. Constant columns or rows
/// (the structurally zero ones) are skipped.
pub fn beta_similarity(a: &BetaMatrix, b: &BetaMatrix) -> Result<(f64, f64)> {
    if a.dim() != b.dim() || a.rows.first().map(Vec::len) != b.rows.first().map(Vec::len) {
        return Err(Error::shape("beta matrices differ in shape"));
    }
    let ncols = a.rows.first().map_or(0, Vec::len);
    let cols_a: Vec<Vec<f64>> = (0..ncols).map(|j| a.column(j)).collect();
    let cols_b: Vec<Vec<f64>> = (0..ncols).map(|j| b.column(j)).collect();
    Ok((
        mean_column_correlation(&cols_a, &cols_b),
        mean_column_correlation(&a.rows, &b.rows),
    ))
}

/// Squared time-series correlation between tape `i`'s daily cross-bucket
/// prediction variance and tape `j`'s daily cross-bucket residual variance.
pub fn determination_matrix(outputs: &[&RegressionOutput]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = outputs.first() {
        for o in outputs {
            if o.dates != first.dates {
                return Err(Error::Misaligned("regression outputs span different dates".into()));
            }
        }
    }
    let daily = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().map(|r| population_variance(r)).collect() };
    let pred_var: Vec<Vec<f64>> = outputs.iter().map(|o| daily(&o.predictions)).collect();
    let resid_var: Vec<Vec<f64>> = outputs.iter().map(|o| daily(&o.residuals)).collect();
    Ok(pred_var
        .iter()
        .map(|pv| {
            resid_var
                .iter()
                .map(|rv| pearson(pv, rv).map_or(0.0, |r| r * r))
                .collect()
        })
        .collect())
}

/// Summary block written next to a fitted operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rows: usize,
    pub rank: usize,
    pub max_imag: f64,
    pub reconstruction_error: f64,
    /// Largest per-bucket raw-moment correlation of prediction and residual.
    pub max_orthogonality_defect: f64,
    pub max_abs_residual: f64,
    pub variance_split: VarianceSplit,
    /// Lag-1 autocorrelation of each bucket's residual series.
    pub residual_lag1_autocorr: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest per-bucket raw correlation of prediction and residual. Buckets
/// where either series is round-off relative to the whole increment
/// matrix carry no orthogonality information and are skipped.
pub fn orthogonality_defect(output: &RegressionOutput) -> f64 {
    let total = norm(&output.dependent.concat());
    let floor = ORTHO_FLOOR * total;
    (0..output.cols())
        .filter_map(|k| {
            let p = RegressionOutput::column(&output.predictions, k);
            let r = RegressionOutput::column(&output.residuals, k);
            if norm(&p) <= floor || norm(&r) <= floor {
                return None;
            }
            raw_correlation(&p, &r).map(f64::abs)
        })
        .fold(0.0, f64::max)
}

pub fn diagnostics(output: &RegressionOutput, states: &StateMatrix) -> Result<Diagnostics> {
    let split = variance_split(output, states)?;
    let n = output.cols();
    let ortho = orthogonality_defect(output);
    let mut autocorr = Vec::with_capacity(n);
    for k in 0..n {
        let r = RegressionOutput::column(&output.residuals, k);
        autocorr.push(if r.len() > 2 {
            pearson(&r[..r.len() - 1], &r[1..]).unwrap_or(0.0)
        } else {
            0.0
        });
    }
    Ok(Diagnostics {
        rows: output.rows(),
        rank: output.rank,
        max_imag: output.max_imag,
        reconstruction_error: output.reconstruction_error(),
        max_orthogonality_defect: ortho,
        max_abs_residual: output.max_abs_residual(),
        variance_split: split,
        residual_lag1_autocorr: autocorr,
    })
}

pub fn write_beta_csv<W: Write>(beta: &BetaMatrix, mut w: W) -> Result<()> {
    for row in &beta.rows {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_beta_csv<R: BufRead>(r: R) -> Result<BetaMatrix> {
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad beta entry '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape("beta csv is not square"));
    }
    Ok(BetaMatrix { rows })
}

/// Rows as `date,x0..x{n-1}`.
pub fn write_rows_csv<W: Write>(dates: &[NaiveDate], rows: &[Vec<f64>], mut w: W) -> Result<()> {
    let n = rows.first().map_or(0, Vec::len);
    let cols: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
    writeln!(w, "date,{}", cols.join(","))?;
    for (d, row) in dates.iter().zip(rows) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", d, vals.join(","))?;
    }
    Ok(())
}

/// Inverse of [`write_rows_csv`].
pub fn read_rows_csv<R: BufRead>(r: R) -> Result<(Vec<NaiveDate>, Vec<Vec<f64>>)> {
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    let mut header = false;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            header = true;
            continue;
        }
        let mut fields = line.split(',');
        let date = fields
            .next()
            .and_then(|f| NaiveDate::parse_from_str(f, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::invalid(format!("bad date in row '{line}'")))?;
        let row = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::invalid(format!("bad value '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        dates.push(date);
        rows.push(row);
    }
    Ok((dates, rows))
}
