//! Dense row-major matrices with paired forward/backward rules.
//!
//! Every reduction sums in a fixed order (ascending inner index per output
//! cell), so results are bitwise reproducible regardless of how rows are
//! distributed across threads.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this count are processed on the calling thread.
const PAR_MIN_ROWS: usize = 64;

/// Exponent clamp for [`sigmoid`]; `exp(-700)` is still a normal double.
const SIGMOID_EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), self.cols);
        for (dst, &src) in rows.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_err("add_assign", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &DenseMatrix, factor: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_err("add_scaled", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &DenseMatrix) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(dim_err("add_row_broadcast", self, bias));
        }
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums as a 1×cols matrix (rows summed top to bottom).
    pub fn column_sums(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (acc, x) in out.data.iter_mut().zip(self.row(r)) {
                *acc += x;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn dim_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn for_each_row<F>(out: &mut DenseMatrix, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let cols = out.cols.max(1);
    if out.rows >= PAR_MIN_ROWS {
        out.data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
    } else {
        out.data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// `a · b`
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(dim_err("matmul", a, b));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    for_each_row(&mut out, |i, row| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    });
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(dim_err("matmul_tn", a, b));
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    for_each_row(&mut out, |k, row| {
        for i in 0..a.rows {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for (o, bij) in row.iter_mut().zip(b.row(i)) {
                *o += aik * bij;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ`
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(dim_err("matmul_nt", a, b));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    if b.rows == 0 {
        return Ok(out);
    }
    for_each_row(&mut out, |i, row| {
        let ai = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ai, b.row(j));
        }
    });
    Ok(out)
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    if x.shape() != upstream.shape() {
        return Err(dim_err("relu_backward", x, upstream));
    }
    let data = x
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
        .collect();
    Ok(DenseMatrix {
        rows: x.rows,
        cols: x.cols,
        data,
    })
}

/// Logistic function with the exponent clamped to ±700 so the result is
/// never exactly 0 and never NaN.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_EXP_CLAMP, SIGMOID_EXP_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One output row per group: the elementwise mean of that group's rows of
/// `x`, summed in the order the indices are listed.
pub fn mean_rows(x: &DenseMatrix, groups: &[Vec<usize>]) -> Result<DenseMatrix> {
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Contract(format!(
                "mean_rows: group {g} is empty; isolated nodes must include themselves"
            )));
        }
        if let Some(&bad) = members.iter().find(|&&i| i >= x.rows) {
            return Err(Error::Contract(format!(
                "mean_rows: group {g} references row {bad} of a {}-row matrix",
                x.rows
            )));
        }
    }
    let mut out = DenseMatrix::zeros(groups.len(), x.cols);
    for_each_row(&mut out, |g, row| {
        let members = &groups[g];
        for &m in members {
            for (o, v) in row.iter_mut().zip(x.row(m)) {
                *o += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        row.iter_mut().for_each(|o| *o *= inv);
    });
    Ok(out)
}

/// Reverse of [`mean_rows`]: scatters each group's upstream row back to its
/// members, scaled by the group size, into a matrix with `input_rows` rows.
pub fn mean_rows_backward(upstream: &DenseMatrix, groups: &[Vec<usize>], input_rows: usize) -> Result<DenseMatrix> {
    if upstream.rows != groups.len() {
        return Err(Error::Contract(format!(
            "mean_rows_backward: {} upstream rows for {} groups",
            upstream.rows,
            groups.len()
        )));
    }
    let mut out = DenseMatrix::zeros(input_rows, upstream.cols);
    for (g, members) in groups.iter().enumerate() {
        let inv = 1.0 / members.len() as f64;
        let up = upstream.row(g);
        for &m in members {
            if m >= input_rows {
                return Err(Error::Contract(format!(
                    "mean_rows_backward: row {m} out of range {input_rows}"
                )));
            }
            for (o, u) in out.row_mut(m).iter_mut().zip(up) {
                *o += u * inv;
            }
        }
    }
    Ok(out)
}

/// A trainable matrix with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl ParamTensor {
    pub fn new(value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows, value.cols);
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &DenseMatrix) -> Result<()> {
        self.grad.add_assign(g)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_relative_error: f64,
    /// (tensor index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the analytic gradients already stored in `params[i].grad` with
/// central differences of `loss_fn`.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |numeric|)`.
/// Parameter values are restored before returning.
pub fn finite_difference_check<F>(mut loss_fn: F, params: &mut [ParamTensor], opts: FdOptions) -> Result<FdReport>
where
    F: FnMut(&[ParamTensor]) -> Result<f64>,
{
    if opts.h <= 0.0 {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = FdReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for t in 0..params.len() {
        let n = params[t].value.data.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = params[t].value.data[idx];
            params[t].value.data[idx] = orig + opts.h;
            let plus = loss_fn(params);
            params[t].value.data[idx] = orig - opts.h;
            let minus = loss_fn(params);
            params[t].value.data[idx] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite at tensor {t}, coordinate {idx}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            let analytic = params[t].grad.data[idx];
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (t, idx);
            }
        }
    }
    Ok(report)
}
