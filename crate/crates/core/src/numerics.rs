//! Dense row-major matrices and the handful of differentiable layers the
//! embedder needs: affine maps, rectifiers and per-row L2 normalization.
//!
//! Every forward function returns a [`LayerTape`] alongside its output. The
//! matching backward function consumes that tape and refuses tapes produced
//! by a different kind of layer or for a different batch shape.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows whose Euclidean norm falls at or below this are rejected by
/// [`l2_normalize_forward`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    DegenerateRow { row: usize, norm: f64 },
    #[error("tape mismatch: {0}")]
    TapeMismatch(String),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;

fn mismatch(op: &'static str, expected: impl ToString, found: impl ToString) -> NumericsError {
    NumericsError::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "Matrix::new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(mismatch(
                    "Matrix::from_rows",
                    cols,
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-width matrix still has rows
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                "Matrix::add_assign",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(mismatch(
                "matmul",
                format!("inner dimension {}", self.cols),
                other.rows,
            ));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(mismatch(
                "t_matmul",
                format!("inner dimension {}", self.rows),
                other.rows,
            ));
        }
        Ok(gemm(self, true, other, false))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(mismatch(
                "matmul_t",
                format!("inner dimension {}", self.cols),
                other.cols,
            ));
        }
        Ok(gemm(self, false, other, true))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hconcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(mismatch("hconcat", format!("{rows} rows"), bad.rows));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Splits columns into consecutive blocks of the given widths.
    pub fn hsplit(&self, widths: &[usize]) -> Result<Vec<Matrix>> {
        if widths.iter().sum::<usize>() != self.cols {
            return Err(mismatch("hsplit", self.cols, widths.iter().sum::<usize>()));
        }
        let mut out: Vec<Matrix> = widths
            .iter()
            .map(|&w| Matrix::zeros(self.rows, w))
            .collect();
        for r in 0..self.rows {
            let mut offset = 0;
            for (m, &w) in out.iter_mut().zip(widths) {
                m.row_mut(r)
                    .copy_from_slice(&self.row(r)[offset..offset + w]);
                offset += w;
            }
        }
        Ok(out)
    }

    /// Column sums, i.e. `1ᵀ · self`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.row_iter() {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out
    }
}

fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Matrix {
    let (m, k) = if trans_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: the strides describe exactly the row-major buffers owned by
    // `a`, `b` and `c`, whose extents were checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cached state of one forward pass, consumed by the matching backward.
#[derive(Clone, Debug)]
pub enum LayerTape {
    Linear {
        input: Matrix,
    },
    Relu {
        mask: Vec<bool>,
        rows: usize,
        cols: usize,
    },
    L2Normalize {
        output: Matrix,
        norms: Vec<f64>,
    },
}

impl LayerTape {
    fn kind(&self) -> &'static str {
        match self {
            LayerTape::Linear { .. } => "linear",
            LayerTape::Relu { .. } => "relu",
            LayerTape::L2Normalize { .. } => "l2-normalize",
        }
    }
}

/// Affine layer `x ↦ x·W + b` with `W` stored as `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients produced by [`Linear::backward`].
#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

impl Linear {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(mismatch("Linear::new", weights.cols(), bias.len()));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(NumericsError::NonFinite { op: "Linear::new" });
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in ±√(6/(I+O)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs).max(1) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Matrix {
                rows: inputs,
                cols: outputs,
                data,
            },
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, LayerTape)> {
        linear_forward(input, &self.weights, &self.bias)
    }

    pub fn backward(&self, tape: &LayerTape, upstream: &Matrix) -> Result<LinearGrads> {
        let LayerTape::Linear { input } = tape else {
            return Err(NumericsError::TapeMismatch(format!(
                "linear backward given a {} tape",
                tape.kind()
            )));
        };
        if upstream.rows() != input.rows() || upstream.cols() != self.outputs() {
            return Err(NumericsError::TapeMismatch(format!(
                "upstream {:?} does not match forward output {:?}",
                upstream.shape(),
                (input.rows(), self.outputs())
            )));
        }
        Ok(LinearGrads {
            weights: input.t_matmul(upstream)?,
            bias: upstream.col_sums(),
            input: upstream.matmul_t(&self.weights)?,
        })
    }
}

/// `out[b,o] = Σ_i input[b,i]·weights[i,o] + bias[o]`.
pub fn linear_forward(
    input: &Matrix,
    weights: &Matrix,
    bias: &[f64],
) -> Result<(Matrix, LayerTape)> {
    if input.cols() != weights.rows() {
        return Err(mismatch(
            "linear_forward",
            format!("{} input columns", weights.rows()),
            input.cols(),
        ));
    }
    if bias.len() != weights.cols() {
        return Err(mismatch(
            "linear_forward",
            format!("bias of {}", weights.cols()),
            bias.len(),
        ));
    }
    if !input.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "linear_forward",
        });
    }
    let mut out = input.matmul(weights)?;
    for r in 0..out.rows() {
        out.row_mut(r)
            .iter_mut()
            .zip(bias)
            .for_each(|(o, b)| *o += b);
    }
    if !out.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "linear_forward",
        });
    }
    Ok((
        out,
        LayerTape::Linear {
            input: input.clone(),
        },
    ))
}

pub fn relu_forward(input: &Matrix) -> Result<(Matrix, LayerTape)> {
    if !input.is_finite() {
        return Err(NumericsError::NonFinite { op: "relu_forward" });
    }
    let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Ok((
        Matrix {
            rows: input.rows(),
            cols: input.cols(),
            data,
        },
        LayerTape::Relu {
            mask,
            rows: input.rows(),
            cols: input.cols(),
        },
    ))
}

pub fn relu_backward(tape: &LayerTape, upstream: &Matrix) -> Result<Matrix> {
    let LayerTape::Relu { mask, rows, cols } = tape else {
        return Err(NumericsError::TapeMismatch(format!(
            "relu backward given a {} tape",
            tape.kind()
        )));
    };
    if upstream.shape() != (*rows, *cols) {
        return Err(NumericsError::TapeMismatch(format!(
            "upstream {:?} does not match forward shape {:?}",
            upstream.shape(),
            (rows, cols)
        )));
    }
    let data = upstream
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &on)| if on { g } else { 0.0 })
        .collect();
    Ok(Matrix {
        rows: *rows,
        cols: *cols,
        data,
    })
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_forward(input: &Matrix) -> Result<(Matrix, LayerTape)> {
    if !input.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "l2_normalize_forward",
        });
    }
    let mut output = input.clone();
    let mut norms = Vec::with_capacity(input.rows());
    for r in 0..input.rows() {
        let n = norm(input.row(r));
        if n <= MIN_ROW_NORM {
            return Err(NumericsError::DegenerateRow { row: r, norm: n });
        }
        output.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((output.clone(), LayerTape::L2Normalize { output, norms }))
}

/// `dx = (dy − y·(y·dy)) / ‖x‖` row by row.
pub fn l2_normalize_backward(tape: &LayerTape, upstream: &Matrix) -> Result<Matrix> {
    let LayerTape::L2Normalize { output, norms } = tape else {
        return Err(NumericsError::TapeMismatch(format!(
            "l2-normalize backward given a {} tape",
            tape.kind()
        )));
    };
    if upstream.shape() != output.shape() {
        return Err(NumericsError::TapeMismatch(format!(
            "upstream {:?} does not match forward shape {:?}",
            upstream.shape(),
            output.shape()
        )));
    }
    let mut grad = upstream.clone();
    for (r, &n) in norms.iter().enumerate() {
        let y = output.row(r);
        let proj = dot(y, upstream.row(r));
        grad.row_mut(r)
            .iter_mut()
            .zip(y)
            .for_each(|(g, &yi)| *g = (*g - yi * proj) / n);
    }
    Ok(grad)
}

/// Anything exposing its trainable values as a stable, ordered list of slices.
///
/// Gradient containers use the same type as the parameters they belong to, so
/// flattening both yields aligned vectors.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}

impl Parameters for Linear {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weights.data(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.data_mut(), &mut self.bias]
    }
}

fn param_mut<M: Parameters + ?Sized>(model: &mut M, mut idx: usize) -> &mut f64 {
    for s in model.param_slices_mut() {
        if idx < s.len() {
            return &mut s[idx];
        }
        idx -= s.len();
    }
    panic!("parameter index out of range")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error("loss is not deterministic: {first} then {second} at identical parameters")]
    NonDeterministic { first: f64, second: f64 },
    #[error("analytic gradient has {found} entries, model has {expected} parameters")]
    LengthMismatch { expected: usize, found: usize },
    #[error("loss is not finite at parameter {index}")]
    NonFiniteLoss { index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst probe, if any probe was made.
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// Compares `analytic` (flattened like [`Parameters::flat_params`]) to central
/// differences of `loss` for up to `probe_count` parameters picked with `seed`.
///
/// The error of one probe is `|a − n| / max(1, |a|, |n|)`. Parameters are
/// restored exactly after each probe.
pub fn grad_check<M, F>(
    model: &mut M,
    analytic: &[f64],
    mut loss: F,
    probe_count: usize,
    seed: u64,
) -> Result<GradCheckReport, GradCheckError>
where
    M: Parameters + ?Sized,
    F: FnMut(&M) -> f64,
{
    let n = model.param_count();
    if analytic.len() != n {
        return Err(GradCheckError::LengthMismatch {
            expected: n,
            found: analytic.len(),
        });
    }
    let first = loss(model);
    let second = loss(model);
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }

    let probes: Vec<usize> = if probe_count >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, probe_count).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
        probes: probes.len(),
    };
    for &i in &probes {
        let original = *param_mut(model, i);
        *param_mut(model, i) = original + FD_STEP;
        let plus = loss(model);
        *param_mut(model, i) = original - FD_STEP;
        let minus = loss(model);
        *param_mut(model, i) = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradCheckError::NonFiniteLoss { index: i });
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if report.worst_index.is_none() || err > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: Some(i),
                analytic: a,
                numeric,
                probes: probes.len(),
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_forward_examples() {
        let (out, _) = linear_forward(
            &m(&[&[1.0, 2.0]]),
            &m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!(out, m(&[&[1.0, 2.0]]));

        let (out, _) = linear_forward(
            &m(&[&[0.0, 0.0]]),
            &m(&[&[5.0, -2.0], &[7.0, 9.0]]),
            &[3.0, -1.0],
        )
        .unwrap();
        assert_eq!(out, m(&[&[3.0, -1.0]]));

        // [1,1]·[[2,0],[1,3]] = [3,3]; + [1,1]
        let (out, _) = linear_forward(
            &m(&[&[1.0, 1.0]]),
            &m(&[&[2.0, 0.0], &[1.0, 3.0]]),
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(out, m(&[&[4.0, 4.0]]));
    }

    #[test]
    fn linear_forward_errors() {
        let w = Matrix::zeros(2, 2);
        assert!(matches!(
            linear_forward(&Matrix::zeros(1, 3), &w, &[0.0, 0.0]),
            Err(NumericsError::DimensionMismatch { .. })
        ));
        let bad = Matrix {
            rows: 1,
            cols: 2,
            data: vec![f64::NAN, 0.0],
        };
        assert_eq!(
            linear_forward(&bad, &w, &[0.0, 0.0]).unwrap_err(),
            NumericsError::NonFinite {
                op: "linear_forward"
            }
        );
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(
            relu_forward(&m(&[&[-1.0, 2.0]])).unwrap().0,
            m(&[&[0.0, 2.0]])
        );
        assert_eq!(relu_forward(&m(&[&[0.0]])).unwrap().0, m(&[&[0.0]]));
        assert_eq!(
            relu_forward(&m(&[&[3.5, -0.1, 0.1]])).unwrap().0,
            m(&[&[3.5, 0.0, 0.1]])
        );
    }

    #[test]
    fn l2_normalize_examples() {
        let (out, _) = l2_normalize_forward(&m(&[&[3.0, 4.0]])).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(
            l2_normalize_forward(&m(&[&[1.0, 0.0]])).unwrap().0,
            m(&[&[1.0, 0.0]])
        );
        assert!(matches!(
            l2_normalize_forward(&m(&[&[0.0, 0.0]])),
            Err(NumericsError::DegenerateRow { row: 0, .. })
        ));
    }

    #[test]
    fn linear_backward_zero_input() {
        let layer = Linear::new(m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]), vec![0.0; 3]).unwrap();
        let (_, tape) = layer.forward(&Matrix::zeros(4, 2)).unwrap();
        let g = layer.backward(&tape, &Matrix::filled(4, 3, 1.0)).unwrap();
        assert_eq!(g.bias, vec![4.0, 4.0, 4.0]);
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_dead_unit_has_zero_grad() {
        let (_, tape) = relu_forward(&m(&[&[-1.0]])).unwrap();
        assert_eq!(relu_backward(&tape, &m(&[&[7.0]])).unwrap(), m(&[&[0.0]]));
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let layer = Linear::zeros(2, 2);
        let (_, relu_tape) = relu_forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            layer.backward(&relu_tape, &Matrix::zeros(1, 2)),
            Err(NumericsError::TapeMismatch(_))
        ));
        let (_, lin_tape) = layer.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            layer.backward(&lin_tape, &Matrix::zeros(3, 2)),
            Err(NumericsError::TapeMismatch(_))
        ));
        assert!(relu_backward(&lin_tape, &Matrix::zeros(1, 2)).is_err());
        assert!(l2_normalize_backward(&lin_tape, &Matrix::zeros(1, 2)).is_err());
    }

    /// Squared loss ½‖xW + b − t‖² on a random 3×2 layer; the analytic
    /// gradient comes from `backward`, the oracle is central differences.
    #[test]
    fn random_linear_layer_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut layer = Linear::glorot(3, 2, &mut rng);
        layer.bias = vec![0.3, -0.2];
        let input =
            Matrix::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let target =
            Matrix::new(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let squared = |l: &Linear| {
            let (out, _) = l.forward(&input).unwrap();
            0.5 * out
                .data()
                .iter()
                .zip(target.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };
        let (out, tape) = layer.forward(&input).unwrap();
        let mut upstream = out.clone();
        upstream
            .data_mut()
            .iter_mut()
            .zip(target.data())
            .for_each(|(o, t)| *o -= t);
        let g = layer.backward(&tape, &upstream).unwrap();
        let mut flat = g.weights.into_data();
        flat.extend(g.bias);
        let report = grad_check(&mut layer, &flat, squared, usize::MAX, 0).unwrap();
        assert_eq!(report.probes, 8);
        assert!(report.max_relative_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn grad_check_linear_relu_linear_cross_entropy() {
        struct Net {
            a: Linear,
            b: Linear,
        }
        impl Parameters for Net {
            fn param_slices(&self) -> Vec<&[f64]> {
                let mut v = self.a.param_slices();
                v.extend(self.b.param_slices());
                v
            }
            fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
                let mut v = self.a.param_slices_mut();
                v.extend(self.b.param_slices_mut());
                v
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut net = Net {
            a: Linear::glorot(5, 6, &mut rng),
            b: Linear::glorot(6, 3, &mut rng),
        };
        net.a
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.1..0.1));
        let x = Matrix::new(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let targets = [0usize, 2, 1, 2];

        let ce = |logits: &Matrix| -> (f64, Matrix) {
            let mut grad = Matrix::zeros(logits.rows(), logits.cols());
            let mut total = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                let row = logits.row(r);
                let mx = row.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                total += -(row[t] - mx - z.ln());
                for (c, &v) in row.iter().enumerate() {
                    let p = (v - mx).exp() / z;
                    grad.set(
                        r,
                        c,
                        (p - if c == t { 1.0 } else { 0.0 }) / targets.len() as f64,
                    );
                }
            }
            (total / targets.len() as f64, grad)
        };
        let forward = |n: &Net| {
            let (h, t1) = n.a.forward(&x).unwrap();
            let (r, t2) = relu_forward(&h).unwrap();
            let (o, t3) = n.b.forward(&r).unwrap();
            (o, t1, t2, t3)
        };
        let (logits, t1, t2, t3) = forward(&net);
        let (_, d_logits) = ce(&logits);
        let gb = net.b.backward(&t3, &d_logits).unwrap();
        let dh = relu_backward(&t2, &gb.input).unwrap();
        let ga = net.a.backward(&t1, &dh).unwrap();
        let grads = Net {
            a: Linear::new(ga.weights, ga.bias).unwrap(),
            b: Linear::new(gb.weights, gb.bias).unwrap(),
        };
        let report = grad_check(
            &mut net,
            &grads.flat_params(),
            |n| ce(&forward(n).0).0,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(report.max_relative_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn grad_check_constant_loss_is_exact() {
        let mut layer = Linear::zeros(3, 2);
        let report = grad_check(&mut layer, &[0.0; 8], |_| 1.5, 4, 3).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
        assert_eq!(report.probes, 4);
    }

    #[test]
    fn grad_check_detects_nondeterminism_and_bad_lengths() {
        let mut layer = Linear::zeros(1, 1);
        let mut calls = 0.0;
        let err = grad_check(
            &mut layer,
            &[0.0, 0.0],
            |_| {
                calls += 1.0;
                calls
            },
            2,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, GradCheckError::NonDeterministic { .. }));
        assert!(matches!(
            grad_check(&mut layer, &[0.0], |_| 0.0, 2, 0),
            Err(GradCheckError::LengthMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn l2_backward_matches_finite_differences() {
        let x = m(&[&[0.3, -1.2, 0.7], &[2.0, 0.1, -0.4]]);
        let w = m(&[&[0.5, -1.0, 0.25], &[1.5, 0.2, -0.7]]);
        // loss = Σ w ⊙ normalize(x)
        let f = |x: &Matrix| {
            let (y, _) = l2_normalize_forward(x).unwrap();
            dot(y.data(), w.data())
        };
        let (_, tape) = l2_normalize_forward(&x).unwrap();
        let g = l2_normalize_backward(&tape, &w).unwrap();
        for i in 0..6 {
            let mut xp = x.clone();
            xp.data_mut()[i] += FD_STEP;
            let mut xm = x.clone();
            xm.data_mut()[i] -= FD_STEP;
            let numeric = (f(&xp) - f(&xm)) / (2.0 * FD_STEP);
            assert!((numeric - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn hconcat_and_hsplit_invert() {
        let a = m(&[&[1.0], &[2.0]]);
        let b = m(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let c = Matrix::hconcat(&[&a, &b]).unwrap();
        assert_eq!(c, m(&[&[1.0, 3.0, 4.0], &[2.0, 5.0, 6.0]]));
        assert_eq!(c.hsplit(&[1, 2]).unwrap(), vec![a, b]);
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-5.0f64..5.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn linear_backward_matches_fd_random_shapes(
            (b, i, o, seed) in (1usize..=8, 1usize..=8, 1usize..=8, any::<u64>())
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut layer = Linear::glorot(i, o, &mut rng);
            layer.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let x = Matrix::new(b, i, (0..b * i).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let probe = Matrix::new(b, o, (0..b * o).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            // loss = Σ probe ⊙ (xW + b) + ½ Σ (xW + b)²
            let loss = |l: &Linear| {
                let (y, _) = l.forward(&x).unwrap();
                dot(y.data(), probe.data()) + 0.5 * dot(y.data(), y.data())
            };
            let (y, tape) = layer.forward(&x).unwrap();
            let mut up = probe.clone();
            up.add_assign(&y).unwrap();
            let g = layer.backward(&tape, &up).unwrap();
            let mut flat = g.weights.into_data();
            flat.extend(g.bias);
            let r = grad_check(&mut layer, &flat, loss, usize::MAX, 0).unwrap();
            prop_assert!(r.max_relative_error <= 1e-4, "{:?}", r);

            // input gradient too
            for k in 0..b * i {
                let mut xp = x.clone();
                xp.data_mut()[k] += FD_STEP;
                let mut xm = x.clone();
                xm.data_mut()[k] -= FD_STEP;
                let f = |x: &Matrix| {
                    let (y, _) = layer.forward(x).unwrap();
                    dot(y.data(), probe.data()) + 0.5 * dot(y.data(), y.data())
                };
                let numeric = (f(&xp) - f(&xm)) / (2.0 * FD_STEP);
                let a = g.input.data()[k];
                prop_assert!((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()) <= 1e-4);
            }
        }

        #[test]
        fn l2_normalize_unit_and_idempotent(x in matrix_strategy(3, 4)) {
            prop_assume!(x.row_iter().all(|r| norm(r) > 1e-6));
            let (y, _) = l2_normalize_forward(&x).unwrap();
            for r in y.row_iter() {
                prop_assert!((norm(r) - 1.0).abs() <= 1e-9);
            }
            let (z, _) = l2_normalize_forward(&y).unwrap();
            for (a, b) in y.data().iter().zip(z.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn relu_idempotent_and_nonnegative(x in matrix_strategy(2, 5)) {
            let (y, _) = relu_forward(&x).unwrap();
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
            prop_assert_eq!(relu_forward(&y).unwrap().0, y);
        }

        #[test]
        fn argmax_invariant_under_positive_scaling(
            x in matrix_strategy(3, 4), w in matrix_strategy(4, 5),
            bias in proptest::collection::vec(-5.0f64..5.0, 5), c in 0.01f64..100.0
        ) {
            let argmax = |m: &Matrix| -> Vec<usize> {
                m.row_iter().map(|r| {
                    let mut best = 0;
                    for (i, v) in r.iter().enumerate() {
                        if *v > r[best] { best = i; }
                    }
                    best
                }).collect()
            };
            let (y, _) = linear_forward(&x, &w, &bias).unwrap();
            let mut ws = w.clone();
            ws.scale(c);
            let bs: Vec<f64> = bias.iter().map(|b| b * c).collect();
            let (ys, _) = linear_forward(&x, &ws, &bs).unwrap();
            // skip near-ties where rounding could legitimately reorder
            let gap_ok = y.row_iter().all(|r| {
                let mut s: Vec<f64> = r.to_vec();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                s.len() < 2 || s[0] - s[1] > 1e-9
            });
            prop_assume!(gap_ok);
            prop_assert_eq!(argmax(&y), argmax(&ys));
        }
    }
}
