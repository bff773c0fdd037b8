//! Dense matrix primitives for the hand-written transformer.

use num_traits::Float;

/// Scalar type the model runs in: `f32` for training and checkpoints,
/// `f64` for verification against finite differences.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut F {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// `self (m x k) @ other (k x n)`.
    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.at(i, l);
                if a == F::zero() {
                    continue;
                }
                let other_row = other.row(l);
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(other_row) {
                    *o = *o + a * *b;
                }
            }
        }
        out
    }

    /// `self (m x k) @ other^T (n x k)`.
    pub fn matmul_transpose(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.cols, "matmul_transpose dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = F::zero();
                for (a, b) in self.row(i).iter().zip(other.row(j)) {
                    acc = acc + *a * *b;
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    /// `self^T (k x m) @ other (k x n)`, accumulated into `out` (m x n).
    pub fn transpose_matmul_into(&self, other: &Mat<F>, out: &mut Mat<F>) {
        assert_eq!(self.rows, other.rows, "transpose_matmul dimension mismatch");
        assert_eq!((out.rows, out.cols), (self.cols, other.cols));
        for l in 0..self.rows {
            let left = self.row(l);
            let right = other.row(l);
            for (i, a) in left.iter().enumerate() {
                if *a == F::zero() {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(right) {
                    *o = *o + *a * *b;
                }
            }
        }
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_bias(&mut self, bias: &[F]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v = *v + *b;
            }
        }
    }

    pub fn add_in_place(&mut self, other: &Mat<F>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (v, o) in self.data.iter_mut().zip(&other.data) {
            *v = *v + *o;
        }
    }

    /// Sums rows into a length-`cols` vector, accumulated into `out`.
    pub fn col_sums_into(&self, out: &mut [F]) {
        assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + *v;
            }
        }
    }
}

/// Numerically stable in-place softmax; `-inf` entries get probability 0.
pub fn softmax_in_place<F: Scalar>(xs: &mut [F]) {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / total;
    }
}

const GELU_COEF: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    let sqrt_2_over_pi = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let coef = F::from_f64(GELU_COEF);
    let inner = sqrt_2_over_pi * (x + coef * x * x * x);
    half * x * (F::one() + inner.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    let sqrt_2_over_pi = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let coef = F::from_f64(GELU_COEF);
    let three = F::from_f64(3.0);
    let inner = sqrt_2_over_pi * (x + coef * x * x * x);
    let t = inner.tanh();
    let sech_sq = F::one() - t * t;
    half * (F::one() + t) + half * x * sech_sq * sqrt_2_over_pi * (F::one() + three * coef * x * x)
}
