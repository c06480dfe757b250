//! Minimal dense numeric kernels shared by all other modules.
//!
//! Runtime paths run on `f32`; the gradient-check path runs the same generic
//! code on `f64` so finite differences stay meaningful.

use crate::error::{Error, Result};

/// Scalar type the kernels are generic over. Implemented for `f32` and `f64`.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + std::iter::Sum + Default + std::fmt::Debug + Send + Sync + 'static
{
    /// Lift an `f64` constant into this type.
    fn c(x: f64) -> Self;
    /// Widen to `f64`.
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Norms at or below this threshold are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Build from row-major data; validates length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} expects {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix {rows}x{cols} contains a non-finite entry")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch { context: "matmul", expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch { context: "matmul_t", expected: self.cols, got: other.cols });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.set(i, j, dot(a_row, other.row(j)));
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch { context: "t_matmul", expected: self.rows, got: other.rows });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a dense vector `x`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimMismatch { context: "matvec", expected: self.cols, got: x.len() });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self^T * x`.
    pub fn t_matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(Error::DimMismatch { context: "t_matvec", expected: self.rows, got: x.len() });
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i).iter()) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`, shape-checked.
    pub fn add_scaled(&mut self, other: &Matrix<T>, alpha: T) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add_scaled {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Rank-1 update `self += alpha * a * b^T`.
    pub fn add_outer(&mut self, a: &[T], b: &[T], alpha: T) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            let s = alpha * ai;
            for (o, &bj) in self.row_mut(i).iter_mut().zip(b.iter()) {
                *o += s * bj;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Matrix<f32> {
    pub fn to_f64(&self) -> Matrix<f64> {
        self.map(|v| v as f64)
    }
}

impl Matrix<f64> {
    pub fn to_f32(&self) -> Matrix<f32> {
        self.map(|v| v as f32)
    }
}

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T = f32> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn new(data: Vec<T>) -> Self {
        Vector { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector { data: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn add_scaled(&mut self, other: &Vector<T>, alpha: T) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch { context: "vector add_scaled", expected: self.dim(), got: other.dim() });
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Vector<f32> {
    pub fn to_f64(&self) -> Vector<f64> {
        Vector { data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl Vector<f64> {
    pub fn to_f32(&self) -> Vector<f32> {
        Vector { data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// In-place `out += alpha * x`.
pub fn axpy<T: Real>(out: &mut [T], x: &[T], alpha: T) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o += alpha * v;
    }
}

/// L2-normalize a slice in place; slices with norm <= `NORM_EPS` become zero.
pub fn l2_normalize_slice<T: Real>(v: &mut [T]) {
    let norm = dot(v, v).sqrt();
    if norm.to_f64() <= NORM_EPS {
        for x in v.iter_mut() {
            *x = T::zero();
        }
    } else {
        let inv = T::one() / norm;
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
}

/// L2-normalize a vector. Inputs with norm at or below `NORM_EPS` map to the
/// zero vector so degenerate embeddings cannot inject NaN downstream.
pub fn l2_normalize<T: Real>(v: &Vector<T>) -> Vector<T> {
    let mut out = v.clone();
    l2_normalize_slice(out.data_mut());
    out
}

/// Cosine similarity, clamped to [-1, 1]; 0 when either norm is degenerate.
pub fn cosine_sim<T: Real>(a: &Vector<T>, b: &Vector<T>) -> Result<T> {
    cosine_sim_slices(a.data(), b.data())
}

pub fn cosine_sim_slices<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { context: "cosine_sim", expected: a.len(), got: b.len() });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na.to_f64() <= NORM_EPS || nb.to_f64() <= NORM_EPS {
        return Ok(T::zero());
    }
    let sim = dot(a, b) / (na * nb);
    Ok(sim.min(T::one()).max(-T::one()))
}

/// Row-wise softmax with max-subtraction for numerical stability.
pub fn softmax_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Central finite differences `(f(x + h e_i) - f(x - h e_i)) / 2h`, in f64.
///
/// The probe function is evaluated 2*dim times; any non-finite value aborts
/// with an error rather than polluting the estimate.
pub fn finite_diff_grad<F>(mut f: F, x: &Vector<f64>, h: f64) -> Result<Vector<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.data().to_vec();
    let mut grad = vec![0.0; probe.len()];
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("finite_diff_grad probe at coordinate {i}")));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(Vector::new(grad))
}

/// Relative error between an analytic gradient and a reference, using the
/// larger of the two norms as the scale (zero-safe).
pub fn grad_rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn l2_normalize_345_triangle() {
        let v = l2_normalize(&Vector::new(vec![3.0f32, 4.0]));
        assert!((v.data()[0] - 0.6).abs() < 1e-6);
        assert!((v.data()[1] - 0.8).abs() < 1e-6);
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_zero_and_subnormal() {
        let z = l2_normalize(&Vector::new(vec![0.0f32, 0.0]));
        assert_eq!(z.data(), &[0.0, 0.0]);
        let tiny = l2_normalize(&Vector::new(vec![1e-30f64, 1e-30]));
        assert_eq!(tiny.data(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_identity_orthogonal_diagonal() {
        let e0 = Vector::new(vec![1.0f64, 0.0]);
        let e1 = Vector::new(vec![0.0f64, 1.0]);
        let d = Vector::new(vec![1.0f64, 1.0]);
        assert!((cosine_sim(&e0, &e0).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_sim(&e0, &e1).unwrap().abs() < 1e-12);
        assert!((cosine_sim(&d, &e0).unwrap() - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_dim_mismatch_errors() {
        let a = Vector::new(vec![1.0f32]);
        let b = Vector::new(vec![1.0f32, 2.0]);
        assert!(cosine_sim(&a, &b).is_err());
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        let z = Vector::new(vec![0.0f32, 0.0]);
        let a = Vector::new(vec![1.0f32, 2.0]);
        assert_eq!(cosine_sim(&z, &a).unwrap(), 0.0);
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let m = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);

        let m = Matrix::from_vec(1, 2, vec![std::f64::consts::LN_2, 0.0]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let m = Matrix::from_vec(1, 2, vec![1000.0f32, 0.0]).unwrap();
        let s = softmax_rows(&m);
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let x = Vector::new(vec![1.0, 2.0]);
        let g = finite_diff_grad(|v| v.iter().map(|x| x * x).sum(), &x, 1e-4).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let x = Vector::new(vec![0.3, -0.7, 2.0]);
        let g = finite_diff_grad(|_| 42.0, &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn finite_diff_rejects_non_finite_probe() {
        let x = Vector::new(vec![0.0]);
        let r = finite_diff_grad(|v| 1.0 / v[0], &x, 0.0);
        assert!(r.is_err());
    }

    /// Softmax cross-entropy: FD gradient must match the analytic softmax - onehot.
    #[test]
    fn finite_diff_matches_softmax_ce_analytic() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let label = rng.gen_range(0..5usize);
            let f = |v: &[f64]| {
                let m = Matrix::from_vec(1, v.len(), v.to_vec()).unwrap();
                let q = softmax_rows(&m);
                -q.get(0, label).ln()
            };
            let fd = finite_diff_grad(f, &Vector::new(logits.clone()), 1e-4).unwrap();
            let m = Matrix::from_vec(1, logits.len(), logits.clone()).unwrap();
            let q = softmax_rows(&m);
            let analytic: Vec<f64> =
                (0..5).map(|j| q.get(0, j) - if j == label { 1.0 } else { 0.0 }).collect();
            assert!(grad_rel_error(&analytic, fd.data()) < 1e-6);
        }
    }

    #[test]
    fn matmul_against_hand_example() {
        let a = Matrix::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        let ct = a.matmul_t(&b.map(|v| v)).is_err();
        assert!(ct); // 3 cols vs 2 cols
    }

    #[test]
    fn t_matmul_matches_explicit_transpose() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap();
        let b = Matrix::from_vec(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap();
        let fast = a.t_matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let direct: f64 = (0..4).map(|k| a.get(k, i) * b.get(k, j)).sum();
                assert!((fast.get(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_self_is_one_and_symmetric(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let va = Vector::new(a);
            let vb = Vector::new(b);
            if va.norm() > 1e-6 {
                prop_assert!((cosine_sim(&va, &va).unwrap() - 1.0).abs() < 1e-6);
            }
            let ab = cosine_sim(&va, &vb).unwrap();
            let ba = cosine_sim(&vb, &va).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 6),
            shift in -10.0f64..10.0,
        ) {
            let m = Matrix::from_vec(2, 3, vals.clone()).unwrap();
            let s = softmax_rows(&m);
            for i in 0..2 {
                let sum: f64 = s.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            let shifted = Matrix::from_vec(2, 3, vals.iter().map(|v| v + shift).collect()).unwrap();
            let s2 = softmax_rows(&shifted);
            for (x, y) in s.data().iter().zip(s2.data().iter()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
