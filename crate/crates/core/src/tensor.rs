//! Dense row-major matrices and vectors in `f64`, plus the nonlinearities the
//! models share. Everything here is a pure function of its inputs.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

/// Which matrix norm stands in for `‖W‖₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Frobenius,
    Spectral,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" => Ok(NormKind::Frobenius),
            "spectral" => Ok(NormKind::Spectral),
            other => Err(Error::Config(format!("unknown norm kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::Frobenius => "frobenius",
            NormKind::Spectral => "spectral",
        })
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Mat { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `out += self · x`.
    pub fn mul_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · x`.
    pub fn mul_t_vec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * xr;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.rows);
        self.mul_vec_acc(x, &mut out);
        out
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.cols);
        self.mul_t_vec_acc(x, &mut out);
        out
    }

    /// `self += scale · a bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = ar * scale;
            if s == 0.0 {
                continue;
            }
            let cols = self.cols;
            for (m, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *m += s * bc;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for Mat {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

impl AsMut<[f64]> for Mat {
    fn as_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, v: f64) -> Self {
        Vector(vec![v; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn random<R: Rng + ?Sized>(len: usize, scale: f64, rng: &mut R) -> Self {
        Vector((0..len).map(|_| rng.gen_range(-scale..scale)).collect())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsMut<[f64]> for Vector {
    fn as_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::InvalidShape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (o, &bkj) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect()
}

/// Softmax with max-subtraction.
pub fn softmax(v: &[f64]) -> Vector {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

pub fn frobenius_norm(values: &[f64]) -> f64 {
    l2_norm(values)
}

const POWER_ITERATIONS: usize = 100;
const POWER_TOLERANCE: f64 = 1e-10;

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.rows == 0 || m.cols == 0 || m.data.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // Irrational-stride start vector: never exactly orthogonal to a dominant
    // singular vector for the matrices seen in practice.
    let mut v: Vector = (0..m.cols)
        .map(|j| 1.0 + ((j as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let av = m.mul_vec(&v);
        let mut w = m.mul_t_vec(&av);
        let next = l2_norm(&av);
        if l2_norm(&w) == 0.0 {
            return next;
        }
        normalize(&mut w);
        v = w;
        let converged = (next - sigma).abs() <= POWER_TOLERANCE * next.max(1.0);
        sigma = next;
        if converged {
            break;
        }
    }
    l2_norm(&m.mul_vec(&v))
}

pub fn matrix_norm(m: &Mat, kind: NormKind) -> f64 {
    match kind {
        NormKind::Frobenius => frobenius_norm(m.as_slice()),
        NormKind::Spectral => spectral_norm(m),
    }
}

fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_times_a_is_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mat::random(3, 4, 1.0, &mut rng);
        assert_eq!(matmul(&Mat::identity(3), &a).unwrap(), a);
    }

    #[test]
    fn zero_times_a_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Mat::random(3, 2, 1.0, &mut rng);
        assert_eq!(matmul(&Mat::zeros(4, 3), &a).unwrap(), Mat::zeros(4, 2));
    }

    #[test]
    fn hand_product() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Mat::from_rows(&[vec![3.0], vec![7.0]]).unwrap());
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let err = matmul(&Mat::zeros(2, 3), &Mat::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&[0.0, 0.0, 0.0]);
        for &p in s.iter() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert!(s.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(&[0.0])[0], 0.5);
        assert!(sigmoid(&[-800.0])[0].is_finite());
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(Mat::zeros(3, 3).as_slice()), 0.0);
        let m = Mat::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(m.as_slice()), 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mat::random(5, 5, 2.0, &mut rng);
        let mut sum = 0.0;
        for r in 0..5 {
            for c in 0..5 {
                sum += m.get(r, c) * m.get(r, c);
            }
        }
        assert!(close(frobenius_norm(m.as_slice()), sum.sqrt(), 1e-12));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, -5.0]]).unwrap();
        assert!(close(spectral_norm(&m), 5.0, 1e-9));
        let r = Mat::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!(close(spectral_norm(&r), 5.0, 1e-9));
        assert_eq!(spectral_norm(&Mat::zeros(2, 2)), 0.0);
    }

    #[test]
    fn spectral_not_above_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let m = Mat::random(4, 6, 1.0, &mut rng);
            let s = spectral_norm(&m);
            assert!(s <= frobenius_norm(m.as_slice()) + 1e-12);
            assert!(s >= frobenius_norm(m.as_slice()) / 2.0 - 1e-12);
        }
    }

    fn mat_strategy(r: usize, c: usize) -> impl Strategy<Value = Mat> {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Mat::from_vec(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_is_probability_vector(v in prop::collection::vec(-1000.0f64..1000.0, 1..12)) {
            let s = softmax(&v);
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        #[test]
        fn matmul_is_associative(a in mat_strategy(3, 4), b in mat_strategy(4, 2), c in mat_strategy(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn frobenius_triangle(a in mat_strategy(4, 4), b in mat_strategy(4, 4)) {
            let sum: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
            prop_assert!(frobenius_norm(&sum) <= frobenius_norm(a.as_slice()) + frobenius_norm(b.as_slice()) + 1e-12);
        }
    }
}
