//! Dense Gaussian linear algebra on top of nalgebra.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::rng::{standard_normals, StreamRng};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Squared pivots at or below this are treated as loss of definiteness.
pub const PIVOT_FLOOR: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_square(a: &Matrix) -> Result<usize, Error> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    Ok(a.nrows())
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Lower Cholesky factor `L` with `L L' = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, Error> {
    check_square(a)?;
    let chol = nalgebra::Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.unpack();
    if l.diagonal().iter().any(|&p| !(p * p > PIVOT_FLOOR)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(l)
}

pub fn log_det_from_cholesky(l: &Matrix) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn spd_log_det(a: &Matrix) -> Result<f64, Error> {
    Ok(log_det_from_cholesky(&cholesky(a)?))
}

pub fn spd_inverse(a: &Matrix) -> Result<Matrix, Error> {
    check_square(a)?;
    let chol = nalgebra::Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)?;
    if chol.l_dirty().diagonal().iter().any(|&p| !(p * p > PIVOT_FLOOR)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `L z = v` in place for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix, v: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let mut s = v[i];
        for j in 0..i {
            s -= l[(i, j)] * v[j];
        }
        v[i] = s / l[(i, i)];
    }
}

/// `out = m x`.
pub fn mat_vec(m: &Matrix, x: &[f64], out: &mut [f64]) {
    let (r, c) = m.shape();
    debug_assert_eq!(c, x.len());
    for (i, o) in out.iter_mut().enumerate().take(r) {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += m[(i, j)] * xj;
        }
        *o = s;
    }
}

/// `out = l z` for lower-triangular `l`.
pub fn lower_mul(l: &Matrix, z: &[f64], out: &mut [f64]) {
    for i in 0..z.len() {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[(i, j)] * z[j];
        }
        out[i] = s;
    }
}

/// `x' m x`.
pub fn quad_form(m: &Matrix, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[(i, j)] * x[j];
        }
        s += x[i] * row;
    }
    s
}

/// Principal square root of a symmetric positive semi-definite matrix.
///
/// Negative eigenvalues within `1e-10` of the spectral radius are rounding
/// and are clamped to zero.
pub fn sqrtm_psd(a: &Matrix) -> Result<Matrix, Error> {
    check_square(a)?;
    let eig = symmetrize(a).symmetric_eigen();
    let radius = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * radius) {
        return Err(Error::NotPositiveSemiDefinite);
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * Matrix::from_diagonal(&vals) * v.transpose())))
}

/// Bures distance `sqrt(tr(G1 + G2 - 2 (G1^1/2 G2 G1^1/2)^1/2))`.
///
/// Evaluated as the transport cost `tr(X G1^-1 X)` with
/// `X = (G1^1/2 G2 G1^1/2)^1/2 - G1`, where `X` solves the Sylvester equation
/// `S X + X G1 = G1^1/2 (G2 - G1) G1^1/2`. This keeps full relative accuracy
/// when `G1` and `G2` nearly coincide, where the trace formula cancels.
pub fn bures(g1: &Matrix, g2: &Matrix) -> Result<f64, Error> {
    if g1.shape() != g2.shape() {
        return Err(Error::DimensionMismatch { expected: g1.nrows(), got: g2.nrows() });
    }
    check_square(g1)?;
    cholesky(g1)?;
    cholesky(g2)?;
    let e1 = symmetrize(g1).symmetric_eigen();
    let (v, mu) = (&e1.eigenvectors, &e1.eigenvalues);
    let root1 = symmetrize(&(v * Matrix::from_diagonal(&mu.map(|x| x.sqrt())) * v.transpose()));
    let es = symmetrize(&(&root1 * g2 * &root1)).symmetric_eigen();
    let (u, s) = (&es.eigenvectors, es.eigenvalues.map(|x| x.max(0.0).sqrt()));
    let diff = symmetrize(&(g2 - g1));
    let rhs = u.transpose() * (&root1 * diff * &root1) * v;
    let y = Matrix::from_fn(rhs.nrows(), rhs.ncols(), |i, j| rhs[(i, j)] / (s[i] + mu[j]));
    let x = u * y * v.transpose();
    let b2: f64 = (0..mu.len())
        .map(|j| {
            let xv = &x * v.column(j);
            xv.norm_squared() / mu[j]
        })
        .sum();
    Ok(b2.max(0.0).sqrt())
}

/// 2-Wasserstein distance between two Gaussians (not squared).
pub fn w2_gaussian(m1: &Vector, c1: &Matrix, m2: &Vector, c2: &Matrix) -> Result<f64, Error> {
    if m1.len() != m2.len() {
        return Err(Error::DimensionMismatch { expected: m1.len(), got: m2.len() });
    }
    let b = bures(c1, c2)?;
    Ok(((m1 - m2).norm_squared() + b * b).sqrt())
}

/// `KL(N(m1, c1) || N(m2, c2))`.
pub fn kl_gaussian(m1: &Vector, c1: &Matrix, m2: &Vector, c2: &Matrix) -> Result<f64, Error> {
    let d = m1.len() as f64;
    let p2 = spd_inverse(c2)?;
    let diff = m2 - m1;
    let tr = (&p2 * c1).trace();
    let maha = quad_form(&p2, diff.as_slice());
    Ok(0.5 * (tr + maha - d + spd_log_det(c2)? - spd_log_det(c1)?))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A Gaussian with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: Vector,
    pub cov: Matrix,
    chol: Matrix,
    precision: Matrix,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self, Error> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: cov.nrows() });
        }
        let chol = cholesky(&cov)?;
        let precision = spd_inverse(&cov)?;
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + log_det_from_cholesky(&chol));
        Ok(Self { mean, cov, chol, precision, log_norm })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(Vector::zeros(d), Matrix::identity(d, d)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// `-(d log 2 pi + log det cov) / 2`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut z: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        forward_substitute(&self.chol, &mut z);
        self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    /// Log-density and its gradient `-P (x - mean)`.
    pub fn log_pdf_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        mat_vec(&self.precision, &diff, grad);
        let mut q = 0.0;
        for (g, v) in grad.iter_mut().zip(diff.iter()) {
            q += *g * v;
            *g = -*g;
        }
        self.log_norm - 0.5 * q
    }

    pub fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim();
        let mut z = alloc::vec![0.0; d];
        standard_normals(rng, &mut z);
        lower_mul(&self.chol, &z, out);
        for (o, m) in out.iter_mut().zip(self.mean.iter()) {
            *o += m;
        }
    }
}

pub fn gaussian_logpdf(x: &[f64], mean: &Vector, cov: &Matrix) -> Result<f64, Error> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch { expected: mean.len(), got: x.len() });
    }
    Ok(Gaussian::new(mean.clone(), cov.clone())?.log_pdf(x))
}

pub fn gaussian_sample(mean: &Vector, cov: &Matrix, rng: &mut StreamRng) -> Result<Vector, Error> {
    let g = Gaussian::new(mean.clone(), cov.clone())?;
    let mut out = Vector::zeros(mean.len());
    g.sample(rng, out.as_mut_slice());
    Ok(out)
}

/// Empirical mean and covariance (divisor `n`) of a flat `n x d` ensemble.
pub fn moments(xs: &[f64], d: usize) -> (Vector, Matrix) {
    let n = xs.len() / d;
    let mut mean = Vector::zeros(d);
    for row in xs.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = Matrix::zeros(d, d);
    for row in xs.chunks(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov /= n as f64;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spd(d: usize, seed: &[f64]) -> Matrix {
        let a = Matrix::from_fn(d, d, |i, j| seed[(i * d + j) % seed.len()] + 0.1 * (i as f64 - j as f64));
        &a * a.transpose() + Matrix::identity(d, d) * 0.5
    }

    #[test]
    fn cholesky_worked_example() {
        let a = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky(&a).unwrap();
        assert_relative_eq!(l[(0, 0)], 2.0);
        assert_relative_eq!(l[(1, 0)], 1.0);
        assert_relative_eq!(l[(0, 1)], 0.0);
        assert_relative_eq!(l[(1, 1)], 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky(&a), Err(Error::NotPositiveDefinite));
        let tiny = Matrix::from_row_slice(1, 1, &[1e-310]);
        assert_eq!(cholesky(&tiny), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn standard_normal_logpdf_at_origin() {
        let lp = gaussian_logpdf(&[0.0, 0.0], &Vector::zeros(2), &Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(lp, -(2.0 * core::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    fn naive_bures(g1: &Matrix, g2: &Matrix) -> f64 {
        let s1 = sqrtm_psd(g1).unwrap();
        let cross = sqrtm_psd(&(&s1 * g2 * &s1)).unwrap();
        (g1.trace() + g2.trace() - 2.0 * cross.trace()).max(0.0).sqrt()
    }

    #[test]
    fn bures_matches_trace_formula() {
        for k in 0..20 {
            let seed: Vec<f64> = (0..9).map(|i| ((i * 7 + k * 13) % 11) as f64 / 5.0 - 1.0).collect();
            let seed2: Vec<f64> = (0..9).map(|i| ((i * 5 + k * 3) % 7) as f64 / 3.0 - 1.0).collect();
            let (a, b) = (spd(3, &seed), spd(3, &seed2));
            assert_relative_eq!(bures(&a, &b).unwrap(), naive_bures(&a, &b), epsilon = 1e-7);
        }
    }

    #[test]
    fn bures_commuting_diagonals() {
        let a = Matrix::from_diagonal(&Vector::from_row_slice(&[1.0, 4.0, 0.25]));
        let b = Matrix::from_diagonal(&Vector::from_row_slice(&[9.0, 1.0, 0.25]));
        assert_relative_eq!(bures(&a, &b).unwrap(), (4.0f64 + 1.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bures_keeps_precision_for_nearby_matrices() {
        // |sqrt(a) - sqrt(b)| = |a - b| / (sqrt(a) + sqrt(b)) without cancellation
        let a = Matrix::from_diagonal(&Vector::from_row_slice(&[2.0, 3.0]));
        let b = Matrix::from_diagonal(&Vector::from_row_slice(&[2.0 + 1e-12, 3.0]));
        let want = 1e-12 / (2.0 * 2f64.sqrt());
        assert_relative_eq!(bures(&a, &b).unwrap(), want, max_relative = 1e-3);
        assert_eq!(bures(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sqrtm_rejects_indefinite() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(sqrtm_psd(&a), Err(Error::NotPositiveSemiDefinite));
    }

    #[test]
    fn bures_of_scalars_is_sqrt_difference() {
        let a = Matrix::from_row_slice(1, 1, &[4.0]);
        let b = Matrix::from_row_slice(1, 1, &[9.0]);
        assert_relative_eq!(bures(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn w2_of_lqg_prior_and_posterior() {
        // posterior of N(0, I) under y = (8, 8), R = [[1, .8], [.8, 1]]
        let r = Matrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let ri = spd_inverse(&r).unwrap();
        let sigma = spd_inverse(&(Matrix::identity(2, 2) + &ri)).unwrap();
        let mu = &sigma * (&ri * Vector::from_element(2, 8.0));
        let w = w2_gaussian(&Vector::zeros(2), &Matrix::identity(2, 2), &mu, &sigma).unwrap();
        assert!((w - 4.09).abs() < 5e-3, "w2 = {w}");
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let c = spd(3, &[0.3, -0.2, 0.9, 0.1]);
        let m = Vector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert!(kl_gaussian(&m, &c, &m, &c).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sqrtm_squares_back(vals in proptest::collection::vec(-2.0f64..2.0, 9)) {
            let a = spd(3, &vals);
            let s = sqrtm_psd(&a).unwrap();
            let err = (&s * &s - &a).abs().max();
            prop_assert!(err < 1e-9 * a.abs().max().max(1.0));
        }

        #[test]
        fn w2_is_symmetric_nonnegative_and_zero_on_diagonal(
            v1 in proptest::collection::vec(-2.0f64..2.0, 4),
            v2 in proptest::collection::vec(-2.0f64..2.0, 4),
            m in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let (c1, c2) = (spd(2, &v1), spd(2, &v2));
            let (m1, m2) = (Vector::from_row_slice(&m[..2]), Vector::from_row_slice(&m[2..]));
            let a = w2_gaussian(&m1, &c1, &m2, &c2).unwrap();
            let b = w2_gaussian(&m2, &c2, &m1, &c1).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-7 * (1.0 + a));
            prop_assert!(w2_gaussian(&m1, &c1, &m1, &c1).unwrap() < 1e-6);
        }

        #[test]
        fn log_sum_exp_bounds(xs in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&xs);
            prop_assert!(l >= m - 1e-12);
            prop_assert!(l <= m + (xs.len() as f64).ln() + 1e-12);
        }
    }
}
