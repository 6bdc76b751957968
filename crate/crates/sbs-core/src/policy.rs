//! Quadratic policies `psi(x) = exp(-(x'Ax + x'b + c))` and their fitting.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Dense symmetric `A`.
    Full,
    /// Diagonal `A`.
    Diagonal,
}

/// Default ridge per observation, applied on standardized features.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPolicy {
    mode: PolicyMode,
    dim: usize,
    /// Row-major `d x d` when `Full`, the diagonal when `Diagonal`.
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl QuadraticPolicy {
    pub fn identity(dim: usize, mode: PolicyMode) -> Self {
        let len = match mode {
            PolicyMode::Full => dim * dim,
            PolicyMode::Diagonal => dim,
        };
        Self { mode, dim, a: alloc::vec![0.0; len], b: alloc::vec![0.0; dim], c: 0.0 }
    }

    /// Full policy from a symmetric matrix (symmetrized on entry).
    pub fn full(a: &Matrix, b: &[f64], c: f64) -> Result<Self, Error> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
        }
        let mut flat = alloc::vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        Ok(Self { mode: PolicyMode::Full, dim: d, a: flat, b: b.to_vec(), c })
    }

    pub fn diagonal(a: &[f64], b: &[f64], c: f64) -> Result<Self, Error> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: b.len(), got: a.len() });
        }
        Ok(Self { mode: PolicyMode::Diagonal, dim: b.len(), a: a.to_vec(), b: b.to_vec(), c })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn a_entry(&self, i: usize, j: usize) -> f64 {
        match self.mode {
            PolicyMode::Full => self.a[i * self.dim + j],
            PolicyMode::Diagonal => {
                if i == j {
                    self.a[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// Diagonal of `A`.
    pub fn a_diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.a_entry(i, i)).collect()
    }

    pub fn a_matrix(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.a_entry(i, j))
    }

    pub fn is_identity(&self) -> bool {
        self.c == 0.0 && self.a.iter().all(|&v| v == 0.0) && self.b.iter().all(|&v| v == 0.0)
    }

    /// `out = A x`.
    pub fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.mode {
            PolicyMode::Full => {
                for i in 0..d {
                    let row = &self.a[i * d..(i + 1) * d];
                    out[i] = row.iter().zip(x).map(|(a, v)| a * v).sum();
                }
            }
            PolicyMode::Diagonal => {
                for i in 0..d {
                    out[i] = self.a[i] * x[i];
                }
            }
        }
    }

    /// `-log psi(x)`.
    pub fn neg_log(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = self.c;
        match self.mode {
            PolicyMode::Full => {
                for i in 0..d {
                    let row = &self.a[i * d..(i + 1) * d];
                    let ax: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
                    s += x[i] * (ax + self.b[i]);
                }
            }
            PolicyMode::Diagonal => {
                for i in 0..d {
                    s += x[i] * (self.a[i] * x[i] + self.b[i]);
                }
            }
        }
        s
    }

    pub fn log_psi(&self, x: &[f64]) -> f64 {
        -self.neg_log(x)
    }

    /// Writes `grad log psi(x) = -(2Ax + b)` and returns `log psi(x)`.
    pub fn log_psi_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.a_mul(x, grad);
        let mut s = self.c;
        for i in 0..self.dim {
            s += x[i] * (grad[i] + self.b[i]);
            grad[i] = -(2.0 * grad[i] + self.b[i]);
        }
        -s
    }

    pub fn grad_log_psi(&self, x: &[f64], grad: &mut [f64]) {
        self.log_psi_grad(x, grad);
    }

    /// `out += scale * grad log psi(x)` without scratch space.
    pub fn add_scaled_grad_log_psi(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let ax = match self.mode {
                PolicyMode::Full => self.a[i * d..(i + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum(),
                PolicyMode::Diagonal => self.a[i] * x[i],
            };
            out[i] -= scale * (2.0 * ax + self.b[i]);
        }
    }

    /// `-2A`.
    pub fn hess_log_psi(&self) -> Matrix {
        self.a_matrix() * -2.0
    }

    fn promoted(&self, mode: PolicyMode) -> Self {
        if self.mode == mode {
            return self.clone();
        }
        match mode {
            PolicyMode::Full => {
                let d = self.dim;
                let mut a = alloc::vec![0.0; d * d];
                for i in 0..d {
                    a[i * d + i] = self.a[i];
                }
                Self { mode, dim: d, a, b: self.b.clone(), c: self.c }
            }
            PolicyMode::Diagonal => panic!("full policies cannot be demoted"),
        }
    }

    /// Linear combination of coefficients; modes are promoted to `Full` if mixed.
    pub fn combine(terms: &[(f64, &QuadraticPolicy)]) -> Self {
        let first = terms[0].1;
        let mode = if terms.iter().all(|(_, p)| p.mode == PolicyMode::Diagonal) {
            PolicyMode::Diagonal
        } else {
            PolicyMode::Full
        };
        let mut out = Self::identity(first.dim, mode);
        for (w, p) in terms {
            assert_eq!(p.dim, first.dim, "policy dimensions differ");
            let p = p.promoted(mode);
            for (o, v) in out.a.iter_mut().zip(&p.a) {
                *o += w * v;
            }
            for (o, v) in out.b.iter_mut().zip(&p.b) {
                *o += w * v;
            }
            out.c += w * p.c;
        }
        out
    }

    /// `psi * other`, i.e. coefficient sums.
    pub fn multiply(&self, other: &QuadraticPolicy) -> Self {
        Self::combine(&[(1.0, self), (1.0, other)])
    }

    /// Flat parameter vector: `A` (upper triangle row by row, or diagonal), `b`, `c`.
    pub fn params(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(param_count(self.mode, d));
        match self.mode {
            PolicyMode::Full => {
                for i in 0..d {
                    for j in i..d {
                        out.push(self.a[i * d + j]);
                    }
                }
            }
            PolicyMode::Diagonal => out.extend_from_slice(&self.a),
        }
        out.extend_from_slice(&self.b);
        out.push(self.c);
        out
    }

    pub fn from_params(mode: PolicyMode, dim: usize, params: &[f64]) -> Result<Self, Error> {
        let n = param_count(mode, dim);
        if params.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: params.len() });
        }
        let mut p = Self::identity(dim, mode);
        let mut k = 0;
        match mode {
            PolicyMode::Full => {
                for i in 0..dim {
                    for j in i..dim {
                        p.a[i * dim + j] = params[k];
                        p.a[j * dim + i] = params[k];
                        k += 1;
                    }
                }
            }
            PolicyMode::Diagonal => {
                p.a.copy_from_slice(&params[..dim]);
                k = dim;
            }
        }
        p.b.copy_from_slice(&params[k..k + dim]);
        p.c = params[k + dim];
        Ok(p)
    }

    /// Raises the spectrum of `A` to at least `-1/(2h) + eps` with `eps = 1e-6/h`
    /// (plus `1e-12` times the spectral radius for full matrices), so that
    /// `I/h + 2A` stays positive definite. Returns whether anything changed.
    pub fn clamp_integrable(&mut self, h: f64) -> bool {
        let floor = -0.5 / h + 1e-6 / h;
        match self.mode {
            PolicyMode::Diagonal => {
                let mut changed = false;
                for a in self.a.iter_mut() {
                    if !(*a >= floor) {
                        *a = floor;
                        changed = true;
                    }
                }
                changed
            }
            PolicyMode::Full => {
                let d = self.dim;
                let m = self.a_matrix();
                let eig = m.clone().symmetric_eigen();
                // reconstruction below rounds at the scale of the largest eigenvalue
                let scale = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
                let floor = floor + 1e-12 * scale;
                if eig.eigenvalues.iter().all(|&v| v >= floor) {
                    return false;
                }
                let vals = eig.eigenvalues.map(|v| v.max(floor));
                let v = &eig.eigenvectors;
                let fixed = v * Matrix::from_diagonal(&vals) * v.transpose();
                for i in 0..d {
                    for j in 0..d {
                        self.a[i * d + j] = 0.5 * (fixed[(i, j)] + fixed[(j, i)]);
                    }
                }
                true
            }
        }
    }
}

pub fn param_count(mode: PolicyMode, dim: usize) -> usize {
    match mode {
        PolicyMode::Full => dim * (dim + 1) / 2 + dim + 1,
        PolicyMode::Diagonal => 2 * dim + 1,
    }
}

/// `2 psi_t - psi_{t-1}`.
pub fn warm_start(psi_t: &QuadraticPolicy, psi_prev: &QuadraticPolicy) -> QuadraticPolicy {
    QuadraticPolicy::combine(&[(2.0, psi_t), (-1.0, psi_prev)])
}

/// Least-squares fit of `log f(x) ~ -(x'Ax + x'b + c)` from points `xs`
/// (flat `N x d`) and log-values.
///
/// Features are centred and scaled per coordinate before solving the ridge
/// normal equations; `ridge` is per observation (the penalty is `ridge * N`
/// on every non-intercept coefficient in standardized units).
pub fn fit_quadratic(
    xs: &[f64],
    dim: usize,
    log_values: &[f64],
    mode: PolicyMode,
    ridge: f64,
) -> Result<QuadraticPolicy, Error> {
    let n = log_values.len();
    if xs.len() != n * dim {
        return Err(Error::DimensionMismatch { expected: n * dim, got: xs.len() });
    }
    let p = param_count(mode, dim);
    if n < p {
        return Err(Error::SingularDesign);
    }
    let mut mean = alloc::vec![0.0; dim];
    for row in xs.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = alloc::vec![0.0; dim];
    for row in xs.chunks(dim) {
        for j in 0..dim {
            sd[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
        }
    }
    for j in 0..dim {
        sd[j] = (sd[j] / n as f64).sqrt();
        if !(sd[j] > 1e-12 * (1.0 + mean[j].abs())) {
            return Err(Error::SingularDesign);
        }
    }

    let n_quad = p - dim - 1;
    let mut gram = alloc::vec![0.0; p * p];
    let mut rhs = alloc::vec![0.0; p];
    let mut f = alloc::vec![0.0; p];
    let mut z = alloc::vec![0.0; dim];
    for (row, &lv) in xs.chunks(dim).zip(log_values) {
        for j in 0..dim {
            z[j] = (row[j] - mean[j]) / sd[j];
        }
        let mut k = 0;
        match mode {
            PolicyMode::Full => {
                for i in 0..dim {
                    for j in i..dim {
                        f[k] = z[i] * z[j];
                        k += 1;
                    }
                }
            }
            PolicyMode::Diagonal => {
                for i in 0..dim {
                    f[k] = z[i] * z[i];
                    k += 1;
                }
            }
        }
        f[k..k + dim].copy_from_slice(&z);
        f[p - 1] = 1.0;
        let y = -lv;
        for i in 0..p {
            let fi = f[i];
            rhs[i] += fi * y;
            let gi = &mut gram[i * p..i * p + i + 1];
            for (g, fj) in gi.iter_mut().zip(&f[..=i]) {
                *g += fi * fj;
            }
        }
    }
    let lambda = ridge * n as f64;
    let g = DMatrix::from_fn(p, p, |i, j| {
        let v = if j <= i { gram[i * p + j] } else { gram[j * p + i] };
        if i == j && i < p - 1 {
            v + lambda
        } else {
            v
        }
    });
    let chol = nalgebra::Cholesky::new(g).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&DVector::from_vec(rhs));
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularDesign);
    }

    // coefficients in standardized coordinates
    let mut at = Matrix::zeros(dim, dim);
    let mut k = 0;
    match mode {
        PolicyMode::Full => {
            for i in 0..dim {
                for j in i..dim {
                    if i == j {
                        at[(i, i)] = beta[k];
                    } else {
                        at[(i, j)] = 0.5 * beta[k];
                        at[(j, i)] = 0.5 * beta[k];
                    }
                    k += 1;
                }
            }
        }
        PolicyMode::Diagonal => {
            for i in 0..dim {
                at[(i, i)] = beta[k];
                k += 1;
            }
        }
    }
    debug_assert_eq!(k, n_quad);
    let bt: Vec<f64> = (0..dim).map(|j| beta[n_quad + j]).collect();
    let ct = beta[p - 1];

    // back to original coordinates, z = D (x - m)
    let a = Matrix::from_fn(dim, dim, |i, j| at[(i, j)] / (sd[i] * sd[j]));
    let mut am = alloc::vec![0.0; dim];
    for i in 0..dim {
        am[i] = (0..dim).map(|j| a[(i, j)] * mean[j]).sum();
    }
    let b: Vec<f64> = (0..dim).map(|i| bt[i] / sd[i] - 2.0 * am[i]).collect();
    let c = ct + (0..dim).map(|i| mean[i] * am[i] - bt[i] * mean[i] / sd[i]).sum::<f64>();
    match mode {
        PolicyMode::Full => QuadraticPolicy::full(&a, &b, c),
        PolicyMode::Diagonal => QuadraticPolicy::diagonal(&a.diagonal().as_slice().to_vec(), &b, c),
    }
}

/// Policies `psi_0, ..., psi_T` with `psi_0` the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySequence {
    pub policies: Vec<QuadraticPolicy>,
}

impl PolicySequence {
    pub fn identity(steps: usize, dim: usize, mode: PolicyMode) -> Self {
        Self { policies: (0..=steps).map(|_| QuadraticPolicy::identity(dim, mode)).collect() }
    }

    pub fn steps(&self) -> usize {
        self.policies.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.policies[0].dim()
    }

    pub fn get(&self, t: usize) -> &QuadraticPolicy {
        &self.policies[t]
    }
}
