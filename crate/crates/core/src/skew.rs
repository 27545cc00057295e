//! Low-rank skew-symmetric generators `A = U·Vᵀ − V·Uᵀ`.

use crate::error::{mismatch, LocoError, Result};
use crate::matrix::{matmul_nt, rand_gaussian, Matrix};
use crate::rng::Rng;

/// Default standard deviation for the Gaussian factor at initialization.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// The learnable pair `(U, V)`, both `d×r`, of one rotation component.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSkewFactors {
    u: Matrix,
    v: Matrix,
}

impl LowRankSkewFactors {
    pub fn new(u: Matrix, v: Matrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(mismatch(format!(
                "U is {:?} but V is {:?}",
                u.shape(),
                v.shape()
            )));
        }
        let (d, r) = u.shape();
        if r == 0 || r > d {
            return Err(LocoError::InvalidRank { d, r });
        }
        Ok(Self { u, v })
    }

    pub fn zeros(d: usize, r: usize) -> Result<Self> {
        Self::new(Matrix::zeros(d, r), Matrix::zeros(d, r))
    }

    /// Both factors Gaussian with the given standard deviation.
    pub fn random(rng: &mut Rng, d: usize, r: usize, std: f64) -> Result<Self> {
        if r == 0 || r > d {
            return Err(LocoError::InvalidRank { d, r });
        }
        let u = rand_gaussian(rng, d, r, std);
        let v = rand_gaussian(rng, d, r, std);
        Self::new(u, v)
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.u, &mut self.v)
    }

    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim() * self.rank()
    }

    /// True when `A` vanishes identically because one factor is all zeros.
    pub fn is_trivial(&self) -> bool {
        self.u.as_slice().iter().all(|&x| x == 0.0) || self.v.as_slice().iter().all(|&x| x == 0.0)
    }

    /// Scales both factors by `c`, which scales `A` by `c²`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            u: self.u.scale(c),
            v: self.v.scale(c),
        }
    }

    /// `‖X‖_F`, which equals `‖Y‖_F` and `sqrt(‖U‖² + ‖V‖²)`.
    pub fn aux_norm(&self) -> f64 {
        let u = self.u.frobenius_norm();
        let v = self.v.frobenius_norm();
        (u * u + v * v).sqrt()
    }
}

/// Materializes `A = U·Vᵀ − V·Uᵀ`.
///
/// `M = U·Vᵀ` is formed once and `A[i][j] = M[i][j] − M[j][i]`, so the
/// result is antisymmetric bit for bit with an exactly zero diagonal.
pub fn build_skew(f: &LowRankSkewFactors) -> Result<Matrix> {
    let m = matmul_nt(f.u(), f.v())?;
    let d = f.dim();
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] = m[(i, j)] - m[(j, i)];
        }
    }
    Ok(a)
}

/// The auxiliary pair `X = [U | −V]`, `Y = [V | U]` with `X·Yᵀ = A`.
pub fn auxiliary_xy(f: &LowRankSkewFactors) -> Result<(Matrix, Matrix)> {
    let x = f.u().hcat(&f.v().scale(-1.0))?;
    let y = f.v().hcat(f.u())?;
    Ok((x, y))
}

/// Initial factors: `U ~ N(0, std²)`, `V = 0`, so `A = 0` and the rotation
/// starts at the identity while `∂L/∂V` is already nonzero.
pub fn init_factors(rng: &mut Rng, d: usize, r: usize, std: f64) -> Result<LowRankSkewFactors> {
    if r == 0 || r > d {
        return Err(LocoError::InvalidRank { d, r });
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(LocoError::InvalidArgument(format!("init std {std}")));
    }
    LowRankSkewFactors::new(rand_gaussian(rng, d, r, std), Matrix::zeros(d, r))
}
