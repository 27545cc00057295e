//! Cayley map from skew-symmetric generators to proper rotations.
//!
//! Two routes to `R = (I − A)⁻¹(I + A)`:
//!
//! * [`cayley_naive`] factors the dense `d×d` matrix `I − A` (`O(d³)`), used
//!   as the oracle and as the dense baseline in benchmarks.
//! * [`cayley_woodbury`] uses `A = X·Yᵀ` with `X, Y ∈ ℝ^{d×2r}` and the
//!   Woodbury identity to get `R = I + 2·X·(I − YᵀX)⁻¹·Yᵀ`. Only the
//!   `2r×2r` core is inverted and nothing `d×d` is ever formed.
//!
//! Inputs are stored as rows, so applying `R` to a batch `xs` (`N×d`)
//! computes `xs·Rᵀ`: row `i` of the output is `R` times row `i` of `xs`.

use crate::error::{mismatch, LocoError, Result};
use crate::matrix::{lu_invert, matmul, matmul_nt, Lu, Matrix};
use crate::skew::{auxiliary_xy, LowRankSkewFactors};

/// Skew residual tolerance accepted by [`cayley_naive`], relative to the
/// largest entry (floored at 1).
pub const SKEW_TOL: f64 = 1e-12;

/// Scalar multiplier on the generator: `R(t) = (I − tA)⁻¹(I + tA)`.
/// `t = 0` is the identity (pretrained behavior), `t = 1` the trained rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureParam(f64);

impl TemperatureParam {
    pub fn new(t: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(LocoError::InvalidArgument(format!("temperature {t}")));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for TemperatureParam {
    fn default() -> Self {
        Self(1.0)
    }
}

/// `max |a_ij + a_ji|`.
pub fn skew_residual(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] + a[(j, i)]).abs());
        }
    }
    worst
}

/// Dense Cayley transform `(I − A)⁻¹(I + A)` via LU with partial pivoting.
pub fn cayley_naive(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(mismatch(format!(
            "cayley_naive needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let residual = skew_residual(a);
    if residual > SKEW_TOL * a.max_abs().max(1.0) {
        return Err(LocoError::NotSkew { residual });
    }
    let n = a.rows();
    let eye = Matrix::identity(n);
    let lhs = eye.sub(a)?;
    let rhs = eye.add(a)?;
    drop(eye);
    Lu::factor(&lhs)?.solve(&rhs)
}

/// Precomputed Woodbury form of one rotation at a fixed temperature.
///
/// Holds `X_t = t·X`, `Y` and `K = (I₂ᵣ − Yᵀ·X_t)⁻¹`, so that
/// `R = I + 2·X_t·K·Yᵀ`. Immutable once built; applying it never allocates
/// anything larger than the batch.
#[derive(Debug, Clone)]
pub struct WoodburyCore {
    x: Matrix,
    y: Matrix,
    core_inv: Matrix,
    x_t: Matrix,
    core_inv_t: Matrix,
    temperature: f64,
    identity: bool,
}

impl WoodburyCore {
    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    /// `t·X` (`d×2r`).
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    /// `(I₂ᵣ − Yᵀ·X_t)⁻¹`.
    pub fn core_inv(&self) -> &Matrix {
        &self.core_inv
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// True when the core represents exactly `R = I` (zero temperature or
    /// a vanishing generator).
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `‖K·(I − YᵀX_t) − I‖_F`.
    pub fn core_residual(&self) -> Result<f64> {
        let two_r = self.core_inv.rows();
        let c = Matrix::identity(two_r).sub(&matmul(&self.y.transpose(), &self.x)?)?;
        Ok(matmul(&self.core_inv, &c)?.distance(&Matrix::identity(two_r)))
    }

    /// `2·(xs·Y)·Kᵀ`, the `N×2r` coefficients of the low-rank update of a
    /// batch. The update itself is `coeffs · X_tᵀ`.
    pub(crate) fn batch_coefficients(&self, xs: &Matrix) -> Result<Matrix> {
        let p = matmul(xs, &self.y)?;
        let mut q = matmul(&p, &self.core_inv_t)?;
        q.scale_in_place(2.0);
        Ok(q)
    }

    /// `out += (R − I)` applied to the rows of `xs`.
    pub(crate) fn accumulate_increment(&self, xs: &Matrix, out: &mut Matrix) -> Result<()> {
        if self.identity {
            return Ok(());
        }
        let q = self.batch_coefficients(xs)?;
        out.add_product(1.0, &q, &self.x_t)
    }
}

/// Builds the Woodbury core for `R(t)` from low-rank factors in
/// `O(d·r² + r³)`; temperature enters by scaling `X`.
pub fn cayley_woodbury(f: &LowRankSkewFactors, t: TemperatureParam) -> Result<WoodburyCore> {
    let (x, y) = auxiliary_xy(f)?;
    let t = t.value();
    let x = x.scale(t);
    let two_r = x.cols();
    // A vanishing generator still gets its true K: gradients need it.
    let identity = t == 0.0 || f.is_trivial();
    let core_inv = if t == 0.0 {
        Matrix::identity(two_r)
    } else {
        let ytx = matmul(&y.transpose(), &x)?;
        lu_invert(&Matrix::identity(two_r).sub(&ytx)?)?
    };
    let x_t = x.transpose();
    let core_inv_t = core_inv.transpose();
    Ok(WoodburyCore {
        x,
        y,
        core_inv,
        x_t,
        core_inv_t,
        temperature: t,
        identity,
    })
}

/// Rotates every row of `xs` (`N×d`): returns `xs·Rᵀ` in `O(N·d·r)`.
pub fn apply_rotation(core: &WoodburyCore, xs: &Matrix) -> Result<Matrix> {
    if xs.cols() != core.dim() {
        return Err(mismatch(format!(
            "apply_rotation: batch has {} columns, rotation acts on {}",
            xs.cols(),
            core.dim()
        )));
    }
    let mut out = xs.clone();
    core.accumulate_increment(xs, &mut out)?;
    Ok(out)
}

/// `m·R` for a `k×d` matrix `m`, again without forming `R`.
pub fn right_multiply(core: &WoodburyCore, m: &Matrix) -> Result<Matrix> {
    if m.cols() != core.dim() {
        return Err(mismatch(format!(
            "right_multiply: {} columns vs dimension {}",
            m.cols(),
            core.dim()
        )));
    }
    let mut out = m.clone();
    if core.identity {
        return Ok(out);
    }
    let mx = matmul(m, &core.x)?;
    let mut coeffs = matmul(&mx, &core.core_inv)?;
    coeffs.scale_in_place(2.0);
    out.add_product(1.0, &coeffs, &core.y.transpose())?;
    Ok(out)
}

/// Explicit `R = I + 2·X_t·K·Yᵀ`. Test and debugging aid only.
pub fn materialize(core: &WoodburyCore) -> Matrix {
    let d = core.dim();
    let mut r = Matrix::identity(d);
    if core.identity {
        return r;
    }
    let xk = matmul(&core.x, &core.core_inv).expect("core shapes are consistent");
    let delta = matmul_nt(&xk, &core.y).expect("core shapes are consistent");
    r.axpy(2.0, &delta).expect("same shape");
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{lu_det, orthogonality_residual, rand_gaussian};
    use crate::rng::Rng;
    use crate::skew::build_skew;

    fn t(v: f64) -> TemperatureParam {
        TemperatureParam::new(v).unwrap()
    }

    fn planar() -> LowRankSkewFactors {
        let u = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let v = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        LowRankSkewFactors::new(u, v).unwrap()
    }

    fn quarter_turn() -> Matrix {
        Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap()
    }

    fn random_skew(rng: &mut Rng, d: usize) -> Matrix {
        let g = rand_gaussian(rng, d, d, 1.0);
        g.sub(&g.transpose()).unwrap()
    }

    #[test]
    fn naive_zero_is_identity() {
        assert_eq!(cayley_naive(&Matrix::zeros(4, 4)).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn naive_quarter_turn() {
        // (I − A)⁻¹ = ½[[1,1],[−1,1]], times (I + A) = [[1,1],[−1,1]].
        let r = cayley_naive(&quarter_turn()).unwrap();
        assert!(r.distance(&quarter_turn()) < 1e-15);
    }

    #[test]
    fn naive_random_is_proper_rotation() {
        let mut rng = Rng::new(3);
        let a = random_skew(&mut rng, 8);
        let r = cayley_naive(&a).unwrap();
        assert!(orthogonality_residual(&r).unwrap() <= 1e-11);
        assert!((lu_det(&r).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn naive_rejects_non_skew() {
        let m = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(matches!(cayley_naive(&m), Err(LocoError::NotSkew { .. })));
        assert!(matches!(
            cayley_naive(&Matrix::zeros(2, 3)),
            Err(LocoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn woodbury_planar_example() {
        let core = cayley_woodbury(&planar(), t(1.0)).unwrap();
        let r = materialize(&core);
        assert!(r.distance(&quarter_turn()) < 1e-15);
        // Row convention: the image of e₁ is the first column of R.
        let e1 = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        let img = apply_rotation(&core, &e1).unwrap();
        assert!(img.distance(&Matrix::from_rows(&[&[0.0, -1.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn zero_temperature_is_identity() {
        let mut rng = Rng::new(4);
        let f = LowRankSkewFactors::random(&mut rng, 6, 2, 1.0).unwrap();
        let core = cayley_woodbury(&f, t(0.0)).unwrap();
        assert!(core.is_identity());
        let xs = rand_gaussian(&mut rng, 3, 6, 1.0);
        assert_eq!(apply_rotation(&core, &xs).unwrap(), xs);
        assert_eq!(materialize(&core), Matrix::identity(6));
        let zero = cayley_woodbury(&LowRankSkewFactors::zeros(5, 2).unwrap(), t(1.0)).unwrap();
        assert_eq!(materialize(&zero), Matrix::identity(5));
    }

    #[test]
    fn woodbury_matches_naive_d64() {
        let mut rng = Rng::new(5);
        let f = LowRankSkewFactors::random(&mut rng, 64, 4, 0.3).unwrap();
        let core = cayley_woodbury(&f, t(1.0)).unwrap();
        let naive = cayley_naive(&build_skew(&f).unwrap()).unwrap();
        assert!(materialize(&core).distance(&naive) <= 1e-10 * 64.0);
        assert!(core.core_residual().unwrap() <= 1e-10);
    }

    #[test]
    fn apply_matches_materialized() {
        let mut rng = Rng::new(6);
        let f = LowRankSkewFactors::random(&mut rng, 64, 4, 0.3).unwrap();
        let core = cayley_woodbury(&f, t(1.0)).unwrap();
        let xs = rand_gaussian(&mut rng, 32, 64, 1.0);
        let fast = apply_rotation(&core, &xs).unwrap();
        let slow = matmul_nt(&xs, &materialize(&core)).unwrap();
        assert!(fast.distance(&slow) <= 1e-12 * slow.frobenius_norm());
        for i in 0..xs.rows() {
            let n0: f64 = xs.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = fast.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() <= 1e-10 * n0);
        }
    }

    #[test]
    fn right_multiply_matches_materialized() {
        let mut rng = Rng::new(7);
        let f = LowRankSkewFactors::random(&mut rng, 20, 2, 0.5).unwrap();
        let core = cayley_woodbury(&f, t(0.7)).unwrap();
        let w = rand_gaussian(&mut rng, 5, 20, 1.0);
        let fast = right_multiply(&core, &w).unwrap();
        let slow = matmul(&w, &materialize(&core)).unwrap();
        assert!(fast.distance(&slow) <= 1e-12 * slow.frobenius_norm());
    }

    #[test]
    fn apply_dimension_mismatch() {
        let core = cayley_woodbury(&planar(), t(1.0)).unwrap();
        assert!(matches!(
            apply_rotation(&core, &Matrix::zeros(2, 3)),
            Err(LocoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn temperature_continuity() {
        let mut rng = Rng::new(8);
        let f = LowRankSkewFactors::random(&mut rng, 16, 2, 0.1).unwrap();
        let a_norm = build_skew(&f).unwrap().frobenius_norm();
        assert!(a_norm <= 1.0);
        let r1 = materialize(&cayley_woodbury(&f, t(1.0)).unwrap());
        let r2 = materialize(&cayley_woodbury(&f, t(1.01)).unwrap());
        assert!(r1.distance(&r2) <= 0.1 * a_norm);
    }

    #[test]
    fn agrees_with_exponential_to_third_order() {
        // (I − A)⁻¹(I + A) = I + 2A + 2A² + 2A³ + …, while
        // exp(2A) = I + 2A + 2A² + (4/3)A³ + …, so they differ by ≈ (2/3)A³.
        let mut rng = Rng::new(9);
        let g = random_skew(&mut rng, 10);
        let a = g.scale(0.1 / g.frobenius_norm());
        let two_a = a.scale(2.0);
        let mut term = Matrix::identity(10);
        let mut exp = Matrix::identity(10);
        for k in 1..30 {
            term = matmul(&term, &two_a).unwrap().scale(1.0 / k as f64);
            exp = exp.add(&term).unwrap();
        }
        let r = cayley_naive(&a).unwrap();
        let gap = r.distance(&exp);
        let norm = a.frobenius_norm();
        assert!(gap <= norm.powi(3), "gap {gap:e}");
        assert!(gap >= 1e-3 * norm.powi(3));
    }
}
