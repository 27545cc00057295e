//! Multiplicative orthogonal adapter `f(x) = W₀·R·x` around a frozen weight.
//!
//! Training differentiates the first-order chain. With `Kᵢ = (I − YᵢᵀXᵢ)⁻¹`
//! each component contributes `Cᵢ = 2·XᵢKᵢYᵢᵀ`; for an upstream gradient `G`
//! (`N×k`) let `H = G·W₀` and `P = xs·Y`. Then, writing `X` for the
//! temperature-scaled factor,
//!
//! ```text
//! ∂Y = 2·xsᵀ·(H·X)·K + X·Wᵀ        W = Kᵀ·(2·(H·X)ᵀ·P)·Kᵀ
//! ∂X = 2·Hᵀ·P·Kᵀ    + Y·W
//! ```
//!
//! where the `W` terms come from `dK = K·(dYᵀ·X + Yᵀ·dX)·K`. The blocks of
//! `X = [U | −V]` and `Y = [V | U]` map these back to `∂U` and `∂V`.

use crate::cayley::{cayley_woodbury, right_multiply, TemperatureParam};
use crate::chain::{ChainMode, RotationChain};
use crate::error::{mismatch, LocoError, Result};
use crate::matrix::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::Rng;
use crate::skew::{init_factors, LowRankSkewFactors};

/// Largest dimension [`merge`] will fold into the weight.
pub const MERGE_MAX_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LocoAdapter {
    w0: Matrix,
    chain: RotationChain,
}

impl LocoAdapter {
    pub fn new(w0: Matrix, chain: RotationChain) -> Result<Self> {
        if w0.cols() != chain.dim() {
            return Err(mismatch(format!(
                "W₀ has {} columns but the chain acts on dimension {}",
                w0.cols(),
                chain.dim()
            )));
        }
        Ok(Self { w0, chain })
    }

    /// Fresh adapter with `n` identity-initialized components of rank `r`.
    pub fn init(rng: &mut Rng, w0: Matrix, r: usize, n: usize, std: f64) -> Result<Self> {
        let d = w0.cols();
        let comps = (0..n)
            .map(|_| init_factors(rng, d, r, std))
            .collect::<Result<Vec<_>>>()?;
        Self::new(w0, RotationChain::new(comps, ChainMode::FirstOrder)?)
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn chain(&self) -> &RotationChain {
        &self.chain
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn temperature(&self) -> TemperatureParam {
        self.chain.temperature()
    }

    pub fn set_temperature(&mut self, t: TemperatureParam) {
        self.chain.set_temperature(t);
    }

    pub fn mode(&self) -> ChainMode {
        self.chain.mode()
    }

    pub fn set_mode(&mut self, mode: ChainMode) {
        self.chain.set_mode(mode);
    }

    pub fn components(&self) -> &[LowRankSkewFactors] {
        self.chain.components()
    }
}

/// Per-component gradients, mirroring the factor shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradients {
    pub du: Vec<Matrix>,
    pub dv: Vec<Matrix>,
}

/// `xs·(W₀R)ᵀ`: rotate the rows of `xs`, then apply `W₀`.
pub fn forward(a: &LocoAdapter, xs: &Matrix) -> Result<Matrix> {
    let rotated = a.chain.apply(xs)?;
    matmul_nt(&rotated, &a.w0)
}

/// Plain pretrained map `xs·W₀ᵀ`.
pub fn pretrained_forward(w0: &Matrix, xs: &Matrix) -> Result<Matrix> {
    matmul_nt(xs, w0)
}

/// Gradients of a scalar loss with respect to every `(Uᵢ, Vᵢ)` given the
/// loss gradient `upstream` (`N×k`) at the first-order forward output.
pub fn backward(a: &LocoAdapter, xs: &Matrix, upstream: &Matrix) -> Result<FactorGradients> {
    if a.chain.mode() == ChainMode::Exact && a.chain.len() > 1 {
        return Err(LocoError::InvalidArgument(
            "backward differentiates the first-order chain; switch the mode to FirstOrder".into(),
        ));
    }
    let d = a.dim();
    if xs.cols() != d {
        return Err(mismatch(format!("batch has {} columns, adapter expects {d}", xs.cols())));
    }
    if upstream.shape() != (xs.rows(), a.out_dim()) {
        return Err(mismatch(format!(
            "upstream gradient is {:?}, expected {:?}",
            upstream.shape(),
            (xs.rows(), a.out_dim())
        )));
    }
    let t = a.temperature();
    let h = matmul(upstream, &a.w0)?;
    let mut du = Vec::with_capacity(a.chain.len());
    let mut dv = Vec::with_capacity(a.chain.len());
    for f in a.chain.components() {
        let r = f.rank();
        let core = cayley_woodbury(f, t)?;
        let (x, y, k) = (core.x(), core.y(), core.core_inv());
        let p = matmul(xs, y)?;
        let hx = matmul(&h, x)?;

        let mut gk = matmul_tn(&hx, &p)?;
        gk.scale_in_place(2.0);
        let kt = k.transpose();
        let w = matmul(&matmul(&kt, &gk)?, &kt)?;

        let mut dy = matmul_tn(xs, &matmul(&hx, k)?)?;
        dy.scale_in_place(2.0);
        dy.add_product(1.0, x, &w.transpose())?;

        let mut dx = matmul_tn(&h, &matmul(&p, &kt)?)?;
        dx.scale_in_place(2.0);
        dx.add_product(1.0, y, &w)?;
        dx.scale_in_place(t.value());

        // X = [U | −V], Y = [V | U]
        let g_u = dx.columns(0, r).add(&dy.columns(r, 2 * r))?;
        let g_v = dy.columns(0, r).sub(&dx.columns(r, 2 * r))?;
        du.push(g_u);
        dv.push(g_v);
    }
    Ok(FactorGradients { du, dv })
}

/// In-place gradient step `θ ← θ − lr·∂θ` on every factor; `W₀` is untouched.
pub fn sgd_step(a: &mut LocoAdapter, g: &FactorGradients, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(LocoError::InvalidArgument(format!("learning rate {lr}")));
    }
    let comps = a.chain.components_mut();
    if g.du.len() != comps.len() || g.dv.len() != comps.len() {
        return Err(mismatch("gradient count does not match chain length"));
    }
    for ((f, du), dv) in comps.iter_mut().zip(&g.du).zip(&g.dv) {
        let (u, v) = f.parts_mut();
        if du.shape() != u.shape() || dv.shape() != v.shape() {
            return Err(mismatch("gradient shape does not match factor shape"));
        }
        if lr == 0.0 {
            continue;
        }
        u.axpy(-lr, du)?;
        v.axpy(-lr, dv)?;
    }
    Ok(())
}

/// Folds the exact rotation into the weight: `W₀·R₁⋯Rₙ` at the current
/// temperature, computed as successive low-rank right-multiplications.
pub fn merge(a: &LocoAdapter) -> Result<Matrix> {
    let d = a.dim();
    if d > MERGE_MAX_DIM {
        return Err(LocoError::DimensionTooLarge {
            d,
            limit: MERGE_MAX_DIM,
        });
    }
    let mut w = a.w0.clone();
    for core in a.chain.cores()? {
        w = right_multiply(&core, &w)?;
    }
    Ok(w)
}

/// Mean squared error over all entries.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(mismatch("mse: shape mismatch"));
    }
    let n = pred.as_slice().len().max(1) as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// `∂mse/∂pred`.
pub fn mse_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    let n = pred.as_slice().len().max(1) as f64;
    let mut g = pred.sub(target)?;
    g.scale_in_place(2.0 / n);
    Ok(g)
}
