//! Chains of low-rank rotations `R = R₁·R₂⋯Rₙ`.
//!
//! [`chain_exact`] composes the factors one after another and is exactly
//! orthogonal. [`chain_first_order`] keeps only the linear part of the
//! product, `R̃ = I + Σᵢ Δᵢ` with `Δᵢ = 2·Xᵢ(I − YᵢᵀXᵢ)⁻¹Yᵢᵀ`, so every
//! component is evaluated independently. For components of size
//! `‖Xᵢ‖_F = ‖Yᵢ‖_F = ε` each `Δᵢ` is `O(ε²)`, the dropped cross terms are
//! `O(ε⁴)`, and the orthogonality defect satisfies
//! `‖I − R̃ᵀR̃‖_F ≤ n(n−1)·γ²` with `γ = maxᵢ ‖Δᵢ‖_F`.

use rayon::prelude::*;

use crate::cayley::{apply_rotation, cayley_woodbury, TemperatureParam, WoodburyCore};
use crate::error::{mismatch, LocoError, Result};
use crate::matrix::{matmul_nt, matmul_tn, rand_gaussian, Matrix};
use crate::rng::Rng;
use crate::skew::LowRankSkewFactors;

/// Largest dimension for which [`deviation_report`] materializes `R̃`.
pub const DEVIATION_MAX_DIM: usize = 256;

/// Slack added to the deviation bound to absorb floating-point rounding.
pub const DEVIATION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChainMode {
    Exact,
    #[default]
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationChain {
    components: Vec<LowRankSkewFactors>,
    mode: ChainMode,
    temperature: TemperatureParam,
}

impl RotationChain {
    pub fn new(components: Vec<LowRankSkewFactors>, mode: ChainMode) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(LocoError::InvalidArgument(
                "a rotation chain needs at least one component".into(),
            ));
        };
        let d = first.dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != d) {
            return Err(mismatch(format!(
                "chain components disagree on dimension: {d} vs {}",
                bad.dim()
            )));
        }
        Ok(Self {
            components,
            mode,
            temperature: TemperatureParam::default(),
        })
    }

    pub fn with_temperature(mut self, t: TemperatureParam) -> Self {
        self.temperature = t;
        self
    }

    pub fn components(&self) -> &[LowRankSkewFactors] {
        &self.components
    }

    pub(crate) fn components_mut(&mut self) -> &mut [LowRankSkewFactors] {
        &mut self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mode(&self) -> ChainMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ChainMode) {
        self.mode = mode;
    }

    pub fn temperature(&self) -> TemperatureParam {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: TemperatureParam) {
        self.temperature = t;
    }

    /// Trainable parameters: `2·n·d·r` for uniform rank.
    pub fn param_count(&self) -> usize {
        self.components.iter().map(|c| c.param_count()).sum()
    }

    /// Woodbury cores of every component at the chain temperature.
    pub fn cores(&self) -> Result<Vec<WoodburyCore>> {
        self.components
            .iter()
            .map(|f| cayley_woodbury(f, self.temperature))
            .collect()
    }

    /// Rotates the rows of `xs` according to the chain's mode.
    pub fn apply(&self, xs: &Matrix) -> Result<Matrix> {
        match self.mode {
            ChainMode::Exact => chain_exact(self, xs),
            ChainMode::FirstOrder => chain_first_order(self, xs),
        }
    }
}

fn check_batch(c: &RotationChain, xs: &Matrix) -> Result<()> {
    if xs.cols() != c.dim() {
        return Err(mismatch(format!(
            "batch has {} columns, chain acts on dimension {}",
            xs.cols(),
            c.dim()
        )));
    }
    Ok(())
}

/// Exact composite: returns `xs·(R₁⋯Rₙ)ᵀ`. Under the row convention `Rₙ`
/// acts on the inputs first and `R₁` last.
pub fn chain_exact(c: &RotationChain, xs: &Matrix) -> Result<Matrix> {
    check_batch(c, xs)?;
    let cores = c.cores()?;
    let mut out = xs.clone();
    for core in cores.iter().rev() {
        out = apply_rotation(core, &out)?;
    }
    Ok(out)
}

/// Adds `Σᵢ (Rᵢ − I)` applied to the rows of `xs` into `out`.
///
/// Per-component coefficients are computed in parallel; the sum is formed
/// in component order, so the result does not depend on the thread count.
fn accumulate_first_order(c: &RotationChain, xs: &Matrix, out: &mut Matrix) -> Result<()> {
    let cores = c.cores()?;
    let coeffs: Vec<Option<Matrix>> = cores
        .par_iter()
        .map(|core| {
            if core.is_identity() {
                Ok(None)
            } else {
                core.batch_coefficients(xs).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    for (core, q) in cores.iter().zip(&coeffs) {
        if let Some(q) = q {
            out.add_product(1.0, q, &core.x().transpose())?;
        }
    }
    Ok(())
}

/// `R̃·x − x` for every row `x` of `xs`.
pub fn first_order_increment(c: &RotationChain, xs: &Matrix) -> Result<Matrix> {
    check_batch(c, xs)?;
    let mut acc = Matrix::zeros(xs.rows(), xs.cols());
    accumulate_first_order(c, xs, &mut acc)?;
    Ok(acc)
}

/// First-order composite `xs·R̃ᵀ` with `R̃ = I + Σᵢ Δᵢ`.
pub fn chain_first_order(c: &RotationChain, xs: &Matrix) -> Result<Matrix> {
    check_batch(c, xs)?;
    let mut out = xs.clone();
    accumulate_first_order(c, xs, &mut out)?;
    Ok(out)
}

/// Measured orthogonality defect of the first-order chain against the
/// bound `n(n−1)·γ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationReport {
    pub n: usize,
    /// `maxᵢ ‖Δᵢ‖_F`.
    pub gamma: f64,
    /// `‖I − R̃ᵀR̃‖_F`.
    pub deviation: f64,
    /// `n(n−1)·γ²`.
    pub bound: f64,
    pub satisfied: bool,
}

/// `Δᵢ = 2·X_t·K·Yᵀ` as a dense matrix.
fn dense_delta(core: &WoodburyCore) -> Result<Matrix> {
    let d = core.dim();
    if core.is_identity() {
        return Ok(Matrix::zeros(d, d));
    }
    let xk = crate::matrix::matmul(core.x(), core.core_inv())?;
    let mut delta = matmul_nt(&xk, core.y())?;
    delta.scale_in_place(2.0);
    Ok(delta)
}

pub fn deviation_report(c: &RotationChain) -> Result<DeviationReport> {
    let d = c.dim();
    if d > DEVIATION_MAX_DIM {
        return Err(LocoError::DimensionTooLarge {
            d,
            limit: DEVIATION_MAX_DIM,
        });
    }
    let mut approx = Matrix::identity(d);
    let mut gamma = 0.0f64;
    for core in c.cores()? {
        let delta = dense_delta(&core)?;
        gamma = gamma.max(delta.frobenius_norm());
        approx.axpy(1.0, &delta)?;
    }
    let gram = matmul_tn(&approx, &approx)?;
    let deviation = Matrix::identity(d).distance(&gram);
    let n = c.len();
    let bound = (n * (n - 1)) as f64 * gamma * gamma;
    Ok(DeviationReport {
        n,
        gamma,
        deviation,
        bound,
        satisfied: deviation <= bound + DEVIATION_SLACK,
    })
}

/// One point of the norm-preservation sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub eps: f64,
    pub mean_rel_error: f64,
    pub std_rel_error: f64,
}

/// Random chain whose components all satisfy `‖Xᵢ‖_F = ‖Yᵢ‖_F = eps`.
/// Directions come from `rng`; only the magnitude depends on `eps`.
pub fn random_chain_with_norm(
    rng: &mut Rng,
    d: usize,
    r: usize,
    n: usize,
    eps: f64,
    mode: ChainMode,
) -> Result<RotationChain> {
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let f = LowRankSkewFactors::random(rng, d, r, 1.0)?;
        let norm = f.aux_norm();
        comps.push(f.scaled(eps / norm));
    }
    RotationChain::new(comps, mode)
}

/// `|‖x‖ − ‖x + y‖| / ‖x‖` evaluated without cancellation: with
/// `‖x+y‖² − ‖x‖² = 2⟨x,y⟩ + ‖y‖²`, the difference of norms is that
/// quantity over `‖x+y‖ + ‖x‖`.
pub fn relative_norm_change(x: &[f64], y: &[f64]) -> f64 {
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let nx = xx.sqrt();
    let nz: f64 = x.iter().zip(y).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    if nx == 0.0 {
        return 0.0;
    }
    ((2.0 * xy + yy) / (nz + nx)).abs() / nx
}

/// Relative norm error `|‖x‖ − ‖R̃x‖| / ‖x‖` of the first-order chain over a
/// grid of magnitudes `ε = ‖Xᵢ‖_F = ‖Yᵢ‖_F`.
///
/// Trial `j` draws its directions from stream `j` of `seed`, and the same
/// directions are reused at every `ε`, so the curve varies only through the
/// magnitude. `eps = 0` gives zero error.
pub fn norm_error_sweep(
    seed: u64,
    d: usize,
    r: usize,
    n: usize,
    eps_grid: &[f64],
    trials: usize,
) -> Result<Vec<SweepPoint>> {
    if eps_grid.is_empty() {
        return Err(LocoError::InvalidGrid("empty epsilon grid".into()));
    }
    if let Some(bad) = eps_grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(LocoError::InvalidGrid(format!("epsilon {bad} is not a valid magnitude")));
    }
    if trials == 0 {
        return Err(LocoError::InvalidGrid("trials must be positive".into()));
    }
    if n == 0 {
        return Err(LocoError::InvalidArgument("chain length must be positive".into()));
    }
    if r == 0 || r > d {
        return Err(LocoError::InvalidRank { d, r });
    }

    let mut errors = vec![Vec::with_capacity(trials); eps_grid.len()];
    for trial in 0..trials {
        let mut rng = Rng::derive(seed, trial as u64);
        let base = random_chain_with_norm(&mut rng, d, r, n, 1.0, ChainMode::FirstOrder)?;
        let x = rand_gaussian(&mut rng, 1, d, 1.0);
        for (k, &eps) in eps_grid.iter().enumerate() {
            let comps = base.components().iter().map(|f| f.scaled(eps)).collect();
            let chain = RotationChain::new(comps, ChainMode::FirstOrder)?;
            let y = first_order_increment(&chain, &x)?;
            errors[k].push(relative_norm_change(x.as_slice(), y.as_slice()));
        }
    }

    Ok(eps_grid
        .iter()
        .zip(errors)
        .map(|(&eps, errs)| {
            let m = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / m;
            let std = if errs.len() > 1 {
                (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepPoint {
                eps,
                mean_rel_error: mean,
                std_rel_error: std,
            }
        })
        .collect())
}

/// `count` points log-spaced from `start` to `stop` inclusive.
pub fn logspace(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(start > 0.0 && stop > 0.0) || !start.is_finite() || !stop.is_finite() {
        return Err(LocoError::InvalidGrid(format!(
            "logspace({start}, {stop}, {count})"
        )));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let (a, b) = (start.log10(), stop.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

/// Least-squares slope of `log10(y)` against `log10(x)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.log10(), y.log10())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::{materialize, WoodburyCore};
    use crate::matrix::{matmul, orthogonality_residual};

    fn planar() -> LowRankSkewFactors {
        let u = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let v = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        LowRankSkewFactors::new(u, v).unwrap()
    }

    fn random_chain(rng: &mut Rng, d: usize, r: usize, n: usize, std: f64, mode: ChainMode) -> RotationChain {
        let comps = (0..n)
            .map(|_| LowRankSkewFactors::random(rng, d, r, std).unwrap())
            .collect();
        RotationChain::new(comps, mode).unwrap()
    }

    fn dense_product(cores: &[WoodburyCore]) -> Matrix {
        let d = cores[0].dim();
        cores
            .iter()
            .fold(Matrix::identity(d), |acc, c| matmul(&acc, &materialize(c)).unwrap())
    }

    #[test]
    fn single_component_matches_apply() {
        let mut rng = Rng::new(1);
        let c = random_chain(&mut rng, 12, 2, 1, 0.3, ChainMode::Exact);
        let xs = rand_gaussian(&mut rng, 5, 12, 1.0);
        let core = &c.cores().unwrap()[0];
        let direct = apply_rotation(core, &xs).unwrap();
        assert_eq!(chain_exact(&c, &xs).unwrap(), direct);
        let fo = chain_first_order(&c, &xs).unwrap();
        assert!(fo.distance(&direct) <= 1e-14 * direct.frobenius_norm());
    }

    #[test]
    fn zero_chain_is_identity() {
        let comps = vec![LowRankSkewFactors::zeros(6, 2).unwrap(); 3];
        let c = RotationChain::new(comps, ChainMode::Exact).unwrap();
        let xs = rand_gaussian(&mut Rng::new(2), 4, 6, 1.0);
        assert_eq!(chain_exact(&c, &xs).unwrap(), xs);
        assert_eq!(chain_first_order(&c, &xs).unwrap(), xs);
        let rep = deviation_report(&c).unwrap();
        assert_eq!((rep.deviation, rep.bound), (0.0, 0.0));
        assert!(rep.satisfied);
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let c = RotationChain::new(vec![planar(), planar()], ChainMode::Exact).unwrap();
        let e1 = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        let img = chain_exact(&c, &e1).unwrap();
        assert!(img.distance(&Matrix::from_rows(&[&[-1.0, 0.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn exact_matches_materialized_product_order() {
        let mut rng = Rng::new(3);
        let c = random_chain(&mut rng, 10, 2, 3, 0.4, ChainMode::Exact);
        let xs = rand_gaussian(&mut rng, 7, 10, 1.0);
        let r = dense_product(&c.cores().unwrap());
        let want = matmul_nt(&xs, &r).unwrap();
        let got = chain_exact(&c, &xs).unwrap();
        assert!(got.distance(&want) <= 1e-11 * want.frobenius_norm());
        assert!(orthogonality_residual(&r).unwrap() <= 1e-10 * 10.0);
        // Composing in the opposite order is measurably different.
        let rev: Vec<_> = c.cores().unwrap().into_iter().rev().collect();
        let wrong = matmul_nt(&xs, &dense_product(&rev)).unwrap();
        assert!(got.distance(&wrong) > 1e-6);
    }

    #[test]
    fn first_order_error_is_fourth_order() {
        // Oracle: exact chain. Threshold frozen from the measured value
        // (≈8e-10 for this seed) with headroom; ε⁴ = 1e-8.
        let mut rng = Rng::new(4);
        let c = random_chain_with_norm(&mut rng, 32, 2, 4, 1e-2, ChainMode::FirstOrder).unwrap();
        let xs = rand_gaussian(&mut rng, 8, 32, 1.0);
        let exact = chain_exact(&c, &xs).unwrap();
        let fo = chain_first_order(&c, &xs).unwrap();
        let rel = fo.distance(&exact) / exact.frobenius_norm();
        assert!(rel <= 1e-8, "relative gap {rel:e}");
        assert!(rel > 1e-14);
    }

    #[test]
    fn first_order_is_deterministic_across_pools() {
        let mut rng = Rng::new(5);
        let c = random_chain(&mut rng, 64, 4, 6, 0.1, ChainMode::FirstOrder);
        let xs = rand_gaussian(&mut rng, 300, 64, 1.0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(5).build().unwrap();
        let a = one.install(|| chain_first_order(&c, &xs).unwrap());
        let b = many.install(|| chain_first_order(&c, &xs).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn deviation_single_component() {
        let mut rng = Rng::new(6);
        let c = random_chain(&mut rng, 16, 2, 1, 0.5, ChainMode::FirstOrder);
        let rep = deviation_report(&c).unwrap();
        assert_eq!(rep.bound, 0.0);
        assert!(rep.deviation <= 1e-12);
        assert!(rep.satisfied);
    }

    #[test]
    fn deviation_bound_holds_near_gamma_tenth() {
        let mut rng = Rng::new(7);
        // ‖Δ‖_F ≈ 2‖A‖_F; choose ε so γ lands near 0.1.
        let c = random_chain_with_norm(&mut rng, 64, 2, 4, 0.25, ChainMode::FirstOrder).unwrap();
        let rep = deviation_report(&c).unwrap();
        assert!(rep.gamma > 0.03 && rep.gamma < 0.3, "gamma {}", rep.gamma);
        assert!(rep.satisfied, "{rep:?}");
        assert!(rep.deviation > 0.0);
    }

    #[test]
    fn deviation_rejects_large_dim() {
        let c = RotationChain::new(
            vec![LowRankSkewFactors::zeros(257, 1).unwrap()],
            ChainMode::FirstOrder,
        )
        .unwrap();
        assert!(matches!(
            deviation_report(&c),
            Err(LocoError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn chain_validation() {
        assert!(RotationChain::new(vec![], ChainMode::Exact).is_err());
        let mixed = vec![
            LowRankSkewFactors::zeros(4, 1).unwrap(),
            LowRankSkewFactors::zeros(5, 1).unwrap(),
        ];
        assert!(matches!(
            RotationChain::new(mixed, ChainMode::Exact),
            Err(LocoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sweep_edge_cases() {
        let pts = norm_error_sweep(1, 16, 2, 3, &[0.0], 4).unwrap();
        assert_eq!(pts[0].mean_rel_error, 0.0);
        assert!(matches!(
            norm_error_sweep(1, 16, 2, 3, &[], 4),
            Err(LocoError::InvalidGrid(_))
        ));
        assert!(matches!(
            norm_error_sweep(1, 16, 2, 3, &[-1e-3], 4),
            Err(LocoError::InvalidGrid(_))
        ));
        let pts = norm_error_sweep(1, 768, 4, 8, &[1e-6], 3).unwrap();
        assert!(pts[0].mean_rel_error < 1e-10);
    }

    #[test]
    fn relative_norm_change_matches_direct_formula() {
        let x = [3.0, 4.0];
        let y = [0.5, -1.0];
        let direct = ((3.5f64.powi(2) + 3.0f64.powi(2)).sqrt() - 5.0).abs() / 5.0;
        assert!((relative_norm_change(&x, &y) - direct).abs() < 1e-15);
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-6, 10f64.powf(-0.5), 20).unwrap();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-6).abs() < 1e-20);
        assert!((g[19] - 10f64.powf(-0.5)).abs() < 1e-15);
        assert_eq!(logspace(2.0, 3.0, 1).unwrap(), vec![2.0]);
        assert!(logspace(0.0, 1.0, 3).is_err());
    }
}
