//! Rotation recovery: a small least-squares task with a known answer.
//!
//! A hidden rotation `R*` is drawn by passing random skew factors through
//! the exact Cayley chain. Data are `ys = xs·(W₀R*)ᵀ` and a fresh adapter
//! around the same `W₀` is trained by SGD on the mean squared error.

use crate::adapter::{backward, forward, mse, mse_grad, pretrained_forward, sgd_step, LocoAdapter};
use crate::cayley::TemperatureParam;
use crate::chain::{relative_norm_change, ChainMode, RotationChain};
use crate::error::{LocoError, Result};
use crate::matrix::{matmul_nt, rand_gaussian, Matrix};
use crate::rng::Rng;
use crate::skew::LowRankSkewFactors;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Entry std of the hidden target factors. Zero gives `R* = I`.
    pub target_std: f64,
    /// Entry std of the trainable `U` at initialization (`V` starts at 0).
    pub init_std: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 16,
            d: 32,
            r: 2,
            n: 2,
            steps: 2000,
            lr: 2.0,
            batch: 128,
            target_std: 0.1,
            init_std: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryRun {
    /// Loss before each step, then the final loss: `steps + 1` entries.
    pub losses: Vec<f64>,
    pub adapter: LocoAdapter,
    pub target: RotationChain,
    pub xs: Matrix,
    pub ys: Matrix,
    /// Loss of the bare pretrained map on the task.
    pub pretrained_loss: f64,
}

impl RecoveryRun {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

pub fn rotation_recovery_demo(cfg: &RecoveryConfig) -> Result<RecoveryRun> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(LocoError::InvalidArgument(format!("learning rate {}", cfg.lr)));
    }
    if cfg.k == 0 || cfg.batch == 0 || cfg.n == 0 {
        return Err(LocoError::InvalidArgument("k, n and batch must be positive".into()));
    }
    let mut w_rng = Rng::derive(cfg.seed, 0);
    let mut t_rng = Rng::derive(cfg.seed, 1);
    let mut x_rng = Rng::derive(cfg.seed, 2);
    let mut a_rng = Rng::derive(cfg.seed, 3);

    let w0 = rand_gaussian(&mut w_rng, cfg.k, cfg.d, 1.0 / (cfg.d as f64).sqrt());
    let target_comps = (0..cfg.n)
        .map(|_| LowRankSkewFactors::random(&mut t_rng, cfg.d, cfg.r, cfg.target_std))
        .collect::<Result<Vec<_>>>()?;
    let target = RotationChain::new(target_comps, ChainMode::Exact)?;
    let xs = rand_gaussian(&mut x_rng, cfg.batch, cfg.d, 1.0);
    let ys = matmul_nt(&target.apply(&xs)?, &w0)?;
    let pretrained_loss = mse(&pretrained_forward(&w0, &xs)?, &ys)?;

    let mut adapter = LocoAdapter::init(&mut a_rng, w0, cfg.r, cfg.n, cfg.init_std)?;
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let out = forward(&adapter, &xs)?;
        losses.push(mse(&out, &ys)?);
        let g = backward(&adapter, &xs, &mse_grad(&out, &ys)?)?;
        sgd_step(&mut adapter, &g, cfg.lr)?;
    }
    losses.push(mse(&forward(&adapter, &xs)?, &ys)?);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(LocoError::NonFinite("rotation recovery loss"));
    }
    Ok(RecoveryRun {
        losses,
        adapter,
        target,
        xs,
        ys,
        pretrained_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperaturePoint {
    pub t: f64,
    pub loss: f64,
    /// Largest relative change of a row norm under the rotation.
    pub norm_dev: f64,
}

/// Evaluates the adapter at each temperature in `ts` using `mode`.
pub fn temperature_sweep(
    adapter: &LocoAdapter,
    xs: &Matrix,
    ys: &Matrix,
    ts: &[f64],
    mode: ChainMode,
) -> Result<Vec<TemperaturePoint>> {
    let mut a = adapter.clone();
    a.set_mode(mode);
    ts.iter()
        .map(|&t| {
            a.set_temperature(TemperatureParam::new(t)?);
            let rotated = a.chain().apply(xs)?;
            let norm_dev = (0..xs.rows())
                .map(|i| {
                    let x = xs.row(i);
                    let y: Vec<f64> = rotated.row(i).iter().zip(x).map(|(r, x)| r - x).collect();
                    relative_norm_change(x, &y)
                })
                .fold(0.0, f64::max);
            let loss = mse(&matmul_nt(&rotated, a.w0())?, ys)?;
            Ok(TemperaturePoint { t, loss, norm_dev })
        })
        .collect()
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(LocoError::InvalidGrid(format!("{start}:{stop}:{count}")));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let h = (stop - start) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i == count - 1 { stop } else { start + h * i as f64 })
        .collect())
}
