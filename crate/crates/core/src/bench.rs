//! Wall-time and allocation benchmarks of the LoCO paths and the baselines.
//!
//! Every method is checked against an oracle on the exact workload before it
//! is timed. Times are medians over `repeats` runs after `warmup` discarded
//! runs. Peak bytes come from the matrix allocation tracker, so they count
//! matrix storage only (GEMM packing scratch is not included).

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{householder_apply, oft_apply, BlockDiagonalRotation, HouseholderChain};
use crate::cayley::{apply_rotation, cayley_naive, cayley_woodbury};
use crate::chain::{chain_exact, ChainMode, RotationChain};
use crate::error::{LocoError, Result};
use crate::matrix::{matmul, matmul_nt, measure_allocations, rand_gaussian, AllocStats, Matrix};
use crate::rng::Rng;
use crate::skew::{auxiliary_xy, build_skew, LowRankSkewFactors};

/// Largest dimension the dense baseline paths will be asked to handle.
pub const DENSE_MAX_DIM: usize = 8192;

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "d",
    "r_or_b",
    "n",
    "batch",
    "wall_ns_median",
    "wall_ns_min",
    "wall_ns_max",
    "peak_bytes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMethod {
    /// Low-rank Woodbury path, never forms a `d×d` matrix.
    LocoWoodbury,
    /// Dense skew matrix, LU-based Cayley transform, dense multiply.
    LocoNaive,
    /// Block-diagonal Cayley rotation with block size `b`.
    OftBlock,
    /// `r` Householder reflections applied vector-wise.
    HouseholderSeq,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [
        BenchMethod::LocoWoodbury,
        BenchMethod::LocoNaive,
        BenchMethod::OftBlock,
        BenchMethod::HouseholderSeq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMethod::LocoWoodbury => "loco_woodbury",
            BenchMethod::LocoNaive => "loco_naive",
            BenchMethod::OftBlock => "oft_block",
            BenchMethod::HouseholderSeq => "householder_seq",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMethod {
    type Err = LocoError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LocoError::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: BenchMethod,
    pub d: usize,
    pub r_or_b: usize,
    pub n: usize,
    pub batch: usize,
    pub wall_ns_median: u64,
    pub wall_ns_min: u64,
    pub wall_ns_max: u64,
    /// Peak simultaneously live matrix bytes during one run.
    pub peak_bytes: usize,
    /// Largest single matrix allocation during one run.
    pub largest_alloc_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seed: u64,
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
    /// Use the global rayon pool and the first-order chain for the Woodbury
    /// path. Off by default: one thread, exact chain.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 64,
            repeats: 5,
            warmup: 2,
            parallel: false,
        }
    }
}

/// One benchmark cell: `r` is the rank, the block size or the reflector count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub method: BenchMethod,
    pub d: usize,
    pub r: usize,
    pub n: usize,
}

/// Rejects cases a method cannot run.
pub fn validate_case(c: &BenchCase) -> Result<()> {
    let unsupported = |why: String| Err(LocoError::ConfigUnsupported(why));
    if c.d == 0 || c.r == 0 || c.n == 0 {
        return unsupported(format!("{}: zero-sized case {:?}", c.method, c));
    }
    match c.method {
        BenchMethod::LocoWoodbury if c.r > c.d => unsupported(format!("rank {} exceeds d={}", c.r, c.d)),
        BenchMethod::LocoNaive if c.r > c.d => unsupported(format!("rank {} exceeds d={}", c.r, c.d)),
        BenchMethod::LocoNaive if c.d > DENSE_MAX_DIM => {
            unsupported(format!("dense path limited to d ≤ {DENSE_MAX_DIM}"))
        }
        BenchMethod::OftBlock if !c.d.is_multiple_of(c.r) => {
            unsupported(format!("block size {} does not divide d={}", c.r, c.d))
        }
        BenchMethod::OftBlock if c.r > DENSE_MAX_DIM => {
            unsupported(format!("block size limited to {DENSE_MAX_DIM}"))
        }
        _ => Ok(()),
    }
}

/// Runs every (method, d, r, n) combination. Baselines have no chain length
/// and are recorded once per (d, r) with `n = 1`.
pub fn run_grid(
    methods: &[BenchMethod],
    d_grid: &[usize],
    r_grid: &[usize],
    n_grid: &[usize],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>> {
    if methods.is_empty() || d_grid.is_empty() || r_grid.is_empty() || n_grid.is_empty() {
        return Err(LocoError::InvalidGrid("benchmark grids must be nonempty".into()));
    }
    if cfg.repeats < 5 || cfg.warmup < 2 || cfg.batch == 0 {
        return Err(LocoError::InvalidArgument(
            "benchmarks need repeats ≥ 5, warmup ≥ 2 and a nonempty batch".into(),
        ));
    }
    let mut cases = Vec::new();
    for &method in methods {
        for &d in d_grid {
            for &r in r_grid {
                let ns: &[usize] = match method {
                    BenchMethod::LocoWoodbury | BenchMethod::LocoNaive => n_grid,
                    _ => &[1],
                };
                for &n in ns {
                    let case = BenchCase { method, d, r, n };
                    validate_case(&case)?;
                    cases.push(case);
                }
            }
        }
    }
    let run = || cases.iter().map(|c| run_case(c, cfg)).collect();
    if cfg.parallel {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| LocoError::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)
    }
}

/// Seeded workload for one case.
enum Workload {
    Loco(RotationChain),
    Oft(BlockDiagonalRotation),
    Householder(HouseholderChain),
}

fn workload(c: &BenchCase, rng: &mut Rng, parallel: bool) -> Result<Workload> {
    let std = 1.0 / (c.d as f64).sqrt();
    Ok(match c.method {
        BenchMethod::LocoWoodbury | BenchMethod::LocoNaive => {
            let comps = (0..c.n)
                .map(|_| LowRankSkewFactors::random(rng, c.d, c.r, std))
                .collect::<Result<Vec<_>>>()?;
            let mode = if parallel && c.method == BenchMethod::LocoWoodbury {
                ChainMode::FirstOrder
            } else {
                ChainMode::Exact
            };
            Workload::Loco(RotationChain::new(comps, mode)?)
        }
        BenchMethod::OftBlock => Workload::Oft(BlockDiagonalRotation::random(rng, c.d, c.r, 0.5)?),
        BenchMethod::HouseholderSeq => Workload::Householder(HouseholderChain::random(rng, c.d, c.r)?),
    })
}

fn execute(method: BenchMethod, w: &Workload, xs: &Matrix) -> Result<Matrix> {
    match (method, w) {
        (BenchMethod::LocoWoodbury, Workload::Loco(chain)) => chain.apply(xs),
        (BenchMethod::LocoNaive, Workload::Loco(chain)) => naive_chain_apply(chain, xs),
        (BenchMethod::OftBlock, Workload::Oft(rot)) => oft_apply(rot, xs),
        (BenchMethod::HouseholderSeq, Workload::Householder(h)) => householder_apply(h, xs),
        _ => unreachable!("workload built for a different method"),
    }
}

/// The weight-centric reference: materialize each `Rᵢ` densely via an LU
/// solve and multiply, `Rₙ` first to match the exact chain.
pub fn naive_chain_apply(chain: &RotationChain, xs: &Matrix) -> Result<Matrix> {
    let t = chain.temperature().value();
    let mut cur = xs.clone();
    for f in chain.components().iter().rev() {
        let mut a = build_skew(f)?;
        a.scale_in_place(t);
        let r = cayley_naive(&a)?;
        cur = matmul_nt(&cur, &r)?;
    }
    Ok(cur)
}

/// `‖(I − A)y − (I + A)x‖_F / ‖x‖_F` with `A·v` evaluated through the factors.
fn cayley_residual(f: &LowRankSkewFactors, t: f64, x: &Matrix, y: &Matrix) -> Result<f64> {
    let (xx, yy) = auxiliary_xy(f)?;
    // Rows: v·Aᵀ = v·Y·Xᵀ
    let a_rows = |v: &Matrix| -> Result<Matrix> { matmul_nt(&matmul(v, &yy)?, &xx.scale(t)) };
    let lhs = y.sub(&a_rows(y)?)?;
    let rhs = x.add(&a_rows(x)?)?;
    Ok(lhs.distance(&rhs) / x.frobenius_norm().max(f64::MIN_POSITIVE))
}

/// Oracle check of one method's output on the benchmark workload.
fn verify(c: &BenchCase, w: &Workload, xs: &Matrix, out: &Matrix) -> Result<()> {
    let tol = 1e-10 * c.d as f64;
    let fail = |what: &str, err: f64| {
        Err(LocoError::InvalidArgument(format!(
            "{} d={} r={} n={}: {what} error {err:e} exceeds {tol:e}",
            c.method, c.d, c.r, c.n
        )))
    };
    match w {
        Workload::Loco(chain) => {
            let t = chain.temperature();
            // Each component's Woodbury apply solves its own Cayley system.
            for f in chain.components() {
                let y = apply_rotation(&cayley_woodbury(f, t)?, xs)?;
                let e = cayley_residual(f, t.value(), xs, &y)?;
                if e > tol {
                    return fail("Cayley residual", e);
                }
            }
            let want = match (c.method, chain.mode()) {
                (BenchMethod::LocoNaive, _) | (_, ChainMode::Exact) => chain_exact(chain, xs)?,
                (_, ChainMode::FirstOrder) => crate::chain::chain_first_order(chain, xs)?,
            };
            let e = out.distance(&want) / want.frobenius_norm().max(f64::MIN_POSITIVE);
            if e > tol {
                return fail("chain output", e);
            }
        }
        Workload::Oft(rot) => {
            let b = rot.block_size();
            for blk in 0..rot.dim() / b {
                let a = rot.block_skew(blk);
                let xb = xs.columns(blk * b, (blk + 1) * b);
                let yb = out.columns(blk * b, (blk + 1) * b);
                // Rows: (I − A)y = (I + A)x  ⇔  y − y·Aᵀ = x + x·Aᵀ
                let lhs = yb.sub(&matmul_nt(&yb, &a)?)?;
                let rhs = xb.add(&matmul_nt(&xb, &a)?)?;
                let e = lhs.distance(&rhs) / xb.frobenius_norm().max(f64::MIN_POSITIVE);
                if e > tol {
                    return fail("block Cayley residual", e);
                }
            }
        }
        Workload::Householder(h) => {
            let mut rev = h.reflectors().to_vec();
            rev.reverse();
            let back = householder_apply(&HouseholderChain::new(rev)?, out)?;
            let e = back.distance(xs) / xs.frobenius_norm();
            if e > tol {
                return fail("inverse round trip", e);
            }
        }
    }
    Ok(())
}

/// Verifies, warms up and times one case in the current thread pool.
pub fn run_case(c: &BenchCase, cfg: &BenchConfig) -> Result<BenchRecord> {
    validate_case(c)?;
    let mut rng = Rng::derive(cfg.seed, (c.d as u64) << 32 ^ (c.r as u64) << 16 ^ c.n as u64);
    let w = workload(c, &mut rng, cfg.parallel)?;
    let xs = rand_gaussian(&mut rng, cfg.batch, c.d, 1.0);

    let (out, stats) = measure_allocations(|| execute(c.method, &w, &xs));
    verify(c, &w, &xs, &out?)?;
    for _ in 1..cfg.warmup {
        execute(c.method, &w, &xs)?;
    }
    let mut times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let out = execute(c.method, &w, &xs)?;
        let ns = start.elapsed().as_nanos();
        std::hint::black_box(out);
        times.push(u64::try_from(ns).unwrap_or(u64::MAX).max(1));
    }
    times.sort_unstable();
    let AllocStats {
        peak_bytes,
        largest_bytes,
        ..
    } = stats;
    Ok(BenchRecord {
        method: c.method,
        d: c.d,
        r_or_b: c.r,
        n: c.n,
        batch: cfg.batch,
        wall_ns_median: median(&times),
        wall_ns_min: times[0],
        wall_ns_max: *times.last().unwrap(),
        peak_bytes,
        largest_alloc_bytes: largest_bytes,
    })
}

fn median(sorted: &[u64]) -> u64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        sorted[m - 1] / 2 + sorted[m] / 2 + (sorted[m - 1] % 2 + sorted[m] % 2) / 2
    }
}

/// Writes the records as CSV with the fixed header and LF line endings.
pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let csv_err = |e: csv::Error| LocoError::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.method.to_string(),
            r.d.to_string(),
            r.r_or_b.to_string(),
            r.n.to_string(),
            r.batch.to_string(),
            r.wall_ns_median.to_string(),
            r.wall_ns_min.to_string(),
            r.wall_ns_max.to_string(),
            r.peak_bytes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
