//! Reference orthogonal parameterizations: block-diagonal Cayley rotations
//! (OFT) and products of Householder reflections (HRA).

use rayon::prelude::*;

use crate::cayley::cayley_naive;
use crate::error::{mismatch, LocoError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// `d/b` independent `b×b` Cayley rotations on consecutive coordinate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonalRotation {
    d: usize,
    b: usize,
    /// Strict lower triangle of each block's skew matrix, row by row.
    blocks: Vec<Vec<f64>>,
}

impl BlockDiagonalRotation {
    pub fn new(d: usize, b: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if b == 0 || !d.is_multiple_of(b) {
            return Err(LocoError::BlockMismatch { d, b });
        }
        let per = b * (b - 1) / 2;
        if blocks.len() != d / b || blocks.iter().any(|p| p.len() != per) {
            return Err(mismatch(format!(
                "expected {} blocks of {per} parameters",
                d / b
            )));
        }
        if blocks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LocoError::NonFinite("block parameters"));
        }
        Ok(Self { d, b, blocks })
    }

    pub fn zeros(d: usize, b: usize) -> Result<Self> {
        if b == 0 || !d.is_multiple_of(b) {
            return Err(LocoError::BlockMismatch { d, b });
        }
        Self::new(d, b, vec![vec![0.0; b * (b - 1) / 2]; d / b])
    }

    pub fn random(rng: &mut Rng, d: usize, b: usize, std: f64) -> Result<Self> {
        let mut s = Self::zeros(d, b)?;
        for v in s.blocks.iter_mut().flatten() {
            *v = std * rng.next_gaussian();
        }
        Ok(s)
    }

    /// Keeps the diagonal `b×b` blocks of a skew matrix and drops the rest.
    pub fn from_skew(a: &Matrix, b: usize) -> Result<Self> {
        if !a.is_square() {
            return Err(mismatch("from_skew: matrix is not square"));
        }
        let d = a.rows();
        if b == 0 || !d.is_multiple_of(b) {
            return Err(LocoError::BlockMismatch { d, b });
        }
        let blocks = (0..d / b)
            .map(|blk| {
                let o = blk * b;
                (1..b)
                    .flat_map(|i| (0..i).map(move |j| (i, j)))
                    .map(|(i, j)| a[(o + i, o + j)])
                    .collect()
            })
            .collect();
        Self::new(d, b, blocks)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    /// `d·(b−1)/2`: `d/b` blocks of `b(b−1)/2` free entries.
    pub fn param_count(&self) -> usize {
        self.d * (self.b - 1) / 2
    }

    /// The skew matrix of block `idx`.
    pub fn block_skew(&self, idx: usize) -> Matrix {
        let b = self.b;
        let mut a = Matrix::zeros(b, b);
        let mut it = self.blocks[idx].iter();
        for i in 1..b {
            for j in 0..i {
                let v = *it.next().unwrap();
                a[(i, j)] = v;
                a[(j, i)] = -v;
            }
        }
        a
    }

    /// Cayley rotation of every block.
    pub fn block_rotations(&self) -> Result<Vec<Matrix>> {
        (0..self.blocks.len())
            .into_par_iter()
            .map(|i| cayley_naive(&self.block_skew(i)))
            .collect()
    }

    /// The dense `d×d` block-diagonal rotation.
    pub fn materialize(&self) -> Result<Matrix> {
        let b = self.b;
        let mut r = Matrix::zeros(self.d, self.d);
        for (blk, rb) in self.block_rotations()?.iter().enumerate() {
            let o = blk * b;
            for i in 0..b {
                for j in 0..b {
                    r[(o + i, o + j)] = rb[(i, j)];
                }
            }
        }
        Ok(r)
    }
}

/// Rotates the rows of `xs` blockwise: `xs·Rᵀ` with `R` block-diagonal.
pub fn oft_apply(rot: &BlockDiagonalRotation, xs: &Matrix) -> Result<Matrix> {
    if xs.cols() != rot.d {
        return Err(mismatch(format!(
            "oft_apply: batch has {} columns, rotation acts on {}",
            xs.cols(),
            rot.d
        )));
    }
    let rs = rot.block_rotations()?;
    let b = rot.b;
    let mut out = Matrix::zeros(xs.rows(), xs.cols());
    for i in 0..xs.rows() {
        let x = xs.row(i);
        let o = out.row_mut(i);
        for (blk, rb) in rs.iter().enumerate() {
            let off = blk * b;
            let xb = &x[off..off + b];
            for (p, ov) in o[off..off + b].iter_mut().enumerate() {
                *ov = rb.row(p).iter().zip(xb).map(|(r, x)| r * x).sum();
            }
        }
    }
    Ok(out)
}

/// `H₁⋯Hᵣ` with `Hᵢ = I − 2uᵢuᵢᵀ/‖uᵢ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderChain {
    d: usize,
    reflectors: Vec<Vec<f64>>,
}

impl HouseholderChain {
    pub fn new(reflectors: Vec<Vec<f64>>) -> Result<Self> {
        let d = reflectors
            .first()
            .map(|u| u.len())
            .ok_or_else(|| LocoError::InvalidArgument("no reflectors".into()))?;
        for (index, u) in reflectors.iter().enumerate() {
            if u.len() != d {
                return Err(mismatch(format!("reflector {index} has length {}", u.len())));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(LocoError::NonFinite("reflector"));
            }
            if u.iter().all(|&v| v == 0.0) {
                return Err(LocoError::ZeroReflector { index });
            }
        }
        Ok(Self { d, reflectors })
    }

    pub fn random(rng: &mut Rng, d: usize, r: usize) -> Result<Self> {
        Self::new(
            (0..r)
                .map(|_| (0..d).map(|_| rng.next_gaussian()).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.reflectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reflectors.is_empty()
    }

    pub fn reflectors(&self) -> &[Vec<f64>] {
        &self.reflectors
    }

    /// `d·r`.
    pub fn param_count(&self) -> usize {
        self.d * self.reflectors.len()
    }

    /// Dense `H₁⋯Hᵣ`.
    pub fn materialize(&self) -> Matrix {
        // Rows of I·(H₁⋯Hᵣ)ᵀ, transposed back.
        householder_apply(self, &Matrix::identity(self.d))
            .expect("identity has matching width")
            .transpose()
    }
}

/// `xs·(H₁⋯Hᵣ)ᵀ` in `O(N·d·r)`: each row meets `Hᵣ` first and `H₁` last.
pub fn householder_apply(chain: &HouseholderChain, xs: &Matrix) -> Result<Matrix> {
    if xs.cols() != chain.d {
        return Err(mismatch(format!(
            "householder_apply: batch has {} columns, chain acts on {}",
            xs.cols(),
            chain.d
        )));
    }
    let scales: Vec<f64> = chain
        .reflectors
        .iter()
        .map(|u| 2.0 / u.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut out = xs.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (u, s) in chain.reflectors.iter().zip(&scales).rev() {
            let c = s * row.iter().zip(u).map(|(x, u)| x * u).sum::<f64>();
            row.iter_mut().zip(u).for_each(|(x, u)| *x -= c * u);
        }
    }
    Ok(out)
}
