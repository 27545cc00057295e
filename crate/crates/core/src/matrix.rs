//! Dense row-major `f64` matrices.
//!
//! Only what the rotation code needs: products, transposes, blocked LU with
//! partial pivoting (inverse and determinant), norms and Gaussian sampling.
//! Every matrix buffer is registered with a thread-local allocation counter
//! (see [`measure_allocations`]) so benchmarks can account for peak memory
//! without relying on OS statistics.

use std::cell::Cell;
use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{mismatch, LocoError, Result};
use crate::gemm::gemm;
use crate::rng::Rng;

/// Relative pivot threshold: pivots below `PIVOT_RTOL * max|m_ij|` are singular.
pub const PIVOT_RTOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// allocation accounting

#[derive(Debug, Clone, Copy, Default)]
struct AllocState {
    live: usize,
    peak: usize,
    largest: usize,
    count: usize,
}

thread_local! {
    static ALLOC: Cell<AllocState> = const { Cell::new(AllocState { live: 0, peak: 0, largest: 0, count: 0 }) };
}

fn track_alloc(bytes: usize) {
    ALLOC.with(|s| {
        let mut st = s.get();
        st.live += bytes;
        st.peak = st.peak.max(st.live);
        st.largest = st.largest.max(bytes);
        st.count += 1;
        s.set(st);
    });
}

fn track_free(bytes: usize) {
    ALLOC.with(|s| {
        let mut st = s.get();
        st.live = st.live.saturating_sub(bytes);
        s.set(st);
    });
}

/// Matrix allocations observed on the current thread during a closure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Peak live matrix bytes above the level at entry.
    pub peak_bytes: usize,
    /// Largest single matrix buffer allocated.
    pub largest_bytes: usize,
    /// Number of matrix buffers allocated.
    pub allocations: usize,
}

/// Runs `f` and reports the matrix allocations it made on this thread.
/// Nested calls are allowed; the outer scope still sees the inner allocations.
pub fn measure_allocations<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let saved = ALLOC.with(|s| s.get());
    ALLOC.with(|s| {
        s.set(AllocState {
            live: saved.live,
            peak: saved.live,
            largest: 0,
            count: 0,
        })
    });
    let out = f();
    let inner = ALLOC.with(|s| s.get());
    ALLOC.with(|s| {
        s.set(AllocState {
            live: inner.live,
            peak: saved.peak.max(inner.peak),
            largest: saved.largest.max(inner.largest),
            count: saved.count + inner.count,
        })
    });
    let stats = AllocStats {
        peak_bytes: inner.peak - saved.live,
        largest_bytes: inner.largest,
        allocations: inner.count,
    };
    (out, stats)
}

// ---------------------------------------------------------------------------
// storage

pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        track_alloc(data.len() * std::mem::size_of::<f64>());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Wraps a row-major buffer. Rejects wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "buffer of length {} cannot hold {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LocoError::NonFinite("Matrix::from_vec"));
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(mismatch("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        std::mem::take(&mut self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(LocoError::NonFinite(op))
        }
    }

    pub fn transpose(&self) -> Matrix {
        let (r, c) = (self.rows, self.cols);
        let mut out = Matrix::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    fn same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::from_raw(self.rows, self.cols, data).ensure_finite("add")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::from_raw(self.rows, self.cols, data).ensure_finite("sub")
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let data = self.data.iter().map(|v| v * s).collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(mismatch(format!(
                "hcat: {} rows vs {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            let dst = out.row_mut(i);
            dst[..self.cols].copy_from_slice(self.row(i));
            dst[self.cols..].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// Copy of the column range `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut out = Matrix::zeros(self.rows, w);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..end]);
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Frobenius norm of `self - other`; panics on shape mismatch.
    pub fn distance(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "distance: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Clone for Matrix {
    fn clone(&self) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.clone())
    }
}

impl Drop for Matrix {
    fn drop(&mut self) {
        track_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl PartialEq for Matrix {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data == other.data
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "\n  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        if self.rows > 8 {
            write!(f, "\n  ...")?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// products

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(mismatch(format!(
            "matmul: {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows, b.cols, a.cols, 1.0, &a.data, a.cols, &b.data, b.cols, &mut out.data, b.cols,
    );
    out.ensure_finite("matmul")
}

/// `a · bᵀ` without materializing the transpose of `b` when `b` is thin.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(mismatch(format!(
            "matmul_nt: {}x{} · ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let bt = b.transpose();
    matmul(a, &bt)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(mismatch(format!(
            "matmul_tn: ({}x{})ᵀ · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let at = a.transpose();
    matmul(&at, b)
}

impl Matrix {
    /// `self += alpha · a · b` without allocating the product.
    pub fn add_product(&mut self, alpha: f64, a: &Matrix, b: &Matrix) -> Result<()> {
        if a.cols != b.rows || self.rows != a.rows || self.cols != b.cols {
            return Err(mismatch(format!(
                "add_product: {}x{} += {}x{} · {}x{}",
                self.rows, self.cols, a.rows, a.cols, b.rows, b.cols
            )));
        }
        let ldc = self.cols;
        gemm(
            a.rows, b.cols, a.cols, alpha, &a.data, a.cols, &b.data, b.cols, &mut self.data, ldc,
        );
        if self.is_finite() {
            Ok(())
        } else {
            Err(LocoError::NonFinite("add_product"))
        }
    }
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖mᵀm − I‖_F`, the orthogonality residual of a square matrix.
pub fn orthogonality_residual(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(mismatch("orthogonality_residual needs a square matrix"));
    }
    let g = matmul_tn(m, m)?;
    Ok(g.distance(&Matrix::identity(m.rows)))
}

/// Matrix with i.i.d. `N(0, std²)` entries drawn from `rng` in row-major order.
pub fn rand_gaussian(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and non-negative");
    Matrix::from_fn(rows, cols, |_, _| std * rng.next_gaussian())
}

// ---------------------------------------------------------------------------
// LU with partial pivoting

const NB: usize = 128;

/// `P·M = L·U` packed in one buffer: strict lower part holds L (unit
/// diagonal implied), upper part holds U. Row `i` of `P·M` is row `perm[i]`
/// of `M`.
pub struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Lu> {
        if !m.is_square() {
            return Err(mismatch(format!("LU of a {}x{} matrix", m.rows, m.cols)));
        }
        let n = m.rows;
        let threshold = PIVOT_RTOL * m.max_abs();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let a = &mut lu.data;
        let mut panel = Vec::new();

        for k0 in (0..n).step_by(NB) {
            let kb = NB.min(n - k0);
            let k1 = k0 + kb;
            for k in k0..k1 {
                let (mut p, mut best) = (k, a[k * n + k].abs());
                for i in k + 1..n {
                    let v = a[i * n + k].abs();
                    if v > best {
                        best = v;
                        p = i;
                    }
                }
                // Written negated so a NaN pivot is also rejected.
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                let bad = !(best >= threshold) || best == 0.0;
                if bad {
                    return Err(LocoError::Singular {
                        pivot: best,
                        threshold,
                    });
                }
                if p != k {
                    swap_rows(a, n, p, k);
                    perm.swap(p, k);
                    sign = -sign;
                }
                let pivot = a[k * n + k];
                let (top, bottom) = a.split_at_mut((k + 1) * n);
                let prow = &top[k * n + k + 1..k * n + k1];
                for row in bottom.chunks_exact_mut(n) {
                    let l = row[k] / pivot;
                    row[k] = l;
                    if l != 0.0 {
                        for (x, u) in row[k + 1..k1].iter_mut().zip(prow) {
                            *x -= l * u;
                        }
                    }
                }
            }
            if k1 == n {
                break;
            }
            // U12 = L11⁻¹ A12
            for i in k0 + 1..k1 {
                let (top, rest) = a.split_at_mut(i * n);
                let row_i = &mut rest[..n];
                for j in k0..i {
                    let l = row_i[j];
                    if l != 0.0 {
                        let row_j = &top[j * n..(j + 1) * n];
                        for (x, u) in row_i[k1..].iter_mut().zip(&row_j[k1..]) {
                            *x -= l * u;
                        }
                    }
                }
            }
            // A22 -= L21 · U12
            let m2 = n - k1;
            panel.clear();
            for i in k1..n {
                panel.extend_from_slice(&a[i * n + k0..i * n + k1]);
            }
            let (top, bottom) = a.split_at_mut(k1 * n);
            gemm(
                m2,
                m2,
                kb,
                -1.0,
                &panel,
                kb,
                &top[k0 * n + k1..],
                n,
                &mut bottom[k1..],
                n,
            );
        }
        Ok(Lu { n, lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        let mut det = self.sign;
        for i in 0..self.n {
            det *= self.lu.data[i * self.n + i];
        }
        det
    }

    /// `M⁻¹`, by solving against the identity.
    pub fn inverse(&self) -> Result<Matrix> {
        let out = self.solve(&Matrix::identity(self.n))?;
        out.ensure_finite("lu_invert")
    }

    /// Solves `M · x = rhs` for every column of `rhs`, blockwise.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.n;
        if rhs.rows != n {
            return Err(mismatch(format!(
                "solve: {n}x{n} system, rhs has {} rows",
                rhs.rows
            )));
        }
        let w = rhs.cols;
        let lu = &self.lu.data;
        let mut y = Matrix::zeros(n, w);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(rhs.row(self.perm[i]));
        }
        let d = &mut y.data;

        // L · z = P · rhs, top block down.
        for i0 in (0..n).step_by(NB) {
            let i1 = (i0 + NB).min(n);
            let (done, cur) = d.split_at_mut(i0 * w);
            let cur = &mut cur[..(i1 - i0) * w];
            gemm(i1 - i0, w, i0, -1.0, &lu[i0 * n..], n, done, w, cur, w);
            for i in i0 + 1..i1 {
                let (before, row_i) = cur.split_at_mut((i - i0) * w);
                let row_i = &mut row_i[..w];
                for j in i0..i {
                    let l = lu[i * n + j];
                    if l != 0.0 {
                        axpy(row_i, -l, &before[(j - i0) * w..(j - i0 + 1) * w]);
                    }
                }
            }
        }

        // U · x = z, bottom block up.
        let starts: Vec<usize> = (0..n).step_by(NB).collect();
        for &i0 in starts.iter().rev() {
            let i1 = (i0 + NB).min(n);
            let (head, solved) = d.split_at_mut(i1 * w);
            let cur = &mut head[i0 * w..];
            gemm(i1 - i0, w, n - i1, -1.0, &lu[i0 * n + i1..], n, solved, w, cur, w);
            for i in (i0..i1).rev() {
                let (row_part, after) = cur.split_at_mut((i - i0 + 1) * w);
                let row_i = &mut row_part[(i - i0) * w..];
                for j in i + 1..i1 {
                    let u = lu[i * n + j];
                    if u != 0.0 {
                        axpy(row_i, -u, &after[(j - i - 1) * w..(j - i) * w]);
                    }
                }
                let p = lu[i * n + i];
                row_i.iter_mut().for_each(|v| *v /= p);
            }
        }
        y.ensure_finite("lu_solve")
    }
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

fn swap_rows(a: &mut [f64], n: usize, p: usize, k: usize) {
    let (lo, hi) = (p.min(k), p.max(k));
    let (top, bottom) = a.split_at_mut(hi * n);
    top[lo * n..(lo + 1) * n].swap_with_slice(&mut bottom[..n]);
}

/// Inverse through LU with partial pivoting.
pub fn lu_invert(m: &Matrix) -> Result<Matrix> {
    Lu::factor(m)?.inverse()
}

/// Determinant as the signed product of LU pivots. A matrix whose pivots fall
/// under the singularity threshold reports 0.
pub fn lu_det(m: &Matrix) -> Result<f64> {
    match Lu::factor(m) {
        Ok(lu) => Ok(lu.determinant()),
        Err(LocoError::Singular { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}
