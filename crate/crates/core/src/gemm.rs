//! Packed, register-blocked `C += alpha·A·B` for row-major views.
//!
//! Panels of A (MR rows) and B (NR columns) are copied into contiguous,
//! zero-padded buffers and multiplied by a fixed-size micro-kernel. The
//! kernel body is compiled twice (baseline and AVX2) and picked at runtime.
//! Neither variant fuses multiply and add, so both produce the same bits.
//! (LLVM's AVX-512 codegen for this loop was measured slower than AVX2.)
//!
//! Every entry of C is updated once per KC-chunk of the inner dimension with
//! `alpha * Σ_p a_ip b_pj` summed in ascending `p`. That order does not depend
//! on where the entry sits in a tile, so row-parallel execution is
//! bit-identical to serial execution.

use std::sync::OnceLock;

use rayon::prelude::*;

const MR: usize = 6;
const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 96;
const NC: usize = 2048;
const PAR_MIN_FLOPS: usize = 1 << 22;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Baseline,
    #[cfg(target_arch = "x86_64")]
    Avx2,
}

fn isa() -> Isa {
    static ISA: OnceLock<Isa> = OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                return Isa::Avx2;
            }
        }
        Isa::Baseline
    })
}

type Tile = [[f64; NR]; MR];

#[inline(always)]
fn kernel_body(kc: usize, ap: &[f64], bp: &[f64], out: &mut Tile) {
    let mut acc = [[0.0f64; NR]; MR];
    let ap = &ap[..kc * MR];
    let bp = &bp[..kc * NR];
    for p in 0..kc {
        let a: &[f64; MR] = ap[p * MR..p * MR + MR].try_into().unwrap();
        let b: &[f64; NR] = bp[p * NR..p * NR + NR].try_into().unwrap();
        for ii in 0..MR {
            for jj in 0..NR {
                acc[ii][jj] += a[ii] * b[jj];
            }
        }
    }
    *out = acc;
}

fn kernel_baseline(kc: usize, ap: &[f64], bp: &[f64], acc: &mut Tile) {
    kernel_body(kc, ap, bp, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2(kc: usize, ap: &[f64], bp: &[f64], acc: &mut Tile) {
    kernel_body(kc, ap, bp, acc)
}

#[inline]
fn kernel(isa: Isa, kc: usize, ap: &[f64], bp: &[f64], acc: &mut Tile) {
    match isa {
        Isa::Baseline => kernel_baseline(kc, ap, bp, acc),
        // SAFETY: only selected after runtime feature detection.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { kernel_avx2(kc, ap, bp, acc) },
    }
}

/// Packs `B[pc..pc+kc, jc..jc+nc]` into NR-wide panels, zero padded.
fn pack_b(b: &[f64], ldb: usize, pc: usize, kc: usize, jc: usize, nc: usize, out: &mut Vec<f64>) {
    let panels = nc.div_ceil(NR);
    out.clear();
    out.resize(panels * kc * NR, 0.0);
    for (jp, panel) in out.chunks_exact_mut(kc * NR).enumerate() {
        let j0 = jc + jp * NR;
        let w = NR.min(jc + nc - j0);
        for p in 0..kc {
            let src = &b[(pc + p) * ldb + j0..(pc + p) * ldb + j0 + w];
            panel[p * NR..p * NR + w].copy_from_slice(src);
        }
    }
}

/// Packs `A[ic..ic+mc, pc..pc+kc]` into MR-tall panels, zero padded.
fn pack_a(a: &[f64], lda: usize, ic: usize, mc: usize, pc: usize, kc: usize, out: &mut Vec<f64>) {
    let panels = mc.div_ceil(MR);
    out.clear();
    out.resize(panels * kc * MR, 0.0);
    for (ip, panel) in out.chunks_exact_mut(kc * MR).enumerate() {
        let i0 = ic + ip * MR;
        let h = MR.min(ic + mc - i0);
        for ii in 0..h {
            let src = &a[(i0 + ii) * lda + pc..(i0 + ii) * lda + pc + kc];
            for (p, v) in src.iter().enumerate() {
                panel[p * MR + ii] = *v;
            }
        }
    }
}

/// Multiplies a packed A block (rows `0..mc` of `c`) by a packed B block.
#[allow(clippy::too_many_arguments)]
fn macro_kernel(
    isa: Isa,
    mc: usize,
    nc: usize,
    kc: usize,
    alpha: f64,
    apack: &[f64],
    bpack: &[f64],
    c: &mut [f64],
    ldc: usize,
    jc: usize,
) {
    for (ip, ap) in apack.chunks_exact(kc * MR).enumerate() {
        let i0 = ip * MR;
        let h = MR.min(mc - i0);
        for (jp, bp) in bpack.chunks_exact(kc * NR).enumerate() {
            let j0 = jp * NR;
            let w = NR.min(nc - j0);
            let mut acc = [[0.0f64; NR]; MR];
            kernel(isa, kc, ap, bp, &mut acc);
            for (ii, row) in acc.iter().enumerate().take(h) {
                let off = (i0 + ii) * ldc + jc + j0;
                for (cv, s) in c[off..off + w].iter_mut().zip(row) {
                    *cv += alpha * s;
                }
            }
        }
    }
}

/// `c += alpha · a · b` where `a` is `m×k` (leading dim `lda`), `b` is `k×n`
/// (`ldb`) and `c` is `m×n` (`ldc`), all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let isa = isa();
    let parallel = rayon::current_num_threads() > 1 && m * n * k >= PAR_MIN_FLOPS && m > MC;
    let mut bpack = Vec::new();
    let mut apack = Vec::new();
    for jc in (0..n).step_by(NC) {
        let nc = NC.min(n - jc);
        for pc in (0..k).step_by(KC) {
            let kc = KC.min(k - pc);
            pack_b(b, ldb, pc, kc, jc, nc, &mut bpack);
            if parallel {
                let end = ((m - 1) * ldc + jc + nc).min(c.len());
                c[..end]
                    .par_chunks_mut(MC * ldc)
                    .enumerate()
                    .for_each_init(Vec::new, |ap, (blk, cblk)| {
                        let ic = blk * MC;
                        let mc = MC.min(m - ic);
                        pack_a(a, lda, ic, mc, pc, kc, ap);
                        macro_kernel(isa, mc, nc, kc, alpha, ap, &bpack, cblk, ldc, jc);
                    });
            } else {
                for ic in (0..m).step_by(MC) {
                    let mc = MC.min(m - ic);
                    pack_a(a, lda, ic, mc, pc, kc, &mut apack);
                    macro_kernel(
                        isa,
                        mc,
                        nc,
                        kc,
                        alpha,
                        &apack,
                        &bpack,
                        &mut c[ic * ldc..],
                        ldc,
                        jc,
                    );
                }
            }
        }
    }
}
