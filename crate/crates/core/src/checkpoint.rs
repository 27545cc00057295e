//! Flat little-endian adapter checkpoints.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "LOCO"
//! 4       4         version (u32) = 1
//! 8       8 each    k, d, r, n (u64)
//! 40      8         temperature t (f64)
//! 48      8·k·d     W₀, row-major f64
//! ...     8·d·r     U₁, V₁, U₂, V₂, …, row-major f64
//! ```
//!
//! Every component must share the rank `r`. The chain mode is runtime state
//! and is not stored; loaded adapters come back in first-order mode.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adapter::LocoAdapter;
use crate::cayley::TemperatureParam;
use crate::chain::{ChainMode, RotationChain};
use crate::error::{LocoError, Result};
use crate::matrix::Matrix;
use crate::skew::LowRankSkewFactors;

pub const MAGIC: &[u8; 4] = b"LOCO";
pub const VERSION: u32 = 1;

/// Refuse headers that would ask for more than this many f64 values.
const MAX_VALUES: u64 = 1 << 32;

pub fn save<W: Write>(a: &LocoAdapter, mut w: W) -> Result<()> {
    let comps = a.components();
    let r = comps[0].rank();
    if comps.iter().any(|c| c.rank() != r) {
        return Err(LocoError::Checkpoint("components have different ranks".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [a.out_dim(), a.dim(), r, comps.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&a.temperature().value().to_le_bytes())?;
    write_matrix(&mut w, a.w0())?;
    for c in comps {
        write_matrix(&mut w, c.u())?;
        write_matrix(&mut w, c.v())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut rd: R) -> Result<LocoAdapter> {
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LocoError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    rd.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(LocoError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0u64; 4];
    for v in &mut dims {
        *v = read_u64(&mut rd)?;
    }
    let [k, d, r, n] = dims;
    if k == 0 || d == 0 || r == 0 || n == 0 || r > d {
        return Err(LocoError::Checkpoint(format!("bad header k={k} d={d} r={r} n={n}")));
    }
    let total = k
        .checked_mul(d)
        .and_then(|kd| d.checked_mul(r)?.checked_mul(2)?.checked_mul(n)?.checked_add(kd));
    if total.is_none_or(|t| t > MAX_VALUES) {
        return Err(LocoError::Checkpoint("header sizes too large".into()));
    }
    let t = f64::from_le_bytes(read_u64(&mut rd)?.to_le_bytes());
    let t = TemperatureParam::new(t)?;
    let (k, d, r, n) = (k as usize, d as usize, r as usize, n as usize);
    let w0 = read_matrix(&mut rd, k, d)?;
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let u = read_matrix(&mut rd, d, r)?;
        let v = read_matrix(&mut rd, d, r)?;
        comps.push(LowRankSkewFactors::new(u, v)?);
    }
    let mut rest = [0u8; 1];
    if rd.read(&mut rest)? != 0 {
        return Err(LocoError::Checkpoint("trailing bytes after last component".into()));
    }
    let chain = RotationChain::new(comps, ChainMode::FirstOrder)?.with_temperature(t);
    LocoAdapter::new(w0, chain)
}

pub fn save_file(a: &LocoAdapter, path: impl AsRef<Path>) -> Result<()> {
    save(a, BufWriter::new(File::create(path)?))
}

pub fn load_file(path: impl AsRef<Path>) -> Result<LocoAdapter> {
    load(BufReader::new(File::open(path)?))
}

/// Serializes into memory.
pub fn to_bytes(a: &LocoAdapter) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save(a, &mut buf)?;
    Ok(buf)
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(rd: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    rd.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_matrix<R: Read>(rd: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    rd.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|_| LocoError::Checkpoint("non-finite value in payload".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::rand_gaussian;
    use crate::rng::Rng;

    fn sample(seed: u64) -> LocoAdapter {
        let mut rng = Rng::new(seed);
        let w0 = rand_gaussian(&mut rng, 3, 5, 1.0);
        let comps = (0..2)
            .map(|_| LowRankSkewFactors::random(&mut rng, 5, 2, 0.3).unwrap())
            .collect();
        let chain = RotationChain::new(comps, ChainMode::FirstOrder)
            .unwrap()
            .with_temperature(TemperatureParam::new(0.75).unwrap());
        LocoAdapter::new(w0, chain).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&sample(1)).unwrap();
        assert_eq!(&bytes[..4], b"LOCO");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &5u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &2u64.to_le_bytes());
        assert_eq!(&bytes[32..40], &2u64.to_le_bytes());
        assert_eq!(&bytes[40..48], &0.75f64.to_le_bytes());
        assert_eq!(bytes.len(), 48 + 8 * (3 * 5 + 2 * 2 * 5 * 2));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample(2);
        let bytes = to_bytes(&a).unwrap();
        let b = load(bytes.as_slice()).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_bytes(&b).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&sample(3)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load(bad.as_slice()), Err(LocoError::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(load(bad.as_slice()), Err(LocoError::Checkpoint(_))));
        assert!(matches!(load(&bytes[..bytes.len() - 1]), Err(LocoError::Io(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(load(long.as_slice()), Err(LocoError::Checkpoint(_))));
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(load(huge.as_slice()), Err(LocoError::Checkpoint(_))));
        let mut nan = bytes;
        nan[48..56].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(load(nan.as_slice()), Err(LocoError::Checkpoint(_))));
    }

    #[test]
    fn mixed_ranks_rejected() {
        let mut rng = Rng::new(4);
        let comps = vec![
            LowRankSkewFactors::random(&mut rng, 5, 1, 0.3).unwrap(),
            LowRankSkewFactors::random(&mut rng, 5, 2, 0.3).unwrap(),
        ];
        let a = LocoAdapter::new(
            Matrix::zeros(2, 5),
            RotationChain::new(comps, ChainMode::FirstOrder).unwrap(),
        )
        .unwrap();
        assert!(matches!(to_bytes(&a), Err(LocoError::Checkpoint(_))));
    }
}
