//! The `PST1` binary tensor container.
//!
//! Layout: 4-byte magic `PST1`, one dtype byte (0 = f64, 1 = f32), one rank
//! byte (1..=4), two reserved zero bytes, `rank` little-endian u64 dims, then
//! the row-major little-endian payload. No compression and no padding.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PST1";
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

pub fn encode(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    if t.rank() > 4 {
        return Err(Error::shape(format!("PST1 supports rank 1..=4, got {}", t.rank())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.rank() + dtype.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    let dtype = match bytes[4] {
        0 => DType::F64,
        1 => DType::F32,
        other => return Err(fail(format!("unknown dtype code {other}"))),
    };
    let rank = bytes[5] as usize;
    if !(1..=4).contains(&rank) {
        return Err(fail(format!("rank {rank} outside 1..=4")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(fail("reserved header bytes are not zero".into()));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims".into()));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail("dims overflow".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * dtype.width() {
        return Err(fail(format!(
            "payload has {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            count * dtype.width()
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Tensor::new(dims, data).map_err(|e| fail(e.to_string()))
}

/// Write a tensor as an f64 `PST1` file.
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_tensor_as(path, t, DType::F64)
}

pub fn write_tensor_as(path: impl AsRef<Path>, t: &Tensor, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a `PST1` file; f32 payloads are promoted to f64.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pst");
        let t = Tensor::zeros(vec![2, 3]).unwrap();
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn scalar_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pst");
        let t = Tensor::new(vec![1, 1], vec![26.1]).unwrap();
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap().data()[0], 26.1);
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = encode(&t, DType::F64).unwrap();
        assert_eq!(&b[..4], b"PST1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..8], &[0, 0]);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(b.len(), 16 + 16);
    }

    #[test]
    fn wrong_magic_rejected() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut b = encode(&t, DType::F64).unwrap();
        b[0] = b'X';
        let err = decode(&b, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn payload_length_mismatch_rejected() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = encode(&t, DType::F64).unwrap();
        b.truncate(b.len() - 3);
        assert!(matches!(decode(&b, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn f32_payload_promoted() {
        let t = Tensor::new(vec![2, 2], vec![0.5, -1.25, 3.0, 8.0]).unwrap();
        let b = encode(&t, DType::F32).unwrap();
        assert_eq!(b[4], 1);
        assert_eq!(decode(&b, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_tensor(dir.path().join("nope.pst")).unwrap_err();
        assert!(matches!(err, Error::Missing(_)));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    // random finite bit patterns, not just uniform values
                    loop {
                        let v = f64::from_bits(rng.gen::<u64>());
                        if v.is_finite() { break v; }
                    }
                })
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode(&encode(&t, DType::F64).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
