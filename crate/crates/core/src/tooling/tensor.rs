//! `FAST1` binary tensors.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic   5 bytes  "FAST1"
//! dtype   u8       0 = f32
//! rank    u8       1..=4
//! dims    rank x u64, each >= 1
//! payload product(dims) elements, row-major
//! ```

use std::path::Path;

use crate::error::{FasaError, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 5] = b"FAST1";
pub const DTYPE_F32: u8 = 0;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(FasaError::shape(format!(
                "tensor rank {} outside 1..={MAX_RANK}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(FasaError::shape(format!("tensor has a zero dimension: {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(FasaError::shape(format!(
                "{} elements do not fill dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(vec![m.rows(), m.cols()], m.as_slice().to_vec())
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.dims[..] {
            [rows, cols] => Matrix::from_vec(rows, cols, self.data),
            _ => Err(FasaError::shape(format!(
                "expected a rank-2 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn into_vector(self) -> Result<Vec<f32>> {
        match self.dims[..] {
            [_] => Ok(self.data),
            _ => Err(FasaError::shape(format!(
                "expected a rank-1 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn format_err(field: &'static str, message: impl Into<String>) -> FasaError {
    FasaError::Format {
        field,
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("magic", "bad magic"));
    }
    let header = &bytes[MAGIC.len()..];
    let (&dtype, header) = header
        .split_first()
        .ok_or_else(|| format_err("dtype", "truncated header"))?;
    if dtype != DTYPE_F32 {
        return Err(format_err("dtype", format!("unsupported dtype {dtype}")));
    }
    let (&rank, mut rest) = header
        .split_first()
        .ok_or_else(|| format_err("rank", "truncated header"))?;
    let rank = rank as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(format_err("rank", format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        if rest.len() < 8 {
            return Err(format_err("dims", "truncated dimension list"));
        }
        let (d, tail) = rest.split_at(8);
        let d = u64::from_le_bytes(d.try_into().expect("8 bytes"));
        if d == 0 {
            return Err(format_err("dims", "zero dimension"));
        }
        dims.push(usize::try_from(d).map_err(|_| format_err("dims", format!("dimension {d} too large")))?);
        rest = tail;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err("dims", "element count overflows"))?;
    if rest.len() < count {
        return Err(format_err(
            "payload",
            format!("truncated: {} of {count} bytes", rest.len()),
        ));
    }
    if rest.len() > count {
        return Err(format_err("payload", format!("{} trailing bytes", rest.len() - count)));
    }
    let data = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode(&super::read_file(path)?).map_err(|e| match e {
        FasaError::Format { field, message } => FasaError::Format {
            field,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    super::atomic_write(path.as_ref(), &encode(t))
}

/// Reorders a rotate-half vector `(x_0..x_{n-1}, y_0..y_{n-1})` into paired
/// chunks `(x_0, y_0, x_1, y_1, ...)`.
pub fn half_split_to_paired(v: &[f32]) -> Vec<f32> {
    let half = v.len() / 2;
    (0..half).flat_map(|i| [v[i], v[half + i]]).collect()
}

/// Inverse of [`half_split_to_paired`].
pub fn paired_to_half_split(v: &[f32]) -> Vec<f32> {
    let xs = v.iter().step_by(2);
    let ys = v.iter().skip(1).step_by(2);
    xs.chain(ys).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_2x3() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.dims, t.dims);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&t.data));
    }

    #[test]
    fn header_errors_name_the_field() {
        let good = encode(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        let field = |bytes: &[u8]| match decode(bytes) {
            Err(FasaError::Format { field, message }) => (field, message),
            other => panic!("expected format error, got {other:?}"),
        };

        let mut bad = good.clone();
        bad[..5].copy_from_slice(b"FASTX");
        assert_eq!(field(&bad), ("magic", "bad magic".to_string()));

        let mut bad = good.clone();
        bad[5] = 1;
        assert_eq!(field(&bad).0, "dtype");

        let mut bad = good.clone();
        bad[6] = 5;
        assert_eq!(field(&bad).0, "rank");

        assert_eq!(field(&good[..good.len() - 1]).0, "payload");
        assert_eq!(field(&good[..10]).0, "dims");
        let mut long = good.clone();
        long.push(0);
        assert_eq!(field(&long).0, "payload");
        assert_eq!(field(b"FAS").0, "magic");
    }

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn half_split_permutation() {
        // file order (x0, x1, y0, y1)
        assert_eq!(
            half_split_to_paired(&[1.0, 2.0, 10.0, 20.0]),
            vec![1.0, 10.0, 2.0, 20.0]
        );
        assert_eq!(
            paired_to_half_split(&[1.0, 10.0, 2.0, 20.0]),
            vec![1.0, 2.0, 10.0, 20.0]
        );
    }

    proptest! {
        #[test]
        fn encode_decode_bit_exact(dims in proptest::collection::vec(1usize..5, 1..=4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n as u32).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i.wrapping_mul(40503)))).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(&back.dims, &t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn permutation_inverts(half in 1usize..32) {
            let v: Vec<f32> = (0..2 * half).map(|i| i as f32).collect();
            prop_assert_eq!(paired_to_half_split(&half_split_to_paired(&v)), v);
        }
    }
}
