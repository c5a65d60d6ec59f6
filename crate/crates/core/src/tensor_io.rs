//! `.tsmt` tensor files.
//!
//! Layout: `"TSMT"`, version byte (1), axis count byte, one label byte per
//! axis (`N=0 T=1 C=2 H=3 W=4`), extents as `u64` LE, then the elements as
//! `f32` LE in row-major order.

use std::path::Path;

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::tensor::{Axis, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"TSMT";
pub const TENSOR_VERSION: u8 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::shape("rank above 255"))?;
    let mut out = Vec::with_capacity(6 + t.rank() * 9 + t.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(rank);
    for axis in t.axes() {
        let code = axis
            .code()
            .ok_or_else(|| Error::shape("tensor files only carry N/T/C/H/W axes"))?;
        out.push(code);
    }
    for &e in t.extents() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    codec::put_f32s(&mut out, t.data());
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(TENSOR_MAGIC)?;
    r.expect_version(TENSOR_VERSION)?;
    let rank = r.u8("axis count")? as usize;
    if rank == 0 {
        return Err(Error::format(5, "axis count is zero"));
    }
    let mut axes = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.offset();
        let code = r.u8("axis label")?;
        axes.push(Axis::from_code(code).ok_or_else(|| Error::format(at, format!("unknown axis label {code}")))?);
    }
    let (extents, count) = r.extents(rank)?;
    let data = r.f32s(count)?;
    r.finish()?;
    Tensor::from_vec(extents, axes, data)
}

pub fn save_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    codec::write_file(path.as_ref(), &encode_tensor(t)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_tensor(&codec::read_file(path)?).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CLIP_AXES;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec(vec![1, 2], vec![Axis::N, Axis::C], vec![1.0f32, -2.5]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let mut expected = b"TSMT".to_vec();
        expected.extend_from_slice(&[1, 2, 0, 2]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn nan_payload_survives() {
        let weird = f32::from_bits(0x7fc0_1234);
        let t = Tensor::from_vec(vec![1, 1, 1, 1, 3], CLIP_AXES.to_vec(), vec![weird, -0.0, f32::INFINITY]).unwrap();
        let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, vec![0x7fc0_1234, (-0.0f32).to_bits(), f32::INFINITY.to_bits()]);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let t = Tensor::from_vec(vec![2, 2], vec![Axis::H, Axis::W], vec![1.0f32; 4]).unwrap();
        let good = encode_tensor(&t).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        let mut bad_label = good.clone();
        bad_label[6] = 9;
        let mut zero_extent = good.clone();
        zero_extent[8..16].copy_from_slice(&0u64.to_le_bytes());
        let mut huge_extent = good.clone();
        huge_extent[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        let mut trailing = good.clone();
        trailing.push(0);

        for (name, bytes) in [
            ("magic", bad_magic),
            ("version", bad_version),
            ("label", bad_label),
            ("zero extent", zero_extent),
            ("huge extent", huge_extent),
            ("trailing", trailing),
            ("empty", Vec::new()),
        ] {
            let err = decode_tensor(&bytes).unwrap_err();
            assert!(err.is_format(), "{name}: {err}");
        }
        for cut in 0..good.len() {
            assert!(decode_tensor(&good[..cut]).unwrap_err().is_format(), "cut at {cut}");
        }
    }

    #[test]
    fn free_axes_cannot_be_written() {
        let t = Tensor::unlabeled(vec![2], vec![0.0f32; 2]).unwrap();
        assert!(encode_tensor(&t).is_err());
    }

    #[test]
    fn file_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tsmt");
        std::fs::write(&path, b"TSMT\x01").unwrap();
        let msg = load_tensor(&path).unwrap_err().to_string();
        assert!(msg.contains("x.tsmt") && msg.contains("byte 5"), "{msg}");
    }
}
