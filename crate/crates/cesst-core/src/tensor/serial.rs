//! Single-tensor binary format.
//!
//! Layout: magic "TNSR", version u16 LE, rank u16 LE, extents as u64 LE,
//! precision tag u8 (0 = f32, 1 = f64), raw element data LE. Round trips are
//! bit-exact.

use std::io::{Read, Write};

use super::{Dtype, Element, Tensor};
use crate::error::{Error, Result};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
const TNSR_VERSION: u16 = 1;

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub fn write_tensor<E: Element, W: Write>(w: &mut W, t: &Tensor<E>) -> Result<()> {
    w.write_all(TNSR_MAGIC)?;
    w.write_all(&TNSR_VERSION.to_le_bytes())?;
    let rank = t.rank() as u16;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&[E::DTYPE.tag()])?;
    write_elements(w, t.data())?;
    Ok(())
}

pub fn read_tensor<E: Element, R: Read>(r: &mut R) -> Result<Tensor<E>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TNSR_MAGIC {
        return Err(Error::Data(format!("bad tensor magic {:?}", magic)));
    }
    let version = read_u16(r)?;
    if version != TNSR_VERSION {
        return Err(Error::Data(format!("unsupported tensor version {version}")));
    }
    let rank = read_u16(r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let dtype = Dtype::from_tag(tag[0])
        .ok_or_else(|| Error::Data(format!("unknown precision tag {}", tag[0])))?;
    if dtype != E::DTYPE {
        return Err(Error::Data(format!(
            "precision mismatch: file holds {}, requested {}",
            dtype.name(),
            E::DTYPE.name()
        )));
    }
    let numel: usize = dims.iter().product();
    let data = read_elements::<E, R>(r, numel)?;
    Tensor::from_vec(data, &dims)
}

/// Raw little-endian element slice, decoded into `E`'s precision.
pub(crate) fn read_elements_from_bytes<E: Element>(bytes: &[u8]) -> Result<Vec<E>> {
    let size = E::DTYPE.size_bytes();
    if bytes.len() % size != 0 {
        return Err(Error::Data("payload length not a multiple of element size".into()));
    }
    let mut r = bytes;
    read_elements::<E, _>(&mut r, bytes.len() / size)
}

pub(crate) fn write_elements<E: Element, W: Write>(w: &mut W, data: &[E]) -> Result<()> {
    match E::DTYPE {
        Dtype::F32 => {
            let mut buf = Vec::with_capacity(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Dtype::F64 => {
            let mut buf = Vec::with_capacity(data.len() * 8);
            for v in data {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

pub(crate) fn read_elements<E: Element, R: Read>(r: &mut R, numel: usize) -> Result<Vec<E>> {
    let mut buf = vec![0u8; numel * E::DTYPE.size_bytes()];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Data("payload truncated".into())
        } else {
            Error::Io(e)
        }
    })?;
    let mut data = Vec::with_capacity(numel);
    match E::DTYPE {
        Dtype::F32 => {
            for c in buf.chunks_exact(4) {
                data.push(E::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64));
            }
        }
        Dtype::F64 => {
            for c in buf.chunks_exact(8) {
                data.push(E::from_f64(f64::from_le_bytes(c.try_into().unwrap())));
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = Tensor::from_vec(vec![1.5f32, -2.25, 0.1, 1e-30], &[2, 2]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor<f32> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.to_vec().iter().zip(t.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn precision_tag_is_checked() {
        let t = Tensor::from_vec(vec![1.0f32], &[1]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let err = read_tensor::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("precision mismatch"));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOPE\x01\x00".to_vec();
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], &[4]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_tensor::<f32, _>(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
