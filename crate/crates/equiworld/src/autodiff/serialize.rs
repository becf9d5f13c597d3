//! Array wire format: u32-LE rank, u32-LE extents, then the data as f64-LE.
//! Used by dataset files, checkpoints, and weight dumps; round-trips
//! bit-exactly for the default scalar.

use super::Array;
use crate::Scalar;
use std::io::{self, Read, Write};

pub fn write_array<S: Scalar, W: Write>(w: &mut W, a: &Array<S>) -> io::Result<()> {
    let rank = a.shape().len() as u32;
    w.write_all(&rank.to_le_bytes())?;
    for &e in a.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for v in a.data() {
        let f = v.to_f64().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "non-representable scalar"))?;
        w.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_array<S: Scalar, R: Read>(r: &mut R) -> io::Result<Array<S>> {
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 16 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut f64buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut f64buf)?;
        data.push(S::from_f64_lossy(f64::from_le_bytes(f64buf)));
    }
    Ok(Array::new(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(vals in proptest::collection::vec(-1e12f64..1e12, 1..64)) {
            let a = Array::<f64>::new(vec![vals.len()], vals);
            let mut buf = Vec::new();
            write_array(&mut buf, &a).unwrap();
            let b: Array<f64> = read_array(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn layout_matches_spec() {
        let a = Array::<f64>::from_f64(&[1, 2], &[1.0, -1.0]);
        let mut buf = Vec::new();
        write_array(&mut buf, &a).unwrap();
        // rank, two extents, two f64s.
        assert_eq!(buf.len(), 4 + 8 + 16);
        assert_eq!(&buf[0..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1.0f64.to_le_bytes());
    }
}
