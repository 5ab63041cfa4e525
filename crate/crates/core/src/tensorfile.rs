//! Shape-tagged f64 tensor files and a uniform view over parameter sets.
//!
//! Layout: 4-byte magic, u32 tensor count, then per tensor a u32 rank, `rank`
//! u32 dimensions and the row-major little-endian f64 values.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// A fixed, ordered collection of named f64 tensors.
///
/// The order of [`tensors`](ParamSet::tensors) and
/// [`tensors_mut`](ParamSet::tensors_mut) must agree; optimizers, gradient
/// checks and checkpoints all rely on it.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &[usize], &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// A copy with every value set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// `self += scale * other`; both sets must have identical shapes.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for ((_, dst), (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(d, &x)| *d += scale * x);
        }
    }
}

pub fn write_tensors<W: Write>(mut out: W, magic: &[u8; 4], tensors: &[(&[usize], &[f64])]) -> Result<()> {
    out.write_all(magic)?;
    out.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        out.write_u32::<LittleEndian>(shape.len() as u32)?;
        for &d in *shape {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        for &x in *data {
            out.write_f64::<LittleEndian>(x)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub type RawTensor = (Vec<usize>, Vec<f64>);

/// Reads a tensor file, failing on a wrong magic, truncation or trailing
/// bytes.
pub fn read_tensors<R: Read>(mut input: R, magic: &[u8; 4], format: &'static str) -> Result<Vec<RawTensor>> {
    let trunc = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::bad_format(format, "truncated"),
        _ => Error::Io(e),
    };
    let mut m = [0u8; 4];
    input.read_exact(&mut m).map_err(trunc)?;
    if &m != magic {
        return Err(Error::bad_format(format, "bad magic"));
    }
    let count = input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if rank > 8 {
            return Err(Error::bad_format(format, format!("tensor rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(input.read_u32::<LittleEndian>().map_err(trunc)? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::bad_format(format, "tensor too large"))?;
        let mut data = Vec::new();
        data.try_reserve_exact(len).map_err(|_| Error::bad_format(format, "tensor too large"))?;
        data.resize(len, 0.0);
        input.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
        tensors.push((shape, data));
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::bad_format(format, "trailing bytes"));
    }
    Ok(tensors)
}

/// Writes every tensor of `params` in traversal order.
pub fn write_params<W: Write, P: ParamSet>(out: W, magic: &[u8; 4], params: &P) -> Result<()> {
    let ts = params.tensors();
    let refs: Vec<(&[usize], &[f64])> = ts.iter().map(|&(_, s, d)| (s, d)).collect();
    write_tensors(out, magic, &refs)
}

/// Reads tensors into `params`, whose shapes act as the expected layout.
pub fn read_params_into<R: Read, P: ParamSet>(
    input: R,
    magic: &[u8; 4],
    format: &'static str,
    params: &mut P,
) -> Result<()> {
    let raw = read_tensors(input, magic, format)?;
    let expected: Vec<(&'static str, Vec<usize>)> = params.tensors().iter().map(|&(n, s, _)| (n, s.to_vec())).collect();
    if raw.len() != expected.len() {
        return Err(Error::bad_format(format, format!("expected {} tensors, found {}", expected.len(), raw.len())));
    }
    for ((name, shape), (got, _)) in expected.iter().zip(&raw) {
        if shape != got {
            return Err(Error::bad_format(format, format!("tensor {name}: expected shape {shape:?}, found {got:?}")));
        }
    }
    for ((_, dst), (_, data)) in params.tensors_mut().into_iter().zip(raw) {
        dst.copy_from_slice(&data);
    }
    Ok(())
}
