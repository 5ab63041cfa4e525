//! `EMB1` embedding file: `b"EMB1"`, u32 count, u32 dim, `count * dim`
//! little-endian f32 values, then one id per line.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
const FORMAT: &str = "embedding";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub ids: Vec<String>,
    /// Row-major, `ids.len() * dim` values.
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::bad_format(FORMAT, "zero dimension"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::bad_format(
                FORMAT,
                format!("{} values for {} rows of width {dim}", data.len(), ids.len()),
            ));
        }
        if let Some(id) = ids.iter().find(|id| id.contains('\n')) {
            return Err(Error::bad_format(FORMAT, format!("id {id:?} contains a newline")));
        }
        Ok(Self { dim, ids, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(EMBEDDING_MAGIC)?;
        out.write_u32::<LittleEndian>(self.ids.len() as u32)?;
        out.write_u32::<LittleEndian>(self.dim as u32)?;
        for &x in &self.data {
            out.write_f32::<LittleEndian>(x)?;
        }
        for id in &self.ids {
            out.write_all(id.as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let trunc = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::bad_format(FORMAT, "truncated"),
            _ => Error::Io(e),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(trunc)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::bad_format(FORMAT, "bad magic"));
        }
        let count = input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let dim = input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut data = vec![0f32; count * dim];
        input.read_f32_into::<LittleEndian>(&mut data).map_err(trunc)?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        let text = String::from_utf8(rest).map_err(|_| Error::bad_format(FORMAT, "ids are not utf-8"))?;
        let ids: Vec<String> = match text.strip_suffix('\n') {
            Some(body) => body.split('\n').map(str::to_owned).collect(),
            None if text.is_empty() => Vec::new(),
            None => return Err(Error::bad_format(FORMAT, "id list must end with a newline")),
        };
        if ids.len() != count {
            return Err(Error::bad_format(FORMAT, format!("{count} rows but {} ids", ids.len())));
        }
        Self::new(dim, ids, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingFile {
        EmbeddingFile::new(3, vec!["cat IsA animal".into(), "".into()], vec![0.5, -1.0, 2.0, 0.0, 1e-8, 3.25]).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let f = sample();
        let mut a = Vec::new();
        f.write(&mut a).unwrap();
        let g = EmbeddingFile::read(a.as_slice()).unwrap();
        assert_eq!(g, f);
        let mut b = Vec::new();
        g.write(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_file_round_trips() {
        let f = EmbeddingFile::new(4, vec![], vec![]).unwrap();
        let mut a = Vec::new();
        f.write(&mut a).unwrap();
        assert_eq!(EmbeddingFile::read(a.as_slice()).unwrap(), f);
    }

    #[test]
    fn loader_validates_lengths() {
        let mut a = Vec::new();
        sample().write(&mut a).unwrap();
        let mut short_ids = a.clone();
        short_ids.truncate(a.len() - 1); // drop final newline
        assert!(EmbeddingFile::read(short_ids.as_slice()).is_err());
        assert!(EmbeddingFile::read(&a[..20]).is_err());
        let mut extra = a.clone();
        extra.extend_from_slice(b"extra\n");
        assert!(EmbeddingFile::read(extra.as_slice()).is_err());
        assert!(EmbeddingFile::new(2, vec!["a".into()], vec![1.0]).is_err());
        assert!(EmbeddingFile::new(1, vec!["a\nb".into()], vec![1.0]).is_err());
    }
}
