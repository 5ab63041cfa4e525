//! `KGF1` binary graph snapshot.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"KGF1"
//! u32 relation_capacity
//! u32 n_concepts,  n_concepts  x (u32 len, utf8 bytes)
//! u32 n_relations, n_relations x (u32 len, utf8 bytes)
//! u32 n_triples,   n_triples   x (u32 subject, u16 relation, u32 object,
//!                                 u8 has_surface, [u32 len, utf8 bytes])
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::graph::{ConceptId, KnowledgeGraph, RelationId, RelationVocab, Triple};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"KGF1";
const FORMAT: &str = "graph snapshot";

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<()> {
    out.write_u32::<LittleEndian>(s.len() as u32)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(input: &mut R) -> Result<String> {
    let len = input.read_u32::<LittleEndian>()? as usize;
    let mut buf = Vec::new();
    input.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::bad_format(FORMAT, "truncated string"));
    }
    String::from_utf8(buf).map_err(|_| Error::bad_format(FORMAT, "invalid utf-8"))
}

pub fn write_snapshot<W: Write>(graph: &KnowledgeGraph, mut out: W) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_u32::<LittleEndian>(graph.relations().capacity() as u32)?;
    out.write_u32::<LittleEndian>(graph.num_concepts() as u32)?;
    for label in graph.concept_labels() {
        write_str(&mut out, label)?;
    }
    out.write_u32::<LittleEndian>(graph.relations().len() as u32)?;
    for name in graph.relations().names() {
        write_str(&mut out, name)?;
    }
    out.write_u32::<LittleEndian>(graph.num_triples() as u32)?;
    for t in graph.triples() {
        out.write_u32::<LittleEndian>(t.subject.0)?;
        out.write_u16::<LittleEndian>(t.relation.0)?;
        out.write_u32::<LittleEndian>(t.object.0)?;
        match &t.surface {
            Some(s) => {
                out.write_u8(1)?;
                write_str(&mut out, s)?;
            }
            None => out.write_u8(0)?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<KnowledgeGraph> {
    let eof = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::bad_format(FORMAT, "truncated")
        } else {
            Error::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(eof)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::bad_format(FORMAT, "bad magic"));
    }
    let capacity = input.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let n_concepts = input.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut concepts = Vec::with_capacity(n_concepts.min(1 << 20));
    for _ in 0..n_concepts {
        concepts.push(read_str(&mut input)?);
    }
    let n_relations = input.read_u32::<LittleEndian>().map_err(eof)? as usize;
    if n_relations > capacity {
        return Err(Error::bad_format(FORMAT, "more relations than capacity"));
    }
    let mut relations = RelationVocab::with_capacity(capacity);
    for _ in 0..n_relations {
        let name = read_str(&mut input)?;
        let id = relations.intern(&name)?;
        if id.index() + 1 != relations.len() {
            return Err(Error::bad_format(FORMAT, format!("duplicate relation {name:?}")));
        }
    }
    let n_triples = input.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut triples = Vec::with_capacity(n_triples.min(1 << 24));
    for _ in 0..n_triples {
        let subject = ConceptId(input.read_u32::<LittleEndian>().map_err(eof)?);
        let relation = RelationId(input.read_u16::<LittleEndian>().map_err(eof)?);
        let object = ConceptId(input.read_u32::<LittleEndian>().map_err(eof)?);
        let surface = match input.read_u8().map_err(eof)? {
            0 => None,
            1 => Some(read_str(&mut input)?),
            other => return Err(Error::bad_format(FORMAT, format!("bad surface flag {other}"))),
        };
        triples.push(Triple { subject, relation, object, surface });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::bad_format(FORMAT, "trailing bytes"));
    }
    KnowledgeGraph::from_parts(concepts, relations, triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_graph;

    fn sample() -> KnowledgeGraph {
        let src = "IsA\tcat\tanimal\tcats are animals\nAtLocation\tfish\twater\nIsA\tfish\tanimal\n";
        load_graph(src.as_bytes(), 34).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let g = sample();
        let mut a = Vec::new();
        write_snapshot(&g, &mut a).unwrap();
        let h = read_snapshot(a.as_slice()).unwrap();
        let mut b = Vec::new();
        write_snapshot(&h, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(h.triples(), g.triples());
        assert_eq!(h.out_edges(ConceptId(2)), g.out_edges(ConceptId(2)));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let g = sample();
        let mut a = Vec::new();
        write_snapshot(&g, &mut a).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(read_snapshot(bad.as_slice()), Err(Error::BadFormat { .. })));
        for cut in [3, 10, a.len() - 1] {
            assert!(matches!(read_snapshot(&a[..cut]), Err(Error::BadFormat { .. })), "cut {cut}");
        }
        let mut long = a.clone();
        long.push(0);
        assert!(read_snapshot(long.as_slice()).is_err());
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let g = sample();
        let mut a = Vec::new();
        write_snapshot(&g, &mut a).unwrap();
        // first triple's subject id sits right after the relation table
        let n = a.len();
        let tail_len = 3 * (4 + 2 + 4 + 1) + 4 + "cats are animals".len();
        let subject_at = n - tail_len;
        a[subject_at..subject_at + 4].copy_from_slice(&99u32.to_le_bytes());
        assert!(read_snapshot(a.as_slice()).is_err());
    }
}
