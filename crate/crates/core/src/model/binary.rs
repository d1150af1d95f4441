//! Binary embedding container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GMVP" | version: u8 = 1 | dim: u32 | count: u64
//! count × ( id_len: u16 | id: UTF-8 bytes | dim × f32 )
//! ```

use std::io::{self, Read, Write};

use super::EmbeddingSet;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GMVP";
pub const VERSION: u8 = 1;

pub fn write_embeddings<W: Write>(set: &EmbeddingSet, mut out: W) -> Result<()> {
    if set.dim() == 0 {
        return Err(Error::ZeroDim);
    }
    let dim = u32::try_from(set.dim()).map_err(|_| Error::param("dim", "exceeds u32"))?;
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&(set.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(set.dim() * 4 + 64);
    for (id, row) in set.iter() {
        buf.clear();
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for x in row {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(src: &mut R, buf: &mut [u8], context: &'static str) -> Result<()> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated { context },
        _ => Error::Io(e),
    })
}

pub fn read_embeddings<R: Read>(mut src: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut src, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut header = [0u8; 13];
    read_exact_or(&mut src, &mut header, "header")?;
    if header[0] != VERSION {
        return Err(Error::UnsupportedVersion(header[0]));
    }
    let dim = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[5..13].try_into().unwrap());
    // Cap the up-front reservation; a corrupt count must not allocate wildly.
    let mut set = EmbeddingSet::with_capacity(dim, count.min(1 << 20) as usize)?;

    let mut vec_bytes = vec![0u8; dim * 4];
    let mut row = vec![0f32; dim];
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact_or(&mut src, &mut len, "record id length")?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut src, &mut id, "record id")?;
        let id = String::from_utf8(id).map_err(|_| Error::InvalidId)?;
        read_exact_or(&mut src, &mut vec_bytes, "record vector")?;
        for (x, b) in row.iter_mut().zip(vec_bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().unwrap());
        }
        set.push(id, &row)?;
    }
    Ok(set)
}
