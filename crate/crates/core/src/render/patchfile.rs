//! Binary patch-tensor container.
//!
//! Layout (little-endian): magic `PXM4`, `u32` version, `u32` sequence count,
//! then per sequence `u32` num_patches, `u32` patch_size, the attention mask
//! as packed bits (LSB first, `ceil(num_patches / 8)` bytes), pixels as `f32`
//! row-major, `u32` word count and the word spans as `u32` pairs.

use std::io::{Read, Write};

use super::{PatchSequence, RenderError};

pub const PATCH_FILE_MAGIC: &[u8; 4] = b"PXM4";
pub const PATCH_FILE_VERSION: u32 = 1;

pub fn write_patch_file<W: Write>(mut w: W, seqs: &[PatchSequence]) -> Result<(), RenderError> {
    w.write_all(PATCH_FILE_MAGIC)?;
    put_u32(&mut w, PATCH_FILE_VERSION)?;
    put_u32(&mut w, len_u32(seqs.len())?)?;
    for s in seqs {
        let n = s.num_patches();
        put_u32(&mut w, len_u32(n)?)?;
        put_u32(&mut w, len_u32(s.patch_size)?)?;
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, &a) in s.attention_mask.iter().enumerate() {
            if a {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
        let mut buf = Vec::with_capacity(s.pixels.len() * 4);
        for &p in &s.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        put_u32(&mut w, len_u32(s.word_spans.len())?)?;
        for &(a, b) in &s.word_spans {
            put_u32(&mut w, len_u32(a)?)?;
            put_u32(&mut w, len_u32(b)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_patch_file<R: Read>(mut r: R) -> Result<Vec<PatchSequence>, RenderError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PATCH_FILE_MAGIC {
        return Err(RenderError::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != PATCH_FILE_VERSION {
        return Err(RenderError::Format(format!("unsupported version {version}")));
    }
    let count = get_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for seq in 0..count {
        let n = get_u32(&mut r)? as usize;
        let p = get_u32(&mut r)? as usize;
        let mut bits = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bits)?;
        let attention_mask: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let mut raw = vec![0u8; n * p * p * 4];
        r.read_exact(&mut raw)?;
        let pixels: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let words = get_u32(&mut r)? as usize;
        let mut word_spans = Vec::with_capacity(words.min(1 << 16));
        for _ in 0..words {
            let a = get_u32(&mut r)? as usize;
            let b = get_u32(&mut r)? as usize;
            if a >= b || b > n {
                return Err(RenderError::Format(format!("sequence {seq}: bad word span ({a}, {b})")));
            }
            word_spans.push((a, b));
        }
        out.push(PatchSequence {
            patch_size: p,
            pixels,
            attention_mask,
            word_spans,
            source_text: String::new(),
            truncated_words: 0,
        });
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32, RenderError> {
    u32::try_from(n).map_err(|_| RenderError::Format(format!("{n} exceeds u32")))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, RenderError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
