//! IDX container parsing and emission (big-endian, magic-tagged), bit-exact.

use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn read_u32(cur: &mut Cursor<Vec<u8>>, what: &str) -> Result<u32> {
    let offset = cur.position();
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::IdxParse { offset, detail: format!("truncated while reading {what}") })
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    if magic != MAGIC_IMAGES {
        return Err(Error::IdxParse { offset: 0, detail: format!("bad magic {magic:#010x}, want {MAGIC_IMAGES:#010x}") });
    }
    let n = read_u32(&mut cur, "image count")? as usize;
    let rows = read_u32(&mut cur, "rows")? as usize;
    let cols = read_u32(&mut cur, "cols")? as usize;
    let expected = n * rows * cols;
    let offset = cur.position();
    let mut pixels = vec![0u8; expected];
    let got = cur.read(&mut pixels)?;
    if got != expected {
        return Err(Error::IdxParse {
            offset,
            detail: format!("payload expected {expected} bytes, got {got}"),
        });
    }
    Ok(IdxImages { n, rows, cols, pixels })
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<IdxLabels> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    if magic != MAGIC_LABELS {
        return Err(Error::IdxParse { offset: 0, detail: format!("bad magic {magic:#010x}, want {MAGIC_LABELS:#010x}") });
    }
    let n = read_u32(&mut cur, "label count")? as usize;
    let offset = cur.position();
    let mut labels = vec![0u8; n];
    let got = cur.read(&mut labels)?;
    if got != n {
        return Err(Error::IdxParse { offset, detail: format!("payload expected {n} bytes, got {got}") });
    }
    Ok(IdxLabels { labels })
}

pub fn write_idx_images(path: impl AsRef<Path>, img: &IdxImages) -> Result<()> {
    if img.pixels.len() != img.n * img.rows * img.cols {
        return Err(Error::shape(
            "write_idx",
            format!("{} pixels for {}x{}x{}", img.pixels.len(), img.n, img.rows, img.cols),
        ));
    }
    let mut f = fs::File::create(path.as_ref())?;
    f.write_u32::<BigEndian>(MAGIC_IMAGES)?;
    f.write_u32::<BigEndian>(img.n as u32)?;
    f.write_u32::<BigEndian>(img.rows as u32)?;
    f.write_u32::<BigEndian>(img.cols as u32)?;
    f.write_all(&img.pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &IdxLabels) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_u32::<BigEndian>(MAGIC_LABELS)?;
    f.write_u32::<BigEndian>(labels.labels.len() as u32)?;
    f.write_all(&labels.labels)?;
    Ok(())
}
