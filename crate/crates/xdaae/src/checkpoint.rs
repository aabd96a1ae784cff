//! Checkpoint container: every parameter and buffer tensor by name (shape +
//! raw little-endian f32 payload), optimizer slots, the training RNG state
//! and a free-form metadata block. Round-trips are bit-exact.
//!
//! Layout (all integers little-endian):
//!   magic   8 bytes  "XDAAECK1"
//!   step    u64
//!   rng     32-byte seed, u128 word position
//!   meta    u32 length + UTF-8 bytes
//!   tensors u32 count, then per tensor:
//!           kind u8 (0 = param, 1 = buffer), u32 name len + name,
//!           u32 ndim + u32 dims..., f32 values
//!   optims  u32 count, then per optimizer: u32 name len + name,
//!           u32 slot count, per slot: u32 name len + name, u64 t,
//!           u32 len, f32 m[len], f32 v[len]

use crate::autodiff::{Adam, AdamSlot, ParamStore};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"XDAAECK1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub meta: String,
    pub store: ParamStore<f32>,
    pub optimizers: BTreeMap<String, BTreeMap<String, AdamSlot>>,
}

impl Checkpoint {
    pub fn optimizer_slots(&self, name: &str) -> Option<&BTreeMap<String, AdamSlot>> {
        self.optimizers.get(name)
    }

    /// Metadata block parsed as key=value lines.
    pub fn meta_map(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for line in self.meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                out.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        out
    }

    /// Network sizing recorded in the metadata, for rebuilding the model
    /// around the stored parameters.
    pub fn net_config(&self) -> Result<crate::nets::NetConfig> {
        let map = self.meta_map();
        let get = |key: &str| -> Result<&String> {
            map.get(key).ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{key}`")))
        };
        Ok(crate::nets::NetConfig {
            k: get("k")?.parse().map_err(|_| Error::Checkpoint("bad `k` in metadata".into()))?,
            style_dim_a: get("style_dim_a")?.parse().map_err(|_| Error::Checkpoint("bad `style_dim_a`".into()))?,
            style_dim_b: get("style_dim_b")?.parse().map_err(|_| Error::Checkpoint("bad `style_dim_b`".into()))?,
            width: get("width")?.parse().map_err(|_| Error::Checkpoint("bad `width`".into()))?,
        })
    }

    /// Move saved slots into a fresh optimizer.
    pub fn restore_optimizer(&self, name: &str, opt: &mut Adam) {
        if let Some(slots) = self.optimizers.get(name) {
            for (k, v) in slots {
                opt.restore_slot(k.clone(), v.clone());
            }
        }
    }
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("bad string: {e}")))
}

fn write_f32s(w: &mut impl Write, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; n];
    r.read_f32_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_u64::<LittleEndian>(ck.step)?;
    w.write_all(&ck.rng_seed)?;
    w.write_u128::<LittleEndian>(ck.rng_word_pos)?;
    write_string(&mut w, &ck.meta)?;

    let total = ck.store.params_iter().count() + ck.store.buffers_iter().count();
    w.write_u32::<LittleEndian>(total as u32)?;
    for (kind, iter) in [(0u8, ck.store.params_iter().collect::<Vec<_>>()), (1u8, ck.store.buffers_iter().collect())] {
        for (name, entry) in iter {
            w.write_u8(kind)?;
            write_string(&mut w, name)?;
            w.write_u32::<LittleEndian>(entry.shape.len() as u32)?;
            for d in &entry.shape {
                w.write_u32::<LittleEndian>(*d as u32)?;
            }
            write_f32s(&mut w, &entry.values)?;
        }
    }

    w.write_u32::<LittleEndian>(ck.optimizers.len() as u32)?;
    for (name, slots) in &ck.optimizers {
        write_string(&mut w, name)?;
        w.write_u32::<LittleEndian>(slots.len() as u32)?;
        for (pname, slot) in slots {
            write_string(&mut w, pname)?;
            w.write_u64::<LittleEndian>(slot.t)?;
            w.write_u32::<LittleEndian>(slot.m.len() as u32)?;
            write_f32s(&mut w, &slot.m)?;
            write_f32s(&mut w, &slot.v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let step = r.read_u64::<LittleEndian>()?;
    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let rng_word_pos = r.read_u128::<LittleEndian>()?;
    let meta = read_string(&mut r)?;

    let total = r.read_u32::<LittleEndian>()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..total {
        let kind = r.read_u8()?;
        let name = read_string(&mut r)?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = read_f32s(&mut r, numel)?;
        match kind {
            0 => store.insert_param(name, shape, values),
            1 => store.insert_buffer(name, shape, values),
            other => return Err(Error::Checkpoint(format!("unknown tensor kind {other}"))),
        }
    }

    let n_opt = r.read_u32::<LittleEndian>()? as usize;
    let mut optimizers = BTreeMap::new();
    for _ in 0..n_opt {
        let name = read_string(&mut r)?;
        let n_slots = r.read_u32::<LittleEndian>()? as usize;
        let mut slots = BTreeMap::new();
        for _ in 0..n_slots {
            let pname = read_string(&mut r)?;
            let t = r.read_u64::<LittleEndian>()?;
            let len = r.read_u32::<LittleEndian>()? as usize;
            let m = read_f32s(&mut r, len)?;
            let v = read_f32s(&mut r, len)?;
            slots.insert(pname, AdamSlot { t, m, v });
        }
        optimizers.insert(name, slots);
    }
    Ok(Checkpoint { step, rng_seed, rng_word_pos, meta, store, optimizers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{NetConfig, Nets};

    #[test]
    fn round_trip_is_bit_exact() {
        let nets = Nets::new(NetConfig { k: 3, style_dim_a: 2, style_dim_b: 2, width: 0.1 }).unwrap();
        let store = nets.init_params(13);
        let mut slots = BTreeMap::new();
        slots.insert(
            "e_l.conv1.w".to_string(),
            AdamSlot { t: 17, m: vec![0.25, -1.5e-7, 3.25], v: vec![1e-12, 0.5, 2.0] },
        );
        let mut optimizers = BTreeMap::new();
        optimizers.insert("enc_gen".to_string(), slots);
        let ck = Checkpoint {
            step: 4242,
            rng_seed: [7u8; 32],
            rng_word_pos: (1u128 << 80) | 12345,
            meta: "run=example\nseed=9\n".to_string(),
            store,
            optimizers,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save(&path, &ck).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.step, ck.step);
        assert_eq!(back.rng_seed, ck.rng_seed);
        assert_eq!(back.rng_word_pos, ck.rng_word_pos);
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.store, ck.store);
        assert_eq!(back.optimizers, ck.optimizers);

        // byte-identical when re-saved
        let b1 = std::fs::read(&path).unwrap();
        save(&path, &back).unwrap();
        let b2 = std::fs::read(&path).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(load(&path).is_err());
    }
}
