//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SPEARCKP" | version u16 | config_len u32 | config JSON
//! | n_tensors u32 | per tensor: name_len u32, name, ndim u32, dims u64.., f32 data
//! | crc32 u32 over every preceding byte
//! ```
//!
//! Trainable tensors are always stored. Frozen tensors (embedding table and
//! encoder) are stored too when requested; anything not stored is rebuilt
//! from the config seed on load.

use std::io::{Read, Write};
use std::path::Path;

use super::linalg::Real;
use super::params::{init_model, SpearModel};
use super::ModelConfig;
use crate::error::{Result, SpearError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPEARCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

const LAYER_TENSORS: [&str; 16] = [
    "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_gain", "ln2_bias", "w1", "b1",
    "w2", "b2",
];

fn bad(msg: impl Into<String>) -> SpearError {
    SpearError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad("length does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `model`. With `include_frozen` the frozen embedding table
/// and all encoder weights are written as well; a trainable embedding table
/// is always written.
pub fn write_checkpoint<T: Real, W: Write>(model: &SpearModel<T>, include_frozen: bool, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config)?;
    put_u32(&mut buf, cfg.len())?;
    buf.extend_from_slice(&cfg);

    let mut tensors = model.trainable_tensors();
    if include_frozen {
        tensors.extend(model.frozen_tensors());
    }
    put_u32(&mut buf, tensors.len())?;
    for t in &tensors {
        put_u32(&mut buf, t.name.len())?;
        buf.extend_from_slice(t.name.as_bytes());
        put_u32(&mut buf, t.shape.len())?;
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf).map_err(|e| bad(format!("write failed: {e}")))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| bad("truncated"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().unwrap())).map_err(|_| bad("dimension too large"))
    }
}

/// Mutable slot and expected shape for a tensor name.
fn slot<'a, T: Real>(model: &'a mut SpearModel<T>, name: &str) -> Option<(Vec<usize>, &'a mut [T])> {
    match name {
        "prompts" => {
            let p = &mut model.prompts.prompts;
            Some((vec![p.rows, p.cols], &mut p.data[..]))
        }
        "head.weight" => Some((vec![model.head.weight.len()], &mut model.head.weight[..])),
        "head.bias" => Some((vec![1], std::slice::from_mut(&mut model.head.bias))),
        "embedding" => {
            let e = &mut model.embedding.table;
            Some((vec![e.rows, e.cols], &mut e.data[..]))
        }
        _ => {
            let rest = name.strip_prefix("encoder.")?;
            let (idx, field) = rest.split_once('.')?;
            let idx: usize = idx.parse().ok()?;
            let pos = LAYER_TENSORS.iter().position(|&f| f == field)?;
            let layer = model.encoder.layers.get_mut(idx)?;
            let shape = match field {
                "wq" | "wk" | "wv" | "wo" => vec![layer.wq.rows, layer.wq.cols],
                "w1" => vec![layer.w1.rows, layer.w1.cols],
                "w2" => vec![layer.w2.rows, layer.w2.cols],
                _ => Vec::new(),
            };
            let v = layer.tensors_mut().into_iter().nth(pos)?;
            let shape = if shape.is_empty() { vec![v.len()] } else { shape };
            Some((shape, &mut v[..]))
        }
    }
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<SpearModel<T>> {
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| bad(format!("read failed: {e}")))?;
    if data.len() < CHECKPOINT_MAGIC.len() || &data[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    if data.len() < 10 {
        return Err(bad("truncated"));
    }
    let version = u16::from_le_bytes([data[8], data[9]]);
    if version > CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (this build reads up to {CHECKPOINT_VERSION})"
        )));
    }
    if version == 0 {
        return Err(bad("invalid checkpoint version 0"));
    }
    if data.len() < 14 {
        return Err(bad("truncated"));
    }
    let (body, tail) = data.split_at(data.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch (corrupt or truncated)"));
    }

    let mut cur = Cursor { data: body, pos: 10 };
    let n = cur.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(cur.take(n)?).map_err(|e| bad(format!("invalid config: {e}")))?;
    config.validate()?;
    let mut model = init_model::<T>(&config)?;

    let count = cur.u32()?;
    for _ in 0..count {
        let n = cur.u32()?;
        let name = std::str::from_utf8(cur.take(n)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        let ndim = cur.u32()?;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(cur.u64()?);
        }
        let len: usize = shape.iter().product();
        let bytes = cur.take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let (expected, dst) = slot(&mut model, &name).ok_or_else(|| bad(format!("unknown tensor {name:?}")))?;
        if expected != shape {
            return Err(bad(format!("tensor {name} has shape {shape:?}, expected {expected:?}")));
        }
        for (d, c) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = T::of(f64::from(f32::from_le_bytes(c.try_into().unwrap())));
        }
    }
    if cur.pos != body.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &SpearModel<T>, include_frozen: bool, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SpearError::io(path, e))?;
    write_checkpoint(model, include_frozen, std::io::BufWriter::new(file))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<SpearModel<T>> {
    let file = std::fs::File::open(path).map_err(|e| SpearError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_bins: 10,
            prompt_len: 2,
            max_seq_len: 12,
            seed: 3,
            ..Default::default()
        }
    }

    fn trained() -> SpearModel<f32> {
        let mut m = init_model::<f32>(&small()).unwrap();
        for v in &mut m.prompts.prompts.data {
            *v += 0.5;
        }
        m.head.bias = -1.25;
        m
    }

    #[test]
    fn round_trip_both_modes() {
        let m = trained();
        for include in [false, true] {
            let mut buf = Vec::new();
            write_checkpoint(&m, include, &mut buf).unwrap();
            let back: SpearModel<f32> = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(back.checksum(), m.checksum());
            assert_eq!(back, m);
        }
    }

    #[test]
    fn frozen_modes_differ_in_size() {
        let m = trained();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_checkpoint(&m, false, &mut a).unwrap();
        write_checkpoint(&m, true, &mut b).unwrap();
        assert!(b.len() > a.len());
    }

    #[test]
    fn rejects_corruption() {
        let m = trained();
        let mut buf = Vec::new();
        write_checkpoint(&m, false, &mut buf).unwrap();

        let mut magic = buf.clone();
        magic[0] = b'X';
        let e = read_checkpoint::<f32, _>(&magic[..]).unwrap_err();
        assert!(e.to_string().contains("magic"), "{e}");

        let mut newer = buf.clone();
        newer[8..10].copy_from_slice(&2u16.to_le_bytes());
        let e = read_checkpoint::<f32, _>(&newer[..]).unwrap_err();
        assert!(e.to_string().contains("unsupported"), "{e}");

        let truncated = &buf[..buf.len() - 9];
        let e = read_checkpoint::<f32, _>(truncated).unwrap_err();
        assert!(matches!(e, SpearError::Checkpoint(_)));

        let mut flipped = buf.clone();
        let mid = buf.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(read_checkpoint::<f32, _>(&flipped[..]).is_err());
    }
}
