//! Binary model checkpoints.
//!
//! Layout (all little-endian): the 8-byte magic `PEALCKPT`, a u32 version, a
//! fixed config block, then every parameter tensor in the canonical
//! [`Model::for_each_param`] order, each as a u32 rank, u32 dims and f64
//! data. Loading reconstructs the model from the config block and fills the
//! tensors in order, so shape drift is caught immediately.

use std::io::Write;
use std::path::Path;

use crate::error::ModelError;
use crate::graph::Pooling;
use crate::model::lora::LoraConfig;
use crate::model::{Mode, Model, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PEALCKPT";
const VERSION: u32 = 1;

pub fn save(model: &Model, path: &Path) -> Result<(), ModelError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = &model.cfg;
    buf.push(match cfg.mode {
        Mode::Frozen => 0,
        Mode::Adapter => 1,
    });
    for v in [cfg.num_classes, cfg.feature_dim, cfg.dim, cfg.layers, cfg.heads, cfg.mlp_hidden] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(match cfg.pooling {
        Pooling::Mean => 0,
        Pooling::FirstToken => 1,
    });
    buf.extend_from_slice(&(cfg.lora.rank as u32).to_le_bytes());
    buf.extend_from_slice(&cfg.lora.alpha.to_le_bytes());
    buf.extend_from_slice(&cfg.lora.dropout.to_le_bytes());
    buf.push(cfg.lora.per_matrix as u8);

    let mut count: u32 = 0;
    model.for_each_param(&mut |_, _| count += 1);
    buf.extend_from_slice(&count.to_le_bytes());
    model.for_each_param(&mut |_, t| {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });

    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::CheckpointFormat(format!(
                "truncated while reading {what}: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn load(path: &Path) -> Result<Model, ModelError> {
    let buf = std::fs::read(path)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(ModelError::CheckpointFormat(format!(
            "bad magic {:?}, expected {:?}",
            &magic,
            &MAGIC[..]
        )));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(ModelError::CheckpointFormat(format!("unsupported version {version}")));
    }
    let mode = match c.u8("mode")? {
        0 => Mode::Frozen,
        1 => Mode::Adapter,
        other => return Err(ModelError::CheckpointFormat(format!("bad mode byte {other}"))),
    };
    let num_classes = c.u32("num_classes")? as usize;
    let feature_dim = c.u32("feature_dim")? as usize;
    let dim = c.u32("dim")? as usize;
    let layers = c.u32("layers")? as usize;
    let heads = c.u32("heads")? as usize;
    let mlp_hidden = c.u32("mlp_hidden")? as usize;
    let pooling = match c.u8("pooling")? {
        0 => Pooling::Mean,
        1 => Pooling::FirstToken,
        other => return Err(ModelError::CheckpointFormat(format!("bad pooling byte {other}"))),
    };
    let lora = LoraConfig {
        rank: c.u32("lora rank")? as usize,
        alpha: c.f64("lora alpha")?,
        dropout: c.f64("lora dropout")?,
        per_matrix: match c.u8("lora per_matrix")? {
            0 => false,
            1 => true,
            other => {
                return Err(ModelError::CheckpointFormat(format!("bad per_matrix byte {other}")))
            }
        },
    };
    let cfg = ModelConfig {
        mode,
        num_classes,
        feature_dim,
        dim,
        layers,
        heads,
        mlp_hidden,
        pooling,
        lora,
    };
    let mut model = Model::new(cfg, 0)?;

    let mut expected: u32 = 0;
    model.for_each_param(&mut |_, _| expected += 1);
    let count = c.u32("tensor count")?;
    if count != expected {
        return Err(ModelError::CheckpointFormat(format!(
            "tensor count {count} does not match config ({expected})"
        )));
    }

    // Decode tensors sequentially, then fill in canonical order.
    let mut tensors: Vec<Tensor> = Vec::with_capacity(count as usize);
    for i in 0..count {
        let rank = c.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("tensor dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(c.f64("tensor data")?);
        }
        tensors.push(Tensor::from_vec(shape, data).map_err(|e| {
            ModelError::CheckpointFormat(format!("tensor {i}: {e}"))
        })?);
    }
    if c.pos != buf.len() {
        return Err(ModelError::CheckpointFormat(format!(
            "{} trailing bytes after last tensor",
            buf.len() - c.pos
        )));
    }

    let mut iter = tensors.into_iter();
    let mut shape_err: Option<String> = None;
    model.for_each_param_mut(&mut |name, t| {
        let loaded = iter.next().expect("count validated");
        if loaded.shape() != t.shape() {
            shape_err.get_or_insert(format!(
                "{name}: checkpoint shape {:?} vs model shape {:?}",
                loaded.shape(),
                t.shape()
            ));
            return;
        }
        t.data_mut().copy_from_slice(loaded.data());
    });
    if let Some(e) = shape_err {
        return Err(ModelError::CheckpointFormat(e));
    }
    Ok(model)
}
