//! Bit-exact binary checkpoints.
//!
//! Layout (all integers little-endian):
//! magic `SMLR`, u32 version (1), u32 layer-spec count, specs as
//! (u8 kind, u32 in, u32 out) with kind 0 = Linear and 1 = ReLU, u32 tensor
//! count, per tensor (u32 ndim, ndim x u32 dims, product x f64), u8
//! mask-present flag, masks as one u8 per entry in the same tensor order,
//! u64 master seed, u64 meta iteration. Parameter tensors are interleaved
//! per linear layer: weight 0, bias 0, weight 1, bias 1, ...

use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::{LayerSpec, Network, Tensor};
use crate::pruning::SparsityMask;

const MAGIC: &[u8; 4] = b"SMLR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub specs: Vec<LayerSpec>,
    /// Interleaved per layer: weight, bias, weight, bias, ...
    pub tensors: Vec<Tensor>,
    /// Zero-one masks congruent with `tensors`, present while a pruning
    /// phase is active.
    pub masks: Option<Vec<Tensor>>,
    pub seed: u64,
    pub meta_iter: u64,
}

fn interleave(weights: &[Tensor], biases: &[Tensor]) -> Vec<Tensor> {
    weights
        .iter()
        .zip(biases)
        .flat_map(|(w, b)| [w.clone(), b.clone()])
        .collect()
}

fn deinterleave(tensors: Vec<Tensor>) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut weights = Vec::with_capacity(tensors.len() / 2);
    let mut biases = Vec::with_capacity(tensors.len() / 2);
    for (i, t) in tensors.into_iter().enumerate() {
        if i % 2 == 0 {
            weights.push(t);
        } else {
            biases.push(t);
        }
    }
    (weights, biases)
}

impl Checkpoint {
    pub fn from_network(
        net: &Network,
        mask: Option<&SparsityMask>,
        seed: u64,
        meta_iter: u64,
    ) -> Checkpoint {
        Checkpoint {
            specs: net.specs().to_vec(),
            tensors: interleave(net.weights(), net.biases()),
            masks: mask.map(|m| interleave(m.weight_masks(), m.bias_masks())),
            seed,
            meta_iter,
        }
    }

    /// Reconstructs the network (and active mask, if any).
    pub fn into_network(self) -> Result<(Network, Option<SparsityMask>)> {
        if self.tensors.len() % 2 != 0 {
            return Err(Error::Dimension(
                "checkpoint holds an odd number of parameter tensors".into(),
            ));
        }
        let (weights, biases) = deinterleave(self.tensors);
        let net = Network::from_parts(self.specs, weights, biases)?;
        let mask = match self.masks {
            None => None,
            Some(tensors) => {
                if tensors.len() != 2 * net.layer_count() {
                    return Err(Error::Dimension(
                        "checkpoint mask count does not match layers".into(),
                    ));
                }
                let (w, b) = deinterleave(tensors);
                Some(SparsityMask::from_parts(w, b, &net)?)
            }
        };
        Ok((net, mask))
    }
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = ByteWriter {
        buf: Vec::with_capacity(64),
    };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(ckpt.specs.len() as u32);
    for spec in &ckpt.specs {
        match spec {
            LayerSpec::Linear { in_dim, out_dim } => {
                w.u8(0);
                w.u32(*in_dim as u32);
                w.u32(*out_dim as u32);
            }
            LayerSpec::Relu => {
                w.u8(1);
                w.u32(0);
                w.u32(0);
            }
        }
    }
    w.u32(ckpt.tensors.len() as u32);
    for t in &ckpt.tensors {
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    match &ckpt.masks {
        None => w.u8(0),
        Some(masks) => {
            w.u8(1);
            for m in masks {
                for &v in m.data() {
                    w.u8(if v == 0.0 { 0 } else { 1 });
                }
            }
        }
    }
    w.u64(ckpt.seed);
    w.u64(ckpt.meta_iter);
    std::fs::write(path, &w.buf).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                reason: format!("ended while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic").map(|m| m != MAGIC).unwrap_or(true) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let spec_count = r.u32("spec count")? as usize;
    let mut specs = Vec::with_capacity(spec_count);
    for i in 0..spec_count {
        let kind = r.u8(&format!("spec {i} kind"))?;
        let in_dim = r.u32(&format!("spec {i} in_dim"))? as usize;
        let out_dim = r.u32(&format!("spec {i} out_dim"))? as usize;
        specs.push(match kind {
            0 => LayerSpec::Linear { in_dim, out_dim },
            1 => LayerSpec::Relu,
            other => {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    reason: format!("unknown layer kind {other}"),
                })
            }
        });
    }
    let tensor_count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for i in 0..tensor_count {
        let ndim = r.u32(&format!("tensor {i} ndim"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for d in 0..ndim {
            shape.push(r.u32(&format!("tensor {i} dim {d}"))? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for j in 0..len {
            data.push(r.f64(&format!("tensor {i} value {j}"))?);
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    let mask_flag = r.u8("mask flag")?;
    let masks = match mask_flag {
        0 => None,
        1 => {
            let mut masks = Vec::with_capacity(tensors.len());
            for (i, t) in tensors.iter().enumerate() {
                let raw = r.take(t.len(), &format!("mask {i}"))?;
                let data: Vec<f64> = raw.iter().map(|&b| if b == 0 { 0.0 } else { 1.0 }).collect();
                masks.push(Tensor::new(t.shape().to_vec(), data)?);
            }
            Some(masks)
        }
        other => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                reason: format!("bad mask flag {other}"),
            })
        }
    };
    let seed = r.u64("seed")?;
    let meta_iter = r.u64("meta_iter")?;
    if r.pos != bytes.len() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(Checkpoint {
        specs,
        tensors,
        masks,
        seed,
        meta_iter,
    })
}
