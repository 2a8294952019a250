//! Model files and training-state sidecars.
//!
//! Both start with a 4-byte magic, a u32 format version and the channel
//! configuration as u32s, and end with the SHA-256 of everything before
//! it. The model file (`EE3D`) stores parameters and batch-norm buffers as
//! f32 in declaration order. The training state (`EE3S`) stores them as
//! f64 together with the Adam moments and step, so a resumed run matches
//! an uninterrupted one bit for bit.

use std::fs;
use std::path::Path;

use ee3d_core::net::{AdamState, NetConfig, NetworkParams};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"EE3D";
pub const STATE_MAGIC: &[u8; 4] = b"EE3S";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensors_f32(&mut self, ts: &[Vec<f64>]) {
        for t in ts {
            self.u32(t.len() as u32);
            t.iter().for_each(|&v| self.0.extend_from_slice(&(v as f32).to_le_bytes()));
        }
    }
    fn tensors_f64(&mut self, ts: &[Vec<f64>]) {
        for t in ts {
            self.u32(t.len() as u32);
            t.iter().for_each(|&v| self.0.extend_from_slice(&v.to_le_bytes()));
        }
    }
    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.0);
        self.0.extend_from_slice(&digest);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies the magic and the trailing checksum.
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 40 || &bytes[..4] != magic {
            return Err(Error::format(format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::format("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported format version {version}")));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or_else(|| Error::format("truncated file"))?;
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn tensors(&mut self, into: &mut [Vec<f64>], width: usize) -> Result<()> {
        for t in into.iter_mut() {
            let n = self.u32()? as usize;
            if n != t.len() {
                return Err(Error::format(format!("tensor of {n} values where {} expected", t.len())));
            }
            let raw = self.take(n * width)?;
            for (v, c) in t.iter_mut().zip(raw.chunks_exact(width)) {
                *v = match width {
                    4 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                };
            }
        }
        Ok(())
    }
    fn end(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::format("trailing bytes after the last tensor"))
        }
    }
}

fn config_words(c: &NetConfig) -> Vec<u32> {
    let mut v = vec![c.input_height, c.input_width];
    v.extend(c.encoder);
    v.extend(c.decoder);
    v.push(c.confidence);
    v.extend(c.lifting_conv);
    v.extend(c.lifting_dense);
    v.push(c.dw_kernel);
    v.into_iter().map(|x| x as u32).collect()
}

fn write_config(w: &mut Writer, c: &NetConfig) {
    let words = config_words(c);
    w.u32(words.len() as u32);
    words.into_iter().for_each(|x| w.u32(x));
}

fn read_config(r: &mut Reader) -> Result<NetConfig> {
    let n = r.u32()? as usize;
    if n != 19 {
        return Err(Error::format(format!("config block of {n} words")));
    }
    let w = (0..n).map(|_| r.u32().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
    let arr = |s: &[usize]| s.to_vec();
    let cfg = NetConfig {
        input_height: w[0],
        input_width: w[1],
        encoder: arr(&w[2..8]).try_into().expect("6"),
        decoder: arr(&w[8..12]).try_into().expect("4"),
        confidence: w[12],
        lifting_conv: arr(&w[13..16]).try_into().expect("3"),
        lifting_dense: arr(&w[16..18]).try_into().expect("2"),
        dw_kernel: w[18],
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_model(params: &NetworkParams) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    w.u32(FORMAT_VERSION);
    write_config(&mut w, &params.config);
    w.tensors_f32(&params.values);
    w.tensors_f32(&params.buffers);
    w.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader::open(bytes, MODEL_MAGIC)?;
    let cfg = read_config(&mut r)?;
    let mut params = NetworkParams::zeros(&cfg)?;
    r.tensors(params.values_mut(), 4)?;
    r.tensors(params.buffers_mut(), 4)?;
    r.end()?;
    Ok(params)
}

pub fn save_model(path: &Path, params: &NetworkParams) -> Result<()> {
    fs::write(path, encode_model(params)).at(path)
}

pub fn load_model(path: &Path) -> Result<NetworkParams> {
    decode_model(&fs::read(path).at(path)?).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub params: NetworkParams,
    pub adam: AdamState,
    /// Hash of the training configuration the state belongs to.
    pub config_hash: [u8; 32],
}

pub fn encode_state(s: &TrainingState) -> Vec<u8> {
    let mut w = Writer(STATE_MAGIC.to_vec());
    w.u32(FORMAT_VERSION);
    write_config(&mut w, &s.params.config);
    w.0.extend_from_slice(&s.config_hash);
    w.u64(s.adam.step);
    w.tensors_f64(&s.params.values);
    w.tensors_f64(&s.params.buffers);
    w.tensors_f64(&s.adam.m);
    w.tensors_f64(&s.adam.v);
    w.finish()
}

pub fn decode_state(bytes: &[u8]) -> Result<TrainingState> {
    let mut r = Reader::open(bytes, STATE_MAGIC)?;
    let cfg = read_config(&mut r)?;
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let step = r.u64()?;
    let mut params = NetworkParams::zeros(&cfg)?;
    r.tensors(params.values_mut(), 8)?;
    r.tensors(params.buffers_mut(), 8)?;
    let mut adam = AdamState::new(&params);
    adam.step = step;
    r.tensors(&mut adam.m, 8)?;
    r.tensors(&mut adam.v, 8)?;
    r.end()?;
    Ok(TrainingState { params, adam, config_hash })
}

pub fn save_state(path: &Path, s: &TrainingState) -> Result<()> {
    fs::write(path, encode_state(s)).at(path)
}

pub fn load_state(path: &Path) -> Result<TrainingState> {
    decode_state(&fs::read(path).at(path)?)
}
