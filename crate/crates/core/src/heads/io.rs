//! Head checkpoint: the 8-byte magic `RASHHEAD`, a `u32` version, a `u8`
//! scheme number, a `u8` feature-stack flag, then the optional feature
//! stack and the head in the network encoding of [`crate::nn::codec`].
//! Masks travel inside the network encoding.

use std::path::Path;

use super::{HeadModel, LogRow};
use crate::error::{Error, Result};
use crate::fsio::{csv_bytes, write_atomic};
use crate::nn::codec::{Reader, Writer};
use crate::Scheme;

pub const HEAD_MAGIC: &[u8; 8] = b"RASHHEAD";
const HEAD_VERSION: u32 = 1;

pub fn encode_head(model: &HeadModel) -> Vec<u8> {
    let mut w = Writer::new(HEAD_MAGIC, HEAD_VERSION);
    w.u8(model.scheme.number());
    w.u8(model.features.is_some() as u8);
    if let Some(f) = &model.features {
        w.mlp(f);
    }
    w.mlp(&model.head);
    w.finish()
}

pub fn decode_head(bytes: &[u8]) -> Result<HeadModel> {
    let (mut r, version) = Reader::new(bytes, HEAD_MAGIC)?;
    if version != HEAD_VERSION {
        return Err(Error::Format(format!(
            "unsupported head checkpoint version {version}"
        )));
    }
    let scheme = Scheme::from_number(r.u8()?)
        .ok_or_else(|| Error::Format("unknown scheme in head checkpoint".into()))?;
    let features = match r.u8()? {
        0 => None,
        1 => Some(r.mlp()?),
        v => return Err(Error::Format(format!("bad feature flag {v}"))),
    };
    let head = r.mlp()?;
    r.finish()?;
    if let Some(f) = &features {
        if f.output_dim() != head.input_dim() {
            return Err(Error::Format("feature stack does not fit the head".into()));
        }
    }
    if head.output_dim() != 1 {
        return Err(Error::Format("head must have a single output".into()));
    }
    Ok(HeadModel {
        scheme,
        features,
        head,
    })
}

pub fn save_head(path: &Path, model: &HeadModel) -> Result<()> {
    write_atomic(path, &encode_head(model))
}

pub fn load_head(path: &Path) -> Result<HeadModel> {
    decode_head(&std::fs::read(path)?)
}

/// Training log as CSV `epoch,split,loss,accuracy,active_weights`.
pub fn log_csv(log: &[LogRow]) -> Result<Vec<u8>> {
    csv_bytes(log)
}
