//! VAE checkpoint: the 8-byte magic `RASHVAE\0`, a `u32` version, `u32`
//! height, width and latent size, the `f64` decoder σ, then the trunk, μ head, log-variance head
//! and decoder in the network encoding of [`crate::nn::codec`].

use std::path::Path;

use super::VaeModel;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::nn::codec::{Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RASHVAE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &VaeModel) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u32(model.height as u32);
    w.u32(model.width as u32);
    w.u32(model.latent_dim as u32);
    w.f64s(&[model.decoder_sigma]);
    for net in model.networks() {
        w.mlp(net);
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<VaeModel> {
    let (mut r, version) = Reader::new(bytes, CHECKPOINT_MAGIC)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported VAE checkpoint version {version}"
        )));
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let latent_dim = r.u32()? as usize;
    let decoder_sigma = r.f64s(1)?[0];
    let model = VaeModel {
        decoder_sigma,
        height,
        width,
        latent_dim,
        trunk: r.mlp()?,
        mu_head: r.mlp()?,
        logvar_head: r.mlp()?,
        decoder: r.mlp()?,
    };
    r.finish()?;
    let pixels = height * width;
    let ok = model.trunk.input_dim() == pixels
        && model.mu_head.output_dim() == latent_dim
        && model.logvar_head.output_dim() == latent_dim
        && model.decoder.input_dim() == latent_dim
        && model.decoder.output_dim() == pixels;
    if !ok {
        return Err(Error::Format(
            "VAE checkpoint networks do not fit together".into(),
        ));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &VaeModel) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel> {
    decode(&std::fs::read(path)?)
}
