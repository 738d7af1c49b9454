//! Flat little-endian checkpoint encoding for dense networks.
//!
//! A network is stored as
//!
//! ```text
//! u32 n                      number of widths
//! u32 widths[n]
//! u8  batch_norm             0 or 1
//! u8  output                 0 identity, 1 sigmoid, 2 mish
//! per layer, in order:
//!   f64 weight[fan_in * fan_out]     row-major
//!   f64 bias[fan_out]
//!   u8  has_mask, then f64 mask[fan_in * fan_out] if set
//!   if the layer is normalized: f64 gamma, beta, running_mean, running_var
//! ```
//!
//! Files start with an 8-byte magic and a `u32` version chosen by the caller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mlp, OutputActivation, Parameter};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self {
            buf: magic.to_vec(),
        };
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn mlp(&mut self, m: &Mlp<f64>) {
        let widths = m.widths();
        self.u32(widths.len() as u32);
        for w in widths {
            self.u32(w as u32);
        }
        self.u8(m.has_batch_norm() as u8);
        self.u8(match m.output {
            OutputActivation::Identity => 0,
            OutputActivation::Sigmoid => 1,
            OutputActivation::Mish => 2,
        });
        for l in &m.layers {
            self.f64s(l.weight.value.values());
            self.f64s(l.bias.value.values());
            match l.weight.mask() {
                Some(mask) => {
                    self.u8(1);
                    self.f64s(mask.values());
                }
                None => self.u8(0),
            }
            if let Some(bn) = &l.norm {
                self.f64s(bn.gamma.value.values());
                self.f64s(bn.beta.value.values());
                self.f64s(&bn.running_mean);
                self.f64s(&bn.running_var);
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic and returns the reader with the stored version.
    pub fn new(buf: &'a [u8], magic: &[u8; 8]) -> Result<(Self, u32)> {
        if buf.len() < 12 || &buf[..8] != magic {
            return Err(Error::Format("checkpoint magic mismatch".into()));
        }
        let mut r = Self { buf, pos: 8 };
        let v = r.u32()?;
        Ok((r, v))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn mlp(&mut self) -> Result<Mlp<f64>> {
        let n = self.u32()? as usize;
        if n > 1024 {
            return Err(Error::Format("implausible layer count".into()));
        }
        let widths = (0..n)
            .map(|_| self.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let bn = self.u8()? == 1;
        let output = match self.u8()? {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Sigmoid,
            2 => OutputActivation::Mish,
            k => return Err(Error::Format(format!("unknown output activation {k}"))),
        };
        let mut m = Mlp::new(&widths, bn, output, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::Format(e.to_string()))?;
        for l in &mut m.layers {
            let (fi, fo) = (l.fan_in(), l.fan_out());
            let w = Tensor::new(fi, fo, self.f64s(fi * fo)?)?;
            l.weight = Parameter::new(w);
            l.bias = Parameter::new(Tensor::row(self.f64s(fo)?));
            if self.u8()? == 1 {
                l.weight
                    .set_mask(Tensor::new(fi, fo, self.f64s(fi * fo)?)?)?;
            }
            if let Some(norm) = &mut l.norm {
                norm.gamma = Parameter::new(Tensor::row(self.f64s(fo)?));
                norm.beta = Parameter::new(Tensor::row(self.f64s(fo)?));
                norm.running_mean = self.f64s(fo)?;
                norm.running_var = self.f64s(fo)?;
            }
        }
        Ok(m)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(())
    }
}
