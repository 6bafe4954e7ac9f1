//! Binary checkpoint container for networks and autoencoders.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic    8 bytes  "MODEGAN\0"
//! version  u32      FORMAT_VERSION
//! kind     u8       1 = single network, 2 = autoencoder
//! kind 1:  network block
//! kind 2:  latent_dim u64, frozen u8, network block (encoder), network block (decoder)
//!
//! network block:
//!   role u8, n_layers u32,
//!   per layer: fan_in u64, fan_out u64, activation u8, slope f64,
//!              weights f64[fan_in * fan_out] (row-major), bias f64[fan_out]
//! ```
//!
//! Reals are stored as raw IEEE-754 bits, so `load(save(x))` is bit-exact.

use std::fs;
use std::path::Path;

use crate::autoencoder::AutoEncoder;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Activation, Dense, DenseNet};

pub const MAGIC: [u8; 8] = *b"MODEGAN\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_NET: u8 = 1;
const KIND_AUTOENCODER: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetRole {
    Generic = 0,
    Generator = 1,
    Discriminator = 2,
    Encoder = 3,
    Decoder = 4,
}

impl NetRole {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => NetRole::Generic,
            1 => NetRole::Generator,
            2 => NetRole::Discriminator,
            3 => NetRole::Encoder,
            4 => NetRole::Decoder,
            _ => return Err(Error::Checkpoint(format!("unknown network role {v}"))),
        })
    }
}

fn activation_tag(a: Activation) -> (u8, f64) {
    match a {
        Activation::Relu => (0, 0.0),
        Activation::LeakyRelu(s) => (1, s),
        Activation::Tanh => (2, 0.0),
        Activation::Sigmoid => (3, 0.0),
        Activation::Identity => (4, 0.0),
    }
}

fn activation_from_tag(tag: u8, slope: f64) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu(slope),
        2 => Activation::Tanh,
        3 => Activation::Sigmoid,
        4 => Activation::Identity,
        _ => return Err(Error::Checkpoint(format!("unknown activation tag {tag}"))),
    })
}

fn write_header(buf: &mut Vec<u8>, kind: u8) {
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(kind);
}

fn write_net(buf: &mut Vec<u8>, net: &DenseNet, role: NetRole) {
    buf.push(role as u8);
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        buf.extend_from_slice(&(layer.fan_in() as u64).to_le_bytes());
        buf.extend_from_slice(&(layer.fan_out() as u64).to_le_bytes());
        let (tag, slope) = activation_tag(layer.activation);
        buf.push(tag);
        buf.extend_from_slice(&slope.to_le_bytes());
        for v in layer.weights.data().iter().chain(&layer.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        // Every stored dimension must be backed by real payload bytes.
        if v == 0 || v > (self.bytes.len() as u64) {
            return Err(Error::Checkpoint(format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }

    fn header(&mut self) -> Result<u8> {
        if self.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        self.u8()
    }

    fn net(&mut self) -> Result<(NetRole, DenseNet)> {
        let role = NetRole::from_u8(self.u8()?)?;
        let n_layers = self.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::Checkpoint("network with zero layers".into()));
        }
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let fan_in = self.count("fan_in")?;
            let fan_out = self.count("fan_out")?;
            let tag = self.u8()?;
            let slope = self.f64()?;
            let activation = activation_from_tag(tag, slope)?;
            let n_w = fan_in
                .checked_mul(fan_out)
                .filter(|&n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
                .ok_or_else(|| Error::Checkpoint("weight block exceeds file size".into()))?;
            let weights = (0..n_w).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..fan_out).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                weights: Matrix::from_vec(fan_in, fan_out, weights)?,
                bias,
                activation,
            });
        }
        let net = DenseNet::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((role, net))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn net_to_bytes(net: &DenseNet, role: NetRole) -> Vec<u8> {
    let mut buf = Vec::new();
    write_header(&mut buf, KIND_NET);
    write_net(&mut buf, net, role);
    buf
}

pub fn net_from_bytes(bytes: &[u8]) -> Result<(NetRole, DenseNet)> {
    let mut r = Reader { bytes, pos: 0 };
    match r.header()? {
        KIND_NET => {}
        KIND_AUTOENCODER => {
            return Err(Error::Checkpoint(
                "file holds an autoencoder, not a single network".into(),
            ))
        }
        k => return Err(Error::Checkpoint(format!("unknown container kind {k}"))),
    }
    let out = r.net()?;
    r.finish()?;
    Ok(out)
}

pub fn autoencoder_to_bytes(ae: &AutoEncoder) -> Vec<u8> {
    let mut buf = Vec::new();
    write_header(&mut buf, KIND_AUTOENCODER);
    buf.extend_from_slice(&(ae.latent_dim() as u64).to_le_bytes());
    buf.push(ae.is_frozen() as u8);
    write_net(&mut buf, ae.encoder(), NetRole::Encoder);
    write_net(&mut buf, ae.decoder(), NetRole::Decoder);
    buf
}

pub fn autoencoder_from_bytes(bytes: &[u8]) -> Result<AutoEncoder> {
    let mut r = Reader { bytes, pos: 0 };
    match r.header()? {
        KIND_AUTOENCODER => {}
        KIND_NET => {
            return Err(Error::Checkpoint(
                "file holds a single network, not an autoencoder".into(),
            ))
        }
        k => return Err(Error::Checkpoint(format!("unknown container kind {k}"))),
    }
    let latent_dim = r.count("latent_dim")?;
    let frozen = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Checkpoint(format!("bad frozen flag {v}"))),
    };
    let (er, encoder) = r.net()?;
    let (dr, decoder) = r.net()?;
    r.finish()?;
    if er != NetRole::Encoder || dr != NetRole::Decoder {
        return Err(Error::Checkpoint(format!(
            "expected encoder/decoder roles, found {er:?}/{dr:?}"
        )));
    }
    let mut ae = AutoEncoder::from_parts(encoder, decoder)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ae.latent_dim() != latent_dim {
        return Err(Error::Checkpoint(format!(
            "header latent_dim {latent_dim} disagrees with encoder output {}",
            ae.latent_dim()
        )));
    }
    if frozen {
        ae.freeze();
    }
    Ok(ae)
}

pub fn save_net(path: &Path, net: &DenseNet, role: NetRole) -> Result<()> {
    fs::write(path, net_to_bytes(net, role)).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<(NetRole, DenseNet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    net_from_bytes(&bytes)
}

pub fn save_autoencoder(path: &Path, ae: &AutoEncoder) -> Result<()> {
    fs::write(path, autoencoder_to_bytes(ae)).map_err(|e| Error::io(path, e))
}

pub fn load_autoencoder(path: &Path) -> Result<AutoEncoder> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    autoencoder_from_bytes(&bytes)
}
