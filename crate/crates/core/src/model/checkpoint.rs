//! Binary checkpoints.
//!
//! Adapter (`HFLOW1`), all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       6     magic "HFLOW1"
//! 6       2     format version (u16) = 1
//! 8       4     embedding dim (u32)
//! 12      4     hidden dim (u32)
//! 16      4     latent dim M (u32)
//! 20      4     flow length T (u32)
//! 24      4     class count (u32)
//! 28      4     reflector activation (u32): 0 none, 1 tanh
//! 32      8     seed (u64)
//! 40      8     parameter count n (u64)
//! 48      8n    parameters (f64) in declaration order
//! ```
//!
//! Declaration order is: hidden, mu head, log-var head, flow first map, flow
//! layers 2..T, classifier; each block is its row-major weight then its bias.
//!
//! Toy encoder (`HFBASE`): magic "HFBASE", version u16 = 1, layer count L
//! (u32), L + 1 widths (u32 each: input dim then each layer's output), class
//! count (u32), seed (u64), parameter count (u64), then the layers' and the
//! head's weight/bias blocks as f64.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::ReflectorActivation;
use crate::model::adapter::{AdapterDims, AdapterModel};
use crate::model::base::ToyBaseEncoder;

pub const ADAPTER_MAGIC: &[u8; 6] = b"HFLOW1";
pub const BASE_MAGIC: &[u8; 6] = b"HFBASE";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterCheckpoint {
    pub model: AdapterModel,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseCheckpoint {
    pub encoder: ToyBaseEncoder,
    pub seed: u64,
}

fn u32_field(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Checkpoint(format!("{what} {value} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
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

fn header(r: &mut Reader<'_>, magic: &[u8; 6]) -> Result<()> {
    if r.take(6)? != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn encode_adapter(ckpt: &AdapterCheckpoint) -> Result<Vec<u8>> {
    let d = ckpt.model.dims();
    let params = ckpt.model.to_flat();
    let mut out = Vec::with_capacity(48 + 8 * params.len());
    out.extend_from_slice(ADAPTER_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (value, what) in [
        (d.embedding_dim, "embedding dim"),
        (d.hidden_dim, "hidden dim"),
        (d.latent_dim, "latent dim"),
        (d.flow_length, "flow length"),
        (d.class_count, "class count"),
    ] {
        out.extend_from_slice(&u32_field(value, what)?.to_le_bytes());
    }
    let act: u32 = match d.activation {
        ReflectorActivation::None => 0,
        ReflectorActivation::Tanh => 1,
    };
    out.extend_from_slice(&act.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_adapter(bytes: &[u8]) -> Result<AdapterCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    header(&mut r, ADAPTER_MAGIC)?;
    let embedding_dim = r.u32()?;
    let hidden_dim = r.u32()?;
    let latent_dim = r.u32()?;
    let flow_length = r.u32()?;
    let class_count = r.u32()?;
    let activation = match r.u32()? {
        0 => ReflectorActivation::None,
        1 => ReflectorActivation::Tanh,
        other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
    };
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    let dims = AdapterDims {
        embedding_dim,
        hidden_dim,
        latent_dim,
        class_count,
        flow_length,
        activation,
    };
    dims.validate()
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    // Shapes come from the header; the values are overwritten below.
    let mut model = AdapterModel::init(&dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    if count != model.param_count() {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters, dims imply {}",
            model.param_count()
        )));
    }
    let params = r.f64s(count)?;
    r.finish()?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    model.load_flat(&params)?;
    Ok(AdapterCheckpoint { model, seed })
}

pub fn encode_base(ckpt: &BaseCheckpoint) -> Result<Vec<u8>> {
    let enc = &ckpt.encoder;
    let params = enc.to_flat();
    let mut out = Vec::new();
    out.extend_from_slice(BASE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(enc.layers.len(), "layer count")?.to_le_bytes());
    for w in enc.widths() {
        out.extend_from_slice(&u32_field(w, "width")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_field(enc.class_count(), "class count")?.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_base(bytes: &[u8]) -> Result<BaseCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    header(&mut r, BASE_MAGIC)?;
    let layers = r.u32()?;
    if layers == 0 || layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
    }
    let widths = (0..=layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let class_count = r.u32()?;
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    let mut encoder = ToyBaseEncoder::init(&widths, class_count, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    if count != encoder.param_count() {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters, widths imply {}",
            encoder.param_count()
        )));
    }
    let params = r.f64s(count)?;
    r.finish()?;
    encoder.load_flat(&params)?;
    Ok(BaseCheckpoint { encoder, seed })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn save_adapter(path: &Path, ckpt: &AdapterCheckpoint) -> Result<()> {
    write_file(path, &encode_adapter(ckpt)?)
}

pub fn load_adapter(path: &Path) -> Result<AdapterCheckpoint> {
    decode_adapter(&read_file(path)?)
}

pub fn save_base(path: &Path, ckpt: &BaseCheckpoint) -> Result<()> {
    write_file(path, &encode_base(ckpt)?)
}

pub fn load_base(path: &Path) -> Result<BaseCheckpoint> {
    decode_base(&read_file(path)?)
}
