//! Model checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! AUDIO2ANIM-CHECKPOINT 1\n
//! key = value\n ...              hyperparameters, codec ranges, audio norm
//! end\n
//! u32 tensor_count
//! per tensor:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 ndim, u64 dims[ndim]
//!   f64 data[product(dims)]      row-major
//! ```
//!
//! Header keys: `model.tau`, `model.d`, `model.width`, `model.heads`,
//! `model.layers`, `model.ff_width`, `model.mask` (`vanilla` | `tbm`),
//! `model.slopes` (`geometric` | `fixed:<v>`), `model.convention`
//! (`literal` | `additive`), `model.positional` (`0` | `1`),
//! `model.audio_window`, `audio_norm.mean`, `audio_norm.std`, `codec.d`
//! and `codec.range.NN = lo,hi` for NN in 00..22. Floats are written with
//! enough digits to round-trip exactly. Tensors appear in parameter order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::CodecSpec;
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvRecord};
use crate::model::{AudioNorm, MappingModel, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &str = "AUDIO2ANIM-CHECKPOINT";
pub const VERSION: u32 = 1;

pub fn config_to_record(c: &ModelConfig, rec: &mut KvRecord) {
    rec.set("model.tau", c.tau);
    rec.set("model.d", c.d);
    rec.set("model.width", c.width);
    rec.set("model.heads", c.heads);
    rec.set("model.layers", c.layers);
    rec.set("model.ff_width", c.ff_width);
    rec.set("model.mask", c.mask);
    rec.set("model.slopes", c.slopes);
    rec.set("model.convention", c.convention);
    rec.set("model.positional", u8::from(c.positional));
    rec.set("model.audio_window", c.audio_window);
}

pub fn config_from_record(rec: &KvRecord) -> Result<ModelConfig> {
    let c = ModelConfig {
        tau: rec.require_parsed("model.tau")?,
        d: rec.require_parsed("model.d")?,
        width: rec.require_parsed("model.width")?,
        heads: rec.require_parsed("model.heads")?,
        layers: rec.require_parsed("model.layers")?,
        ff_width: rec.require_parsed("model.ff_width")?,
        mask: rec.require_parsed("model.mask")?,
        slopes: rec.require_parsed("model.slopes")?,
        convention: rec.require_parsed("model.convention")?,
        positional: rec.require_parsed::<u8>("model.positional")? != 0,
        audio_window: rec.require_parsed("model.audio_window")?,
    };
    c.validate()?;
    Ok(c)
}

pub fn to_bytes(model: &MappingModel) -> Vec<u8> {
    let mut rec = KvRecord::new();
    config_to_record(&model.config, &mut rec);
    model.codec.write_record(&mut rec);
    rec.set("audio_norm.mean", fmt_f64(model.audio_norm.mean));
    rec.set("audio_norm.std", fmt_f64(model.audio_norm.std));

    let mut out = format!("{MAGIC} {VERSION}\n{}end\n", rec.to_text()).into_bytes();
    let names = model.param_names();
    let params = model.params();
    out.extend((params.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(params) {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated body".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Splits off the text header; returns it and the byte offset of the body.
fn split_header(bytes: &[u8]) -> Result<(KvRecord, usize)> {
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing magic line".into()))?;
    let magic = std::str::from_utf8(&bytes[..first_nl]).map_err(|_| Error::Format("bad magic".into()))?;
    let Some(version) = magic.strip_prefix(MAGIC).map(str::trim) else {
        return Err(Error::Format("not a checkpoint".into()));
    };
    if version != VERSION.to_string() {
        return Err(Error::Format(format!("unsupported version {version:?}")));
    }
    let mut pos = first_nl + 1;
    let header_start = pos;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("header not terminated by `end`".into()))?;
        let line = &rest[..nl];
        if line == b"end" {
            let text = std::str::from_utf8(&bytes[header_start..pos])
                .map_err(|_| Error::Format("header is not UTF-8".into()))?;
            let rec = KvRecord::parse(text)?;
            return Ok((rec, pos + nl + 1));
        }
        pos += nl + 1;
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<MappingModel> {
    let (rec, body) = split_header(bytes)?;
    let config = config_from_record(&rec)?;
    let codec = CodecSpec::from_record(&rec)?;
    let audio_norm = AudioNorm {
        mean: rec.require_parsed("audio_norm.mean")?,
        std: rec.require_parsed("audio_norm.std")?,
    };
    if !(audio_norm.mean.is_finite() && audio_norm.std.is_finite() && audio_norm.std > 0.0) {
        return Err(Error::Format("invalid audio normalization".into()));
    }

    let mut cur = Cursor { buf: bytes, pos: body };
    let count = cur.u32()? as usize;
    let expected = 5 + 10 * config.layers;
    if count != expected {
        return Err(Error::Format(format!("expected {expected} tensors, found {count}")));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut len: usize = 1;
        for _ in 0..ndim {
            let d = usize::try_from(cur.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            shape.push(d);
        }
        let raw = cur.take(len.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let model = MappingModel::from_params(config, codec, audio_norm, tensors)?;
    if model.param_names() != names {
        return Err(Error::Format("tensor names do not match the parameter layout".into()));
    }
    Ok(model)
}

pub fn save(model: &MappingModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MappingModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Short identifier of a model: the first 16 hex digits of the SHA-256 of
/// its serialized form.
pub fn model_hash(model: &MappingModel) -> String {
    let digest = Sha256::digest(to_bytes(model));
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_model;

    #[test]
    fn bytes_round_trip() {
        let m = tiny_model(3);
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(model_hash(&back), model_hash(&m));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&tiny_model(1));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(from_bytes(&wrong).is_err());
        assert!(from_bytes(b"").is_err());
    }
}
