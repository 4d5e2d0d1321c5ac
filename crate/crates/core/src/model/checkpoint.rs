//! Binary checkpoint format.
//!
//! ```text
//! "SPSY"  u32 version
//! u32 n_tokens, then per token: u32 byte length, UTF-8 bytes
//! u32 n_tensors, then per tensor:
//!     u32 name length, name bytes, u32 ndims, u32 dims…, f64 data (row-major)
//! ```
//! All integers and floats are little-endian. Network shape is stored in
//! `meta.*` tensors of shape `[1]`.

use std::collections::HashMap;
use std::path::Path;

use super::params::{named, named_mut};
use super::{ModelConfig, ModelError, SpecModel, Vocab};

pub const MAGIC: &[u8; 4] = b"SPSY";
pub const FORMAT_VERSION: u32 = 1;

fn meta(config: &ModelConfig) -> [(&'static str, usize); 8] {
    [
        ("meta.d_model", config.d_model),
        ("meta.n_blocks", config.n_blocks),
        ("meta.n_heads", config.n_heads),
        ("meta.max_len", config.max_len),
        ("meta.d_pool", config.d_pool),
        ("meta.head_hidden", config.head_hidden),
        ("meta.gen_hidden", config.gen_hidden),
        ("meta.gen_embed", config.gen_embed),
    ]
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("fits in u32")).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f64>) {
    put_str(out, name);
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &SpecModel, vocab: &Vocab) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, vocab.len());
    for t in vocab.tokens() {
        put_str(&mut out, t);
    }
    let tensors = named(model);
    let config = model.config();
    let meta = meta(&config);
    put_u32(&mut out, meta.len() + tensors.len());
    for (name, v) in meta {
        put_tensor(&mut out, name, &[1], std::iter::once(v as f64));
    }
    for (name, m) in tensors {
        put_tensor(&mut out, &name, &[m.nrows(), m.ncols()], m.iter().copied());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("string is not UTF-8".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(SpecModel, Vocab), ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let n_tokens = r.u32()?;
    let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocab::from_tokens(tokens)?;
    let n_tensors = r.u32()?;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndims = r.u32()?;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} is too large")))?;
        let bytes = r.take(count.checked_mul(8).ok_or_else(|| {
            ModelError::Checkpoint(format!("tensor {name} is too large"))
        })?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }

    let mut get_meta = |name: &str| -> Result<usize, ModelError> {
        match tensors.remove(name) {
            Some((dims, data)) if dims == [1] && data[0] >= 1.0 && data[0].fract() == 0.0 => {
                Ok(data[0] as usize)
            }
            _ => Err(ModelError::Checkpoint(format!("missing or invalid {name}"))),
        }
    };
    let config = ModelConfig {
        d_model: get_meta("meta.d_model")?,
        n_blocks: get_meta("meta.n_blocks")?,
        n_heads: get_meta("meta.n_heads")?,
        max_len: get_meta("meta.max_len")?,
        d_pool: get_meta("meta.d_pool")?,
        head_hidden: get_meta("meta.head_hidden")?,
        gen_hidden: get_meta("meta.gen_hidden")?,
        gen_embed: get_meta("meta.gen_embed")?,
    };
    if config.d_model % config.n_heads != 0 || config.d_model > 1 << 16 || config.n_blocks > 64 {
        return Err(ModelError::Checkpoint("implausible network shape".into()));
    }
    let mut model = SpecModel::new(&config, vocab.len(), 0);
    for (name, m) in named_mut(&mut model) {
        let (dims, data) = tensors
            .remove(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
        if dims != [m.nrows(), m.ncols()] {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} has shape {dims:?}, expected {:?}",
                [m.nrows(), m.ncols()]
            )));
        }
        for (dst, src) in m.iter_mut().zip(data) {
            *dst = src;
        }
    }
    if let Some(name) = tensors.keys().min() {
        return Err(ModelError::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok((model, vocab))
}

pub fn save(model: &SpecModel, vocab: &Vocab, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(model, vocab)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(SpecModel, Vocab), ModelError> {
    let buf = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&buf)
}
