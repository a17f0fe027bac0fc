//! Binary model file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "QIDXNET1" | version u32 | config_hash u64
//! spec: vocab_size, embed_dim, input_len, pooling, heads, head_width,
//!       hidden count, (size, activation) pairs     (u32 each)
//! vocab: token count u32, then len-prefixed UTF-8 tokens in id order
//! meta:  entry count u32, then len-prefixed key/value string pairs
//! tensors: per tensor in declaration order: element count u32, f64 LE data
//! payload_hash u64 over every byte after the magic
//! ```
//!
//! `config_hash` is FNV-1a over the canonical spec+vocab encoding; the
//! loader recomputes both hashes and rejects mismatches, so truncated or
//! bit-flipped files fail loudly instead of yielding garbage parameters.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Activation, NetworkSpec, Params, Pooling};
use crate::query::Vocabulary;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"QIDXNET1";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config hash mismatch: header says {header:#018x}, contents hash to {actual:#018x}")]
    ConfigHashMismatch { header: u64, actual: u64 },
    #[error("payload hash mismatch (file corrupt or truncated)")]
    PayloadCorrupt,
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// A deserialized model: everything needed to rebuild a network and its
/// tokenizer.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub spec: NetworkSpec,
    pub vocab: Vocabulary,
    pub params: Params,
    pub meta: BTreeMap<String, String>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    }
}

fn pooling_code(p: Pooling) -> u32 {
    match p {
        Pooling::MaskedMean => 0,
        Pooling::Concat => 1,
    }
}

fn encode_spec_and_vocab(spec: &NetworkSpec, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = Vec::new();
    push_u32(&mut out, spec.vocab_size as u32);
    push_u32(&mut out, spec.embed_dim as u32);
    push_u32(&mut out, spec.input_len as u32);
    push_u32(&mut out, pooling_code(spec.pooling));
    push_u32(&mut out, spec.heads as u32);
    push_u32(&mut out, spec.head_width as u32);
    push_u32(&mut out, spec.hidden.len() as u32);
    for &(size, act) in &spec.hidden {
        push_u32(&mut out, size as u32);
        push_u32(&mut out, activation_code(act));
    }
    push_u32(&mut out, vocab.len() as u32);
    for token in vocab.tokens() {
        push_str(&mut out, token);
    }
    out
}

/// Hash of the architecture + vocabulary, embedded in the file header.
pub fn config_hash(spec: &NetworkSpec, vocab: &Vocabulary) -> u64 {
    fnv1a(&encode_spec_and_vocab(spec, vocab))
}

/// Serialize a model. Byte-identical for identical inputs.
pub fn save_model(
    path: &Path,
    spec: &NetworkSpec,
    vocab: &Vocabulary,
    params: &Params,
    meta: &BTreeMap<String, String>,
) -> Result<(), ModelIoError> {
    let mut payload = Vec::new();
    push_u32(&mut payload, MODEL_FORMAT_VERSION);
    payload.extend_from_slice(&config_hash(spec, vocab).to_le_bytes());
    payload.extend_from_slice(&encode_spec_and_vocab(spec, vocab));
    push_u32(&mut payload, meta.len() as u32);
    for (k, v) in meta {
        push_str(&mut payload, k);
        push_str(&mut payload, v);
    }
    for (_, tensor) in params.flatten() {
        push_u32(&mut payload, tensor.len() as u32);
        for &x in tensor {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&payload)?;
    out.write_all(&fnv1a(&payload).to_le_bytes())?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelIoError::Malformed("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelIoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelIoError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| ModelIoError::Malformed("invalid UTF-8 string".into()))
    }
}

/// Load and verify a model file.
pub fn load_model(path: &Path) -> Result<ModelFile, ModelIoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let payload = &bytes[MAGIC.len()..bytes.len() - 8];
    let stored_hash = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a(payload) != stored_hash {
        return Err(ModelIoError::PayloadCorrupt);
    }

    let mut cur = Cursor {
        buf: payload,
        pos: 0,
    };
    let version = cur.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let header_config_hash = cur.u64()?;

    let vocab_size = cur.u32()? as usize;
    let embed_dim = cur.u32()? as usize;
    let input_len = cur.u32()? as usize;
    let pooling = match cur.u32()? {
        0 => Pooling::MaskedMean,
        1 => Pooling::Concat,
        other => {
            return Err(ModelIoError::Malformed(format!(
                "unknown pooling code {other}"
            )))
        }
    };
    let heads = cur.u32()? as usize;
    let head_width = cur.u32()? as usize;
    let hidden_count = cur.u32()? as usize;
    let mut hidden = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        let size = cur.u32()? as usize;
        let act = match cur.u32()? {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            other => {
                return Err(ModelIoError::Malformed(format!(
                    "unknown activation code {other}"
                )))
            }
        };
        hidden.push((size, act));
    }
    let spec = NetworkSpec {
        vocab_size,
        embed_dim,
        hidden,
        heads,
        head_width,
        input_len,
        pooling,
    };

    let token_count = cur.u32()? as usize;
    let mut tokens = Vec::with_capacity(token_count);
    for _ in 0..token_count {
        tokens.push(cur.string()?);
    }
    let vocab = Vocabulary::from_tokens(tokens)
        .map_err(|e| ModelIoError::Malformed(format!("bad vocabulary: {e}")))?;

    let actual = config_hash(&spec, &vocab);
    if actual != header_config_hash {
        return Err(ModelIoError::ConfigHashMismatch {
            header: header_config_hash,
            actual,
        });
    }

    let meta_count = cur.u32()? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..meta_count {
        let k = cur.string()?;
        let v = cur.string()?;
        meta.insert(k, v);
    }

    let mut params = Params::zeros(&spec);
    for (name, tensor) in params.flatten_mut() {
        let count = cur.u32()? as usize;
        if count != tensor.len() {
            return Err(ModelIoError::Malformed(format!(
                "tensor `{name}` has {count} elements, expected {}",
                tensor.len()
            )));
        }
        for slot in tensor.iter_mut() {
            *slot = cur.f64()?;
        }
    }
    if cur.pos != payload.len() {
        return Err(ModelIoError::Malformed(
            "trailing bytes after tensors".into(),
        ));
    }

    Ok(ModelFile {
        spec,
        vocab,
        params,
        meta,
    })
}
