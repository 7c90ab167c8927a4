//! Binary checkpoint container.
//!
//! Layout: `HWSPCKPT`, format version, observation layout version, config JSON
//! length and bytes (network and environment settings), tensor count, then per tensor its name, shape and
//! little-endian f64 data, followed by a sha256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{NetConfig, PolicyNet};
use super::tape::ParamStore;
use super::tensor::Tensor;
use crate::observation::LAYOUT_VERSION;
use crate::world::EnvConfig;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Meta {
    net: NetConfig,
    #[serde(default)]
    env: Option<EnvConfig>,
}

pub const MAGIC: &[u8; 8] = b"HWSPCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(net: &PolicyNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
    let meta = Meta {
        net: net.config,
        env: net.env.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params.tensors.len() as u32).to_le_bytes());
    for (name, t) in net.params.names.iter().zip(&net.params.tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<PolicyNet> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!("checkpoint format {version}, expected {FORMAT_VERSION}")));
    }
    let layout_version = r.u32()?;
    if layout_version != LAYOUT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "observation layout version {layout_version}, expected {LAYOUT_VERSION}"
        )));
    }
    let len = r.u32()? as usize;
    let meta: Meta =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::CorruptCheckpoint(format!("config block: {e}")))?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not utf-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor::from_vec(rows, cols, data));
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    let mut net = PolicyNet::with_params(meta.net, store)?;
    net.env = meta.env;
    Ok(net)
}

pub fn save(net: &PolicyNet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Load and require compatibility with the caller's token count and layout.
pub fn load_for(path: &Path, tokens: usize, layout: &crate::observation::ObsLayout) -> Result<PolicyNet> {
    let net = load(path)?;
    if net.config.tokens != tokens {
        return Err(Error::VersionMismatch(format!(
            "checkpoint has {} action tokens, expected {tokens}",
            net.config.tokens
        )));
    }
    if net.config.layout != *layout {
        return Err(Error::LayoutMismatch(format!("checkpoint layout {:?}, expected {:?}", net.config.layout, layout)));
    }
    Ok(net)
}
