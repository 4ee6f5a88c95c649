//! Checkpoint format: magic "SNRF", version, a JSON config block, the
//! partition table, then parameters as little-endian f32. Round-trips are
//! bit-exact. Optimizer state lives in a sidecar file so the main format
//! stays minimal.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::NetworkConfig;
use crate::optim::Adam;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"SNRF";
pub const VERSION: u16 = 1;
const OPT_MAGIC: &[u8; 4] = b"SNOP";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub net: NetworkConfig,
    pub case: String,
    pub step: u64,
    pub seed: u64,
    pub rng_word_pos_lo: u64,
    pub rng_word_pos_hi: u64,
}

impl CheckpointMeta {
    pub fn rng_word_pos(&self) -> u128 {
        (self.rng_word_pos_hi as u128) << 64 | self.rng_word_pos_lo as u128
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng_word_pos_lo = pos as u64;
        self.rng_word_pos_hi = (pos >> 64) as u64;
    }
}

pub fn save(path: &Path, meta: &CheckpointMeta, store: &ParamStore<f32>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());

    let config = serde_json::to_vec(meta)
        .map_err(|e| CoreError::invalid(format!("config serialization: {e}")))?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);

    let tensors = store.layout().tensors();
    let partitions: Vec<(String, u64, u64)> = crate::params::Partition::ALL
        .iter()
        .map(|p| {
            let r = store.layout().partition_range(*p);
            (p.name().to_string(), r.start as u64, (r.end - r.start) as u64)
        })
        .collect();
    let _ = tensors;
    buf.extend_from_slice(&(partitions.len() as u32).to_le_bytes());
    for (name, offset, len) in &partitions {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&len.to_le_bytes());
    }

    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for &v in store.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    fs::write(path, buf).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, ParamStore<f32>)> {
    let mut file =
        fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(CoreError::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                *pos
            )));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(CoreError::CorruptCheckpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CoreError::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let config_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, config_len)?)
        .map_err(|e| CoreError::CorruptCheckpoint(format!("config block: {e}")))?;

    let n_parts = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut table = Vec::with_capacity(n_parts);
    for _ in 0..n_parts {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| CoreError::CorruptCheckpoint(format!("partition name: {e}")))?;
        let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        table.push((name, offset, len));
    }

    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
    }

    let store = ParamStore::from_vec(&meta.net, data)?;
    for (name, offset, len) in table {
        match crate::params::Partition::from_name(&name) {
            Some(p) => {
                let r = store.layout().partition_range(p);
                if r.start as u64 != offset || (r.end - r.start) as u64 != len {
                    return Err(CoreError::CorruptCheckpoint(format!(
                        "partition {name} spans [{offset}, {}) but layout expects [{}, {})",
                        offset + len,
                        r.start,
                        r.end
                    )));
                }
            }
            None => {
                return Err(CoreError::CorruptCheckpoint(format!(
                    "unknown partition {name}"
                )))
            }
        }
    }
    Ok((meta, store))
}

pub fn save_optimizer(path: &Path, adam: &Adam<f32>) -> Result<()> {
    let (m, v, t) = adam.state();
    let mut buf = Vec::with_capacity(16 + 8 * m.len());
    buf.extend_from_slice(OPT_MAGIC);
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
    for &x in m {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for &x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_optimizer(path: &Path, n: usize) -> Result<Adam<f32>> {
    let buf = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    if buf.len() < 20 || &buf[..4] != OPT_MAGIC {
        return Err(CoreError::CorruptCheckpoint("bad optimizer sidecar".into()));
    }
    let t = u64::from_le_bytes(buf[4..12].try_into().unwrap());
    let count = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    if count != n || buf.len() != 20 + 8 * count {
        return Err(CoreError::CorruptCheckpoint(format!(
            "optimizer sidecar holds {count} entries, expected {n}"
        )));
    }
    let mut m = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for i in 0..count {
        m.push(f32::from_le_bytes(
            buf[20 + 4 * i..24 + 4 * i].try_into().unwrap(),
        ));
    }
    let base = 20 + 4 * count;
    for i in 0..count {
        v.push(f32::from_le_bytes(
            buf[base + 4 * i..base + 4 + 4 * i].try_into().unwrap(),
        ));
    }
    Ok(Adam::restore(n, m, v, t))
}
