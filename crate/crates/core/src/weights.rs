//! Binary weight files.
//!
//! ```text
//! "DRSW"            4 bytes magic
//! version           u32 little-endian (currently 1)
//! header_len        u32 little-endian
//! header            header_len bytes of UTF-8 text
//! payload           f64 little-endian, every net's parameters in order
//! ```
//!
//! The header is a list of `key=value` lines. Each `net=<sizes>;<activation>`
//! line declares one network (e.g. `net=13,32,1;tanh`); nets appear in the
//! payload in the order of their lines, each in [`DenseNet`] parameter order
//! (per layer: row-major weights, then biases). Every other line is free-form
//! metadata used by multi-net containers such as a discriminator bank.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};

pub const MAGIC: &[u8; 4] = b"DRSW";
pub const FORMAT_VERSION: u32 = 1;

/// A weight file holding one or more nets plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightFile {
    pub meta: BTreeMap<String, String>,
    pub nets: Vec<DenseNet>,
}

impl WeightFile {
    pub fn single(net: DenseNet) -> Self {
        Self {
            meta: BTreeMap::new(),
            nets: vec![net],
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            if k == "net" || k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::usage(format!("invalid metadata entry {k:?}")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        for net in &self.nets {
            let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
            header.push_str(&format!("net={};{}\n", sizes.join(","), net.activation().name()));
        }
        let payload_len: usize = self.nets.iter().map(|n| n.num_params() * 8).sum();
        let mut out = Vec::with_capacity(12 + header.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for net in &self.nets {
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("bad magic, expected \"DRSW\""));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("truncated header"))?;
        let header = std::str::from_utf8(&bytes[12..header_end])
            .map_err(|_| Error::format("header is not UTF-8"))?;

        let mut meta = BTreeMap::new();
        let mut shapes = Vec::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("malformed header line {line:?}")))?;
            if k == "net" {
                shapes.push(parse_net_decl(v)?);
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }

        let mut payload = bytes[header_end..].chunks_exact(8);
        if payload.remainder().len() != 0 {
            return Err(Error::format("payload is not a whole number of f64 values"));
        }
        let expected: usize = shapes
            .iter()
            .map(|(s, _): &(Vec<usize>, Activation)| s.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>())
            .sum();
        if payload.len() != expected {
            return Err(Error::format(format!(
                "payload holds {} values, header declares {expected}",
                payload.len()
            )));
        }
        let mut nets = Vec::with_capacity(shapes.len());
        for (sizes, activation) in shapes {
            let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let params = payload
                .by_ref()
                .take(count)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            nets.push(DenseNet::from_parts(sizes, activation, params).map_err(|e| Error::format(e.to_string()))?);
        }
        Ok(Self { meta, nets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(format!("missing header key {key:?}")))
    }
}

fn parse_net_decl(v: &str) -> Result<(Vec<usize>, Activation)> {
    let (sizes, act) = v
        .split_once(';')
        .ok_or_else(|| Error::format(format!("malformed net declaration {v:?}")))?;
    let sizes = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::format(format!("bad layer sizes {sizes:?}")))?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::format(format!("bad layer sizes {sizes:?}")));
    }
    let act = Activation::parse(act.trim()).ok_or_else(|| Error::format(format!("unknown activation {act:?}")))?;
    Ok((sizes, act))
}

pub fn save_weights(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    WeightFile::single(net.clone()).save(path)
}

/// Load a file that holds exactly one net.
pub fn load_weights(path: impl AsRef<Path>) -> Result<DenseNet> {
    let mut file = WeightFile::load(path)?;
    if file.nets.len() != 1 {
        return Err(Error::format(format!("expected one net, file holds {}", file.nets.len())));
    }
    Ok(file.nets.pop().expect("length checked"))
}
