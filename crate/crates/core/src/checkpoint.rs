//! Checkpoint files: a text manifest followed by raw little-endian `f64` data.
//!
//! ```text
//! BEVFUSE-CHECKPOINT 1
//! meta <key> <value...>
//! tensor <name> <d0>x<d1>x... <byte offset>
//! ...
//! end <payload bytes>
//! <payload>
//! ```
//!
//! Byte offsets are relative to the first payload byte. Tensors are written
//! in lexicographic name order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "BEVFUSE-CHECKPOINT 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Single-line metadata values (config JSON, step counters, ...).
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = String::new();
        head.push_str(MAGIC);
        head.push('\n');
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::contract(format!("meta entry {k:?} is not single-line")));
            }
            head.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            head.push_str(&format!("tensor {name} {} {offset}\n", dims.join("x")));
            offset += t.len() * 8;
        }
        head.push_str(&format!("end {offset}\n"));
        let mut out = head.into_bytes();
        out.reserve(offset);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let bad = |msg: &str| Error::Data(format!("checkpoint: {msg}"));
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(bad("missing header"));
        }
        let mut ckpt = Checkpoint::default();
        let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let payload_len = loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(bad("truncated manifest"));
            }
            let l = line.trim_end_matches('\n');
            let (kind, rest) = l.split_once(' ').ok_or_else(|| bad("malformed manifest line"))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let [name, dims, off] = parts[..] else {
                        return Err(bad("malformed tensor line"));
                    };
                    let shape = dims
                        .split('x')
                        .map(str::parse)
                        .collect::<std::result::Result<Vec<usize>, _>>()
                        .map_err(|_| bad("bad shape"))?;
                    let off = off.parse().map_err(|_| bad("bad offset"))?;
                    entries.push((name.to_string(), shape, off));
                }
                "end" => break rest.parse::<usize>().map_err(|_| bad("bad payload length"))?,
                _ => return Err(bad("unknown manifest entry")),
            }
        };
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        if payload.len() != payload_len {
            return Err(bad("payload length mismatch"));
        }
        for (name, shape, off) in entries {
            let n: usize = shape.iter().product();
            let end = off + n * 8;
            if end > payload.len() {
                return Err(bad("tensor extends past payload"));
            }
            let data = payload[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ckpt.tensors.insert(name, Tensor::new(&shape, data)?);
        }
        Ok(ckpt)
    }

    /// Writes through a temporary file so an interrupted save leaves the
    /// previous checkpoint intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
