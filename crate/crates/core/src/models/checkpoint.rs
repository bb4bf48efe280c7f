//! Single-file checkpoints.
//!
//! ```text
//! ARGSEG-CHECKPOINT\n
//! version=1\n
//! arch=bl\n ... spec keys ...
//! meta.<key>=<value>\n ... optional run metadata ...
//! ---\n
//! u32 block count
//! per block: u32 name length, name (UTF-8), u64 rows, u64 cols, rows·cols f64
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Layer, Matrix};

use super::{build_model, ArchitectureId, ModelInstance, ModelSpec};

pub const CHECKPOINT_MAGIC: &str = "ARGSEG-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_END: &str = "---";

/// A model together with free-form run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelInstance,
    pub meta: BTreeMap<String, String>,
}

fn spec_lines(spec: &ModelSpec) -> Vec<(&'static str, String)> {
    vec![
        ("arch", spec.arch.as_str().to_string()),
        ("input_dim", spec.input_dim.to_string()),
        ("hidden", spec.hidden.to_string()),
        (
            "inter_stage_dim",
            spec.inter_stage_dim.map_or("none".to_string(), |d| d.to_string()),
        ),
        ("heads_cap", spec.heads_cap.to_string()),
        ("attention_dim", spec.attention_dim.to_string()),
        ("seed", spec.seed.to_string()),
    ]
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    model: &ModelInstance,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut header = format!("{CHECKPOINT_MAGIC}\nversion={CHECKPOINT_VERSION}\n");
    for (k, v) in spec_lines(model.spec()) {
        header.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Format(format!(
                "checkpoint metadata `{k}` must be a single line without `=` in the key"
            )));
        }
        header.push_str(&format!("meta.{k}={v}\n"));
    }
    header.push_str(HEADER_END);
    header.push('\n');

    let params = model.parameters();
    let mut buf = header.into_bytes();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint(
    path: &Path,
    model: &ModelInstance,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut fs::File::open(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint header is not terminated".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))
    }
}

fn parse_field<T: std::str::FromStr>(fields: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("checkpoint field `{key}` has invalid value `{raw}`")))
}

fn parse_spec(fields: &BTreeMap<String, String>) -> Result<ModelSpec> {
    let arch: ArchitectureId = fields
        .get("arch")
        .ok_or_else(|| Error::Format("checkpoint header lacks `arch`".into()))?
        .parse()
        .map_err(|e: Error| Error::Format(e.to_string()))?;
    let inter_stage_dim = match fields.get("inter_stage_dim").map(String::as_str) {
        Some("none") => None,
        _ => Some(parse_field(fields, "inter_stage_dim")?),
    };
    Ok(ModelSpec {
        arch,
        input_dim: parse_field(fields, "input_dim")?,
        hidden: parse_field(fields, "hidden")?,
        inter_stage_dim,
        heads_cap: parse_field(fields, "heads_cap")?,
        attention_dim: parse_field(fields, "attention_dim")?,
        seed: parse_field(fields, "seed")?,
    })
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.line()? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an argseg checkpoint".into()));
    }
    let mut fields = BTreeMap::new();
    let mut meta = BTreeMap::new();
    loop {
        let line = cur.line()?;
        if line == HEADER_END {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed checkpoint header line `{line}`")))?;
        match k.strip_prefix("meta.") {
            Some(mk) => meta.insert(mk.to_string(), v.to_string()),
            None => fields.insert(k.to_string(), v.to_string()),
        };
    }
    let version: u32 = parse_field(&fields, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let spec = parse_spec(&fields)?;
    let mut model = build_model(&spec).map_err(|e| Error::Format(e.to_string()))?;

    let count = cur.u32("block count")? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameter blocks, the spec needs {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let len = cur.u32("block name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "block name")?)
            .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Format(format!(
                "expected parameter block `{}`, found `{name}`",
                p.name
            )));
        }
        let rows = cur.u64("block rows")? as usize;
        let cols = cur.u64("block cols")? as usize;
        if (rows, cols) != (p.value.rows(), p.value.cols()) {
            return Err(Error::Format(format!(
                "block `{name}` is {rows}x{cols}, the spec needs {}",
                p.value.shape()
            )));
        }
        let raw = cur.take(rows * cols * 8, name)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        p.value = Matrix::from_vec(rows, cols, values)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last parameter block".into()));
    }
    Ok(Checkpoint { model, meta })
}
