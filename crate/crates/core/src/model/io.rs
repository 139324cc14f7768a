//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SCDN" | version u16 | config_len u32 | config text (UTF-8 key=value lines)
//! entry_count u32
//! per entry: name_len u16 | name | dtype u8 (0 = f64) | rank u8 | dims u32 * rank | values
//! ```
//!
//! Entries cover every parameter and every batch-norm running statistic.

use std::collections::BTreeMap;
use std::path::Path;

use super::{build_model, ModelConfig, ScdnnModel};
use crate::binio::{put_short_string, write_atomic, ByteReader};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SCDN";
pub const MODEL_VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;

pub fn encode_model(model: &ScdnnModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let cfg = model.config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .parameters()
        .into_iter()
        .map(|p| (p.name, p.shape, p.data))
        .collect();
    for (name, values) in model.buffers() {
        entries.push((name, vec![values.len()], values));
    }
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        put_short_string(&mut out, &name)?;
        out.push(DTYPE_F64);
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ScdnnModel> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "not a model file (bad magic)".into(),
        });
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return r.fail(format!("unsupported model version {version}"));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_at = r.offset();
    let cfg_text = std::str::from_utf8(r.bytes(cfg_len, "config")?).map_err(|_| Error::Format {
        offset: cfg_at,
        detail: "config is not UTF-8".into(),
    })?;
    let config = ModelConfig::from_text(cfg_text).map_err(|e| Error::Format {
        offset: cfg_at,
        detail: e.to_string(),
    })?;
    let count = r.u32("entry count")? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let name = r.short_string("entry name")?;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return r.fail(format!("entry {name}: unsupported dtype {dtype}"));
        }
        let rank = r.u8("rank")? as usize;
        let mut numel = 1usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u32("dimension")? as usize;
            numel = numel.saturating_mul(d);
            shape.push(d);
        }
        if numel.saturating_mul(8) > bytes.len() {
            return r.fail(format!("entry {name}: {numel} values cannot fit in the file"));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64("parameter value")?);
        }
        if entries.insert(name.clone(), (shape, data)).is_some() {
            return r.fail(format!("duplicate entry {name}"));
        }
    }
    if !r.is_at_end() {
        return r.fail("trailing bytes after the parameter table");
    }

    let mut model = build_model(&config, 0).map_err(|e| Error::Format {
        offset: cfg_at,
        detail: e.to_string(),
    })?;
    let expected: Vec<(String, Vec<usize>)> = model.parameters().into_iter().map(|p| (p.name, p.shape)).collect();
    let buffer_names: Vec<(String, usize)> = model.buffers().into_iter().map(|(n, v)| (n, v.len())).collect();
    if entries.len() != expected.len() + buffer_names.len() {
        return Err(Error::Format {
            offset: r.offset(),
            detail: format!(
                "file has {} entries, model expects {}",
                entries.len(),
                expected.len() + buffer_names.len()
            ),
        });
    }
    let missing = |name: &str| Error::Format {
        offset: r.offset(),
        detail: format!("missing or misshapen entry {name}"),
    };
    for (name, shape) in &expected {
        match entries.get(name) {
            Some((s, _)) if s == shape => {}
            _ => return Err(missing(name)),
        }
    }
    for (name, len) in &buffer_names {
        match entries.get(name) {
            Some((s, _)) if s == &[*len] => {}
            _ => return Err(missing(name)),
        }
    }
    model.visit_parameters_mut(|name, data| data.copy_from_slice(&entries[name].1));
    let names = model.norm_names();
    for (name, norm) in names.iter().zip(model.norms_mut()) {
        norm.running_mean
            .copy_from_slice(&entries[&format!("{name}.running_mean")].1);
        norm.running_var
            .copy_from_slice(&entries[&format!("{name}.running_var")].1);
    }
    Ok(model)
}

pub fn save_model(model: &ScdnnModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(model)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScdnnModel> {
    decode_model(&std::fs::read(path)?)
}
