//! ECGB container: a flat little-endian file of labeled multi-lead records.
//!
//! ```text
//! "ECGB" | version u16 = 1 | n_classes u16 | n_classes * (u16 len, UTF-8 name)
//! n_leads u16 | n_records u32
//! per record: id (u16 len, UTF-8) | label u16 | split u8 | length u32 | n_leads * length f32, lead-major
//! ```

use std::path::Path;

use super::{EcgDataset, EcgRecord, Split};
use crate::binio::{put_short_string, write_atomic, ByteReader};
use crate::error::{Error, Result};

pub const ECGB_MAGIC: &[u8; 4] = b"ECGB";
pub const ECGB_VERSION: u16 = 1;

pub fn encode_ecgb(dataset: &EcgDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let too_big = |what: &str| Error::invalid(format!("{what} does not fit the container"));
    let mut out = Vec::new();
    out.extend_from_slice(ECGB_MAGIC);
    out.extend_from_slice(&ECGB_VERSION.to_le_bytes());
    let n_classes = u16::try_from(dataset.class_names.len()).map_err(|_| too_big("class count"))?;
    out.extend_from_slice(&n_classes.to_le_bytes());
    for name in &dataset.class_names {
        put_short_string(&mut out, name)?;
    }
    let n_leads = u16::try_from(dataset.n_leads).map_err(|_| too_big("lead count"))?;
    out.extend_from_slice(&n_leads.to_le_bytes());
    let n_records = u32::try_from(dataset.records.len()).map_err(|_| too_big("record count"))?;
    out.extend_from_slice(&n_records.to_le_bytes());
    for r in &dataset.records {
        put_short_string(&mut out, &r.record_id)?;
        out.extend_from_slice(&(r.label as u16).to_le_bytes());
        out.push(r.split.code());
        let len = u32::try_from(r.length).map_err(|_| too_big("record length"))?;
        out.extend_from_slice(&len.to_le_bytes());
        for v in &r.leads {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ecgb(bytes: &[u8]) -> Result<EcgDataset> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4, "magic")? != ECGB_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "not an ECGB file (bad magic)".into(),
        });
    }
    let version = r.u16("version")?;
    if version != ECGB_VERSION {
        return r.fail(format!("unsupported ECGB version {version}"));
    }
    let n_classes = r.u16("class count")? as usize;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        class_names.push(r.short_string("class name")?);
    }
    let n_leads = r.u16("lead count")? as usize;
    let n_records = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(n_records.min(bytes.len()));
    for _ in 0..n_records {
        let record_id = r.short_string("record id")?;
        let label_at = r.offset();
        let label = r.u16("label")? as usize;
        if label >= n_classes {
            return Err(Error::Format {
                offset: label_at,
                detail: format!("record {record_id}: label {label} >= {n_classes} classes"),
            });
        }
        let split_code = r.u8("split")?;
        let split = match Split::from_code(split_code) {
            Some(s) => s,
            None => return r.fail(format!("record {record_id}: unknown split code {split_code}")),
        };
        let length = r.u32("record length")? as usize;
        if length == 0 {
            return r.fail(format!("record {record_id}: zero length"));
        }
        let count = length.saturating_mul(n_leads);
        let raw = r.bytes(count.saturating_mul(4), "lead samples")?;
        let leads = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(EcgRecord {
            record_id,
            label,
            split,
            length,
            leads,
            original_length: length,
        });
    }
    if !r.is_at_end() {
        return r.fail("trailing bytes after the last record");
    }
    Ok(EcgDataset {
        records,
        class_names,
        n_leads,
    })
}

pub fn write_ecgb(dataset: &EcgDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ecgb(dataset)?)
}

pub fn read_ecgb(path: impl AsRef<Path>) -> Result<EcgDataset> {
    decode_ecgb(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EcgDataset {
        EcgDataset {
            records: vec![EcgRecord {
                record_id: "r1".into(),
                label: 1,
                split: Split::Val,
                length: 2,
                leads: vec![0.5, -1.25, f32::MIN_POSITIVE, 3.0],
                original_length: 2,
            }],
            class_names: vec!["NORM".into(), "MI".into()],
            n_leads: 2,
        }
    }

    #[test]
    fn exact_byte_layout() {
        let bytes = encode_ecgb(&tiny()).unwrap();
        let mut expect = b"ECGB".to_vec();
        expect.extend([1, 0, 2, 0, 4, 0]);
        expect.extend(b"NORM");
        expect.extend([2, 0]);
        expect.extend(b"MI");
        expect.extend([2, 0, 1, 0, 0, 0, 2, 0]);
        expect.extend(b"r1");
        expect.extend([1, 0, 1, 2, 0, 0, 0]);
        for v in [0.5f32, -1.25, f32::MIN_POSITIVE, 3.0] {
            expect.extend(v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
        assert_eq!(decode_ecgb(&bytes).unwrap(), tiny());
    }

    #[test]
    fn corrupt_inputs_are_rejected_with_offsets() {
        let bytes = encode_ecgb(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_ecgb(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_ecgb(&bad), Err(Error::Format { offset: 6, .. })));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(
                matches!(decode_ecgb(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_ecgb(&extra).is_err());
    }
}
