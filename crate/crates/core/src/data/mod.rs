//! Labeled multi-lead ECG records: container format, padding, splitting and
//! a synthetic generator.

mod ecgb;
mod split;
mod synth;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ecgb::{decode_ecgb, encode_ecgb, read_ecgb, write_ecgb, ECGB_MAGIC, ECGB_VERSION};
pub use split::stratified_split;
pub use synth::{synth_generate, SynthSpec, AMPLITUDE_CAP_MV, SYNTH_SAMPLE_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
            Split::Unassigned => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            255 => Some(Split::Unassigned),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub label: usize,
    pub split: Split,
    /// Samples per lead.
    pub length: usize,
    /// Lead-major values in millivolts, `n_leads * length` long.
    pub leads: Vec<f32>,
    /// Length before any padding.
    pub original_length: usize,
}

impl EcgRecord {
    pub fn lead(&self, index: usize) -> &[f32] {
        &self.leads[index * self.length..(index + 1) * self.length]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgDataset {
    pub records: Vec<EcgRecord>,
    pub class_names: Vec<String>,
    pub n_leads: usize,
}

impl EcgDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn max_length(&self) -> usize {
        self.records.iter().map(|r| r.length).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.label >= self.class_names.len() {
                return Err(Error::invalid(format!(
                    "record {} has label {} outside the class list",
                    r.record_id, r.label
                )));
            }
            if r.length < 1 || r.leads.len() != r.length * self.n_leads {
                return Err(Error::invalid(format!(
                    "record {} has inconsistent lead data",
                    r.record_id
                )));
            }
            if r.leads.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("record {}", r.record_id)));
            }
        }
        Ok(())
    }

    /// Indices of the records assigned to `split`, in storage order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records per class.
    pub fn class_supports(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_classes()];
        for r in &self.records {
            out[r.label] += 1;
        }
        out
    }

    /// Stacks records into a `(B, n_leads, L)` tensor plus labels. All lengths must match.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let len = indices
            .first()
            .map(|&i| self.records[i].length)
            .ok_or_else(|| Error::invalid("empty batch"))?;
        let mut data = Vec::with_capacity(indices.len() * self.n_leads * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = &self.records[i];
            if r.length != len {
                return Err(Error::invalid(format!(
                    "record {} has length {}, batch expects {len}; pad the dataset first",
                    r.record_id, r.length
                )));
            }
            data.extend(r.leads.iter().map(|&v| f64::from(v)));
            labels.push(r.label);
        }
        Ok((Tensor::from_vec(&[indices.len(), self.n_leads, len], data)?, labels))
    }
}

/// Zero-pads every record at the tail to the longest record's length.
pub fn pad_to_max(dataset: &EcgDataset) -> EcgDataset {
    let target = dataset.max_length();
    let mut out = dataset.clone();
    for r in &mut out.records {
        if r.length == target {
            continue;
        }
        let mut leads = Vec::with_capacity(dataset.n_leads * target);
        for l in 0..dataset.n_leads {
            leads.extend_from_slice(&r.leads[l * r.length..(l + 1) * r.length]);
            leads.resize((l + 1) * target, 0.0);
        }
        r.leads = leads;
        r.length = target;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, len: usize, leads: usize) -> EcgRecord {
        EcgRecord {
            record_id: id.into(),
            label: 0,
            split: Split::Unassigned,
            length: len,
            leads: (0..len * leads).map(|i| i as f32 + 1.0).collect(),
            original_length: len,
        }
    }

    #[test]
    fn padding_keeps_prefix_and_appends_zeros() {
        let ds = EcgDataset {
            records: vec![record("a", 3000, 2), record("b", 5000, 2)],
            class_names: vec!["x".into()],
            n_leads: 2,
        };
        let padded = pad_to_max(&ds);
        let a = &padded.records[0];
        assert_eq!(a.length, 5000);
        assert_eq!(a.original_length, 3000);
        for l in 0..2 {
            assert_eq!(&a.lead(l)[..3000], ds.records[0].lead(l));
            assert!(a.lead(l)[3000..].iter().all(|&v| v == 0.0));
            assert_eq!(a.lead(l)[3000..].len(), 2000);
        }
        assert_eq!(padded.records[1], ds.records[1]);
        assert_eq!(pad_to_max(&padded), padded);
    }

    #[test]
    fn batch_requires_uniform_length() {
        let ds = EcgDataset {
            records: vec![record("a", 3, 1), record("b", 4, 1)],
            class_names: vec!["x".into()],
            n_leads: 1,
        };
        assert!(ds.batch(&[0, 1]).is_err());
        let (t, labels) = pad_to_max(&ds).batch(&[0, 1]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 4]);
        assert_eq!(labels, vec![0, 0]);
        assert_eq!(&t.data()[..4], &[1.0, 2.0, 3.0, 0.0]);
    }
}
