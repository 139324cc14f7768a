use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::satse::{MaskIndexMode, DEFAULT_GAMMA, DEFAULT_PHI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    Resnet18,
    Resnet34,
    Resnet50,
}

impl Backbone {
    /// Residual units per stage.
    pub fn units_per_stage(self) -> [usize; 4] {
        match self {
            Backbone::Resnet18 => [2, 2, 2, 2],
            Backbone::Resnet34 | Backbone::Resnet50 => [3, 4, 6, 3],
        }
    }

    /// Output channels of a stage relative to its base width.
    pub fn expansion(self) -> usize {
        match self {
            Backbone::Resnet50 => 4,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Resnet18 => "resnet18",
            Backbone::Resnet34 => "resnet34",
            Backbone::Resnet50 => "resnet50",
        }
    }
}

impl FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" | "18" => Ok(Backbone::Resnet18),
            "resnet34" | "34" => Ok(Backbone::Resnet34),
            "resnet50" | "50" => Ok(Backbone::Resnet50),
            other => Err(Error::Unsupported(format!("backbone {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Real32,
    Real64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Real32 => "real32",
            Precision::Real64 => "real64",
        }
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real32" => Ok(Precision::Real32),
            "real64" => Ok(Precision::Real64),
            other => Err(Error::invalid(format!("unknown precision {other}"))),
        }
    }
}

/// Architecture description. Serialized as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_leads: usize,
    pub n_classes: usize,
    pub backbone: Backbone,
    /// Base channel width of each stage; the stem produces `widths[0]` channels.
    pub widths: Vec<usize>,
    /// Canonical input length; fixes every stage length and the SATSE weight shapes.
    pub input_length: usize,
    /// One flag per stage.
    pub satse_blocks_enabled: Vec<bool>,
    /// Freezes every block's threshold ratio at this value.
    pub fixed_phi: Option<f64>,
    pub phi_init: f64,
    pub gamma_init: f64,
    pub mask_index_mode: MaskIndexMode,
    /// Feed softmax probabilities into the cross-entropy instead of logits.
    pub double_softmax: bool,
    pub stem_maxpool: bool,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_leads: 12,
            n_classes: 5,
            backbone: Backbone::Resnet18,
            widths: vec![64, 128, 256, 512],
            input_length: 5000,
            satse_blocks_enabled: vec![true; 4],
            fixed_phi: None,
            phi_init: DEFAULT_PHI,
            gamma_init: DEFAULT_GAMMA,
            mask_index_mode: MaskIndexMode::Symmetric,
            double_softmax: false,
            stem_maxpool: true,
            precision: Precision::Real64,
        }
    }
}

impl ModelConfig {
    /// Two stages of widths 4/8 on `(B, 12, 64)` inputs with 3 classes; small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            n_classes: 3,
            widths: vec![4, 8],
            input_length: 64,
            satse_blocks_enabled: vec![true; 2],
            ..Default::default()
        }
    }

    /// Widths 16/32/64/128 on 512-sample inputs.
    pub fn reduced(n_classes: usize) -> Self {
        ModelConfig {
            n_classes,
            widths: vec![16, 32, 64, 128],
            input_length: 512,
            ..Default::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Enables SATSE on the first `count` stages only.
    pub fn with_satse_count(mut self, count: usize) -> Self {
        self.satse_blocks_enabled = (0..self.stages()).map(|i| i < count).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 1 {
            return Err(Error::invalid("at least one class is required"));
        }
        if self.n_leads < 1 || self.input_length < 1 {
            return Err(Error::invalid("leads and input length must be positive"));
        }
        if self.widths.is_empty() || self.widths.len() > 4 || self.widths.contains(&0) {
            return Err(Error::invalid(
                "between one and four stages of positive width are required",
            ));
        }
        if self.satse_blocks_enabled.len() != self.widths.len() {
            return Err(Error::invalid(format!(
                "{} SATSE flags for {} stages",
                self.satse_blocks_enabled.len(),
                self.widths.len()
            )));
        }
        if let Some(phi) = self.fixed_phi {
            if !(phi > 0.0 && phi < 1.0) {
                return Err(Error::invalid(format!("fixed phi {phi} must lie in (0, 1)")));
            }
        }
        if !(self.phi_init > 0.0 && self.phi_init < 1.0) || self.gamma_init <= 0.0 {
            return Err(Error::invalid(
                "phi init must lie in (0, 1) and gamma init must be positive",
            ));
        }
        if self.precision == Precision::Real32 {
            return Err(Error::Unsupported("real32 compute; models run in real64".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let flags = self
            .satse_blocks_enabled
            .iter()
            .map(|b| if *b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "n_leads={}", self.n_leads);
        let _ = writeln!(s, "n_classes={}", self.n_classes);
        let _ = writeln!(s, "backbone={}", self.backbone.as_str());
        let _ = writeln!(s, "widths={}", join(&self.widths));
        let _ = writeln!(s, "input_length={}", self.input_length);
        let _ = writeln!(s, "satse_blocks={flags}");
        let _ = writeln!(
            s,
            "fixed_phi={}",
            self.fixed_phi.map_or_else(|| "none".to_string(), |v| format!("{v:?}"))
        );
        let _ = writeln!(s, "phi_init={:?}", self.phi_init);
        let _ = writeln!(s, "gamma_init={:?}", self.gamma_init);
        let _ = writeln!(s, "mask_index_mode={}", self.mask_index_mode.as_str());
        let _ = writeln!(s, "double_softmax={}", self.double_softmax);
        let _ = writeln!(s, "stem_maxpool={}", self.stem_maxpool);
        let _ = writeln!(s, "precision={}", self.precision.as_str());
        s
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this type does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::invalid(format!("bad value for {what}: {value}"));
        let parse_usize = |what: &str| value.trim().parse::<usize>().map_err(|_| bad(what));
        let parse_bool = |what: &str| match value.trim() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(bad(what)),
        };
        match key.trim() {
            "n_leads" => self.n_leads = parse_usize(key)?,
            "n_classes" => self.n_classes = parse_usize(key)?,
            "backbone" => self.backbone = value.trim().parse()?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
                if self.satse_blocks_enabled.len() != self.widths.len() {
                    self.satse_blocks_enabled = vec![true; self.widths.len()];
                }
            }
            "input_length" => self.input_length = parse_usize(key)?,
            "satse_blocks" => {
                self.satse_blocks_enabled = value
                    .split(',')
                    .map(|v| match v.trim() {
                        "1" | "true" => Ok(true),
                        "0" | "false" => Ok(false),
                        _ => Err(bad(key)),
                    })
                    .collect::<Result<_>>()?;
            }
            "fixed_phi" => {
                self.fixed_phi = match value.trim() {
                    "none" | "" => None,
                    v => Some(v.parse().map_err(|_| bad(key))?),
                }
            }
            "phi_init" => self.phi_init = value.trim().parse().map_err(|_| bad(key))?,
            "gamma_init" => self.gamma_init = value.trim().parse().map_err(|_| bad(key))?,
            "mask_index_mode" => self.mask_index_mode = value.trim().parse()?,
            "double_softmax" => self.double_softmax = parse_bool(key)?,
            "stem_maxpool" => self.stem_maxpool = parse_bool(key)?,
            "precision" => self.precision = value.trim().parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line without '=': {line}")))?;
            if !cfg.apply(k, v)? {
                return Err(Error::invalid(format!("unknown config key {k}")));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::tiny();
        cfg.fixed_phi = Some(0.2);
        cfg.mask_index_mode = MaskIndexMode::Literal;
        cfg.satse_blocks_enabled = vec![true, false];
        cfg.phi_init = 0.1 + 0.2;
        let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            fixed_phi: Some(1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            n_classes: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(matches!("resnet101".parse::<Backbone>(), Err(Error::Unsupported(_))));
    }
}
