//! Curation parameters, POS weight table and ablation presets.
//!
//! Config files are TOML with a `[curation]` and a `[pos_weights]` section:
//!
//! ```toml
//! [curation]
//! gamma = 1.0
//! alpha = 0.7
//! p_min = 0.1
//! run_min = 0.2
//! coverage = 0.8
//! use_pos = true
//!
//! [pos_weights]
//! NOUN = 1.0
//! default = 0.3
//! ```
//!
//! Omitted keys keep their defaults.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config syntax: {0}")]
    Syntax(String),
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: String,
        value: f64,
        range: &'static str,
    },
    #[error("unknown ablation '{0}' (expected pos, conf_weight, conf, run or pmin)")]
    UnknownAblation(String),
}

/// Per-tag vote weights with a fallback for unlisted tags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosWeights {
    pub table: BTreeMap<String, f64>,
    pub fallback: f64,
}

pub const DEFAULT_POS_FALLBACK: f64 = 0.3;

impl Default for PosWeights {
    fn default() -> Self {
        let table = [
            ("NOUN", 1.0),
            ("PROPN", 1.0),
            ("NUM", 1.0),
            ("VERB", 0.8),
            ("ADJ", 0.8),
            ("ADV", 0.5),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        PosWeights {
            table,
            fallback: DEFAULT_POS_FALLBACK,
        }
    }
}

impl PosWeights {
    pub fn get(&self, tag: &str) -> f64 {
        self.table.get(tag).copied().unwrap_or(self.fallback)
    }
}

/// Confidence-weighted source curation parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationConfig {
    /// Confidence exponent.
    pub gamma: f64,
    /// Weight of vote mass against run coherence in the ranking score.
    pub alpha: f64,
    pub p_min: f64,
    pub run_min: f64,
    pub coverage: f64,
    pub pos_weights: PosWeights,
    pub use_pos: bool,
    pub use_conf_weight: bool,
    pub use_conf: bool,
    pub use_run: bool,
    pub use_p_min: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            gamma: 1.0,
            alpha: 0.7,
            p_min: 0.10,
            run_min: 0.20,
            coverage: 0.80,
            pos_weights: PosWeights::default(),
            use_pos: true,
            use_conf_weight: true,
            use_conf: true,
            use_run: true,
            use_p_min: true,
        }
    }
}

/// One component switched off, as in the ablation table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ablation {
    Pos,
    ConfWeight,
    Conf,
    Run,
    PMin,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Pos,
        Ablation::ConfWeight,
        Ablation::Conf,
        Ablation::Run,
        Ablation::PMin,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Pos => "w/o POS Weighting",
            Ablation::ConfWeight => "w/o Confidence Weight",
            Ablation::Conf => "w/o Confidence",
            Ablation::Run => "w/o Run Coherence",
            Ablation::PMin => "w/o p_min Filtering",
        }
    }
}

impl FromStr for Ablation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos" => Ok(Ablation::Pos),
            "conf_weight" => Ok(Ablation::ConfWeight),
            "conf" => Ok(Ablation::Conf),
            "run" => Ok(Ablation::Run),
            "pmin" => Ok(Ablation::PMin),
            other => Err(ConfigError::UnknownAblation(other.to_string())),
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CurationSection {
    gamma: Option<f64>,
    alpha: Option<f64>,
    p_min: Option<f64>,
    run_min: Option<f64>,
    coverage: Option<f64>,
    use_pos: Option<bool>,
    use_conf_weight: Option<bool>,
    use_conf: Option<bool>,
    use_run: Option<bool>,
    use_p_min: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    curation: CurationSection,
    #[serde(default)]
    pos_weights: BTreeMap<String, f64>,
}

impl CurationConfig {
    /// Parses a TOML config, filling unspecified keys with defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let d = CurationConfig::default();
        let c = file.curation;
        let mut pos_weights = d.pos_weights.clone();
        for (tag, w) in file.pos_weights {
            if tag == "default" {
                pos_weights.fallback = w;
            } else {
                pos_weights.table.insert(tag, w);
            }
        }
        let cfg = CurationConfig {
            gamma: c.gamma.unwrap_or(d.gamma),
            alpha: c.alpha.unwrap_or(d.alpha),
            p_min: c.p_min.unwrap_or(d.p_min),
            run_min: c.run_min.unwrap_or(d.run_min),
            coverage: c.coverage.unwrap_or(d.coverage),
            pos_weights,
            use_pos: c.use_pos.unwrap_or(d.use_pos),
            use_conf_weight: c.use_conf_weight.unwrap_or(d.use_conf_weight),
            use_conf: c.use_conf.unwrap_or(d.use_conf),
            use_run: c.use_run.unwrap_or(d.use_run),
            use_p_min: c.use_p_min.unwrap_or(d.use_p_min),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::from("[curation]\n");
        for (k, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("p_min", self.p_min),
            ("run_min", self.run_min),
            ("coverage", self.coverage),
        ] {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        for (k, v) in [
            ("use_pos", self.use_pos),
            ("use_conf_weight", self.use_conf_weight),
            ("use_conf", self.use_conf),
            ("use_run", self.use_run),
            ("use_p_min", self.use_p_min),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str("\n[pos_weights]\n");
        for (k, v) in &self.pos_weights.table {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        s.push_str(&format!("default = {:?}\n", self.pos_weights.fallback));
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |field: &str, value: f64, ok: bool, range: &'static str| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    field: field.to_string(),
                    value,
                    range,
                })
            }
        };
        check("gamma", self.gamma, self.gamma >= 0.0, "[0, inf)")?;
        check("alpha", self.alpha, (0.0..=1.0).contains(&self.alpha), "[0, 1]")?;
        check("p_min", self.p_min, (0.0..=1.0).contains(&self.p_min), "[0, 1]")?;
        check("run_min", self.run_min, (0.0..=1.0).contains(&self.run_min), "[0, 1]")?;
        check(
            "coverage",
            self.coverage,
            self.coverage > 0.0 && self.coverage <= 1.0,
            "(0, 1]",
        )?;
        check(
            "pos_weights.default",
            self.pos_weights.fallback,
            (0.0..=1.0).contains(&self.pos_weights.fallback),
            "[0, 1]",
        )?;
        for (tag, w) in &self.pos_weights.table {
            check(&format!("pos_weights.{tag}"), *w, (0.0..=1.0).contains(w), "[0, 1]")?;
        }
        Ok(())
    }

    /// Returns a copy with one component disabled.
    pub fn ablate(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        match ablation {
            Ablation::Pos => c.use_pos = false,
            Ablation::ConfWeight => c.use_conf_weight = false,
            Ablation::Conf => c.use_conf = false,
            Ablation::Run => c.use_run = false,
            Ablation::PMin => c.use_p_min = false,
        }
        c
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
