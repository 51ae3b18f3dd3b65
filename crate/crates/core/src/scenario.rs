//! Scenario documents: topology, classes, workload, mode and scripted
//! events in one JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asac::{BrvRule, ClassConfig};
use crate::topology::{random_topology, Network, RandomTopologyParams, TopologyDoc, TopologyError};
use crate::workload::WorkloadConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Over-reservation with pre-built aggregation trees.
    Mara,
    /// Per-flow signaling baseline.
    Mira,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mara => "mara",
            Mode::Mira => "mira",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mara" => Ok(Mode::Mara),
            "mira" => Ok(Mode::Mira),
            _ => Err(format!("unknown mode {s:?} (expected mara or mira)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    /// Path to a topology file, relative to the scenario file.
    File(PathBuf),
    Inline(TopologyDoc),
    Random {
        n: usize,
        seed: u64,
        #[serde(default)]
        params: RandomTopologyParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedEvent {
    /// The session's receiver set becomes `egresses`.
    LeafChange {
        time_s: f64,
        session: u64,
        egresses: Vec<String>,
    },
    /// Both directions of the link between two routers go down.
    LinkFail {
        time_s: f64,
        from: String,
        to: String,
    },
}

impl ScriptedEvent {
    pub fn time_s(&self) -> f64 {
        match self {
            ScriptedEvent::LeafChange { time_s, .. } | ScriptedEvent::LinkFail { time_s, .. } => {
                *time_s
            }
        }
    }
}

fn default_classes() -> Vec<ClassConfig> {
    ClassConfig::defaults()
}

fn default_factor() -> f64 {
    0.25
}

fn default_tick() -> f64 {
    1.0
}

fn default_hop_cap() -> Option<usize> {
    Some(6)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub topology: TopologySource,
    /// Ingress router name; the first declared ingress when unset.
    #[serde(default)]
    pub ingress: Option<String>,
    #[serde(default = "default_classes")]
    pub classes: Vec<ClassConfig>,
    #[serde(default = "default_factor")]
    pub init_factor: f64,
    /// Longest path, in hops, a tree may contain. Ignored by the baseline.
    #[serde(default = "default_hop_cap")]
    pub hop_cap: Option<usize>,
    #[serde(default)]
    pub workload: WorkloadConfig,
    pub mode: Mode,
    /// Overrides the workload seed when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    /// Per-router processing delay for signaling.
    #[serde(default)]
    pub processing_delay_s: f64,
    #[serde(default)]
    pub brv_rule: BrvRule,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_owned();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.init_factor > 0.0 && self.init_factor <= 1.0) {
            return bad(format!("init_factor {} outside (0, 1]", self.init_factor));
        }
        if !(self.tick_s.is_finite() && self.tick_s > 0.0) {
            return bad("tick_s must be positive".into());
        }
        if !(self.processing_delay_s.is_finite() && self.processing_delay_s >= 0.0) {
            return bad("processing_delay_s must be non-negative".into());
        }
        if self.hop_cap == Some(0) {
            return bad("hop_cap must be at least 1".into());
        }
        if self.classes.is_empty() || self.classes.len() > u8::MAX as usize {
            return bad("need between 1 and 255 classes".into());
        }
        for e in &self.events {
            if !(e.time_s().is_finite() && e.time_s() >= 0.0) {
                return bad(format!("scripted event at invalid time {}", e.time_s()));
            }
        }
        self.workload
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.workload.seed)
    }

    pub fn load_network(&self) -> Result<Network, ScenarioError> {
        Ok(match &self.topology {
            TopologySource::File(p) => {
                let path = self.base_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ScenarioError::Io { path, source })?;
                Network::from_json(&text)?
            }
            TopologySource::Inline(doc) => Network::from_doc(doc)?,
            TopologySource::Random { n, seed, params } => random_topology(*n, *seed, params)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{
        "topology": {"inline": {"nodes":[{"id":"I","role":"ingress"},{"id":"E","role":"egress"}],
                                "links":[{"from":"I","to":"E","capacity_bps":10000000,"delay_s":0.001}]}},
        "mode": "mara"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ScenarioConfig::from_json(MIN, Path::new(".")).unwrap();
        assert_eq!(cfg.init_factor, 0.25);
        assert_eq!(cfg.hop_cap, Some(6));
        assert_eq!(cfg.classes.len(), 4);
        assert_eq!(cfg.workload.session_count, 1000);
        assert_eq!(cfg.load_network().unwrap().nodes().len(), 2);
    }

    #[test]
    fn bad_factor() {
        let text = MIN.replace("\"mode\"", "\"init_factor\": 1.5, \"mode\"");
        assert!(matches!(
            ScenarioConfig::from_json(&text, Path::new(".")),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn scripted_events_parse() {
        let text = MIN.replace(
            "\"mode\"",
            r#""events": [{"kind":"leaf_change","time_s":3.0,"session":1,"egresses":["E"]},
                          {"kind":"link_fail","time_s":4.0,"from":"I","to":"E"}], "mode""#,
        );
        let cfg = ScenarioConfig::from_json(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.events.len(), 2);
        assert_eq!(cfg.events[1].time_s(), 4.0);
    }

    #[test]
    fn mode_parse() {
        assert_eq!("MIRA".parse::<Mode>(), Ok(Mode::Mira));
        assert!("x".parse::<Mode>().is_err());
    }
}
