//! JSON description of a system.
//!
//! ```json
//! {
//!   "beta": 0.05,
//!   "maps": [
//!     {"type": "pwl", "knots": [[0, 0], [0.1, 0.5], [1, 1]]},
//!     {"type": "moebius", "lambda": 0.5}
//!   ],
//!   "probs": [0.5, 0.5]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval_maps::IntervalMap;
use crate::system::{IfsSystem, DEFAULT_BETA};

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MapConfig {
    Pwl { knots: Vec<[f64; 2]> },
    Moebius { lambda: f64 },
    Plateau { knots: Vec<[f64; 2]> },
}

impl MapConfig {
    pub fn to_map(&self) -> Result<IntervalMap> {
        let pairs = |k: &[[f64; 2]]| k.iter().map(|&[x, y]| (x, y)).collect();
        match self {
            Self::Pwl { knots } => IntervalMap::piecewise_linear(pairs(knots)),
            Self::Moebius { lambda } => IntervalMap::moebius(*lambda),
            Self::Plateau { knots } => IntervalMap::plateau(pairs(knots)),
        }
    }

    pub fn from_map(map: &IntervalMap) -> Self {
        let knots = || {
            map.knots()
                .map(|k| k.pairs().map(|(x, y)| [x, y]).collect())
                .unwrap_or_default()
        };
        match map {
            IntervalMap::PiecewiseLinear(_) => Self::Pwl { knots: knots() },
            IntervalMap::Moebius { lambda } => Self::Moebius { lambda: *lambda },
            IntervalMap::Plateau(_) => Self::Plateau { knots: knots() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub maps: Vec<MapConfig>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Build the system, naming the offending field on failure.
    pub fn to_system(&self) -> Result<IfsSystem> {
        let maps = self
            .maps
            .iter()
            .enumerate()
            .map(|(i, m)| m.to_map().map_err(|e| Error::Parse(format!("maps[{i}]: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(labels) = &self.labels {
            if labels.len() != maps.len() {
                return Err(Error::Parse(format!(
                    "labels: {} labels for {} maps",
                    labels.len(),
                    maps.len()
                )));
            }
        }
        IfsSystem::new(maps, self.probs.clone(), self.beta).map_err(|e| Error::Parse(format!("system: {e}")))
    }

    pub fn from_system(system: &IfsSystem) -> Self {
        Self {
            beta: system.beta(),
            maps: system.maps().iter().map(MapConfig::from_map).collect(),
            probs: system.probs().to_vec(),
            labels: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example_e1;

    #[test]
    fn parses_all_map_types() {
        let text = r#"{
            "maps": [
                {"type": "pwl", "knots": [[0, 0], [0.1, 0.5], [1, 1]]},
                {"type": "moebius", "lambda": 0.5},
                {"type": "plateau", "knots": [[0, 0], [0.4, 0.5], [0.6, 0.5], [1, 1]]}
            ],
            "probs": [0.25, 0.25, 0.5],
            "labels": ["up", "down", "flat"]
        }"#;
        let cfg = SystemConfig::from_json(text).unwrap();
        assert_eq!(cfg.beta, DEFAULT_BETA);
        let sys = cfg.to_system().unwrap();
        assert_eq!(sys.k(), 3);
        assert!(!sys.maps()[2].is_homeomorphism());
    }

    #[test]
    fn round_trip_is_exact() {
        let e1 = example_e1();
        let cfg = SystemConfig::from_system(&e1);
        let back = SystemConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back.to_system().unwrap(), e1);
        let m = IfsSystem::new(vec![IntervalMap::moebius(1.0 / 3.0).unwrap()], vec![1.0], 0.1).unwrap();
        let back = SystemConfig::from_json(&SystemConfig::from_system(&m).to_json().unwrap()).unwrap();
        assert_eq!(back.to_system().unwrap(), m);
    }

    #[test]
    fn errors_name_the_field() {
        let bad_map = r#"{"maps": [{"type": "pwl", "knots": [[0, 0], [0.5, 0.7], [0.4, 0.9], [1, 1]]}], "probs": [1]}"#;
        let err = SystemConfig::from_json(bad_map).unwrap().to_system().unwrap_err();
        assert!(err.to_string().contains("maps[0]"), "{err}");

        let bad_probs = r#"{"maps": [{"type": "moebius", "lambda": 2}], "probs": [0.4]}"#;
        let err = SystemConfig::from_json(bad_probs).unwrap().to_system().unwrap_err();
        assert!(err.to_string().contains("sum"), "{err}");

        let unknown = r#"{"maps": [{"type": "spline", "knots": []}], "probs": [1]}"#;
        assert!(SystemConfig::from_json(unknown).is_err());
        let typo = r#"{"maps": [], "prob": [1]}"#;
        assert!(SystemConfig::from_json(typo).is_err());
    }
}
