//! Scenario files: JSON with a schema version, a scenario and an optional
//! analysis block. Unknown fields are rejected everywhere.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use swcert::ncs::{build_delay_free, build_two_channel, ChannelBounds, Plant};
use swcert::signals::SignalSource;
use swcert::{ActivationBounds, Mat, NormKind, SwitchedSystem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Absent only in signal-only files used by `oracle` and `simulate`.
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub analysis: Analysis,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    RawSwitched {
        matrices: SwitchedSystem,
        bounds: ActivationBounds,
    },
    DelayFreeNcs {
        plant: Plant,
        k: Mat,
        rho: f64,
    },
    TwoChannelNcs {
        plant: Plant,
        k_n: Mat,
        k_d: Mat,
        channels: ChannelBounds,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    pub h: Option<usize>,
    pub h_min: Option<usize>,
    pub h_max: Option<usize>,
    pub norm: Option<NormField>,
    pub epsilon: Option<f64>,
    pub lp: Option<u8>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub signal: Option<SignalSource>,
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
}

/// A norm by name, or a full `{"kind": ...}` object for the weighted norm.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum NormField {
    Name(String),
    Spec(NormKind),
}

impl NormField {
    pub fn resolve(&self) -> Result<NormKind> {
        match self {
            NormField::Name(n) if n == "weighted" => {
                bail!("the weighted norm needs an inline matrix: {{\"kind\": \"weighted\", \"p\": [[...]]}}")
            }
            NormField::Name(n) => Ok(NormKind::from_name(n)?),
            NormField::Spec(k) => Ok(k.clone()),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<f64>,
}

pub fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse(text: &str) -> Result<ScenarioConfig> {
    // serde_json reports line and column for both syntax and validation errors
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    if cfg.schema_version != SCHEMA_VERSION {
        bail!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        );
    }
    // build once so parameter-free validation errors surface at load time
    if let Some(s) = &cfg.scenario {
        s.build(&[])?;
    }
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Result<&Scenario> {
        self.scenario
            .as_ref()
            .context("this command needs a `scenario` block in the config")
    }
}

impl Scenario {
    /// Parameter names a sweep may vary.
    pub fn parameters(&self) -> Vec<String> {
        match self {
            Scenario::RawSwitched { bounds, .. } => (1..=bounds.modes())
                .flat_map(|s| [format!("lower_{s}"), format!("upper_{s}")])
                .collect(),
            Scenario::DelayFreeNcs { .. } => vec!["rho".into()],
            Scenario::TwoChannelNcs { .. } => ["sigma_n", "rho_n", "sigma_d", "rho_d"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// System and bounds with the named parameters overridden.
    pub fn build(&self, overrides: &[(String, f64)]) -> Result<(SwitchedSystem, ActivationBounds)> {
        let known = self.parameters();
        for (name, _) in overrides {
            if !known.contains(name) {
                bail!("unknown sweep parameter `{name}`; this scenario accepts {}", known.join(", "));
            }
        }
        let get = |name: &str, default: f64| {
            overrides
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map_or(default, |(_, v)| *v)
        };
        Ok(match self {
            Scenario::RawSwitched { matrices, bounds } => {
                if bounds.modes() != matrices.modes() {
                    bail!(
                        "bounds list {} modes but the system has {}",
                        bounds.modes(),
                        matrices.modes()
                    );
                }
                let lower = (1..=bounds.modes())
                    .map(|s| get(&format!("lower_{s}"), bounds.lower()[s - 1]))
                    .collect();
                let upper = (1..=bounds.modes())
                    .map(|s| get(&format!("upper_{s}"), bounds.upper()[s - 1]))
                    .collect();
                (matrices.clone(), ActivationBounds::new(lower, upper)?)
            }
            Scenario::DelayFreeNcs { plant, k, rho } => build_delay_free(plant, k, get("rho", *rho))?,
            Scenario::TwoChannelNcs {
                plant,
                k_n,
                k_d,
                channels,
            } => {
                let c = ChannelBounds::new(
                    get("sigma_n", channels.sigma_n),
                    get("rho_n", channels.rho_n),
                    get("sigma_d", channels.sigma_d),
                    get("rho_d", channels.rho_d),
                )?;
                build_two_channel(plant, k_n, k_d, c)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DELAY_FREE: &str = r#"{
  "schema_version": 1,
  "scenario": {
    "kind": "delay_free_ncs",
    "plant": {"a": [[1, 0.1], [-0.5, 1.1]], "b": [[0.1], [1.2]]},
    "k": [[-2.9012, -0.9411]],
    "rho": 0.5
  },
  "analysis": {"h": 3, "norm": "spectral"}
}"#;

    #[test]
    fn parses_delay_free() {
        let cfg = parse(DELAY_FREE).unwrap();
        let (sys, b) = cfg.scenario().unwrap().build(&[]).unwrap();
        assert_eq!(sys.modes(), 2);
        assert_eq!(b.upper(), &[1.0, 0.5]);
        let (_, b) = cfg.scenario().unwrap().build(&[("rho".into(), 0.3)]).unwrap();
        assert_eq!(b.upper(), &[1.0, 0.3]);
        assert!(cfg.scenario().unwrap().build(&[("rho_d".into(), 0.3)]).is_err());
        assert!(matches!(cfg.analysis.norm.unwrap().resolve().unwrap(), NormKind::Spectral));
    }

    #[test]
    fn rejects_unknown_fields_with_position() {
        let bad = DELAY_FREE.replace("\"rho\": 0.5", "\"rho\": 0.5, \"gain\": 2");
        let e = format!("{:#}", parse(&bad).unwrap_err());
        assert!(e.contains("gain") && e.contains("line"), "{e}");
        let bad = DELAY_FREE.replace("\"h\": 3", "\"h\": 3, \"tolerance\": 1");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn rejects_ragged_matrix_with_line() {
        let bad = DELAY_FREE.replace("[-0.5, 1.1]", "[-0.5]");
        let e = format!("{:#}", parse(&bad).unwrap_err());
        // tagged enums buffer their content, so the position is the end of the scenario block
        assert!(e.contains("row 1") && e.contains("line 8"), "{e}");
    }

    #[test]
    fn rejects_schema_version() {
        let bad = DELAY_FREE.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn weighted_norm_needs_matrix() {
        assert!(NormField::Name("weighted".into()).resolve().is_err());
        let f: NormField = serde_json::from_str(r#"{"kind": "weighted", "p": [[2, 0], [0, 1]]}"#).unwrap();
        assert!(matches!(f.resolve().unwrap(), NormKind::Weighted(_)));
    }

    #[test]
    fn raw_parameters() {
        let text = r#"{"schema_version": 1, "scenario": {"kind": "raw_switched",
            "matrices": [[[0, 1], [0, 0]], [[0, 1], [2, 1]]],
            "bounds": {"lower": [0.5, 0], "upper": [1, 0.5]}}}"#;
        let cfg = parse(text).unwrap();
        let (_, b) = cfg.scenario().unwrap().build(&[("upper_2".into(), 0.6), ("lower_1".into(), 0.4)]).unwrap();
        assert_eq!((b.lower()[0], b.upper()[1]), (0.4, 0.6));
    }
}
