//! Run configuration: the system, per-command parameter blocks, the seed and the output
//! directory, all serializable so that a run can be replayed exactly.

use std::path::{Path, PathBuf};

use obg_core::{ObgError, Result, SystemConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    /// Seed for randomized probes.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub flowline: FlowlineParams,
    pub glue0: Glue0Params,
    pub gluet: GluetParams,
    pub homology: HomologyParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("obg-out"),
            flowline: FlowlineParams::default(),
            glue0: Glue0Params::default(),
            gluet: GluetParams::default(),
            homology: HomologyParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ObgError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ObgError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FlowlineParams {
    pub ds: f64,
    pub window: f64,
}

impl Default for FlowlineParams {
    fn default() -> Self {
        let d = obg_core::FlowlineOptions::default();
        Self { ds: d.ds, window: d.window }
    }
}

impl FlowlineParams {
    pub fn options(&self) -> obg_core::FlowlineOptions {
        obg_core::FlowlineOptions { ds: self.ds, window: self.window, ..Default::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Glue0Params {
    /// `minus,zero,plus` sides, e.g. `front,right,front`.
    pub triple: String,
    /// Slice `R_0^- + R_0^+`.
    #[serde(rename = "R0")]
    pub r0: f64,
    /// `lo:hi:step` over slice values.
    pub sweep: Option<String>,
    /// Also solve the deformation and report the full section.
    pub full: bool,
    /// Run the shooting oracle with this passage tolerance.
    pub oracle_tol: Option<f64>,
}

impl Default for Glue0Params {
    fn default() -> Self {
        Self { triple: "front,right,front".into(), r0: 24.0, sweep: None, full: false, oracle_tol: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GluetParams {
    /// `minus,<zero>,<other>` or `plus,<zero>,<other>`, e.g. `minus,right,front`.
    pub pair: String,
    pub radius: f64,
    pub amplitude: f64,
    #[serde(rename = "A")]
    pub a: u32,
    /// Signed `lo:hi` range of `t`; defaults to `[0.002, 0.05]` on `side`.
    pub t: Option<String>,
    pub samples: usize,
    /// `t>0` or `t<0`; defaults to the verdict side.
    pub side: Option<String>,
    /// Also evaluate the four sign panels at this probe `t < 0`.
    pub panels_t: Option<f64>,
}

impl Default for GluetParams {
    fn default() -> Self {
        Self {
            pair: "minus,right,front".into(),
            radius: 0.3,
            amplitude: 1.0,
            a: 4,
            t: None,
            samples: 12,
            side: None,
            panels_t: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HomologyParams {
    pub side: String,
    /// Signs of `<V, sigma>` on `u_0^l` and `u_0^r`.
    pub amplitudes: [f64; 2],
    pub radius: f64,
    #[serde(rename = "A")]
    pub a: u32,
    /// `|t|` of the directly counted perturbed system.
    pub direct_t: f64,
}

impl Default for HomologyParams {
    fn default() -> Self {
        Self { side: "t>0".into(), amplitudes: [1.0, 1.0], radius: 0.3, a: 4, direct_t: 0.01 }
    }
}

/// Parses `lo:hi` or `lo:hi:step`.
pub fn parse_range(s: &str, parts: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>().map_err(|e| ObgError::Config(format!("bad number {x:?} in {s:?}: {e}"))))
        .collect::<Result<_>>()?;
    if v.len() != parts || v.iter().any(|x| !x.is_finite()) {
        return Err(ObgError::Config(format!("expected {parts} ':'-separated numbers, got {s:?}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("16:28:4", 3).unwrap(), vec![16.0, 28.0, 4.0]);
        assert!(parse_range("16:28", 3).is_err());
        assert!(parse_range("a:1", 2).is_err());
    }
}
