//! TOML experiment configuration and method resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use intercept_core::bench::{FilterTuneSpec, GridAxis, GuidanceField};
use intercept_core::guidance::{GuidanceParams, Law};
use intercept_core::mpc::MpcParams;
use intercept_core::numcore::Vec3;
use intercept_core::simworld::{Method, RunConfig};
use serde::Deserialize;

use crate::Failure;

pub const METHOD_NAMES: &str = "{pp, pn, lpn, gpn, epn, mpc}";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Trajectory file for `run`, relative to the config file.
    pub trajectory: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub start: Option<StartConfig>,
    pub run: RunConfig,
    /// Per-method overrides of the guidance presets, keyed by method name.
    pub guidance: BTreeMap<String, GuidanceOverride>,
    pub mpc: Option<MpcParams>,
    pub tune_guidance: Option<GridConfig>,
    pub tune_filter: Option<FilterTuneSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub position: [f64; 3],
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceOverride {
    pub gain: Option<f64>,
    pub weight: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub v_r: Option<f64>,
    pub eps_v: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub field: GuidanceField,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
}

fn default_spacing() -> Spacing {
    Spacing::Linear
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
}

impl AxisConfig {
    pub fn to_axis(&self) -> Result<GridAxis, Failure> {
        if self.points == 0 || !(self.lo <= self.hi) {
            return Err(Failure::usage(format!("grid axis {} needs lo <= hi and at least one point", self.field.name())));
        }
        Ok(match self.spacing {
            Spacing::Linear => GridAxis::linear(self.field, self.lo, self.hi, self.points),
            Spacing::Log if self.lo > 0.0 => GridAxis::log(self.field, self.lo, self.hi, self.points),
            Spacing::Log => return Err(Failure::usage(format!("log axis {} needs positive bounds", self.field.name()))),
        })
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        if let (Some(t), Some(dir)) = (&cfg.trajectory, path.parent()) {
            if t.is_relative() {
                cfg.trajectory = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, Failure> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    /// Resolves a method name (`gpn1`/`gpn2` select the two GPN presets,
    /// plain `gpn` the second) with config overrides applied.
    pub fn method(&self, name: &str) -> Result<Method, Failure> {
        let mut params = match name {
            "pp" => GuidanceParams::pp(),
            "pn" => GuidanceParams::pn(),
            "lpn" => GuidanceParams::lpn(),
            "gpn" | "gpn2" => GuidanceParams::gpn2(),
            "gpn1" => GuidanceParams::gpn1(),
            "epn" => GuidanceParams::epn(),
            "mpc" => {
                let p = self.mpc.clone().unwrap_or_default();
                p.validate().map_err(|e| Failure::usage(format!("invalid mpc parameters: {e}")))?;
                return Ok(Method::Mpc(p));
            }
            other => return Err(Failure::usage(format!("unknown method '{other}'; expected one of {METHOD_NAMES}"))),
        };
        if let Some(o) = self.guidance.get(name) {
            params.gain = o.gain.unwrap_or(params.gain);
            params.weight = o.weight.unwrap_or(params.weight);
            params.k1 = o.k1.unwrap_or(params.k1);
            params.k2 = o.k2.unwrap_or(params.k2);
            params.v_r = o.v_r.unwrap_or(params.v_r);
            params.eps_v = o.eps_v.unwrap_or(params.eps_v);
        }
        params.validate().map_err(|e| Failure::usage(format!("invalid {name} parameters: {e}")))?;
        Ok(Method::Guidance(params))
    }

    pub fn start(&self) -> Option<(Vec3, f64)> {
        self.start.map(|s| (Vec3::from(s.position), s.heading))
    }
}

/// Default tuning grid: every parameter the law uses, spanning one order of
/// magnitude either side of its preset value.
pub fn default_axes(params: &GuidanceParams, points: usize) -> Vec<GridAxis> {
    let around = |field: GuidanceField, v: f64| {
        let mut axis = GridAxis::log(field, v.abs() / 10.0, v.abs() * 10.0, points);
        if v < 0.0 {
            axis.values.iter_mut().for_each(|x| *x = -*x);
            axis.values.reverse();
        }
        axis
    };
    match params.law {
        Law::Pp | Law::Pn | Law::Lpn => vec![around(GuidanceField::Gain, params.gain)],
        Law::Epn => vec![around(GuidanceField::Gain, params.gain), around(GuidanceField::Weight, params.weight)],
        Law::Gpn => vec![
            around(GuidanceField::K1, params.k1),
            around(GuidanceField::K2, params.k2),
            around(GuidanceField::VR, params.v_r),
        ],
    }
}
