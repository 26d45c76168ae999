//! Scenario configuration documents (TOML) and their resolution into model
//! inputs.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use stackemu_core::power::{builtin_preset, load_trace_csv};
use stackemu_core::stack::{LayerSpec, Material, Rect, TsvFarmSpec};
use stackemu_core::{
    preset_stack, LayerRole, PdnParams, PowerMap, ReliabilityParams, SolveOptions, StackConfig,
    TemporalProfile,
};

use crate::error::{HarnessError, Stage};
use crate::policy::DtmPolicy;

/// One scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Sensor noise seed, 0 to 2^63 - 1.
    #[serde(default)]
    pub seed: u64,
    pub stack: StackSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub power: PowerSection,
    /// Absent: no sensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorSection>,
    /// Absent: PDN analysis disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdn: Option<PdnParams>,
    /// Absent: reliability screening disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityParams>,
    #[serde(default)]
    pub solve: SolveOptions,
    /// Absent: steady state only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<TransientSection>,
    /// Absent: no run-time management.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<DtmPolicy>,
}

/// A built-in material name or a full definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum MaterialRef {
    Name(String),
    Inline(Material),
}

impl MaterialRef {
    pub fn resolve(&self) -> Result<Material, HarnessError> {
        match self {
            MaterialRef::Inline(m) => Ok(m.clone()),
            MaterialRef::Name(n) => Material::builtin(n).ok_or_else(|| {
                HarnessError::config(format!("unknown material '{n}'"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub role: LayerRole,
    pub thickness_um: f64,
    pub material: MaterialRef,
    #[serde(default)]
    pub has_tsvs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_cols: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FarmSection {
    /// Device layer holding the farm.
    pub layer: LayerRole,
    pub footprint: Rect,
    pub via_diameter_um: f64,
    pub via_pitch_um: f64,
    pub fill_material: MaterialRef,
    #[serde(default)]
    pub liner_thickness_um: f64,
    #[serde(default = "default_liner")]
    pub liner_material: MaterialRef,
}

fn default_liner() -> MaterialRef {
    MaterialRef::Name("oxide".into())
}

/// Either `preset = n` (optionally with overrides) or an explicit layer list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub die_width_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub die_length_mm: Option<f64>,
    /// Bottom (package side) to top (heat-sink side).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_temperature_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_sink_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package_resistance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub farms: Vec<FarmSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub sub_slabs: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            nx: 48,
            ny: 24,
            sub_slabs: 1,
        }
    }
}

/// Tile power assignment. Later entries override earlier ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    /// Constant density (W/cm²) on every tile of every device layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerPower>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tiles: Vec<TilePower>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LayerPower {
    pub layer: LayerRole,
    /// Built-in core proxy preset name.
    pub preset: String,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TilePower {
    pub layer: LayerRole,
    pub tile: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<TemporalProfile>,
    /// CSV trace `t_seconds,power_w_per_cm2`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SiteSection {
    pub layer: LayerRole,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    /// Greedy placement of this many sensors over the tile-center candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Fixed sites; used instead of placement when given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<SiteSection>,
    #[serde(default = "sigma")]
    pub noise_sigma: f64,
    #[serde(default = "step")]
    pub quantization_step: f64,
    #[serde(default = "period")]
    pub sample_period: f64,
    /// Extra placement training fields in field-CSV format.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub training_csv: Vec<PathBuf>,
}

fn sigma() -> f64 {
    stackemu_core::sensors::DEFAULT_NOISE_SIGMA
}

fn step() -> f64 {
    stackemu_core::sensors::DEFAULT_QUANTIZATION
}

fn period() -> f64 {
    stackemu_core::sensors::DEFAULT_SAMPLE_PERIOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TransientSection {
    /// s.
    pub t_end: f64,
    /// s.
    pub dt: f64,
    #[serde(default = "stride")]
    pub sample_stride: usize,
    /// Steps between policy evaluations.
    #[serde(default = "policy_period")]
    pub policy_period: usize,
}

fn stride() -> usize {
    1
}

fn policy_period() -> usize {
    10
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Reads a config file; relative trace and training paths are rebased on
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.power.tiles {
            if let Some(p) = &mut t.trace_csv {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(s) = &mut cfg.sensors {
            for p in &mut s.training_csv {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn resolve_stack(&self) -> Result<StackConfig, HarnessError> {
        let s = &self.stack;
        let mut cfg = match (s.preset, &s.layers) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::config("stack: give either 'preset' or 'layers', not both"))
            }
            (None, None) => return Err(HarnessError::config("stack: 'preset' or 'layers' is required")),
            (Some(n), None) => {
                let mut c = preset_stack(n).map_err(|e| HarnessError::model(Stage::Config, e))?;
                if let Some(w) = s.die_width_mm {
                    c.die_width_mm = w;
                }
                if let Some(l) = s.die_length_mm {
                    c.die_length_mm = l;
                }
                c
            }
            (None, Some(layers)) => {
                let (Some(w), Some(l)) = (s.die_width_mm, s.die_length_mm) else {
                    return Err(HarnessError::config(
                        "stack: explicit layers need die_width_mm and die_length_mm",
                    ));
                };
                let mut c = preset_stack(2).map_err(|e| HarnessError::model(Stage::Config, e))?;
                c.die_width_mm = w;
                c.die_length_mm = l;
                c.layers = layers
                    .iter()
                    .map(|ls| {
                        let mut spec = LayerSpec::new(ls.role, ls.thickness_um, ls.material.resolve()?);
                        spec.has_tsvs = ls.has_tsvs;
                        if let Some(r) = ls.tile_rows {
                            spec.tile_rows = r;
                        }
                        if let Some(c) = ls.tile_cols {
                            spec.tile_cols = c;
                        }
                        Ok(spec)
                    })
                    .collect::<Result<_, HarnessError>>()?;
                c
            }
        };
        if let Some(a) = s.ambient_temperature_c {
            cfg.ambient_temperature_c = a;
        }
        if let Some(h) = s.heat_sink_h {
            cfg.heat_sink_h = h;
        }
        if let Some(r) = s.package_resistance {
            cfg.package_resistance = r;
        }
        for f in &s.farms {
            let idx = layer_index(&cfg, f.layer)?;
            cfg.layers[idx].tsv_farms.push(TsvFarmSpec {
                footprint: f.footprint,
                via_diameter_um: f.via_diameter_um,
                via_pitch_um: f.via_pitch_um,
                fill_material: f.fill_material.resolve()?,
                liner_thickness_um: f.liner_thickness_um,
                liner_material: f.liner_material.resolve()?,
            });
        }
        let violations = stackemu_core::validate_stack(&cfg);
        if !violations.is_empty() {
            return Err(HarnessError::model(
                Stage::Config,
                stackemu_core::Error::InvalidStack(violations),
            ));
        }
        Ok(cfg)
    }

    pub fn resolve_power(&self, stack: &StackConfig) -> Result<PowerMap, HarnessError> {
        let p = &self.power;
        let model = |e| HarnessError::model(Stage::Config, e);
        let mut map = match p.uniform {
            Some(d) => {
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(HarnessError::config(format!("power.uniform must be >= 0, got {d}")));
                }
                PowerMap::uniform(stack, d)
            }
            None => PowerMap::new(stack),
        };
        for lp in &p.layers {
            let layer = layer_index(stack, lp.layer)?;
            let preset = builtin_preset(&lp.preset)
                .ok_or_else(|| HarnessError::config(format!("unknown power preset '{}'", lp.preset)))?;
            map = map.apply_preset(layer, &preset).map_err(model)?;
            map = map.scale_layer(layer, lp.scale).map_err(model)?;
        }
        for tp in &p.tiles {
            let layer = layer_index(stack, tp.layer)?;
            let profile = match (&tp.profile, &tp.trace_csv) {
                (Some(pr), None) => pr.clone(),
                (None, Some(path)) => {
                    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
                    load_trace_csv(file).map_err(model)?
                }
                _ => {
                    return Err(HarnessError::config(format!(
                        "power tile {} on {}: give exactly one of 'profile' or 'trace_csv'",
                        tp.tile, tp.layer
                    )))
                }
            };
            map = map.set_tile_power(layer, tp.tile, profile).map_err(model)?;
        }
        Ok(map)
    }

    /// Full structural check without solving anything.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seed > i64::MAX as u64 {
            return Err(HarnessError::config(format!(
                "seed {} exceeds the TOML integer range (max {})",
                self.seed,
                i64::MAX
            )));
        }
        let stack = self.resolve_stack()?;
        self.resolve_power(&stack)?;
        self.solve
            .validate()
            .map_err(|e| HarnessError::model(Stage::Config, e))?;
        let g = &self.grid;
        if g.nx < 2 || g.ny < 2 || g.sub_slabs < 1 {
            return Err(HarnessError::config("grid needs nx, ny >= 2 and sub_slabs >= 1"));
        }
        if let Some(t) = &self.transient {
            if !(t.t_end > 0.0 && t.dt > 0.0 && t.dt <= t.t_end) {
                return Err(HarnessError::config("transient needs 0 < dt <= t_end"));
            }
            if t.sample_stride == 0 || t.policy_period == 0 {
                return Err(HarnessError::config("sample_stride and policy_period must be >= 1"));
            }
        }
        if let Some(s) = &self.sensors {
            if s.count.is_none() && s.sites.is_empty() {
                return Err(HarnessError::config("sensors: give 'count' or 'sites'"));
            }
            if s.count == Some(0) {
                return Err(HarnessError::config("sensors.count must be >= 1"));
            }
            for site in &s.sites {
                layer_index(&stack, site.layer)?;
            }
        }
        if let Some(p) = &self.pdn {
            p.validate().map_err(|e| HarnessError::model(Stage::Config, e))?;
        }
        if let Some(r) = &self.reliability {
            r.validate().map_err(|e| HarnessError::model(Stage::Config, e))?;
        }
        if let Some(policy) = &self.policy {
            policy.validate(&stack)?;
            if self.sensors.is_none() {
                return Err(HarnessError::config("a policy needs sensors to act on"));
            }
            if self.transient.is_none() {
                return Err(HarnessError::config("a policy needs a transient section"));
            }
        }
        Ok(())
    }
}

pub(crate) fn layer_index(stack: &StackConfig, role: LayerRole) -> Result<usize, HarnessError> {
    stack
        .layer_index(role)
        .ok_or_else(|| HarnessError::config(format!("stack has no {role} layer")))
}

/// JSON schema of [`ScenarioConfig`].
pub fn schema_json() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
