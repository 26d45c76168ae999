//! The scenario pipeline: stack, power, steady solve, sensors, managed
//! transient, power delivery and reliability.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stackemu_core::pdn::{
    build_pdn, coupling_report, currents_from_power, solve_ir_drop, worst_case_droop,
};
use stackemu_core::power::{builtin_presets, power_density_field, total_power};
use stackemu_core::reliability::reliability_report;
use stackemu_core::sensors::{
    hotspot_error, place_sensors_greedy, read_sensors, tile_center_sites, HotspotError,
};
use stackemu_core::thermal::{
    assemble, layer_summary, solve_steady_with_stats, step_transient, transient_steps,
    TemperatureField,
};
use stackemu_core::{
    discretize, CurrentMap, FieldTime, LayerRole, LayerStats, PdnGrid, PowerMap,
    ReliabilityReport, SensorNetwork, SensorSpec, Site, SolveStats, StackConfig, VoxelGrid,
};

use crate::config::{layer_index, ScenarioConfig};
use crate::error::{AtStage, HarnessError, Stage};
use crate::policy::{Controller, PolicyEvent, PolicySample};

/// Per-node current step on the aggressor plane for the coupling analysis, A.
pub const COUPLING_STEP_A: f64 = 1e-3;

/// Which optional stages to run; a stage also needs its config section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPlan {
    pub sensors: bool,
    pub transient: bool,
    pub policy: bool,
    pub pdn: bool,
    pub reliability: bool,
}

impl RunPlan {
    pub fn full() -> Self {
        RunPlan {
            sensors: true,
            transient: true,
            policy: true,
            pdn: true,
            reliability: true,
        }
    }

    pub fn steady_only() -> Self {
        RunPlan {
            sensors: false,
            transient: false,
            policy: false,
            pdn: false,
            reliability: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub nx: usize,
    pub ny: usize,
    pub sub_slabs: usize,
    pub unknowns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub solve: SolveStats,
    pub layers: Vec<LayerStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSite {
    pub layer: usize,
    pub role: LayerRole,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    pub sites: Vec<SensorSite>,
    /// Mean training hotspot error after each greedy round; empty for fixed
    /// sites.
    pub placement_trace: Vec<f64>,
    pub training_fields: usize,
    /// Noiseless hotspot tracking error on the training fields, K.
    pub hotspot_error: HotspotError,
    pub steady_readings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub role: LayerRole,
    /// True layer max at each sample time, °C.
    pub max_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientReport {
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    pub sample_times: Vec<f64>,
    pub traces: Vec<LayerTrace>,
    pub final_layers: Vec<LayerStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_readings: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_max_reading: Option<f64>,
    pub events: Vec<PolicyEvent>,
    pub policy_samples: Vec<PolicySample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdnLayer {
    pub layer: usize,
    pub role: LayerRole,
    pub max_drop_mv: f64,
    /// Power-on step droop, mV.
    pub droop_mv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Victim {
    pub layer: usize,
    pub role: LayerRole,
    pub drop_mv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub aggressor_layer: usize,
    pub aggressor_role: LayerRole,
    pub step_a: f64,
    pub victims: Vec<Victim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdnReport {
    pub nodes: usize,
    pub total_current_a: f64,
    pub max_drop_mv: f64,
    pub solve: SolveStats,
    pub layers: Vec<PdnLayer>,
    pub coupling: CouplingSummary,
}

/// Deterministic part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub name: String,
    pub seed: u64,
    pub stack: Vec<LayerRole>,
    pub grid: GridReport,
    pub ambient_c: f64,
    pub total_power_w: f64,
    pub steady: SteadyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<TransientReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdn: Option<PdnReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub provenance: Provenance,
    pub body: ReportBody,
}

impl ScenarioReport {
    /// The body as TOML; stable field order.
    pub fn body_text(&self) -> String {
        toml::to_string(&self.body).expect("report body serializes")
    }

    /// Full report text: provenance, then the body.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn steady_max_c(&self) -> f64 {
        self.body
            .steady
            .layers
            .iter()
            .map(|l| l.max_c)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fields and networks produced by a run, for export.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub stack: StackConfig,
    pub grid: VoxelGrid,
    pub steady: TemperatureField<f64>,
    pub final_field: Option<TemperatureField<f64>>,
    pub sensor_sites: Vec<Site>,
    pub pdn: Option<(PdnGrid, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub artifacts: Artifacts,
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.to_toml().as_bytes()))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, HarnessError> {
    run_scenario_with(cfg, RunPlan::full())
}

pub fn run_scenario_with(cfg: &ScenarioConfig, plan: RunPlan) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    let stack = cfg.resolve_stack()?;
    let base = cfg.resolve_power(&stack)?;
    let grid = discretize(&stack, cfg.grid.nx, cfg.grid.ny, cfg.grid.sub_slabs).at(Stage::Stack)?;
    let system = assemble::<f64>(&grid, &stack).at(Stage::Stack)?;
    let opts = cfg.solve.clone();

    let q = power_density_field(&base, &grid, 0.0).at(Stage::Power)?;
    let (steady, stats) = solve_steady_with_stats(&system, &q, &opts).at(Stage::Steady)?;
    let steady_layers = layer_summary(&steady, &grid).at(Stage::Steady)?;

    let mut network = None;
    let mut sensor_report = None;
    if let (true, Some(section)) = (plan.sensors || plan.policy, &cfg.sensors) {
        let training = training_fields(cfg, &stack, &grid, &system, &steady, &opts)?;
        let (sites, trace) = if section.sites.is_empty() {
            let k = section.count.unwrap_or(0);
            let cand = tile_center_sites(&stack);
            let p = place_sensors_greedy(&cand, k, &training, &grid).at(Stage::Sensors)?;
            (p.sites, p.objective_trace)
        } else {
            let sites = section
                .sites
                .iter()
                .map(|s| Ok(Site::new(layer_index(&stack, s.layer)?, s.x_mm, s.y_mm)))
                .collect::<Result<Vec<_>, HarnessError>>()
                .map_err(|e| e.at(Stage::Sensors))?;
            (sites, Vec::new())
        };
        let specs = sites
            .iter()
            .map(|&s| SensorSpec {
                location: s,
                noise_sigma: section.noise_sigma,
                quantization_step: section.quantization_step,
                sample_period: section.sample_period,
            })
            .collect();
        let net = SensorNetwork::new(&stack, specs, cfg.seed).at(Stage::Sensors)?;
        let readings = read_sensors(&net, &steady, &grid, 0.0).at(Stage::Sensors)?;
        sensor_report = Some(SensorReport {
            sites: sites
                .iter()
                .map(|s| SensorSite {
                    layer: s.layer,
                    role: stack.layers[s.layer].role,
                    x_mm: s.x_mm,
                    y_mm: s.y_mm,
                })
                .collect(),
            placement_trace: trace,
            training_fields: training.len(),
            hotspot_error: hotspot_error(&sites, &training, &grid).at(Stage::Sensors)?,
            steady_readings: readings,
        });
        network = Some(net);
    }

    let mut final_field = None;
    let mut transient_report = None;
    if let (true, Some(t)) = (plan.transient, &cfg.transient) {
        let policy = if plan.policy { cfg.policy.clone() } else { None };
        let mut controller = policy.map(|p| {
            let layers = network
                .as_ref()
                .map(|n| n.sensors.iter().map(|s| s.location.layer).collect())
                .unwrap_or_default();
            Controller::new(p, layers)
        });
        let device = grid.device_layers();
        let layer_max = |f: &TemperatureField<f64>| -> Vec<f64> {
            device
                .iter()
                .map(|&l| {
                    grid.layer_voxels(l)
                        .map(|i| f.values[i])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        };

        let steps = transient_steps(t.t_end, t.dt);
        let mut field = TemperatureField::uniform(&grid, stack.ambient_temperature_c)
            .with_time(FieldTime::At(0.0));
        let mut map = base.clone();
        let mut times = vec![0.0];
        let mut samples = vec![layer_max(&field)];
        let mut events = Vec::new();
        let mut policy_samples = Vec::new();
        let mut now = 0.0;
        for k in 1..=steps {
            let h = if k == steps { t.t_end - now } else { t.dt };
            let q = power_density_field(&map, &grid, now).at(Stage::Transient)?;
            field = step_transient(&system, &field, &q, h, &opts).at(Stage::Transient)?;
            now = if k == steps { t.t_end } else { k as f64 * t.dt };
            field.time = FieldTime::At(now);
            if k % t.sample_stride == 0 || k == steps {
                times.push(now);
                samples.push(layer_max(&field));
            }
            if let (Some(c), Some(net)) = (controller.as_mut(), network.as_ref()) {
                if k % t.policy_period == 0 {
                    let readings = read_sensors(net, &field, &grid, now).at(Stage::Policy)?;
                    let ev = c.observe(now, &readings);
                    if !ev.is_empty() {
                        map = c.apply(&base, &stack)?;
                    }
                    events.extend(ev);
                    policy_samples.push(PolicySample { time: now, readings });
                }
            }
        }
        let final_readings = match &network {
            Some(net) => Some(read_sensors(net, &field, &grid, now).at(Stage::Transient)?),
            None => None,
        };
        let traces = device
            .iter()
            .enumerate()
            .map(|(j, &l)| LayerTrace {
                layer: l,
                role: stack.layers[l].role,
                max_c: samples.iter().map(|s| s[j]).collect(),
            })
            .collect();
        transient_report = Some(TransientReport {
            t_end: t.t_end,
            dt: t.dt,
            steps,
            sample_times: times,
            traces,
            final_layers: layer_summary(&field, &grid).at(Stage::Transient)?,
            final_max_reading: final_readings
                .as_ref()
                .and_then(|r| r.iter().copied().reduce(f64::max)),
            final_readings,
            events,
            policy_samples,
        });
        final_field = Some(field);
    }

    let mut pdn_artifact = None;
    let mut pdn_report = None;
    if let (true, Some(params)) = (plan.pdn, &cfg.pdn) {
        let pdn = build_pdn(&stack, params).at(Stage::Pdn)?;
        let currents = currents_from_power(&pdn, &base, &stack, 0.0).at(Stage::Pdn)?;
        let ir = solve_ir_drop(&pdn, &currents, &opts).at(Stage::Pdn)?;
        let droop = worst_case_droop(&pdn, &CurrentMap::zeros(&pdn), &currents, &opts).at(Stage::Pdn)?;
        let aggressor = pdn.layers()[0];
        let victims = coupling_report(&pdn, aggressor, COUPLING_STEP_A, &opts).at(Stage::Pdn)?;
        let role = |l: usize| stack.layers[l].role;
        pdn_report = Some(PdnReport {
            nodes: pdn.n(),
            total_current_a: currents.total(),
            max_drop_mv: ir.max() * 1e3,
            solve: ir.stats,
            layers: ir
                .layer_max(&pdn)
                .into_iter()
                .zip(droop)
                .map(|((layer, d), (_, dr))| PdnLayer {
                    layer,
                    role: role(layer),
                    max_drop_mv: d * 1e3,
                    droop_mv: dr * 1e3,
                })
                .collect(),
            coupling: CouplingSummary {
                aggressor_layer: aggressor,
                aggressor_role: role(aggressor),
                step_a: COUPLING_STEP_A,
                victims: victims
                    .into_iter()
                    .map(|(layer, d)| Victim {
                        layer,
                        role: role(layer),
                        drop_mv: d * 1e3,
                    })
                    .collect(),
            },
        });
        pdn_artifact = Some((pdn, ir.drop));
    }

    let reliability = match (plan.reliability, &cfg.reliability) {
        (true, Some(p)) => {
            let traces: Option<Vec<Vec<f64>>> = transient_report
                .as_ref()
                .map(|t| t.traces.iter().map(|l| l.max_c.clone()).collect());
            Some(
                reliability_report(&steady, &grid, &stack, traces.as_deref(), p)
                    .at(Stage::Reliability)?,
            )
        }
        _ => None,
    };

    let body = ReportBody {
        name: cfg.name.clone(),
        seed: cfg.seed,
        stack: stack.layers.iter().map(|l| l.role).collect(),
        grid: GridReport {
            nx: grid.nx,
            ny: grid.ny,
            sub_slabs: cfg.grid.sub_slabs,
            unknowns: grid.n(),
        },
        ambient_c: stack.ambient_temperature_c,
        total_power_w: total_power(&base, &stack, 0.0),
        steady: SteadyReport {
            solve: stats,
            layers: steady_layers,
        },
        sensors: sensor_report,
        transient: transient_report,
        pdn: pdn_report,
        reliability,
    };
    let report = ScenarioReport {
        provenance: Provenance {
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            deterministic: opts.deterministic,
        },
        body,
    };
    Ok(ScenarioRun {
        report,
        artifacts: Artifacts {
            stack,
            grid,
            steady,
            final_field,
            sensor_sites: network
                .map(|n| n.sensors.iter().map(|s| s.location).collect())
                .unwrap_or_default(),
            pdn: pdn_artifact,
        },
    })
}

/// Placement training set: the scenario's own steady field, one steady field
/// per built-in core proxy on every device layer, and any imported fields.
fn training_fields(
    cfg: &ScenarioConfig,
    stack: &StackConfig,
    grid: &VoxelGrid,
    system: &stackemu_core::thermal::DiscreteSystem<f64>,
    steady: &TemperatureField<f64>,
    opts: &stackemu_core::SolveOptions,
) -> Result<Vec<TemperatureField<f64>>, HarnessError> {
    let mut fields = vec![steady.clone()];
    for preset in builtin_presets() {
        let mut map = PowerMap::new(stack);
        let mut fits = true;
        for l in stack.device_layers() {
            match map.clone().apply_preset(l, &preset) {
                Ok(m) => map = m,
                Err(_) => fits = false,
            }
        }
        if !fits || preset.base_density == 0.0 {
            continue;
        }
        let q = power_density_field(&map, grid, 0.0).at(Stage::Sensors)?;
        let (f, _) = solve_steady_with_stats(system, &q, opts).at(Stage::Sensors)?;
        fields.push(f);
    }
    if let Some(s) = &cfg.sensors {
        for path in &s.training_csv {
            let file = std::fs::File::open(path)
                .map_err(|e| HarnessError::io(path, e).at(Stage::Sensors))?;
            let f = stackemu_core::io::read_field_csv(file, grid, FieldTime::Steady)
                .at(Stage::Sensors)?;
            fields.push(f);
        }
    }
    Ok(fields)
}
