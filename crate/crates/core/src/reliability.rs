//! Relative lifetime screening: Arrhenius electromigration acceleration,
//! rainflow thermal-cycling damage and a gradient-based stress proxy near
//! via farms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::stack::{LayerRole, StackConfig, VoxelGrid, MM};
use crate::thermal::{layer_summary, TemperatureField};

/// Boltzmann constant, eV/K.
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;
pub const ZERO_CELSIUS_K: f64 = 273.15;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilityParams {
    /// Activation energy, eV.
    pub activation_energy: f64,
    /// °C.
    pub reference_temperature_c: f64,
    pub cycling_exponent: f64,
    /// Cycle range that scores one unit of damage, K.
    pub reference_cycle_k: f64,
    /// Gradient multiplier in and around via farms.
    pub stress_cte_weight: f64,
    /// Scores at or above this percentile are reported.
    pub stress_percentile: f64,
}

impl Default for ReliabilityParams {
    fn default() -> Self {
        ReliabilityParams {
            activation_energy: 0.7,
            reference_temperature_c: 105.0,
            cycling_exponent: 2.0,
            reference_cycle_k: 20.0,
            stress_cte_weight: 3.0,
            stress_percentile: 99.0,
        }
    }
}

impl ReliabilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.activation_energy > 0.0) || !(self.cycling_exponent > 0.0) {
            return Err(invalid("activation energy and cycling exponent must be > 0"));
        }
        if !(self.reference_temperature_c > -ZERO_CELSIUS_K) {
            return Err(invalid("reference temperature is below absolute zero"));
        }
        if !(self.reference_cycle_k > 0.0) || !(self.stress_cte_weight > 0.0) {
            return Err(invalid("reference cycle and stress weight must be > 0"));
        }
        if !(0.0..=100.0).contains(&self.stress_percentile) {
            return Err(invalid("stress percentile must lie in [0, 100]"));
        }
        Ok(())
    }
}

/// Electromigration acceleration at `t_c` relative to the reference
/// temperature.
pub fn em_acceleration(t_c: f64, params: &ReliabilityParams) -> Result<f64> {
    if !(t_c > -ZERO_CELSIUS_K) || !t_c.is_finite() {
        return Err(invalid(format!("temperature {t_c} °C is not physical")));
    }
    let t_ref = params.reference_temperature_c + ZERO_CELSIUS_K;
    let t = t_c + ZERO_CELSIUS_K;
    Ok((params.activation_energy / BOLTZMANN_EV * (1.0 / t_ref - 1.0 / t)).exp())
}

/// Turning points of a trace; plateaus collapse to one point, the endpoints
/// are kept.
pub fn reversals(trace: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(trace.len());
    for &v in trace {
        if pts.last() == Some(&v) {
            continue;
        }
        if pts.len() >= 2 {
            let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
            if (b - a) * (v - b) > 0.0 {
                // still monotone: extend the current run
                *pts.last_mut().unwrap() = v;
                continue;
            }
        }
        pts.push(v);
    }
    pts
}

/// One counted range: weight 1 for a full cycle, 0.5 for a half cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub range: f64,
    pub weight: f64,
}

/// Three-point rainflow count.
pub fn rainflow(trace: &[f64]) -> Vec<Cycle> {
    let mut cycles = Vec::new();
    let mut stack: Vec<f64> = Vec::new();
    for p in reversals(trace) {
        stack.push(p);
        while stack.len() >= 3 {
            let k = stack.len();
            let x = (stack[k - 1] - stack[k - 2]).abs();
            let y = (stack[k - 2] - stack[k - 3]).abs();
            if x < y {
                break;
            }
            if k == 3 {
                cycles.push(Cycle { range: y, weight: 0.5 });
                stack.remove(0);
            } else {
                cycles.push(Cycle { range: y, weight: 1.0 });
                let last = stack.pop().unwrap();
                stack.truncate(k - 3);
                stack.push(last);
            }
        }
    }
    for w in stack.windows(2) {
        cycles.push(Cycle { range: (w[1] - w[0]).abs(), weight: 0.5 });
    }
    cycles
}

/// Damage of one trace; one full cycle of the reference range scores 1.
pub fn trace_damage(trace: &[f64], params: &ReliabilityParams) -> Result<f64> {
    if trace.len() < 2 {
        return Err(invalid("cycling damage needs at least two samples"));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(invalid("trace contains non-finite samples"));
    }
    Ok(rainflow(trace)
        .iter()
        .map(|c| c.weight * (c.range / params.reference_cycle_k).powf(params.cycling_exponent))
        .sum())
}

/// Damage index per trace, e.g. one max-temperature trace per layer.
pub fn cycling_damage(traces: &[Vec<f64>], params: &ReliabilityParams) -> Result<Vec<f64>> {
    params.validate()?;
    traces.iter().map(|t| trace_damage(t, params)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressPoint {
    pub index: usize,
    pub layer: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    pub score: f64,
}

/// Per-voxel weight: `stress_cte_weight` in and one cell around via farms of
/// the voxel's layer, 1 elsewhere.
pub fn stress_weights(grid: &VoxelGrid, config: &StackConfig, weight: f64) -> Vec<f64> {
    let mut w = vec![1.0; grid.n()];
    let (dx, dy) = (grid.dx_m / MM, grid.dy_m / MM);
    for (layer, spec) in config.layers.iter().enumerate() {
        if spec.tsv_farms.is_empty() {
            continue;
        }
        let mut near = vec![false; grid.nx * grid.ny];
        for farm in &spec.tsv_farms {
            let f = &farm.footprint;
            for y in 0..grid.ny {
                for x in 0..grid.nx {
                    let (x0, y0) = (x as f64 * dx, y as f64 * dy);
                    let inside = f.x_min < x0 + dx && f.x_max > x0 && f.y_min < y0 + dy && f.y_max > y0;
                    if !inside {
                        continue;
                    }
                    for yy in y.saturating_sub(1)..=(y + 1).min(grid.ny - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(grid.nx - 1) {
                            near[yy * grid.nx + xx] = true;
                        }
                    }
                }
            }
        }
        for i in grid.layer_voxels(layer) {
            let (x, y, _) = grid.coords(i);
            if near[y * grid.nx + x] {
                w[i] = weight;
            }
        }
    }
    w
}

/// Lateral temperature gradient magnitude per voxel, K/mm. Central
/// differences inside, one-sided at the die edge.
pub fn lateral_gradient<T: Scalar>(field: &TemperatureField<T>, grid: &VoxelGrid) -> Vec<f64> {
    let (dx, dy) = (grid.dx_m / MM, grid.dy_m / MM);
    let v = |x: usize, y: usize, z: usize| field.values[grid.index(x, y, z)].as_f64();
    let diff = |i: usize, n: usize, h: f64, get: &dyn Fn(usize) -> f64| {
        if n < 2 {
            0.0
        } else if i == 0 {
            (get(1) - get(0)) / h
        } else if i == n - 1 {
            (get(n - 1) - get(n - 2)) / h
        } else {
            (get(i + 1) - get(i - 1)) / (2.0 * h)
        }
    };
    (0..grid.n())
        .map(|i| {
            let (x, y, z) = grid.coords(i);
            let gx = diff(x, grid.nx, dx, &|k| v(k, y, z));
            let gy = diff(y, grid.ny, dy, &|k| v(x, k, z));
            gx.hypot(gy)
        })
        .collect()
}

/// Gradient × mismatch weight over device-layer voxels; returns the scores at
/// or above the configured percentile that are strictly positive, sorted by
/// descending score, ties by voxel index.
pub fn stress_proxy<T: Scalar>(
    field: &TemperatureField<T>,
    grid: &VoxelGrid,
    config: &StackConfig,
    params: &ReliabilityParams,
) -> Result<Vec<StressPoint>> {
    params.validate()?;
    if !field.is_on(grid) {
        return Err(invalid("temperature field belongs to a different grid"));
    }
    let grad = lateral_gradient(field, grid);
    let weights = stress_weights(grid, config, params.stress_cte_weight);
    let voxels: Vec<usize> = grid
        .device_layers()
        .into_iter()
        .flat_map(|l| grid.layer_voxels(l))
        .collect();
    let scores: Vec<(usize, f64)> = voxels.iter().map(|&i| (i, grad[i] * weights[i])).collect();
    let threshold = percentile(scores.iter().map(|s| s.1).collect(), params.stress_percentile);
    let mut hot: Vec<StressPoint> = scores
        .into_iter()
        .filter(|&(_, s)| s > 0.0 && s >= threshold)
        .map(|(i, score)| {
            let (x, y, z) = grid.coords(i);
            let (x_mm, y_mm) = grid.cell_center_mm(x, y);
            StressPoint { index: i, layer: grid.layer_of(i), x, y, z, x_mm, y_mm, score }
        })
        .collect();
    hot.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(hot)
}

/// Nearest-rank percentile.
fn percentile(mut values: Vec<f64>, p: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil().max(1.0) as usize;
    values[rank.min(values.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReliability {
    pub layer: usize,
    pub role: LayerRole,
    pub max_c: f64,
    pub em_acceleration: f64,
    pub cycling_damage: f64,
    pub stress_hotspots: Vec<StressPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub layers: Vec<LayerReliability>,
    /// Layer with the largest acceleration, i.e. the shortest relative MTTF.
    pub min_mttf_layer: usize,
}

/// Per-layer screening of a steady field plus optional per-layer max
/// temperature traces (one per device layer, bottom to top). Without traces
/// the cycling damage is 0.
pub fn reliability_report<T: Scalar>(
    steady: &TemperatureField<T>,
    grid: &VoxelGrid,
    config: &StackConfig,
    traces: Option<&[Vec<f64>]>,
    params: &ReliabilityParams,
) -> Result<ReliabilityReport> {
    params.validate()?;
    let stats = layer_summary(steady, grid)?;
    let damage = match traces {
        Some(t) if t.len() != stats.len() => {
            return Err(invalid(format!(
                "{} traces for {} device layers",
                t.len(),
                stats.len()
            )))
        }
        Some(t) => cycling_damage(t, params)?,
        None => vec![0.0; stats.len()],
    };
    let stress = stress_proxy(steady, grid, config, params)?;
    let layers: Vec<LayerReliability> = stats
        .iter()
        .zip(damage)
        .map(|(s, d)| {
            Ok(LayerReliability {
                layer: s.layer,
                role: s.role,
                max_c: s.max_c,
                em_acceleration: em_acceleration(s.max_c, params)?,
                cycling_damage: d,
                stress_hotspots: stress.iter().filter(|p| p.layer == s.layer).copied().collect(),
            })
        })
        .collect::<Result<_>>()?;
    // farthest from the heat sink (lowest index) wins ties
    let mut min_mttf = &layers[0];
    for l in &layers[1..] {
        if l.em_acceleration > min_mttf.em_acceleration {
            min_mttf = l;
        }
    }
    Ok(ReliabilityReport {
        min_mttf_layer: min_mttf.layer,
        layers,
    })
}
