//! Tile-level heat generators and their conversion to volumetric sources.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stack::{overlap_1d, StackConfig, VoxelGrid, MM};

/// W/cm² to W/m².
pub const W_PER_CM2: f64 = 1e4;

/// Time behaviour of one tile's areal power density (W/cm²).
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalProfile {
    Constant {
        p: f64,
    },
    Step {
        p0: f64,
        p1: f64,
        t_switch: f64,
    },
    /// Square wave: `p_high` for the first `duty` fraction of each period.
    Periodic {
        p_low: f64,
        p_high: f64,
        period: f64,
        duty: f64,
    },
    /// Piecewise-linear samples `(t, p)`; holds the first/last value outside.
    Trace {
        samples: Vec<(f64, f64)>,
    },
}

impl Default for TemporalProfile {
    fn default() -> Self {
        TemporalProfile::Constant { p: 0.0 }
    }
}

impl TemporalProfile {
    pub fn constant(p: f64) -> Self {
        TemporalProfile::Constant { p }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        let ok = match self {
            TemporalProfile::Constant { p } => nonneg(*p),
            TemporalProfile::Step { p0, p1, t_switch } => {
                nonneg(*p0) && nonneg(*p1) && t_switch.is_finite()
            }
            TemporalProfile::Periodic {
                p_low,
                p_high,
                period,
                duty,
            } => {
                nonneg(*p_low)
                    && nonneg(*p_high)
                    && *period > 0.0
                    && period.is_finite()
                    && (0.0..=1.0).contains(duty)
            }
            TemporalProfile::Trace { samples } => {
                !samples.is_empty()
                    && samples.iter().all(|&(t, p)| t.is_finite() && nonneg(p))
                    && samples.windows(2).all(|w| w[1].0 > w[0].0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid temporal profile {self:?}")))
        }
    }

    /// Power density at time `t`, W/cm².
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TemporalProfile::Constant { p } => *p,
            TemporalProfile::Step { p0, p1, t_switch } => {
                if t < *t_switch {
                    *p0
                } else {
                    *p1
                }
            }
            TemporalProfile::Periodic {
                p_low,
                p_high,
                period,
                duty,
            } => {
                let phase = (t / period).rem_euclid(1.0);
                if phase < *duty {
                    *p_high
                } else {
                    *p_low
                }
            }
            TemporalProfile::Trace { samples } => {
                let (first, last) = (samples[0], samples[samples.len() - 1]);
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let k = samples.partition_point(|s| s.0 <= t);
                let (a, b) = (samples[k - 1], samples[k]);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        }
    }

    /// Same profile with every power level multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            TemporalProfile::Constant { p } => TemporalProfile::Constant { p: p * factor },
            TemporalProfile::Step { p0, p1, t_switch } => TemporalProfile::Step {
                p0: p0 * factor,
                p1: p1 * factor,
                t_switch: *t_switch,
            },
            TemporalProfile::Periodic {
                p_low,
                p_high,
                period,
                duty,
            } => TemporalProfile::Periodic {
                p_low: p_low * factor,
                p_high: p_high * factor,
                period: *period,
                duty: *duty,
            },
            TemporalProfile::Trace { samples } => TemporalProfile::Trace {
                samples: samples.iter().map(|&(t, p)| (t, p * factor)).collect(),
            },
        }
    }
}

/// Parse a trace CSV with header `t_seconds,power_w_per_cm2`.
pub fn load_trace_csv<R: std::io::Read>(reader: R) -> Result<TemporalProfile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "t_seconds" || &headers[1] != "power_w_per_cm2" {
        return Err(Error::Parse(format!(
            "trace header must be 't_seconds,power_w_per_cm2', got '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (line, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (t, p) = rec.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        if let Some(&(prev, _)) = samples.last() {
            if t <= prev {
                return Err(Error::Parse(format!(
                    "row {}: time {t} is not after {prev}",
                    line + 2
                )));
            }
        }
        samples.push((t, p));
    }
    let profile = TemporalProfile::Trace { samples };
    profile.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(profile)
}

/// Named spatial power signature for a whole device layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreProxyPreset {
    pub name: String,
    /// Multipliers, `[row][col]`.
    pub spatial_pattern: Vec<Vec<f64>>,
    /// W/cm².
    pub base_density: f64,
}

impl CoreProxyPreset {
    pub fn validate(&self) -> Result<()> {
        let rows = self.spatial_pattern.len();
        let cols = self.spatial_pattern.first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 || self.spatial_pattern.iter().any(|r| r.len() != cols) {
            return Err(invalid(format!("preset '{}' has a ragged pattern", self.name)));
        }
        let flat = || self.spatial_pattern.iter().flatten();
        if flat().any(|&m| !(m >= 0.0)) || !flat().any(|&m| m > 0.0) {
            return Err(invalid(format!(
                "preset '{}' multipliers must be >= 0 with at least one positive",
                self.name
            )));
        }
        if !(self.base_density >= 0.0) {
            return Err(invalid(format!("preset '{}' has negative density", self.name)));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (
            self.spatial_pattern.len(),
            self.spatial_pattern.first().map_or(0, |r| r.len()),
        )
    }
}

#[derive(Deserialize)]
struct PresetFile {
    preset: Vec<CoreProxyPreset>,
}

const PRESET_TABLE: &str = include_str!("../data/presets.toml");

/// The shipped preset library (cpu_core, gpu_sm, cache, dram, accelerator, idle).
pub fn builtin_presets() -> Vec<CoreProxyPreset> {
    let file: PresetFile = toml::from_str(PRESET_TABLE).expect("bundled preset table parses");
    file.preset
}

pub fn builtin_preset(name: &str) -> Option<CoreProxyPreset> {
    builtin_presets().into_iter().find(|p| p.name == name)
}

/// Per-tile temporal profiles for every device layer of a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerMap {
    /// Indexed by stack layer; `None` for non-device layers.
    layers: Vec<Option<TileProfiles>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TileProfiles {
    rows: usize,
    cols: usize,
    tiles: Vec<TemporalProfile>,
}

impl PowerMap {
    /// All-zero map shaped after the stack's tile grids.
    pub fn new(config: &StackConfig) -> Self {
        PowerMap {
            layers: config
                .layers
                .iter()
                .map(|l| {
                    l.role.is_device().then(|| TileProfiles {
                        rows: l.tile_rows,
                        cols: l.tile_cols,
                        tiles: vec![TemporalProfile::default(); l.tile_rows * l.tile_cols],
                    })
                })
                .collect(),
        }
    }

    /// Every device tile at a constant density.
    pub fn uniform(config: &StackConfig, density: f64) -> Self {
        let mut m = Self::new(config);
        for layer in m.layers.iter_mut().flatten() {
            layer.tiles.fill(TemporalProfile::constant(density));
        }
        m
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn device_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_some())
            .collect()
    }

    /// `(rows, cols)` tile grid of a device layer.
    pub fn tile_grid(&self, layer: usize) -> Option<(usize, usize)> {
        self.layers
            .get(layer)?
            .as_ref()
            .map(|t| (t.rows, t.cols))
    }

    fn layer(&self, layer: usize) -> Result<&TileProfiles> {
        self.layers
            .get(layer)
            .and_then(|l| l.as_ref())
            .ok_or_else(|| invalid(format!("layer {layer} is not a device layer")))
    }

    fn layer_mut(&mut self, layer: usize) -> Result<&mut TileProfiles> {
        self.layers
            .get_mut(layer)
            .and_then(|l| l.as_mut())
            .ok_or_else(|| invalid(format!("layer {layer} is not a device layer")))
    }

    pub fn tile(&self, layer: usize, tile: usize) -> Result<&TemporalProfile> {
        let l = self.layer(layer)?;
        l.tiles
            .get(tile)
            .ok_or_else(|| invalid(format!("tile {tile} out of range for layer {layer}")))
    }

    pub fn tiles(&self, layer: usize) -> Result<&[TemporalProfile]> {
        Ok(&self.layer(layer)?.tiles)
    }

    /// Replace one tile's profile.
    pub fn set_tile_power(
        mut self,
        layer: usize,
        tile: usize,
        profile: TemporalProfile,
    ) -> Result<Self> {
        profile.validate()?;
        let l = self.layer_mut(layer)?;
        let slot = l
            .tiles
            .get_mut(tile)
            .ok_or_else(|| invalid(format!("tile {tile} out of range for layer {layer}")))?;
        *slot = profile;
        Ok(self)
    }

    /// Tile `(r, c)` of `layer` becomes `Constant(base_density * pattern[r][c])`.
    pub fn apply_preset(mut self, layer: usize, preset: &CoreProxyPreset) -> Result<Self> {
        preset.validate()?;
        let l = self.layer_mut(layer)?;
        if preset.shape() != (l.rows, l.cols) {
            return Err(invalid(format!(
                "preset '{}' is {:?} but layer {layer} has a {}x{} tile grid",
                preset.name,
                preset.shape(),
                l.rows,
                l.cols
            )));
        }
        for (r, row) in preset.spatial_pattern.iter().enumerate() {
            for (c, m) in row.iter().enumerate() {
                l.tiles[r * l.cols + c] = TemporalProfile::constant(preset.base_density * m);
            }
        }
        Ok(self)
    }

    /// Scale every tile of `layer` by `factor`.
    pub fn scale_layer(mut self, layer: usize, factor: f64) -> Result<Self> {
        let l = self.layer_mut(layer)?;
        for t in l.tiles.iter_mut() {
            *t = t.scaled(factor);
        }
        Ok(self)
    }

    /// Exchange the profiles of two tiles (possibly on different layers).
    pub fn swap_tiles(mut self, a: (usize, usize), b: (usize, usize)) -> Result<Self> {
        let pa = self.tile(a.0, a.1)?.clone();
        let pb = self.tile(b.0, b.1)?.clone();
        self.layer_mut(a.0)?.tiles[a.1] = pb;
        self.layer_mut(b.0)?.tiles[b.1] = pa;
        Ok(self)
    }

    /// Tile density at `t`, W/cm².
    pub fn density(&self, layer: usize, tile: usize, t: f64) -> Result<f64> {
        Ok(self.tile(layer, tile)?.eval(t))
    }

    fn check_against_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if self.layers.len() != grid.n_layers() {
            return Err(invalid("power map and grid have different layer counts"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let shape = l.as_ref().map(|t| (t.rows, t.cols));
            if shape != grid.tile_grids[i] {
                return Err(invalid(format!(
                    "layer {i}: power map tiles {shape:?} do not match grid {:?}",
                    grid.tile_grids[i]
                )));
            }
        }
        Ok(())
    }
}

/// Volumetric heat source (W/m³) per voxel at time `t`.
///
/// A tile's areal density is spread through the full thickness of its device
/// layer. Voxels straddling tile boundaries receive the area-weighted mix, so
/// the volume integral equals [`total_power`] at any resolution.
pub fn power_density_field(map: &PowerMap, grid: &VoxelGrid, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    map.check_against_grid(grid)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let plane = nx * ny;
    let mut field = vec![0.0; grid.n()];
    let width = grid.die_width_mm();
    let length = grid.die_length_mm();
    let (dx, dy) = (grid.dx_m / MM, grid.dy_m / MM);
    let cell_area = dx * dy;

    for (layer, tiles) in map.layers.iter().enumerate() {
        let Some(tiles) = tiles else { continue };
        let densities: Vec<f64> = tiles.tiles.iter().map(|p| p.eval(t) * W_PER_CM2).collect();
        if densities.iter().all(|&d| d == 0.0) {
            continue;
        }
        let thickness = grid.layer_thickness_m(layer);
        let tw = width / tiles.cols as f64;
        let th = length / tiles.rows as f64;

        // overlap fractions of cell columns with tile columns (and rows)
        let xf = overlap_table(nx, dx, tiles.cols, tw);
        let yf = overlap_table(ny, dy, tiles.rows, th);

        let mut areal = vec![0.0; plane];
        for y in 0..ny {
            for x in 0..nx {
                let mut q = 0.0;
                for &(r, wy) in &yf[y] {
                    for &(c, wx) in &xf[x] {
                        q += densities[r * tiles.cols + c] * wx * wy;
                    }
                }
                areal[y * nx + x] = q / cell_area;
            }
        }
        for z in grid.layer_slabs(layer) {
            let off = z * plane;
            for (dst, q) in field[off..off + plane].iter_mut().zip(&areal) {
                *dst = q / thickness;
            }
        }
    }
    Ok(field)
}

/// For each of `n` cells of width `d`, the `(tile, overlap length)` pairs
/// against `m` tiles of width `w`.
fn overlap_table(n: usize, d: f64, m: usize, w: f64) -> Vec<Vec<(usize, f64)>> {
    (0..n)
        .map(|i| {
            let (a0, a1) = (i as f64 * d, (i + 1) as f64 * d);
            let first = ((a0 / w).floor() as usize).min(m - 1);
            let last = ((a1 / w).ceil() as usize).clamp(first + 1, m);
            (first..last)
                .map(|j| (j, overlap_1d(a0, a1, j as f64 * w, (j + 1) as f64 * w)))
                .filter(|&(_, o)| o > 0.0)
                .collect()
        })
        .collect()
}

/// Total injected power at time `t`, W.
pub fn total_power(map: &PowerMap, config: &StackConfig, t: f64) -> f64 {
    map.layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().map(|l| (i, l)))
        .map(|(i, l)| {
            let area = config.tile_area_m2(i);
            l.tiles.iter().map(|p| p.eval(t) * W_PER_CM2 * area).sum::<f64>()
        })
        .sum()
}
