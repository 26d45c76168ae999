//! Finite-volume heat conduction on a [`VoxelGrid`]: assembly, steady and
//! backward-Euler transient solves, per-layer statistics.
//!
//! Unknowns are temperature rises above ambient; the ambient offset is added
//! back when a [`TemperatureField`] is produced.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{self, CsrMatrix, SolveOptions, SolveStats, SpdOperator};
use crate::power::{power_density_field, PowerMap};
use crate::scalar::Scalar;
use crate::stack::{LayerRole, StackConfig, VoxelGrid, MM, UM};

/// Assembled conductance network of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteSystem<T = f64> {
    /// Voxel-to-voxel conductances, W/K. Rows sum to zero.
    pub conductance: CsrMatrix<T>,
    /// Conductance from the voxel to ambient through the heat sink, W/K.
    pub top: Vec<T>,
    /// Conductance from the voxel to ambient through the package, W/K.
    pub bottom: Vec<T>,
    /// Heat capacity per voxel, J/K.
    pub capacitance: Vec<T>,
    /// Voxel volumes, m³.
    pub volume: Vec<T>,
    pub ambient_c: f64,
    grid_fingerprint: u64,
    boundary: Vec<T>,
}

/// When a field was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FieldTime {
    Steady,
    At(f64),
}

/// Per-voxel temperature in °C.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField<T = f64> {
    pub values: Vec<T>,
    pub time: FieldTime,
    grid_fingerprint: u64,
}

impl<T: Scalar> TemperatureField<T> {
    pub fn new(values: Vec<T>, grid: &VoxelGrid, time: FieldTime) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(invalid(format!(
                "field has {} values, grid has {} voxels",
                values.len(),
                grid.n()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field contains non-finite values"));
        }
        Ok(TemperatureField {
            values,
            time,
            grid_fingerprint: grid.fingerprint(),
        })
    }

    /// Uniform field at `temperature_c`.
    pub fn uniform(grid: &VoxelGrid, temperature_c: f64) -> Self {
        TemperatureField {
            values: vec![T::of(temperature_c); grid.n()],
            time: FieldTime::At(0.0),
            grid_fingerprint: grid.fingerprint(),
        }
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    pub fn is_on(&self, grid: &VoxelGrid) -> bool {
        self.grid_fingerprint == grid.fingerprint() && self.values.len() == grid.n()
    }

    pub fn max(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn to_f64(&self) -> TemperatureField<f64> {
        TemperatureField {
            values: self.values.iter().map(|v| v.as_f64()).collect(),
            time: self.time,
            grid_fingerprint: self.grid_fingerprint,
        }
    }

    pub fn with_time(mut self, time: FieldTime) -> Self {
        self.time = time;
        self
    }
}

fn check_consistent(grid: &VoxelGrid, config: &StackConfig) -> Result<()> {
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if grid.n_layers() != config.layers.len()
        || !rel(grid.die_width_mm(), config.die_width_mm)
        || !rel(grid.die_length_mm(), config.die_length_mm)
    {
        return Err(invalid("grid was not built from this stack configuration"));
    }
    for (i, l) in config.layers.iter().enumerate() {
        if grid.roles[i] != l.role || !rel(grid.layer_thickness_m(i), l.thickness_um * UM) {
            return Err(invalid(format!(
                "grid layer {i} does not match the configuration"
            )));
        }
    }
    Ok(())
}

/// Series conductance of two half cells across a face.
#[inline]
fn face(area: f64, d_i: f64, k_i: f64, d_j: f64, k_j: f64) -> f64 {
    area / (d_i / (2.0 * k_i) + d_j / (2.0 * k_j))
}

/// Build the 7-point conductance network with convective top and resistive
/// package boundaries. Boundary conductances include the half-cell path from
/// the voxel center to the face; sidewalls are adiabatic.
pub fn assemble<T: Scalar>(grid: &VoxelGrid, config: &StackConfig) -> Result<DiscreteSystem<T>> {
    check_consistent(grid, config)?;
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz());
    let n = grid.n();
    let (dx, dy) = (grid.dx_m, grid.dy_m);
    let mut trip: Vec<(usize, usize, T)> = Vec::with_capacity(7 * n);
    let mut diag = vec![0.0f64; n];

    let mut link = |trip: &mut Vec<(usize, usize, T)>, i: usize, j: usize, g: f64| {
        let gt = T::of(g);
        trip.push((i, j, -gt));
        trip.push((j, i, -gt));
        diag[i] += g;
        diag[j] += g;
    };

    for z in 0..nz {
        let dz = grid.slabs[z].thickness_m;
        for y in 0..ny {
            for x in 0..nx {
                let i = grid.index(x, y, z);
                if x + 1 < nx {
                    let j = i + 1;
                    let g = face(dy * dz, dx, grid.kxy[i], dx, grid.kxy[j]);
                    link(&mut trip, i, j, g);
                }
                if y + 1 < ny {
                    let j = i + nx;
                    let g = face(dx * dz, dy, grid.kxy[i], dy, grid.kxy[j]);
                    link(&mut trip, i, j, g);
                }
                if z + 1 < nz {
                    let j = i + nx * ny;
                    let dz2 = grid.slabs[z + 1].thickness_m;
                    let g = face(dx * dy, dz, grid.kz[i], dz2, grid.kz[j]);
                    link(&mut trip, i, j, g);
                }
            }
        }
    }
    for (i, d) in diag.into_iter().enumerate() {
        trip.push((i, i, T::of(d)));
    }
    let conductance = CsrMatrix::from_triplets(n, trip);

    let area = dx * dy;
    let mut top = vec![T::zero(); n];
    let mut bottom = vec![T::zero(); n];
    let dz_top = grid.slabs[nz - 1].thickness_m;
    let dz_bot = grid.slabs[0].thickness_m;
    for y in 0..ny {
        for x in 0..nx {
            let it = grid.index(x, y, nz - 1);
            top[it] = T::of(area / (dz_top / (2.0 * grid.kz[it]) + 1.0 / config.heat_sink_h));
            let ib = grid.index(x, y, 0);
            bottom[ib] = T::of(area / (dz_bot / (2.0 * grid.kz[ib]) + config.package_resistance));
        }
    }
    let boundary: Vec<T> = top.iter().zip(&bottom).map(|(a, b)| *a + *b).collect();
    let volume: Vec<T> = (0..n).map(|i| T::of(grid.voxel_volume(i))).collect();
    let capacitance: Vec<T> = (0..n)
        .map(|i| T::of(grid.voxel_volume(i) * grid.heat_capacity[i]))
        .collect();

    Ok(DiscreteSystem {
        conductance,
        top,
        bottom,
        capacitance,
        volume,
        ambient_c: config.ambient_temperature_c,
        grid_fingerprint: grid.fingerprint(),
        boundary,
    })
}

impl<T: Scalar> DiscreteSystem<T> {
    pub fn n(&self) -> usize {
        self.conductance.n()
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    /// Total boundary conductance per voxel, W/K.
    pub fn boundary(&self) -> &[T] {
        &self.boundary
    }

    /// Steady operator `G` = conductance + boundary diagonal.
    pub fn operator(&self) -> SpdOperator<'_, T> {
        SpdOperator::with_shift(&self.conductance, &self.boundary)
    }

    /// `G` as an explicit matrix.
    pub fn full_matrix(&self) -> CsrMatrix<T> {
        let n = self.n();
        let mut trip: Vec<_> = (0..n)
            .flat_map(|i| self.conductance.row(i).map(move |(j, v)| (i, j, v)))
            .collect();
        trip.extend(self.boundary.iter().enumerate().map(|(i, &b)| (i, i, b)));
        CsrMatrix::from_triplets(n, trip)
    }

    /// Injected power per voxel (W) from a volumetric source (W/m³).
    pub fn source_vector(&self, source: &[f64]) -> Result<Vec<T>> {
        if source.len() != self.n() {
            return Err(invalid(format!(
                "source has {} entries, system has {}",
                source.len(),
                self.n()
            )));
        }
        Ok(source
            .iter()
            .zip(&self.volume)
            .map(|(q, v)| T::of(*q) * *v)
            .collect())
    }

    /// Right-hand side for absolute temperatures: power plus the ambient
    /// coupling of the boundary conductances.
    pub fn rhs(&self, source: &[f64]) -> Result<Vec<T>> {
        let amb = T::of(self.ambient_c);
        Ok(self
            .source_vector(source)?
            .into_iter()
            .zip(&self.boundary)
            .map(|(p, g)| p + *g * amb)
            .collect())
    }

    fn check_field(&self, field: &TemperatureField<T>) -> Result<()> {
        if field.grid_fingerprint != self.grid_fingerprint || field.values.len() != self.n() {
            return Err(invalid("temperature field belongs to a different grid"));
        }
        Ok(())
    }

    /// Heat leaving through (top, bottom) boundaries, W.
    pub fn boundary_flux(&self, field: &TemperatureField<T>) -> (f64, f64) {
        let amb = self.ambient_c;
        let flux = |g: &[T]| -> f64 {
            g.iter()
                .zip(&field.values)
                .filter(|(g, _)| **g > T::zero())
                .map(|(g, t)| g.as_f64() * (t.as_f64() - amb))
                .sum()
        };
        (flux(&self.top), flux(&self.bottom))
    }

    /// Largest `C_i / g_i` over voxels, using each voxel's total conductance;
    /// a crude upper scale for thermal time constants.
    pub fn max_time_constant(&self) -> f64 {
        let diag = self.operator().diagonal();
        self.capacitance
            .iter()
            .zip(&diag)
            .map(|(c, g)| c.as_f64() / g.as_f64())
            .fold(0.0, f64::max)
    }
}

fn rise_to_field<T: Scalar>(
    rise: Vec<T>,
    ambient: f64,
    fingerprint: u64,
    time: FieldTime,
) -> TemperatureField<T> {
    let amb = T::of(ambient);
    TemperatureField {
        values: rise.into_iter().map(|r| r + amb).collect(),
        time,
        grid_fingerprint: fingerprint,
    }
}

/// Steady-state temperatures for a volumetric source (W/m³).
pub fn solve_steady<T: Scalar>(
    system: &DiscreteSystem<T>,
    source: &[f64],
    options: &SolveOptions,
) -> Result<TemperatureField<T>> {
    solve_steady_with_stats(system, source, options).map(|(f, _)| f)
}

pub fn solve_steady_with_stats<T: Scalar>(
    system: &DiscreteSystem<T>,
    source: &[f64],
    options: &SolveOptions,
) -> Result<(TemperatureField<T>, SolveStats)> {
    let p = system.source_vector(source)?;
    let mut rise = vec![T::zero(); system.n()];
    let stats = linalg::solve(&system.operator(), &p, &mut rise, options)?;
    Ok((
        rise_to_field(rise, system.ambient_c, system.grid_fingerprint, FieldTime::Steady),
        stats,
    ))
}

/// One backward-Euler step: `(C/dt + G) T_new = C/dt T + b`.
pub fn step_transient<T: Scalar>(
    system: &DiscreteSystem<T>,
    field: &TemperatureField<T>,
    source: &[f64],
    dt: f64,
    options: &SolveOptions,
) -> Result<TemperatureField<T>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    system.check_field(field)?;
    let amb = T::of(system.ambient_c);
    let inv_dt = T::of(1.0 / dt);
    let c_dt: Vec<T> = system.capacitance.iter().map(|c| *c * inv_dt).collect();
    let shift: Vec<T> = c_dt.iter().zip(&system.boundary).map(|(a, b)| *a + *b).collect();
    let op = SpdOperator::with_shift(&system.conductance, &shift);

    let mut rise: Vec<T> = field.values.iter().map(|t| *t - amb).collect();
    let mut b = system.source_vector(source)?;
    for ((bi, ci), ri) in b.iter_mut().zip(&c_dt).zip(&rise) {
        *bi = *bi + *ci * *ri;
    }
    linalg::solve(&op, &b, &mut rise, options)?;
    let t_new = match field.time {
        FieldTime::At(t) => FieldTime::At(t + dt),
        FieldTime::Steady => FieldTime::At(dt),
    };
    Ok(rise_to_field(rise, system.ambient_c, system.grid_fingerprint, t_new))
}

/// Integrate from `initial` to `t_end` with step `dt`, re-evaluating the power
/// map at the start of every step. Returns every `sample_stride`-th field plus
/// the final one.
#[allow(clippy::too_many_arguments)]
pub fn solve_transient<T: Scalar>(
    system: &DiscreteSystem<T>,
    grid: &VoxelGrid,
    initial: &TemperatureField<T>,
    power: &PowerMap,
    t_end: f64,
    dt: f64,
    options: &SolveOptions,
    sample_stride: usize,
) -> Result<Vec<TemperatureField<T>>> {
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(invalid(format!(
            "t_end and dt must be positive (t_end {t_end}, dt {dt})"
        )));
    }
    if sample_stride == 0 {
        return Err(invalid("sample_stride must be >= 1"));
    }
    let steps = transient_steps(t_end, dt);
    let mut field = initial.clone().with_time(FieldTime::At(0.0));
    let mut out = Vec::new();
    let mut t = 0.0;
    for k in 1..=steps {
        let h = if k == steps { t_end - t } else { dt };
        let q = power_density_field(power, grid, t)?;
        field = step_transient(system, &field, &q, h, options)?;
        t = if k == steps { t_end } else { k as f64 * dt };
        field.time = FieldTime::At(t);
        if k % sample_stride == 0 || k == steps {
            out.push(field.clone());
        }
    }
    Ok(out)
}

/// Number of steps of size `dt` needed to reach `t_end` (last may be short).
pub fn transient_steps(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Location of a layer's hottest voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub role: LayerRole,
    pub mean_c: f64,
    pub max_c: f64,
    pub min_c: f64,
    pub hotspot: Hotspot,
}

/// Mean, max, min and hotspot of every device layer, bottom to top. Ties for
/// the hotspot go to the lowest linear voxel index.
pub fn layer_summary<T: Scalar>(
    field: &TemperatureField<T>,
    grid: &VoxelGrid,
) -> Result<Vec<LayerStats>> {
    if !field.is_on(grid) {
        return Err(invalid("temperature field belongs to a different grid"));
    }
    Ok(grid
        .device_layers()
        .into_iter()
        .map(|layer| {
            let range = grid.layer_voxels(layer);
            let count = range.len() as f64;
            let mut sum = 0.0;
            let mut min = f64::INFINITY;
            let mut best = (f64::NEG_INFINITY, range.start);
            for i in range {
                let v = field.values[i].as_f64();
                sum += v;
                min = min.min(v);
                if v > best.0 {
                    best = (v, i);
                }
            }
            let (x, y, z) = grid.coords(best.1);
            let (x_mm, y_mm) = grid.cell_center_mm(x, y);
            LayerStats {
                layer,
                role: grid.roles[layer],
                mean_c: sum / count,
                max_c: best.0,
                min_c: min,
                hotspot: Hotspot {
                    index: best.1,
                    x,
                    y,
                    z,
                    x_mm,
                    y_mm,
                },
            }
        })
        .collect())
}

/// Lateral footprint (mm) of a voxel.
pub fn voxel_footprint_mm(grid: &VoxelGrid, x: usize, y: usize) -> (f64, f64, f64, f64) {
    let (dx, dy) = (grid.dx_m / MM, grid.dy_m / MM);
    (x as f64 * dx, y as f64 * dy, (x + 1) as f64 * dx, (y + 1) as f64 * dy)
}
