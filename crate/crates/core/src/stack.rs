//! Physical description of a 3D stack and its voxel discretization.
//!
//! Units follow the configuration conventions: die dimensions and farm
//! footprints in mm, layer thicknesses and via geometry in μm, conductivity in
//! W/(m·K), volumetric heat capacity in J/(m³·K). [`VoxelGrid`] stores SI
//! (metres) internally.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tsv::{effective_conductivity, effective_heat_capacity};

pub const MM: f64 = 1e-3;
pub const UM: f64 = 1e-6;

/// Default thicknesses, μm.
pub const THINNED_DIE_UM: f64 = 50.0;
pub const S0_DIE_UM: f64 = 500.0;
pub const BEOL_UM: f64 = 10.0;
pub const BOND_UM: f64 = 20.0;
pub const PACKAGE_UM: f64 = 80.0;
pub const HEAT_SINK_TIM_UM: f64 = 25.0;

pub const DIE_WIDTH_MM: f64 = 12.0;
pub const DIE_LENGTH_MM: f64 = 6.0;
pub const AMBIENT_C: f64 = 25.0;
pub const HEAT_SINK_H: f64 = 8700.0;
pub const PACKAGE_RESISTANCE: f64 = 5e-4;
pub const TILE_ROWS: usize = 4;
pub const TILE_COLS: usize = 8;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    /// Conductivity, W/(m·K); lateral conductivity when `k_vertical` is set.
    pub k: f64,
    /// Vertical conductivity for anisotropic slabs (homogenized BEOL).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_vertical: Option<f64>,
    pub volumetric_heat_capacity: f64,
}

impl Material {
    pub fn new(name: &str, k: f64, volumetric_heat_capacity: f64) -> Self {
        Material {
            name: name.to_string(),
            k,
            k_vertical: None,
            volumetric_heat_capacity,
        }
    }

    pub fn k_vertical(&self) -> f64 {
        self.k_vertical.unwrap_or(self.k)
    }

    pub fn silicon() -> Self {
        Self::new("silicon", 150.0, 1.63e6)
    }

    pub fn copper() -> Self {
        Self::new("copper", 400.0, 3.45e6)
    }

    pub fn tungsten() -> Self {
        Self::new("tungsten", 174.0, 2.58e6)
    }

    /// SiO₂ / BEOL dielectric.
    pub fn oxide() -> Self {
        Self::new("oxide", 1.4, 1.8e6)
    }

    /// Homogenized metal/dielectric BEOL stack.
    pub fn beol() -> Self {
        Material {
            k_vertical: Some(1.0),
            ..Self::new("beol", 2.25, 1.8e6)
        }
    }

    /// μC4 / C4 bumps in underfill.
    pub fn underfill() -> Self {
        Self::new("underfill", 1.5, 1.8e6)
    }

    /// Thermal interface material between S0 and the heat sink.
    pub fn thermal_interface() -> Self {
        Self::new("tim", 4.0, 1.8e6)
    }

    /// Built-in material table lookup by name.
    pub fn builtin(name: &str) -> Option<Self> {
        Some(match name {
            "silicon" => Self::silicon(),
            "copper" => Self::copper(),
            "tungsten" => Self::tungsten(),
            "oxide" => Self::oxide(),
            "beol" => Self::beol(),
            "underfill" => Self::underfill(),
            "tim" => Self::thermal_interface(),
            _ => return None,
        })
    }

    fn is_valid(&self) -> bool {
        self.k > 0.0 && self.k_vertical() > 0.0 && self.volumetric_heat_capacity > 0.0
    }
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerRole {
    /// Package-adjacent thinned die.
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "SN1")]
    Sn1,
    #[serde(rename = "SN2")]
    Sn2,
    /// Heat-sink-adjacent die.
    #[serde(rename = "S0")]
    S0,
    BondInterface,
    #[serde(rename = "BEOL")]
    Beol,
    PackageInterface,
    HeatSinkInterface,
}

impl LayerRole {
    pub fn is_device(self) -> bool {
        matches!(self, LayerRole::Sp | LayerRole::Sn1 | LayerRole::Sn2 | LayerRole::S0)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerRole::Sp => "SP",
            LayerRole::Sn1 => "SN1",
            LayerRole::Sn2 => "SN2",
            LayerRole::S0 => "S0",
            LayerRole::BondInterface => "BondInterface",
            LayerRole::Beol => "BEOL",
            LayerRole::PackageInterface => "PackageInterface",
            LayerRole::HeatSinkInterface => "HeatSinkInterface",
        }
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned rectangle in die coordinates, mm.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn overlap_area(&self, other: &Rect) -> f64 {
        overlap_1d(self.x_min, self.x_max, other.x_min, other.x_max)
            * overlap_1d(self.y_min, self.y_max, other.y_min, other.y_max)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

pub(crate) fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvFarmSpec {
    pub footprint: Rect,
    pub via_diameter_um: f64,
    pub via_pitch_um: f64,
    pub fill_material: Material,
    pub liner_thickness_um: f64,
    pub liner_material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub role: LayerRole,
    pub thickness_um: f64,
    pub material: Material,
    #[serde(default)]
    pub has_tsvs: bool,
    #[serde(default)]
    pub tsv_farms: Vec<TsvFarmSpec>,
    #[serde(default = "default_tile_rows")]
    pub tile_rows: usize,
    #[serde(default = "default_tile_cols")]
    pub tile_cols: usize,
}

fn default_tile_rows() -> usize {
    TILE_ROWS
}

fn default_tile_cols() -> usize {
    TILE_COLS
}

impl LayerSpec {
    pub fn new(role: LayerRole, thickness_um: f64, material: Material) -> Self {
        LayerSpec {
            role,
            thickness_um,
            material,
            has_tsvs: false,
            tsv_farms: Vec::new(),
            tile_rows: TILE_ROWS,
            tile_cols: TILE_COLS,
        }
    }

    pub fn with_tsvs(mut self) -> Self {
        self.has_tsvs = true;
        self
    }

    pub fn with_farm(mut self, farm: TsvFarmSpec) -> Self {
        self.has_tsvs = true;
        self.tsv_farms.push(farm);
        self
    }

    pub fn with_tiles(mut self, rows: usize, cols: usize) -> Self {
        self.tile_rows = rows;
        self.tile_cols = cols;
        self
    }

    pub fn n_tiles(&self) -> usize {
        self.tile_rows * self.tile_cols
    }
}

/// Ordered layer stack, bottom (package) to top (heat sink).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub die_width_mm: f64,
    pub die_length_mm: f64,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_ambient")]
    pub ambient_temperature_c: f64,
    /// Top-face convective coefficient, W/(m²·K).
    #[serde(default = "default_h")]
    pub heat_sink_h: f64,
    /// Areal resistance from the bottom face to ambient, K·m²/W.
    #[serde(default = "default_rpkg")]
    pub package_resistance: f64,
}

fn default_ambient() -> f64 {
    AMBIENT_C
}

fn default_h() -> f64 {
    HEAT_SINK_H
}

fn default_rpkg() -> f64 {
    PACKAGE_RESISTANCE
}

impl StackConfig {
    pub fn die_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.die_width_mm, self.die_length_mm)
    }

    pub fn die_area_m2(&self) -> f64 {
        self.die_width_mm * MM * self.die_length_mm * MM
    }

    pub fn total_thickness_m(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness_um * UM).sum()
    }

    /// Indices of device layers, bottom to top.
    pub fn device_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.role.is_device())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn layer_index(&self, role: LayerRole) -> Option<usize> {
        self.layers.iter().position(|l| l.role == role)
    }

    /// Tile rectangle (mm) of tile `tile` in layer `layer`; row-major tiles,
    /// rows along y, columns along x.
    pub fn tile_rect(&self, layer: usize, tile: usize) -> Rect {
        let l = &self.layers[layer];
        let (r, c) = (tile / l.tile_cols, tile % l.tile_cols);
        let tw = self.die_width_mm / l.tile_cols as f64;
        let th = self.die_length_mm / l.tile_rows as f64;
        Rect::new(
            c as f64 * tw,
            r as f64 * th,
            (c + 1) as f64 * tw,
            (r + 1) as f64 * th,
        )
    }

    pub fn tile_area_m2(&self, layer: usize) -> f64 {
        self.die_area_m2() / self.layers[layer].n_tiles() as f64
    }

    /// Analytic solid volume, m³.
    pub fn total_volume_m3(&self) -> f64 {
        self.die_area_m2() * self.total_thickness_m()
    }

    /// Analytic total heat capacity, J/K.
    pub fn total_heat_capacity(&self) -> Result<f64> {
        let area = self.die_area_m2();
        let mut total = 0.0;
        for l in &self.layers {
            let t = l.thickness_um * UM;
            let c = l.material.volumetric_heat_capacity;
            total += area * t * c;
            for farm in &l.tsv_farms {
                let cf = effective_heat_capacity(farm, &l.material)?;
                let fp = farm.footprint.area() * MM * MM;
                total += fp * t * (cf - c);
            }
        }
        Ok(total)
    }
}

/// Paper stack presets: 2, 3 or 4 device layers.
pub fn preset_stack(n_layers: usize) -> Result<StackConfig> {
    let devices: &[LayerRole] = match n_layers {
        2 => &[LayerRole::Sp, LayerRole::S0],
        3 => &[LayerRole::Sp, LayerRole::Sn1, LayerRole::S0],
        4 => &[LayerRole::Sp, LayerRole::Sn2, LayerRole::Sn1, LayerRole::S0],
        _ => {
            return Err(invalid(format!(
                "preset stacks have 2, 3 or 4 layers, got {n_layers}"
            )))
        }
    };

    let mut layers = vec![LayerSpec::new(
        LayerRole::PackageInterface,
        PACKAGE_UM,
        Material::underfill(),
    )];
    for (i, &role) in devices.iter().enumerate() {
        if i > 0 {
            layers.push(LayerSpec::new(
                LayerRole::BondInterface,
                BOND_UM,
                Material::underfill(),
            ));
        }
        if role == LayerRole::S0 {
            layers.push(LayerSpec::new(role, S0_DIE_UM, Material::silicon()));
        } else {
            layers.push(LayerSpec::new(role, THINNED_DIE_UM, Material::silicon()).with_tsvs());
        }
    }
    layers.push(LayerSpec::new(
        LayerRole::HeatSinkInterface,
        HEAT_SINK_TIM_UM,
        Material::thermal_interface(),
    ));

    Ok(StackConfig {
        die_width_mm: DIE_WIDTH_MM,
        die_length_mm: DIE_LENGTH_MM,
        layers,
        ambient_temperature_c: AMBIENT_C,
        heat_sink_h: HEAT_SINK_H,
        package_resistance: PACKAGE_RESISTANCE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    DieGeometry,
    Boundary,
    Thickness,
    Material,
    TileGrid,
    MissingS0,
    DuplicateRole,
    RoleOrder,
    S0Tsvs,
    FarmsWithoutTsvs,
    FarmOutsideDie,
    FarmGeometry,
    FarmOverlap,
}

/// One broken invariant of a [`StackConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending layer, `None` for stack-wide problems.
    pub layer: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(i) => write!(f, "layer {i}: {}", self.message),
            None => write!(f, "stack: {}", self.message),
        }
    }
}

/// Check every stack invariant; an empty list means the stack is valid.
/// Stack-wide violations come first, then per-layer ones by layer index.
pub fn validate_stack(config: &StackConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer: Option<usize>, kind, message: String| {
        out.push(Violation {
            layer,
            kind,
            message,
        })
    };

    if !(config.die_width_mm > 0.0 && config.die_length_mm > 0.0) {
        push(
            None,
            ViolationKind::DieGeometry,
            format!(
                "die dimensions must be positive ({} x {} mm)",
                config.die_width_mm, config.die_length_mm
            ),
        );
    }
    if !(config.heat_sink_h > 0.0 && config.heat_sink_h.is_finite()) {
        push(
            None,
            ViolationKind::Boundary,
            format!("heat_sink_h must be positive, got {}", config.heat_sink_h),
        );
    }
    if !(config.package_resistance >= 0.0 && config.package_resistance.is_finite()) {
        push(
            None,
            ViolationKind::Boundary,
            format!(
                "package_resistance must be >= 0, got {}",
                config.package_resistance
            ),
        );
    }
    if !config.ambient_temperature_c.is_finite() || config.ambient_temperature_c <= -273.15 {
        push(
            None,
            ViolationKind::Boundary,
            format!(
                "ambient temperature {} °C is not physical",
                config.ambient_temperature_c
            ),
        );
    }
    let s0_count = config
        .layers
        .iter()
        .filter(|l| l.role == LayerRole::S0)
        .count();
    if s0_count == 0 {
        push(None, ViolationKind::MissingS0, "stack has no S0 layer".into());
    }

    let s0_pos = config.layer_index(LayerRole::S0);
    let sp_pos = config.layer_index(LayerRole::Sp);
    let die = config.die_rect();
    let n = config.layers.len();

    for (i, l) in config.layers.iter().enumerate() {
        let mut push = |kind, message: String| {
            out.push(Violation {
                layer: Some(i),
                kind,
                message,
            })
        };
        if !(l.thickness_um > 0.0 && l.thickness_um.is_finite()) {
            push(
                ViolationKind::Thickness,
                format!("thickness must be positive, got {} μm", l.thickness_um),
            );
        }
        if !l.material.is_valid() {
            push(
                ViolationKind::Material,
                format!(
                    "material '{}' needs k > 0 and heat capacity > 0",
                    l.material.name
                ),
            );
        }
        if l.role.is_device() && (l.tile_rows == 0 || l.tile_cols == 0) {
            push(
                ViolationKind::TileGrid,
                format!("tile grid {}x{} is empty", l.tile_rows, l.tile_cols),
            );
        }

        // role multiplicity and ordering
        let earlier_same = config.layers[..i].iter().any(|o| o.role == l.role);
        match l.role {
            LayerRole::S0 | LayerRole::Sp | LayerRole::Sn1 | LayerRole::Sn2 if earlier_same => {
                push(
                    ViolationKind::DuplicateRole,
                    format!("{} appears more than once", l.role),
                );
            }
            _ => {}
        }
        match l.role {
            LayerRole::Sp => {
                if let Some(s0) = s0_pos {
                    if i > s0 {
                        push(ViolationKind::RoleOrder, "SP must lie below S0".into());
                    }
                }
            }
            LayerRole::Sn1 | LayerRole::Sn2 => {
                let above_sp = sp_pos.map_or(true, |sp| i > sp);
                let below_s0 = s0_pos.map_or(true, |s0| i < s0);
                if !(above_sp && below_s0) {
                    push(
                        ViolationKind::RoleOrder,
                        format!("{} must lie between SP and S0", l.role),
                    );
                }
            }
            LayerRole::PackageInterface if i != 0 => {
                push(
                    ViolationKind::RoleOrder,
                    "PackageInterface must be the bottom layer".into(),
                );
            }
            LayerRole::HeatSinkInterface if i + 1 != n => {
                push(
                    ViolationKind::RoleOrder,
                    "HeatSinkInterface must be the top layer".into(),
                );
            }
            _ => {}
        }

        if l.role == LayerRole::S0 && l.has_tsvs {
            push(
                ViolationKind::S0Tsvs,
                "S0 is the heat-sink-adjacent die and must not carry TSVs".into(),
            );
        }
        if !l.tsv_farms.is_empty() && !l.has_tsvs {
            push(
                ViolationKind::FarmsWithoutTsvs,
                "TSV farms declared but has_tsvs is false".into(),
            );
        }
        for (f, farm) in l.tsv_farms.iter().enumerate() {
            let fp = &farm.footprint;
            if !(fp.width() > 0.0 && fp.height() > 0.0)
                || fp.x_min < 0.0
                || fp.y_min < 0.0
                || fp.x_max > die.x_max
                || fp.y_max > die.y_max
            {
                push(
                    ViolationKind::FarmOutsideDie,
                    format!("farm {f} footprint is empty or lies outside the die"),
                );
            }
            let d = farm.via_diameter_um;
            let t = farm.liner_thickness_um;
            let ok_materials = farm.fill_material.is_valid() && farm.liner_material.is_valid();
            if !(d > 0.0 && t >= 0.0 && farm.via_pitch_um > d + 2.0 * t) || !ok_materials {
                push(
                    ViolationKind::FarmGeometry,
                    format!(
                        "farm {f}: pitch {} μm must exceed diameter + 2*liner ({} μm) with valid materials",
                        farm.via_pitch_um,
                        d + 2.0 * t
                    ),
                );
            }
            for (g, other) in l.tsv_farms.iter().enumerate().skip(f + 1) {
                if fp.overlap_area(&other.footprint) > 0.0 {
                    push(
                        ViolationKind::FarmOverlap,
                        format!("farms {f} and {g} overlap"),
                    );
                }
            }
        }
    }

    // stack-wide entries were pushed first; keep per-layer entries in index order
    out.sort_by_key(|v| v.layer.map_or(0, |l| l + 1));
    out
}

/// One z-slab of the voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub thickness_m: f64,
    pub layer: usize,
    /// Sub-slab index within its layer.
    pub sub: usize,
}

/// Finite-volume discretization of a stack. Voxels are ordered row-major:
/// `index = (z * ny + y) * nx + x`, z from the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx_m: f64,
    pub dy_m: f64,
    pub slabs: Vec<Slab>,
    pub roles: Vec<LayerRole>,
    /// Lateral conductivity per voxel, W/(m·K).
    pub kxy: Vec<f64>,
    /// Vertical conductivity per voxel, W/(m·K).
    pub kz: Vec<f64>,
    /// Volumetric heat capacity per voxel, J/(m³·K).
    pub heat_capacity: Vec<f64>,
    /// Tile grid (rows, cols) per layer; `None` for non-device layers.
    pub tile_grids: Vec<Option<(usize, usize)>>,
    /// Layer of each slab, first slab index per layer.
    layer_slabs: Vec<Range<usize>>,
    fingerprint: u64,
}

/// Discretize `config` into `nx × ny` lateral cells with
/// `sub_slabs_per_layer` equal slabs per layer.
pub fn discretize(
    config: &StackConfig,
    nx: usize,
    ny: usize,
    sub_slabs_per_layer: usize,
) -> Result<VoxelGrid> {
    if nx < 2 || ny < 2 {
        return Err(invalid(format!("lateral resolution must be >= 2, got {nx}x{ny}")));
    }
    if sub_slabs_per_layer == 0 {
        return Err(invalid("sub_slabs_per_layer must be >= 1"));
    }
    let violations = validate_stack(config);
    if !violations.is_empty() {
        return Err(Error::InvalidStack(violations));
    }

    let dx_mm = config.die_width_mm / nx as f64;
    let dy_mm = config.die_length_mm / ny as f64;
    let cell_area_mm2 = dx_mm * dy_mm;

    let mut slabs = Vec::new();
    let mut layer_slabs = Vec::new();
    let mut kxy = Vec::new();
    let mut kz = Vec::new();
    let mut heat_capacity = Vec::new();

    for (li, layer) in config.layers.iter().enumerate() {
        let base = &layer.material;
        let farms = layer
            .tsv_farms
            .iter()
            .map(|f| {
                Ok((
                    f.footprint,
                    effective_conductivity(f, base)?,
                    effective_heat_capacity(f, base)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        // lateral property map for one slab of this layer
        let mut plane_kxy = vec![base.k; nx * ny];
        let mut plane_kz = vec![base.k_vertical(); nx * ny];
        let mut plane_c = vec![base.volumetric_heat_capacity; nx * ny];
        if !farms.is_empty() {
            for y in 0..ny {
                for x in 0..nx {
                    let cell = Rect::new(
                        x as f64 * dx_mm,
                        y as f64 * dy_mm,
                        (x + 1) as f64 * dx_mm,
                        (y + 1) as f64 * dy_mm,
                    );
                    let mut covered = 0.0;
                    let (mut sxy, mut sz, mut sc) = (0.0, 0.0, 0.0);
                    for (fp, eff, c) in &farms {
                        let frac = (fp.overlap_area(&cell) / cell_area_mm2).min(1.0);
                        if frac > 0.0 {
                            covered += frac;
                            sxy += frac * eff.kxy;
                            sz += frac * eff.kz;
                            sc += frac * c;
                        }
                    }
                    if covered > 0.0 {
                        let rest = (1.0 - covered).max(0.0);
                        let i = y * nx + x;
                        plane_kxy[i] = rest * base.k + sxy;
                        plane_kz[i] = rest * base.k_vertical() + sz;
                        plane_c[i] = rest * base.volumetric_heat_capacity + sc;
                    }
                }
            }
        }

        let start = slabs.len();
        let t = layer.thickness_um * UM / sub_slabs_per_layer as f64;
        for sub in 0..sub_slabs_per_layer {
            slabs.push(Slab {
                thickness_m: t,
                layer: li,
                sub,
            });
            kxy.extend_from_slice(&plane_kxy);
            kz.extend_from_slice(&plane_kz);
            heat_capacity.extend_from_slice(&plane_c);
        }
        layer_slabs.push(start..slabs.len());
    }

    let tile_grids = config
        .layers
        .iter()
        .map(|l| l.role.is_device().then_some((l.tile_rows, l.tile_cols)))
        .collect();

    let mut grid = VoxelGrid {
        nx,
        ny,
        dx_m: dx_mm * MM,
        dy_m: dy_mm * MM,
        slabs,
        roles: config.layers.iter().map(|l| l.role).collect(),
        kxy,
        kz,
        heat_capacity,
        tile_grids,
        layer_slabs,
        fingerprint: 0,
    };
    grid.fingerprint = grid.compute_fingerprint();
    Ok(grid)
}

impl VoxelGrid {
    pub fn nz(&self) -> usize {
        self.slabs.len()
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny * self.nz()
    }

    pub fn n_layers(&self) -> usize {
        self.roles.len()
    }

    /// Identity of the grid geometry and material map.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn compute_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.nx.hash(&mut h);
        self.ny.hash(&mut h);
        self.dx_m.to_bits().hash(&mut h);
        self.dy_m.to_bits().hash(&mut h);
        for s in &self.slabs {
            s.thickness_m.to_bits().hash(&mut h);
            s.layer.hash(&mut h);
        }
        for v in self.kxy.iter().chain(&self.kz).chain(&self.heat_capacity) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    /// `(x, y, z)` of a linear voxel index.
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let plane = self.nx * self.ny;
        let z = i / plane;
        let r = i % plane;
        (r % self.nx, r / self.nx, z)
    }

    pub fn layer_of(&self, i: usize) -> usize {
        self.slabs[i / (self.nx * self.ny)].layer
    }

    /// Slab range belonging to `layer`.
    pub fn layer_slabs(&self, layer: usize) -> Range<usize> {
        self.layer_slabs[layer].clone()
    }

    /// Voxel index range belonging to `layer`.
    pub fn layer_voxels(&self, layer: usize) -> Range<usize> {
        let plane = self.nx * self.ny;
        let r = self.layer_slabs(layer);
        r.start * plane..r.end * plane
    }

    pub fn device_layers(&self) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&l| self.roles[l].is_device())
            .collect()
    }

    pub fn layer_thickness_m(&self, layer: usize) -> f64 {
        self.layer_slabs(layer)
            .map(|s| self.slabs[s].thickness_m)
            .sum()
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.dx_m * self.dy_m
    }

    pub fn voxel_volume(&self, i: usize) -> f64 {
        self.cell_area_m2() * self.slabs[i / (self.nx * self.ny)].thickness_m
    }

    /// Lateral cell center, mm.
    pub fn cell_center_mm(&self, x: usize, y: usize) -> (f64, f64) {
        (
            (x as f64 + 0.5) * self.dx_m / MM,
            (y as f64 + 0.5) * self.dy_m / MM,
        )
    }

    /// Lateral cell containing the point (mm), clamped to the die.
    pub fn cell_at_mm(&self, x_mm: f64, y_mm: f64) -> (usize, usize) {
        let cx = ((x_mm * MM / self.dx_m).floor().max(0.0) as usize).min(self.nx - 1);
        let cy = ((y_mm * MM / self.dy_m).floor().max(0.0) as usize).min(self.ny - 1);
        (cx, cy)
    }

    pub fn die_width_mm(&self) -> f64 {
        self.dx_m * self.nx as f64 / MM
    }

    pub fn die_length_mm(&self) -> f64 {
        self.dy_m * self.ny as f64 / MM
    }

    /// Tile containing voxel `i` (by cell center), `None` outside device layers.
    pub fn tile_of(&self, i: usize) -> Option<usize> {
        let layer = self.layer_of(i);
        let (rows, cols) = self.tile_grids[layer]?;
        let (x, y, _) = self.coords(i);
        let (cx, cy) = self.cell_center_mm(x, y);
        let c = ((cx / (self.die_width_mm() / cols as f64)) as usize).min(cols - 1);
        let r = ((cy / (self.die_length_mm() / rows as f64)) as usize).min(rows - 1);
        Some(r * cols + c)
    }

    pub fn total_volume_m3(&self) -> f64 {
        (0..self.n()).map(|i| self.voxel_volume(i)).sum()
    }

    pub fn total_heat_capacity(&self) -> f64 {
        (0..self.n())
            .map(|i| self.voxel_volume(i) * self.heat_capacity[i])
            .sum()
    }

    pub fn total_thickness_m(&self) -> f64 {
        self.slabs.iter().map(|s| s.thickness_m).sum()
    }
}
