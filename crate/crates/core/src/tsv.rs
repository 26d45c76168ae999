//! Effective thermal conductivity of through-silicon-via farms.
//!
//! A farm is a square array of filled vias, each wrapped in a liner annulus,
//! embedded in the host die material. Along the via axis the three phases
//! conduct in parallel. Across the axis each coated via is first collapsed
//! into an equivalent cylinder (composite-cylinder formula) which is then
//! embedded in the host with the two-dimensional Maxwell–Eucken relation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::stack::{Material, TsvFarmSpec};

/// Homogenized conductivity of a via farm region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConductivity<T = f64> {
    /// Along the via axis, W/(m·K).
    pub kz: T,
    /// Across the via axis, W/(m·K).
    pub kxy: T,
    pub fill_fraction: T,
    pub liner_fraction: T,
}

/// Area fractions of one unit cell of a square via array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViaFractions<T> {
    pub fill: T,
    pub liner: T,
}

impl<T: Scalar> ViaFractions<T> {
    /// Fractions for via core diameter `d`, liner thickness `t` and pitch `p`
    /// (any consistent length unit).
    pub fn new(d: T, t: T, p: T) -> Result<Self> {
        let zero = T::zero();
        let two = T::of(2.0);
        if !(d > zero) || t < zero || !(p > zero) {
            return Err(invalid(format!(
                "via geometry must be positive (diameter {d}, liner {t}, pitch {p})"
            )));
        }
        if !(p > d + two * t) {
            return Err(invalid(format!(
                "via pitch {p} must exceed diameter + 2*liner = {}",
                d + two * t
            )));
        }
        let pi = T::of(PI);
        let r = d / two;
        let cell = p * p;
        let fill = pi * r * r / cell;
        let outer = pi * (r + t) * (r + t) / cell;
        Ok(ViaFractions {
            fill,
            liner: outer - fill,
        })
    }

    pub fn total(&self) -> T {
        self.fill + self.liner
    }
}

/// Conductivity of a core cylinder (`k_core`) coated by a shell (`k_shell`)
/// for transverse conduction; `core_ratio` is (r_core / r_outer)^2.
pub fn coated_cylinder<T: Scalar>(k_core: T, k_shell: T, core_ratio: T) -> T {
    let sum = k_core + k_shell;
    let diff = (k_core - k_shell) * core_ratio;
    k_shell * (sum + diff) / (sum - diff)
}

/// Two-dimensional Maxwell–Eucken conductivity of cylinders (`k_incl`) at
/// area fraction `phi` in a continuous matrix (`k_matrix`).
pub fn maxwell_eucken_2d<T: Scalar>(k_matrix: T, k_incl: T, phi: T) -> T {
    let sum = k_incl + k_matrix;
    let diff = (k_incl - k_matrix) * phi;
    k_matrix * (sum + diff) / (sum - diff)
}

/// Homogenize a farm given its geometry fractions and phase conductivities.
///
/// `k_base_lateral` and `k_base_vertical` allow an anisotropic host.
pub fn homogenize<T: Scalar>(
    fractions: ViaFractions<T>,
    k_fill: T,
    k_liner: T,
    k_base_lateral: T,
    k_base_vertical: T,
) -> EffectiveConductivity<T> {
    let one = T::one();
    let ViaFractions { fill, liner } = fractions;
    let kz = fill * k_fill + liner * k_liner + (one - fill - liner) * k_base_vertical;

    let total = fill + liner;
    let kxy = if total > T::zero() {
        let inclusion = if liner > T::zero() {
            coated_cylinder(k_fill, k_liner, fill / total)
        } else {
            k_fill
        };
        maxwell_eucken_2d(k_base_lateral, inclusion, total)
    } else {
        k_base_lateral
    };

    EffectiveConductivity {
        kz,
        kxy,
        fill_fraction: fill,
        liner_fraction: liner,
    }
}

/// Effective conductivity of `farm` embedded in `base`.
pub fn effective_conductivity(
    farm: &TsvFarmSpec,
    base: &Material,
) -> Result<EffectiveConductivity<f64>> {
    let fractions = ViaFractions::new(
        farm.via_diameter_um,
        farm.liner_thickness_um,
        farm.via_pitch_um,
    )?;
    Ok(homogenize(
        fractions,
        farm.fill_material.k,
        farm.liner_material.k,
        base.k,
        base.k_vertical(),
    ))
}

/// Volume-weighted heat capacity of the farm region, J/(m³·K).
pub fn effective_heat_capacity(farm: &TsvFarmSpec, base: &Material) -> Result<f64> {
    let f = ViaFractions::new(
        farm.via_diameter_um,
        farm.liner_thickness_um,
        farm.via_pitch_um,
    )?;
    Ok(f.fill * farm.fill_material.volumetric_heat_capacity
        + f.liner * farm.liner_material.volumetric_heat_capacity
        + (1.0 - f.total()) * base.volumetric_heat_capacity)
}
