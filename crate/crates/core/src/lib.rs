//! Digital twin of a configurable 3D-stack emulation vehicle.
//!
//! The crate models a multi-layer die stack ([`stack`]), tile-level heat
//! generators ([`power`]), via-farm homogenization ([`tsv`]), steady and
//! transient heat conduction ([`thermal`]), virtual sensors and their
//! placement ([`sensors`]), power-delivery IR drop ([`pdn`]) and lifetime
//! reliability screening ([`reliability`]).
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod error;
pub mod io;
pub mod linalg;
pub mod pdn;
pub mod power;
pub mod reliability;
pub mod scalar;
pub mod sensors;
pub mod stack;
pub mod thermal;
pub mod tsv;

pub use error::{Error, Result};
pub use linalg::{Method, SolveOptions, SolveStats};
pub use pdn::{CurrentMap, PdnGrid, PdnParams};
pub use power::{CoreProxyPreset, PowerMap, TemporalProfile};
pub use reliability::{ReliabilityParams, ReliabilityReport};
pub use scalar::Scalar;
pub use sensors::{SensorNetwork, SensorSpec, Site};
pub use stack::{
    discretize, preset_stack, validate_stack, LayerRole, LayerSpec, Material, Rect, StackConfig,
    TsvFarmSpec, Violation, VoxelGrid,
};
pub use thermal::{FieldTime, LayerStats};

pub type CsrMatrixF64 = linalg::CsrMatrix<f64>;
pub type CsrMatrixF32 = linalg::CsrMatrix<f32>;
pub type DiscreteSystemF64 = thermal::DiscreteSystem<f64>;
pub type DiscreteSystemF32 = thermal::DiscreteSystem<f32>;
pub type TemperatureFieldF64 = thermal::TemperatureField<f64>;
pub type TemperatureFieldF32 = thermal::TemperatureField<f32>;
pub type EffectiveConductivityF64 = tsv::EffectiveConductivity<f64>;
