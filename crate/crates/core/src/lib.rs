//! Stationary analysis of a two-buffer fluid queue fed by exponential ON-OFF
//! sources, where Buffer 1 takes the full output capacity once its content
//! passes a threshold.

pub mod buffer1;
pub mod buffer2;
pub mod error;
pub mod mamcore;
pub mod model;
pub mod scalar;
pub mod sim;

pub use buffer1::{closed_form::SingleSourceFinite, BoundaryChain, Buffer1Model, CensoredChain, StationaryBuffer1};
pub use buffer2::{compensating_rates, eb_exponential, Buffer2Bounds, Buffer2Options, CompensatingSource, Euler, FailureClass, XiEntry};
pub use error::{FluidError, Result};
pub use model::{
    band_blocks, build_generator, check_assumptions, partition_states, stationary_onoff, Band,
    BandBlocks, ModelParams, PhasePartition, ValidationReport, Violation,
};
pub use scalar::Scalar;
pub use sim::{simulate, SimConfig, SimEstimate, SimState};
pub use mamcore::{FinitePassage, PassageOperators};

pub type PassageOperatorsF64 = PassageOperators<f64>;
pub type PassageOperatorsC64 = PassageOperators<num_complex::Complex64>;
pub type FinitePassageF64 = FinitePassage<f64>;
pub type FinitePassageC64 = FinitePassage<num_complex::Complex64>;
