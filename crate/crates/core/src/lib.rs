//! Coherent risk measurement on scenario distributions.
//!
//! The crate evaluates Weighted V@R risk measures (Tail, Beta and Alpha V@R,
//! and finite mixtures), estimates them by Monte Carlo from historical draws,
//! decomposes risk into contributions and factor risk, optimizes portfolios
//! under several risk limits and computes equilibrium prices for sharing
//! risk limits between desks.

pub mod contribution;
pub mod distortion;
pub mod error;
pub mod factor;
pub mod mc_estimators;
pub mod numeric;
pub mod optimize;
pub mod panel;
pub mod sampling;
pub mod scenario_risk;
pub mod sharing;

pub use distortion::{Atom, MeasureKind, WeightingMeasure};
pub use error::{Result, RiskError};
pub use panel::JointPanel;
pub use scenario_risk::ScenarioDistribution;
