//! Analysis core for detecting quantization traps in LLM inference telemetry.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. It provides:
//!
//! * [`telemetry`]: the record model, validation and precision ladders.
//! * [`pillars`]: trust, economic and energy sustainability indices.
//! * [`manifold`]: scalar aggregation, trap verdicts and Pareto dominance.
//! * [`casting`]: per-hop latency decomposition and casting overhead ratios.
//! * [`amortization`]: the batch-amortized energy functional, its critical
//!   batch threshold and a non-negative least squares fitter.
//! * [`simulator`]: a seeded generator of synthetic telemetry used as a
//!   brute-force oracle for the amortization results.
//!
//! File formats, reports and the command line live in the `qtrap` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod amortization;
pub mod casting;
pub mod manifold;
pub mod nnls;
pub mod pillars;
pub mod simulator;
pub mod telemetry;

mod math;

pub use amortization::{
    critical_batch, energy_eval, energy_gradient_p, fit_energy_model, AmortizationError,
    CriticalBatch, EnergyModelFit, EnergyParams, FitError, FitWarning,
};
pub use casting::{
    cor_at_batch, estimate_cor, latency_per_hop, CastingError, CorEstimate, Dominance, HopLatency,
};
pub use manifold::{
    aggregate_si, detect_trap, pareto_dominates, si_deficit, Aggregate, GradientSign,
    ManifoldError, Policy, PolicyWeights, SustainabilityVector, TrapVerdict,
};
pub use pillars::{
    economic_index, energy_index, energy_per_query, trust_index, EconWeights, EnergyMode,
    EnergyResult, IntegrationRule, PillarConfig, PillarError, TrustRegistry, TrustSpec,
};
pub use simulator::{
    simulate, verify_output, verify_theorems, AccuracyMode, CheckStatus, LatencyModel, SimEnergy,
    SimError, SimOutput, SimScenario, Theorem, TheoremCheck, TheoremReport,
};
pub use telemetry::{
    build_ladders, derived_tps, ConfigId, LadderError, LadderKey, LadderSet, PowerEvidence,
    PowerSample, PrecisionLadder, TelemetryRecord, ValidationError,
};
