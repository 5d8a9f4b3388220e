//! Trust, economic and energy pillars of the sustainability vector.
//!
//! Every pillar is a ratio against an anchor configuration, usually the
//! full-precision rung of the same ladder.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::telemetry::{derived_tps, PowerEvidence, TelemetryRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PillarError {
    #[error("anchor trust aggregate is zero; the trust ratio is undefined")]
    UndefinedAnchor,
    #[error("trust aggregate `{0}` is not registered")]
    UnknownAggregator(String),
    #[error("trust aggregate must be finite and >= 0, got {0}")]
    InvalidAggregate(f64),
    #[error("economic bottleneck: {dimension} is zero")]
    Bottleneck { dimension: &'static str },
    #[error("alpha_efficiency must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("power trace has negative watts")]
    NegativeWatts,
    #[error("carbon-adjusted energy of the record is zero; log ratio undefined")]
    DegenerateLog,
}

/// Scalar operator reducing a record's metrics to the trusted quantity.
pub trait TrustAggregator: Send + Sync {
    fn aggregate(&self, record: &TelemetryRecord) -> f64;
}

/// Final-answer accuracy.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accuracy;

impl TrustAggregator for Accuracy {
    fn aggregate(&self, record: &TelemetryRecord) -> f64 {
        record.accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustOperator {
    #[default]
    Accuracy,
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrustSpec {
    pub aggregation: TrustOperator,
    /// Tag describing the task family; informational.
    pub task_topology: String,
}

/// Lookup for trust operators. Accuracy is always available; other
/// operators are registered by id.
#[derive(Default)]
pub struct TrustRegistry {
    custom: BTreeMap<String, Box<dyn TrustAggregator>>,
}

impl TrustRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, op: Box<dyn TrustAggregator>) {
        self.custom.insert(id.into(), op);
    }

    pub fn resolve(&self, op: &TrustOperator) -> Result<&dyn TrustAggregator, PillarError> {
        match op {
            TrustOperator::Accuracy => Ok(&Accuracy),
            TrustOperator::Custom(id) => self
                .custom
                .get(id)
                .map(|b| b.as_ref())
                .ok_or_else(|| PillarError::UnknownAggregator(id.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustScore {
    pub value: f64,
    /// The raw ratio exceeded 1 and was clamped.
    pub clamped: bool,
}

/// Preservation ratio of the trusted metric, clamped to `[0, 1]`.
pub fn trust_index(
    record: &TelemetryRecord,
    anchor: &TelemetryRecord,
    op: &dyn TrustAggregator,
) -> Result<TrustScore, PillarError> {
    let num = op.aggregate(record);
    let den = op.aggregate(anchor);
    for g in [num, den] {
        if !g.is_finite() || g < 0.0 {
            return Err(PillarError::InvalidAggregate(g));
        }
    }
    if den == 0.0 {
        return Err(PillarError::UndefinedAnchor);
    }
    let ratio = num / den;
    Ok(TrustScore {
        value: ratio.min(1.0),
        clamped: ratio > 1.0,
    })
}

/// Weight of throughput against memory residency in the economic pillar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconWeights {
    pub alpha_efficiency: f64,
}

impl Default for EconWeights {
    fn default() -> Self {
        EconWeights {
            alpha_efficiency: 0.5,
        }
    }
}

impl EconWeights {
    pub fn new(alpha_efficiency: f64) -> Result<Self, PillarError> {
        if !(0.0..=1.0).contains(&alpha_efficiency) {
            return Err(PillarError::InvalidAlpha(alpha_efficiency));
        }
        Ok(EconWeights { alpha_efficiency })
    }
}

/// Weighted harmonic mean of throughput gain `eta` and residency gain `rho`.
///
/// Unclamped: a quantized configuration may legitimately beat its anchor.
pub fn harmonic_econ(eta: f64, rho: f64, w: EconWeights) -> f64 {
    let a = w.alpha_efficiency;
    1.0 / (a / eta + (1.0 - a) / rho)
}

pub fn economic_index(
    record: &TelemetryRecord,
    anchor: &TelemetryRecord,
    w: EconWeights,
) -> Result<f64, PillarError> {
    if !(0.0..=1.0).contains(&w.alpha_efficiency) {
        return Err(PillarError::InvalidAlpha(w.alpha_efficiency));
    }
    let tps = derived_tps(record).tokens_per_second;
    let tps_ref = derived_tps(anchor).tokens_per_second;
    if tps_ref <= 0.0 {
        return Err(PillarError::Bottleneck {
            dimension: "anchor throughput",
        });
    }
    if tps <= 0.0 {
        return Err(PillarError::Bottleneck {
            dimension: "throughput",
        });
    }
    if anchor.peak_vram_gb <= 0.0 {
        return Err(PillarError::Bottleneck {
            dimension: "anchor peak VRAM",
        });
    }
    if record.peak_vram_gb <= 0.0 {
        return Err(PillarError::Bottleneck {
            dimension: "peak VRAM",
        });
    }
    let eta = tps / tps_ref;
    let rho = anchor.peak_vram_gb / record.peak_vram_gb;
    Ok(harmonic_econ(eta, rho, w))
}

/// Discretization of a sampled power trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationRule {
    #[default]
    Trapezoid,
    /// Right-endpoint sum `Σ P_i · Δt_i`.
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPerQuery {
    pub joules: f64,
    /// Fraction of the run duration not covered by the trace, when that
    /// exceeds 5%.
    pub coverage_shortfall: Option<f64>,
}

const COVERAGE_TOLERANCE: f64 = 0.05;

/// Energy per query in joules from whichever power evidence the record has.
pub fn energy_per_query(
    record: &TelemetryRecord,
    rule: IntegrationRule,
) -> Result<EnergyPerQuery, PillarError> {
    let n = record.sample_count as f64;
    match &record.power {
        PowerEvidence::DirectJoules { joules_per_query } => Ok(EnergyPerQuery {
            joules: *joules_per_query,
            coverage_shortfall: None,
        }),
        PowerEvidence::TdpAnchor { tdp_watts } => Ok(EnergyPerQuery {
            joules: tdp_watts * record.duration_s / n,
            coverage_shortfall: None,
        }),
        PowerEvidence::SampledTrace(samples) => {
            if samples.iter().any(|s| s.watts < 0.0) {
                return Err(PillarError::NegativeWatts);
            }
            let joules: f64 = samples
                .windows(2)
                .map(|w| {
                    let dt = w[1].t_offset_s - w[0].t_offset_s;
                    match rule {
                        IntegrationRule::Trapezoid => 0.5 * (w[0].watts + w[1].watts) * dt,
                        IntegrationRule::Rectangle => w[1].watts * dt,
                    }
                })
                .sum();
            let covered = match (samples.first(), samples.last()) {
                (Some(a), Some(b)) => b.t_offset_s - a.t_offset_s,
                _ => 0.0,
            };
            let shortfall = 1.0 - covered / record.duration_s;
            Ok(EnergyPerQuery {
                joules: joules / n,
                coverage_shortfall: (shortfall > COVERAGE_TOLERANCE).then_some(shortfall),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Same grid: plain energy-per-query ratio.
    SameGridLinear,
    /// Both records carry carbon intensities: log ratio of carbon-adjusted
    /// energy.
    CrossGridLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    pub joules_per_query: f64,
    pub anchor_joules_per_query: f64,
    /// Carbon-adjusted energy score, present in cross-grid mode.
    pub caes: Option<f64>,
    pub s_si: f64,
    pub mode: EnergyMode,
    /// The record consumed zero energy; `s_si` is pinned to 1.
    pub degenerate: bool,
    pub coverage_shortfall: Option<f64>,
}

/// Carbon-adjusted energy score: joules per query times grid intensity in
/// kgCO2e/kWh.
pub fn caes(joules_per_query: f64, grid_gco2_per_kwh: f64) -> f64 {
    joules_per_query * grid_gco2_per_kwh / 1000.0
}

/// Inverse normalized energy ratio against the anchor, capped at 1.
pub fn energy_index(
    record: &TelemetryRecord,
    anchor: &TelemetryRecord,
    rule: IntegrationRule,
) -> Result<EnergyResult, PillarError> {
    let e = energy_per_query(record, rule)?;
    let e_ref = energy_per_query(anchor, rule)?;
    let coverage_shortfall = e.coverage_shortfall.or(e_ref.coverage_shortfall);
    match (record.grid_gco2_per_kwh, anchor.grid_gco2_per_kwh) {
        (Some(g), Some(g_ref)) => {
            let chi = caes(e.joules, g);
            let chi_ref = caes(e_ref.joules, g_ref);
            let s_si = log_energy_ratio(chi_ref, chi)?;
            Ok(EnergyResult {
                joules_per_query: e.joules,
                anchor_joules_per_query: e_ref.joules,
                caes: Some(chi),
                s_si,
                mode: EnergyMode::CrossGridLog,
                degenerate: false,
                coverage_shortfall,
            })
        }
        _ => {
            let degenerate = e.joules == 0.0;
            let s_si = if degenerate {
                1.0
            } else {
                (e_ref.joules / e.joules).min(1.0)
            };
            Ok(EnergyResult {
                joules_per_query: e.joules,
                anchor_joules_per_query: e_ref.joules,
                caes: None,
                s_si,
                mode: EnergyMode::SameGridLinear,
                degenerate,
                coverage_shortfall,
            })
        }
    }
}

/// `min(1, ln(1 + chi_ref) / ln(1 + chi))`.
pub fn log_energy_ratio(chi_ref: f64, chi: f64) -> Result<f64, PillarError> {
    let den = math::ln_1p(chi);
    if den == 0.0 {
        return Err(PillarError::DegenerateLog);
    }
    Ok((math::ln_1p(chi_ref) / den).min(1.0))
}

/// Everything needed to evaluate all three pillars for a record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PillarConfig {
    pub trust: TrustSpec,
    pub econ: EconWeights,
    pub integration: IntegrationRule,
}
