//! Casting overhead: per-hop latency decomposition inferred from throughput.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{derived_tps, LadderKey, TelemetryRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CastingError {
    #[error("throughput must be > 0, got {0}")]
    NonPositiveThroughput(f64),
    #[error("record and anchor belong to different ladders ({record:?} vs {anchor:?})")]
    KeyMismatch {
        record: LadderKey,
        anchor: LadderKey,
    },
    #[error("invalid batch model: a_comp must be > 0, a_cast >= 0 and batch >= 1")]
    InvalidBatchModel,
}

/// Seconds per hop, split into native compute and de-quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopLatency {
    pub tau_total_s: f64,
    pub tau_comp_s: f64,
    /// Negative when the quantized configuration outruns the anchor.
    pub tau_cast_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    /// COR > 1: de-quantization outweighs compute.
    CastingDominant,
    /// 0 <= COR <= 1.
    Subordinate,
    /// COR < 0: faster than the anchor (native low-bit support).
    Accelerated,
}

impl Dominance {
    pub fn classify(cor: f64) -> Dominance {
        if cor > 1.0 {
            Dominance::CastingDominant
        } else if cor >= 0.0 {
            Dominance::Subordinate
        } else {
            Dominance::Accelerated
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorEstimate {
    pub cor: f64,
    pub dominance: Dominance,
    pub latency: HopLatency,
}

/// Average latency of one atomic hop.
pub fn latency_per_hop(tps: f64) -> Result<f64, CastingError> {
    if !(tps > 0.0) || !tps.is_finite() {
        return Err(CastingError::NonPositiveThroughput(tps));
    }
    Ok(1.0 / tps)
}

/// Casting overhead ratio from throughput, `TPS_ref / TPS_p - 1`.
///
/// The anchor's own casting time is taken as zero, so its per-hop latency is
/// the compute time of both configurations.
pub fn estimate_cor(
    record: &TelemetryRecord,
    anchor: &TelemetryRecord,
) -> Result<CorEstimate, CastingError> {
    let (rk, ak) = (record.config.ladder_key(), anchor.config.ladder_key());
    if rk != ak {
        return Err(CastingError::KeyMismatch {
            record: rk,
            anchor: ak,
        });
    }
    let tps = derived_tps(record).tokens_per_second;
    let tps_ref = derived_tps(anchor).tokens_per_second;
    cor_from_tps(tps_ref, tps)
}

/// [`estimate_cor`] on bare throughput values.
pub fn cor_from_tps(tps_ref: f64, tps: f64) -> Result<CorEstimate, CastingError> {
    let tau_comp_s = latency_per_hop(tps_ref)?;
    let tau_total_s = latency_per_hop(tps)?;
    let cor = tps_ref / tps - 1.0;
    Ok(CorEstimate {
        cor,
        dominance: Dominance::classify(cor),
        latency: HopLatency {
            tau_total_s,
            tau_comp_s,
            tau_cast_s: tau_total_s - tau_comp_s,
        },
    })
}

/// COR under the batch model where compute scales with the batch and the
/// de-quantization cost is paid once per hop: `a_cast / (a_comp * B)`.
pub fn cor_at_batch(a_cast_s: f64, a_comp_s: f64, batch: f64) -> Result<f64, CastingError> {
    if !(a_comp_s > 0.0) || !(a_cast_s >= 0.0) || !(batch >= 1.0) {
        return Err(CastingError::InvalidBatchModel);
    }
    Ok(a_cast_s / (a_comp_s * batch))
}
