//! Batch-amortized energy model.
//!
//! Energy per query at precision `p` and batch size `B` over a chain of `K`
//! atomic hops:
//!
//! ```text
//! E(p, B) = K · (γ + α·p / B + φ(p)),    φ(native) = 0
//! ```
//!
//! `γ` is static compute energy per hop, `α·p/B` the weight-movement energy
//! shared across the batch and `φ(p)` the per-hop de-quantization overhead.
//! Low-bit and native energy cross at `B* = α(π − p) / φ(p)`: below it the
//! smaller weight traffic wins, above it the unshared casting overhead
//! dominates and the low-bit configuration costs more per query.
//!
//! Latency-space quantities (`a_comp`, `a_cast`) live in [`crate::casting`];
//! under constant board power `P` the two are bridged by `e_x = P · τ_x`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::nnls::{self, Matrix};
use crate::pillars::{energy_per_query, IntegrationRule, PillarError};
use crate::telemetry::TelemetryRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Static compute energy per hop, J.
    pub gamma_static: f64,
    /// Memory-movement energy per bit of precision per hop, J.
    pub alpha_mem: f64,
    /// Casting overhead per hop by precision, J. The native precision is
    /// implicitly zero and may be omitted.
    pub phi_by_precision: BTreeMap<u32, f64>,
    pub native_bits: u32,
    /// Atomic hops per query.
    pub hops: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmortizationError {
    #[error("invalid energy parameters: {0}")]
    InvalidParams(String),
    #[error("no casting overhead known for {0}-bit")]
    UnknownPrecision(u32),
    #[error("{bits}-bit is not below the native precision {native}")]
    NotBelowNative { bits: u32, native: u32 },
    #[error("no higher precision than {0}-bit to difference against")]
    NoAdjacentPrecision(u32),
    #[error("batch size must be finite and > 0, got {0}")]
    InvalidBatch(f64),
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), AmortizationError> {
        let bad = |m: String| Err(AmortizationError::InvalidParams(m));
        if !(self.gamma_static >= 0.0) || !self.gamma_static.is_finite() {
            return bad(format!("gamma_static = {}", self.gamma_static));
        }
        if !(self.alpha_mem >= 0.0) || !self.alpha_mem.is_finite() {
            return bad(format!("alpha_mem = {}", self.alpha_mem));
        }
        if self.native_bits == 0 {
            return bad("native_bits = 0".into());
        }
        for (&p, &phi) in &self.phi_by_precision {
            if !(phi >= 0.0) || !phi.is_finite() {
                return bad(format!("phi({p}) = {phi}"));
            }
            if p == self.native_bits && phi != 0.0 {
                return bad(format!("phi at native precision must be 0, got {phi}"));
            }
        }
        let ladder = self.phi_ladder();
        for w in ladder.windows(2) {
            if w[1].1 > w[0].1 {
                return bad(format!(
                    "phi must be non-increasing in precision: phi({}) = {} < phi({}) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
        Ok(())
    }

    /// Casting overhead at `bits`; zero at the native precision.
    pub fn phi(&self, bits: u32) -> Option<f64> {
        if bits == self.native_bits {
            return Some(0.0);
        }
        self.phi_by_precision.get(&bits).copied()
    }

    /// `(bits, φ)` over every known precision, native included, ascending.
    pub fn phi_ladder(&self) -> Vec<(u32, f64)> {
        let mut bits: BTreeSet<u32> = self.phi_by_precision.keys().copied().collect();
        bits.insert(self.native_bits);
        bits.into_iter()
            .filter_map(|b| self.phi(b).map(|phi| (b, phi)))
            .collect()
    }
}

fn check_batch(batch: f64) -> Result<(), AmortizationError> {
    if batch > 0.0 && batch.is_finite() {
        Ok(())
    } else {
        Err(AmortizationError::InvalidBatch(batch))
    }
}

/// Energy per query in joules. `batch` is real-valued so the functional can
/// be evaluated at the critical threshold itself.
pub fn energy_eval(params: &EnergyParams, bits: u32, batch: f64) -> Result<f64, AmortizationError> {
    check_batch(batch)?;
    let phi = params
        .phi(bits)
        .ok_or(AmortizationError::UnknownPrecision(bits))?;
    Ok(params.hops as f64 * (params.gamma_static + params.alpha_mem * bits as f64 / batch + phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalBatch {
    /// Real-valued threshold; 0 when casting is free.
    pub value: f64,
    /// `φ(p) = 0`: the hardware runs this precision natively and low-bit
    /// wins at every batch size.
    pub native_support: bool,
}

impl CriticalBatch {
    /// Smallest integer batch at or beyond the threshold.
    pub fn ceil(&self) -> u64 {
        libm::ceil(self.value) as u64
    }
}

/// Batch size at which low-bit and native energy per query are equal,
/// `α(π − p) / φ(p)`.
pub fn critical_batch(
    params: &EnergyParams,
    bits: u32,
) -> Result<CriticalBatch, AmortizationError> {
    if bits >= params.native_bits {
        return Err(AmortizationError::NotBelowNative {
            bits,
            native: params.native_bits,
        });
    }
    let phi = params
        .phi(bits)
        .ok_or(AmortizationError::UnknownPrecision(bits))?;
    if phi == 0.0 {
        return Ok(CriticalBatch {
            value: 0.0,
            native_support: true,
        });
    }
    Ok(CriticalBatch {
        value: params.alpha_mem * (params.native_bits - bits) as f64 / phi,
        native_support: false,
    })
}

/// `∂E/∂p = K(α/B + ∂φ/∂p)`, with `∂φ/∂p` the forward difference to the
/// next higher known precision. A negative value means adding bits lowers
/// energy per query.
pub fn energy_gradient_p(
    params: &EnergyParams,
    bits: u32,
    batch: f64,
) -> Result<f64, AmortizationError> {
    check_batch(batch)?;
    let phi = params
        .phi(bits)
        .ok_or(AmortizationError::UnknownPrecision(bits))?;
    let (next, phi_next) = params
        .phi_ladder()
        .into_iter()
        .find(|(b, _)| *b > bits)
        .ok_or(AmortizationError::NoAdjacentPrecision(bits))?;
    let dphi = (phi_next - phi) / (next - bits) as f64;
    Ok(params.hops as f64 * (params.alpha_mem / batch + dphi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Hop count was not given and was taken as mean tokens per query.
    HopsFromTokens { hops: u64 },
    /// Fitted casting overhead rises with precision between these rungs.
    PhiNotMonotone { lo_bits: u32, hi_bits: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModelFit {
    pub params: EnergyParams,
    /// RMS of observed minus fitted energy per query, J.
    pub residual_rms: f64,
    pub n_points: usize,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no records to fit")]
    Empty,
    #[error("records span more than one (model, hardware, task) group")]
    MixedGroup,
    #[error("hop count must be > 0")]
    InvalidHops,
    #[error("energy per query: {0}")]
    Energy(#[from] PillarError),
    #[error("underdetermined grid: {0}")]
    Underdetermined(String),
}

/// Least-squares fit of `(γ, α, φ)` to observed energy per query over a
/// `(precision, batch)` grid, subject to non-negativity and `φ(π) = 0`.
///
/// Records must share model, hardware and task. When `hops` is `None` the
/// mean tokens per query is used and a warning is attached.
pub fn fit_energy_model(
    records: &[TelemetryRecord],
    native_bits: u32,
    hops: Option<u64>,
    rule: IntegrationRule,
) -> Result<EnergyModelFit, FitError> {
    let first = records.first().ok_or(FitError::Empty)?;
    let group = |r: &TelemetryRecord| {
        (
            r.config.model_name.clone(),
            r.config.hardware.clone(),
            r.config.task.clone(),
        )
    };
    if records.iter().any(|r| group(r) != group(first)) {
        return Err(FitError::MixedGroup);
    }

    let mut warnings = Vec::new();
    let hops = match hops {
        Some(0) => return Err(FitError::InvalidHops),
        Some(k) => k,
        None => {
            let mean = records
                .iter()
                .map(|r| r.total_tokens as f64 / r.sample_count as f64)
                .sum::<f64>()
                / records.len() as f64;
            let k = libm::round(mean) as u64;
            if k == 0 {
                return Err(FitError::InvalidHops);
            }
            warnings.push(FitWarning::HopsFromTokens { hops: k });
            k
        }
    };

    let mut points = Vec::with_capacity(records.len());
    for r in records {
        let e = energy_per_query(r, rule)?.joules;
        points.push((r.config.precision_bits, r.config.batch_size, e));
    }

    // Columns: γ, α, then one φ per non-native precision.
    let cast_bits: Vec<u32> = points
        .iter()
        .map(|p| p.0)
        .filter(|&b| b != native_bits)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_params = 2 + cast_bits.len();
    let cells: BTreeSet<(u32, u32)> = points.iter().map(|p| (p.0, p.1)).collect();
    if cells.len() < n_params {
        return Err(FitError::Underdetermined(format!(
            "{} distinct (precision, batch) cells for {} free parameters; {}",
            cells.len(),
            n_params,
            underdetermined_reason(&cells, native_bits)
        )));
    }

    let k = hops as f64;
    let mut design = Matrix::zeros(points.len(), n_params);
    let mut target = Vec::with_capacity(points.len());
    for (i, &(bits, batch, e)) in points.iter().enumerate() {
        design.set(i, 0, 1.0);
        design.set(i, 1, bits as f64 / batch as f64);
        if let Some(j) = cast_bits.iter().position(|&b| b == bits) {
            design.set(i, 2 + j, 1.0);
        }
        target.push(e / k);
    }

    let norms: Vec<f64> = (0..n_params).map(|j| design.column_norm(j)).collect();
    let mut scaled = design.clone();
    for i in 0..scaled.rows() {
        for (j, n) in norms.iter().enumerate() {
            scaled.set(i, j, scaled.get(i, j) / n);
        }
    }
    if nnls::rank(&scaled) < n_params {
        return Err(FitError::Underdetermined(underdetermined_reason(
            &cells,
            native_bits,
        )));
    }

    let (coef, _) = nnls::nnls(&scaled, &target);
    let coef: Vec<f64> = coef.iter().zip(&norms).map(|(c, n)| c / n).collect();

    let params = EnergyParams {
        gamma_static: coef[0],
        alpha_mem: coef[1],
        phi_by_precision: cast_bits
            .iter()
            .copied()
            .zip(coef[2..].iter().copied())
            .collect(),
        native_bits,
        hops,
    };
    for w in params.phi_ladder().windows(2) {
        if w[1].1 > w[0].1 {
            warnings.push(FitWarning::PhiNotMonotone {
                lo_bits: w[0].0,
                hi_bits: w[1].0,
            });
        }
    }

    let fitted = design.mul_vec(&coef);
    let sq: f64 = fitted
        .iter()
        .zip(&target)
        .map(|(f, t)| {
            let d = (f - t) * k;
            d * d
        })
        .sum();
    Ok(EnergyModelFit {
        params,
        residual_rms: math::sqrt(sq / points.len() as f64),
        n_points: points.len(),
        warnings,
    })
}

fn underdetermined_reason(cells: &BTreeSet<(u32, u32)>, native_bits: u32) -> String {
    let mut batches_per_bits: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &(p, b) in cells {
        batches_per_bits.entry(p).or_default().insert(b);
    }
    if !batches_per_bits.contains_key(&native_bits) {
        return format!(
            "no {native_bits}-bit (native) cells: static energy and casting overhead are not separable"
        );
    }
    if batches_per_bits.values().all(|b| b.len() < 2) {
        return String::from(
            "every precision observed at a single batch size: memory-movement energy is not separable",
        );
    }
    String::from("grid does not separate the parameters")
}
