//! Seeded generator of synthetic telemetry.
//!
//! Each `(precision, batch)` cell is one [`TelemetryRecord`] produced from a
//! generative model: a query succeeds when all `K` atomic hops succeed, each
//! with probability `q(p)`; a hop costs `a_comp(p)` seconds per example plus a
//! de-quantization cost `a_cast(p)` shared across the batch; energy comes
//! from the amortized functional or from a board power anchor.
//!
//! The simulator doubles as a brute-force oracle for the closed forms in
//! [`crate::amortization`] and [`crate::casting`], see [`verify_theorems`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amortization::{critical_batch, energy_eval, AmortizationError, EnergyParams};
use crate::casting::estimate_cor;
use crate::manifold::{detect_trap, GradientSign, PolicyWeights};
use crate::math;
use crate::pillars::{energy_per_query, IntegrationRule, PillarConfig, TrustRegistry};
use crate::telemetry::{ConfigId, PowerEvidence, PrecisionLadder, TelemetryRecord};

/// Per-hop latency constants for one precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Compute seconds per example per hop.
    pub a_comp_s: f64,
    /// De-quantization seconds per hop, paid once per batch.
    pub a_cast_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEnergy {
    /// Energy per query from [`energy_eval`].
    Model(EnergyParams),
    /// Board power times duration, emitted as a TDP anchor.
    Tdp { tdp_watts: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Accuracy is exactly `q(p)^K`.
    #[default]
    Deterministic,
    /// One Bernoulli draw per query with success probability `q(p)^K`.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub model_name: String,
    pub hardware: String,
    pub task: String,
    /// Highest precision in the scenario; the reference rung.
    pub native_bits: u32,
    pub precisions: Vec<u32>,
    pub batches: Vec<u32>,
    /// Atomic hops per query, `K`.
    pub hops_logical: u64,
    /// Queries per cell, `N`.
    pub n_queries: u64,
    pub latency: BTreeMap<u32, LatencyModel>,
    /// Per-hop success probability `q(p)`.
    pub hop_noise: BTreeMap<u32, f64>,
    pub peak_vram_gb: BTreeMap<u32, f64>,
    pub energy: SimEnergy,
    #[serde(default)]
    pub accuracy_mode: AccuracyMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{0} list is empty")]
    Empty(&'static str),
    #[error("{0} list has duplicates")]
    Duplicate(&'static str),
    #[error("{field} has no entry for {bits}-bit")]
    MissingEntry { field: &'static str, bits: u32 },
    #[error("{field} for {bits}-bit is invalid: {value}")]
    InvalidValue {
        field: &'static str,
        bits: u32,
        value: f64,
    },
    #[error("{0} must be > 0")]
    Zero(&'static str),
    #[error("native precision {0}-bit must be the highest listed precision")]
    NativeNotTop(u32),
    #[error("native precision must have a_cast = 0, got {0}")]
    NativeCast(f64),
    #[error("per-hop success must be non-decreasing in precision ({lo_bits}-bit > {hi_bits}-bit)")]
    NoiseNotMonotone { lo_bits: u32, hi_bits: u32 },
    #[error("energy params disagree with the scenario: {0}")]
    EnergyMismatch(String),
    #[error(transparent)]
    Energy(#[from] AmortizationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    /// One record per cell, precision-major then batch, both ascending.
    pub records: Vec<TelemetryRecord>,
    /// The generating scenario with sorted precision and batch lists.
    pub truth: SimScenario,
}

impl SimOutput {
    pub fn cell(&self, bits: u32, batch: u32) -> Option<&TelemetryRecord> {
        self.records
            .iter()
            .find(|r| r.config.precision_bits == bits && r.config.batch_size == batch)
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.precisions.is_empty() {
            return Err(SimError::Empty("precisions"));
        }
        if self.batches.is_empty() {
            return Err(SimError::Empty("batches"));
        }
        let mut p = self.precisions.clone();
        p.sort_unstable();
        p.dedup();
        if p.len() != self.precisions.len() {
            return Err(SimError::Duplicate("precisions"));
        }
        let mut b = self.batches.clone();
        b.sort_unstable();
        b.dedup();
        if b.len() != self.batches.len() {
            return Err(SimError::Duplicate("batches"));
        }
        if b[0] == 0 {
            return Err(SimError::Zero("batch size"));
        }
        if p[0] == 0 {
            return Err(SimError::Zero("precision"));
        }
        if self.hops_logical == 0 {
            return Err(SimError::Zero("hops_logical"));
        }
        if self.n_queries == 0 {
            return Err(SimError::Zero("n_queries"));
        }
        if p.last() != Some(&self.native_bits) {
            return Err(SimError::NativeNotTop(self.native_bits));
        }

        for &bits in &p {
            let lat = self.latency.get(&bits).ok_or(SimError::MissingEntry {
                field: "latency",
                bits,
            })?;
            if !(lat.a_comp_s > 0.0) || !lat.a_comp_s.is_finite() {
                return Err(SimError::InvalidValue {
                    field: "a_comp_s",
                    bits,
                    value: lat.a_comp_s,
                });
            }
            if !(lat.a_cast_s >= 0.0) || !lat.a_cast_s.is_finite() {
                return Err(SimError::InvalidValue {
                    field: "a_cast_s",
                    bits,
                    value: lat.a_cast_s,
                });
            }
            let q = *self.hop_noise.get(&bits).ok_or(SimError::MissingEntry {
                field: "hop_noise",
                bits,
            })?;
            if !(q > 0.0 && q <= 1.0) {
                return Err(SimError::InvalidValue {
                    field: "hop_noise",
                    bits,
                    value: q,
                });
            }
            let v = *self.peak_vram_gb.get(&bits).ok_or(SimError::MissingEntry {
                field: "peak_vram_gb",
                bits,
            })?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidValue {
                    field: "peak_vram_gb",
                    bits,
                    value: v,
                });
            }
        }
        let cast = self.latency[&self.native_bits].a_cast_s;
        if cast != 0.0 {
            return Err(SimError::NativeCast(cast));
        }
        for w in p.windows(2) {
            if self.hop_noise[&w[0]] > self.hop_noise[&w[1]] {
                return Err(SimError::NoiseNotMonotone {
                    lo_bits: w[0],
                    hi_bits: w[1],
                });
            }
        }

        match &self.energy {
            SimEnergy::Model(params) => {
                params.validate()?;
                if params.native_bits != self.native_bits {
                    return Err(SimError::EnergyMismatch(format!(
                        "native_bits {} vs {}",
                        params.native_bits, self.native_bits
                    )));
                }
                if params.hops != self.hops_logical {
                    return Err(SimError::EnergyMismatch(format!(
                        "hops {} vs hops_logical {}",
                        params.hops, self.hops_logical
                    )));
                }
                for &bits in &p {
                    if params.phi(bits).is_none() {
                        return Err(SimError::MissingEntry {
                            field: "phi_by_precision",
                            bits,
                        });
                    }
                }
            }
            SimEnergy::Tdp { tdp_watts } => {
                if !(*tdp_watts > 0.0) || !tdp_watts.is_finite() {
                    return Err(SimError::InvalidValue {
                        field: "tdp_watts",
                        bits: self.native_bits,
                        value: *tdp_watts,
                    });
                }
            }
        }
        Ok(())
    }

    /// Expected accuracy `q(p)^K`.
    pub fn expected_accuracy(&self, bits: u32) -> Option<f64> {
        self.hop_noise
            .get(&bits)
            .map(|q| math::pow(*q, self.hops_logical as f64))
    }

    fn sorted(&self) -> SimScenario {
        let mut s = self.clone();
        s.precisions.sort_unstable();
        s.batches.sort_unstable();
        s
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Generates one record per `(precision, batch)` cell.
///
/// Stochastic cells draw from independent streams seeded with
/// `seed ^ cell_index`, so any cell can be regenerated in isolation.
pub fn simulate(scenario: &SimScenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let s = scenario.sorted();
    let k = s.hops_logical;
    let n = s.n_queries;
    let hops_total = (k * n) as f64;
    let mut records = Vec::with_capacity(s.precisions.len() * s.batches.len());
    let mut cell_index = 0u64;

    for &bits in &s.precisions {
        let lat = s.latency[&bits];
        let p_query = s.expected_accuracy(bits).expect("validated");
        for &batch in &s.batches {
            let per_hop_s = lat.a_comp_s + lat.a_cast_s / batch as f64;
            let duration_s = hops_total * per_hop_s;
            let accuracy = match s.accuracy_mode {
                AccuracyMode::Deterministic => p_query,
                AccuracyMode::Stochastic => {
                    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ cell_index);
                    let correct = (0..n).filter(|_| uniform(&mut rng) < p_query).count();
                    correct as f64 / n as f64
                }
            };
            let power = match &s.energy {
                SimEnergy::Model(params) => PowerEvidence::DirectJoules {
                    joules_per_query: energy_eval(params, bits, batch as f64)?,
                },
                SimEnergy::Tdp { tdp_watts } => PowerEvidence::TdpAnchor {
                    tdp_watts: *tdp_watts,
                },
            };
            records.push(TelemetryRecord {
                config: ConfigId {
                    model_name: s.model_name.clone(),
                    hardware: s.hardware.clone(),
                    precision_bits: bits,
                    batch_size: batch,
                    task: s.task.clone(),
                },
                total_tokens: k * n,
                duration_s,
                sample_count: n,
                accuracy,
                peak_vram_gb: s.peak_vram_gb[&bits],
                power,
                grid_gco2_per_kwh: None,
                source: Some(format!("simulated, seed {}", s.seed)),
            });
            cell_index += 1;
        }
    }
    Ok(SimOutput { records, truth: s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Energy crossover sits at the closed-form critical batch.
    CriticalBatch,
    /// Below the critical batch, noisy low-bit ladders are divergent.
    Divergence,
    /// Casting overhead ratio halves when the batch doubles.
    CorHalving,
    /// Accuracy does not depend on the batch size.
    TrustInvariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Preconditions not met by the scenario; not a failure.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub theorem: Theorem,
    pub precision: Option<u32>,
    pub batch: Option<u32>,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub checks: Vec<TheoremCheck>,
}

impl TheoremReport {
    /// No check failed. Inconclusive checks do not count against.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn count(&self, theorem: Theorem, status: CheckStatus) -> usize {
        self.checks
            .iter()
            .filter(|c| c.theorem == theorem && c.status == status)
            .count()
    }

    fn push(
        &mut self,
        theorem: Theorem,
        precision: Option<u32>,
        batch: Option<u32>,
        status: CheckStatus,
        detail: String,
    ) {
        self.checks.push(TheoremCheck {
            theorem,
            precision,
            batch,
            status,
            detail,
        });
    }
}

const THEOREM_TOL: f64 = 1e-9;

/// Simulates the scenario and checks the generated grid against the closed
/// forms.
pub fn verify_theorems(scenario: &SimScenario) -> Result<TheoremReport, SimError> {
    Ok(verify_output(&simulate(scenario)?))
}

/// Checks an existing simulation output against the closed forms.
pub fn verify_output(out: &SimOutput) -> TheoremReport {
    let mut report = TheoremReport::default();
    check_crossover(out, &mut report);
    check_divergence(out, &mut report);
    check_cor_halving(out, &mut report);
    check_trust_invariance(out, &mut report);
    report
}

fn low_precisions(s: &SimScenario) -> impl Iterator<Item = u32> + '_ {
    s.precisions
        .iter()
        .copied()
        .filter(move |&p| p < s.native_bits)
}

fn joules(r: &TelemetryRecord) -> f64 {
    energy_per_query(r, IntegrationRule::Trapezoid)
        .map(|e| e.joules)
        .unwrap_or(f64::NAN)
}

fn sign_class(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn check_crossover(out: &SimOutput, report: &mut TheoremReport) {
    let s = &out.truth;
    let t = Theorem::CriticalBatch;
    let params = match &s.energy {
        SimEnergy::Model(p) => p,
        SimEnergy::Tdp { .. } => {
            for p in low_precisions(s) {
                report.push(
                    t,
                    Some(p),
                    None,
                    CheckStatus::Inconclusive,
                    "energy from board power anchor, no closed form".into(),
                );
            }
            return;
        }
    };
    let pi = s.native_bits;
    for p in low_precisions(s) {
        let b_star = match critical_batch(params, p) {
            Ok(b) if b.native_support => {
                report.push(
                    t,
                    Some(p),
                    None,
                    CheckStatus::Inconclusive,
                    "free casting: low-bit wins at every batch".into(),
                );
                continue;
            }
            Ok(b) => b.value,
            Err(e) => {
                report.push(t, Some(p), None, CheckStatus::Fail, e.to_string());
                continue;
            }
        };
        let lo = s.batches[0] as f64;
        let hi = *s.batches.last().unwrap() as f64;
        if b_star < lo || b_star > hi {
            report.push(
                t,
                Some(p),
                None,
                CheckStatus::Inconclusive,
                format!("grid [{lo}, {hi}] does not straddle B* = {b_star}"),
            );
            continue;
        }

        let gaps: Vec<(u32, f64)> = s
            .batches
            .iter()
            .map(|&b| {
                let low = out.cell(p, b).map(joules).unwrap_or(f64::NAN);
                let native = out.cell(pi, b).map(joules).unwrap_or(f64::NAN);
                (b, low - native)
            })
            .collect();
        let first = sign_class(gaps[0].1);
        let cross = gaps
            .iter()
            .position(|&(_, d)| d == 0.0 || sign_class(d) != first);
        let identity = energy_eval(params, p, b_star)
            .and_then(|low| energy_eval(params, pi, b_star).map(|nat| (low, nat)));

        let (status, detail) = match (cross, identity) {
            (_, Err(e)) => (CheckStatus::Fail, e.to_string()),
            (None, _) => (
                CheckStatus::Fail,
                format!("no energy crossover on the grid, B* = {b_star}"),
            ),
            (Some(i), Ok((low, nat))) => {
                let b_cross = gaps[i].0 as f64;
                let b_prev = if i == 0 {
                    b_cross
                } else {
                    gaps[i - 1].0 as f64
                };
                let bracketed = b_prev <= b_star * (1.0 + THEOREM_TOL)
                    && b_star <= b_cross * (1.0 + THEOREM_TOL);
                let equal = math::close(low, nat, THEOREM_TOL);
                let status = if bracketed && equal {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                };
                (
                    status,
                    format!(
                        "B* = {b_star}, crossover between B = {b_prev} and B = {b_cross}; E(p, B*) = {low}, E(native, B*) = {nat}"
                    ),
                )
            }
        };
        report.push(t, Some(p), None, status, detail);
    }
}

fn check_divergence(out: &SimOutput, report: &mut TheoremReport) {
    let s = &out.truth;
    let t = Theorem::Divergence;
    let params = match &s.energy {
        SimEnergy::Model(p) => p,
        SimEnergy::Tdp { .. } => {
            report.push(
                t,
                None,
                None,
                CheckStatus::Inconclusive,
                "energy from board power anchor, no closed form".into(),
            );
            return;
        }
    };
    let mut b_min = f64::INFINITY;
    for p in low_precisions(s) {
        match critical_batch(params, p) {
            Ok(b) => b_min = b_min.min(b.value),
            Err(e) => {
                report.push(t, Some(p), None, CheckStatus::Fail, e.to_string());
                return;
            }
        }
    }
    let below: Vec<u32> = s
        .batches
        .iter()
        .copied()
        .filter(|&b| (b as f64) < b_min)
        .collect();
    if below.is_empty() || b_min.is_infinite() {
        report.push(
            t,
            None,
            None,
            CheckStatus::Inconclusive,
            format!("no grid batch below B* = {b_min}"),
        );
        return;
    }
    let q_native = s.hop_noise[&s.native_bits];
    let noisy = low_precisions(s).all(|p| s.hop_noise[&p] < q_native);

    for b in below {
        // Accuracy is taken at its expectation so that sampling noise cannot
        // flip a rung's trust ordering.
        let rungs: BTreeMap<u32, TelemetryRecord> = s
            .precisions
            .iter()
            .filter_map(|&p| {
                out.cell(p, b).map(|r| {
                    let mut r = r.clone();
                    r.accuracy = s.expected_accuracy(p).unwrap_or(r.accuracy);
                    (p, r)
                })
            })
            .collect();
        let key = match rungs.get(&s.native_bits) {
            Some(r) => r.config.ladder_key(),
            None => continue,
        };
        let verdict = PrecisionLadder::new(key, rungs, s.native_bits)
            .map_err(|e| e.to_string())
            .and_then(|ladder| {
                detect_trap(
                    &ladder,
                    &PillarConfig::default(),
                    &TrustRegistry::new(),
                    &PolicyWeights::default(),
                )
                .map_err(|e| e.to_string())
            });
        let (status, detail) = match verdict {
            Err(e) => (CheckStatus::Fail, e),
            Ok(v) => {
                let detail = format!(
                    "B = {b} < B* = {b_min}: verdict {:?}, SI {:?}",
                    v.gradient_sign,
                    v.si_by_precision()
                );
                if !noisy {
                    (
                        CheckStatus::Inconclusive,
                        format!("no strict per-hop noise gap; {detail}"),
                    )
                } else if v.gradient_sign == GradientSign::Divergent {
                    (CheckStatus::Pass, detail)
                } else {
                    (CheckStatus::Fail, detail)
                }
            }
        };
        report.push(t, None, Some(b), status, detail);
    }
}

fn check_cor_halving(out: &SimOutput, report: &mut TheoremReport) {
    let s = &out.truth;
    let t = Theorem::CorHalving;
    let pi = s.native_bits;
    let a_comp_ref = s.latency[&pi].a_comp_s;
    for p in low_precisions(s) {
        let offset = s.latency[&p].a_comp_s / a_comp_ref - 1.0;
        let cor = |b: u32| -> Option<f64> {
            let r = out.cell(p, b)?;
            let a = out.cell(pi, b)?;
            estimate_cor(r, a).ok().map(|c| c.cor - offset)
        };
        let mut pairs = 0;
        for &b in &s.batches {
            if !s.batches.contains(&(b * 2)) {
                continue;
            }
            pairs += 1;
            let (status, detail) = match (cor(b), cor(2 * b)) {
                (Some(one), Some(two)) => {
                    let ok = math::abs(two - one / 2.0) <= THEOREM_TOL * math::abs(one).max(1.0);
                    let status = if ok {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail
                    };
                    (status, format!("COR(B = {b}) = {one}, COR(2B) = {two}"))
                }
                _ => (CheckStatus::Fail, "COR not computable".into()),
            };
            report.push(t, Some(p), Some(b), status, detail);
        }
        if pairs == 0 {
            report.push(
                t,
                Some(p),
                None,
                CheckStatus::Inconclusive,
                "no (B, 2B) pairs on the grid".into(),
            );
        }
    }
}

fn check_trust_invariance(out: &SimOutput, report: &mut TheoremReport) {
    let s = &out.truth;
    let t = Theorem::TrustInvariance;
    for &p in &s.precisions {
        let acc: Vec<f64> = s
            .batches
            .iter()
            .map(|&b| out.cell(p, b).map(|r| r.accuracy).unwrap_or(f64::NAN))
            .collect();
        let (status, detail) = match s.accuracy_mode {
            AccuracyMode::Deterministic => {
                let same = acc.iter().all(|a| a.to_bits() == acc[0].to_bits());
                let status = if same {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                };
                (status, format!("accuracy {:?} across batches", acc))
            }
            AccuracyMode::Stochastic => {
                let mean = s.expected_accuracy(p).unwrap_or(f64::NAN);
                let sigma = math::sqrt(mean * (1.0 - mean) / s.n_queries as f64);
                let worst = acc.iter().map(|a| math::abs(a - mean)).fold(0.0, f64::max);
                let status = if worst <= 3.0 * sigma {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                };
                (
                    status,
                    format!(
                        "max |accuracy - {mean}| = {worst}, 3 sigma = {}",
                        3.0 * sigma
                    ),
                )
            }
        };
        report.push(t, Some(p), None, status, detail);
    }
}
