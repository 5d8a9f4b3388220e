//! Scalar aggregation of the pillar vector, trap verdicts along precision
//! ladders, and Pareto dominance.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::pillars::{
    economic_index, energy_index, trust_index, EnergyResult, PillarConfig, PillarError,
    TrustRegistry, TrustScore,
};
use crate::telemetry::{LadderKey, PrecisionLadder, TelemetryRecord};

/// Pillar vector in canonical (trust, economic, energy) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SustainabilityVector {
    pub trust: f64,
    pub economic: f64,
    pub energy: f64,
}

impl SustainabilityVector {
    pub const ONE: SustainabilityVector = SustainabilityVector {
        trust: 1.0,
        economic: 1.0,
        energy: 1.0,
    };

    pub fn new(trust: f64, economic: f64, energy: f64) -> Self {
        SustainabilityVector {
            trust,
            economic,
            energy,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.trust, self.economic, self.energy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Compensatory weighted sum.
    #[default]
    Linear,
    /// Weighted geometric mean; any zero pillar annihilates the score.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("weights must be finite and >= 0")]
    NegativeWeight,
    #[error("weights must sum to 1, got {0}")]
    WeightSum(f64),
    #[error("pillar values must be finite and >= 0 for aggregation")]
    NegativePillar,
    #[error("anchor SI must be > 0, got {0}")]
    NonPositiveAnchor(f64),
    #[error("anchor rung {bits}-bit: {reason}")]
    Anchor { bits: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    pub trust: f64,
    pub economic: f64,
    pub energy: f64,
    pub policy: Policy,
}

impl Default for PolicyWeights {
    fn default() -> Self {
        PolicyWeights {
            trust: 0.34,
            economic: 0.33,
            energy: 0.33,
            policy: Policy::Linear,
        }
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl PolicyWeights {
    pub fn new(
        trust: f64,
        economic: f64,
        energy: f64,
        policy: Policy,
    ) -> Result<Self, ManifoldError> {
        let w = PolicyWeights {
            trust,
            economic,
            energy,
            policy,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ManifoldError> {
        let ws = self.as_array();
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ManifoldError::NegativeWeight);
        }
        let sum: f64 = ws.iter().sum();
        if math::abs(sum - 1.0) > WEIGHT_SUM_TOL {
            return Err(ManifoldError::WeightSum(sum));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.trust, self.economic, self.energy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub si: f64,
    /// Geometric policy hit a zero pillar with positive weight.
    pub bottleneck: bool,
}

/// Sustainability index under the given policy.
pub fn aggregate_si(
    v: &SustainabilityVector,
    w: &PolicyWeights,
) -> Result<Aggregate, ManifoldError> {
    w.validate()?;
    let vs = v.as_array();
    if vs.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ManifoldError::NegativePillar);
    }
    let ws = w.as_array();
    match w.policy {
        Policy::Linear => Ok(Aggregate {
            si: vs.iter().zip(ws).map(|(v, w)| v * w).sum(),
            bottleneck: false,
        }),
        Policy::Geometric => {
            if vs.iter().zip(ws).any(|(v, w)| *v == 0.0 && w > 0.0) {
                return Ok(Aggregate {
                    si: 0.0,
                    bottleneck: true,
                });
            }
            let si = vs
                .iter()
                .zip(ws)
                .filter(|(_, w)| *w > 0.0)
                .map(|(v, w)| math::pow(*v, w))
                .product();
            Ok(Aggregate {
                si,
                bottleneck: false,
            })
        }
    }
}

/// Strict Pareto dominance: `a >= b` everywhere and `a > b` somewhere.
pub fn pareto_dominates(a: &SustainabilityVector, b: &SustainabilityVector) -> bool {
    let (a, b) = (a.as_array(), b.as_array());
    a.iter().zip(&b).all(|(x, y)| x >= y) && a.iter().zip(&b).any(|(x, y)| x > y)
}

/// Relative SI shortfall of a rung against its anchor.
pub fn si_deficit(anchor_si: f64, rung_si: f64) -> Result<f64, ManifoldError> {
    if !(anchor_si > 0.0) {
        return Err(ManifoldError::NonPositiveAnchor(anchor_si));
    }
    Ok((anchor_si - rung_si) / anchor_si)
}

/// Pillars of one record against an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PillarReport {
    pub vector: SustainabilityVector,
    pub trust: TrustScore,
    pub energy: EnergyResult,
}

pub fn assess(
    record: &TelemetryRecord,
    anchor: &TelemetryRecord,
    config: &PillarConfig,
    registry: &TrustRegistry,
) -> Result<PillarReport, PillarError> {
    let op = registry.resolve(&config.trust.aggregation)?;
    let trust = trust_index(record, anchor, op)?;
    let economic = economic_index(record, anchor, config.econ)?;
    let energy = energy_index(record, anchor, config.integration)?;
    Ok(PillarReport {
        vector: SustainabilityVector::new(trust.value, economic, energy.s_si),
        trust,
        energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSign {
    /// SI rises with precision on every rung: a quantization trap.
    Divergent,
    /// No rung gains SI by moving toward the reference precision.
    Conforming,
    Mixed,
}

/// Finite difference `(SI(hi) - SI(lo)) / (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub lo_bits: u32,
    pub hi_bits: u32,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungScore {
    pub bits: u32,
    pub pillars: PillarReport,
    pub si: f64,
    pub bottleneck: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRung {
    pub bits: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapVerdict {
    pub key: LadderKey,
    pub reference_bits: u32,
    pub rungs: Vec<RungScore>,
    /// Slope of each rung against the reference rung; decides the verdict.
    pub anchor_slopes: Vec<Slope>,
    /// Slopes between neighbouring rungs in ascending precision.
    pub adjacent_slopes: Vec<Slope>,
    pub gradient_sign: GradientSign,
    pub dominated_rungs: Vec<u32>,
    /// Rungs whose pillars could not be computed; the verdict covers the rest.
    pub failed_rungs: Vec<FailedRung>,
}

impl TrapVerdict {
    pub fn si_by_precision(&self) -> BTreeMap<u32, f64> {
        self.rungs.iter().map(|r| (r.bits, r.si)).collect()
    }

    pub fn rung(&self, bits: u32) -> Option<&RungScore> {
        self.rungs.iter().find(|r| r.bits == bits)
    }

    pub fn anchor(&self) -> Option<&RungScore> {
        self.rung(self.reference_bits)
    }
}

/// Differences below this are ties and never count as divergence.
pub const SLOPE_TIE: f64 = 1e-9;

fn slope(lo: &RungScore, hi: &RungScore) -> Slope {
    Slope {
        lo_bits: lo.bits,
        hi_bits: hi.bits,
        slope: (hi.si - lo.si) / (hi.bits as f64 - lo.bits as f64),
    }
}

/// Classifies a set of slopes by sign with tie tolerance on the SI delta.
pub fn classify(slopes: &[Slope]) -> GradientSign {
    let rising = slopes
        .iter()
        .filter(|s| s.slope * (s.hi_bits as f64 - s.lo_bits as f64) > SLOPE_TIE)
        .count();
    if rising > 0 && rising == slopes.len() {
        GradientSign::Divergent
    } else if rising == 0 {
        GradientSign::Conforming
    } else {
        GradientSign::Mixed
    }
}

/// Scores every rung of a ladder against its reference rung and decides
/// whether SI grows with precision.
///
/// The SI derivative along precision is taken as the finite difference of
/// each rung against the reference rung. A ladder is divergent when every
/// lower-precision rung scores strictly below the reference (and every
/// higher one strictly above).
pub fn detect_trap(
    ladder: &PrecisionLadder,
    config: &PillarConfig,
    registry: &TrustRegistry,
    weights: &PolicyWeights,
) -> Result<TrapVerdict, ManifoldError> {
    weights.validate()?;
    let anchor = ladder.anchor();
    let mut rungs = Vec::new();
    let mut failed_rungs = Vec::new();
    for (&bits, record) in &ladder.rungs {
        let scored = assess(record, anchor, config, registry)
            .map_err(|e| e.to_string())
            .and_then(|pillars| {
                aggregate_si(&pillars.vector, weights)
                    .map(|agg| RungScore {
                        bits,
                        pillars,
                        si: agg.si,
                        bottleneck: agg.bottleneck,
                    })
                    .map_err(|e| e.to_string())
            });
        match scored {
            Ok(r) => rungs.push(r),
            Err(reason) if bits == ladder.reference_bits => {
                return Err(ManifoldError::Anchor { bits, reason });
            }
            Err(reason) => failed_rungs.push(FailedRung { bits, reason }),
        }
    }

    let anchor_score = rungs
        .iter()
        .find(|r| r.bits == ladder.reference_bits)
        .cloned()
        .expect("anchor rung scored");
    let anchor_slopes: Vec<Slope> = rungs
        .iter()
        .filter(|r| r.bits != ladder.reference_bits)
        .map(|r| {
            if r.bits < anchor_score.bits {
                slope(r, &anchor_score)
            } else {
                slope(&anchor_score, r)
            }
        })
        .collect();
    let adjacent_slopes = rungs.windows(2).map(|w| slope(&w[0], &w[1])).collect();
    let dominated_rungs = rungs
        .iter()
        .filter(|r| pareto_dominates(&anchor_score.pillars.vector, &r.pillars.vector))
        .map(|r| r.bits)
        .collect();

    Ok(TrapVerdict {
        key: ladder.key.clone(),
        reference_bits: ladder.reference_bits,
        gradient_sign: classify(&anchor_slopes),
        rungs,
        anchor_slopes,
        adjacent_slopes,
        dominated_rungs,
        failed_rungs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::testutil::record;
    use crate::telemetry::{build_ladders, PowerEvidence};
    use proptest::prelude::*;

    fn v(t: f64, e: f64, s: f64) -> SustainabilityVector {
        SustainabilityVector::new(t, e, s)
    }

    #[test]
    fn identity_vector_scores_one() {
        for policy in [Policy::Linear, Policy::Geometric] {
            let w = PolicyWeights {
                policy,
                ..Default::default()
            };
            let a = aggregate_si(&SustainabilityVector::ONE, &w).unwrap();
            assert!((a.si - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_direct_evaluation() {
        let a = aggregate_si(&v(0.914, 0.8, 0.468), &PolicyWeights::default()).unwrap();
        assert!((a.si - 0.7292).abs() <= 1e-4, "{}", a.si);
    }

    #[test]
    fn geometric_zero_is_bottleneck() {
        let w = PolicyWeights {
            policy: Policy::Geometric,
            ..Default::default()
        };
        let a = aggregate_si(&v(1.0, 1.0, 0.0), &w).unwrap();
        assert_eq!(a.si, 0.0);
        assert!(a.bottleneck);
    }

    #[test]
    fn negative_pillar_rejected() {
        assert_eq!(
            aggregate_si(&v(1.0, -0.1, 1.0), &PolicyWeights::default()),
            Err(ManifoldError::NegativePillar)
        );
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(PolicyWeights::new(0.5, 0.5, 0.5, Policy::Linear).is_err());
        assert!(PolicyWeights::new(1.0, 0.0, 0.0, Policy::Linear).is_ok());
        assert!(PolicyWeights::new(1.2, -0.2, 0.0, Policy::Linear).is_err());
    }

    #[test]
    fn dominance_examples() {
        assert!(pareto_dominates(&v(1.0, 1.0, 1.0), &v(0.9, 0.9, 0.9)));
        assert!(!pareto_dominates(&v(1.0, 0.5, 1.0), &v(0.9, 0.9, 0.9)));
        assert!(!pareto_dominates(&v(1.0, 1.0, 1.0), &v(1.0, 1.0, 1.0)));
    }

    #[test]
    fn deficit_examples() {
        assert!((si_deficit(1.0, 0.689).unwrap() - 0.311).abs() < 1e-12);
        assert_eq!(si_deficit(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(si_deficit(0.8, 0.4).unwrap(), 0.5);
        assert!(si_deficit(0.0, 0.4).is_err());
    }

    fn rung(bits: u32, acc: f64, tps: f64, joules: f64) -> TelemetryRecord {
        let mut r = record("m", "H100", bits, 1);
        r.accuracy = acc;
        r.total_tokens = 10_000;
        r.duration_s = 10_000.0 / tps;
        r.power = PowerEvidence::DirectJoules {
            joules_per_query: joules,
        };
        r
    }

    fn verdict(recs: &[TelemetryRecord]) -> TrapVerdict {
        let set = build_ladders(recs, 16).unwrap();
        detect_trap(
            &set.ladders[0],
            &PillarConfig::default(),
            &TrustRegistry::new(),
            &PolicyWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn fp16_over_4bit_over_8bit_is_divergent() {
        let out = verdict(&[
            rung(16, 0.43, 50.0, 200.0),
            rung(8, 0.41, 15.0, 570.0),
            rung(4, 0.40, 20.0, 400.0),
        ]);
        let si = out.si_by_precision();
        assert!(si[&16] > si[&4] && si[&4] > si[&8]);
        assert_eq!(out.gradient_sign, GradientSign::Divergent);
        assert_eq!(out.dominated_rungs, [4, 8]);
        // The neighbouring-rung view of the same ladder is not monotone.
        assert_eq!(classify(&out.adjacent_slopes), GradientSign::Mixed);
    }

    #[test]
    fn rung_equal_to_anchor_is_not_divergent() {
        let out = verdict(&[rung(16, 0.43, 50.0, 200.0), rung(8, 0.43, 50.0, 200.0)]);
        assert_eq!(out.gradient_sign, GradientSign::Conforming);
        assert!(out.dominated_rungs.is_empty());
    }

    #[test]
    fn low_bit_rung_beating_anchor_makes_mixed() {
        // SI(4) > SI(16) > SI(8)
        let mut fast = rung(4, 0.43, 200.0, 100.0);
        fast.peak_vram_gb = 2.5;
        let out = verdict(&[
            rung(16, 0.43, 50.0, 200.0),
            rung(8, 0.40, 15.0, 570.0),
            fast,
        ]);
        let si = out.si_by_precision();
        assert!(si[&4] > si[&16] && si[&16] > si[&8], "{si:?}");
        assert_eq!(out.gradient_sign, GradientSign::Mixed);
    }

    #[test]
    fn failed_rung_gives_partial_verdict() {
        let mut broken = rung(8, 0.41, 15.0, 570.0);
        broken.total_tokens = 0;
        let out = verdict(&[
            rung(16, 0.43, 50.0, 200.0),
            broken,
            rung(4, 0.40, 20.0, 400.0),
        ]);
        assert_eq!(out.failed_rungs.len(), 1);
        assert_eq!(out.failed_rungs[0].bits, 8);
        assert_eq!(out.gradient_sign, GradientSign::Divergent);
    }

    #[test]
    fn anchor_scores_exactly_one() {
        let out = verdict(&[rung(16, 0.43, 50.0, 200.0), rung(8, 0.41, 15.0, 570.0)]);
        let a = out.anchor().unwrap();
        assert_eq!(a.pillars.vector, SustainabilityVector::ONE);
        assert!((a.si - 1.0).abs() < 1e-15);
    }

    fn unit() -> impl Strategy<Value = f64> {
        1e-6..=1.0f64
    }

    fn weights() -> impl Strategy<Value = [f64; 3]> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_filter_map("nonzero", |(a, b, c)| {
            let s = a + b + c;
            (s > 1e-3)
                .then(|| [a / s, b / s, 1.0 - a / s - b / s])
                .filter(|w| w[2] >= 0.0)
        })
    }

    proptest! {
        #[test]
        fn permuting_vector_and_weights_jointly(t in unit(), e in unit(), s in unit(), w in weights()) {
            for policy in [Policy::Linear, Policy::Geometric] {
                let base = aggregate_si(&v(t, e, s), &PolicyWeights { trust: w[0], economic: w[1], energy: w[2], policy }).unwrap();
                let perm = aggregate_si(&v(s, t, e), &PolicyWeights { trust: w[2], economic: w[0], energy: w[1], policy }).unwrap();
                prop_assert!((base.si - perm.si).abs() <= 1e-12);
            }
        }

        #[test]
        fn geometric_never_exceeds_linear(t in unit(), e in unit(), s in unit(), w in weights()) {
            let lin = aggregate_si(&v(t, e, s), &PolicyWeights { trust: w[0], economic: w[1], energy: w[2], policy: Policy::Linear }).unwrap();
            let geo = aggregate_si(&v(t, e, s), &PolicyWeights { trust: w[0], economic: w[1], energy: w[2], policy: Policy::Geometric }).unwrap();
            prop_assert!(geo.si <= lin.si + 1e-12);
        }

        #[test]
        fn argmax_stable_under_shift(sis in proptest::collection::vec(0.0..1.0f64, 2..6), c in -0.5..0.5f64) {
            let argmax = |xs: &[f64]| xs.iter().enumerate().fold(0, |best, (i, x)| if *x > xs[best] { i } else { best });
            let shifted: Vec<f64> = sis.iter().map(|x| x + c).collect();
            prop_assert_eq!(argmax(&sis), argmax(&shifted));
        }

        #[test]
        fn verdict_invariant_under_energy_rescaling(scale in 0.01..100.0f64, j8 in 50.0..1000.0f64, j4 in 50.0..1000.0f64) {
            let recs = [rung(16, 0.43, 50.0, 200.0), rung(8, 0.41, 15.0, j8), rung(4, 0.40, 20.0, j4)];
            let scaled: Vec<_> = recs.iter().cloned().map(|mut r| {
                if let PowerEvidence::DirectJoules { joules_per_query } = &mut r.power {
                    *joules_per_query *= scale;
                }
                r
            }).collect();
            prop_assert_eq!(verdict(&recs).gradient_sign, verdict(&scaled).gradient_sign);
        }
    }
}
