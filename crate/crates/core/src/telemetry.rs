//! Telemetry record model and precision ladders.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of one measured configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigId {
    pub model_name: String,
    pub hardware: String,
    pub precision_bits: u32,
    pub batch_size: u32,
    pub task: String,
}

impl ConfigId {
    /// Everything except the precision; records sharing a key form a ladder.
    pub fn ladder_key(&self) -> LadderKey {
        LadderKey {
            model_name: self.model_name.clone(),
            hardware: self.hardware.clone(),
            batch_size: self.batch_size,
            task: self.task.clone(),
        }
    }
}

/// Shared identity of a precision ladder. Ordering is the deterministic
/// report order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LadderKey {
    pub model_name: String,
    pub hardware: String,
    pub batch_size: u32,
    pub task: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub t_offset_s: f64,
    pub watts: f64,
}

/// How the energy of a run was measured. Exactly one variant per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerEvidence {
    /// Instantaneous power samples over the run.
    SampledTrace(Vec<PowerSample>),
    /// Board power anchor: the GPU is treated as fully committed for the
    /// whole run duration.
    TdpAnchor { tdp_watts: f64 },
    /// Energy per query measured or reported elsewhere.
    DirectJoules { joules_per_query: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub config: ConfigId,
    /// Generated tokens across all queries; each token is one atomic hop.
    pub total_tokens: u64,
    pub duration_s: f64,
    pub sample_count: u64,
    /// Fraction of correct final answers.
    pub accuracy: f64,
    pub peak_vram_gb: f64,
    pub power: PowerEvidence,
    /// Grid carbon intensity in gCO2e/kWh. Absent means same-grid comparison.
    pub grid_gco2_per_kwh: Option<f64>,
    /// Free-form provenance note carried through unchanged.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("field `{field}` is not finite")]
    NonFinite { field: &'static str },
    #[error("field `{field}` must be > 0, got {value}")]
    NotPositive { field: &'static str, value: f64 },
    #[error("field `{field}` must be >= 0, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("field `{field}` must lie in [0, 1], got {value}")]
    NotFraction { field: &'static str, value: f64 },
    #[error("field `{field}` must be >= 1")]
    Zero { field: &'static str },
    #[error("power trace is empty")]
    EmptyTrace,
    #[error("power trace timestamps not strictly increasing at sample {index}")]
    TraceNotIncreasing { index: usize },
    #[error("power trace has negative watts at sample {index}")]
    NegativeWatts { index: usize },
}

fn finite(field: &'static str, value: f64) -> Result<f64, ValidationError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ValidationError::NonFinite { field })
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ValidationError> {
    if finite(field, value)? > 0.0 {
        Ok(())
    } else {
        Err(ValidationError::NotPositive { field, value })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<(), ValidationError> {
    if finite(field, value)? >= 0.0 {
        Ok(())
    } else {
        Err(ValidationError::Negative { field, value })
    }
}

impl PowerEvidence {
    pub fn validate(&self) -> Result<(), ValidationError> {
        match self {
            PowerEvidence::SampledTrace(samples) => {
                if samples.is_empty() {
                    return Err(ValidationError::EmptyTrace);
                }
                for (index, s) in samples.iter().enumerate() {
                    finite("power.t_offset_s", s.t_offset_s)?;
                    finite("power.watts", s.watts)?;
                    if s.watts < 0.0 {
                        return Err(ValidationError::NegativeWatts { index });
                    }
                    if index > 0 && s.t_offset_s <= samples[index - 1].t_offset_s {
                        return Err(ValidationError::TraceNotIncreasing { index });
                    }
                }
                Ok(())
            }
            PowerEvidence::TdpAnchor { tdp_watts } => positive("power.tdp_watts", *tdp_watts),
            PowerEvidence::DirectJoules { joules_per_query } => {
                non_negative("power.joules_per_query", *joules_per_query)
            }
        }
    }
}

impl TelemetryRecord {
    /// Checks every field invariant. Loaders call this for each record.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.config.precision_bits == 0 {
            return Err(ValidationError::Zero {
                field: "precision_bits",
            });
        }
        if self.config.batch_size == 0 {
            return Err(ValidationError::Zero {
                field: "batch_size",
            });
        }
        if self.sample_count == 0 {
            return Err(ValidationError::Zero {
                field: "sample_count",
            });
        }
        positive("duration_s", self.duration_s)?;
        let acc = finite("accuracy", self.accuracy)?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(ValidationError::NotFraction {
                field: "accuracy",
                value: acc,
            });
        }
        positive("peak_vram_gb", self.peak_vram_gb)?;
        if let Some(g) = self.grid_gco2_per_kwh {
            non_negative("grid_gco2_per_kwh", g)?;
        }
        self.power.validate()
    }
}

/// Result of [`derived_tps`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub tokens_per_second: f64,
    /// Set when the record generated no tokens.
    pub zero_tokens: bool,
}

/// Tokens per second, `total_tokens / duration_s`.
///
/// Average latency per hop is the reciprocal of this value.
pub fn derived_tps(record: &TelemetryRecord) -> Throughput {
    if record.total_tokens == 0 {
        return Throughput {
            tokens_per_second: 0.0,
            zero_tokens: true,
        };
    }
    Throughput {
        tokens_per_second: record.total_tokens as f64 / record.duration_s,
        zero_tokens: false,
    }
}

/// Records sharing a [`LadderKey`], indexed by precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionLadder {
    pub key: LadderKey,
    pub rungs: BTreeMap<u32, TelemetryRecord>,
    pub reference_bits: u32,
}

impl PrecisionLadder {
    /// Builds a ladder, checking that it has at least two rungs, that the
    /// reference rung is present and that every rung carries the same key.
    pub fn new(
        key: LadderKey,
        rungs: BTreeMap<u32, TelemetryRecord>,
        reference_bits: u32,
    ) -> Result<Self, LadderError> {
        if rungs.len() < 2 {
            return Err(LadderError::TooFewRungs { rungs: rungs.len() });
        }
        if !rungs.contains_key(&reference_bits) {
            return Err(LadderError::MissingReference { reference_bits });
        }
        for (bits, r) in &rungs {
            if r.config.precision_bits != *bits || r.config.ladder_key() != key {
                return Err(LadderError::KeyMismatch {
                    precision_bits: *bits,
                });
            }
        }
        Ok(PrecisionLadder {
            key,
            rungs,
            reference_bits,
        })
    }

    pub fn anchor(&self) -> &TelemetryRecord {
        &self.rungs[&self.reference_bits]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LadderError {
    #[error("reference precision must be > 0")]
    InvalidReference,
    #[error("configuration {0:?} appears more than once")]
    Ambiguous(ConfigId),
    #[error("a ladder needs at least two rungs, got {rungs}")]
    TooFewRungs { rungs: usize },
    #[error("reference rung {reference_bits}-bit missing")]
    MissingReference { reference_bits: u32 },
    #[error("rung {precision_bits}-bit does not match the ladder key")]
    KeyMismatch { precision_bits: u32 },
}

/// Output of [`build_ladders`]: a partition of the input records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LadderSet {
    pub ladders: Vec<PrecisionLadder>,
    /// Records whose group has no reference rung, or whose group is the
    /// reference rung alone.
    pub unanchored: Vec<TelemetryRecord>,
}

/// Groups records into precision ladders keyed by everything but precision.
///
/// Ladders come back in [`LadderKey`] order; unanchored records keep that
/// order too, then ascending precision.
pub fn build_ladders(
    records: &[TelemetryRecord],
    reference_bits: u32,
) -> Result<LadderSet, LadderError> {
    if reference_bits == 0 {
        return Err(LadderError::InvalidReference);
    }
    let mut groups: BTreeMap<LadderKey, BTreeMap<u32, TelemetryRecord>> = BTreeMap::new();
    for r in records {
        let rungs = groups.entry(r.config.ladder_key()).or_default();
        if rungs.insert(r.config.precision_bits, r.clone()).is_some() {
            return Err(LadderError::Ambiguous(r.config.clone()));
        }
    }
    let mut set = LadderSet::default();
    for (key, rungs) in groups {
        if rungs.len() >= 2 && rungs.contains_key(&reference_bits) {
            set.ladders.push(PrecisionLadder {
                key,
                rungs,
                reference_bits,
            });
        } else {
            set.unanchored.extend(rungs.into_values());
        }
    }
    Ok(set)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use alloc::string::ToString;

    pub fn record(model: &str, hw: &str, bits: u32, batch: u32) -> TelemetryRecord {
        TelemetryRecord {
            config: ConfigId {
                model_name: model.to_string(),
                hardware: hw.to_string(),
                precision_bits: bits,
                batch_size: batch,
                task: "gsm8k".to_string(),
            },
            total_tokens: 1000,
            duration_s: 10.0,
            sample_count: 10,
            accuracy: 0.5,
            peak_vram_gb: 10.0,
            power: PowerEvidence::DirectJoules {
                joules_per_query: 100.0,
            },
            grid_gco2_per_kwh: None,
            source: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::record;
    use super::*;
    use alloc::vec;

    #[test]
    fn tps_matches_reported_a100_throughput() {
        let mut r = record("qwen3-0.6b", "A100", 16, 1);
        r.total_tokens = 611_000;
        r.duration_s = 1000.0;
        assert_eq!(derived_tps(&r).tokens_per_second, 611.0);
    }

    #[test]
    fn tps_zero_tokens_is_flagged() {
        let mut r = record("m", "A100", 16, 1);
        r.total_tokens = 0;
        let t = derived_tps(&r);
        assert_eq!(t.tokens_per_second, 0.0);
        assert!(t.zero_tokens);
    }

    #[test]
    fn tps_direct_arithmetic() {
        let mut r = record("m", "A100", 16, 1);
        r.total_tokens = 100;
        r.duration_s = 4.0;
        assert_eq!(derived_tps(&r).tokens_per_second, 25.0);
    }

    #[test]
    fn zero_duration_rejected() {
        let mut r = record("m", "A100", 16, 1);
        r.duration_s = 0.0;
        assert_eq!(
            r.validate(),
            Err(ValidationError::NotPositive {
                field: "duration_s",
                value: 0.0
            })
        );
    }

    #[test]
    fn trace_invariants() {
        let mut r = record("m", "A100", 16, 1);
        r.power = PowerEvidence::SampledTrace(vec![
            PowerSample {
                t_offset_s: 0.0,
                watts: 10.0,
            },
            PowerSample {
                t_offset_s: 0.0,
                watts: 10.0,
            },
        ]);
        assert_eq!(
            r.validate(),
            Err(ValidationError::TraceNotIncreasing { index: 1 })
        );
        r.power = PowerEvidence::SampledTrace(vec![PowerSample {
            t_offset_s: 0.0,
            watts: -1.0,
        }]);
        assert_eq!(
            r.validate(),
            Err(ValidationError::NegativeWatts { index: 0 })
        );
    }

    #[test]
    fn accuracy_must_be_fraction() {
        let mut r = record("m", "A100", 16, 1);
        r.accuracy = 1.2;
        assert!(matches!(
            r.validate(),
            Err(ValidationError::NotFraction { .. })
        ));
        r.accuracy = f64::NAN;
        assert_eq!(
            r.validate(),
            Err(ValidationError::NonFinite { field: "accuracy" })
        );
    }

    #[test]
    fn one_ladder_from_three_rungs() {
        let recs: Vec<_> = [16, 8, 4]
            .iter()
            .map(|&b| record("mistral", "A100", b, 1))
            .collect();
        let set = build_ladders(&recs, 16).unwrap();
        assert_eq!(set.ladders.len(), 1);
        assert_eq!(set.ladders[0].rungs.len(), 3);
        assert!(set.unanchored.is_empty());
    }

    #[test]
    fn one_ladder_per_hardware() {
        let mut recs = Vec::new();
        for hw in ["L4", "A100", "H100"] {
            for b in [16, 8, 4] {
                recs.push(record("mistral", hw, b, 1));
            }
        }
        let set = build_ladders(&recs, 16).unwrap();
        assert_eq!(set.ladders.len(), 3);
        let hws: Vec<_> = set
            .ladders
            .iter()
            .map(|l| l.key.hardware.as_str())
            .collect();
        assert_eq!(hws, ["A100", "H100", "L4"]);
    }

    #[test]
    fn missing_anchor_goes_to_unanchored() {
        let set = build_ladders(&[record("m", "A100", 8, 1)], 16).unwrap();
        assert!(set.ladders.is_empty());
        assert_eq!(set.unanchored.len(), 1);
    }

    #[test]
    fn duplicate_config_is_ambiguous() {
        let r = record("m", "A100", 8, 1);
        assert!(matches!(
            build_ladders(&[r.clone(), r], 16),
            Err(LadderError::Ambiguous(_))
        ));
    }

    #[test]
    fn ladder_constructor_checks_reference() {
        let mut rungs = BTreeMap::new();
        rungs.insert(8, record("m", "A100", 8, 1));
        rungs.insert(4, record("m", "A100", 4, 1));
        let key = rungs[&8].config.ladder_key();
        assert_eq!(
            PrecisionLadder::new(key, rungs, 16),
            Err(LadderError::MissingReference { reference_bits: 16 })
        );
    }
}
