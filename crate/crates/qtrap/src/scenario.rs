//! Simulator scenario files and energy parameter files.

use std::collections::BTreeMap;

use qtrap_core::{AccuracyMode, EnergyParams, LatencyModel, SimEnergy, SimScenario};
use serde::{Deserialize, Serialize};

/// Scenario file: one JSON object, one block per precision rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: String,
    pub hardware: String,
    pub task: String,
    pub native_bits: u32,
    pub batches: Vec<u32>,
    /// Atomic hops per query.
    pub hops: u64,
    pub n_queries: u64,
    pub seed: u64,
    #[serde(default)]
    pub accuracy_mode: AccuracyMode,
    pub energy: EnergySpec,
    pub rungs: BTreeMap<u32, RungSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnergySpec {
    Model { gamma_static: f64, alpha_mem: f64 },
    Tdp { tdp_watts: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungSpec {
    pub a_comp_s: f64,
    pub a_cast_s: f64,
    /// Per-hop success probability.
    pub q: f64,
    pub peak_vram_gb: f64,
    /// Casting energy per hop, J; required below the native precision in
    /// model energy mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_scenario(&self) -> SimScenario {
        let energy = match self.energy {
            EnergySpec::Model {
                gamma_static,
                alpha_mem,
            } => SimEnergy::Model(EnergyParams {
                gamma_static,
                alpha_mem,
                phi_by_precision: self
                    .rungs
                    .iter()
                    .filter(|(b, _)| **b != self.native_bits)
                    .filter_map(|(b, r)| r.phi.map(|phi| (*b, phi)))
                    .collect(),
                native_bits: self.native_bits,
                hops: self.hops,
            }),
            EnergySpec::Tdp { tdp_watts } => SimEnergy::Tdp { tdp_watts },
        };
        SimScenario {
            model_name: self.model.clone(),
            hardware: self.hardware.clone(),
            task: self.task.clone(),
            native_bits: self.native_bits,
            precisions: self.rungs.keys().copied().collect(),
            batches: self.batches.clone(),
            hops_logical: self.hops,
            n_queries: self.n_queries,
            latency: self
                .rungs
                .iter()
                .map(|(b, r)| {
                    (
                        *b,
                        LatencyModel {
                            a_comp_s: r.a_comp_s,
                            a_cast_s: r.a_cast_s,
                        },
                    )
                })
                .collect(),
            hop_noise: self.rungs.iter().map(|(b, r)| (*b, r.q)).collect(),
            peak_vram_gb: self
                .rungs
                .iter()
                .map(|(b, r)| (*b, r.peak_vram_gb))
                .collect(),
            energy,
            accuracy_mode: self.accuracy_mode,
            seed: self.seed,
        }
    }
}

/// Reads energy parameters given bare, wrapped in a single fit
/// (`{"params": {...}}`), or as the output of `qtrap fit` with exactly one
/// fitted group.
pub fn parse_params(text: &str) -> Result<EnergyParams, String> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if let Some(fits) = value.get_mut("fits").and_then(|f| f.as_array_mut()) {
        let mut fitted: Vec<&mut serde_json::Value> =
            fits.iter_mut().filter_map(|f| f.get_mut("fit")).collect();
        if fitted.len() != 1 {
            return Err(format!(
                "expected exactly one fitted group, found {}",
                fitted.len()
            ));
        }
        value = fitted[0].take();
    }
    if let Some(inner) = value.get_mut("params") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}
