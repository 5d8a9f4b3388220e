//! On-disk telemetry formats: canonical JSONL and a lossy CSV importer.

use std::collections::BTreeSet;
use std::fmt;

use qtrap_core::{ConfigId, PowerEvidence, PowerSample, TelemetryRecord};
use serde::{Deserialize, Serialize};

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRecord {
    pub model: String,
    pub hardware: String,
    pub precision_bits: u32,
    pub batch_size: u32,
    pub task: String,
    pub total_tokens: u64,
    pub duration_s: f64,
    pub sample_count: u64,
    pub accuracy: f64,
    pub peak_vram_gb: f64,
    pub power: WirePower,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_gco2_per_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WirePower {
    Tdp {
        tdp_watts: f64,
    },
    /// `[t_offset_s, watts]` pairs.
    Trace {
        samples: Vec<(f64, f64)>,
    },
    Joules {
        joules_per_query: f64,
    },
}

impl From<&TelemetryRecord> for WireRecord {
    fn from(r: &TelemetryRecord) -> Self {
        let power = match &r.power {
            PowerEvidence::TdpAnchor { tdp_watts } => WirePower::Tdp {
                tdp_watts: *tdp_watts,
            },
            PowerEvidence::DirectJoules { joules_per_query } => WirePower::Joules {
                joules_per_query: *joules_per_query,
            },
            PowerEvidence::SampledTrace(s) => WirePower::Trace {
                samples: s.iter().map(|p| (p.t_offset_s, p.watts)).collect(),
            },
        };
        WireRecord {
            model: r.config.model_name.clone(),
            hardware: r.config.hardware.clone(),
            precision_bits: r.config.precision_bits,
            batch_size: r.config.batch_size,
            task: r.config.task.clone(),
            total_tokens: r.total_tokens,
            duration_s: r.duration_s,
            sample_count: r.sample_count,
            accuracy: r.accuracy,
            peak_vram_gb: r.peak_vram_gb,
            power,
            grid_gco2_per_kwh: r.grid_gco2_per_kwh,
            source: r.source.clone(),
        }
    }
}

impl From<WireRecord> for TelemetryRecord {
    fn from(w: WireRecord) -> Self {
        let power = match w.power {
            WirePower::Tdp { tdp_watts } => PowerEvidence::TdpAnchor { tdp_watts },
            WirePower::Joules { joules_per_query } => {
                PowerEvidence::DirectJoules { joules_per_query }
            }
            WirePower::Trace { samples } => PowerEvidence::SampledTrace(
                samples
                    .into_iter()
                    .map(|(t_offset_s, watts)| PowerSample { t_offset_s, watts })
                    .collect(),
            ),
        };
        TelemetryRecord {
            config: ConfigId {
                model_name: w.model,
                hardware: w.hardware,
                precision_bits: w.precision_bits,
                batch_size: w.batch_size,
                task: w.task,
            },
            total_tokens: w.total_tokens,
            duration_s: w.duration_s,
            sample_count: w.sample_count,
            accuracy: w.accuracy,
            peak_vram_gb: w.peak_vram_gb,
            power,
            grid_gco2_per_kwh: w.grid_gco2_per_kwh,
            source: w.source,
        }
    }
}

/// A rejected line or row.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    /// 1-based line in the file.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parsed {
    pub records: Vec<TelemetryRecord>,
    pub warnings: Vec<String>,
}

fn describe(c: &ConfigId) -> String {
    format!(
        "{}/{}/{}/{}-bit/B={}",
        c.model_name, c.hardware, c.task, c.precision_bits, c.batch_size
    )
}

fn check(
    record: TelemetryRecord,
    line: usize,
    seen: &mut BTreeSet<ConfigId>,
) -> Result<TelemetryRecord, SchemaError> {
    record.validate().map_err(|e| SchemaError {
        line,
        message: format!("{}: {e}", describe(&record.config)),
    })?;
    if !seen.insert(record.config.clone()) {
        return Err(SchemaError {
            line,
            message: format!("duplicate configuration {}", describe(&record.config)),
        });
    }
    Ok(record)
}

/// Parses JSONL text; blank lines are skipped. Stops at the first bad line.
pub fn parse_jsonl(text: &str) -> Result<Parsed, SchemaError> {
    let mut out = Parsed::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(raw).map_err(|e| SchemaError {
            line,
            message: e.to_string(),
        })?;
        out.records.push(check(wire.into(), line, &mut seen)?);
    }
    if out.records.is_empty() {
        out.warnings.push("no records".into());
    }
    Ok(out)
}

pub fn to_jsonl_line(record: &TelemetryRecord) -> String {
    serde_json::to_string(&WireRecord::from(record)).expect("wire record serializes")
}

pub fn to_jsonl(records: &[TelemetryRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&to_jsonl_line(r));
        s.push('\n');
    }
    s
}

/// Header of the CSV importer.
pub const CSV_COLUMNS: [&str; 14] = [
    "model",
    "hardware",
    "precision_bits",
    "batch_size",
    "task",
    "total_tokens",
    "duration_s",
    "sample_count",
    "accuracy",
    "peak_vram_gb",
    "power_kind",
    "power_value",
    "grid_gco2_per_kwh",
    "source",
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvRow {
    model: String,
    hardware: String,
    precision_bits: u32,
    batch_size: u32,
    task: String,
    total_tokens: u64,
    duration_s: f64,
    sample_count: u64,
    accuracy: f64,
    peak_vram_gb: f64,
    power_kind: String,
    power_value: f64,
    grid_gco2_per_kwh: Option<f64>,
    source: Option<String>,
}

/// Parses the CSV convenience format. Power traces cannot be expressed;
/// `power_kind` is `tdp` (watts) or `joules` (per query).
pub fn parse_csv(text: &str) -> Result<Parsed, SchemaError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Parsed::default();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| SchemaError {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = out.records.len() + 2;
        let power = match row.power_kind.as_str() {
            "tdp" => PowerEvidence::TdpAnchor {
                tdp_watts: row.power_value,
            },
            "joules" => PowerEvidence::DirectJoules {
                joules_per_query: row.power_value,
            },
            other => {
                return Err(SchemaError {
                    line,
                    message: format!("power_kind must be `tdp` or `joules`, got `{other}`"),
                })
            }
        };
        let record = TelemetryRecord {
            config: ConfigId {
                model_name: row.model,
                hardware: row.hardware,
                precision_bits: row.precision_bits,
                batch_size: row.batch_size,
                task: row.task,
            },
            total_tokens: row.total_tokens,
            duration_s: row.duration_s,
            sample_count: row.sample_count,
            accuracy: row.accuracy,
            peak_vram_gb: row.peak_vram_gb,
            power,
            grid_gco2_per_kwh: row.grid_gco2_per_kwh,
            source: row.source.filter(|s| !s.is_empty()),
        };
        out.records.push(check(record, line, &mut seen)?);
    }
    if out.records.is_empty() {
        out.warnings.push("no records".into());
    }
    Ok(out)
}
