//! Report bundle assembly and rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qtrap_core::amortization::CriticalBatch;
use qtrap_core::{
    aggregate_si, build_ladders, critical_batch, derived_tps, detect_trap, energy_per_query,
    estimate_cor, fit_energy_model, si_deficit, ConfigId, CorEstimate, EnergyModelFit,
    EnergyParams, FitError, LadderError, LadderKey, PillarConfig, Policy, PolicyWeights,
    PowerEvidence, SimScenario, TelemetryRecord, TheoremReport, TrapVerdict, TrustRegistry,
};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub generated_unix_s: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Provenance {
    pub command: String,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PolicyWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pillars: Option<PillarConfig>,
}

/// Raw per-record quantities every other section is derived from.
#[derive(Debug, Clone, Serialize)]
pub struct RecordSummary {
    pub config: ConfigId,
    pub tokens_per_second: f64,
    pub joules_per_query: Option<f64>,
    pub energy_source: &'static str,
    pub accuracy: f64,
    pub peak_vram_gb: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyScores {
    pub key: LadderKey,
    pub bits: u32,
    pub linear: f64,
    pub geometric: f64,
    pub geometric_bottleneck: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeficitRow {
    pub key: LadderKey,
    pub bits: u32,
    pub anchor_si: f64,
    pub si: f64,
    pub deficit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorRow {
    pub key: LadderKey,
    pub bits: u32,
    pub reference_bits: u32,
    #[serde(flatten)]
    pub estimate: CorEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub model: String,
    pub hardware: String,
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<EnergyModelFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub refused: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalRow {
    pub bits: u32,
    pub native_bits: u32,
    pub b_star: f64,
    pub smallest_batch_at_or_above: u64,
    pub native_support: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub scenario: SimScenario,
    pub records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorems: Option<TheoremReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub tool: Tool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<RecordSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ladders: Vec<TrapVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub si_by_policy: Vec<PolicyScores>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub deficits: Vec<DeficitRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cor: Vec<CorRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub critical_batches: Vec<CriticalRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<Simulation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unanchored: Vec<ConfigId>,
    pub warnings: Vec<String>,
}

impl ReportBundle {
    pub fn new(command: &str, inputs: &[PathBuf], with_meta: bool) -> Self {
        let meta = with_meta.then(|| Meta {
            generated_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        });
        ReportBundle {
            schema_version: SCHEMA_VERSION,
            tool: Tool {
                name: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
            },
            meta,
            provenance: Provenance {
                command: command.to_string(),
                inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
                ..Provenance::default()
            },
            records: Vec::new(),
            ladders: Vec::new(),
            si_by_policy: Vec::new(),
            deficits: Vec::new(),
            cor: Vec::new(),
            fits: Vec::new(),
            critical_batches: Vec::new(),
            simulation: None,
            unanchored: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub anchor_bits: u32,
    pub weights: PolicyWeights,
    pub pillars: PillarConfig,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            anchor_bits: 16,
            weights: PolicyWeights::default(),
            pillars: PillarConfig::default(),
        }
    }
}

/// What went wrong while scoring, beyond what the bundle records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreIssues {
    /// Some ladder's anchor rung could not be scored.
    pub failed_anchors: usize,
}

fn energy_source(p: &PowerEvidence) -> &'static str {
    match p {
        PowerEvidence::SampledTrace(_) => "trace",
        PowerEvidence::TdpAnchor { .. } => "tdp",
        PowerEvidence::DirectJoules { .. } => "joules",
    }
}

pub fn add_records(bundle: &mut ReportBundle, records: &[TelemetryRecord], opts: &ScoreOptions) {
    let mut sorted: Vec<&TelemetryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.config.cmp(&b.config));
    for r in sorted {
        let tps = derived_tps(r);
        if tps.zero_tokens {
            bundle
                .warnings
                .push(format!("{}: zero tokens, throughput 0", label(&r.config)));
        }
        let e = energy_per_query(r, opts.pillars.integration).ok();
        if let Some(short) = e.and_then(|e| e.coverage_shortfall) {
            bundle.warnings.push(format!(
                "{}: power trace misses {:.1}% of the run",
                label(&r.config),
                100.0 * short
            ));
        }
        bundle.records.push(RecordSummary {
            config: r.config.clone(),
            tokens_per_second: tps.tokens_per_second,
            joules_per_query: e.map(|e| e.joules),
            energy_source: energy_source(&r.power),
            accuracy: r.accuracy,
            peak_vram_gb: r.peak_vram_gb,
        });
    }
}

pub fn label(c: &ConfigId) -> String {
    format!(
        "{}/{}/{}/{}-bit/B={}",
        c.model_name, c.hardware, c.task, c.precision_bits, c.batch_size
    )
}

fn key_label(k: &LadderKey) -> String {
    format!(
        "{}/{}/{}/B={}",
        k.model_name, k.hardware, k.task, k.batch_size
    )
}

/// Pillars, SI under both policies, verdicts and SI deficits for every ladder.
pub fn add_scores(
    bundle: &mut ReportBundle,
    records: &[TelemetryRecord],
    opts: &ScoreOptions,
) -> Result<ScoreIssues, LadderError> {
    bundle.provenance.anchor_bits = Some(opts.anchor_bits);
    bundle.provenance.weights = Some(opts.weights);
    bundle.provenance.pillars = Some(opts.pillars.clone());
    let set = build_ladders(records, opts.anchor_bits)?;
    let registry = TrustRegistry::new();
    let mut issues = ScoreIssues::default();
    let mut linear = opts.weights;
    linear.policy = Policy::Linear;
    let mut geometric = opts.weights;
    geometric.policy = Policy::Geometric;

    for ladder in &set.ladders {
        let verdict = match detect_trap(ladder, &opts.pillars, &registry, &opts.weights) {
            Ok(v) => v,
            Err(e) => {
                issues.failed_anchors += 1;
                bundle
                    .warnings
                    .push(format!("{}: ladder skipped: {e}", key_label(&ladder.key)));
                continue;
            }
        };
        for f in &verdict.failed_rungs {
            bundle.warnings.push(format!(
                "{}: {}-bit not scored: {}",
                key_label(&ladder.key),
                f.bits,
                f.reason
            ));
        }
        let anchor_si = verdict.anchor().map(|a| a.si).unwrap_or(f64::NAN);
        for rung in &verdict.rungs {
            let lin = aggregate_si(&rung.pillars.vector, &linear);
            let geo = aggregate_si(&rung.pillars.vector, &geometric);
            if let (Ok(lin), Ok(geo)) = (lin, geo) {
                bundle.si_by_policy.push(PolicyScores {
                    key: ladder.key.clone(),
                    bits: rung.bits,
                    linear: lin.si,
                    geometric: geo.si,
                    geometric_bottleneck: geo.bottleneck,
                });
            }
            if rung.bits != verdict.reference_bits {
                match si_deficit(anchor_si, rung.si) {
                    Ok(deficit) => bundle.deficits.push(DeficitRow {
                        key: ladder.key.clone(),
                        bits: rung.bits,
                        anchor_si,
                        si: rung.si,
                        deficit,
                    }),
                    Err(e) => bundle.warnings.push(format!(
                        "{}: {}-bit deficit: {e}",
                        key_label(&ladder.key),
                        rung.bits
                    )),
                }
            }
        }
        bundle.ladders.push(verdict);
    }
    for r in &set.unanchored {
        bundle.warnings.push(format!(
            "{}: no {}-bit anchor in its group",
            label(&r.config),
            opts.anchor_bits
        ));
        bundle.unanchored.push(r.config.clone());
    }
    Ok(issues)
}

/// Casting overhead of every non-anchor rung against its anchor.
pub fn add_cor(
    bundle: &mut ReportBundle,
    records: &[TelemetryRecord],
    anchor_bits: u32,
) -> Result<(), LadderError> {
    bundle.provenance.anchor_bits = Some(anchor_bits);
    let set = build_ladders(records, anchor_bits)?;
    for ladder in &set.ladders {
        let anchor = ladder.anchor();
        for (&bits, r) in &ladder.rungs {
            if bits == anchor_bits {
                continue;
            }
            match estimate_cor(r, anchor) {
                Ok(estimate) => bundle.cor.push(CorRow {
                    key: ladder.key.clone(),
                    bits,
                    reference_bits: anchor_bits,
                    estimate,
                }),
                Err(e) => bundle.warnings.push(format!("{}: {e}", label(&r.config))),
            }
        }
    }
    for r in &set.unanchored {
        if !bundle.unanchored.contains(&r.config) {
            bundle.unanchored.push(r.config.clone());
        }
    }
    Ok(())
}

/// One energy-model fit per (model, hardware, task) group.
pub fn add_fits(
    bundle: &mut ReportBundle,
    records: &[TelemetryRecord],
    native_bits: u32,
    hops: Option<u64>,
    opts: &ScoreOptions,
) {
    let mut groups: BTreeMap<(String, String, String), Vec<TelemetryRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.config.model_name.clone(),
                r.config.hardware.clone(),
                r.config.task.clone(),
            ))
            .or_default()
            .push(r.clone());
    }
    for ((model, hardware, task), recs) in groups {
        let (fit, error, refused) =
            match fit_energy_model(&recs, native_bits, hops, opts.pillars.integration) {
                Ok(f) => (Some(f), None, false),
                Err(e @ FitError::Underdetermined(_)) => (None, Some(e.to_string()), true),
                Err(e) => (None, Some(e.to_string()), false),
            };
        bundle.fits.push(FitRow {
            model,
            hardware,
            task,
            fit,
            error,
            refused,
        });
    }
}

pub fn add_critical_batches(
    bundle: &mut ReportBundle,
    params: &EnergyParams,
) -> Result<(), String> {
    params.validate().map_err(|e| e.to_string())?;
    let mut bits: Vec<u32> = params
        .phi_by_precision
        .keys()
        .copied()
        .filter(|b| *b < params.native_bits)
        .collect();
    bits.sort_unstable();
    for b in bits {
        let CriticalBatch {
            value,
            native_support,
        } = critical_batch(params, b).map_err(|e| e.to_string())?;
        bundle.critical_batches.push(CriticalRow {
            bits: b,
            native_bits: params.native_bits,
            b_star: value,
            smallest_batch_at_or_above: CriticalBatch {
                value,
                native_support,
            }
            .ceil(),
            native_support,
        });
    }
    Ok(())
}

pub fn render_json(bundle: &ReportBundle) -> String {
    let mut s = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    s.push('\n');
    s
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn verdict_word(v: &TrapVerdict) -> &'static str {
    match v.gradient_sign {
        qtrap_core::GradientSign::Divergent => "divergent",
        qtrap_core::GradientSign::Conforming => "conforming",
        qtrap_core::GradientSign::Mixed => "mixed",
    }
}

fn dominance_word(d: qtrap_core::Dominance) -> &'static str {
    match d {
        qtrap_core::Dominance::CastingDominant => "casting_dominant",
        qtrap_core::Dominance::Subordinate => "subordinate",
        qtrap_core::Dominance::Accelerated => "accelerated",
    }
}

pub fn render_markdown(bundle: &ReportBundle) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Quantization trap report\n");
    if let Some(w) = &bundle.provenance.weights {
        let policy = match w.policy {
            Policy::Linear => "linear",
            Policy::Geometric => "geometric",
        };
        let _ = writeln!(
            s,
            "Policy {policy}, weights trust {} / economic {} / energy {}; anchor {}-bit.\n",
            w.trust,
            w.economic,
            w.energy,
            bundle.provenance.anchor_bits.unwrap_or(16)
        );
    }
    if !bundle.provenance.inputs.is_empty() {
        let _ = writeln!(s, "Inputs: {}\n", bundle.provenance.inputs.join(", "));
    }

    for v in &bundle.ladders {
        let _ = writeln!(s, "## {}\n", key_label(&v.key));
        let _ = write!(s, "Verdict: **{}**", verdict_word(v));
        if !v.dominated_rungs.is_empty() {
            let d: Vec<String> = v
                .dominated_rungs
                .iter()
                .map(|b| format!("{b}-bit"))
                .collect();
            let _ = write!(s, "; Pareto-dominated by the anchor: {}", d.join(", "));
        }
        let _ = writeln!(s, "\n");
        let _ = writeln!(s, "| bits | T_SI | E_SI | S_SI | SI | J/query |");
        let _ = writeln!(s, "|---:|---:|---:|---:|---:|---:|");
        for r in &v.rungs {
            let p = &r.pillars;
            let flag = if r.bottleneck { " (bottleneck)" } else { "" };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {}{} | {:.2} |",
                r.bits,
                f4(p.vector.trust),
                f4(p.vector.economic),
                f4(p.vector.energy),
                f4(r.si),
                flag,
                p.energy.joules_per_query
            );
        }
        let _ = writeln!(s);
    }

    if !bundle.deficits.is_empty() {
        let _ = writeln!(s, "## SI deficit\n");
        let _ = writeln!(s, "| ladder | bits | SI(anchor) | SI | deficit |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|");
        for d in &bundle.deficits {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                key_label(&d.key),
                d.bits,
                f4(d.anchor_si),
                f4(d.si),
                f4(d.deficit)
            );
        }
        let _ = writeln!(s);
    }

    if !bundle.cor.is_empty() {
        let _ = writeln!(s, "## Casting overhead\n");
        let _ = writeln!(s, "| ladder | bits | COR | class |");
        let _ = writeln!(s, "|---|---:|---:|---|");
        for c in &bundle.cor {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                key_label(&c.key),
                c.bits,
                f4(c.estimate.cor),
                dominance_word(c.estimate.dominance)
            );
        }
        let _ = writeln!(s);
    }

    if !bundle.fits.is_empty() {
        let _ = writeln!(s, "## Energy model fits\n");
        for f in &bundle.fits {
            let head = format!("{}/{}/{}", f.model, f.hardware, f.task);
            match (&f.fit, &f.error) {
                (Some(fit), _) => {
                    let phi: Vec<String> = fit
                        .params
                        .phi_by_precision
                        .iter()
                        .map(|(b, v)| format!("phi({b}) = {v:.6}"))
                        .collect();
                    let _ = writeln!(
                        s,
                        "- {head}: gamma = {:.6}, alpha = {:.6}, {}; K = {}, residual RMS {:.3e} J over {} points",
                        fit.params.gamma_static,
                        fit.params.alpha_mem,
                        phi.join(", "),
                        fit.params.hops,
                        fit.residual_rms,
                        fit.n_points
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(s, "- {head}: not fitted: {e}");
                }
                (None, None) => {}
            }
        }
        let _ = writeln!(s);
    }

    if !bundle.critical_batches.is_empty() {
        let _ = writeln!(s, "## Critical batch\n");
        for c in &bundle.critical_batches {
            let _ = writeln!(
                s,
                "- {}-bit vs {}-bit: B* = {}",
                c.bits, c.native_bits, c.b_star
            );
        }
        let _ = writeln!(s);
    }

    if let Some(th) = bundle
        .simulation
        .as_ref()
        .and_then(|sim| sim.theorems.as_ref())
    {
        let _ = writeln!(s, "## Theorem checks\n");
        for c in &th.checks {
            let _ = writeln!(s, "- {:?} {:?}: {}", c.theorem, c.status, c.detail);
        }
        let _ = writeln!(s);
    }

    if !bundle.unanchored.is_empty() {
        let _ = writeln!(s, "## Unanchored records\n");
        for c in &bundle.unanchored {
            let _ = writeln!(s, "- {}", label(c));
        }
        let _ = writeln!(s);
    }
    if !bundle.warnings.is_empty() {
        let _ = writeln!(s, "## Warnings\n");
        for w in &bundle.warnings {
            let _ = writeln!(s, "- {w}");
        }
        let _ = writeln!(s);
    }
    while s.ends_with("\n\n") {
        s.pop();
    }
    s
}

/// Series files written by [`write_series`] with their headers.
pub const SERIES: [(&str, &str); 5] = [
    (
        "tps_by_precision.csv",
        "model,hardware,task,batch_size,precision_bits,tokens_per_second",
    ),
    (
        "joules_by_precision.csv",
        "model,hardware,task,batch_size,precision_bits,joules_per_query,energy_source",
    ),
    (
        "pillars.csv",
        "model,hardware,task,batch_size,precision_bits,trust,economic,energy,si,policy,verdict",
    ),
    (
        "cor_by_batch.csv",
        "model,hardware,task,precision_bits,batch_size,cor,dominance",
    ),
    (
        "accuracy_by_batch.csv",
        "model,hardware,task,precision_bits,batch_size,accuracy",
    ),
];

fn csv_text(header: &str, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Renders the plot-ready series as `(file name, contents)` pairs.
pub fn render_series(bundle: &ReportBundle) -> Vec<(&'static str, String)> {
    let cfg = |c: &ConfigId| vec![c.model_name.clone(), c.hardware.clone(), c.task.clone()];

    let mut by_prec: Vec<&RecordSummary> = bundle.records.iter().collect();
    by_prec.sort_by(|a, b| a.config.cmp(&b.config));
    let mut by_batch = by_prec.clone();
    by_batch.sort_by(|a, b| {
        let ka = (
            &a.config.model_name,
            &a.config.hardware,
            &a.config.task,
            a.config.precision_bits,
            a.config.batch_size,
        );
        let kb = (
            &b.config.model_name,
            &b.config.hardware,
            &b.config.task,
            b.config.precision_bits,
            b.config.batch_size,
        );
        ka.cmp(&kb)
    });

    let tps = by_prec
        .iter()
        .map(|r| {
            let mut row = cfg(&r.config);
            row.push(r.config.batch_size.to_string());
            row.push(r.config.precision_bits.to_string());
            row.push(r.tokens_per_second.to_string());
            row
        })
        .collect();
    let joules = by_prec
        .iter()
        .map(|r| {
            let mut row = cfg(&r.config);
            row.push(r.config.batch_size.to_string());
            row.push(r.config.precision_bits.to_string());
            row.push(
                r.joules_per_query
                    .map(|j| j.to_string())
                    .unwrap_or_default(),
            );
            row.push(r.energy_source.to_string());
            row
        })
        .collect();
    let policy = match bundle.provenance.weights.map(|w| w.policy) {
        Some(Policy::Geometric) => "geometric",
        _ => "linear",
    };
    let mut pillars = Vec::new();
    for v in &bundle.ladders {
        for r in &v.rungs {
            let k = &v.key;
            pillars.push(vec![
                k.model_name.clone(),
                k.hardware.clone(),
                k.task.clone(),
                k.batch_size.to_string(),
                r.bits.to_string(),
                r.pillars.vector.trust.to_string(),
                r.pillars.vector.economic.to_string(),
                r.pillars.vector.energy.to_string(),
                r.si.to_string(),
                policy.to_string(),
                verdict_word(v).to_string(),
            ]);
        }
    }
    let mut cor: Vec<&CorRow> = bundle.cor.iter().collect();
    cor.sort_by(|a, b| {
        let ka = (
            &a.key.model_name,
            &a.key.hardware,
            &a.key.task,
            a.bits,
            a.key.batch_size,
        );
        let kb = (
            &b.key.model_name,
            &b.key.hardware,
            &b.key.task,
            b.bits,
            b.key.batch_size,
        );
        ka.cmp(&kb)
    });
    let cor = cor
        .iter()
        .map(|c| {
            vec![
                c.key.model_name.clone(),
                c.key.hardware.clone(),
                c.key.task.clone(),
                c.bits.to_string(),
                c.key.batch_size.to_string(),
                c.estimate.cor.to_string(),
                dominance_word(c.estimate.dominance).to_string(),
            ]
        })
        .collect();
    let acc = by_batch
        .iter()
        .map(|r| {
            let mut row = cfg(&r.config);
            row.push(r.config.precision_bits.to_string());
            row.push(r.config.batch_size.to_string());
            row.push(r.accuracy.to_string());
            row
        })
        .collect();

    let bodies: [Vec<Vec<String>>; 5] = [tps, joules, pillars, cor, acc];
    SERIES
        .iter()
        .zip(bodies)
        .map(|((name, header), rows)| (*name, csv_text(header, rows)))
        .collect()
}

pub fn write_series(bundle: &ReportBundle, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in render_series(bundle) {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
