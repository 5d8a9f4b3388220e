//! Command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtrap_core::{
    simulate, verify_output, EconWeights, IntegrationRule, PillarConfig, Policy, PolicyWeights,
};
use serde::Deserialize;

use crate::input::{expand_paths, load_all, load_file, InputError, Loaded};
use crate::report::{self, ReportBundle, ScoreOptions, Simulation};
use crate::scenario::{parse_params, ScenarioFile};
use crate::schema::to_jsonl;

pub const EXIT_OK: i32 = 0;
/// Invalid input or a failed theorem check.
pub const EXIT_INVALID: i32 = 1;
/// Analysis refused: underdetermined fit, or unanchored data under `--strict`.
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable naming a JSON weights file used when `--weights`
/// is not given.
pub const WEIGHTS_ENV: &str = "QTRAP_WEIGHTS";

#[derive(Debug, Parser)]
#[command(
    name = "qtrap",
    version,
    about = "Quantization-trap analysis of LLM inference telemetry"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check telemetry files against the schema.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Pillars, SI and trap verdict for every precision ladder.
    Score {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Exit 2 when any group has no anchor or an anchor cannot be scored.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Casting overhead ratio of every rung against its anchor.
    Cor {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 16)]
        anchor_bits: u32,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fit the batch-amortized energy model per (model, hardware, task).
    Fit {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 16)]
        native_bits: u32,
        /// Atomic hops per query; defaults to mean tokens per query.
        #[arg(long)]
        hops: Option<u64>,
        #[arg(long, value_enum, default_value_t = Integration::Trapezoid)]
        integration: Integration,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Critical batch size from energy parameters or a fit result.
    Bstar {
        params: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate synthetic telemetry from a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check the generated grid against the closed forms and print the
        /// report to stdout.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        no_meta: bool,
    },
    /// Full report: scores, casting overhead and energy fits.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Directory for csv-series output.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[arg(long)]
        hops: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    /// Pillar weights `trust,economic,energy`, summing to 1.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, default_value_t = 16)]
    pub anchor_bits: u32,
    /// Weight of throughput against memory in the economic pillar.
    #[arg(long, default_value_t = 0.5)]
    pub alpha_efficiency: f64,
    #[arg(long, value_enum, default_value_t = Integration::Trapezoid)]
    pub integration: Integration,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so output is reproducible.
    #[arg(long)]
    pub no_meta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Integration {
    Trapezoid,
    Rectangle,
}

impl From<Integration> for IntegrationRule {
    fn from(i: Integration) -> Self {
        match i {
            Integration::Trapezoid => IntegrationRule::Trapezoid,
            Integration::Rectangle => IntegrationRule::Rectangle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Markdown,
    CsvSeries,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    trust: f64,
    economic: f64,
    energy: f64,
    #[serde(default)]
    policy: Policy,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        let code = if e.is_io() { EXIT_IO } else { EXIT_INVALID };
        Failure::new(code, e.to_string())
    }
}

fn parse_weight_list(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!(
            "--weights needs three comma-separated numbers, got `{s}`"
        ));
    }
    let mut w = [0.0; 3];
    for (slot, p) in w.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| format!("--weights: `{p}` is not a number"))?;
    }
    Ok(w)
}

fn resolve_weights(
    args: &ScoringArgs,
    env_path: Option<OsString>,
) -> Result<PolicyWeights, Failure> {
    let mut weights = if let Some(list) = &args.weights {
        let [t, e, s] = parse_weight_list(list).map_err(|m| Failure::new(EXIT_REFUSED, m))?;
        PolicyWeights {
            trust: t,
            economic: e,
            energy: s,
            policy: Policy::Linear,
        }
    } else if let Some(path) = env_path.filter(|p| !p.is_empty()) {
        let path = PathBuf::from(path);
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::new(EXIT_IO, format!("{WEIGHTS_ENV}={}: {e}", path.display())))?;
        let f: WeightsFile = serde_json::from_str(&text).map_err(|e| {
            Failure::new(
                EXIT_INVALID,
                format!("{WEIGHTS_ENV}={}: {e}", path.display()),
            )
        })?;
        PolicyWeights {
            trust: f.trust,
            economic: f.economic,
            energy: f.energy,
            policy: f.policy,
        }
    } else {
        PolicyWeights::default()
    };
    if let Some(p) = args.policy {
        weights.policy = match p {
            PolicyArg::Linear => Policy::Linear,
            PolicyArg::Geometric => Policy::Geometric,
        };
    }
    weights
        .validate()
        .map_err(|e| Failure::new(EXIT_REFUSED, format!("weights: {e}")))?;
    Ok(weights)
}

fn score_options(args: &ScoringArgs, env_path: Option<OsString>) -> Result<ScoreOptions, Failure> {
    let econ = EconWeights::new(args.alpha_efficiency)
        .map_err(|e| Failure::new(EXIT_REFUSED, e.to_string()))?;
    Ok(ScoreOptions {
        anchor_bits: args.anchor_bits,
        weights: resolve_weights(args, env_path)?,
        pillars: PillarConfig {
            econ,
            integration: args.integration.into(),
            ..PillarConfig::default()
        },
    })
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}"))),
    }
}

fn load(paths: &[PathBuf], stderr: &mut dyn Write) -> Result<Loaded, Failure> {
    let loaded = load_all(paths)?;
    for w in &loaded.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    Ok(loaded)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() {
                EXIT_REFUSED
            } else {
                EXIT_OK
            };
        }
    };
    run(cli, std::env::var_os(WEIGHTS_ENV), stdout, stderr)
}

pub fn run(
    cli: Cli,
    weights_env: Option<OsString>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    match dispatch(cli, weights_env, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(
    cli: Cli,
    weights_env: Option<OsString>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    match cli.command {
        Command::Validate { paths } => Ok(cmd_validate(&paths, stdout)),

        Command::Score {
            paths,
            scoring,
            strict,
            output,
        } => {
            let opts = score_options(&scoring, weights_env)?;
            let loaded = load(&paths, stderr)?;
            let mut bundle = ReportBundle::new("score", &paths, !output.no_meta);
            bundle.warnings.extend(loaded.warnings.iter().cloned());
            report::add_records(&mut bundle, &loaded.records, &opts);
            let issues = report::add_scores(&mut bundle, &loaded.records, &opts)
                .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
            emit(&output.out, &report::render_json(&bundle), stdout)?;
            if strict && (!bundle.unanchored.is_empty() || issues.failed_anchors > 0) {
                let _ = writeln!(
                    stderr,
                    "refused: {} unanchored records, {} unscoreable anchors",
                    bundle.unanchored.len(),
                    issues.failed_anchors
                );
                return Ok(EXIT_REFUSED);
            }
            Ok(EXIT_OK)
        }

        Command::Cor {
            paths,
            anchor_bits,
            output,
        } => {
            let loaded = load(&paths, stderr)?;
            let mut bundle = ReportBundle::new("cor", &paths, !output.no_meta);
            bundle.warnings.extend(loaded.warnings.iter().cloned());
            report::add_records(&mut bundle, &loaded.records, &ScoreOptions::default());
            report::add_cor(&mut bundle, &loaded.records, anchor_bits)
                .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
            emit(&output.out, &report::render_json(&bundle), stdout)?;
            Ok(EXIT_OK)
        }

        Command::Fit {
            paths,
            native_bits,
            hops,
            integration,
            output,
        } => {
            let loaded = load(&paths, stderr)?;
            let mut bundle = ReportBundle::new("fit", &paths, !output.no_meta);
            bundle.warnings.extend(loaded.warnings.iter().cloned());
            let opts = ScoreOptions {
                anchor_bits: native_bits,
                pillars: PillarConfig {
                    integration: integration.into(),
                    ..PillarConfig::default()
                },
                ..ScoreOptions::default()
            };
            report::add_fits(&mut bundle, &loaded.records, native_bits, hops, &opts);
            emit(&output.out, &report::render_json(&bundle), stdout)?;
            let refused = bundle.fits.iter().filter(|f| f.refused).count();
            let failed = bundle
                .fits
                .iter()
                .filter(|f| f.error.is_some() && !f.refused)
                .count();
            for f in bundle
                .fits
                .iter()
                .filter_map(|f| f.error.as_ref().map(|e| (f, e)))
            {
                let _ = writeln!(
                    stderr,
                    "{}/{}/{}: {}",
                    f.0.model, f.0.hardware, f.0.task, f.1
                );
            }
            Ok(if failed > 0 {
                EXIT_INVALID
            } else if refused > 0 {
                EXIT_REFUSED
            } else {
                EXIT_OK
            })
        }

        Command::Bstar { params, output } => {
            let text = read(&params)?;
            let p = parse_params(&text)
                .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", params.display())))?;
            let mut bundle =
                ReportBundle::new("bstar", std::slice::from_ref(&params), !output.no_meta);
            report::add_critical_batches(&mut bundle, &p)
                .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", params.display())))?;
            emit(&output.out, &report::render_json(&bundle), stdout)?;
            Ok(EXIT_OK)
        }

        Command::Simulate {
            scenario,
            out,
            verify,
            no_meta,
        } => {
            let text = read(&scenario)?;
            let file = ScenarioFile::parse(&text)
                .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", scenario.display())))?;
            let sim = simulate(&file.to_scenario())
                .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", scenario.display())))?;
            let jsonl = to_jsonl(&sim.records);
            if !verify {
                emit(&out, &jsonl, stdout)?;
                return Ok(EXIT_OK);
            }
            if out.is_some() {
                emit(&out, &jsonl, stdout)?;
            }
            let theorems = verify_output(&sim);
            let passed = theorems.all_passed();
            let mut bundle =
                ReportBundle::new("simulate", std::slice::from_ref(&scenario), !no_meta);
            bundle.simulation = Some(Simulation {
                scenario: sim.truth.clone(),
                records: sim.records.len(),
                theorems: Some(theorems),
            });
            emit(&None, &report::render_json(&bundle), stdout)?;
            Ok(if passed { EXIT_OK } else { EXIT_INVALID })
        }

        Command::Report {
            paths,
            format,
            out_dir,
            scoring,
            hops,
            output,
        } => {
            if format == Format::CsvSeries && out_dir.is_none() {
                return Err(Failure::new(
                    EXIT_REFUSED,
                    "--format csv-series needs --out-dir",
                ));
            }
            let opts = score_options(&scoring, weights_env)?;
            let loaded = load(&paths, stderr)?;
            let mut bundle = ReportBundle::new("report", &paths, !output.no_meta);
            bundle.warnings.extend(loaded.warnings.iter().cloned());
            report::add_records(&mut bundle, &loaded.records, &opts);
            report::add_scores(&mut bundle, &loaded.records, &opts)
                .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
            report::add_cor(&mut bundle, &loaded.records, opts.anchor_bits)
                .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
            if !loaded.records.is_empty() {
                report::add_fits(&mut bundle, &loaded.records, opts.anchor_bits, hops, &opts);
            }
            match format {
                Format::Json => emit(&output.out, &report::render_json(&bundle), stdout)?,
                Format::Markdown => emit(&output.out, &report::render_markdown(&bundle), stdout)?,
                Format::CsvSeries => {
                    let dir = out_dir.expect("checked above");
                    let written = report::write_series(&bundle, &dir)
                        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", dir.display())))?;
                    for p in written {
                        let _ = writeln!(stdout, "{}", p.display());
                    }
                }
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_validate(paths: &[PathBuf], stdout: &mut dyn Write) -> i32 {
    let mut code = EXIT_OK;
    for p in paths {
        let files = match expand_paths(std::slice::from_ref(p)) {
            Ok(f) => f,
            Err(e) => {
                let _ = writeln!(stdout, "error {e}");
                code = code.max(EXIT_IO);
                continue;
            }
        };
        for f in files {
            match load_file(&f) {
                Ok(parsed) => {
                    let _ = writeln!(
                        stdout,
                        "ok {}: {} records",
                        f.display(),
                        parsed.records.len()
                    );
                    for w in parsed.warnings {
                        let _ = writeln!(stdout, "warning {}: {w}", f.display());
                    }
                }
                Err(e) => {
                    let _ = writeln!(stdout, "error {e}");
                    let c = if e.is_io() { EXIT_IO } else { EXIT_INVALID };
                    code = code.max(c);
                }
            }
        }
    }
    code
}
