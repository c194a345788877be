//! Command-line pipeline: simulate, oracle-verify, symmetry-check, test,
//! mc-study, and report rendering.
//!
//! Configuration lives in a single JSON file; `--set key=value` overrides
//! dotted paths. Outputs are written into the configured output directory.
//! `SSLAB_THREADS` bounds the worker pool; results do not depend on it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sslab_core::demand::{
    control_residuals, read_dataset, simulate_cross_section, write_dataset, ContextPoint,
    DesignSpec, GoodIndex, HetLaw, ResidualMode, ShareDemandSystem, SimulatedDataset,
};
use sslab_core::engine::ChannelMode;
use sslab_core::error::Error as CoreError;
use sslab_core::estimator::EstimatorSettings;
use sslab_core::harness::{
    self, bootstrap_pvalue, build_grid, evaluate_residual_field, monte_carlo_study,
    oracle_identification_gap, BootstrapSettings, GridDesign, McCell, ReportMeta, TestReport,
};
use sslab_core::numerics::FdScheme;
use sslab_core::oracle::{OracleSettings, PopulationOracle};

#[derive(Parser)]
#[command(name = "sslab", version, about = "Slutsky-symmetry laboratory pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cross section and write dataset CSV + metadata.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path config overrides, e.g. --set n=5000
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Verify the frozen-channel identification formula against the
    /// population oracle; exits nonzero when the gap exceeds 2e-3.
    OracleVerify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate the oracle residual field on the configured grid for every
    /// configured channel; writes a report and a residual CSV.
    SymmetryCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the bootstrap specification test on a dataset.
    Test {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Monte Carlo size/power study; writes the cell table as CSV.
    McStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render an existing report to plot-ready residual CSV.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpec {
    name: String,
    #[serde(default)]
    c: f64,
    #[serde(default = "default_het")]
    het: HetLaw,
}

fn default_het() -> HetLaw {
    HetLaw::independent()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    #[serde(default = "default_levels")]
    levels: Vec<f64>,
    #[serde(default)]
    levels_j: Option<Vec<f64>>,
    /// Explicit contexts; defaults to the design median.
    #[serde(default)]
    contexts: Option<Vec<ContextPoint>>,
    #[serde(default = "default_pairs")]
    pairs: Vec<(usize, usize)>,
    #[serde(default = "default_trim")]
    trim: (f64, f64),
}

fn default_levels() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_pairs() -> Vec<(usize, usize)> {
    vec![(1, 2)]
}

fn default_trim() -> (f64, f64) {
    (0.1, 0.9)
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            levels: default_levels(),
            levels_j: None,
            contexts: None,
            pairs: default_pairs(),
            trim: default_trim(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct McConfig {
    systems: Vec<SystemSpec>,
    #[serde(default = "default_mc_ns")]
    ns: Vec<usize>,
    reps: usize,
    b: usize,
}

fn default_mc_ns() -> Vec<usize> {
    vec![100_000]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    system: SystemSpec,
    #[serde(default = "DesignSpec::centered_default")]
    design: DesignSpec,
    n: usize,
    seed: u64,
    #[serde(default)]
    endogenous: bool,
    #[serde(default)]
    residual_mode: Option<ResidualMode>,
    #[serde(default = "default_channels")]
    channels: Vec<ChannelMode>,
    /// Channel carrying the test statistic and bootstrap.
    #[serde(default = "default_test_channel")]
    test_channel: ChannelMode,
    #[serde(default)]
    grid: GridConfig,
    /// Finite differences against the oracle provider.
    #[serde(default)]
    fd: FdScheme,
    /// Finite differences against the estimator provider: a wider step and
    /// no extrapolation, since statistical noise dominates truncation.
    #[serde(default = "default_estimator_fd")]
    estimator_fd: FdScheme,
    #[serde(default = "default_estimator_settings")]
    estimator: EstimatorSettings,
    #[serde(default = "default_b")]
    bootstrap_b: usize,
    #[serde(default)]
    mc: Option<McConfig>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
}

fn default_channels() -> Vec<ChannelMode> {
    ChannelMode::all().to_vec()
}

fn default_test_channel() -> ChannelMode {
    ChannelMode::StableComposition
}

fn default_estimator_fd() -> FdScheme {
    FdScheme {
        step: 1e-2,
        richardson: false,
        relative: true,
    }
}

fn default_estimator_settings() -> EstimatorSettings {
    EstimatorSettings {
        bandwidth_scale_w: 4.0,
        ..EstimatorSettings::default()
    }
}

fn default_b() -> usize {
    199
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    fn build_system(&self, spec: &SystemSpec) -> Result<ShareDemandSystem, CoreError> {
        ShareDemandSystem::by_name(&spec.name, spec.c, spec.het.clone())
    }

    fn system(&self) -> Result<ShareDemandSystem, CoreError> {
        self.build_system(&self.system)
    }

    fn grid_design(&self) -> Result<GridDesign, CoreError> {
        let contexts = match &self.grid.contexts {
            Some(cs) if !cs.is_empty() => cs.clone(),
            _ => vec![self.design.median_context(self.endogenous)],
        };
        let mut pairs = Vec::new();
        for &(i, j) in &self.grid.pairs {
            pairs.push((GoodIndex::new(i)?, GoodIndex::new(j)?));
        }
        Ok(GridDesign {
            levels: self.grid.levels.clone(),
            levels_j: self.grid.levels_j.clone(),
            contexts,
            pairs,
            trim: self.grid.trim,
        })
    }

    fn estimator_channels(&self) -> Vec<ChannelMode> {
        self.channels
            .iter()
            .copied()
            .filter(|c| *c != ChannelMode::Frozen)
            .collect()
    }
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn apply_overrides(value: &mut serde_json::Value, sets: &[String]) -> Result<(), CliError> {
    for entry in sets {
        let (path, raw) = entry.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override '{entry}' is not of the form key=value"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut *value;
        let segments: Vec<&str> = path.split('.').collect();
        for (k, segment) in segments.iter().enumerate() {
            if !cursor.is_object() {
                return Err(CliError::Config(format!(
                    "override path '{path}' crosses a non-object"
                )));
            }
            if k + 1 == segments.len() {
                cursor
                    .as_object_mut()
                    .unwrap()
                    .insert(segment.to_string(), parsed.clone());
            } else {
                cursor = cursor
                    .as_object_mut()
                    .unwrap()
                    .entry(segment.to_string())
                    .or_insert_with(|| serde_json::json!({}));
            }
        }
    }
    Ok(())
}

fn load_config(path: &Path, sets: &[String]) -> Result<(RunConfig, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut value, sets)?;
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let resolved = serde_json::to_value(&config)
        .map_err(|e| CliError::Config(format!("config echo: {e}")))?;
    Ok((config, resolved))
}

fn ensure_output_dir(config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory: {e}")))
}

fn simulate_dataset(config: &RunConfig) -> Result<SimulatedDataset, CliError> {
    let system = config.system()?;
    let mut dataset = simulate_cross_section(
        &system,
        &config.design,
        config.n,
        config.seed,
        config.endogenous,
    )?;
    if let Some(mode) = config.residual_mode {
        control_residuals(&mut dataset, mode)?;
    }
    Ok(dataset)
}

fn cmd_simulate(config: &RunConfig) -> Result<String, CliError> {
    ensure_output_dir(config)?;
    let dataset = simulate_dataset(config)?;
    let path = config.output_dir.join("dataset.csv");
    write_dataset(&dataset, &path)?;
    Ok(format!(
        "simulated {} rows of {} (seed {}) -> {}",
        dataset.n(),
        dataset.meta.system,
        config.seed,
        path.display()
    ))
}

fn oracle_for(config: &RunConfig) -> Result<PopulationOracle, CliError> {
    let system = config.system()?;
    Ok(PopulationOracle::new(
        system,
        OracleSettings::default(),
        config.seed,
    ))
}

fn cmd_oracle_verify(config: &RunConfig) -> Result<(String, bool), CliError> {
    let oracle = oracle_for(config)?;
    let grid = build_grid(&oracle, &config.grid_design()?)?;
    let gap = oracle_identification_gap(&oracle, &grid, &config.fd)?;
    let pass = gap <= 2e-3;
    Ok((
        format!(
            "max |quantile representation - structural partial| = {gap:.3e} over {} points ({})",
            grid.points.len(),
            if pass { "pass" } else { "FAIL" }
        ),
        pass,
    ))
}

fn cmd_symmetry_check(
    config: &RunConfig,
    resolved: &serde_json::Value,
) -> Result<String, CliError> {
    ensure_output_dir(config)?;
    let start = Instant::now();
    let oracle = oracle_for(config)?;
    let grid = build_grid(&oracle, &config.grid_design()?)?;
    let outcomes = evaluate_residual_field(&oracle, &grid, &config.channels, &config.fd);

    let residuals: Vec<f64> = outcomes
        .iter()
        .flat_map(|o| o.residuals.iter())
        .filter(|r| r.channel == config.test_channel)
        .map(|r| r.residual)
        .collect();
    let statistic = harness::test_statistic(&residuals, None).unwrap_or(f64::NAN);

    let report = TestReport::from_outcomes(
        ReportMeta {
            seed: config.seed,
            config_hash: harness::config_hash(resolved),
            runtime_s: start.elapsed().as_secs_f64(),
        },
        resolved.clone(),
        &outcomes,
        statistic,
        Vec::new(),
        1.0,
    );
    let report_path = config.output_dir.join("symmetry_check.json");
    harness::write_report(&report, &report_path)?;
    harness::write_residual_csv(&report, &config.output_dir.join("residual_field.csv"))?;

    let mut summary = String::new();
    for &channel in &config.channels {
        let max = outcomes
            .iter()
            .flat_map(|o| o.residuals.iter())
            .filter(|r| r.channel == channel)
            .map(|r| r.residual.abs())
            .fold(f64::NEG_INFINITY, f64::max);
        summary.push_str(&format!("{channel}: max |residual| = {max:.3e}; "));
    }
    Ok(format!("{summary}report -> {}", report_path.display()))
}

fn cmd_test(
    config: &RunConfig,
    resolved: &serde_json::Value,
    data: &Path,
) -> Result<String, CliError> {
    ensure_output_dir(config)?;
    let start = Instant::now();
    let dataset = read_dataset(data)?;
    let grid_design = config.grid_design()?;
    let bootstrap = bootstrap_pvalue(
        &dataset,
        &config.estimator,
        &grid_design,
        &BootstrapSettings::new(
            config.bootstrap_b,
            config.seed,
            config.test_channel,
            config.estimator_fd,
        ),
    )?;

    // Residual records across every estimator-capable channel.
    let provider = sslab_core::estimator::KernelProvider::fit(&dataset, config.estimator.clone())?;
    let grid = build_grid(&provider, &grid_design)?;
    let outcomes = evaluate_residual_field(
        &provider,
        &grid,
        &config.estimator_channels(),
        &config.estimator_fd,
    );

    let report = TestReport::from_outcomes(
        ReportMeta {
            seed: config.seed,
            config_hash: harness::config_hash(resolved),
            runtime_s: start.elapsed().as_secs_f64(),
        },
        resolved.clone(),
        &outcomes,
        bootstrap.statistic,
        bootstrap.replicate_statistics.clone(),
        bootstrap.p_value,
    );
    let path = config.output_dir.join("test_report.json");
    harness::write_report(&report, &path)?;
    Ok(format!(
        "T = {:.6e}, p = {:.4} ({} replicates, {} failed) -> {}",
        bootstrap.statistic,
        bootstrap.p_value,
        bootstrap.replicate_statistics.len(),
        bootstrap.failed_replicates,
        path.display()
    ))
}

fn cmd_mc_study(config: &RunConfig) -> Result<String, CliError> {
    ensure_output_dir(config)?;
    let mc = config
        .mc
        .as_ref()
        .ok_or_else(|| CliError::Config("mc-study needs an 'mc' config section".into()))?;
    let mut cells = Vec::new();
    for spec in &mc.systems {
        for &n in &mc.ns {
            cells.push(McCell {
                label: format!("{}_c{}", spec.name, spec.c),
                system: config.build_system(spec)?,
                design: config.design.clone(),
                n,
            });
        }
    }
    let results = monte_carlo_study(
        &cells,
        mc.reps,
        mc.b,
        config.test_channel,
        &config.estimator,
        &config.estimator_fd,
        config.grid.levels.clone(),
        config.seed,
    )?;
    let path = config.output_dir.join("mc_table.csv");
    harness::write_mc_table(&results, &path)?;
    let summary: Vec<String> = results
        .iter()
        .map(|c| format!("{}: reject {:.3}", c.label, c.reject_rate_5pct))
        .collect();
    Ok(format!("{} -> {}", summary.join("; "), path.display()))
}

fn cmd_report(report_path: &Path, out: &Path) -> Result<String, CliError> {
    let report = harness::read_report(report_path)?;
    harness::write_residual_csv(&report, out)?;
    Ok(format!(
        "{} points -> {}",
        report.points.len(),
        out.display()
    ))
}

fn init_thread_pool() {
    let threads = std::env::var("SSLAB_THREADS")
        .ok()
        .and_then(|t| t.parse::<usize>().ok());
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
}

fn describe(e: CliError) -> (u8, String) {
    match e {
        CliError::Config(message) => (2, format!("config error: {message}")),
        CliError::Runtime(message) => (3, format!("error: {message}")),
    }
}

fn run() -> Result<String, (u8, String)> {
    let cli = Cli::parse();
    init_thread_pool();
    match &cli.command {
        Command::Simulate { config, set } => {
            let (config, _) = load_config(config, set).map_err(describe)?;
            cmd_simulate(&config).map_err(describe)
        }
        Command::OracleVerify { config, set } => {
            let (config, _) = load_config(config, set).map_err(describe)?;
            let (message, pass) = cmd_oracle_verify(&config).map_err(describe)?;
            if pass {
                Ok(message)
            } else {
                Err((3, message))
            }
        }
        Command::SymmetryCheck { config, set } => {
            let (config, resolved) = load_config(config, set).map_err(describe)?;
            cmd_symmetry_check(&config, &resolved).map_err(describe)
        }
        Command::Test { config, data, set } => {
            let (config, resolved) = load_config(config, set).map_err(describe)?;
            cmd_test(&config, &resolved, data).map_err(describe)
        }
        Command::McStudy { config, set } => {
            let (config, _) = load_config(config, set).map_err(describe)?;
            cmd_mc_study(&config).map_err(describe)
        }
        Command::Report { report, out } => cmd_report(report, out).map_err(describe),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err((code, message)) => {
            eprintln!("{message}");
            ExitCode::from(code)
        }
    }
}
