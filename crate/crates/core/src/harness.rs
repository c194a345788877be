//! Orchestration: evaluation grids, residual fields, the test statistic,
//! bootstrap calibration, Monte Carlo studies, and report persistence.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{
    simulate_cross_section, ContextPoint, DesignSpec, GoodIndex, ShareDemandSystem,
    SimulatedDataset, WCoord,
};
use crate::engine::{
    quantile_indices, structural_partial_from_quantiles, symmetry_sides, ChannelMode, EvalPoint,
    QuantileIndices, QuantileProvider, SymmetryResidual,
};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorSettings, KernelProvider};
use crate::numerics::FdScheme;
use crate::oracle::PopulationOracle;
use crate::rng::{streams, substream};

/// Quantile levels, contexts, and good pairs whose product forms the
/// evaluation grid. `levels_j` switches from diagonal level pairs to a full
/// cross product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDesign {
    pub levels: Vec<f64>,
    #[serde(default)]
    pub levels_j: Option<Vec<f64>>,
    pub contexts: Vec<ContextPoint>,
    pub pairs: Vec<(GoodIndex, GoodIndex)>,
    /// Admissible level window.
    pub trim: (f64, f64),
}

impl GridDesign {
    pub fn default_for(contexts: Vec<ContextPoint>) -> Self {
        GridDesign {
            levels: vec![0.25, 0.5, 0.75],
            levels_j: None,
            contexts,
            pairs: vec![(GoodIndex::FIRST, GoodIndex::SECOND)],
            trim: (0.1, 0.9),
        }
    }
}

/// Grid of admissible evaluation points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationGrid {
    pub points: Vec<GridPoint>,
    pub dropped: usize,
}

/// One grid point with the levels that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub point: EvalPoint,
    pub level_i: f64,
    pub level_j: f64,
}

/// Builds the grid from provider quantiles at the requested levels,
/// dropping points that violate the density floor.
pub fn build_grid<P: QuantileProvider + ?Sized>(
    provider: &P,
    design: &GridDesign,
) -> Result<EvaluationGrid> {
    let (trim_lo, trim_hi) = design.trim;
    let levels_j = design.levels_j.as_ref().unwrap_or(&design.levels);
    for &level in design.levels.iter().chain(levels_j.iter()) {
        if level < trim_lo || level > trim_hi {
            return Err(Error::Argument(format!(
                "level {level} rejected by trimming bounds [{trim_lo}, {trim_hi}]"
            )));
        }
    }
    if design.contexts.is_empty() || design.pairs.is_empty() || design.levels.is_empty() {
        return Err(Error::Argument(
            "grid design needs contexts, pairs, and levels".into(),
        ));
    }

    let mut points = Vec::new();
    let mut dropped = 0usize;
    for w in &design.contexts {
        for &(i, j) in &design.pairs {
            if i == j {
                return Err(Error::Argument(format!(
                    "grid pair ({i}, {j}) needs distinct goods"
                )));
            }
            let level_pairs: Vec<(f64, f64)> = match &design.levels_j {
                Some(lj) => design
                    .levels
                    .iter()
                    .flat_map(|&li| lj.iter().map(move |&ljv| (li, ljv)))
                    .collect(),
                None => design.levels.iter().map(|&l| (l, l)).collect(),
            };
            for (level_i, level_j) in level_pairs {
                let candidate = (|| -> Result<GridPoint> {
                    let y_i = provider.marginal_quantile(w, i, level_i)?;
                    let y_j = provider.marginal_quantile(w, j, level_j)?;
                    let density = provider.conditional_density(w, i, j, y_j, y_i)?;
                    if density.floored {
                        return Err(Error::DensityFloor {
                            value: density.value,
                            floor: density.value,
                            point: format!("grid point ({y_i}, {y_j})"),
                        });
                    }
                    Ok(GridPoint {
                        point: EvalPoint {
                            w: w.clone(),
                            i,
                            j,
                            y_i,
                            y_j,
                        },
                        level_i,
                        level_j,
                    })
                })();
                match candidate {
                    Ok(gp) => points.push(gp),
                    Err(e) => {
                        dropped += 1;
                        log::warn!("grid point dropped at levels ({level_i}, {level_j}): {e}");
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "all {dropped} candidate points dropped"
        )));
    }
    Ok(EvaluationGrid { points, dropped })
}

/// All channel outcomes at one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointOutcome {
    pub grid_point: GridPoint,
    pub indices: Option<QuantileIndices>,
    pub residuals: Vec<SymmetryResidual>,
    pub errors: Vec<(ChannelMode, String)>,
}

/// Evaluates the symmetry residual at every grid point for each channel.
/// Per-point failures are recorded, never fatal. Points evaluate in
/// parallel; the output order matches the grid.
pub fn evaluate_residual_field<P: QuantileProvider + ?Sized>(
    provider: &P,
    grid: &EvaluationGrid,
    channels: &[ChannelMode],
    scheme: &FdScheme,
) -> Vec<PointOutcome> {
    grid.points
        .par_iter()
        .map(|gp| {
            let indices = match quantile_indices(provider, &gp.point) {
                Ok(idx) => idx,
                Err(e) => {
                    return PointOutcome {
                        grid_point: gp.clone(),
                        indices: None,
                        residuals: Vec::new(),
                        errors: channels.iter().map(|&c| (c, e.to_string())).collect(),
                    }
                }
            };
            let mut residuals = Vec::new();
            let mut errors = Vec::new();
            for &channel in channels {
                match symmetry_sides(provider, &gp.point, &indices, channel, scheme) {
                    Ok(res) => residuals.push(res),
                    Err(e) => errors.push((channel, e.to_string())),
                }
            }
            PointOutcome {
                grid_point: gp.clone(),
                indices: Some(indices),
                residuals,
                errors,
            }
        })
        .collect()
}

/// Weighted squared-residual statistic. Weights default to uniform and are
/// normalized to sum to one, so rescaling them changes nothing.
pub fn test_statistic(residuals: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Argument(
            "test statistic needs at least one residual".into(),
        ));
    }
    let uniform = vec![1.0; residuals.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != residuals.len() || weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Argument(
            "weights must be nonnegative and match the residuals".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Argument("weights sum to zero".into()));
    }
    Ok(residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w / total * r * r)
        .sum())
}

/// Maximum gap between the frozen-channel quantile representation and the
/// structural conditional expectation, over a grid and all w1 coordinates.
/// The oracle-side verification of the identification formula.
pub fn oracle_identification_gap(
    oracle: &PopulationOracle,
    grid: &EvaluationGrid,
    scheme: &FdScheme,
) -> Result<f64> {
    let gaps: Vec<Result<f64>> = grid
        .points
        .par_iter()
        .map(|gp| {
            let indices = quantile_indices(oracle, &gp.point)?;
            let mut worst = 0.0f64;
            for coord in WCoord::all() {
                let via_quantiles = structural_partial_from_quantiles(
                    oracle,
                    &gp.point,
                    &indices,
                    coord,
                    ChannelMode::Frozen,
                    scheme,
                )?;
                let structural = oracle.conditional_expectation_partial(
                    &gp.point.w,
                    coord,
                    gp.point.i,
                    gp.point.j,
                    gp.point.y_i,
                    gp.point.y_j,
                )?;
                worst = worst.max((via_quantiles - structural).abs());
            }
            Ok(worst)
        })
        .collect();
    let mut max_gap = 0.0f64;
    for gap in gaps {
        max_gap = max_gap.max(gap?);
    }
    Ok(max_gap)
}

/// Settings for the bootstrap specification test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
    pub channel: ChannelMode,
    pub scheme: FdScheme,
    /// Maximum tolerated fraction of failed replicates.
    pub max_failed_fraction: f64,
    /// Minimum fraction of grid points that must evaluate.
    pub min_point_fraction: f64,
}

impl BootstrapSettings {
    pub fn new(replicates: usize, seed: u64, channel: ChannelMode, scheme: FdScheme) -> Self {
        BootstrapSettings {
            replicates,
            seed,
            channel,
            scheme,
            max_failed_fraction: 0.2,
            min_point_fraction: 0.5,
        }
    }
}

/// Outcome of the bootstrap specification test on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub replicate_statistics: Vec<f64>,
    pub failed_replicates: usize,
    pub outcomes: Vec<PointOutcome>,
}

fn channel_residuals(
    outcomes: &[PointOutcome],
    channel: ChannelMode,
) -> Vec<(usize, f64)> {
    outcomes
        .iter()
        .enumerate()
        .filter_map(|(k, outcome)| {
            outcome
                .residuals
                .iter()
                .find(|r| r.channel == channel)
                .map(|r| (k, r.residual))
        })
        .collect()
}

/// Pairs (row) bootstrap of the residual-field statistic, centered at the
/// full-sample estimate. Replicates rebuild the provider on resampled rows
/// with frozen bandwidths and re-evaluate the full functional.
pub fn bootstrap_pvalue(
    dataset: &SimulatedDataset,
    est_settings: &EstimatorSettings,
    grid_design: &GridDesign,
    settings: &BootstrapSettings,
) -> Result<BootstrapOutcome> {
    if settings.replicates < 19 {
        return Err(Error::Argument(format!(
            "need at least 19 bootstrap replicates, got {}",
            settings.replicates
        )));
    }
    let provider = KernelProvider::fit(dataset, est_settings.clone())?;
    let grid = build_grid(&provider, grid_design)?;
    let channels = [settings.channel];
    let outcomes = evaluate_residual_field(&provider, &grid, &channels, &settings.scheme);

    let base = channel_residuals(&outcomes, settings.channel);
    if (base.len() as f64) < settings.min_point_fraction * grid.points.len() as f64 {
        return Err(Error::EmptyGrid(format!(
            "only {} of {} grid points evaluated",
            base.len(),
            grid.points.len()
        )));
    }
    let residuals: Vec<f64> = base.iter().map(|&(_, r)| r).collect();
    let statistic = test_statistic(&residuals, None)?;

    let n = dataset.n();
    let replicate_results: Vec<Option<f64>> = (0..settings.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(settings.seed, streams::BOOTSTRAP + b as u64, 0);
            let rows: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
            let replicate = match provider.refit_rows(&rows) {
                Ok(p) => p,
                Err(_) => return None,
            };
            // Centered statistic: deviations of replicate residuals from the
            // full-sample residuals at the same points.
            let mut deviations = Vec::new();
            for &(point_idx, full_residual) in &base {
                let gp = &grid.points[point_idx];
                let res = quantile_indices(&replicate, &gp.point).and_then(|idx| {
                    symmetry_sides(&replicate, &gp.point, &idx, settings.channel, &settings.scheme)
                });
                if let Ok(r) = res {
                    deviations.push(r.residual - full_residual);
                }
            }
            if (deviations.len() as f64) < settings.min_point_fraction * base.len() as f64 {
                return None;
            }
            test_statistic(&deviations, None).ok()
        })
        .collect();

    let failed = replicate_results.iter().filter(|r| r.is_none()).count();
    if failed as f64 > settings.max_failed_fraction * settings.replicates as f64 {
        return Err(Error::UnreliableBootstrap {
            failed,
            total: settings.replicates,
        });
    }
    let replicate_statistics: Vec<f64> = replicate_results.into_iter().flatten().collect();
    let exceed = replicate_statistics
        .iter()
        .filter(|&&t| t >= statistic)
        .count();
    let p_value = (1 + exceed) as f64 / (replicate_statistics.len() + 1) as f64;

    Ok(BootstrapOutcome {
        statistic,
        p_value,
        replicate_statistics,
        failed_replicates: failed,
        outcomes,
    })
}

/// One cell of a Monte Carlo study.
#[derive(Debug, Clone)]
pub struct McCell {
    pub label: String,
    pub system: ShareDemandSystem,
    pub design: DesignSpec,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRep {
    pub rep: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCellResult {
    pub label: String,
    pub n: usize,
    pub channel: ChannelMode,
    pub reps: Vec<McRep>,
    pub reject_rate_5pct: f64,
    pub mean_statistic: f64,
    pub sd_statistic: f64,
}

/// Monte Carlo size/power study over (system, n) cells. Each repetition
/// simulates a fresh dataset and runs the bootstrap test; cells share
/// repetition seeds so cross-cell comparisons pair by seed.
pub fn monte_carlo_study(
    cells: &[McCell],
    reps: usize,
    bootstrap_b: usize,
    channel: ChannelMode,
    est_settings: &EstimatorSettings,
    scheme: &FdScheme,
    grid_levels: Vec<f64>,
    seed: u64,
) -> Result<Vec<McCellResult>> {
    if reps == 0 {
        return Err(Error::Argument("Monte Carlo study needs reps >= 1".into()));
    }
    if cells.is_empty() {
        return Err(Error::Argument("Monte Carlo study needs cells".into()));
    }
    let mut results = Vec::with_capacity(cells.len());
    for cell in cells {
        let rep_outcomes: Vec<McRep> = (0..reps)
            .map(|rep| {
                let mut rng = substream(seed, streams::MC_STUDY, rep as u64);
                let data_seed: u64 = rng.gen();
                let boot_seed: u64 = rng.gen();
                let run = (|| -> Result<BootstrapOutcome> {
                    let dataset = simulate_cross_section(
                        &cell.system,
                        &cell.design,
                        cell.n,
                        data_seed,
                        false,
                    )?;
                    let w0 = cell.design.median_context(false);
                    let grid_design = GridDesign {
                        levels: grid_levels.clone(),
                        levels_j: None,
                        contexts: vec![w0],
                        pairs: vec![(GoodIndex::FIRST, GoodIndex::SECOND)],
                        trim: (0.1, 0.9),
                    };
                    bootstrap_pvalue(
                        &dataset,
                        est_settings,
                        &grid_design,
                        &BootstrapSettings::new(bootstrap_b, boot_seed, channel, *scheme),
                    )
                })();
                match run {
                    Ok(out) => McRep {
                        rep,
                        statistic: Some(out.statistic),
                        p_value: Some(out.p_value),
                        error: None,
                    },
                    Err(e) => McRep {
                        rep,
                        statistic: None,
                        p_value: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();

        let stats: Vec<f64> = rep_outcomes.iter().filter_map(|r| r.statistic).collect();
        let rejects = rep_outcomes
            .iter()
            .filter(|r| r.p_value.map(|p| p <= 0.05).unwrap_or(false))
            .count();
        let valid = rep_outcomes.iter().filter(|r| r.error.is_none()).count();
        let mean = if stats.is_empty() {
            f64::NAN
        } else {
            stats.iter().sum::<f64>() / stats.len() as f64
        };
        let sd = if stats.len() < 2 {
            f64::NAN
        } else {
            (stats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (stats.len() - 1) as f64)
                .sqrt()
        };
        results.push(McCellResult {
            label: cell.label.clone(),
            n: cell.n,
            channel,
            reps: rep_outcomes,
            reject_rate_5pct: if valid == 0 {
                f64::NAN
            } else {
                rejects as f64 / valid as f64
            },
            mean_statistic: mean,
            sd_statistic: sd,
        });
    }
    Ok(results)
}

/// Writes the Monte Carlo table as CSV.
pub fn write_mc_table(results: &[McCellResult], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "system",
        "n",
        "channel",
        "reps",
        "reject_rate_5pct",
        "mean_T",
        "sd_T",
    ])?;
    for cell in results {
        writer.write_record([
            cell.label.clone(),
            cell.n.to_string(),
            cell.channel.to_string(),
            cell.reps.len().to_string(),
            format!("{}", cell.reject_rate_5pct),
            format!("{}", cell.mean_statistic),
            format!("{}", cell.sd_statistic),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Report metadata; `runtime_s` is the only field exempt from bit-exact
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    pub runtime_s: f64,
}

/// Correction magnitudes echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCorrections {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(rename = "Dx")]
    pub dx: f64,
}

/// One (point, channel) record of a test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub w: ContextPoint,
    pub y_i: f64,
    pub y_j: f64,
    pub i: GoodIndex,
    pub j: GoodIndex,
    pub level_i: f64,
    pub level_j: f64,
    pub channel: ChannelMode,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub corrections: ReportCorrections,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Full output of one specification-test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestReport {
    pub meta: ReportMeta,
    pub settings: serde_json::Value,
    pub points: Vec<ReportPoint>,
    pub statistic: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
}

impl TestReport {
    /// Flattens evaluated outcomes into report points.
    pub fn from_outcomes(
        meta: ReportMeta,
        settings: serde_json::Value,
        outcomes: &[PointOutcome],
        statistic: f64,
        replicates: Vec<f64>,
        p_value: f64,
    ) -> Self {
        let mut points = Vec::new();
        for outcome in outcomes {
            let gp = &outcome.grid_point;
            for res in &outcome.residuals {
                points.push(ReportPoint {
                    w: gp.point.w.clone(),
                    y_i: gp.point.y_i,
                    y_j: gp.point.y_j,
                    i: gp.point.i,
                    j: gp.point.j,
                    level_i: gp.level_i,
                    level_j: gp.level_j,
                    channel: res.channel,
                    lhs: res.lhs,
                    rhs: res.rhs,
                    residual: res.residual,
                    corrections: ReportCorrections {
                        c: res.corrections_lhs.c,
                        d: res.corrections_lhs.d_p.clone(),
                        dx: res.corrections_lhs.d_x,
                    },
                    error: None,
                });
            }
            for (channel, message) in &outcome.errors {
                points.push(ReportPoint {
                    w: gp.point.w.clone(),
                    y_i: gp.point.y_i,
                    y_j: gp.point.y_j,
                    i: gp.point.i,
                    j: gp.point.j,
                    level_i: gp.level_i,
                    level_j: gp.level_j,
                    channel: *channel,
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                    residual: f64::NAN,
                    corrections: ReportCorrections {
                        c: f64::NAN,
                        d: Vec::new(),
                        dx: f64::NAN,
                    },
                    error: Some(message.clone()),
                });
            }
        }
        TestReport {
            meta,
            settings,
            points,
            statistic,
            replicates,
            p_value,
        }
    }
}

/// Hash of a resolved configuration, echoed into reports.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

pub fn write_report(report: &TestReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        source: e,
        context: Some("test report".into()),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<TestReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: Some(format!(
            "report {} (line {}, column {})",
            path.display(),
            e.line(),
            e.column()
        )),
        source: e,
    })
}

/// Writes the residual field of a report as plot-ready CSV.
pub fn write_residual_csv(report: &TestReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["point_id", "level_i", "level_j", "residual", "channel"])?;
    for (id, point) in report.points.iter().enumerate() {
        writer.write_record([
            id.to_string(),
            format!("{}", point.level_i),
            format!("{}", point.level_j),
            format!("{}", point.residual),
            point.channel.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::HetLaw;

    fn w0() -> ContextPoint {
        ContextPoint::new(vec![1.0, 2.0], 10.0).unwrap()
    }

    fn cd3_oracle() -> PopulationOracle {
        PopulationOracle::with_defaults(ShareDemandSystem::cd3(HetLaw::independent()).unwrap())
    }

    #[test]
    fn grid_counts_levels_by_context_by_pair() {
        let oracle = cd3_oracle();
        let mut contexts = vec![w0()];
        let mut w1 = w0();
        w1.x = 9.0;
        contexts.push(w1);
        let mut w2 = w0();
        w2.x = 11.0;
        contexts.push(w2);
        let grid = build_grid(&oracle, &GridDesign::default_for(contexts)).unwrap();
        assert_eq!(grid.points.len(), 9);
        assert_eq!(grid.dropped, 0);
    }

    #[test]
    fn grid_rejects_untripped_levels() {
        let oracle = cd3_oracle();
        let mut design = GridDesign::default_for(vec![w0()]);
        design.levels = vec![0.05, 0.5];
        let err = build_grid(&oracle, &design).unwrap_err();
        assert!(err.to_string().contains("trimming"), "{err}");
    }

    #[test]
    fn statistic_properties() {
        assert_eq!(test_statistic(&[0.0, 0.0], None).unwrap(), 0.0);
        assert!((test_statistic(&[0.3], None).unwrap() - 0.09).abs() < 1e-15);
        let t1 = test_statistic(&[0.1, 0.4], Some(&[1.0, 3.0])).unwrap();
        let t2 = test_statistic(&[0.1, 0.4], Some(&[2.0, 6.0])).unwrap();
        assert_eq!(t1, t2);
        assert!(test_statistic(&[], None).is_err());
    }

    #[test]
    fn oracle_residual_field_is_flat_for_cd3() {
        let oracle = cd3_oracle();
        let grid = build_grid(&oracle, &GridDesign::default_for(vec![w0()])).unwrap();
        let outcomes = evaluate_residual_field(
            &oracle,
            &grid,
            &[ChannelMode::Frozen, ChannelMode::Observable],
            &FdScheme::default(),
        );
        for outcome in &outcomes {
            assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
            for res in &outcome.residuals {
                match res.channel {
                    ChannelMode::Frozen => assert!(res.residual.abs() < 2e-3),
                    ChannelMode::Observable => {
                        assert!(res.lhs.abs() < 1e-6 && res.rhs.abs() < 1e-6)
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn report_round_trip_and_precision() {
        let meta = ReportMeta {
            seed: 42,
            config_hash: "abc".into(),
            runtime_s: 1.25,
        };
        let grid = build_grid(&cd3_oracle(), &GridDesign::default_for(vec![w0()])).unwrap();
        let outcomes = evaluate_residual_field(
            &cd3_oracle(),
            &grid,
            &[ChannelMode::Frozen],
            &FdScheme::default(),
        );
        let p_value = 0.123_456_789_012_345_67;
        let report = TestReport::from_outcomes(
            meta,
            serde_json::json!({"b": 99}),
            &outcomes,
            4.2e-7,
            vec![1e-7, 2e-7],
            p_value,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&report, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(report, back);
        assert_eq!(back.p_value, p_value);

        write_residual_csv(&report, &dir.path().join("residuals.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
        assert!(text.starts_with("point_id,level_i,level_j,residual,channel"));
    }

    #[test]
    fn malformed_report_names_the_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{\"meta\": {\"seed\": 1}}").unwrap();
        let err = read_report(&path).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("line"), "{message}");
        assert!(message.contains("config_hash") || message.contains("missing"), "{message}");
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"n": 1000, "seed": 7}));
        let b = config_hash(&serde_json::json!({"n": 1000, "seed": 7}));
        let c = config_hash(&serde_json::json!({"n": 1001, "seed": 7}));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
