//! Product-kernel estimation of the quantile objects from a simulated
//! cross section: the data-only implementation of the provider contract.
//!
//! Weights come from a compact product kernel over the conditioning
//! coordinates (prices, income, observables, control residual, and the
//! conditioning demand value when present); the outcome direction uses the
//! integrated kernel for CDFs and the kernel itself for densities. Raw CDF
//! curves pass through monotone rearrangement before inversion. Derivatives
//! re-evaluate the same object at perturbed coordinates with the data and
//! bandwidths frozen.

use serde::{Deserialize, Serialize};

use crate::demand::{ContextPoint, GoodIndex, SimulatedDataset, N_INSIDE};
use crate::engine::{DensityValue, QuantileProvider};
use crate::error::{Error, Result};
use crate::numerics::{fd_partial, linspace, FdScheme};

/// Second-order compact (biweight) kernel, normalized to integrate to one.
pub fn biweight(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        0.9375 * t * t
    }
}

/// Integral of the biweight kernel from -1 to `u`.
pub fn biweight_integral(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 + 0.9375 * (u - 2.0 * u.powi(3) / 3.0 + u.powi(5) / 5.0)
    }
}

/// A conditioning or outcome coordinate of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataCoord {
    Price(GoodIndex),
    Income,
    Observable(usize),
    ControlResidual,
    /// The demand value of a good when it appears in the conditioning set.
    CondDemand(GoodIndex),
}

/// One positive bandwidth per conditioning coordinate plus a per-good
/// outcome bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    pub conditioning: Vec<(DataCoord, f64)>,
    pub outcome: [f64; N_INSIDE],
}

impl BandwidthProfile {
    pub fn get(&self, coord: DataCoord) -> Option<f64> {
        self.conditioning
            .iter()
            .find(|(c, _)| *c == coord)
            .map(|(_, h)| *h)
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn column<'a>(dataset: &'a SimulatedDataset, coord: DataCoord) -> Result<&'a [f64]> {
    match coord {
        DataCoord::Price(g) => Ok(&dataset.p[g.idx()]),
        DataCoord::Income => Ok(&dataset.x),
        DataCoord::Observable(k) => dataset
            .q
            .get(k)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::Argument(format!("dataset has no observable column q{k}"))),
        DataCoord::ControlResidual => dataset
            .v_hat
            .as_deref()
            .ok_or_else(|| Error::State("dataset carries no control residuals".into())),
        DataCoord::CondDemand(g) => Ok(&dataset.y[g.idx()]),
    }
}

/// Rule-of-thumb bandwidths: `1.06 * std * n^(-1/(4+d))` per conditioning
/// coordinate, where `d` counts the coordinates active in one estimate —
/// conditioning demand values are alternatives, so they count once no
/// matter how many goods are listed. The outcome direction uses the same
/// rule with `d + 1`.
pub fn select_bandwidths(
    dataset: &SimulatedDataset,
    conditioned: &[DataCoord],
) -> Result<BandwidthProfile> {
    if dataset.n() == 0 {
        return Err(Error::Argument("empty dataset".into()));
    }
    if conditioned.is_empty() {
        return Err(Error::Argument("no conditioning coordinates".into()));
    }
    let n = dataset.n() as f64;
    let n_demand = conditioned
        .iter()
        .filter(|c| matches!(c, DataCoord::CondDemand(_)))
        .count();
    let d = conditioned.len() - n_demand.saturating_sub(1);
    let exponent = -1.0 / (4.0 + d as f64);

    let mut conditioning = Vec::with_capacity(conditioned.len());
    for &coord in conditioned {
        let col = column(dataset, coord)?;
        let sd = population_std(col);
        if sd <= 0.0 {
            return Err(Error::DegenerateCoordinate(format!(
                "{coord:?} has zero variance"
            )));
        }
        conditioning.push((coord, 1.06 * sd * n.powf(exponent)));
    }

    let out_exponent = -1.0 / (4.0 + (d + 1) as f64);
    let mut outcome = [0.0; N_INSIDE];
    for g in 0..N_INSIDE {
        let sd = population_std(&dataset.y[g]);
        if sd <= 0.0 {
            return Err(Error::DegenerateCoordinate(format!(
                "outcome y{} has zero variance",
                g + 1
            )));
        }
        outcome[g] = 1.06 * sd * n.powf(out_exponent);
    }
    Ok(BandwidthProfile {
        conditioning,
        outcome,
    })
}

/// A CDF estimate on a strictly increasing outcome grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOnGrid {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl CurveOnGrid {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Argument(format!(
                "grid length {} != value length {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument(
                "curve grid must be strictly increasing with at least two points".into(),
            ));
        }
        Ok(CurveOnGrid { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_width(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() - 1) as f64
    }

    /// Linear interpolation of the curve at `y`, clamped at the ends.
    pub fn interpolate(&self, y: f64) -> f64 {
        if y <= self.grid[0] {
            return self.values[0];
        }
        let last = self.grid.len() - 1;
        if y >= self.grid[last] {
            return self.values[last];
        }
        let hi = self.grid.partition_point(|&g| g < y);
        let lo = hi - 1;
        let t = (y - self.grid[lo]) / (self.grid[hi] - self.grid[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }
}

/// Sorts the curve values ascending and clips them to [0, 1]: the
/// rearranged curve is a valid CDF on the same grid whenever the raw values
/// are a permutation-close estimate of one.
pub fn monotone_rearrange(curve: &CurveOnGrid) -> CurveOnGrid {
    let mut values = curve.values.clone();
    values.sort_by(f64::total_cmp);
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    CurveOnGrid {
        grid: curve.grid.clone(),
        values,
    }
}

/// Inverts a monotone curve at `level` by linear interpolation, resolving
/// flats to their leftmost point.
pub fn invert_cdf(curve: &CurveOnGrid, level: f64) -> Result<f64> {
    let values = &curve.values;
    let last = values.len() - 1;
    if level < values[0] || level > values[last] {
        return Err(Error::Extrapolation {
            level,
            lo: values[0],
            hi: values[last],
        });
    }
    // Leftmost index with value >= level.
    let idx = values.partition_point(|&v| v < level);
    if idx == 0 {
        return Ok(curve.grid[0]);
    }
    if values[idx] == level {
        // Leftmost exact attainment.
        let mut first = idx;
        while first > 0 && values[first - 1] == level {
            first -= 1;
        }
        return Ok(curve.grid[first]);
    }
    let lo = idx - 1;
    let span = values[idx] - values[lo];
    let t = if span > 0.0 {
        (level - values[lo]) / span
    } else {
        0.0
    };
    Ok(curve.grid[lo] + t * (curve.grid[idx] - curve.grid[lo]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSettings {
    /// Points in each outcome grid.
    pub grid_points: usize,
    /// Fraction of the sample range added beyond each end of the grid.
    pub grid_expand: f64,
    /// Minimum effective observations: sum of kernel weights over the
    /// largest observed weight.
    pub min_effective: f64,
    /// Density floor substituted (and flagged) in ratio denominators.
    pub density_floor: f64,
    /// Multiplier on the rule-of-thumb conditioning bandwidths. Derivative
    /// targets need more smoothing than density-optimal bandwidths provide.
    pub bandwidth_scale_w: f64,
    /// Multiplier on the outcome-direction bandwidths.
    pub bandwidth_scale_y: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            grid_points: 401,
            grid_expand: 0.05,
            min_effective: 50.0,
            density_floor: 1e-3,
            bandwidth_scale_w: 1.0,
            bandwidth_scale_y: 1.0,
        }
    }
}

struct WeightSet {
    rows: Vec<u32>,
    weights: Vec<f64>,
    sum: f64,
}

/// Weighted observations of one outcome good, sorted by outcome value with
/// weight prefix sums: CDF and density evaluations then touch only the rows
/// inside one kernel bandwidth of the evaluation point.
struct OutcomeView {
    y: Vec<f64>,
    w: Vec<f64>,
    /// prefix[k] = sum of w[..k].
    prefix: Vec<f64>,
    total: f64,
    bandwidth: f64,
}

impl OutcomeView {
    fn build(ws: &WeightSet, outcomes: &[f64], bandwidth: f64) -> OutcomeView {
        let mut order: Vec<u32> = (0..ws.rows.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            outcomes[ws.rows[a as usize] as usize].total_cmp(&outcomes[ws.rows[b as usize] as usize])
        });
        let mut y = Vec::with_capacity(order.len());
        let mut w = Vec::with_capacity(order.len());
        let mut prefix = Vec::with_capacity(order.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &k in &order {
            y.push(outcomes[ws.rows[k as usize] as usize]);
            let weight = ws.weights[k as usize];
            w.push(weight);
            acc += weight;
            prefix.push(acc);
        }
        OutcomeView {
            y,
            w,
            prefix,
            total: ws.sum,
            bandwidth,
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        // Rows with outcome <= y - h contribute their full weight.
        let full = self.y.partition_point(|&t| t <= y - h);
        let hi = self.y.partition_point(|&t| t < y + h);
        let mut acc = self.prefix[full];
        for k in full..hi {
            acc += self.w[k] * biweight_integral((y - self.y[k]) / h);
        }
        acc / self.total
    }

    fn density(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.y.partition_point(|&t| t <= y - h);
        let hi = self.y.partition_point(|&t| t < y + h);
        let mut acc = 0.0;
        for k in lo..hi {
            acc += self.w[k] * biweight((y - self.y[k]) / h);
        }
        acc / (self.total * h)
    }
}

/// Kernel-smoothing provider over one dataset.
pub struct KernelProvider {
    /// Conditioning columns in a fixed order, paired with bandwidths.
    cond_columns: Vec<(DataCoord, Vec<f64>, f64)>,
    y: Vec<Vec<f64>>,
    outcome_bandwidths: [f64; N_INSIDE],
    grids: Vec<Vec<f64>>,
    settings: EstimatorSettings,
    profile: BandwidthProfile,
}

impl KernelProvider {
    /// Fits the provider: selects rule-of-thumb bandwidths over the
    /// dataset's conditioning coordinates (prices, income, observables, and
    /// the control residual when present; demand values enter when used) and
    /// freezes the outcome grids.
    pub fn fit(dataset: &SimulatedDataset, settings: EstimatorSettings) -> Result<Self> {
        let mut conditioned: Vec<DataCoord> = Vec::new();
        for g in 1..=N_INSIDE {
            conditioned.push(DataCoord::Price(GoodIndex::new(g)?));
        }
        conditioned.push(DataCoord::Income);
        for k in 0..dataset.k_q() {
            conditioned.push(DataCoord::Observable(k));
        }
        if dataset.v_hat.is_some() {
            conditioned.push(DataCoord::ControlResidual);
        }
        for g in 1..=N_INSIDE {
            conditioned.push(DataCoord::CondDemand(GoodIndex::new(g)?));
        }
        let profile = select_bandwidths(dataset, &conditioned)?;
        Self::with_profile(dataset, profile, settings)
    }

    /// Fits with an explicit bandwidth profile (bootstrap replicates reuse
    /// the full-sample profile).
    pub fn with_profile(
        dataset: &SimulatedDataset,
        profile: BandwidthProfile,
        settings: EstimatorSettings,
    ) -> Result<Self> {
        let mut cond_columns = Vec::new();
        for (coord, h) in &profile.conditioning {
            let scale = settings.bandwidth_scale_w;
            cond_columns.push((*coord, column(dataset, *coord)?.to_vec(), h * scale));
        }
        let mut outcome_bandwidths = profile.outcome;
        for h in &mut outcome_bandwidths {
            *h *= settings.bandwidth_scale_y;
        }
        let mut grids = Vec::with_capacity(N_INSIDE);
        for g in 0..N_INSIDE {
            let col = &dataset.y[g];
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = settings.grid_expand * (hi - lo).max(1e-9);
            grids.push(linspace(lo - pad, hi + pad, settings.grid_points));
        }
        Ok(KernelProvider {
            cond_columns,
            y: dataset.y.clone(),
            outcome_bandwidths,
            grids,
            settings,
            profile,
        })
    }

    /// Rebuilds the provider on a row resample, keeping bandwidths, grids,
    /// and settings frozen.
    pub fn refit_rows(&self, rows: &[u32]) -> Result<KernelProvider> {
        let resample = |col: &[f64]| -> Vec<f64> {
            rows.iter().map(|&r| col[r as usize]).collect()
        };
        Ok(KernelProvider {
            cond_columns: self
                .cond_columns
                .iter()
                .map(|(c, col, h)| (*c, resample(col), *h))
                .collect(),
            y: self.y.iter().map(|col| resample(col)).collect(),
            outcome_bandwidths: self.outcome_bandwidths,
            grids: self.grids.clone(),
            settings: self.settings.clone(),
            profile: self.profile.clone(),
        })
    }

    pub fn profile(&self) -> &BandwidthProfile {
        &self.profile
    }

    pub fn settings(&self) -> &EstimatorSettings {
        &self.settings
    }

    pub fn n(&self) -> usize {
        self.y[0].len()
    }

    pub fn grid(&self, good: GoodIndex) -> &[f64] {
        &self.grids[good.idx()]
    }

    fn coord_value(&self, coord: DataCoord, w: &ContextPoint, cond: Option<(GoodIndex, f64)>) -> Result<Option<f64>> {
        Ok(match coord {
            DataCoord::Price(g) => Some(w.p[g.idx()]),
            DataCoord::Income => Some(w.x),
            DataCoord::Observable(k) => Some(*w.q.get(k).ok_or_else(|| {
                Error::Argument(format!("context carries no observable q{}", k + 1))
            })?),
            DataCoord::ControlResidual => Some(w.v.ok_or_else(|| {
                Error::Argument("data conditions on v but the context carries none".into())
            })?),
            DataCoord::CondDemand(g) => cond.and_then(|(j, y_j)| (j == g).then_some(y_j)),
        })
    }

    fn weights(&self, w: &ContextPoint, cond: Option<(GoodIndex, f64)>) -> Result<WeightSet> {
        let n = self.n();
        // Active kernel centers for this evaluation.
        let mut active: Vec<(&[f64], f64, f64)> = Vec::with_capacity(self.cond_columns.len());
        for (coord, col, h) in &self.cond_columns {
            if let Some(center) = self.coord_value(*coord, w, cond)? {
                active.push((col.as_slice(), center, *h));
            }
        }
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut sum = 0.0;
        let mut max_w = 0.0f64;
        'rows: for r in 0..n {
            let mut weight = 1.0;
            for (col, center, h) in &active {
                let u = (center - col[r]) / h;
                if u.abs() >= 1.0 {
                    continue 'rows;
                }
                weight *= biweight(u);
            }
            rows.push(r as u32);
            weights.push(weight);
            sum += weight;
            max_w = max_w.max(weight);
        }
        let effective = if max_w > 0.0 { sum / max_w } else { 0.0 };
        if effective < self.settings.min_effective.min(n as f64) {
            return Err(Error::SparseRegion {
                point: format!(
                    "w = ({:?}, x = {}){}",
                    w.p,
                    w.x,
                    cond.map(|(j, yj)| format!(", y{j} = {yj}")).unwrap_or_default()
                ),
                effective,
                required: self.settings.min_effective,
            });
        }
        Ok(WeightSet { rows, weights, sum })
    }

    fn outcome_view(&self, ws: &WeightSet, good: GoodIndex) -> OutcomeView {
        OutcomeView::build(
            ws,
            &self.y[good.idx()],
            self.outcome_bandwidths[good.idx()],
        )
    }

    fn point_cdf(&self, ws: &WeightSet, good: GoodIndex, y: f64) -> f64 {
        self.outcome_view(ws, good).cdf(y)
    }

    fn point_density(&self, ws: &WeightSet, good: GoodIndex, y: f64) -> f64 {
        self.outcome_view(ws, good).density(y)
    }

    fn cdf_curve(&self, ws: &WeightSet, good: GoodIndex) -> CurveOnGrid {
        let grid = &self.grids[good.idx()];
        let view = self.outcome_view(ws, good);
        let values = grid.iter().map(|&y| view.cdf(y)).collect();
        CurveOnGrid {
            grid: grid.clone(),
            values,
        }
    }

    /// Raw (pre-rearrangement) conditional CDF curve over the outcome grid.
    pub fn estimate_conditional_cdf(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        cond: Option<(GoodIndex, f64)>,
    ) -> Result<CurveOnGrid> {
        let ws = self.weights(w, cond)?;
        Ok(self.cdf_curve(&ws, i))
    }

    /// Conditional density estimate at one outcome value, floored and
    /// flagged when below the floor.
    pub fn estimate_conditional_density(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        cond: Option<(GoodIndex, f64)>,
        y: f64,
    ) -> Result<DensityValue> {
        let ws = self.weights(w, cond)?;
        let raw = self.point_density(&ws, i, y);
        if raw < self.settings.density_floor {
            Ok(DensityValue {
                value: self.settings.density_floor,
                floored: true,
            })
        } else {
            Ok(DensityValue {
                value: raw,
                floored: false,
            })
        }
    }

    /// Quantile by bisection of the smoothed CDF. The weighted
    /// integrated-kernel CDF is monotone in the outcome by construction, so
    /// this agrees with rearrange-then-invert up to grid resolution while
    /// avoiding the full curve.
    fn quantile_point(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        cond: Option<(GoodIndex, f64)>,
        level: f64,
    ) -> Result<f64> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::Argument(format!("level {level} outside (0, 1]")));
        }
        let ws = self.weights(w, cond)?;
        let view = self.outcome_view(&ws, i);
        let grid = &self.grids[i.idx()];
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        let f_lo = view.cdf(lo);
        let f_hi = view.cdf(hi);
        if level < f_lo || level > f_hi {
            return Err(Error::Extrapolation {
                level,
                lo: f_lo,
                hi: f_hi,
            });
        }
        crate::numerics::bisect_leftmost(|y| Ok(view.cdf(y)), lo, hi, level, 1e-9)
    }
}

/// Which estimated object a derivative targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EstimateTarget {
    MarginalCdf { i: GoodIndex, y: f64 },
    MarginalQuantile { i: GoodIndex, alpha: f64 },
    ConditionalCdf { i: GoodIndex, j: GoodIndex, y_j: f64, y: f64 },
    ConditionalQuantile { i: GoodIndex, j: GoodIndex, y_j: f64, gamma: f64 },
    ConditionalDensity { i: GoodIndex, j: GoodIndex, y_j: f64, y: f64 },
}

/// Coordinate along which [`estimate_partial`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartialCoord {
    W(crate::demand::WCoord),
    ConditioningValue,
}

fn evaluate_target(
    provider: &KernelProvider,
    target: EstimateTarget,
    w: &ContextPoint,
    cond_value_override: Option<f64>,
) -> Result<f64> {
    let with_override = |j: GoodIndex, y_j: f64| -> (GoodIndex, f64) {
        (j, cond_value_override.unwrap_or(y_j))
    };
    match target {
        EstimateTarget::MarginalCdf { i, y } => {
            let ws = provider.weights(w, None)?;
            Ok(provider.point_cdf(&ws, i, y))
        }
        EstimateTarget::MarginalQuantile { i, alpha } => {
            provider.quantile_point(w, i, None, alpha)
        }
        EstimateTarget::ConditionalCdf { i, j, y_j, y } => {
            let ws = provider.weights(w, Some(with_override(j, y_j)))?;
            Ok(provider.point_cdf(&ws, i, y))
        }
        EstimateTarget::ConditionalQuantile { i, j, y_j, gamma } => {
            provider.quantile_point(w, i, Some(with_override(j, y_j)), gamma)
        }
        EstimateTarget::ConditionalDensity { i, j, y_j, y } => Ok(provider
            .estimate_conditional_density(w, i, Some(with_override(j, y_j)), y)?
            .value),
    }
}

/// Central finite difference of an estimated object, re-evaluated at
/// perturbed coordinates with identical data and bandwidths.
pub fn estimate_partial(
    provider: &KernelProvider,
    target: EstimateTarget,
    w: &ContextPoint,
    coord: PartialCoord,
    scheme: &FdScheme,
) -> Result<f64> {
    match coord {
        PartialCoord::W(wc) => fd_partial(
            |t| {
                let shifted = w.perturbed(wc, t - w.coord(wc));
                evaluate_target(provider, target, &shifted, None)
            },
            w.coord(wc),
            scheme,
        ),
        PartialCoord::ConditioningValue => {
            let y_j0 = match target {
                EstimateTarget::ConditionalCdf { y_j, .. }
                | EstimateTarget::ConditionalQuantile { y_j, .. }
                | EstimateTarget::ConditionalDensity { y_j, .. } => y_j,
                _ => {
                    return Err(Error::Argument(
                        "conditioning-value derivative needs a conditional target".into(),
                    ))
                }
            };
            fd_partial(
                |t| evaluate_target(provider, target, w, Some(t)),
                y_j0,
                scheme,
            )
        }
    }
}

impl QuantileProvider for KernelProvider {
    fn marginal_cdf(&self, w: &ContextPoint, i: GoodIndex, y: f64) -> Result<f64> {
        let ws = self.weights(w, None)?;
        Ok(self.point_cdf(&ws, i, y))
    }

    fn marginal_quantile(&self, w: &ContextPoint, i: GoodIndex, alpha: f64) -> Result<f64> {
        self.quantile_point(w, i, None, alpha)
    }

    fn conditional_cdf(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<f64> {
        let ws = self.weights(w, Some((j, y_j)))?;
        Ok(self.point_cdf(&ws, i, y_i))
    }

    fn conditional_density(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<DensityValue> {
        self.estimate_conditional_density(w, i, Some((j, y_j)), y_i)
    }

    fn conditional_quantile(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        gamma: f64,
    ) -> Result<f64> {
        self.quantile_point(w, i, Some((j, y_j)), gamma)
    }

    fn round_trip_tolerance(&self) -> f64 {
        0.02
    }

    fn label(&self) -> &'static str {
        "estimator"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{simulate_cross_section, DesignSpec, HetLaw, ShareDemandSystem};

    const I1: GoodIndex = GoodIndex::FIRST;
    const I2: GoodIndex = GoodIndex::SECOND;

    fn small_dataset(n: usize, seed: u64) -> SimulatedDataset {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        simulate_cross_section(&sys, &DesignSpec::centered_default(), n, seed, false).unwrap()
    }

    fn w0() -> ContextPoint {
        ContextPoint::new(vec![1.0, 2.0], 10.0).unwrap()
    }

    #[test]
    fn bandwidth_rule_of_thumb_value() {
        // Standard-normal coordinate, n = 1e4, d = 1: 1.06 * n^(-1/5).
        let mut ds = small_dataset(10_000, 1);
        let normals: Vec<f64> = (0..10_000)
            .map(|k| {
                let mut rng = crate::rng::substream(99, 7, k as u64);
                crate::rng::norm_quantile(crate::rng::open_uniform(&mut rng))
            })
            .collect();
        ds.x = normals;
        let profile = select_bandwidths(&ds, &[DataCoord::Income]).unwrap();
        let h = profile.get(DataCoord::Income).unwrap();
        assert!((h - 0.168).abs() < 0.01, "got {h}");
    }

    #[test]
    fn bandwidth_scaling_in_n() {
        let ds1 = small_dataset(2_000, 1);
        let mut ds2 = ds1.clone();
        // Duplicate rows: same population std, doubled n.
        for col in ds2.y.iter_mut().chain(ds2.p.iter_mut()) {
            let copy = col.clone();
            col.extend(copy);
        }
        let copy = ds2.x.clone();
        ds2.x.extend(copy);
        let copy = ds2.s.clone();
        ds2.s.extend(copy);
        let copy = ds2.v_true.clone();
        ds2.v_true.extend(copy);
        let conditioned = [DataCoord::Price(I1), DataCoord::Income];
        let h1 = select_bandwidths(&ds1, &conditioned).unwrap();
        let h2 = select_bandwidths(&ds2, &conditioned).unwrap();
        let expected = 2f64.powf(-1.0 / 6.0);
        for (a, b) in h1.conditioning.iter().zip(&h2.conditioning) {
            assert!((b.1 / a.1 - expected).abs() < 1e-12, "{} vs {}", a.1, b.1);
        }
    }

    #[test]
    fn bandwidth_rejects_constant_coordinate() {
        let mut ds = small_dataset(500, 2);
        ds.x = vec![10.0; 500];
        let err = select_bandwidths(&ds, &[DataCoord::Income]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCoordinate(_)), "{err}");
    }

    #[test]
    fn rearrangement_sorts_and_clips() {
        let curve = CurveOnGrid::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.2, 0.5, 0.4, 0.9],
        )
        .unwrap();
        let fixed = monotone_rearrange(&curve);
        assert_eq!(fixed.values(), &[0.2, 0.4, 0.5, 0.9]);
        // Idempotent on monotone input.
        let again = monotone_rearrange(&fixed);
        assert_eq!(again.values(), fixed.values());
        let wild = CurveOnGrid::new(vec![0.0, 1.0], vec![-0.1, 1.2]).unwrap();
        assert_eq!(monotone_rearrange(&wild).values(), &[0.0, 1.0]);
    }

    #[test]
    fn invert_identity_and_flats() {
        let grid = linspace(0.0, 1.0, 101);
        let identity = CurveOnGrid::new(grid.clone(), grid.clone()).unwrap();
        let y = invert_cdf(&identity, 0.3).unwrap();
        assert!((y - 0.3).abs() < 1e-12);

        // Flat at 0.5 between 2 and 3: leftmost rule.
        let flat = CurveOnGrid::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.2, 0.5, 0.5, 0.9],
        )
        .unwrap();
        assert_eq!(invert_cdf(&flat, 0.5).unwrap(), 2.0);
        assert!(matches!(
            invert_cdf(&flat, 0.95),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn single_row_curve_is_a_smoothed_step() {
        let mut ds = small_dataset(600, 3);
        ds.y[0] = vec![5.0; 600];
        // Single informative row: keep one, the rest far away in price.
        let provider_settings = EstimatorSettings {
            min_effective: 1.0,
            ..EstimatorSettings::default()
        };
        let mut one_row = small_dataset(1, 7);
        one_row.y[0] = vec![5.0];
        // Grid needs a spread; widen artificially around the single value.
        one_row.y[1] = vec![1.5];
        let provider = KernelProvider::with_profile(
            &one_row,
            BandwidthProfile {
                conditioning: vec![
                    (DataCoord::Price(I1), 0.5),
                    (DataCoord::Price(I2), 0.5),
                    (DataCoord::Income, 2.0),
                ],
                outcome: [0.5, 0.5],
            },
            provider_settings,
        )
        .unwrap();
        let w = ContextPoint::new(one_row.p.iter().map(|c| c[0]).collect(), one_row.x[0]).unwrap();
        let cdf_low = provider.marginal_cdf(&w, I1, 3.0).unwrap();
        let cdf_high = provider.marginal_cdf(&w, I1, 7.0).unwrap();
        assert_eq!(cdf_low, 0.0);
        assert_eq!(cdf_high, 1.0);
    }

    #[test]
    fn weights_sum_to_one_after_normalization() {
        let ds = small_dataset(5_000, 4);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 2.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let ws = provider.weights(&w0(), None).unwrap();
        let normalized: f64 = ws.weights.iter().map(|w| w / ws.sum).sum();
        assert!((normalized - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimated_cdf_tracks_population() {
        let ds = small_dataset(100_000, 5);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 4.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let value = provider.marginal_cdf(&w0(), I1, 3.0).unwrap();
        assert!((value - 0.5).abs() < 0.02, "got {value}");
    }

    #[test]
    fn estimated_density_tracks_population() {
        let ds = small_dataset(100_000, 6);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 4.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let f = provider
            .estimate_conditional_density(&w0(), I1, None, 3.0)
            .unwrap();
        assert!(!f.floored);
        assert!((f.value - 0.5).abs() < 0.05, "got {}", f.value);
    }

    #[test]
    fn density_nonnegative_and_integrates() {
        let ds = small_dataset(20_000, 7);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 2.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let ws = provider.weights(&w0(), None).unwrap();
        let grid = provider.grid(I1).to_vec();
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for &y in &grid {
            let f = provider.point_density(&ws, I1, y);
            assert!(f >= 0.0);
            if let Some((py, pf)) = prev {
                integral += 0.5 * (pf + f) * (y - py);
            }
            prev = Some((y, f));
        }
        assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
    }

    #[test]
    fn sparse_region_is_reported() {
        let ds = small_dataset(500, 8);
        let provider = KernelProvider::fit(&ds, EstimatorSettings::default()).unwrap();
        let far = ContextPoint::new(vec![1.0, 2.0], 13.7).unwrap();
        let err = provider.marginal_cdf(&far, I1, 3.0).unwrap_err();
        assert!(matches!(err, Error::SparseRegion { .. }), "{err}");
    }

    #[test]
    fn quantile_round_trip_within_grid_cell() {
        let ds = small_dataset(50_000, 9);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 4.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let curve =
            monotone_rearrange(&provider.estimate_conditional_cdf(&w0(), I1, None).unwrap());
        for &level in &[0.25, 0.5, 0.75] {
            let y = invert_cdf(&curve, level).unwrap();
            let back = curve.interpolate(y);
            assert!((back - level).abs() < 0.01, "level {level}: back {back}");
            let y2 = invert_cdf(&curve, back).unwrap();
            assert!((y - y2).abs() <= curve.cell_width(), "{y} vs {y2}");
        }
    }

    #[test]
    fn estimate_partial_is_linear_in_the_target() {
        // FD of a scaled CDF equals the scaled FD: same weights, same path.
        let ds = small_dataset(20_000, 10);
        let provider = KernelProvider::fit(
            &ds,
            EstimatorSettings {
                bandwidth_scale_w: 2.0,
                ..EstimatorSettings::default()
            },
        )
        .unwrap();
        let scheme = FdScheme::default();
        let target = EstimateTarget::MarginalCdf { i: I1, y: 3.0 };
        let base = estimate_partial(
            &provider,
            target,
            &w0(),
            PartialCoord::W(crate::demand::WCoord::Price(I1)),
            &scheme,
        )
        .unwrap();
        let h = scheme.step_at(1.0);
        let scaled = |t: f64, a: f64| -> f64 {
            let shifted = w0().perturbed(crate::demand::WCoord::Price(I1), t - 1.0);
            a * evaluate_target(&provider, target, &shifted, None).unwrap()
        };
        let a = 3.75;
        let coarse = (scaled(1.0 + h, a) - scaled(1.0 - h, a)) / (2.0 * h);
        let fine = (scaled(1.0 + h / 2.0, a) - scaled(1.0 - h / 2.0, a)) / h;
        let fd_scaled = (4.0 * fine - coarse) / 3.0;
        assert!(
            (fd_scaled - a * base).abs() <= 1e-12 * fd_scaled.abs().max(1.0),
            "{fd_scaled} vs {}",
            a * base
        );
    }

    #[test]
    fn refit_rows_preserves_bandwidths() {
        let ds = small_dataset(2_000, 11);
        let provider = KernelProvider::fit(&ds, EstimatorSettings::default()).unwrap();
        let rows: Vec<u32> = (0..2_000).rev().collect();
        let refit = provider.refit_rows(&rows).unwrap();
        assert_eq!(provider.profile(), refit.profile());
        assert_eq!(provider.grid(I1), refit.grid(I1));
    }
}
