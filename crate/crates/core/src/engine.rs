//! Assembly of the quantile-based symmetry condition.
//!
//! The identification formula expresses the conditional expectation of a
//! structural demand derivative, given the demand pair, through observable
//! quantile objects plus correction terms. Its CDF derivatives admit three
//! readings, kept side by side as channels:
//!
//! * `Observable` — full derivatives of the provider's conditional CDF. The
//!   quantile/CDF inverse identities then force the whole assembly to
//!   collapse to zero: an algebraic identity, measured here, not assumed.
//! * `Frozen` — derivatives of the two-context CDF in the conditioning
//!   context only, holding the structural context fixed. This isolates how
//!   the composition of heterogeneity types on the conditioning level set
//!   shifts, and reproduces the structural conditional expectation on
//!   invertible systems.
//! * `StableComposition` — the frozen conditioning-channel derivatives are
//!   assumed away (set to zero). Exact when the heterogeneity driving the
//!   two demands is independent; a measurable approximation otherwise. This
//!   is the only nontrivial channel available to a data-only provider.

use serde::{Deserialize, Serialize};

use crate::demand::{ContextPoint, GoodIndex, WCoord};
use crate::error::{Error, Result};
use crate::numerics::{fd_partial, FdScheme};
use crate::oracle::{PopulationOracle, TwoContextCdfQuery};

/// Which dependence paths a CDF derivative traverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Observable,
    Frozen,
    StableComposition,
}

impl ChannelMode {
    pub fn all() -> [ChannelMode; 3] {
        [
            ChannelMode::Observable,
            ChannelMode::Frozen,
            ChannelMode::StableComposition,
        ]
    }
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelMode::Observable => write!(f, "observable"),
            ChannelMode::Frozen => write!(f, "frozen"),
            ChannelMode::StableComposition => write!(f, "stable_composition"),
        }
    }
}

/// A conditional density value, flagged when a floor was substituted.
#[derive(Debug, Clone, Copy)]
pub struct DensityValue {
    pub value: f64,
    pub floored: bool,
}

/// The contract every quantile backend satisfies: population oracle or
/// kernel estimator. Derivatives are produced by finite-difference
/// re-evaluation of these objects, so the contract stays evaluation-only.
pub trait QuantileProvider: Sync {
    fn marginal_cdf(&self, w: &ContextPoint, i: GoodIndex, y: f64) -> Result<f64>;
    fn marginal_quantile(&self, w: &ContextPoint, i: GoodIndex, alpha: f64) -> Result<f64>;
    fn conditional_cdf(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<f64>;
    fn conditional_density(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<DensityValue>;
    fn conditional_quantile(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        gamma: f64,
    ) -> Result<f64>;

    /// Two-context CDF access, required by the frozen channel. Only
    /// providers with structural access can implement it.
    fn two_context_cdf(&self, query: &TwoContextCdfQuery) -> Result<f64> {
        let _ = query;
        Err(Error::Unsupported(format!(
            "{} provider has no two-context CDF access (frozen channel needs the structural \
             function)",
            self.label()
        )))
    }

    fn supports_frozen(&self) -> bool {
        false
    }

    /// Tolerance for quantile/CDF round-trip verification, in outcome units.
    fn round_trip_tolerance(&self) -> f64;

    fn label(&self) -> &'static str;
}

impl QuantileProvider for PopulationOracle {
    fn marginal_cdf(&self, w: &ContextPoint, i: GoodIndex, y: f64) -> Result<f64> {
        PopulationOracle::marginal_cdf(self, w, i, y)
    }

    fn marginal_quantile(&self, w: &ContextPoint, i: GoodIndex, alpha: f64) -> Result<f64> {
        PopulationOracle::marginal_quantile(self, w, i, alpha)
    }

    fn conditional_cdf(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<f64> {
        PopulationOracle::conditional_cdf(self, w, i, j, y_j, y_i)
    }

    fn conditional_density(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<DensityValue> {
        PopulationOracle::conditional_density(self, w, i, j, y_j, y_i).map(|value| DensityValue {
            value,
            floored: false,
        })
    }

    fn conditional_quantile(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        gamma: f64,
    ) -> Result<f64> {
        PopulationOracle::conditional_quantile(self, w, i, j, y_j, gamma)
    }

    fn two_context_cdf(&self, query: &TwoContextCdfQuery) -> Result<f64> {
        PopulationOracle::two_context_cdf(self, query).map(|v| v.value)
    }

    fn supports_frozen(&self) -> bool {
        true
    }

    fn round_trip_tolerance(&self) -> f64 {
        1e-6
    }

    fn label(&self) -> &'static str {
        "oracle"
    }
}

/// Quantile levels pinning an evaluation point (y_i*, y_j*) at w*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileIndices {
    pub alpha_i: f64,
    pub alpha_j: f64,
    pub gamma_i_given_j: f64,
    pub gamma_j_given_i: f64,
}

/// An evaluation point for the symmetry condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub w: ContextPoint,
    pub i: GoodIndex,
    pub j: GoodIndex,
    pub y_i: f64,
    pub y_j: f64,
}

impl EvalPoint {
    pub fn validate(&self) -> Result<()> {
        if self.i == self.j {
            return Err(Error::Argument(
                "evaluation point needs distinct goods".into(),
            ));
        }
        Ok(())
    }
}

/// Computes the four quantile indices at a point and verifies that provider
/// quantiles at those indices reproduce the point.
pub fn quantile_indices<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
) -> Result<QuantileIndices> {
    point.validate()?;
    let EvalPoint { w, i, j, y_i, y_j } = point.clone();
    let alpha_i = provider.marginal_cdf(&w, i, y_i)?;
    let alpha_j = provider.marginal_cdf(&w, j, y_j)?;
    let gamma_i_given_j = provider.conditional_cdf(&w, i, j, y_j, y_i)?;
    let gamma_j_given_i = provider.conditional_cdf(&w, j, i, y_i, y_j)?;

    let indices = QuantileIndices {
        alpha_i,
        alpha_j,
        gamma_i_given_j,
        gamma_j_given_i,
    };
    for (name, level) in [
        ("alpha_i", alpha_i),
        ("alpha_j", alpha_j),
        ("gamma_i_given_j", gamma_i_given_j),
        ("gamma_j_given_i", gamma_j_given_i),
    ] {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::ProviderInconsistency(format!(
                "{name} = {level} outside (0, 1] at ({y_i}, {y_j})"
            )));
        }
    }

    let tol = provider.round_trip_tolerance();
    let checks = [
        ("k(alpha_i, i)", provider.marginal_quantile(&w, i, alpha_i)?, y_i),
        ("k(alpha_j, j)", provider.marginal_quantile(&w, j, alpha_j)?, y_j),
        (
            "k(gamma_i|j, i)",
            provider.conditional_quantile(&w, i, j, y_j, gamma_i_given_j)?,
            y_i,
        ),
        (
            "k(gamma_j|i, j)",
            provider.conditional_quantile(&w, j, i, y_i, gamma_j_given_i)?,
            y_j,
        ),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > tol * want.abs().max(1.0) {
            return Err(Error::ProviderInconsistency(format!(
                "{name} = {got} fails to reproduce {want} within {tol}"
            )));
        }
    }
    Ok(indices)
}

/// Derivative of the conditional quantile in a w1 coordinate, conditioning
/// value held fixed.
fn d1_conditional_quantile<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    i: GoodIndex,
    j: GoodIndex,
    y_j: f64,
    gamma: f64,
    coord: WCoord,
    scheme: &FdScheme,
) -> Result<f64> {
    fd_partial(
        |t| {
            let shifted = w.perturbed(coord, t - w.coord(coord));
            provider.conditional_quantile(&shifted, i, j, y_j, gamma)
        },
        w.coord(coord),
        scheme,
    )
}

/// Derivative of the conditional quantile in the conditioning value.
fn d2_conditional_quantile<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    i: GoodIndex,
    j: GoodIndex,
    y_j: f64,
    gamma: f64,
    scheme: &FdScheme,
) -> Result<f64> {
    fd_partial(
        |t| provider.conditional_quantile(w, i, j, t, gamma),
        y_j,
        scheme,
    )
}

fn d_marginal_quantile<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    j: GoodIndex,
    alpha: f64,
    coord: WCoord,
    scheme: &FdScheme,
) -> Result<f64> {
    fd_partial(
        |t| {
            let shifted = w.perturbed(coord, t - w.coord(coord));
            provider.marginal_quantile(&shifted, j, alpha)
        },
        w.coord(coord),
        scheme,
    )
}

/// Channelized derivative of the conditional CDF in a w1 coordinate,
/// evaluation and conditioning values fixed.
fn d_cdf_w<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    i: GoodIndex,
    j: GoodIndex,
    y_j: f64,
    y_i: f64,
    coord: WCoord,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<f64> {
    match channel {
        ChannelMode::StableComposition => Ok(0.0),
        ChannelMode::Observable => fd_partial(
            |t| {
                let shifted = w.perturbed(coord, t - w.coord(coord));
                provider.conditional_cdf(&shifted, i, j, y_j, y_i)
            },
            w.coord(coord),
            scheme,
        ),
        ChannelMode::Frozen => fd_partial(
            |t| {
                let shifted = w.perturbed(coord, t - w.coord(coord));
                provider.two_context_cdf(&TwoContextCdfQuery {
                    w_struct: w.clone(),
                    w_cond: shifted,
                    i,
                    j,
                    y_j,
                    y_i,
                })
            },
            w.coord(coord),
            scheme,
        ),
    }
}

/// Channelized derivative of the conditional CDF in the conditioning value.
/// The conditioning value only enters the conditioning channel, so the
/// frozen and observable readings agree here; the frozen route is still
/// computed through the two-context object for fidelity to its definition.
fn d_cdf_cond_value<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    i: GoodIndex,
    j: GoodIndex,
    y_j: f64,
    y_i: f64,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<f64> {
    match channel {
        ChannelMode::StableComposition => Ok(0.0),
        ChannelMode::Observable => fd_partial(
            |t| provider.conditional_cdf(w, i, j, t, y_i),
            y_j,
            scheme,
        ),
        ChannelMode::Frozen => fd_partial(
            |t| {
                provider.two_context_cdf(&TwoContextCdfQuery {
                    w_struct: w.clone(),
                    w_cond: w.clone(),
                    i,
                    j,
                    y_j: t,
                    y_i,
                })
            },
            y_j,
            scheme,
        ),
    }
}

/// Correction bundle attached to one conditioning direction of the symmetry
/// condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerms {
    /// Response of the conditional quantile to the conditioning level,
    /// including the distributional channel.
    pub c: f64,
    /// Price-direction level-set shift terms, one per inside good.
    pub d_p: Vec<f64>,
    /// Income-direction level-set shift term.
    pub d_x: f64,
    pub channel: ChannelMode,
    /// Conditional density used in every denominator.
    pub density: f64,
    /// Whether the density came from flooring.
    pub density_floored: bool,
}

/// C-term: observable quantile response to the conditioning level plus the
/// channelized distributional response.
pub fn correction_c<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
    gamma: f64,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<f64> {
    let EvalPoint { w, i, j, y_i, y_j } = point.clone();
    let d2k = d2_conditional_quantile(provider, &w, i, j, y_j, gamma, scheme)?;
    let d2f = d_cdf_cond_value(provider, &w, i, j, y_j, y_i, channel, scheme)?;
    if d2f == 0.0 {
        return Ok(d2k);
    }
    let density = provider.conditional_density(&w, i, j, y_j, y_i)?;
    Ok(d2k + d2f / density.value)
}

/// D-terms: channelized CDF derivatives in each price coordinate and in
/// income, divided by the conditional density.
pub fn correction_d<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<(Vec<f64>, f64)> {
    let EvalPoint { w, i, j, y_i, y_j } = point.clone();
    if channel == ChannelMode::StableComposition {
        return Ok((vec![0.0; w.p.len()], 0.0));
    }
    let density = provider.conditional_density(&w, i, j, y_j, y_i)?;
    let mut d_p = Vec::with_capacity(w.p.len());
    for g in 1..=w.p.len() {
        let coord = WCoord::Price(GoodIndex::new(g)?);
        let num = d_cdf_w(provider, &w, i, j, y_j, y_i, coord, channel, scheme)?;
        d_p.push(num / density.value);
    }
    let num_x = d_cdf_w(provider, &w, i, j, y_j, y_i, WCoord::Income, channel, scheme)?;
    Ok((d_p, num_x / density.value))
}

/// Full correction bundle for the (i given j) direction.
pub fn corrections<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
    gamma: f64,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<CorrectionTerms> {
    let density = provider.conditional_density(
        &point.w,
        point.i,
        point.j,
        point.y_j,
        point.y_i,
    )?;
    let c = correction_c(provider, point, gamma, channel, scheme)?;
    let (d_p, d_x) = correction_d(provider, point, channel, scheme)?;
    Ok(CorrectionTerms {
        c,
        d_p,
        d_x,
        channel,
        density: density.value,
        density_floored: density.floored,
    })
}

/// Quantile-side representation of E[d phi_i / d w_s | W, Y_i, Y_j] along
/// one w1 coordinate: the conditional-quantile derivative, the marginal
/// carrier term, and the channelized distributional term.
pub fn structural_partial_from_quantiles<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
    indices: &QuantileIndices,
    coord: WCoord,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<f64> {
    point.validate()?;
    let EvalPoint { w, i, j, y_i, y_j } = point.clone();
    let gamma = indices.gamma_i_given_j;
    let alpha_j = indices.alpha_j;

    let d1k = d1_conditional_quantile(provider, &w, i, j, y_j, gamma, coord, scheme)?;
    let dk_alpha = d_marginal_quantile(provider, &w, j, alpha_j, coord, scheme)?;
    let c = correction_c(provider, point, gamma, channel, scheme)?;
    let df_w = d_cdf_w(provider, &w, i, j, y_j, y_i, coord, channel, scheme)?;
    let distributional = if df_w == 0.0 {
        0.0
    } else {
        let density = provider.conditional_density(&w, i, j, y_j, y_i)?;
        df_w / density.value
    };
    Ok(d1k + dk_alpha * c + distributional)
}

/// One evaluated symmetry residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryResidual {
    pub point: EvalPoint,
    pub indices: QuantileIndices,
    pub channel: ChannelMode,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub corrections_lhs: CorrectionTerms,
    pub corrections_rhs: CorrectionTerms,
}

/// One side of the symmetry condition: the (a given b) direction, selecting
/// the p_b price component.
fn symmetry_side<P: QuantileProvider + ?Sized>(
    provider: &P,
    w: &ContextPoint,
    a: GoodIndex,
    b: GoodIndex,
    y_a: f64,
    y_b: f64,
    gamma_a_given_b: f64,
    alpha_b: f64,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<(f64, CorrectionTerms)> {
    let point = EvalPoint {
        w: w.clone(),
        i: a,
        j: b,
        y_i: y_a,
        y_j: y_b,
    };
    let p_b = WCoord::Price(b);

    let dk_pb = d1_conditional_quantile(provider, w, a, b, y_b, gamma_a_given_b, p_b, scheme)?;
    let dk_x = d1_conditional_quantile(
        provider,
        w,
        a,
        b,
        y_b,
        gamma_a_given_b,
        WCoord::Income,
        scheme,
    )?;
    let terms = corrections(provider, &point, gamma_a_given_b, channel, scheme)?;
    let dka_pb = d_marginal_quantile(provider, w, b, alpha_b, p_b, scheme)?;
    let dka_x = d_marginal_quantile(provider, w, b, alpha_b, WCoord::Income, scheme)?;

    let side = dk_pb + dk_x * y_b + terms.c * (dka_pb + dka_x * y_b) + terms.d_p[b.idx()]
        + terms.d_x * y_b;
    Ok((side, terms))
}

/// Evaluates both sides of the symmetry condition at a point. The left side
/// conditions i on j, the right side conditions j on i; under symmetry the
/// two agree.
pub fn symmetry_sides<P: QuantileProvider + ?Sized>(
    provider: &P,
    point: &EvalPoint,
    indices: &QuantileIndices,
    channel: ChannelMode,
    scheme: &FdScheme,
) -> Result<SymmetryResidual> {
    point.validate()?;
    let EvalPoint { w, i, j, y_i, y_j } = point.clone();
    let (lhs, corrections_lhs) = symmetry_side(
        provider,
        &w,
        i,
        j,
        y_i,
        y_j,
        indices.gamma_i_given_j,
        indices.alpha_j,
        channel,
        scheme,
    )?;
    let (rhs, corrections_rhs) = symmetry_side(
        provider,
        &w,
        j,
        i,
        y_j,
        y_i,
        indices.gamma_j_given_i,
        indices.alpha_i,
        channel,
        scheme,
    )?;
    Ok(SymmetryResidual {
        point: point.clone(),
        indices: *indices,
        channel,
        lhs,
        rhs,
        residual: lhs - rhs,
        corrections_lhs,
        corrections_rhs,
    })
}

/// Per-point magnitudes of the welfare-relevant correction terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub point: EvalPoint,
    pub c_abs: f64,
    pub d_norm: f64,
    pub d_x_abs: f64,
    pub material: bool,
    pub error: Option<String>,
}

/// Correction-magnitude report over a grid of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub materiality_threshold: f64,
    /// (min, median, max) over the successfully evaluated rows, for each of
    /// |C|, ||D||, |D_x|.
    pub summary: Option<[[f64; 3]; 3]>,
}

/// Tabulates the correction magnitudes that separate conditional-quantile
/// demands from structural demands. Sparse or degenerate points are
/// recorded, not fatal.
pub fn hicksian_gap_report<P: QuantileProvider + ?Sized>(
    provider: &P,
    points: &[EvalPoint],
    channel: ChannelMode,
    scheme: &FdScheme,
    materiality_threshold: f64,
) -> GapReport {
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let row = quantile_indices(provider, point)
            .and_then(|idx| corrections(provider, point, idx.gamma_i_given_j, channel, scheme));
        match row {
            Ok(terms) => {
                let d_norm = terms.d_p.iter().map(|d| d * d).sum::<f64>().sqrt();
                rows.push(GapRow {
                    point: point.clone(),
                    c_abs: terms.c.abs(),
                    d_norm,
                    d_x_abs: terms.d_x.abs(),
                    material: terms.c.abs() > materiality_threshold
                        || d_norm > materiality_threshold
                        || terms.d_x.abs() > materiality_threshold,
                    error: None,
                });
            }
            Err(e) => rows.push(GapRow {
                point: point.clone(),
                c_abs: f64::NAN,
                d_norm: f64::NAN,
                d_x_abs: f64::NAN,
                material: false,
                error: Some(e.to_string()),
            }),
        }
    }

    let ok: Vec<&GapRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let summary = if ok.is_empty() {
        None
    } else {
        let stats = |f: &dyn Fn(&GapRow) -> f64| -> [f64; 3] {
            let mut values: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            values.sort_by(f64::total_cmp);
            [
                values[0],
                values[values.len() / 2],
                values[values.len() - 1],
            ]
        };
        Some([
            stats(&|r| r.c_abs),
            stats(&|r| r.d_norm),
            stats(&|r| r.d_x_abs),
        ])
    };
    GapReport {
        rows,
        materiality_threshold,
        summary,
    }
}
