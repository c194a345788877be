//! Numeric probes of the regularity preconditions.
//!
//! Three probed items per system and region: conditional-density positivity,
//! conditional-CDF continuity, and quantile differentiability (stability of
//! the finite difference across two step sizes). The remaining regularity
//! requirements (approximate differentiability of the structural map and the
//! dominated joint density) hold analytically for the built-in systems and
//! are documented rather than probed.

use serde::{Deserialize, Serialize};

use super::system::ShareDemandSystem;
use super::{ContextPoint, GoodIndex};
use crate::error::Result;
use crate::numerics::{bisect_leftmost, linspace};

/// Where to probe: a set of contexts and a quantile-level window. Levels at
/// 0 or 1 push the probe grid onto (and slightly past) the support edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRegion {
    pub contexts: Vec<ContextPoint>,
    pub level_lo: f64,
    pub level_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Points in the outcome grid.
    pub grid_points: usize,
    /// Lower bound the sampled conditional density must clear.
    pub density_floor: f64,
    /// Largest admissible CDF increment between adjacent grid points.
    pub jump_threshold: f64,
    /// Relative stability required between FD steps h and h/2.
    pub fd_stability_tol: f64,
    /// Fraction of the probed span added beyond each end of the grid.
    pub expand: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            grid_points: 201,
            density_floor: 1e-3,
            jump_threshold: 0.2,
            fd_stability_tol: 1e-3,
            expand: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeStatus {
    Pass,
    Warn,
}

/// One probed item with its measured value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeItem {
    pub name: String,
    pub status: ProbeStatus,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub system: String,
    pub items: Vec<ProbeItem>,
    /// Requirements satisfied analytically by the built-ins, not probed.
    pub analytic_notes: Vec<String>,
}

impl RegularityReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.status == ProbeStatus::Pass)
    }
}

/// Conditional CDF of good i's demand given the other good pinned at its
/// median, straight from the closed-form law.
fn conditional_cdf_at(
    system: &ShareDemandSystem,
    w: &ContextPoint,
    i: GoodIndex,
    y: f64,
) -> Result<f64> {
    let (lo, hi) = system.het_law().share_bounds();
    let pin_j = 0.5 * (lo + hi);
    let share = system.pin_share(w, i, y);
    system
        .het_law()
        .conditional_cdf(i.idx(), share, pin_j, w.v)
}

fn fd_density(
    system: &ShareDemandSystem,
    w: &ContextPoint,
    i: GoodIndex,
    y: f64,
) -> Result<f64> {
    let h = 1e-4 * y.abs().max(1.0);
    let hi = conditional_cdf_at(system, w, i, y + h)?;
    let lo = conditional_cdf_at(system, w, i, y - h)?;
    Ok((hi - lo) / (2.0 * h))
}

fn marginal_quantile(
    system: &ShareDemandSystem,
    w: &ContextPoint,
    i: GoodIndex,
    alpha: f64,
) -> Result<f64> {
    let (img_lo, img_hi) = system.image(w, i);
    let span = (img_hi - img_lo).max(1e-9);
    let f = |y: f64| {
        let share = system.pin_share(w, i, y);
        system.het_law().marginal_cdf(i.idx(), share, w.v)
    };
    bisect_leftmost(f, img_lo - 0.1 * span, img_hi + 0.1 * span, alpha, 1e-12)
}

/// Probes the regularity items on a grid and reports pass/warn per item.
/// Report-only: probe failures are status values, not errors.
pub fn probe_regularity(
    system: &ShareDemandSystem,
    region: &ProbeRegion,
    settings: &ProbeSettings,
) -> Result<RegularityReport> {
    let good = GoodIndex::FIRST;
    let mut min_density = f64::INFINITY;
    let mut max_jump: f64 = 0.0;
    let mut worst_fd_drift: f64 = 0.0;

    for w in &region.contexts {
        system.check_support(w)?;
        let (img_lo, img_hi) = system.image(w, good);
        let span = (img_hi - img_lo).max(0.05 * img_hi.abs().max(1.0));
        let lo = img_lo + region.level_lo * (img_hi - img_lo) - settings.expand * span;
        let hi = img_lo + region.level_hi * (img_hi - img_lo) + settings.expand * span;
        let grid = linspace(lo, hi, settings.grid_points);

        let mut prev_cdf: Option<f64> = None;
        for &y in &grid {
            let density = fd_density(system, w, good, y).unwrap_or(0.0);
            min_density = min_density.min(density);
            let cdf = conditional_cdf_at(system, w, good, y).unwrap_or(f64::NAN);
            if let Some(prev) = prev_cdf {
                if cdf.is_finite() && prev.is_finite() {
                    max_jump = max_jump.max(cdf - prev);
                }
            }
            prev_cdf = Some(cdf);
        }

        // Quantile differentiability: FD in the first price at interior
        // levels, compared across step sizes h and h/2.
        for &alpha in &[0.3, 0.5, 0.7] {
            let h = 1e-4 * w.p[0].max(1.0);
            let deriv_at = |step: f64| -> Result<f64> {
                let mut w_hi = w.clone();
                w_hi.p[0] += step;
                let mut w_lo = w.clone();
                w_lo.p[0] -= step;
                let q_hi = marginal_quantile(system, &w_hi, good, alpha)?;
                let q_lo = marginal_quantile(system, &w_lo, good, alpha)?;
                Ok((q_hi - q_lo) / (2.0 * step))
            };
            if let (Ok(d1), Ok(d2)) = (deriv_at(h), deriv_at(h / 2.0)) {
                let drift = (d1 - d2).abs() / d1.abs().max(1.0);
                worst_fd_drift = worst_fd_drift.max(drift);
            } else {
                worst_fd_drift = f64::INFINITY;
            }
        }
    }

    let items = vec![
        ProbeItem {
            name: "conditional density positivity".into(),
            status: if min_density >= settings.density_floor {
                ProbeStatus::Pass
            } else {
                ProbeStatus::Warn
            },
            measured: min_density,
            threshold: settings.density_floor,
            detail: "minimum sampled conditional density over the probe grid".into(),
        },
        ProbeItem {
            name: "conditional CDF continuity".into(),
            status: if max_jump <= settings.jump_threshold {
                ProbeStatus::Pass
            } else {
                ProbeStatus::Warn
            },
            measured: max_jump,
            threshold: settings.jump_threshold,
            detail: "largest CDF increment between adjacent grid points".into(),
        },
        ProbeItem {
            name: "quantile differentiability".into(),
            status: if worst_fd_drift <= settings.fd_stability_tol {
                ProbeStatus::Pass
            } else {
                ProbeStatus::Warn
            },
            measured: worst_fd_drift,
            threshold: settings.fd_stability_tol,
            detail: "relative drift of the price derivative between steps h and h/2".into(),
        },
    ];

    Ok(RegularityReport {
        system: system.name().to_string(),
        items,
        analytic_notes: vec![
            "structural map is linear in the share drivers; approximate differentiability holds \
             with the closed-form derivative"
                .into(),
            "joint density of (demand, structural derivative) is dominated: shares are bounded \
             and the derivative is a fixed linear image of them"
                .into(),
        ],
    })
}
