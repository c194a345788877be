//! Cross-section simulation and the control-function first stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::system::ShareDemandSystem;
use super::{ContextPoint, N_INSIDE};
use crate::error::{Error, Result};
use crate::rng::{open_uniform, streams, substream, truncated_normal};

/// Marginal design distribution for one observable coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    /// Normal truncated to `mean ± trunc * sd`.
    Normal { mean: f64, sd: f64, trunc: f64 },
    Fixed { value: f64 },
}

impl Dist {
    /// Inverse-CDF draw. Every variant consumes exactly one uniform so that
    /// the per-row draw layout never depends on parameter values.
    pub fn sample(&self, u: f64) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => lo + u * (hi - lo),
            Dist::Normal { mean, sd, trunc } => truncated_normal(u, mean, sd, trunc),
            Dist::Fixed { value } => value,
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => 0.5 * (lo + hi),
            Dist::Normal { mean, .. } => mean,
            Dist::Fixed { value } => value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Uniform { lo, hi } if !(lo < hi) => Err(Error::Argument(format!(
                "uniform bounds [{lo}, {hi}] must be increasing"
            ))),
            Dist::Normal { sd, trunc, .. } if !(sd > 0.0 && trunc > 0.0) => Err(Error::Argument(
                format!("normal design needs sd > 0 and trunc > 0, got sd={sd}, trunc={trunc}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Design distributions for (P, Q, S, V) plus income in exogenous mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub p: Vec<Dist>,
    pub x: Dist,
    #[serde(default)]
    pub q: Vec<Dist>,
    pub s: Dist,
    pub v: Dist,
}

impl DesignSpec {
    /// Design centered on the probe context (p1, p2, x) = (1, 2, 10).
    /// Uniform shapes keep local kernel averages free of design-gradient
    /// shrinkage, so finite-difference derivatives of smoothed objects stay
    /// unattenuated at the center.
    pub fn centered_default() -> Self {
        DesignSpec {
            p: vec![
                Dist::Uniform { lo: 0.75, hi: 1.25 },
                Dist::Uniform { lo: 1.5, hi: 2.5 },
            ],
            x: Dist::Uniform { lo: 7.5, hi: 12.5 },
            q: Vec::new(),
            s: Dist::Uniform { lo: 8.0, hi: 10.0 },
            v: Dist::Normal {
                mean: 0.0,
                sd: 0.5,
                trunc: 3.0,
            },
        }
    }

    /// Narrow design at price level (1, 1); keeps the asymmetric system's
    /// cross-price term budget-feasible at every corner even for c = 1.
    pub fn narrow_unit_prices() -> Self {
        DesignSpec {
            p: vec![
                Dist::Uniform { lo: 0.8, hi: 1.2 },
                Dist::Uniform { lo: 0.8, hi: 1.2 },
            ],
            x: Dist::Uniform { lo: 7.5, hi: 12.5 },
            q: Vec::new(),
            s: Dist::Uniform { lo: 8.0, hi: 10.0 },
            v: Dist::Normal {
                mean: 0.0,
                sd: 0.5,
                trunc: 3.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != N_INSIDE {
            return Err(Error::Argument(format!(
                "design has {} price distributions, expected {N_INSIDE}",
                self.p.len()
            )));
        }
        for d in self.p.iter().chain(self.q.iter()) {
            d.validate()?;
        }
        self.x.validate()?;
        self.s.validate()?;
        self.v.validate()?;
        Ok(())
    }

    /// Context at the design medians.
    pub fn median_context(&self, endogenous: bool) -> ContextPoint {
        let p: Vec<f64> = self.p.iter().map(Dist::median).collect();
        let x = if endogenous {
            first_stage(&p, self.s.median(), self.v.median())
        } else {
            self.x.median()
        };
        let mut w = ContextPoint {
            p,
            x,
            q: self.q.iter().map(Dist::median).collect(),
            v: None,
        };
        if endogenous {
            w.v = Some(self.v.median());
        }
        w
    }
}

/// Built-in first stage: strictly increasing in v, so the residual is
/// recoverable.
pub fn first_stage(p: &[f64], s: f64, v: f64) -> f64 {
    0.5 * (p[0] + p[1]) + s + v
}

/// Metadata persisted alongside every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub seed: u64,
    pub n: usize,
    pub design: DesignSpec,
    pub endogenous: bool,
}

/// A simulated cross section, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub y: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub v_true: Vec<f64>,
    pub v_hat: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl SimulatedDataset {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn k_q(&self) -> usize {
        self.q.len()
    }
}

/// Residual-construction mode for the control-function first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    TrueV,
    Estimated,
}

/// Simulates `n` rows of the model. In endogenous mode income follows the
/// built-in first stage and the share draws load on v per the heterogeneity
/// law; exogenous mode draws income directly from the design.
pub fn simulate_cross_section(
    system: &ShareDemandSystem,
    design: &DesignSpec,
    n: usize,
    seed: u64,
    endogenous: bool,
) -> Result<SimulatedDataset> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    design.validate()?;
    let k_q = design.q.len();

    let v_sd = match system.het_law() {
        super::HetLaw::Shares { v_sd, .. } => *v_sd,
        super::HetLaw::PointMass { .. } => 1.0,
    };

    struct Row {
        y: [f64; N_INSIDE],
        p: [f64; N_INSIDE],
        x: f64,
        q: Vec<f64>,
        s: f64,
        v: f64,
    }

    let rows: Vec<Result<Row>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, streams::ROWS, r as u64);
            let p = [
                design.p[0].sample(open_uniform(&mut rng)),
                design.p[1].sample(open_uniform(&mut rng)),
            ];
            let x_direct = design.x.sample(open_uniform(&mut rng));
            let s = design.s.sample(open_uniform(&mut rng));
            let v = design.v.sample(open_uniform(&mut rng));
            let q: Vec<f64> = design
                .q
                .iter()
                .map(|d| d.sample(open_uniform(&mut rng)))
                .collect();
            let a = system.het_law().sample_pair(&mut rng, v / v_sd);

            let x = if endogenous {
                first_stage(&p, s, v)
            } else {
                x_direct
            };
            let w = ContextPoint {
                p: p.to_vec(),
                x,
                q: q.clone(),
                v: endogenous.then_some(v),
            };
            let y = system.demand(&w, &a)?;
            let spent = p[0] * y[0] + p[1] * y[1];
            if spent > x + 1e-12 {
                return Err(Error::Domain(format!(
                    "budget violated on row {r}: p'y = {spent} > x = {x}"
                )));
            }
            Ok(Row { y, p, x, q, s, v })
        })
        .collect();

    let mut out = SimulatedDataset {
        y: vec![Vec::with_capacity(n); N_INSIDE],
        p: vec![Vec::with_capacity(n); N_INSIDE],
        x: Vec::with_capacity(n),
        q: vec![Vec::with_capacity(n); k_q],
        s: Vec::with_capacity(n),
        v_true: Vec::with_capacity(n),
        v_hat: None,
        meta: DatasetMeta {
            system: system.name().to_string(),
            seed,
            n,
            design: design.clone(),
            endogenous,
        },
    };
    for row in rows {
        let row = row?;
        for g in 0..N_INSIDE {
            out.y[g].push(row.y[g]);
            out.p[g].push(row.p[g]);
        }
        out.x.push(row.x);
        for (k, col) in out.q.iter_mut().enumerate() {
            col.push(row.q[k]);
        }
        out.s.push(row.s);
        out.v_true.push(row.v);
    }
    Ok(out)
}

/// Attaches control-function residuals to an endogenous dataset.
///
/// `TrueV` copies the simulated residuals; `Estimated` fits E[X | P, Q, S]
/// by leave-one-out kernel regression with rule-of-thumb bandwidths and
/// stores the regression residuals.
pub fn control_residuals(dataset: &mut SimulatedDataset, mode: ResidualMode) -> Result<()> {
    if !dataset.meta.endogenous {
        return Err(Error::State(
            "control residuals require an endogenous dataset".into(),
        ));
    }
    match mode {
        ResidualMode::TrueV => {
            dataset.v_hat = Some(dataset.v_true.clone());
            Ok(())
        }
        ResidualMode::Estimated => {
            let fitted = loo_kernel_regression(dataset)?;
            dataset.v_hat = Some(
                dataset
                    .x
                    .iter()
                    .zip(fitted.iter())
                    .map(|(&x, &m)| x - m)
                    .collect(),
            );
            Ok(())
        }
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn biweight(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        0.9375 * t * t
    }
}

/// Leave-one-out Nadaraya-Watson fit of X on (P, Q, S), pruned through a
/// sort on the instrument.
fn loo_kernel_regression(dataset: &SimulatedDataset) -> Result<Vec<f64>> {
    let n = dataset.n();
    if n < 25 {
        return Err(Error::InsufficientData(format!(
            "{n} rows are too few for a first-stage kernel regression"
        )));
    }
    let mut coords: Vec<&[f64]> = Vec::new();
    coords.push(&dataset.p[0]);
    coords.push(&dataset.p[1]);
    for col in &dataset.q {
        coords.push(col);
    }
    coords.push(&dataset.s);

    let d = coords.len();
    let exponent = -1.0 / (4.0 + d as f64);
    let mut bandwidths = Vec::with_capacity(d);
    for (k, col) in coords.iter().enumerate() {
        let sd = population_std(col);
        if sd <= 0.0 {
            return Err(Error::DegenerateCoordinate(format!(
                "first-stage coordinate {k} has zero variance"
            )));
        }
        bandwidths.push(1.06 * sd * (n as f64).powf(exponent));
    }

    // Sort rows by s so each target only scans an instrument window.
    let s_col = coords[d - 1];
    let h_s = bandwidths[d - 1];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s_col[a].total_cmp(&s_col[b]));
    let sorted_s: Vec<f64> = order.iter().map(|&r| s_col[r]).collect();

    let fitted: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|target| {
            let s_t = s_col[target];
            let lo = sorted_s.partition_point(|&s| s <= s_t - h_s);
            let hi = sorted_s.partition_point(|&s| s < s_t + h_s);
            let mut num = 0.0;
            let mut den = 0.0;
            for &r in &order[lo..hi] {
                if r == target {
                    continue;
                }
                let mut w = 1.0;
                for (k, col) in coords.iter().enumerate() {
                    w *= biweight((col[target] - col[r]) / bandwidths[k]);
                    if w == 0.0 {
                        break;
                    }
                }
                num += w * dataset.x[r];
                den += w;
            }
            if den <= 0.0 {
                return Err(Error::InsufficientData(format!(
                    "no neighbors for first-stage fit at row {target}"
                )));
            }
            Ok(num / den)
        })
        .collect();
    fitted.into_iter().collect()
}
