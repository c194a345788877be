//! Synthetic structural demand systems and cross-section simulation.
//!
//! Two built-in systems on three goods (two inside goods plus a numeraire):
//! a Cobb-Douglas system with random budget shares, which is rational and
//! hence Slutsky-symmetric at every heterogeneity draw, and an asymmetric
//! variant that adds a cross-price term to the first good.

mod heterogeneity;
mod io;
mod regularity;
mod simulate;
mod system;

pub use heterogeneity::{HetLaw, SharePair};
pub use io::{read_dataset, write_dataset};
pub use regularity::{probe_regularity, ProbeItem, ProbeRegion, ProbeSettings, RegularityReport};
pub use simulate::{
    control_residuals, simulate_cross_section, DesignSpec, Dist, ResidualMode, SimulatedDataset,
};
pub use system::{ShareDemandSystem, SupportBox};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total number of goods in the built-in systems (two inside goods plus the
/// numeraire).
pub const N_GOODS: usize = 3;
/// Inside goods: demand is a vector over these; the numeraire absorbs the
/// budget remainder.
pub const N_INSIDE: usize = N_GOODS - 1;

/// 1-based index of an inside good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoodIndex(u8);

impl GoodIndex {
    pub const FIRST: GoodIndex = GoodIndex(1);
    pub const SECOND: GoodIndex = GoodIndex(2);

    pub fn new(index: usize) -> Result<Self> {
        if index < 1 || index > N_INSIDE {
            return Err(Error::Argument(format!(
                "good index {index} outside 1..={N_INSIDE}"
            )));
        }
        Ok(GoodIndex(index as u8))
    }

    /// 1-based value.
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// 0-based value for array indexing.
    pub fn idx(self) -> usize {
        self.0 as usize - 1
    }

    /// The other inside good (two inside goods total).
    pub fn other(self) -> GoodIndex {
        if self.0 == 1 {
            GoodIndex(2)
        } else {
            GoodIndex(1)
        }
    }
}

impl std::fmt::Display for GoodIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Conditioning vector w = (p, x, q, v) at which quantile objects are
/// evaluated. `v` is the control-function residual, absent for exogenous
/// designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPoint {
    pub p: Vec<f64>,
    pub x: f64,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub v: Option<f64>,
}

impl ContextPoint {
    pub fn new(p: Vec<f64>, x: f64) -> Result<Self> {
        let point = ContextPoint {
            p,
            x,
            q: Vec::new(),
            v: None,
        };
        point.validate()?;
        Ok(point)
    }

    pub fn with_q(mut self, q: Vec<f64>) -> Self {
        self.q = q;
        self
    }

    pub fn with_v(mut self, v: f64) -> Self {
        self.v = Some(v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != N_INSIDE {
            return Err(Error::Argument(format!(
                "price vector has {} components, expected {N_INSIDE}",
                self.p.len()
            )));
        }
        for (k, &p) in self.p.iter().enumerate() {
            if !(p > 0.0) {
                return Err(Error::Domain(format!(
                    "price p{} = {p} must be strictly positive",
                    k + 1
                )));
            }
        }
        if !(self.x > 0.0) {
            return Err(Error::Domain(format!(
                "income x = {} must be strictly positive",
                self.x
            )));
        }
        Ok(())
    }

    /// Returns a copy with one w1 = (p, x) coordinate shifted by `delta`.
    pub fn perturbed(&self, coord: WCoord, delta: f64) -> ContextPoint {
        let mut out = self.clone();
        match coord {
            WCoord::Price(g) => out.p[g.idx()] += delta,
            WCoord::Income => out.x += delta,
        }
        out
    }

    /// Current value of a w1 coordinate.
    pub fn coord(&self, coord: WCoord) -> f64 {
        match coord {
            WCoord::Price(g) => self.p[g.idx()],
            WCoord::Income => self.x,
        }
    }
}

/// A differentiation coordinate inside w1 = (p, x).
///
/// The scalar indices 1..=L used by derivative loops map the first L-1
/// values to prices and the last to income.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WCoord {
    Price(GoodIndex),
    Income,
}

impl WCoord {
    /// Maps s in 1..=N_GOODS to a coordinate (prices first, income last).
    pub fn from_scalar_index(s: usize) -> Result<Self> {
        if s >= 1 && s <= N_INSIDE {
            Ok(WCoord::Price(GoodIndex::new(s)?))
        } else if s == N_GOODS {
            Ok(WCoord::Income)
        } else {
            Err(Error::Argument(format!(
                "derivative index {s} outside 1..={N_GOODS}"
            )))
        }
    }

    pub fn all() -> Vec<WCoord> {
        (1..=N_GOODS)
            .map(|s| WCoord::from_scalar_index(s).unwrap())
            .collect()
    }
}

impl std::fmt::Display for WCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WCoord::Price(g) => write!(f, "p{g}"),
            WCoord::Income => write!(f, "x"),
        }
    }
}
