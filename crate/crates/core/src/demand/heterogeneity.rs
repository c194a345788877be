//! Heterogeneity laws for the built-in demand systems.
//!
//! Budget-share drivers `a = (a1, a2)` with uniform marginals on `[lo, hi]`,
//! coupled through a Gaussian copula with correlation `rho`, and optionally
//! tied to the first-stage residual V through a shared latent factor with
//! loading `lambda`. All conditional laws are closed-form normal
//! conditionals on the latent scale.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{norm_cdf, norm_quantile, open_uniform};

/// A single heterogeneity draw for the built-in systems.
pub type SharePair = [f64; 2];

/// Law of the budget-share pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HetLaw {
    /// Gaussian-copula shares with uniform marginals on `[lo, hi]`.
    /// `rho = 0` and `lambda = 0` gives independent uniform shares.
    /// `lambda != 0` loads both shares on the standardized first-stage
    /// residual `v / v_sd`, creating endogeneity that conditioning on V
    /// repairs.
    Shares {
        rho: f64,
        #[serde(default)]
        lambda: f64,
        lo: f64,
        hi: f64,
        /// Scale used to standardize v for the shared factor.
        #[serde(default = "default_v_sd")]
        v_sd: f64,
    },
    /// Degenerate law: every consumer has the same share pair. Violates the
    /// absolute-continuity regularity conditions by construction; exists for
    /// the regularity probes.
    PointMass { a: SharePair },
}

fn default_v_sd() -> f64 {
    0.5
}

impl HetLaw {
    /// Independent uniform shares on `[0.2, 0.4]`.
    pub fn independent() -> Self {
        HetLaw::Shares {
            rho: 0.0,
            lambda: 0.0,
            lo: 0.2,
            hi: 0.4,
            v_sd: default_v_sd(),
        }
    }

    /// Gaussian-copula shares on `[0.2, 0.4]` with correlation `rho`.
    pub fn gaussian_copula(rho: f64) -> Self {
        HetLaw::Shares {
            rho,
            lambda: 0.0,
            lo: 0.2,
            hi: 0.4,
            v_sd: default_v_sd(),
        }
    }

    /// Adds a shared-factor loading on the standardized first-stage residual.
    pub fn with_factor_loading(self, lambda: f64) -> Self {
        match self {
            HetLaw::Shares {
                rho, lo, hi, v_sd, ..
            } => HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                v_sd,
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                v_sd,
            } => {
                if !(rho > -1.0 && rho < 1.0) {
                    return Err(Error::Argument(format!("copula rho {rho} outside (-1,1)")));
                }
                if !(lambda > -1.0 && lambda < 1.0) {
                    return Err(Error::Argument(format!(
                        "factor loading {lambda} outside (-1,1)"
                    )));
                }
                if !(lo < hi && lo > 0.0 && 2.0 * hi < 1.0) {
                    return Err(Error::Argument(format!(
                        "share bounds [{lo}, {hi}] must satisfy 0 < lo < hi and 2*hi < 1"
                    )));
                }
                if !(v_sd > 0.0) {
                    return Err(Error::Argument(format!("v_sd {v_sd} must be positive")));
                }
                Ok(())
            }
            HetLaw::PointMass { a } => {
                if a.iter().any(|&s| !(s > 0.0)) || a[0] + a[1] >= 1.0 {
                    return Err(Error::Argument(format!(
                        "point mass {a:?} must have positive shares summing below 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Share support across both goods.
    pub fn share_bounds(&self) -> (f64, f64) {
        match *self {
            HetLaw::Shares { lo, hi, .. } => (lo, hi),
            HetLaw::PointMass { a } => (a[0].min(a[1]), a[0].max(a[1])),
        }
    }

    /// Share support of a single good (degenerate for a point mass).
    pub fn share_bounds_for(&self, good: usize) -> (f64, f64) {
        match *self {
            HetLaw::Shares { lo, hi, .. } => (lo, hi),
            HetLaw::PointMass { a } => (a[good], a[good]),
        }
    }

    /// Whether the law has an absolutely continuous joint distribution.
    pub fn is_continuous(&self) -> bool {
        matches!(self, HetLaw::Shares { .. })
    }

    /// Whether the law depends on the first-stage residual.
    pub fn needs_v(&self) -> bool {
        matches!(self, HetLaw::Shares { lambda, .. } if *lambda != 0.0)
    }

    /// True when the two shares are conditionally independent given v.
    pub fn conditionally_independent(&self) -> bool {
        match *self {
            HetLaw::Shares { rho, .. } => rho == 0.0,
            HetLaw::PointMass { .. } => true,
        }
    }

    fn standardized_v(&self, v: Option<f64>) -> Result<f64> {
        match *self {
            HetLaw::Shares { lambda, v_sd, .. } => {
                if lambda == 0.0 {
                    return Ok(0.0);
                }
                match v {
                    Some(value) => Ok(value / v_sd),
                    None => Err(Error::Domain(
                        "heterogeneity law loads on v but the context carries no v".into(),
                    )),
                }
            }
            HetLaw::PointMass { .. } => Ok(0.0),
        }
    }

    /// Draws one share pair. Consumes exactly two uniforms from `rng`.
    /// `xi_v` is the standardized first-stage residual for the draw, ignored
    /// when the loading is zero.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng, xi_v: f64) -> SharePair {
        match *self {
            HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                ..
            } => {
                let e1 = norm_quantile(open_uniform(rng));
                let raw2 = norm_quantile(open_uniform(rng));
                let e2 = rho * e1 + (1.0 - rho * rho).sqrt() * raw2;
                let load = (1.0 - lambda * lambda).sqrt();
                let xi1 = lambda * xi_v + load * e1;
                let xi2 = lambda * xi_v + load * e2;
                [
                    lo + (hi - lo) * norm_cdf(xi1),
                    lo + (hi - lo) * norm_cdf(xi2),
                ]
            }
            HetLaw::PointMass { a } => a,
        }
    }

    /// P(a_i <= t | V = v).
    pub fn marginal_cdf(&self, good: usize, t: f64, v: Option<f64>) -> Result<f64> {
        match *self {
            HetLaw::Shares {
                lambda, lo, hi, ..
            } => {
                let u = (t - lo) / (hi - lo);
                if u <= 0.0 {
                    return Ok(0.0);
                }
                if u >= 1.0 {
                    return Ok(1.0);
                }
                if lambda == 0.0 {
                    return Ok(u);
                }
                let xi_v = self.standardized_v(v)?;
                let s = (1.0 - lambda * lambda).sqrt();
                Ok(norm_cdf((norm_quantile(u) - lambda * xi_v) / s))
            }
            HetLaw::PointMass { a } => {
                let _ = v;
                Ok(if t >= a[good] { 1.0 } else { 0.0 })
            }
        }
    }

    /// P(a_i <= t | a_j = pinned, V = v) for i != j.
    ///
    /// When the shares are conditionally independent the pin carries no
    /// information and is ignored entirely, including its support check: the
    /// conditional is then the continuous extension of the marginal.
    pub fn conditional_cdf(
        &self,
        good: usize,
        t: f64,
        pinned_other: f64,
        v: Option<f64>,
    ) -> Result<f64> {
        match *self {
            HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                ..
            } => {
                if rho == 0.0 {
                    return self.marginal_cdf(good, t, v);
                }
                let u_t = (t - lo) / (hi - lo);
                if u_t <= 0.0 {
                    return Ok(0.0);
                }
                if u_t >= 1.0 {
                    return Ok(1.0);
                }
                let u_pin = (pinned_other - lo) / (hi - lo);
                if !(u_pin > 0.0 && u_pin < 1.0) {
                    return Err(Error::Domain(format!(
                        "conditioning share {pinned_other} at or beyond support bounds [{lo}, {hi}]"
                    )));
                }
                let xi_v = self.standardized_v(v)?;
                let load = (1.0 - lambda * lambda).sqrt();
                // Latent value of the pinned share given the factor.
                let xi_pin = norm_quantile(u_pin);
                let eps_pin = (xi_pin - lambda * xi_v) / load;
                let mean = lambda * xi_v + load * rho * eps_pin;
                let sd = ((1.0 - lambda * lambda) * (1.0 - rho * rho)).sqrt();
                Ok(norm_cdf((norm_quantile(u_t) - mean) / sd))
            }
            HetLaw::PointMass { a } => {
                let _ = (pinned_other, v);
                Ok(if t >= a[good] { 1.0 } else { 0.0 })
            }
        }
    }

    /// Closed-form conditional share quantile; inverse of `conditional_cdf`
    /// in `t`. Test oracles use this to cross-check bisection inversion.
    pub fn conditional_quantile(
        &self,
        good: usize,
        gamma: f64,
        pinned_other: f64,
        v: Option<f64>,
    ) -> Result<f64> {
        match *self {
            HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                ..
            } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::Argument(format!("level {gamma} outside (0,1)")));
                }
                let xi_v = self.standardized_v(v)?;
                let load = (1.0 - lambda * lambda).sqrt();
                let mean = if rho == 0.0 {
                    lambda * xi_v
                } else {
                    let u_pin = (pinned_other - lo) / (hi - lo);
                    if !(u_pin > 0.0 && u_pin < 1.0) {
                        return Err(Error::Domain(format!(
                            "conditioning share {pinned_other} at or beyond support bounds [{lo}, {hi}]"
                        )));
                    }
                    let eps_pin = (norm_quantile(u_pin) - lambda * xi_v) / load;
                    lambda * xi_v + load * rho * eps_pin
                };
                let sd = ((1.0 - lambda * lambda) * (1.0 - rho * rho)).sqrt();
                let xi = mean + sd * norm_quantile(gamma);
                Ok(lo + (hi - lo) * norm_cdf(xi))
            }
            HetLaw::PointMass { a } => Ok(a[good]),
        }
    }
}
