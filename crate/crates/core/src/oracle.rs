//! Population (infinite-data) quantile objects for the built-in systems.
//!
//! Everything is computed against the known heterogeneity law: closed-form
//! normal-copula conditionals where the structure permits, or common-random-
//! number Monte Carlo with smoothed conditioning as a cross-check path and
//! as the fallback for laws where conditioning does not pin a share.
//!
//! The two-context CDF is the central object: the structural function inside
//! the probability can sit at one context while the conditioning event sits
//! at another. Differentiating it in the conditioning context only — with
//! the structural context frozen — isolates how the composition of
//! heterogeneity types on the conditioning level set shifts, which is what
//! the correction terms of the symmetry condition measure.

use std::sync::OnceLock;

use crate::demand::{ContextPoint, GoodIndex, HetLaw, ShareDemandSystem, WCoord};
use crate::error::{Error, Result};
use crate::numerics::{bisect_leftmost, fd_partial, FdScheme};
use crate::rng::{norm_cdf, norm_quantile, open_uniform, streams, substream};

/// Query for the two-context conditional CDF
/// P(phi_i(w_struct, A) <= y_i | phi_j(w_cond, A) = y_j, Z = z).
#[derive(Debug, Clone)]
pub struct TwoContextCdfQuery {
    pub w_struct: ContextPoint,
    pub w_cond: ContextPoint,
    pub i: GoodIndex,
    pub j: GoodIndex,
    pub y_j: f64,
    pub y_i: f64,
}

impl TwoContextCdfQuery {
    pub fn validate(&self) -> Result<()> {
        if self.i == self.j {
            return Err(Error::Argument(
                "two-context CDF needs distinct goods".into(),
            ));
        }
        if self.w_struct.q != self.w_cond.q || self.w_struct.v != self.w_cond.v {
            return Err(Error::Argument(
                "two-context CDF requires a shared z = (q, v) across contexts".into(),
            ));
        }
        Ok(())
    }
}

/// Value of a two-context CDF evaluation, tagged when it came from the
/// smoothed Monte Carlo path rather than an exact conditional.
#[derive(Debug, Clone, Copy)]
pub struct TwoContextValue {
    pub value: f64,
    pub approximate: bool,
}

#[derive(Debug, Clone)]
pub struct OracleSettings {
    /// Draw budget for Monte Carlo paths.
    pub mc_draws: usize,
    /// Route every CDF through the Monte Carlo path even when a closed form
    /// exists; used to cross-validate the quadrature path.
    pub force_monte_carlo: bool,
    /// Smoothed-conditioning bandwidth as a fraction of std(Y_j | w).
    pub conditioning_bandwidth_factor: f64,
    /// Outcome-direction smoothing of Monte Carlo CDFs as a fraction of
    /// std(Y_i | w); keeps finite differences of MC CDFs smooth.
    pub outcome_smoothing_factor: f64,
    /// Bisection tolerance for quantile inversion.
    pub bisect_tol: f64,
    /// Conditional densities below this raise a degeneracy error.
    pub density_floor: f64,
    /// Scheme for the density finite difference.
    pub fd: FdScheme,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            mc_draws: 1_000_000,
            force_monte_carlo: false,
            conditioning_bandwidth_factor: 0.05,
            outcome_smoothing_factor: 0.01,
            bisect_tol: 1e-12,
            density_floor: 1e-3,
            fd: FdScheme::default(),
        }
    }
}

/// Population oracle over one demand system.
pub struct PopulationOracle {
    system: ShareDemandSystem,
    settings: OracleSettings,
    seed: u64,
    /// Raw independent standard-normal pairs; copula and factor transforms
    /// are applied per evaluation so every context shares the same draws.
    raw_draws: OnceLock<Vec<[f64; 2]>>,
}

impl PopulationOracle {
    pub fn new(system: ShareDemandSystem, settings: OracleSettings, seed: u64) -> Self {
        PopulationOracle {
            system,
            settings,
            seed,
            raw_draws: OnceLock::new(),
        }
    }

    pub fn with_defaults(system: ShareDemandSystem) -> Self {
        Self::new(system, OracleSettings::default(), 0x5eed)
    }

    pub fn system(&self) -> &ShareDemandSystem {
        &self.system
    }

    pub fn settings(&self) -> &OracleSettings {
        &self.settings
    }

    fn raw_draws(&self) -> &[[f64; 2]] {
        self.raw_draws.get_or_init(|| {
            (0..self.settings.mc_draws)
                .map(|k| {
                    let mut rng = substream(self.seed, streams::ORACLE, k as u64);
                    [
                        norm_quantile(open_uniform(&mut rng)),
                        norm_quantile(open_uniform(&mut rng)),
                    ]
                })
                .collect()
        })
    }

    /// Share pairs under the law conditional on the context's v.
    fn share_draws(&self, w: &ContextPoint) -> Result<Vec<[f64; 2]>> {
        match *self.system.het_law() {
            HetLaw::Shares {
                rho,
                lambda,
                lo,
                hi,
                v_sd,
            } => {
                let xi_v = if lambda == 0.0 {
                    0.0
                } else {
                    w.v.ok_or_else(|| {
                        Error::Domain(
                            "heterogeneity law loads on v but the context carries no v".into(),
                        )
                    })? / v_sd
                };
                let load = (1.0 - lambda * lambda).sqrt();
                let cross = (1.0 - rho * rho).sqrt();
                Ok(self
                    .raw_draws()
                    .iter()
                    .map(|raw| {
                        let e1 = raw[0];
                        let e2 = rho * raw[0] + cross * raw[1];
                        [
                            lo + (hi - lo) * norm_cdf(lambda * xi_v + load * e1),
                            lo + (hi - lo) * norm_cdf(lambda * xi_v + load * e2),
                        ]
                    })
                    .collect())
            }
            HetLaw::PointMass { a } => Ok(vec![a; self.settings.mc_draws]),
        }
    }

    /// Bracket for quantile inversion: the image of the good at w,
    /// expanded enough to contain the root comfortably.
    fn bracket(&self, w: &ContextPoint, good: GoodIndex) -> (f64, f64) {
        let (lo, hi) = self.system.image(w, good);
        let span = (hi - lo).max(0.05 * hi.abs().max(1.0));
        (lo - 0.1 * span, hi + 0.1 * span)
    }

    fn check_level(level: f64, name: &str) -> Result<()> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::Argument(format!("{name} = {level} outside (0, 1]")));
        }
        Ok(())
    }

    /// P(Y_i <= y | W = w).
    pub fn marginal_cdf(&self, w: &ContextPoint, i: GoodIndex, y: f64) -> Result<f64> {
        self.system.check_support(w)?;
        if self.settings.force_monte_carlo {
            let draws = self.share_draws(w)?;
            let scale = self.system.scale(w, i);
            let intercept = self.system.intercept(w, i);
            let h = self.outcome_bandwidth(w, i);
            let mut acc = 0.0;
            for a in &draws {
                acc += norm_cdf((y - (a[i.idx()] * scale + intercept)) / h);
            }
            return Ok(acc / draws.len() as f64);
        }
        let share = self.system.pin_share(w, i, y);
        self.system.het_law().marginal_cdf(i.idx(), share, w.v)
    }

    /// y with P(Y_i <= y | W = w) = alpha, by bisection. Levels may sit at
    /// 1 exactly, where the leftmost attaining point (the image supremum)
    /// is returned.
    pub fn marginal_quantile(&self, w: &ContextPoint, i: GoodIndex, alpha: f64) -> Result<f64> {
        Self::check_level(alpha, "alpha")?;
        self.system.check_support(w)?;
        let (lo, hi) = self.bracket(w, i);
        bisect_leftmost(
            |y| self.marginal_cdf(w, i, y),
            lo,
            hi,
            alpha,
            self.settings.bisect_tol,
        )
    }

    fn outcome_bandwidth(&self, w: &ContextPoint, good: GoodIndex) -> f64 {
        // std of a uniform share spans (hi-lo)/sqrt(12); the demand scale
        // carries it to outcome units. Good enough for smoothing purposes.
        let (lo, hi) = self.system.het_law().share_bounds_for(good.idx());
        let spread = ((hi - lo) / 12f64.sqrt()).max(1e-3 * hi.abs().max(1.0));
        self.settings.outcome_smoothing_factor * spread * self.system.scale(w, good).abs()
    }

    /// Two-context conditional CDF. Exact when demand for good j pins its
    /// share; smoothed Monte Carlo otherwise (or when forced).
    pub fn two_context_cdf(&self, query: &TwoContextCdfQuery) -> Result<TwoContextValue> {
        query.validate()?;
        self.system.check_support(&query.w_struct)?;
        self.system.check_support(&query.w_cond)?;

        let exact_path = self.system.monotone_in_own_share(query.j)
            && self.system.het_law().is_continuous()
            && !self.settings.force_monte_carlo;

        if exact_path {
            let pin = self.system.pin_share(&query.w_cond, query.j, query.y_j);
            // A dependent conditional needs the pin strictly inside the
            // share support; an independent one never reads it.
            if !self.system.het_law().conditionally_independent() {
                let (img_lo, img_hi) = self.system.image(&query.w_cond, query.j);
                if !(query.y_j > img_lo && query.y_j < img_hi) {
                    return Err(Error::Domain(format!(
                        "conditioning value y{} = {} outside the image ({img_lo:.6}, {img_hi:.6}) \
                         of good {} at the conditioning context",
                        query.j, query.y_j, query.j
                    )));
                }
            }
            let share_i = self.system.pin_share(&query.w_struct, query.i, query.y_i);
            let value =
                self.system
                    .het_law()
                    .conditional_cdf(query.i.idx(), share_i, pin, query.w_cond.v)?;
            return Ok(TwoContextValue {
                value,
                approximate: false,
            });
        }

        // Smoothed Monte Carlo conditioning with common random numbers.
        let draws = self.share_draws(&query.w_cond)?;
        let scale_j = self.system.scale(&query.w_cond, query.j);
        let intercept_j = self.system.intercept(&query.w_cond, query.j);
        let scale_i = self.system.scale(&query.w_struct, query.i);
        let intercept_i = self.system.intercept(&query.w_struct, query.i);
        let h_j = (self.settings.conditioning_bandwidth_factor
            * self.mc_outcome_std(&draws, query.j, scale_j))
        .max(1e-12);
        let h_i = self.outcome_bandwidth(&query.w_struct, query.i).max(1e-12);

        let mut num = 0.0;
        let mut den = 0.0;
        for a in &draws {
            let yj = a[query.j.idx()] * scale_j + intercept_j;
            let weight = gauss_kernel((yj - query.y_j) / h_j);
            if weight > 0.0 {
                let yi = a[query.i.idx()] * scale_i + intercept_i;
                num += weight * norm_cdf((query.y_i - yi) / h_i);
                den += weight;
            }
        }
        if den <= 0.0 {
            return Err(Error::Domain(format!(
                "conditioning value y{} = {} carries no Monte Carlo mass at the conditioning \
                 context",
                query.j, query.y_j
            )));
        }
        Ok(TwoContextValue {
            value: num / den,
            approximate: true,
        })
    }

    fn mc_outcome_std(&self, draws: &[[f64; 2]], good: GoodIndex, scale: f64) -> f64 {
        let n = draws.len() as f64;
        let mean = draws.iter().map(|a| a[good.idx()]).sum::<f64>() / n;
        let var = draws
            .iter()
            .map(|a| (a[good.idx()] - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt() * scale.abs()
    }

    /// P(Y_i <= y_i | W = w, Y_j = y_j): the two-context CDF at equal
    /// contexts.
    pub fn conditional_cdf(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<f64> {
        let query = TwoContextCdfQuery {
            w_struct: w.clone(),
            w_cond: w.clone(),
            i,
            j,
            y_j,
            y_i,
        };
        Ok(self.two_context_cdf(&query)?.value)
    }

    /// Conditional density by central difference of the conditional CDF.
    /// Errors when the result falls below the density floor.
    pub fn conditional_density(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        y_i: f64,
    ) -> Result<f64> {
        let value = fd_partial(
            |y| self.conditional_cdf(w, i, j, y_j, y),
            y_i,
            &self.settings.fd,
        )?;
        if value < self.settings.density_floor {
            return Err(Error::DensityFloor {
                value,
                floor: self.settings.density_floor,
                point: format!("f_(Y{i} | w, Y{j} = {y_j})({y_i})"),
            });
        }
        Ok(value)
    }

    /// Conditional gamma-quantile by bisection of the conditional CDF.
    pub fn conditional_quantile(
        &self,
        w: &ContextPoint,
        i: GoodIndex,
        j: GoodIndex,
        y_j: f64,
        gamma: f64,
    ) -> Result<f64> {
        Self::check_level(gamma, "gamma")?;
        self.system.check_support(w)?;
        let (lo, hi) = self.bracket(w, i);
        bisect_leftmost(
            |y| self.conditional_cdf(w, i, j, y_j, y),
            lo,
            hi,
            gamma,
            self.settings.bisect_tol,
        )
    }

    /// E[d phi_i / d w_s | W = w, Y_i = y_i, Y_j = y_j].
    ///
    /// Exact through share pinning on invertible systems; smoothed Monte
    /// Carlo conditioning otherwise (or when forced).
    pub fn conditional_expectation_partial(
        &self,
        w: &ContextPoint,
        coord: WCoord,
        i: GoodIndex,
        j: GoodIndex,
        y_i: f64,
        y_j: f64,
    ) -> Result<f64> {
        if i == j {
            return Err(Error::Argument("needs distinct goods".into()));
        }
        self.system.check_support(w)?;
        if self.system.invertible()
            && self.system.het_law().is_continuous()
            && !self.settings.force_monte_carlo
        {
            let mut a = [0.0; 2];
            a[i.idx()] = self.system.pin_share(w, i, y_i);
            a[j.idx()] = self.system.pin_share(w, j, y_j);
            let (lo, hi) = self.system.het_law().share_bounds();
            for (k, &share) in a.iter().enumerate() {
                if share < lo - 1e-12 || share > hi + 1e-12 {
                    return Err(Error::Domain(format!(
                        "conditioning pair pins a{} = {share:.6} outside [{lo}, {hi}]",
                        k + 1
                    )));
                }
            }
            return self.system.structural_partial(w, &a, i, coord);
        }
        Ok(self.smoothed_structural_partial(w, coord, i, j, y_i, y_j, 1.0)?)
    }

    /// Smoothed-conditioning Monte Carlo estimate of the structural partial,
    /// with the conditioning bandwidths scaled by `bandwidth_scale`.
    pub fn smoothed_structural_partial(
        &self,
        w: &ContextPoint,
        coord: WCoord,
        i: GoodIndex,
        j: GoodIndex,
        y_i: f64,
        y_j: f64,
        bandwidth_scale: f64,
    ) -> Result<f64> {
        let draws = self.share_draws(w)?;
        let scale_i = self.system.scale(w, i);
        let scale_j = self.system.scale(w, j);
        let int_i = self.system.intercept(w, i);
        let int_j = self.system.intercept(w, j);
        let h_i = (bandwidth_scale
            * self.settings.conditioning_bandwidth_factor
            * self.mc_outcome_std(&draws, i, scale_i))
        .max(1e-12);
        let h_j = (bandwidth_scale
            * self.settings.conditioning_bandwidth_factor
            * self.mc_outcome_std(&draws, j, scale_j))
        .max(1e-12);

        let mut num = 0.0;
        let mut den = 0.0;
        for a in &draws {
            let yi = a[i.idx()] * scale_i + int_i;
            let yj = a[j.idx()] * scale_j + int_j;
            let weight = gauss_kernel((yi - y_i) / h_i) * gauss_kernel((yj - y_j) / h_j);
            if weight > 0.0 {
                num += weight * self.system.structural_partial(w, a, i, coord)?;
                den += weight;
            }
        }
        if den <= 0.0 {
            return Err(Error::Domain(format!(
                "conditioning pair ({y_i}, {y_j}) carries no Monte Carlo mass"
            )));
        }
        Ok(num / den)
    }

    /// The smoothed structural partial at half, base, and double
    /// conditioning bandwidth; bandwidth sensitivity is reported rather than
    /// hidden.
    pub fn smoothed_partial_sensitivity(
        &self,
        w: &ContextPoint,
        coord: WCoord,
        i: GoodIndex,
        j: GoodIndex,
        y_i: f64,
        y_j: f64,
    ) -> Result<[f64; 3]> {
        Ok([
            self.smoothed_structural_partial(w, coord, i, j, y_i, y_j, 0.5)?,
            self.smoothed_structural_partial(w, coord, i, j, y_i, y_j, 1.0)?,
            self.smoothed_structural_partial(w, coord, i, j, y_i, y_j, 2.0)?,
        ])
    }
}

fn gauss_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp()
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

    fn copula_oracle(rho: f64) -> PopulationOracle {
        PopulationOracle::with_defaults(
            ShareDemandSystem::cd3(HetLaw::gaussian_copula(rho)).unwrap(),
        )
    }

    const I1: GoodIndex = GoodIndex::FIRST;
    const I2: GoodIndex = GoodIndex::SECOND;

    #[test]
    fn marginal_cdf_uniform_values() {
        let oracle = cd3_oracle();
        let f = |y| oracle.marginal_cdf(&w0(), I1, y).unwrap();
        assert!((f(3.0) - 0.5).abs() < 1e-12);
        assert_eq!(f(2.0), 0.0);
        assert_eq!(f(4.0), 1.0);
        assert!((f(3.5) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn marginal_quantile_uniform_values() {
        let oracle = cd3_oracle();
        let q = |a| oracle.marginal_quantile(&w0(), I1, a).unwrap();
        assert!((q(0.5) - 3.0).abs() < 1e-9);
        assert!((q(0.25) - 2.5).abs() < 1e-9);
        assert!(oracle.marginal_quantile(&w0(), I1, 0.0).is_err());
        assert!(oracle.marginal_quantile(&w0(), I1, 1.5).is_err());
    }

    #[test]
    fn quantile_cdf_round_trip() {
        let oracle = copula_oracle(0.5);
        for &alpha in &[0.1, 0.5, 0.9] {
            let y = oracle.marginal_quantile(&w0(), I1, alpha).unwrap();
            let back = oracle.marginal_cdf(&w0(), I1, y).unwrap();
            assert!((back - alpha).abs() < 1e-9, "alpha {alpha}: {back}");
        }
    }

    #[test]
    fn level_one_returns_image_supremum() {
        let oracle = cd3_oracle();
        let y = oracle.marginal_quantile(&w0(), I2, 1.0).unwrap();
        assert!((y - 2.0).abs() < 1e-9, "got {y}");
    }

    #[test]
    fn independent_conditional_ignores_conditioning() {
        let oracle = cd3_oracle();
        let marginal = oracle.marginal_cdf(&w0(), I1, 3.2).unwrap();
        for &y2 in &[1.1, 1.5, 2.0, 2.5] {
            let cond = oracle.conditional_cdf(&w0(), I1, I2, y2, 3.2).unwrap();
            assert!((cond - marginal).abs() < 1e-12);
        }
        // The conditioning context is ignored as well.
        let mut other = w0();
        other.p[1] = 2.3;
        let q = TwoContextCdfQuery {
            w_struct: w0(),
            w_cond: other,
            i: I1,
            j: I2,
            y_j: 1.4,
            y_i: 3.2,
        };
        let two = oracle.two_context_cdf(&q).unwrap();
        assert!(!two.approximate);
        assert!((two.value - marginal).abs() < 1e-12);
    }

    #[test]
    fn equal_contexts_share_the_code_path() {
        let oracle = copula_oracle(0.5);
        let q = TwoContextCdfQuery {
            w_struct: w0(),
            w_cond: w0(),
            i: I1,
            j: I2,
            y_j: 1.5,
            y_i: 3.0,
        };
        let two = oracle.two_context_cdf(&q).unwrap().value;
        let cond = oracle.conditional_cdf(&w0(), I1, I2, 1.5, 3.0).unwrap();
        assert_eq!(two, cond);
    }

    #[test]
    fn copula_conditional_differs_from_marginal() {
        let oracle = copula_oracle(0.5);
        // At the median outcome the copula conditional coincides with the
        // marginal by symmetry; probe off-median.
        let marginal = oracle.marginal_cdf(&w0(), I1, 2.5).unwrap();
        let cond = oracle.conditional_cdf(&w0(), I1, I2, 1.5, 2.5).unwrap();
        assert!(
            (cond - marginal).abs() > 0.01,
            "marginal {marginal}, conditional {cond}"
        );
    }

    #[test]
    fn conditional_cdf_monotone_in_outcome() {
        let oracle = copula_oracle(0.5);
        let mut prev = -1.0;
        for k in 0..=100 {
            let y = 2.0 + 2.0 * k as f64 / 100.0;
            let c = oracle.conditional_cdf(&w0(), I1, I2, 1.5, y).unwrap();
            assert!(c >= prev - 1e-15);
            prev = c;
        }
    }

    #[test]
    fn copula_rejects_out_of_image_conditioning() {
        let oracle = copula_oracle(0.5);
        let err = oracle.conditional_cdf(&w0(), I1, I2, 2.0, 3.0).unwrap_err();
        assert!(err.to_string().contains("image"), "{err}");
    }

    #[test]
    fn conditional_density_uniform_value() {
        let oracle = cd3_oracle();
        let f = oracle.conditional_density(&w0(), I1, I2, 1.5, 3.0).unwrap();
        assert!((f - 0.5).abs() < 1e-9, "got {f}");
    }

    #[test]
    fn conditional_density_integrates_to_one() {
        let oracle = copula_oracle(0.5);
        let (lo, hi) = oracle.system().image(&w0(), I1);
        let grid = crate::numerics::linspace(lo - 0.01, hi + 0.01, 4001);
        let mut integral = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for &y in &grid {
            let f = fd_partial(
                |t| oracle.conditional_cdf(&w0(), I1, I2, 1.5, t),
                y,
                &FdScheme::default(),
            )
            .unwrap();
            if let Some((py, pf)) = prev {
                integral += 0.5 * (f + pf) * (y - py);
            }
            prev = Some((y, f));
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn degenerate_density_raises_floor_error() {
        let oracle = cd3_oracle();
        // Outside the image the conditional density vanishes.
        let err = oracle
            .conditional_density(&w0(), I1, I2, 1.5, 4.5)
            .unwrap_err();
        assert!(matches!(err, Error::DensityFloor { .. }), "{err}");
    }

    #[test]
    fn conditional_quantile_round_trip_and_independence() {
        let oracle = cd3_oracle();
        for &g in &[0.25, 0.5, 0.75] {
            let cq = oracle.conditional_quantile(&w0(), I1, I2, 1.5, g).unwrap();
            let mq = oracle.marginal_quantile(&w0(), I1, g).unwrap();
            assert!((cq - mq).abs() < 1e-9);
            let back = oracle.conditional_cdf(&w0(), I1, I2, 1.5, cq).unwrap();
            assert!((back - g).abs() < 1e-9);
        }
    }

    #[test]
    fn structural_partials_at_pinned_point() {
        let oracle = cd3_oracle();
        let d_p1 = oracle
            .conditional_expectation_partial(&w0(), WCoord::Price(I1), I1, I2, 3.0, 2.0)
            .unwrap();
        let d_p2 = oracle
            .conditional_expectation_partial(&w0(), WCoord::Price(I2), I1, I2, 3.0, 2.0)
            .unwrap();
        let d_x = oracle
            .conditional_expectation_partial(&w0(), WCoord::Income, I1, I2, 3.0, 2.0)
            .unwrap();
        assert!((d_p1 - (-3.0)).abs() < 1e-12);
        assert_eq!(d_p2, 0.0);
        assert!((d_x - 0.3).abs() < 1e-12);
    }

    #[test]
    fn structural_partial_rejects_out_of_image_pairs() {
        let oracle = cd3_oracle();
        assert!(oracle
            .conditional_expectation_partial(&w0(), WCoord::Income, I1, I2, 4.5, 2.0)
            .is_err());
    }
}
