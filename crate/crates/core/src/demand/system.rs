//! Built-in structural demand systems with closed-form derivatives.

use serde::{Deserialize, Serialize};

use super::heterogeneity::{HetLaw, SharePair};
use super::{ContextPoint, GoodIndex, WCoord, N_INSIDE};
use crate::error::{Error, Result};
use crate::rng::{streams, substream};

/// Rectangular bounds on prices and income inside which a system is
/// evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub p_min: f64,
    pub p_max: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for SupportBox {
    fn default() -> Self {
        SupportBox {
            p_min: 0.25,
            p_max: 8.0,
            x_min: 0.5,
            x_max: 200.0,
        }
    }
}

/// A demand system on two inside goods with demands linear in the share
/// drivers:
///
/// ```text
/// y1 = a1 * x / p1 + c * p2
/// y2 = a2 * x / p2
/// ```
///
/// `c = 0` is the Cobb-Douglas system CD3 (rational, Slutsky-symmetric at
/// every draw); `c != 0` is the asymmetric system ASYM3. Both are strictly
/// monotone in the own share, so conditioning on one demand pins one share
/// and conditioning on both demands pins the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareDemandSystem {
    name: String,
    cross_price: f64,
    het: HetLaw,
    support: SupportBox,
}

impl ShareDemandSystem {
    /// Cobb-Douglas system with the given heterogeneity law.
    pub fn cd3(het: HetLaw) -> Result<Self> {
        het.validate()?;
        Ok(ShareDemandSystem {
            name: "CD3".into(),
            cross_price: 0.0,
            het,
            support: SupportBox::default(),
        })
    }

    /// Asymmetric system: CD3 plus `c * p2` on good 1.
    pub fn asym3(c: f64, het: HetLaw) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Argument(format!("cross-price coefficient {c}")));
        }
        het.validate()?;
        Ok(ShareDemandSystem {
            name: "ASYM3".into(),
            cross_price: c,
            het,
            support: SupportBox::default(),
        })
    }

    /// Builds a system by name ("CD3" or "ASYM3").
    pub fn by_name(name: &str, c: f64, het: HetLaw) -> Result<Self> {
        match name {
            "CD3" => Self::cd3(het),
            "ASYM3" => Self::asym3(c, het),
            other => Err(Error::Argument(format!("unknown demand system '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cross_price(&self) -> f64 {
        self.cross_price
    }

    pub fn het_law(&self) -> &HetLaw {
        &self.het
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    /// Whether demand for each good is strictly monotone in its own share.
    pub fn monotone_in_own_share(&self, _good: GoodIndex) -> bool {
        true
    }

    /// Whether conditioning on both inside demands pins the share pair.
    pub fn invertible(&self) -> bool {
        true
    }

    /// Checks that a context lies in the declared support, naming the
    /// violated bound otherwise. Includes the budget-feasibility requirement
    /// that the cross-price term fits inside the numeraire share for every
    /// admissible draw.
    pub fn check_support(&self, w: &ContextPoint) -> Result<()> {
        w.validate()?;
        let s = &self.support;
        for (k, &p) in w.p.iter().enumerate() {
            if p < s.p_min || p > s.p_max {
                return Err(Error::Domain(format!(
                    "price p{} = {p} outside support [{}, {}]",
                    k + 1,
                    s.p_min,
                    s.p_max
                )));
            }
        }
        if w.x < s.x_min || w.x > s.x_max {
            return Err(Error::Domain(format!(
                "income x = {} outside support [{}, {}]",
                w.x, s.x_min, s.x_max
            )));
        }
        let (_, hi) = self.het.share_bounds();
        let slack = 1.0 - 2.0 * hi;
        let needed = self.cross_price * w.p[0] * w.p[1];
        if needed > slack * w.x + 1e-12 {
            return Err(Error::Domain(format!(
                "budget infeasible: c*p1*p2 = {needed:.6} exceeds (1 - 2*hi)*x = {:.6}",
                slack * w.x
            )));
        }
        Ok(())
    }

    fn check_draw(&self, a: &SharePair) -> Result<()> {
        let (lo, hi) = self.het.share_bounds();
        for (k, &share) in a.iter().enumerate() {
            if share < lo - 1e-12 || share > hi + 1e-12 {
                return Err(Error::Domain(format!(
                    "share a{} = {share} outside heterogeneity support [{lo}, {hi}]",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Multiplier of the share in good i's demand: x / p_i.
    pub fn scale(&self, w: &ContextPoint, good: GoodIndex) -> f64 {
        w.x / w.p[good.idx()]
    }

    /// Intercept of good i's demand (the cross-price term for good 1).
    pub fn intercept(&self, w: &ContextPoint, good: GoodIndex) -> f64 {
        if good == GoodIndex::FIRST {
            self.cross_price * w.p[1]
        } else {
            0.0
        }
    }

    /// Range of good i's demand over the share support at context w.
    pub fn image(&self, w: &ContextPoint, good: GoodIndex) -> (f64, f64) {
        let (lo, hi) = self.het.share_bounds_for(good.idx());
        let t = self.scale(w, good);
        let c = self.intercept(w, good);
        (lo * t + c, hi * t + c)
    }

    /// Share pinned by observing demand `y` for `good` at context `w`.
    pub fn pin_share(&self, w: &ContextPoint, good: GoodIndex, y: f64) -> f64 {
        (y - self.intercept(w, good)) / self.scale(w, good)
    }

    /// Demand vector at one draw. Deterministic in its inputs.
    pub fn demand(&self, w: &ContextPoint, a: &SharePair) -> Result<[f64; N_INSIDE]> {
        self.check_support(w)?;
        self.check_draw(a)?;
        Ok([
            a[0] * self.scale(w, GoodIndex::FIRST) + self.intercept(w, GoodIndex::FIRST),
            a[1] * self.scale(w, GoodIndex::SECOND),
        ])
    }

    /// Closed-form price Jacobian and income derivative of the demand map.
    pub fn derivatives(
        &self,
        w: &ContextPoint,
        a: &SharePair,
    ) -> Result<([[f64; N_INSIDE]; N_INSIDE], [f64; N_INSIDE])> {
        self.check_support(w)?;
        self.check_draw(a)?;
        let jac = [
            [-a[0] * w.x / (w.p[0] * w.p[0]), self.cross_price],
            [0.0, -a[1] * w.x / (w.p[1] * w.p[1])],
        ];
        let income = [a[0] / w.p[0], a[1] / w.p[1]];
        Ok((jac, income))
    }

    /// Structural partial of good `i`'s demand along one w1 coordinate.
    pub fn structural_partial(
        &self,
        w: &ContextPoint,
        a: &SharePair,
        good: GoodIndex,
        coord: WCoord,
    ) -> Result<f64> {
        let (jac, income) = self.derivatives(w, a)?;
        Ok(match coord {
            WCoord::Price(g) => jac[good.idx()][g.idx()],
            WCoord::Income => income[good.idx()],
        })
    }

    /// Slutsky matrix S = D_p phi + (d_x phi) y' at one draw.
    pub fn slutsky_matrix(
        &self,
        w: &ContextPoint,
        a: &SharePair,
    ) -> Result<[[f64; N_INSIDE]; N_INSIDE]> {
        let y = self.demand(w, a)?;
        let (jac, income) = self.derivatives(w, a)?;
        let mut s = [[0.0; N_INSIDE]; N_INSIDE];
        for i in 0..N_INSIDE {
            for j in 0..N_INSIDE {
                s[i][j] = jac[i][j] + income[i] * y[j];
            }
        }
        Ok(s)
    }

    /// e_i' S e_j - e_j' S e_i.
    pub fn slutsky_asymmetry(
        &self,
        w: &ContextPoint,
        a: &SharePair,
        i: GoodIndex,
        j: GoodIndex,
    ) -> Result<f64> {
        if i == j {
            return Err(Error::Argument(format!(
                "slutsky asymmetry needs distinct goods, got ({i}, {j})"
            )));
        }
        let s = self.slutsky_matrix(w, a)?;
        Ok(s[i.idx()][j.idx()] - s[j.idx()][i.idx()])
    }

    /// i.i.d. draws from the heterogeneity law, reproducible by seed.
    /// Not available for laws that load on v; those draws happen inside the
    /// cross-section simulator where v is realized.
    pub fn sample_heterogeneity(&self, n: usize, seed: u64) -> Result<Vec<SharePair>> {
        if n == 0 {
            return Err(Error::Argument("sample size must be at least 1".into()));
        }
        if self.het.needs_v() {
            return Err(Error::State(
                "law loads on v; draw shares through the cross-section simulator".into(),
            ));
        }
        Ok((0..n)
            .map(|k| {
                let mut rng = substream(seed, streams::ROWS, k as u64);
                self.het.sample_pair(&mut rng, 0.0)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w0() -> ContextPoint {
        ContextPoint::new(vec![1.0, 2.0], 10.0).unwrap()
    }

    #[test]
    fn cd3_demand_closed_form() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        let y = sys.demand(&w0(), &[0.3, 0.4]).unwrap();
        assert_eq!(y, [3.0, 2.0]);
    }

    #[test]
    fn asym3_demand_closed_form() {
        let sys = ShareDemandSystem::asym3(0.5, HetLaw::independent()).unwrap();
        let y = sys.demand(&w0(), &[0.3, 0.4]).unwrap();
        assert_eq!(y, [4.0, 2.0]);
    }

    #[test]
    fn cd3_derivatives_closed_form() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        let (jac, income) = sys.derivatives(&w0(), &[0.3, 0.4]).unwrap();
        assert_eq!(jac[0][0], -3.0);
        assert_eq!(jac[0][1], 0.0);
        assert_eq!(income[0], 0.3);
    }

    #[test]
    fn asym3_cross_price_derivative() {
        let sys = ShareDemandSystem::asym3(0.5, HetLaw::independent()).unwrap();
        let (jac, _) = sys.derivatives(&w0(), &[0.3, 0.4]).unwrap();
        assert_eq!(jac[0][1], 0.5);
    }

    #[test]
    fn cd3_slutsky_entries() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        let s = sys.slutsky_matrix(&w0(), &[0.3, 0.4]).unwrap();
        assert!((s[0][1] - 0.6).abs() < 1e-12);
        assert!((s[1][0] - 0.6).abs() < 1e-12);
        assert!((s[0][0] - (-2.1)).abs() < 1e-12);
    }

    #[test]
    fn asym3_slutsky_asymmetry_value() {
        let sys = ShareDemandSystem::asym3(0.5, HetLaw::independent()).unwrap();
        let s = sys.slutsky_matrix(&w0(), &[0.3, 0.4]).unwrap();
        assert!((s[0][1] - 1.1).abs() < 1e-12);
        assert!((s[1][0] - 0.8).abs() < 1e-12);
        let asym = sys
            .slutsky_asymmetry(&w0(), &[0.3, 0.4], GoodIndex::FIRST, GoodIndex::SECOND)
            .unwrap();
        assert!((asym - 0.3).abs() < 1e-12);
        let flipped = sys
            .slutsky_asymmetry(&w0(), &[0.3, 0.4], GoodIndex::SECOND, GoodIndex::FIRST)
            .unwrap();
        assert_eq!(asym, -flipped);
    }

    #[test]
    fn asymmetry_rejects_equal_goods() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        assert!(sys
            .slutsky_asymmetry(&w0(), &[0.3, 0.4], GoodIndex::FIRST, GoodIndex::FIRST)
            .is_err());
    }

    #[test]
    fn out_of_support_is_named() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        let w = ContextPoint::new(vec![0.1, 2.0], 10.0).unwrap();
        let err = sys.demand(&w, &[0.3, 0.4]).unwrap_err();
        assert!(err.to_string().contains("p1"), "got: {err}");
        let draw_err = sys.demand(&w0(), &[0.5, 0.3]).unwrap_err();
        assert!(draw_err.to_string().contains("a1"), "got: {draw_err}");
    }

    #[test]
    fn asym3_budget_feasibility_bound() {
        let sys = ShareDemandSystem::asym3(1.0, HetLaw::independent()).unwrap();
        // c*p1*p2 = 2 needs x >= 10 at shares summing to 0.8.
        let tight = ContextPoint::new(vec![1.0, 2.0], 9.0).unwrap();
        assert!(sys.check_support(&tight).is_err());
        let ok = ContextPoint::new(vec![1.0, 2.0], 10.5).unwrap();
        assert!(sys.check_support(&ok).is_ok());
    }

    #[test]
    fn sampling_deterministic_and_in_bounds() {
        let sys = ShareDemandSystem::cd3(HetLaw::gaussian_copula(0.5)).unwrap();
        let a = sys.sample_heterogeneity(1000, 11).unwrap();
        let b = sys.sample_heterogeneity(1000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d[0] >= 0.2 && d[0] <= 0.4));
        assert!(sys.sample_heterogeneity(0, 1).is_err());
    }

    #[test]
    fn sample_mean_matches_law() {
        let sys = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
        let draws = sys.sample_heterogeneity(1_000_000, 3).unwrap();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.3).abs() < 0.001, "got {mean}");
    }
}
