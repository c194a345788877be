//! Cross-validation of the closed-form oracle paths against the
//! common-random-number Monte Carlo paths, and of the smoothed-conditioning
//! fallback against exact share pinning.

use sslab_core::demand::{ContextPoint, GoodIndex, HetLaw, ShareDemandSystem, WCoord};
use sslab_core::numerics::FdScheme;
use sslab_core::oracle::{OracleSettings, PopulationOracle, TwoContextCdfQuery};

const I1: GoodIndex = GoodIndex::FIRST;
const I2: GoodIndex = GoodIndex::SECOND;

fn w0() -> ContextPoint {
    ContextPoint::new(vec![1.0, 2.0], 10.0).unwrap()
}

fn copula_system() -> ShareDemandSystem {
    ShareDemandSystem::cd3(HetLaw::gaussian_copula(0.5)).unwrap()
}

fn mc_oracle(system: ShareDemandSystem) -> PopulationOracle {
    PopulationOracle::new(
        system,
        OracleSettings {
            force_monte_carlo: true,
            ..OracleSettings::default()
        },
        911,
    )
}

#[test]
fn two_context_cdf_monte_carlo_matches_quadrature() {
    let exact = PopulationOracle::with_defaults(copula_system());
    let mc = mc_oracle(copula_system());
    // Conditioning at the interior pin a2 = 0.3 (y2 = 1.5 at this context).
    let query = TwoContextCdfQuery {
        w_struct: w0(),
        w_cond: w0(),
        i: I1,
        j: I2,
        y_j: 1.5,
        y_i: 3.0,
    };
    let closed = exact.two_context_cdf(&query).unwrap();
    assert!(!closed.approximate);
    let sampled = mc.two_context_cdf(&query).unwrap();
    assert!(sampled.approximate);
    assert!(
        (closed.value - sampled.value).abs() <= 2e-3,
        "closed {} vs Monte Carlo {}",
        closed.value,
        sampled.value
    );
}

#[test]
fn conditional_quantile_monte_carlo_matches_quadrature() {
    let exact = PopulationOracle::with_defaults(copula_system());
    let mc = mc_oracle(copula_system());
    let closed = exact.conditional_quantile(&w0(), I1, I2, 1.5, 0.5).unwrap();
    let sampled = mc.conditional_quantile(&w0(), I1, I2, 1.5, 0.5).unwrap();
    assert!(
        (closed - sampled).abs() <= 2e-3,
        "closed {closed} vs Monte Carlo {sampled}"
    );
}

#[test]
fn conditional_density_matches_sampled_kernel_density() {
    // Kernel density over a million direct conditional draws, against the
    // closed-form CDF differentiated in the outcome.
    let system = copula_system();
    let exact = PopulationOracle::with_defaults(system.clone());
    let closed = exact.conditional_density(&w0(), I1, I2, 1.5, 3.0).unwrap();

    let law = system.het_law();
    let pin_a2 = system.pin_share(&w0(), I2, 1.5);
    let scale = system.scale(&w0(), I1);
    let n = 1_000_000usize;
    let h = 0.02;
    let mut acc = 0.0;
    for k in 0..n {
        let mut rng = sslab_core::rng::substream(77, 5, k as u64);
        let u = sslab_core::rng::open_uniform(&mut rng);
        let a1 = law.conditional_quantile(0, u, pin_a2, None).unwrap();
        let u_kernel = (3.0 - a1 * scale) / h;
        if u_kernel.abs() < 1.0 {
            let t = 1.0 - u_kernel * u_kernel;
            acc += 0.9375 * t * t;
        }
    }
    let sampled = acc / (n as f64 * h);
    assert!(
        (closed - sampled).abs() <= 5e-3,
        "closed {closed} vs sampled KDE {sampled}"
    );
}

#[test]
fn smoothed_conditioning_matches_exact_pinning() {
    // Brute-force smoothed conditioning against the exact structural
    // partial on an invertible system, with bandwidth sensitivity.
    let exact = PopulationOracle::with_defaults(copula_system());
    let mc = mc_oracle(copula_system());
    let (y_i, y_j) = (3.0, 1.5);
    for coord in WCoord::all() {
        let truth = exact
            .conditional_expectation_partial(&w0(), coord, I1, I2, y_i, y_j)
            .unwrap();
        let [half, base, double] = mc
            .smoothed_partial_sensitivity(&w0(), coord, I1, I2, y_i, y_j)
            .unwrap();
        assert!(
            (base - truth).abs() <= 5e-3,
            "{coord}: smoothed {base} vs exact {truth} (half {half}, double {double})"
        );
        // Shrinking the bandwidth moves the estimate toward the truth.
        assert!(
            (half - truth).abs() <= (double - truth).abs() + 5e-4,
            "{coord}: half-bandwidth {half} should be no farther than double {double} from {truth}"
        );
    }
}

#[test]
fn crn_monte_carlo_finite_differences_stay_smooth() {
    // With common random numbers the Monte Carlo CDF differentiates like
    // its smooth closed-form limit: the step-halving difference of the MC
    // finite difference stays within 10x the truncation profile measured on
    // the closed form.
    let exact = PopulationOracle::with_defaults(copula_system());
    let mc = mc_oracle(copula_system());
    let y = 3.1;
    let fd = |oracle: &PopulationOracle, h: f64| -> f64 {
        let mut hi = w0();
        hi.p[0] += h;
        let mut lo = w0();
        lo.p[0] -= h;
        let f_hi = oracle.conditional_cdf(&hi, I1, I2, 1.5, y).unwrap();
        let f_lo = oracle.conditional_cdf(&lo, I1, I2, 1.5, y).unwrap();
        (f_hi - f_lo) / (2.0 * h)
    };
    let h = 1e-3;
    let mc_diff = (fd(&mc, h) - fd(&mc, h / 2.0)).abs();
    let truncation_profile = (fd(&exact, h) - fd(&exact, h / 2.0)).abs();
    // Level accuracy is limited by the conditioning-bandwidth bias; the
    // smoothness of the finite difference is the property under test.
    let closed_exact = fd(&exact, 1e-5);
    assert!(
        (fd(&mc, h) - closed_exact).abs() <= 2e-2,
        "MC derivative {} vs closed {closed_exact}",
        fd(&mc, h)
    );
    assert!(
        mc_diff <= 10.0 * truncation_profile.max(1e-6),
        "step-halving difference {mc_diff} vs truncation profile {truncation_profile}"
    );
}

#[test]
fn copula_sample_rank_correlation_matches_analytic_spearman() {
    // Spearman's rho of a Gaussian copula: (6/pi) asin(rho/2).
    let rho = 0.5f64;
    let system = ShareDemandSystem::cd3(HetLaw::gaussian_copula(rho)).unwrap();
    let draws = system.sample_heterogeneity(200_000, 12).unwrap();
    let n = draws.len();
    let rank = |values: Vec<f64>| -> Vec<f64> {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut ranks = vec![0.0; n];
        for (r, &idx) in order.iter().enumerate() {
            ranks[idx] = r as f64;
        }
        ranks
    };
    let r1 = rank(draws.iter().map(|d| d[0]).collect());
    let r2 = rank(draws.iter().map(|d| d[1]).collect());
    let mean = (n as f64 - 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var = 0.0;
    for k in 0..n {
        cov += (r1[k] - mean) * (r2[k] - mean);
        var += (r1[k] - mean) * (r1[k] - mean);
    }
    let sample_spearman = cov / var;
    let analytic = 6.0 / std::f64::consts::PI * (rho / 2.0).asin();
    assert!(
        (sample_spearman - analytic).abs() <= 0.02,
        "sample {sample_spearman} vs analytic {analytic}"
    );
}

#[test]
fn estimated_first_stage_residuals_track_truth() {
    use sslab_core::demand::{
        control_residuals, simulate_cross_section, DesignSpec, ResidualMode,
    };
    let system = ShareDemandSystem::cd3(HetLaw::independent()).unwrap();
    let design = DesignSpec::centered_default();
    let mut ds = simulate_cross_section(&system, &design, 100_000, 21, true).unwrap();
    control_residuals(&mut ds, ResidualMode::Estimated).unwrap();
    let v_hat = ds.v_hat.as_ref().unwrap();

    let n = ds.n() as f64;
    let mean_abs_gap = v_hat
        .iter()
        .zip(&ds.v_true)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    // Reported, not asserted: the bandwidth-driven fit gap.
    println!("first stage: mean |v_hat - v_true| = {mean_abs_gap:.4}");

    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mh, mt) = (mean(v_hat), mean(&ds.v_true));
    let mut cov = 0.0;
    let mut var_h = 0.0;
    let mut var_t = 0.0;
    for (a, b) in v_hat.iter().zip(&ds.v_true) {
        cov += (a - mh) * (b - mt);
        var_h += (a - mh) * (a - mh);
        var_t += (b - mt) * (b - mt);
    }
    let corr = cov / (var_h.sqrt() * var_t.sqrt());
    assert!(corr >= 0.95, "corr(v_hat, v_true) = {corr}");
}

#[test]
fn oracle_smoothness_identity_under_fd_scheme() {
    // Quantile and CDF derivatives tie together through the density: the
    // observable-channel identity behind the collapse.
    let oracle = PopulationOracle::with_defaults(copula_system());
    let scheme = FdScheme::default();
    let gamma = 0.55;
    let y_q = oracle.conditional_quantile(&w0(), I1, I2, 1.5, gamma).unwrap();
    let f = oracle.conditional_density(&w0(), I1, I2, 1.5, y_q).unwrap();
    let h = scheme.step_at(1.0);
    let eval = |p1: f64| {
        let mut w = w0();
        w.p[0] = p1;
        (
            oracle.conditional_quantile(&w, I1, I2, 1.5, gamma).unwrap(),
            oracle.conditional_cdf(&w, I1, I2, 1.5, y_q).unwrap(),
        )
    };
    let (q_hi, f_hi) = eval(1.0 + h);
    let (q_lo, f_lo) = eval(1.0 - h);
    let dk = (q_hi - q_lo) / (2.0 * h);
    let df = (f_hi - f_lo) / (2.0 * h);
    assert!(
        (dk + df / f).abs() < 1e-5,
        "dk = {dk}, -dF/f = {}",
        -df / f
    );
}
