//! Randomized invariant suites shared by the `invariants` and `acceptance`
//! targets. Each runs 1000 cases from a fixed RNG seed.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use qsn_core::allocation::{
    fixed_photon_split, fixed_time_split, numeric_time_split, optimal_photon_split, optimal_time_split,
    power_law_time_split, AllocationPlan, Split,
};
use qsn_core::analytic_fn::{AnalyticFunction, Monomial};
use qsn_core::bounds::{
    photon_bounds_from_gradient, qubit_bounds_from_gradient, seminorm_for_basis, CoordinateBasis,
};
use qsn_core::experiment::{estimate_mse, with_threads, ProtocolConfig};
use qsn_core::linalg::Matrix;
use qsn_core::measurement::{lincomb_estimate, sample_param_estimates, LincombResource, RngStream};
use qsn_core::protocol::ResourceBudget;
use qsn_core::Error;

pub const CASES: u32 = 1000;

fn runner() -> TestRunner {
    let config = Config { cases: CASES, failure_persistence: None, max_global_rejects: 20 * CASES, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn gradient() -> impl Strategy<Value = Vec<f64>> {
    (1usize..=10).prop_flat_map(|d| prop::collection::vec(-10.0f64..10.0, d))
}

/// Random polynomial in `d` variables with at least one nonconstant term,
/// plus a working point.
pub fn polynomial() -> impl Strategy<Value = (AnalyticFunction<f64>, Vec<f64>)> {
    (1usize..=4)
        .prop_flat_map(|d| {
            let term = (-2.0f64..2.0, prop::collection::vec(0u32..=3, d));
            (Just(d), prop::collection::vec(term, 1..=5), prop::collection::vec(-1.5f64..1.5, d))
        })
        .prop_map(|(d, terms, theta)| {
            let monos = terms.into_iter().map(|(c, p)| Monomial::new(c, p)).collect();
            (AnalyticFunction::polynomial(d, monos).expect("valid polynomial"), theta)
        })
}

/// Entangled bound never exceeds the unentangled baseline, and the advantage
/// ratio lies in `[1, d]`, for both resources.
pub fn bound_ordering() -> Result<(), String> {
    run((gradient(), 0.1f64..1e4), |(g, r)| {
        let d = g.len() as f64;
        for rep in [qubit_bounds_from_gradient(&g, r), photon_bounds_from_gradient(&g, r)] {
            let rep = rep.map_err(|e| fail(e.to_string()))?;
            if rep.degenerate {
                continue;
            }
            let slack = 1e-12 * rep.unentangled_baseline;
            prop_assert!(rep.entangled_bound <= rep.unentangled_baseline + slack, "{rep:?}");
            prop_assert!(rep.advantage_ratio >= 1.0 - 1e-12 && rep.advantage_ratio <= d * (1.0 + 1e-12), "{rep:?}");
        }
        Ok(())
    })
}

/// Any invertible coordinate basis has seminorm at least `1 / max_j |J_1j|`,
/// and the optimal basis for a linear function attains it.
pub fn seminorm_inequality() -> Result<(), String> {
    let basis = (2usize..=5).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), d));
    run((basis, prop::collection::vec(-3.0f64..3.0, 2..=5)), |(rows, w)| {
        let j = Matrix::from_rows(&rows).unwrap();
        if j.condition_number().map_or(true, |c| c > 1e6) {
            return Err(TestCaseError::reject("ill-conditioned basis"));
        }
        let b = CoordinateBasis::new(j).unwrap();
        let s = seminorm_for_basis(&b).map_err(|e| fail(e.to_string()))?;
        prop_assert!(s >= b.seminorm_lower_bound() * (1.0 - 1e-9), "{s} < {}", b.seminorm_lower_bound());

        if w.iter().all(|v| v.abs() < 1e-3) {
            return Ok(());
        }
        let f = AnalyticFunction::linear(w.clone()).unwrap();
        let opt = CoordinateBasis::optimal(&f, &vec![0.0; w.len()]).unwrap();
        let s = seminorm_for_basis(&opt).unwrap();
        let lb = opt.seminorm_lower_bound();
        prop_assert!((s - lb).abs() <= 1e-12 * lb, "{s} vs {lb}");
        Ok(())
    })
}

/// Sample mean and variance of step-1 estimates and linear-combination
/// estimates match their Gaussian models within 5 standard errors.
pub fn moment_checks() -> Result<(), String> {
    const DRAWS: usize = 4000;
    let case = (prop::collection::vec(-5.0f64..5.0, 1..=4), 0.01f64..4.0, 1.0f64..100.0, any::<u64>());
    run(case, |(theta, var, t, seed)| {
        let mut rng = RngStream::new(seed, 0).rng();
        let n = DRAWS as f64;
        let vars = vec![var; theta.len()];
        let mut sums = vec![(0.0, 0.0); theta.len()];
        for _ in 0..DRAWS {
            let est = sample_param_estimates(&theta, &vars, &mut rng).unwrap();
            for (s, (e, m)) in sums.iter_mut().zip(est.iter().zip(&theta)) {
                s.0 += e - m;
                s.1 += (e - m) * (e - m);
            }
        }
        for (s1, s2) in sums {
            let mean = s1 / n;
            let second = s2 / n;
            prop_assert!(mean.abs() < 5.0 * (var / n).sqrt(), "mean {mean} var {var}");
            // Var of a squared Gaussian deviation is 2 var^2
            prop_assert!((second - var).abs() < 5.0 * var * (2.0 / n).sqrt(), "second moment {second} vs {var}");
        }

        let weights: Vec<f64> = theta.iter().map(|v| v + 0.5).collect();
        if weights.iter().all(|w| *w == 0.0) {
            return Ok(());
        }
        let target: f64 = weights.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let expected = weights.iter().fold(0.0f64, |m, w| m.max(w.abs())).powi(2) / (t * t);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..DRAWS {
            let q = lincomb_estimate(&weights, &theta, LincombResource::Time(t), &mut rng).unwrap() - target;
            s1 += q;
            s2 += q * q;
        }
        prop_assert!((s1 / n).abs() < 5.0 * (expected / n).sqrt());
        prop_assert!((s2 / n - expected).abs() < 5.0 * expected * (2.0 / n).sqrt());
        Ok(())
    })
}

/// The same configuration and master seed give bit-identical MSE statistics
/// on one worker, three workers and the global pool.
pub fn determinism() -> Result<(), String> {
    let case = (2usize..=4, 10.0f64..1e3, any::<u64>(), any::<bool>());
    run(case, |(d, t, seed, photons)| {
        let f = AnalyticFunction::product(d).unwrap();
        let theta = vec![1.0; d];
        let budget = if photons { ResourceBudget::Photons(t as u64 + 4 * d as u64) } else { ResourceBudget::Time(t) };
        let plan = match budget {
            ResourceBudget::Time(t) => optimal_time_split(&f, &theta, t),
            ResourceBudget::Photons(n) => optimal_photon_split(&f, &theta, n),
        }
        .unwrap();
        let cfg = ProtocolConfig::two_step(f, theta, budget, plan);
        let runs: Vec<_> = [Some(1), Some(3), None]
            .into_iter()
            .map(|k| with_threads(k, || estimate_mse(&cfg, 100, seed)).unwrap().unwrap())
            .collect();
        prop_assert_eq!(&runs[0], &runs[1]);
        prop_assert_eq!(&runs[1], &runs[2]);
        Ok(())
    })
}

fn check_time_plan(plan: &AllocationPlan<f64>, t: f64) -> Result<(), TestCaseError> {
    ResourceBudget::Time(t).check_plan(plan).map_err(|e| fail(format!("{e}: {plan:?}")))?;
    let Split::Time { t1, t2 } = plan.split else { return Err(fail("expected a time split".into())) };
    prop_assert!(t1 >= 0.0 && t2 > 0.0);
    prop_assert!(((t1 + t2) - t).abs() <= 4.0 * f64::EPSILON * t, "{t1} + {t2} != {t}");
    Ok(())
}

/// Every allocation rule spends its budget: time splits to rounding, photon
/// splits exactly, with mode counts summing to `N1`.
pub fn budget_conservation() -> Result<(), String> {
    let case = (polynomial(), 2.0f64..1e6, 0.05f64..0.45, 0.55f64..0.95, 0.1f64..10.0, 1u64..100_000);
    run(case, |((f, theta), t, frac, p, c, n)| {
        let t1_fixed = frac * t;
        check_time_plan(&fixed_time_split(t1_fixed, t).map_err(|e| fail(e.to_string()))?, t)?;
        match power_law_time_split(c, p, t) {
            Ok(plan) => check_time_plan(&plan, t)?,
            Err(e) => return Err(fail(format!("power law c={c} p={p} t={t}: {e}"))),
        }
        let opt = optimal_time_split(&f, &theta, t);
        match opt {
            Err(Error::ZeroGradient(_)) => return Err(TestCaseError::reject("flat point")),
            Err(e) => return Err(fail(e.to_string())),
            Ok(plan) => check_time_plan(&plan, t)?,
        }
        check_time_plan(&numeric_time_split(&f, &theta, t).map_err(|e| fail(e.to_string()))?, t)?;

        let d = f.dim() as u64;
        let n = n.max(2 * d + 1);
        let plan = optimal_photon_split(&f, &theta, n).map_err(|e| fail(format!("N={n}: {e}")))?;
        ResourceBudget::Photons(n).check_plan(&plan).map_err(|e| fail(e.to_string()))?;
        let Split::Photon { n1, n2, mode_counts } = &plan.split else { return Err(fail("expected photons".into())) };
        prop_assert_eq!(n1 + n2, n);
        prop_assert_eq!(mode_counts.iter().sum::<u64>(), *n1);

        let counts: Vec<u64> = (0..d).map(|i| 1 + (i * n) % 7).collect();
        let n1f: u64 = counts.iter().sum();
        let plan = fixed_photon_split::<f64>(counts, n).map_err(|e| fail(e.to_string()))?;
        prop_assert_eq!(plan.total(), (n1f + n) as f64);
        Ok(())
    })
}
