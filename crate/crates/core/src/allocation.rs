//! Splitting a time or photon budget between the two protocol steps.

use serde::{Deserialize, Serialize};

use crate::analytic_fn::AnalyticFunction;
use crate::bounds::{photon_mse_coefficients, time_mse_coefficients, TwoStepPrediction};
use crate::error::{Error, Result};
use crate::measurement::largest_remainder;
use crate::scalar::Real;

/// How a plan was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "policy", rename_all = "kebab-case")]
pub enum Policy<T: Real> {
    Optimal,
    PowerLaw { c: T, p: T },
    Fixed,
    Numeric,
}

impl<T: Real> Policy<T> {
    pub fn label(&self) -> String {
        match self {
            Policy::Optimal => "optimal".into(),
            Policy::PowerLaw { c, p } => format!("power:{c},{p}"),
            Policy::Fixed => "fixed".into(),
            Policy::Numeric => "numeric".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "kind", rename_all = "kebab-case")]
pub enum Split<T: Real> {
    Time { t1: T, t2: T },
    Photon { n1: u64, n2: u64, mode_counts: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AllocationPlan<T: Real> {
    pub split: Split<T>,
    pub policy: Policy<T>,
    /// Step 1 is skipped because the gradient does not depend on `theta`.
    pub skip_step1: bool,
    /// The unconstrained rule fell outside the admissible range and was clamped.
    pub clamped: bool,
    /// Photon step-1 objective vanished and modes were split uniformly.
    pub uniform_fallback: bool,
}

impl<T: Real> AllocationPlan<T> {
    fn time(t1: T, t2: T, policy: Policy<T>) -> Self {
        Self { split: Split::Time { t1, t2 }, policy, skip_step1: false, clamped: false, uniform_fallback: false }
    }

    /// Total resource consumed by the plan.
    pub fn total(&self) -> T {
        match &self.split {
            Split::Time { t1, t2 } => *t1 + *t2,
            Split::Photon { n1, n2, .. } => T::from_u64(n1 + n2).expect("count fits scalar"),
        }
    }

    /// Checks the budget-sum invariants of the split.
    pub fn validate(&self) -> Result<()> {
        match &self.split {
            Split::Time { t1, t2 } => {
                if !(*t1 >= T::zero()) || !t1.is_finite() || !(*t2 > T::zero()) || !t2.is_finite() {
                    return Err(Error::InvalidArgument(format!("invalid time split t1={t1}, t2={t2}")));
                }
                if *t1 == T::zero() && !self.skip_step1 {
                    return Err(Error::InvalidArgument("t1 = 0 is only valid when step 1 is skipped".into()));
                }
            }
            Split::Photon { n1, n2, mode_counts } => {
                if *n2 == 0 {
                    return Err(Error::InvalidArgument("step 2 needs at least one photon".into()));
                }
                if mode_counts.iter().sum::<u64>() != *n1 {
                    return Err(Error::InvalidArgument(format!(
                        "mode counts sum to {} but N1 = {n1}",
                        mode_counts.iter().sum::<u64>()
                    )));
                }
            }
        }
        if let Policy::PowerLaw { p, .. } = self.policy {
            if !(p > T::lit(0.5) && p < T::one()) {
                return Err(Error::InvalidArgument(format!("power-law exponent {p} outside (1/2, 1)")));
            }
        }
        Ok(())
    }
}

fn check_total<T: Real>(t_total: T) -> Result<()> {
    if !(t_total > T::zero()) || !t_total.is_finite() {
        return Err(Error::NonPositiveResource(t_total.as_f64()));
    }
    Ok(())
}

fn nondegenerate_time_coefficients<T: Real>(f: &AnalyticFunction<T>, theta: &[T]) -> Result<TwoStepPrediction<T>> {
    let pred = time_mse_coefficients(f, theta)?;
    if pred.degenerate {
        return Err(Error::ZeroGradient("allocation needs a nonzero gradient at theta"));
    }
    Ok(pred)
}

/// Smallest step-1 time used when the curvature coefficient vanishes but the
/// gradient still varies: `max(1, sqrt(t_total))`, never above `t_total / 2`.
pub fn flat_point_t1<T: Real>(t_total: T) -> T {
    t_total.sqrt().max(T::one()).min(t_total / T::lit(2.0))
}

/// Closed-form split `t1 = (2 g1 / g2)^(1/5) t_total^(3/5)` clamped to
/// `[flat_point_t1(t_total), t_total / 2]`.
pub fn optimal_time_split<T: Real>(f: &AnalyticFunction<T>, theta: &[T], t_total: T) -> Result<AllocationPlan<T>> {
    check_total(t_total)?;
    let pred = nondegenerate_time_coefficients(f, theta)?;
    if f.has_constant_gradient() {
        let mut plan = AllocationPlan::time(T::zero(), t_total, Policy::Optimal);
        plan.skip_step1 = true;
        return Ok(plan);
    }
    if pred.g1 == T::zero() {
        let t1 = flat_point_t1(t_total);
        return Ok(AllocationPlan::time(t1, t_total - t1, Policy::Optimal));
    }
    let raw = (T::lit(2.0) * pred.g1 / pred.g2).powf(T::lit(0.2)) * t_total.powf(T::lit(0.6));
    let (floor, cap) = (flat_point_t1(t_total), t_total / T::lit(2.0));
    let t1 = raw.max(floor).min(cap);
    let mut plan = AllocationPlan::time(t1, t_total - t1, Policy::Optimal);
    plan.clamped = t1 != raw;
    Ok(plan)
}

/// Golden-section minimum of a unimodal function on `[a, b]`, to absolute
/// width `tol`.
pub fn golden_section_min<T: Real, F: Fn(T) -> T>(f: F, mut a: T, mut b: T, tol: T) -> T {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / T::lit(2.0)
}

/// Numeric oracle for [`optimal_time_split`]: golden-section minimization of
/// the predicted MSE over `ln t1`, to relative tolerance `1e-10` in `t1`.
pub fn numeric_time_split<T: Real>(f: &AnalyticFunction<T>, theta: &[T], t_total: T) -> Result<AllocationPlan<T>> {
    check_total(t_total)?;
    let pred = nondegenerate_time_coefficients(f, theta)?;
    if f.has_constant_gradient() || pred.g1 == T::zero() {
        let mut plan = optimal_time_split(f, theta, t_total)?;
        plan.policy = Policy::Numeric;
        return Ok(plan);
    }
    let t1 = numeric_t1(&pred, t_total);
    Ok(AllocationPlan::time(t1, t_total - t1, Policy::Numeric))
}

/// `argmin_{t1} mse_at(t1, t_total - t1)` for a prediction with `g1 > 0`.
pub fn numeric_t1<T: Real>(pred: &TwoStepPrediction<T>, t_total: T) -> T {
    let lo = (t_total * T::lit(1e-12)).ln();
    let hi = (t_total * (T::one() - T::lit(1e-9))).ln();
    let objective = |u: T| {
        let t1 = u.exp();
        pred.mse_at(t1, t_total - t1)
    };
    golden_section_min(objective, lo, hi, T::lit(1e-10)).exp()
}

/// `t1 = c t_total^p` with `1/2 < p < 1`, clamped to `t_total / 2`.
pub fn power_law_time_split<T: Real>(c: T, p: T, t_total: T) -> Result<AllocationPlan<T>> {
    check_total(t_total)?;
    if !(c > T::zero()) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("power-law constant {c} must be > 0")));
    }
    if !(p > T::lit(0.5) && p < T::one()) {
        return Err(Error::InvalidArgument(format!("power-law exponent {p} outside (1/2, 1)")));
    }
    let raw = c * t_total.powf(p);
    let cap = t_total / T::lit(2.0);
    let t1 = raw.min(cap);
    let mut plan = AllocationPlan::time(t1, t_total - t1, Policy::PowerLaw { c, p });
    plan.clamped = raw > cap;
    Ok(plan)
}

/// A user-chosen `t1`; `t1 = 0` skips step 1.
pub fn fixed_time_split<T: Real>(t1: T, t_total: T) -> Result<AllocationPlan<T>> {
    check_total(t_total)?;
    if !(t1 >= T::zero()) || !(t1 < t_total) {
        return Err(Error::InvalidArgument(format!("fixed t1={t1} must lie in [0, {t_total})")));
    }
    let mut plan = AllocationPlan::time(t1, t_total - t1, Policy::Fixed);
    plan.skip_step1 = t1 == T::zero();
    Ok(plan)
}

/// A user-chosen photon split.
pub fn fixed_photon_split<T: Real>(mode_counts: Vec<u64>, n2: u64) -> Result<AllocationPlan<T>> {
    let plan = AllocationPlan {
        split: Split::Photon { n1: mode_counts.iter().sum(), n2, mode_counts },
        policy: Policy::Fixed,
        skip_step1: false,
        clamped: false,
        uniform_fallback: false,
    };
    plan.validate()?;
    Ok(plan)
}

/// Result of [`minimize_on_simplex`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexMinimum<T: Real> {
    pub point: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes a smooth `phi` over the open probability simplex with
/// exponentiated-gradient steps and backtracking. `eval` returns the value and
/// the gradient. Converges when every `g_k / sum_j w_j g_j` is within `tol`
/// of 1, i.e. the gradient is constant across coordinates.
pub fn minimize_on_simplex<T: Real, F>(eval: F, start: Vec<T>, tol: T, max_iter: usize) -> Result<SimplexMinimum<T>>
where
    F: Fn(&[T]) -> (T, Vec<T>),
{
    if start.is_empty() || start.iter().any(|w| !(*w > T::zero())) {
        return Err(Error::InvalidArgument("simplex start must be strictly positive".into()));
    }
    let norm = |w: Vec<T>| {
        let s: T = w.iter().copied().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<T>>()
    };
    let mut w = norm(start);
    let (mut value, mut grad) = eval(&w);
    let mut eta = T::lit(0.5);
    for it in 0..max_iter {
        let lambda: T = w.iter().zip(&grad).map(|(&a, &g)| a * g).sum();
        if lambda == T::zero() {
            return Ok(SimplexMinimum { point: w, value, iterations: it, converged: true });
        }
        let ratios: Vec<T> = grad.iter().map(|&g| g / lambda).collect();
        if ratios.iter().all(|r| (*r - T::one()).abs() <= tol) {
            return Ok(SimplexMinimum { point: w, value, iterations: it, converged: true });
        }
        // Descent direction in log coordinates: raise coordinates whose
        // gradient is more negative than average (ratio > 1 when lambda < 0).
        let sign = if lambda < T::zero() { T::one() } else { -T::one() };
        let step_dir: Vec<T> = ratios.iter().map(|&r| sign * (r - T::one())).collect();
        let mut accepted = false;
        while eta > T::lit(1e-20) {
            let trial = norm(w.iter().zip(&step_dir).map(|(&x, &s)| x * (eta * s).exp()).collect());
            let (v, g) = eval(&trial);
            if v.is_finite() && v <= value {
                let stalled = v == value && trial == w;
                w = trial;
                value = v;
                grad = g;
                accepted = true;
                eta = (eta * T::lit(1.5)).min(T::lit(4.0));
                if stalled {
                    return Ok(SimplexMinimum { point: w, value, iterations: it, converged: true });
                }
                break;
            }
            eta /= T::lit(2.0);
        }
        if !accepted {
            return Ok(SimplexMinimum { point: w, value, iterations: it, converged: false });
        }
    }
    Ok(SimplexMinimum { point: w, value, iterations: max_iter, converged: false })
}

const SIMPLEX_TOL: f64 = 1e-10;
const SIMPLEX_MAX_ITER: usize = 200_000;

/// Integer counts from continuous ratios: largest remainder, then every mode
/// that received nothing takes one unit from the currently largest mode.
pub fn apportion_with_floor<T: Real>(ratios: &[T], total: u64) -> Result<Vec<u64>> {
    if (total as usize) < ratios.len() {
        return Err(Error::InvalidArgument(format!("{total} units cannot cover {} modes", ratios.len())));
    }
    let mut counts = largest_remainder(ratios, total)?;
    for i in 0..counts.len() {
        if counts[i] == 0 {
            let donor = (0..counts.len())
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty");
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// Step-1 photon partition for the two-step protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PhotonPartition<T: Real> {
    pub counts: Vec<u64>,
    /// Continuous optimum on the simplex, independent of `N1`.
    pub ratios: Vec<T>,
    pub uniform_fallback: bool,
    pub converged: bool,
}

/// Continuous minimizer of `sum_ij C_ij / (w_i^2 w_j^2)` on the simplex.
/// Modes absent from every nonzero `C_ij` get ratio 0.
fn curvature_ratios<T: Real>(curvature: &crate::linalg::Matrix<T>) -> Result<(Vec<T>, bool, bool)> {
    let d = curvature.rows();
    let active: Vec<usize> = (0..d).filter(|&i| (0..d).any(|j| curvature[(i, j)] != T::zero())).collect();
    if active.is_empty() {
        return Ok((vec![T::one() / T::from_count(d); d], true, true));
    }
    let m = active.len();
    let eval = |w: &[T]| {
        let inv2: Vec<T> = w.iter().map(|x| T::one() / (*x * *x)).collect();
        let mut value = T::zero();
        let mut grad = vec![T::zero(); m];
        for a in 0..m {
            for b in 0..m {
                let c = curvature[(active[a], active[b])];
                if c != T::zero() {
                    let term = c * inv2[a] * inv2[b];
                    value += term;
                    grad[a] -= T::lit(2.0) * term / w[a];
                    grad[b] -= T::lit(2.0) * term / w[b];
                }
            }
        }
        (value, grad)
    };
    let min = minimize_on_simplex(eval, vec![T::one(); m], T::lit(SIMPLEX_TOL), SIMPLEX_MAX_ITER)?;
    let mut ratios = vec![T::zero(); d];
    for (a, &i) in active.iter().enumerate() {
        ratios[i] = min.point[a];
    }
    Ok((ratios, false, min.converged))
}

/// Minimizes the curvature term of the photon MSE over step-1 mode ratios,
/// then rounds to `n1` photons with at least one per mode.
pub fn photon_step1_partition<T: Real>(f: &AnalyticFunction<T>, theta: &[T], n1: u64) -> Result<PhotonPartition<T>> {
    let d = f.dim();
    if (n1 as usize) < d {
        return Err(Error::InvalidArgument(format!("N1 = {n1} is below the number of modes {d}")));
    }
    let pred = photon_mse_coefficients(f, theta)?;
    let (ratios, uniform_fallback, converged) = curvature_ratios(&pred.curvature)?;
    let counts = apportion_with_floor(&ratios, n1)?;
    Ok(PhotonPartition { counts, ratios, uniform_fallback, converged })
}

/// Photon analogue of [`optimal_time_split`]:
/// `N1 = round((2 K / g2)^(1/5) N^(3/5))` clamped to `[d, N/2]`, with `K` the
/// curvature coefficient at the optimal step-1 ratios.
pub fn optimal_photon_split<T: Real>(f: &AnalyticFunction<T>, theta: &[T], n_total: u64) -> Result<AllocationPlan<T>> {
    let d = f.dim() as u64;
    if n_total < 2 * d {
        return Err(Error::InvalidArgument(format!("N_total = {n_total} is below 2d = {}", 2 * d)));
    }
    let pred = photon_mse_coefficients(f, theta)?;
    if pred.degenerate {
        return Err(Error::ZeroGradient("allocation needs a nonzero gradient at theta"));
    }
    let photon = |n1: u64, counts: Vec<u64>, uniform_fallback: bool, clamped: bool, skip: bool| AllocationPlan {
        split: Split::Photon { n1, n2: n_total - n1, mode_counts: counts },
        policy: Policy::Optimal,
        skip_step1: skip,
        clamped,
        uniform_fallback,
    };
    if f.has_constant_gradient() {
        return Ok(photon(d, vec![1; d as usize], true, false, true));
    }
    let (ratios, uniform_fallback, _) = curvature_ratios(&pred.curvature)?;
    let nt = T::from_u64(n_total).expect("count fits scalar");
    let k = pred.effective(&ratios).g1;
    let raw = if k == T::zero() {
        flat_point_t1(nt)
    } else {
        (T::lit(2.0) * k / pred.g2).powf(T::lit(0.2)) * nt.powf(T::lit(0.6))
    };
    let raw = raw.round().to_u64().unwrap_or(u64::MAX);
    let n1 = raw.clamp(d, n_total / 2);
    let counts = apportion_with_floor(&ratios, n1)?;
    Ok(photon(n1, counts, uniform_fallback, raw != n1, false))
}

/// Unentangled photon partition `n_i ∝ |f_i|^(2/3)`; modes with `f_i = 0` get none.
pub fn two_thirds_partition<T: Real>(gradient: &[T], photons: u64) -> Result<Vec<u64>> {
    let w: Vec<T> = gradient.iter().map(|g| g.abs().powf(T::lit(2.0 / 3.0))).collect();
    largest_remainder(&w, photons)
}

/// Numeric minimizer of `sum f_i^2 / n_i^2` subject to `sum n_i = photons`,
/// over the modes with `f_i != 0`. Returns continuous counts and the objective.
pub fn numeric_unentangled_partition<T: Real>(gradient: &[T], photons: T) -> Result<(Vec<T>, T)> {
    let active: Vec<usize> = (0..gradient.len()).filter(|&i| gradient[i] != T::zero()).collect();
    if active.is_empty() {
        return Err(Error::ZeroGradient("unentangled partition needs a nonzero gradient"));
    }
    let a: Vec<T> = active.iter().map(|&i| gradient[i] * gradient[i]).collect();
    let eval = |w: &[T]| {
        let mut v = T::zero();
        let g = w
            .iter()
            .zip(&a)
            .map(|(&x, &c)| {
                v += c / (x * x);
                -T::lit(2.0) * c / (x * x * x)
            })
            .collect();
        (v, g)
    };
    let min = minimize_on_simplex(eval, vec![T::one(); active.len()], T::lit(SIMPLEX_TOL), SIMPLEX_MAX_ITER)?;
    let mut counts = vec![T::zero(); gradient.len()];
    for (k, &i) in active.iter().enumerate() {
        counts[i] = min.point[k] * photons;
    }
    Ok((counts, min.value / (photons * photons)))
}
