//! Single estimation runs: the two-step entangled protocol and the unentangled
//! baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{two_thirds_partition, AllocationPlan, Split};
use crate::analytic_fn::AnalyticFunction;
use crate::bounds::ResourceKind;
use crate::error::{Error, Result};
use crate::measurement::{lincomb_variance, sample_param_estimates, LincombResource};
use crate::scalar::{dot, max_abs, Real};

/// Total resource available to one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "kebab-case")]
pub enum ResourceBudget<T: Real> {
    Time(T),
    Photons(u64),
}

impl<T: Real> ResourceBudget<T> {
    pub fn kind(&self) -> ResourceKind {
        match self {
            ResourceBudget::Time(_) => ResourceKind::QubitTime,
            ResourceBudget::Photons(_) => ResourceKind::PhotonNumber,
        }
    }

    pub fn amount(&self) -> T {
        match self {
            ResourceBudget::Time(t) => *t,
            ResourceBudget::Photons(n) => T::from_u64(*n).expect("count fits scalar"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ResourceBudget::Time(t) => *t > T::zero() && t.is_finite(),
            ResourceBudget::Photons(n) => *n > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonPositiveResource(self.amount().as_f64()))
        }
    }

    /// Checks that a plan spends exactly this budget.
    pub fn check_plan(&self, plan: &AllocationPlan<T>) -> Result<()> {
        self.validate()?;
        plan.validate()?;
        let consistent = match (self, &plan.split) {
            (ResourceBudget::Time(t), Split::Time { .. }) => {
                (plan.total() - *t).abs() <= T::lit(1e-12) * *t * T::lit(4.0)
            }
            (ResourceBudget::Photons(n), Split::Photon { n1, n2, .. }) => n1 + n2 == *n,
            _ => false,
        };
        if consistent {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "allocation totals {} but the {} budget is {}",
                plan.total(),
                self.kind().as_str(),
                self.amount()
            )))
        }
    }
}

/// Resources actually spent by a run. Unentangled runs report everything
/// under step 1.
pub type Spent<T> = Split<T>;

/// Outcome of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrialResult<T: Real> {
    /// Step-1 parameter estimates.
    pub theta_est: Vec<T>,
    /// Gradient at the step-1 estimates, used as GHZ weights.
    pub alpha: Vec<T>,
    pub q_est: T,
    pub f_est: T,
    /// Step 2 was skipped because the gradient at `theta_est` vanished.
    pub degenerate: bool,
    pub spent: Spent<T>,
}

fn check_theta<T: Real>(f: &AnalyticFunction<T>, theta: &[T]) -> Result<()> {
    if theta.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: theta.len() });
    }
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "theta", index: i });
    }
    Ok(())
}

fn count<T: Real>(n: u64) -> T {
    T::from_u64(n).expect("count fits scalar")
}

/// Per-mode variances `1 / n_i^2`. A mode with no photons keeps its true value
/// if `f` does not depend on it there and is an error otherwise.
fn photon_step1<T: Real, R: Rng + ?Sized>(
    theta: &[T],
    gradient_at_truth: &[T],
    counts: &[u64],
    rng: &mut R,
) -> Result<Vec<T>> {
    if counts.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: counts.len() });
    }
    let mut variances = Vec::with_capacity(counts.len());
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            if gradient_at_truth[i] != T::zero() {
                return Err(Error::InfiniteVariance { index: i });
            }
            variances.push(T::zero());
        } else {
            let n = count::<T>(n);
            variances.push(T::one() / (n * n));
        }
    }
    sample_param_estimates(theta, &variances, rng)
}

/// Below this the step-2 weights are treated as zero.
pub const TINY_GRADIENT: f64 = 1e-12;

/// Two-step protocol: local estimates `theta~`, then a GHZ measurement of
/// `q = grad f(theta~) . (theta - theta~)`; the estimate is `f(theta~) + q~`.
/// When step 1 is skipped, `theta~` is the zero vector.
pub fn run_two_step<T: Real, R: Rng + ?Sized>(
    f: &AnalyticFunction<T>,
    theta: &[T],
    budget: &ResourceBudget<T>,
    plan: &AllocationPlan<T>,
    rng: &mut R,
) -> Result<TrialResult<T>> {
    check_theta(f, theta)?;
    budget.check_plan(plan)?;
    let d = f.dim();
    let (theta_est, step2) = match &plan.split {
        Split::Time { t1, t2 } => {
            let est = if plan.skip_step1 {
                vec![T::zero(); d]
            } else {
                let v = T::one() / (*t1 * *t1);
                sample_param_estimates(theta, &vec![v; d], rng)?
            };
            (est, LincombResource::Time(*t2))
        }
        Split::Photon { n2, mode_counts, .. } => {
            let est = if plan.skip_step1 {
                vec![T::zero(); d]
            } else {
                photon_step1(theta, &f.gradient(theta)?, mode_counts, rng)?
            };
            (est, LincombResource::Photons(count(*n2)))
        }
    };
    let base = f.value(&theta_est)?;
    let alpha = f.gradient(&theta_est)?;
    if max_abs(&alpha) < T::lit(TINY_GRADIENT) * (T::one() + base.abs()) {
        return Ok(TrialResult {
            theta_est,
            alpha,
            q_est: T::zero(),
            f_est: base,
            degenerate: true,
            spent: plan.split.clone(),
        });
    }
    let sd = lincomb_variance(&alpha, step2)?.sqrt();
    let delta: Vec<T> = theta.iter().zip(&theta_est).map(|(&a, &b)| a - b).collect();
    let q_est = dot(&alpha, &delta) + sd * T::standard_normal(rng);
    let f_est = base + q_est;
    if !f_est.is_finite() {
        return Err(Error::NonFinite { what: "estimate", index: 0 });
    }
    Ok(TrialResult { theta_est, alpha, q_est, f_est, degenerate: false, spent: plan.split.clone() })
}

/// How the unentangled photon baseline learns its `|f_i|^(2/3)` weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "kebab-case")]
pub enum BaselineWeights<T: Real> {
    /// Gradient at the true point (default).
    Oracle,
    /// Spend this fraction of the photons uniformly on a pilot estimate, take
    /// the weights from the pilot, and discard the pilot data.
    Pilot(T),
}

/// Unentangled baseline with oracle weights.
pub fn run_unentangled<T: Real, R: Rng + ?Sized>(
    f: &AnalyticFunction<T>,
    theta: &[T],
    budget: &ResourceBudget<T>,
    rng: &mut R,
) -> Result<TrialResult<T>> {
    run_unentangled_with(f, theta, budget, BaselineWeights::Oracle, rng)
}

/// Each parameter estimated on its own: qubits over the full time, photon
/// modes with `n_i ∝ |f_i|^(2/3)`. The estimate is `f(theta~)`.
pub fn run_unentangled_with<T: Real, R: Rng + ?Sized>(
    f: &AnalyticFunction<T>,
    theta: &[T],
    budget: &ResourceBudget<T>,
    weights: BaselineWeights<T>,
    rng: &mut R,
) -> Result<TrialResult<T>> {
    check_theta(f, theta)?;
    budget.validate()?;
    let d = f.dim();
    let (theta_est, spent) = match *budget {
        ResourceBudget::Time(t) => {
            let v = T::one() / (t * t);
            (sample_param_estimates(theta, &vec![v; d], rng)?, Split::Time { t1: t, t2: T::zero() })
        }
        ResourceBudget::Photons(n) => {
            let truth_grad = f.gradient(theta)?;
            let (weights_grad, main) = match weights {
                BaselineWeights::Oracle => (truth_grad.clone(), n),
                BaselineWeights::Pilot(frac) => {
                    if !(frac > T::zero() && frac < T::one()) {
                        return Err(Error::InvalidArgument(format!("pilot fraction {frac} outside (0, 1)")));
                    }
                    let pilot = (count::<T>(n) * frac).floor().to_u64().unwrap_or(0);
                    if (pilot as usize) < d || pilot >= n {
                        return Err(Error::InvalidArgument(format!(
                            "pilot of {pilot} photons cannot cover {d} modes and leave a remainder"
                        )));
                    }
                    let pilot_counts = largest_uniform(d, pilot);
                    let est = photon_step1(theta, &vec![T::one(); d], &pilot_counts, rng)?;
                    (f.gradient(&est)?, n - pilot)
                }
            };
            let counts = two_thirds_partition(&weights_grad, main)?;
            let est = photon_step1(theta, &truth_grad, &counts, rng)?;
            (est, Split::Photon { n1: main, n2: 0, mode_counts: counts })
        }
    };
    let f_est = f.value(&theta_est)?;
    Ok(TrialResult { theta_est, alpha: Vec::new(), q_est: T::zero(), f_est, degenerate: false, spent })
}

fn largest_uniform(d: usize, total: u64) -> Vec<u64> {
    let base = total / d as u64;
    let extra = (total % d as u64) as usize;
    (0..d).map(|i| base + u64::from(i < extra)).collect()
}
