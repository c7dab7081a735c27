//! Monte Carlo harness: MSE estimates, resource sweeps, scaling fits and the
//! check of the second-order error formula.

mod export;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    fixed_time_split, numeric_time_split, optimal_photon_split, optimal_time_split, power_law_time_split,
    two_thirds_partition, AllocationPlan, Split,
};
use crate::analytic_fn::{AnalyticFunction, Monomial};
use crate::bounds::{
    curvature_residual, photon_bounds, photon_mse_coefficients, qubit_bounds, time_mse_coefficients, CurvatureForm,
    ResourceKind,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measurement::{sample_param_estimates, RngStream};
use crate::protocol::{run_two_step, run_unentangled_with, BaselineWeights, ResourceBudget, TrialResult};
use crate::scalar::{compensated_sum, dot, Real};

pub use export::{
    export, export_csv, export_json, import_csv, import_json, ExportDocument, ExportFormat, ExportMetadata,
    MODELING_ASSUMPTIONS,
};

/// Aggregated squared-error statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MseEstimate<T: Real> {
    pub trials: usize,
    pub mse: T,
    /// One standard error of `mse`, from the sample variance of squared errors.
    pub mse_se: T,
    /// `mean(f~) - f(theta)`
    pub bias: T,
    pub degenerate_trials: usize,
}

impl<T: Real> MseEstimate<T> {
    /// Statistics of the errors `f~ - f(theta)`.
    pub fn from_errors(errors: &[T], degenerate_trials: usize) -> Result<Self> {
        let n = errors.len();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two trials".into()));
        }
        let nt = T::from_count(n);
        let mse = compensated_sum(errors.iter().map(|e| *e * *e)) / nt;
        let bias = compensated_sum(errors.iter().copied()) / nt;
        let var = compensated_sum(errors.iter().map(|e| {
            let d = *e * *e - mse;
            d * d
        })) / T::from_count(n - 1);
        Ok(Self { trials: n, mse, mse_se: (var / nt).sqrt(), bias, degenerate_trials })
    }

    /// `(mse - target) / mse_se`
    pub fn z_score(&self, target: T) -> T {
        z_score(self.mse, target, self.mse_se)
    }
}

fn z_score<T: Real>(value: T, target: T, se: T) -> T {
    if se == T::zero() {
        if value == target {
            T::zero()
        } else {
            T::infinity() * (value - target).signum()
        }
    } else {
        (value - target) / se
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    TwoStep,
    Unentangled,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::TwoStep => "two-step",
            ProtocolKind::Unentangled => "unentangled",
        }
    }
}

/// One fully specified Monte Carlo configuration.
#[derive(Clone, Debug)]
pub struct ProtocolConfig<T: Real> {
    pub protocol: ProtocolKind,
    pub function: AnalyticFunction<T>,
    pub theta: Vec<T>,
    pub budget: ResourceBudget<T>,
    /// Required for the two-step protocol, ignored by the baseline.
    pub plan: Option<AllocationPlan<T>>,
    pub baseline_weights: BaselineWeights<T>,
}

impl<T: Real> ProtocolConfig<T> {
    pub fn two_step(function: AnalyticFunction<T>, theta: Vec<T>, budget: ResourceBudget<T>, plan: AllocationPlan<T>) -> Self {
        Self {
            protocol: ProtocolKind::TwoStep,
            function,
            theta,
            budget,
            plan: Some(plan),
            baseline_weights: BaselineWeights::Oracle,
        }
    }

    pub fn unentangled(function: AnalyticFunction<T>, theta: Vec<T>, budget: ResourceBudget<T>) -> Self {
        Self {
            protocol: ProtocolKind::Unentangled,
            function,
            theta,
            budget,
            plan: None,
            baseline_weights: BaselineWeights::Oracle,
        }
    }

    pub fn run_trial(&self, stream: RngStream) -> Result<TrialResult<T>> {
        let mut rng = stream.rng();
        match self.protocol {
            ProtocolKind::TwoStep => {
                let plan = self
                    .plan
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("the two-step protocol needs an allocation plan".into()))?;
                run_two_step(&self.function, &self.theta, &self.budget, plan, &mut rng)
            }
            ProtocolKind::Unentangled => {
                run_unentangled_with(&self.function, &self.theta, &self.budget, self.baseline_weights, &mut rng)
            }
        }
    }

    /// Closed-form MSE prediction for this configuration.
    pub fn predicted_mse(&self) -> Result<T> {
        let f = &self.function;
        let theta = &self.theta;
        match self.protocol {
            ProtocolKind::TwoStep => {
                let plan = self
                    .plan
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("the two-step protocol needs an allocation plan".into()))?;
                match &plan.split {
                    Split::Time { t1, t2 } => {
                        let pred = time_mse_coefficients(f, theta)?;
                        if plan.skip_step1 {
                            let g = f.gradient(&vec![T::zero(); f.dim()])?;
                            let m = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
                            Ok(m * m / (*t2 * *t2))
                        } else {
                            Ok(pred.mse_at(*t1, *t2))
                        }
                    }
                    Split::Photon { n2, mode_counts, .. } => {
                        let pred = photon_mse_coefficients(f, theta)?;
                        let n2 = T::from_u64(*n2).expect("count fits scalar");
                        if plan.skip_step1 {
                            return Ok(pred.g2 / (n2 * n2));
                        }
                        let counts: Vec<T> =
                            mode_counts.iter().map(|&n| T::from_u64(n).expect("count fits scalar")).collect();
                        Ok(pred.mse_for_counts(&counts, n2))
                    }
                }
            }
            ProtocolKind::Unentangled => {
                let g = f.gradient(theta)?;
                match self.budget {
                    ResourceBudget::Time(t) => Ok(g.iter().map(|v| *v * *v).sum::<T>() / (t * t)),
                    ResourceBudget::Photons(n) => {
                        let counts = two_thirds_partition(&g, n)?;
                        let mut m = T::zero();
                        for (gi, ni) in g.iter().zip(counts) {
                            if *gi != T::zero() {
                                if ni == 0 {
                                    return Ok(T::infinity());
                                }
                                let ni = T::from_u64(ni).expect("count fits scalar");
                                m += *gi * *gi / (ni * ni);
                            }
                        }
                        Ok(m)
                    }
                }
            }
        }
    }

    /// Entangled Cramér-Rao bound at the configuration's resource.
    pub fn entangled_bound(&self) -> Result<T> {
        Ok(match self.budget {
            ResourceBudget::Time(t) => qubit_bounds(&self.function, &self.theta, t)?.entangled_bound,
            ResourceBudget::Photons(_) => {
                photon_bounds(&self.function, &self.theta, self.budget.amount())?.entangled_bound
            }
        })
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: Option<usize>, f: F) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("thread count must be >= 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub const MIN_TRIALS: usize = 100;

/// Runs `trials` independent trials on streams `(seed, 0..trials)`. Results
/// are identical for any degree of parallelism.
pub fn estimate_mse<T: Real>(config: &ProtocolConfig<T>, trials: usize, seed: u64) -> Result<MseEstimate<T>> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!("trials = {trials} is below the minimum of {MIN_TRIALS}")));
    }
    let truth = config.function.value(&config.theta)?;
    let outcomes: Vec<(T, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| config.run_trial(RngStream::new(seed, i)).map(|r| (r.f_est - truth, r.degenerate)))
        .collect::<Result<_>>()?;
    let degenerate = outcomes.iter().filter(|o| o.1).count();
    if degenerate == trials && config.protocol == ProtocolKind::TwoStep {
        return Err(Error::AllDegenerate(trials));
    }
    let errors: Vec<T> = outcomes.into_iter().map(|o| o.0).collect();
    MseEstimate::from_errors(&errors, degenerate)
}

/// Result of [`verify_general_fom`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FomCheck<T: Real> {
    pub empirical: T,
    pub standard_error: T,
    pub predicted: T,
    pub z: T,
}

/// Monte Carlo check of the curvature residual: with Gaussian `theta~` and a
/// noiseless second step, `E[(f(theta~) + grad f(theta~).(theta - theta~) - f(theta))^2]`
/// against `sum_ij C_ij var_i var_j` for the chosen form.
pub fn verify_general_fom<T: Real>(
    f: &AnalyticFunction<T>,
    theta: &[T],
    variances: &[T],
    trials: usize,
    seed: u64,
    form: CurvatureForm,
) -> Result<FomCheck<T>> {
    if variances.len() != f.dim() || theta.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: variances.len().min(theta.len()) });
    }
    let truth = f.value(theta)?;
    let errors: Vec<T> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i).rng();
            let est = sample_param_estimates(theta, variances, &mut rng)?;
            let g = f.gradient(&est)?;
            let delta: Vec<T> = theta.iter().zip(&est).map(|(&a, &b)| a - b).collect();
            Ok(f.value(&est)? + dot(&g, &delta) - truth)
        })
        .collect::<Result<_>>()?;
    let est = MseEstimate::from_errors(&errors, 0)?;
    let predicted = curvature_residual(&f.hessian(theta)?, variances, form);
    Ok(FomCheck { empirical: est.mse, standard_error: est.mse_se, predicted, z: z_score(est.mse, predicted, est.mse_se) })
}

/// A named function and working point used to exercise [`verify_general_fom`].
/// Every entry has curvature scale `|f''| / |f'''| >= 10` at its point, so
/// standard deviations up to 0.1 keep higher-order terms negligible.
pub fn fom_battery() -> Vec<(&'static str, AnalyticFunction<f64>, Vec<f64>)> {
    let m = Monomial::new;
    let poly = |d, terms| AnalyticFunction::polynomial(d, terms).expect("valid battery polynomial");
    vec![
        ("product-2", AnalyticFunction::product(2).expect("d >= 1"), vec![1.0, 1.0]),
        ("square", poly(1, vec![m(1.0, vec![2])]), vec![0.5]),
        ("sum-of-squares", poly(2, vec![m(1.0, vec![2, 0]), m(1.0, vec![0, 2])]), vec![0.3, -0.7]),
        (
            "quadratic-form",
            AnalyticFunction::quadratic(
                Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, -1.0]]).expect("square"),
                vec![1.0, -1.0],
            )
            .expect("symmetric"),
            vec![0.2, 0.4],
        ),
        ("product-3", AnalyticFunction::product(3).expect("d >= 1"), vec![10.0, 10.0, 10.0]),
        ("cube", poly(1, vec![m(1.0, vec![3])]), vec![10.0]),
        ("square-times-linear", poly(2, vec![m(1.0, vec![2, 1])]), vec![10.0, 10.0]),
        ("product-4", AnalyticFunction::product(4).expect("d >= 1"), vec![10.0; 4]),
        ("quartic", poly(1, vec![m(1.0, vec![4])]), vec![20.0]),
        (
            "mixed-cubic",
            poly(3, vec![m(0.5, vec![2, 1, 0]), m(-1.0 / 3.0, vec![0, 3, 0]), m(2.0, vec![1, 0, 1])]),
            vec![10.0, 10.0, 1.0],
        ),
    ]
}

/// Maps a resource amount to an allocation plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "rule", rename_all = "kebab-case")]
pub enum AllocationRule<T: Real> {
    Optimal,
    Numeric,
    PowerLaw { c: T, p: T },
    Fixed { t1: T },
}

impl<T: Real> AllocationRule<T> {
    pub fn plan(&self, f: &AnalyticFunction<T>, theta: &[T], budget: &ResourceBudget<T>) -> Result<AllocationPlan<T>> {
        match (*self, *budget) {
            (AllocationRule::Optimal, ResourceBudget::Time(t)) => optimal_time_split(f, theta, t),
            (AllocationRule::Numeric, ResourceBudget::Time(t)) => numeric_time_split(f, theta, t),
            (AllocationRule::PowerLaw { c, p }, ResourceBudget::Time(t)) => power_law_time_split(c, p, t),
            (AllocationRule::Fixed { t1 }, ResourceBudget::Time(t)) => fixed_time_split(t1, t),
            (AllocationRule::Optimal, ResourceBudget::Photons(n)) => optimal_photon_split(f, theta, n),
            (rule, ResourceBudget::Photons(_)) => Err(Error::InvalidArgument(format!(
                "allocation rule {rule:?} is only defined for time budgets"
            ))),
        }
    }
}

/// One point of a resource sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SweepRecord<T: Real> {
    pub protocol: ProtocolKind,
    pub function: String,
    pub theta: Vec<T>,
    pub resource_kind: ResourceKind,
    pub resource: T,
    pub trials: usize,
    pub mse: T,
    pub mse_se: T,
    pub bias: T,
    pub predicted_mse: T,
    /// Entangled Cramér-Rao bound.
    pub bound: T,
    pub seed: u64,
    pub ms_elapsed: u64,
}

/// What to sweep.
#[derive(Clone, Debug)]
pub struct SweepConfig<T: Real> {
    pub protocol: ProtocolKind,
    pub function: AnalyticFunction<T>,
    pub function_label: String,
    pub theta: Vec<T>,
    pub resource_kind: ResourceKind,
    pub rule: AllocationRule<T>,
    pub baseline_weights: BaselineWeights<T>,
}

/// Seed for grid point `k` of a sweep with master seed `seed`.
pub fn point_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn budget_for<T: Real>(kind: ResourceKind, amount: T) -> Result<ResourceBudget<T>> {
    match kind {
        ResourceKind::QubitTime => Ok(ResourceBudget::Time(amount)),
        ResourceKind::PhotonNumber => {
            if amount.fract() != T::zero() || !(amount > T::zero()) {
                return Err(Error::InvalidArgument(format!("photon number {amount} must be a positive integer")));
            }
            Ok(ResourceBudget::Photons(amount.to_u64().expect("checked positive integer")))
        }
    }
}

/// One MSE estimate per grid point. Predictions and bounds come from the
/// closed forms, never from the samples.
pub fn sweep_resource<T: Real>(
    config: &SweepConfig<T>,
    grid: &[T],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRecord<T>>> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("resource grid must be strictly increasing".into()));
    }
    grid.iter()
        .enumerate()
        .map(|(k, &amount)| {
            let start = Instant::now();
            let budget = budget_for(config.resource_kind, amount)?;
            let plan = match config.protocol {
                ProtocolKind::TwoStep => Some(config.rule.plan(&config.function, &config.theta, &budget)?),
                ProtocolKind::Unentangled => None,
            };
            let pc = ProtocolConfig {
                protocol: config.protocol,
                function: config.function.clone(),
                theta: config.theta.clone(),
                budget,
                plan,
                baseline_weights: config.baseline_weights,
            };
            let s = point_seed(seed, k);
            let est = estimate_mse(&pc, trials, s)?;
            Ok(SweepRecord {
                protocol: config.protocol,
                function: config.function_label.clone(),
                theta: config.theta.clone(),
                resource_kind: config.resource_kind,
                resource: amount,
                trials,
                mse: est.mse,
                mse_se: est.mse_se,
                bias: est.bias,
                predicted_mse: pc.predicted_mse()?,
                bound: pc.entangled_bound()?,
                seed: s,
                ms_elapsed: start.elapsed().as_millis() as u64,
            })
        })
        .collect()
}

/// Least-squares slope of `log(mse)` against `log(resource)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScalingFit<T: Real> {
    pub slope: T,
    pub slope_se: T,
    pub intercept: T,
}

pub fn fit_scaling_exponent<T: Real>(points: &[(T, T)]) -> Result<ScalingFit<T>> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(i) = points.iter().position(|(r, m)| !(*r > T::zero()) || !(*m > T::zero())) {
        return Err(Error::InvalidArgument(format!("point {i} has a nonpositive resource or MSE")));
    }
    let n = T::from_count(points.len());
    let xs: Vec<T> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<T> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|x| (*x - mx) * (*x - mx)).sum();
    if sxx == T::zero() {
        return Err(Error::InvalidArgument("resources must not all be equal".into()));
    }
    let sxy: T = xs.iter().zip(&ys).map(|(x, y)| (*x - mx) * (*y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: T = xs.iter().zip(&ys).map(|(x, y)| {
        let r = *y - intercept - slope * *x;
        r * r
    }).sum();
    let slope_se = (rss / (n - T::lit(2.0)) / sxx).sqrt();
    Ok(ScalingFit { slope, slope_se, intercept })
}

pub fn fit_sweep<T: Real>(records: &[SweepRecord<T>]) -> Result<ScalingFit<T>> {
    fit_scaling_exponent(&records.iter().map(|r| (r.resource, r.mse)).collect::<Vec<_>>())
}
