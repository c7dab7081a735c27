//! Field interpolation: fit an ansatz to sensor readings and treat the field
//! at an unsensed point as a function of those readings.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytic_fn::{AnalyticFunction, FamilyTag, ScalarMap};
use crate::bounds::{qubit_bounds, time_mse_coefficients, BoundReport};
use crate::error::{Error, Result};
use crate::experiment::{estimate_mse, AllocationRule, MseEstimate, ProtocolConfig};
use crate::linalg::Matrix;
use crate::protocol::ResourceBudget;
use crate::scalar::{dot, Real};

/// Parametric field model `F(c, x)` over one spatial coordinate.
pub trait Ansatz<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn param_dim(&self) -> usize;
    fn field(&self, c: &[T], x: T) -> T;
    /// `dF/dc` at `x`.
    fn field_gradient(&self, c: &[T], x: T) -> Vec<T>;
}

/// `I(x) = A exp(-2 (x - x0)^2 / w^2)` with `c = (A, x0, w)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianBeam<T: Real> {
    #[serde(skip)]
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> GaussianBeam<T> {
    pub fn new() -> Self {
        Self { _scalar: std::marker::PhantomData }
    }
}

impl<T: Real> Ansatz<T> for GaussianBeam<T> {
    fn name(&self) -> &str {
        "gaussian-beam"
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn field(&self, c: &[T], x: T) -> T {
        let u = x - c[1];
        c[0] * (-T::lit(2.0) * u * u / (c[2] * c[2])).exp()
    }

    fn field_gradient(&self, c: &[T], x: T) -> Vec<T> {
        let (a, w) = (c[0], c[2]);
        let u = x - c[1];
        let e = (-T::lit(2.0) * u * u / (w * w)).exp();
        let four = T::lit(4.0);
        vec![e, a * e * four * u / (w * w), a * e * four * u * u / (w * w * w)]
    }
}

/// Sensor positions and the interpolation target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SensorLayout<T: Real> {
    pub sensors: Vec<T>,
    pub target: T,
}

impl<T: Real> SensorLayout<T> {
    pub fn new(sensors: Vec<T>, target: T) -> Result<Self> {
        let layout = Self { sensors, target };
        if let Some(i) = layout.sensors.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "sensor location", index: i });
        }
        if !target.is_finite() {
            return Err(Error::NonFinite { what: "target location", index: 0 });
        }
        Ok(layout)
    }

    pub fn dim(&self) -> usize {
        self.sensors.len()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(raw.sensors, raw.target)
    }
}

/// Largest accepted condition number of `d theta / d c`.
pub const MAX_CONDITION: f64 = 1e8;

/// Readings `theta_i = F(c, x_i)`.
pub fn forward<T: Real>(ansatz: &dyn Ansatz<T>, c: &[T], layout: &SensorLayout<T>) -> Vec<T> {
    layout.sensors.iter().map(|&x| ansatz.field(c, x)).collect()
}

/// `d theta / d c`, one row per sensor.
pub fn jacobian<T: Real>(ansatz: &dyn Ansatz<T>, c: &[T], layout: &SensorLayout<T>) -> Matrix<T> {
    let p = ansatz.param_dim();
    let mut j = Matrix::zeros(layout.dim(), p);
    for (i, &x) in layout.sensors.iter().enumerate() {
        for (k, v) in ansatz.field_gradient(c, x).into_iter().enumerate() {
            j[(i, k)] = v;
        }
    }
    j
}

/// `d c / d theta`: the inverse for square systems, the left pseudo-inverse
/// `(J^T J)^-1 J^T` otherwise. Rejects ill-conditioned Jacobians.
pub fn jacobian_inverse<T: Real>(j: &Matrix<T>) -> Result<Matrix<T>> {
    if j.rows() < j.cols() {
        return Err(Error::InvalidArgument(format!(
            "{} sensors cannot determine {} ansatz parameters",
            j.rows(),
            j.cols()
        )));
    }
    let (normal, rhs) = if j.is_square() {
        (j.clone(), None)
    } else {
        let jt = j.transpose();
        (jt.matmul(j)?, Some(jt))
    };
    let cond = normal.condition_number()?;
    let limit = T::lit(if j.is_square() { MAX_CONDITION } else { MAX_CONDITION * MAX_CONDITION });
    if !(cond <= limit) {
        return Err(Error::IllConditioned(cond.as_f64(), limit.as_f64()));
    }
    let inv = normal.inverse()?;
    match rhs {
        None => Ok(inv),
        Some(jt) => inv.matmul(&jt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop when the residual norm is at most `tolerance * max(1, |theta|_inf)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FitReport<T: Real> {
    /// Best iterate found.
    pub params: Vec<T>,
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Gauss-Newton fit of `F(c, x_i) = readings_i` (plain Newton when square).
/// A fit that does not reach tolerance returns its best iterate with
/// `converged = false`; a singular Jacobian is an error.
pub fn fit_ansatz<T: Real>(
    ansatz: &dyn Ansatz<T>,
    readings: &[T],
    layout: &SensorLayout<T>,
    c0: &[T],
) -> Result<FitReport<T>> {
    fit_ansatz_with(ansatz, readings, layout, c0, FitOptions::default())
}

pub fn fit_ansatz_with<T: Real>(
    ansatz: &dyn Ansatz<T>,
    readings: &[T],
    layout: &SensorLayout<T>,
    c0: &[T],
    options: FitOptions,
) -> Result<FitReport<T>> {
    if readings.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: readings.len() });
    }
    if c0.len() != ansatz.param_dim() {
        return Err(Error::DimensionMismatch { expected: ansatz.param_dim(), got: c0.len() });
    }
    let scale = readings.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let tol = T::lit(options.tolerance) * scale;
    let residual = |c: &[T]| -> (Vec<T>, T) {
        let r: Vec<T> = forward(ansatz, c, layout).iter().zip(readings).map(|(&f, &y)| f - y).collect();
        let n = dot(&r, &r).sqrt();
        (r, n)
    };
    let mut c = c0.to_vec();
    let (mut r, mut norm) = residual(&c);
    let mut best = FitReport { params: c.clone(), residual_norm: norm, iterations: 0, converged: norm <= tol };
    for it in 1..=options.max_iterations {
        if best.converged {
            break;
        }
        let j = jacobian(ansatz, &c, layout);
        let step = if j.is_square() {
            j.solve(&r)?
        } else {
            let jt = j.transpose();
            jt.matmul(&j)?.solve(&jt.mul_vec(&r)?)?
        };
        for (ck, sk) in c.iter_mut().zip(&step) {
            *ck -= *sk;
        }
        if c.iter().any(|v| !v.is_finite()) {
            break;
        }
        (r, norm) = residual(&c);
        if !norm.is_finite() {
            break;
        }
        if norm < best.residual_norm {
            best = FitReport { params: c.clone(), residual_norm: norm, iterations: it, converged: norm <= tol };
        } else if best.residual_norm <= T::lit(1e-10) * scale {
            // stalled at rounding level
            break;
        }
    }
    Ok(best)
}

/// `G(theta) = F(c(theta), x*)`, with `c(theta)` re-fitted from a fixed
/// starting point on every evaluation.
struct InducedMap<T: Real> {
    ansatz: Arc<dyn Ansatz<T>>,
    layout: SensorLayout<T>,
    start: Vec<T>,
}

impl<T: Real> InducedMap<T> {
    fn solve(&self, theta: &[T]) -> Result<Vec<T>> {
        // Aim below the reporting tolerance so finite differences of the
        // gradient stay clean, and accept anything within it.
        let tight = FitOptions { tolerance: 1e-15, max_iterations: 50 };
        let fit = fit_ansatz_with(self.ansatz.as_ref(), theta, &self.layout, &self.start, tight)?;
        let scale = theta.iter().fold(T::one(), |m, v| m.max(v.abs()));
        if fit.residual_norm > T::lit(FitOptions::default().tolerance) * scale {
            return Err(Error::InvalidArgument(format!(
                "ansatz fit did not converge (residual {})",
                fit.residual_norm
            )));
        }
        Ok(fit.params)
    }
}

impl<T: Real> ScalarMap<T> for InducedMap<T> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn value(&self, theta: &[T]) -> Result<T> {
        let c = self.solve(theta)?;
        Ok(self.ansatz.field(&c, self.layout.target))
    }

    fn provides_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        let c = self.solve(theta)?;
        let inv = jacobian_inverse(&jacobian(self.ansatz.as_ref(), &c, &self.layout))?;
        let df = self.ansatz.field_gradient(&c, self.layout.target);
        Ok((0..self.layout.dim()).map(|j| (0..df.len()).map(|k| df[k] * inv[(k, j)]).sum()).collect())
    }
}

/// The field at the layout's target as a function of the sensor readings,
/// linearized around the parameters `c_ref` (also the root-finder's start).
pub fn induced_function<T: Real>(
    ansatz: Arc<dyn Ansatz<T>>,
    layout: SensorLayout<T>,
    c_ref: Vec<T>,
) -> Result<AnalyticFunction<T>> {
    if c_ref.len() != ansatz.param_dim() {
        return Err(Error::DimensionMismatch { expected: ansatz.param_dim(), got: c_ref.len() });
    }
    jacobian_inverse(&jacobian(ansatz.as_ref(), &c_ref, &layout))?;
    let tag = if ansatz.name() == "gaussian-beam" { FamilyTag::GaussianBeamInduced } else { FamilyTag::UserComposite };
    Ok(AnalyticFunction::induced(Arc::new(InducedMap { ansatz, layout, start: c_ref }), tag))
}

/// Estimate-then-compute scheme: ansatz parameters from the readings, their
/// covariance under independent reading noise, and the propagated field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AnsatzEstimate<T: Real> {
    pub params: Vec<T>,
    pub covariance: Matrix<T>,
    pub field_at_target: T,
    pub field_variance: T,
    pub converged: bool,
}

pub fn estimate_ansatz<T: Real>(
    ansatz: &dyn Ansatz<T>,
    readings: &[T],
    reading_variances: &[T],
    layout: &SensorLayout<T>,
    c0: &[T],
) -> Result<AnsatzEstimate<T>> {
    if reading_variances.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: reading_variances.len() });
    }
    let fit = fit_ansatz(ansatz, readings, layout, c0)?;
    let inv = jacobian_inverse(&jacobian(ansatz, &fit.params, layout))?;
    let p = ansatz.param_dim();
    let mut cov = Matrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            cov[(a, b)] = (0..layout.dim()).map(|i| inv[(a, i)] * reading_variances[i] * inv[(b, i)]).sum();
        }
    }
    let df = ansatz.field_gradient(&fit.params, layout.target);
    let field_variance = dot(&df, &cov.mul_vec(&df)?);
    Ok(AnsatzEstimate {
        field_at_target: ansatz.field(&fit.params, layout.target),
        params: fit.params,
        covariance: cov,
        field_variance,
        converged: fit.converged,
    })
}

/// Direct scheme end to end: both protocols on the induced function.
#[derive(Clone, Debug)]
pub struct InterpolationReport<T: Real> {
    pub theta_true: Vec<T>,
    pub gradient: Vec<T>,
    pub two_step: MseEstimate<T>,
    pub unentangled: MseEstimate<T>,
    /// Closed-form two-step MSE at the chosen split.
    pub predicted_two_step: T,
    pub bounds: BoundReport<T>,
}

pub fn run_interpolation<T: Real>(
    ansatz: Arc<dyn Ansatz<T>>,
    c_true: &[T],
    layout: &SensorLayout<T>,
    time: T,
    rule: AllocationRule<T>,
    trials: usize,
    seed: u64,
) -> Result<InterpolationReport<T>> {
    let theta_true = forward(ansatz.as_ref(), c_true, layout);
    let g = induced_function(ansatz, layout.clone(), c_true.to_vec())?;
    let budget = ResourceBudget::Time(time);
    let plan = rule.plan(&g, &theta_true, &budget)?;
    let predicted_two_step = match plan.split {
        crate::allocation::Split::Time { t1, t2 } => time_mse_coefficients(&g, &theta_true)?.mse_at(t1, t2),
        _ => unreachable!("time budget yields a time split"),
    };
    let two = ProtocolConfig::two_step(g.clone(), theta_true.clone(), budget, plan);
    let two_step = estimate_mse(&two, trials, seed)?;
    let un = ProtocolConfig::unentangled(g.clone(), theta_true.clone(), budget);
    let unentangled = estimate_mse(&un, trials, seed.wrapping_add(1))?;
    Ok(InterpolationReport {
        gradient: g.gradient(&theta_true)?,
        bounds: qubit_bounds(&g, &theta_true, time)?,
        theta_true,
        two_step,
        unentangled,
        predicted_two_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_fn::central_gradient;

    fn beam() -> GaussianBeam<f64> {
        GaussianBeam::new()
    }

    fn layout(target: f64) -> SensorLayout<f64> {
        SensorLayout::new(vec![-1.0, 0.3, 1.2], target).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = [1.3, -0.2, 0.8];
        let l = layout(0.1);
        let j = jacobian(&beam(), &c, &l);
        for (i, &x) in l.sensors.iter().enumerate() {
            let fd = central_gradient(|cc: &[f64]| Ok(beam().field(cc, x)), &c, 1e-5).unwrap();
            for k in 0..3 {
                assert!((fd[k] - j[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let l = layout(0.1);
        let truth = [1.0, 0.0, 1.0];
        let readings = forward(&beam(), &truth, &l);
        let fit = fit_ansatz(&beam(), &readings, &l, &[0.9, 0.1, 1.1]).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbed_readings_follow_linearization() {
        let l = layout(0.1);
        let truth = [1.0, 0.0, 1.0];
        let mut readings = forward(&beam(), &truth, &l);
        readings[1] += 1e-3;
        let fit = fit_ansatz(&beam(), &readings, &l, &truth).unwrap();
        let inv = jacobian_inverse(&jacobian(&beam(), &truth, &l)).unwrap();
        for k in 0..3 {
            let lin = inv[(k, 1)] * 1e-3;
            assert!((fit.params[k] - truth[k] - lin).abs() < 1e-5);
        }
    }

    #[test]
    fn far_start_is_flagged() {
        let l = layout(0.1);
        let readings = forward(&beam(), &[1.0, 0.0, 1.0], &l);
        let fit = fit_ansatz(&beam(), &readings, &l, &[1.0, 3.0, 0.3]);
        match fit {
            Ok(r) => assert!(!r.converged),
            Err(e) => assert!(matches!(e, Error::Singular(_) | Error::IllConditioned(..))),
        }
    }

    #[test]
    fn matrix_identity() {
        let l = layout(0.1);
        let j = jacobian(&beam(), &[1.0, 0.0, 1.0], &l);
        let prod = j.matmul(&jacobian_inverse(&j).unwrap()).unwrap();
        let id = Matrix::<f64>::identity(3);
        for (a, b) in prod.as_slice().iter().zip(id.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn target_at_sensor_is_unit_gradient() {
        let l = layout(0.3);
        let c = vec![1.0, 0.0, 1.0];
        let g = induced_function(Arc::new(beam()), l.clone(), c.clone()).unwrap();
        let theta = forward(&beam(), &c, &l);
        let grad = g.gradient(&theta).unwrap();
        for (k, v) in grad.iter().enumerate() {
            let e = if k == 1 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12, "{grad:?}");
        }
    }

    #[test]
    fn induced_gradient_matches_pipeline() {
        let l = layout(0.1);
        let c = vec![1.0, 0.0, 1.0];
        let g = induced_function(Arc::new(beam()), l.clone(), c.clone()).unwrap();
        let theta = forward(&beam(), &c, &l);
        let fd = central_gradient(|t: &[f64]| g.value(t), &theta, 1e-5).unwrap();
        for (a, b) in g.gradient(&theta).unwrap().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(g.family_tag(), FamilyTag::GaussianBeamInduced);
    }

    #[test]
    fn degenerate_layout_rejected() {
        let l = SensorLayout::new(vec![0.5, 0.5, 0.5], 0.0).unwrap();
        assert!(induced_function(Arc::new(beam()), l, vec![1.0, 0.0, 1.0]).is_err());
        let l = SensorLayout::new(vec![0.5, 0.6], 0.0).unwrap();
        assert!(induced_function(Arc::new(beam()), l, vec![1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn layout_json() {
        let l = SensorLayout::<f64>::from_json(r#"{"sensors": [-1.0, 0.3, 1.2], "target": 0.1}"#).unwrap();
        assert_eq!(l, layout(0.1));
        assert!(SensorLayout::<f64>::from_json(r#"{"sensors": [1.0]}"#).is_err());
    }

    #[test]
    fn overdetermined_fit_and_covariance() {
        let l = SensorLayout::new(vec![-1.0, -0.4, 0.3, 0.8, 1.2], 0.1).unwrap();
        let truth = [1.0, 0.0, 1.0];
        let readings = forward(&beam(), &truth, &l);
        let est = estimate_ansatz(&beam(), &readings, &[1e-4; 5], &l, &[0.9, 0.1, 1.1]).unwrap();
        assert!(est.converged);
        assert!((est.field_at_target - beam().field(&truth, 0.1)).abs() < 1e-9);
        assert!(est.covariance.is_symmetric(1e-15));
        assert!(est.field_variance > 0.0);
    }
}
