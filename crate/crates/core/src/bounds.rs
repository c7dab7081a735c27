//! Closed-form error bounds and predicted mean squared errors.
//!
//! Qubit sensors accumulating phase for time `t`:
//! * entangled (quantum Cramér-Rao) bound `max_j f_j^2 / t^2`
//! * unentangled baseline `||grad f||_2^2 / t^2`
//!
//! Photons through interferometers with `N` total photons:
//! * entangled bound `||grad f||_1^2 / N^2` (conjectured optimal)
//! * unentangled baseline `||grad f||_{2/3}^2 / N^2`
//!
//! The two-step protocol's finite-resource error adds a curvature residual
//! `sum_ij (2 f_ij^2 + f_ii f_jj) / 4 * Var_i * Var_j` left over from the local
//! estimates.

use serde::{Deserialize, Serialize};

use crate::analytic_fn::{argmax_grad_index, AnalyticFunction};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    QubitTime,
    PhotonNumber,
}

impl ResourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::QubitTime => "qubit-time",
            ResourceKind::PhotonNumber => "photon-number",
        }
    }
}

/// Entangled bound against the unentangled baseline for one resource amount.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoundReport<T: Real> {
    pub entangled_bound: T,
    pub unentangled_baseline: T,
    /// `unentangled_baseline / entangled_bound`; 1 at a zero gradient.
    pub advantage_ratio: T,
    pub resource_kind: ResourceKind,
    pub resource: T,
    /// Gradient identically zero: both numbers are 0.
    pub degenerate: bool,
    /// The photon-number entangled bound rests on an unproven optimality
    /// conjecture for weighted GHZ states.
    pub conjectured: bool,
}

fn check_resource<T: Real>(amount: T) -> Result<()> {
    if !(amount > T::zero()) || !amount.is_finite() {
        return Err(Error::NonPositiveResource(amount.as_f64()));
    }
    Ok(())
}

fn report<T: Real>(bound: T, baseline: T, kind: ResourceKind, resource: T) -> BoundReport<T> {
    let degenerate = bound == T::zero();
    BoundReport {
        entangled_bound: bound,
        unentangled_baseline: baseline,
        advantage_ratio: if degenerate { T::one() } else { baseline / bound },
        resource_kind: kind,
        resource,
        degenerate,
        conjectured: kind == ResourceKind::PhotonNumber,
    }
}

pub fn l1_norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2_norm_squared<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

/// `(sum_i |v_i|^{2/3})^{3/2}`
pub fn two_thirds_quasi_norm<T: Real>(v: &[T]) -> T {
    let two_thirds = T::lit(2.0 / 3.0);
    v.iter()
        .map(|x| if *x == T::zero() { T::zero() } else { x.abs().powf(two_thirds) })
        .sum::<T>()
        .powf(T::lit(1.5))
}

pub fn qubit_bounds_from_gradient<T: Real>(gradient: &[T], time: T) -> Result<BoundReport<T>> {
    check_resource(time)?;
    let j = argmax_grad_index(gradient).index;
    let t2 = time * time;
    let bound = gradient[j] * gradient[j] / t2;
    let baseline = l2_norm_squared(gradient) / t2;
    Ok(report(bound, baseline, ResourceKind::QubitTime, time))
}

pub fn qubit_bounds<T: Real>(f: &AnalyticFunction<T>, theta: &[T], time: T) -> Result<BoundReport<T>> {
    check_resource(time)?;
    qubit_bounds_from_gradient(&f.gradient(theta)?, time)
}

pub fn photon_bounds_from_gradient<T: Real>(gradient: &[T], photons: T) -> Result<BoundReport<T>> {
    check_resource(photons)?;
    let n2 = photons * photons;
    let l1 = l1_norm(gradient);
    let q = two_thirds_quasi_norm(gradient);
    Ok(report(l1 * l1 / n2, q * q / n2, ResourceKind::PhotonNumber, photons))
}

pub fn photon_bounds<T: Real>(f: &AnalyticFunction<T>, theta: &[T], photons: T) -> Result<BoundReport<T>> {
    check_resource(photons)?;
    photon_bounds_from_gradient(&f.gradient(theta)?, photons)
}

/// Coordinate system `(f, f_2, ..., f_d)` around a point, held as the Jacobian
/// `J_ij = d f_i / d theta_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateBasis<T: Real> {
    jacobian: Matrix<T>,
}

impl<T: Real> CoordinateBasis<T> {
    pub fn new(jacobian: Matrix<T>) -> Result<Self> {
        if !jacobian.is_square() {
            return Err(Error::DimensionMismatch { expected: jacobian.rows(), got: jacobian.cols() });
        }
        Ok(Self { jacobian })
    }

    /// Rows: the gradient of `f` followed by the gradients of `auxiliary`.
    pub fn from_functions(
        f: &AnalyticFunction<T>,
        auxiliary: &[AnalyticFunction<T>],
        theta: &[T],
    ) -> Result<Self> {
        let mut rows = vec![f.gradient(theta)?];
        for g in auxiliary {
            rows.push(g.gradient(theta)?);
        }
        Self::new(Matrix::from_rows(&rows)?)
    }

    /// `(f, theta_k for k != j*)`: attains the seminorm lower bound.
    pub fn optimal(f: &AnalyticFunction<T>, theta: &[T]) -> Result<Self> {
        let g = f.gradient(theta)?;
        let arg = argmax_grad_index(&g);
        if arg.zero_gradient {
            return Err(Error::ZeroGradient("no coordinate basis contains a flat f"));
        }
        let d = g.len();
        let mut rows = vec![g];
        for k in (0..d).filter(|&k| k != arg.index) {
            let mut e = vec![T::zero(); d];
            e[k] = T::one();
            rows.push(e);
        }
        Self::new(Matrix::from_rows(&rows)?)
    }

    pub fn jacobian(&self) -> &Matrix<T> {
        &self.jacobian
    }

    /// `1 / max_j |J_1j|`, the floor no basis can beat.
    pub fn seminorm_lower_bound(&self) -> T {
        T::one() / crate::scalar::max_abs(self.jacobian.row(0))
    }
}

/// Generator seminorm `sum_i |(J^{-1})_{i1}|` for the given coordinates.
pub fn seminorm_for_basis<T: Real>(basis: &CoordinateBasis<T>) -> Result<T> {
    let inv = basis.jacobian.inverse()?;
    Ok((0..inv.rows()).map(|i| inv[(i, 0)].abs()).sum())
}

/// Which curvature coefficient to use in the residual term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureForm {
    /// `(2 f_ij^2 + f_ii f_jj) / 4`, what the Gaussian fourth-moment algebra gives.
    Squared,
    /// `(2 f_ij + f_ii f_jj) / 4`, the unsquared variant; kept so the Monte Carlo
    /// check can show it is wrong.
    AsPrinted,
}

/// `C_ij` such that the residual is `sum_ij C_ij Var_i Var_j`.
pub fn curvature_coefficients<T: Real>(hessian: &Matrix<T>, form: CurvatureForm) -> Matrix<T> {
    let d = hessian.rows();
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let mut c = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let h = hessian[(i, j)];
            let off = match form {
                CurvatureForm::Squared => two * h * h,
                CurvatureForm::AsPrinted => two * h,
            };
            c[(i, j)] = (off + hessian[(i, i)] * hessian[(j, j)]) / four;
        }
    }
    c
}

pub fn curvature_residual<T: Real>(hessian: &Matrix<T>, variances: &[T], form: CurvatureForm) -> T {
    let c = curvature_coefficients(hessian, form);
    let d = variances.len();
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| c[(i, j)] * variances[i] * variances[j])
        .sum()
}

/// Predicted two-step MSE: the linear-combination variance plus the curvature
/// residual of Gaussian local estimates.
pub fn two_step_prediction<T: Real>(
    f: &AnalyticFunction<T>,
    theta: &[T],
    variances: &[T],
    lincomb_variance: T,
    form: CurvatureForm,
) -> Result<T> {
    if variances.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: variances.len() });
    }
    if let Some(i) = variances.iter().position(|v| *v < T::zero() || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance {i} must be finite and >= 0")));
    }
    if variances.iter().all(|v| *v == T::zero()) {
        return Ok(lincomb_variance);
    }
    let h = f.hessian(theta)?;
    Ok(lincomb_variance + curvature_residual(&h, variances, form))
}

/// Coefficients of the qubit-time two-step MSE
/// `g2 / t2^2 + g3 / (t1^2 t2^2) + g1 / t1^4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TwoStepPrediction<T: Real> {
    pub g1: T,
    pub g2: T,
    pub g3: T,
    /// Zero-based index of the steepest coordinate at the true point.
    pub steepest: usize,
    /// Second largest `|f_i|`. When it sits within a few step-1 standard
    /// deviations of `|f_{j*}|` the fixed-index expansion underestimates the
    /// step-2 weight by a term first order in `1 / t1`.
    pub runner_up: T,
    /// Gradient identically zero.
    pub degenerate: bool,
}

impl<T: Real> TwoStepPrediction<T> {
    /// Predicted MSE for a split. Terms with a zero coefficient are dropped so
    /// `t1 = 0` is valid for affine functions.
    pub fn mse_at(&self, t1: T, t2: T) -> T {
        let mut m = self.g2 / (t2 * t2);
        if self.g3 != T::zero() {
            m += self.g3 / (t1 * t1 * t2 * t2);
        }
        if self.g1 != T::zero() {
            m += self.g1 / (t1 * t1 * t1 * t1);
        }
        m
    }
}

/// `g2 = f_{j*}^2`, `g3 = f_{j*} sum_i f_{j* i i} + sum_i f_{j* i}^2`,
/// `g1 = sum_ij (2 f_ij^2 + f_ii f_jj) / 4`, all at the true point and with the
/// maximum over coordinates expanded at the fixed index `j*`.
pub fn time_mse_coefficients<T: Real>(f: &AnalyticFunction<T>, theta: &[T]) -> Result<TwoStepPrediction<T>> {
    let d = f.eval_all(theta, 3)?;
    let grad = d.gradient.expect("order 3 includes gradient");
    let hess = d.hessian.expect("order 3 includes hessian");
    let third = d.third.expect("order 3 includes third derivatives");
    let arg = argmax_grad_index(&grad);
    let j = arg.index;
    let g2 = grad[j] * grad[j];
    let third_sum = match third.diagonal_sum(j) {
        Some(s) => s,
        None => f.third_diagonal_slice(theta, j)?.into_iter().sum(),
    };
    let g3 = grad[j] * third_sum + hess.row(j).iter().map(|&h| h * h).sum::<T>();
    let ones = vec![T::one(); grad.len()];
    let g1 = curvature_residual(&hess, &ones, CurvatureForm::Squared);
    let runner_up = grad
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .fold(T::zero(), |m, (_, g)| m.max(g.abs()));
    Ok(TwoStepPrediction { g1, g2, g3, steepest: j, runner_up, degenerate: arg.zero_gradient })
}

/// Photon-number analogue of [`TwoStepPrediction`]. Step 1 puts `n_k` photons in
/// mode `k`, step 2 uses `N2` photons on the weighted GHZ state.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonPrediction<T: Real> {
    /// `||grad f||_1^2`
    pub g2: T,
    /// Per-mode coefficients of `1 / (n_k^2 N2^2)`.
    pub mode_coefficients: Vec<T>,
    /// Curvature residual matrix `C_ij`, entering as `C_ij / (n_i^2 n_j^2)`.
    pub curvature: Matrix<T>,
    pub degenerate: bool,
}

impl<T: Real> PhotonPrediction<T> {
    pub fn dim(&self) -> usize {
        self.mode_coefficients.len()
    }

    /// `sum_ij C_ij / (n_i^2 n_j^2)`
    pub fn curvature_term(&self, counts: &[T]) -> T {
        let d = self.dim();
        let mut s = T::zero();
        for i in 0..d {
            for j in 0..d {
                let c = self.curvature[(i, j)];
                if c != T::zero() {
                    s += c / (counts[i] * counts[i] * counts[j] * counts[j]);
                }
            }
        }
        s
    }

    pub fn mse_for_counts(&self, step1_counts: &[T], n2: T) -> T {
        let mut m = self.g2 / (n2 * n2);
        for (a, n) in self.mode_coefficients.iter().zip(step1_counts) {
            if *a != T::zero() {
                m += *a / (*n * *n * n2 * n2);
            }
        }
        m + self.curvature_term(step1_counts)
    }

    /// Collapse to the qubit-time form for step-1 ratios `w` (summing to 1):
    /// `g1_eff = sum C_ij / (w_i^2 w_j^2)`, `g3_eff = sum_k a_k / w_k^2`.
    pub fn effective(&self, ratios: &[T]) -> TwoStepPrediction<T> {
        let g1 = self.curvature_term(ratios);
        let g3 = self
            .mode_coefficients
            .iter()
            .zip(ratios)
            .filter(|(a, _)| **a != T::zero())
            .map(|(&a, &w)| a / (w * w))
            .sum();
        TwoStepPrediction { g1, g2: self.g2, g3, steepest: 0, runner_up: T::zero(), degenerate: self.degenerate }
    }
}

/// Coefficients for the photon two-step MSE. The `||.||_1` of the gradient at
/// the step-1 estimate is expanded around the true point with the sign pattern
/// held fixed; coordinates with `f_i = 0` contribute no sign.
pub fn photon_mse_coefficients<T: Real>(f: &AnalyticFunction<T>, theta: &[T]) -> Result<PhotonPrediction<T>> {
    let grad = f.gradient(theta)?;
    let hess = f.hessian(theta)?;
    let third = f.third_tensor(theta)?;
    let d = grad.len();
    let sign: Vec<T> = grad
        .iter()
        .map(|g| if *g == T::zero() { T::zero() } else { g.signum() })
        .collect();
    let s0 = l1_norm(&grad);
    let mode_coefficients = (0..d)
        .map(|k| {
            let curv: T = (0..d).map(|i| sign[i] * third[(i, k, k)]).sum();
            let slope: T = (0..d).map(|i| sign[i] * hess[(i, k)]).sum();
            s0 * curv + slope * slope
        })
        .collect();
    Ok(PhotonPrediction {
        g2: s0 * s0,
        mode_coefficients,
        curvature: curvature_coefficients(&hess, CurvatureForm::Squared),
        degenerate: s0 == T::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_fn::Monomial;
    use approx::assert_relative_eq;

    #[test]
    fn qubit_bounds_examples() {
        let r = qubit_bounds_from_gradient(&[3.0, 4.0], 10.0).unwrap();
        assert_relative_eq!(r.entangled_bound, 0.16, max_relative = 1e-15);
        assert_relative_eq!(r.unentangled_baseline, 0.25, max_relative = 1e-15);
        assert_relative_eq!(r.advantage_ratio, 1.5625, max_relative = 1e-15);

        let r = qubit_bounds_from_gradient(&[1.0; 4], 1.0).unwrap();
        assert_eq!((r.entangled_bound, r.unentangled_baseline, r.advantage_ratio), (1.0, 4.0, 4.0));

        let r = qubit_bounds_from_gradient(&[5.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!((r.entangled_bound, r.unentangled_baseline, r.advantage_ratio), (25.0, 25.0, 1.0));
    }

    #[test]
    fn qubit_bounds_reject_nonpositive_time() {
        assert!(matches!(qubit_bounds_from_gradient(&[1.0], 0.0), Err(Error::NonPositiveResource(_))));
        assert!(matches!(qubit_bounds_from_gradient(&[1.0], -2.0), Err(Error::NonPositiveResource(_))));
    }

    #[test]
    fn zero_gradient_is_degenerate_not_an_error() {
        let r = qubit_bounds_from_gradient(&[0.0, 0.0], 3.0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.advantage_ratio, 1.0);
        assert_eq!(r.entangled_bound, 0.0);
    }

    #[test]
    fn photon_bounds_examples() {
        let f = AnalyticFunction::linear(vec![1.0, 1.0]).unwrap();
        let r = photon_bounds(&f, &[0.2, 0.3], 10.0).unwrap();
        assert_relative_eq!(r.entangled_bound, 0.04, max_relative = 1e-15);
        assert!(r.conjectured);

        let r = photon_bounds_from_gradient(&[1.0, 8.0], 100.0).unwrap();
        assert_relative_eq!(r.entangled_bound, 81.0 / 1e4, max_relative = 1e-14);
        assert_relative_eq!(r.unentangled_baseline, 125.0 / 1e4, max_relative = 1e-14);

        for n in [1.0, 17.0, 1e6] {
            let r = photon_bounds_from_gradient(&[1.0, 1.0], n).unwrap();
            assert_relative_eq!(r.advantage_ratio, 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn seminorm_examples() {
        let j = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let b = CoordinateBasis::new(j).unwrap();
        assert_relative_eq!(seminorm_for_basis(&b).unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(b.seminorm_lower_bound(), 0.5);

        let j = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = CoordinateBasis::new(j).unwrap();
        assert_relative_eq!(seminorm_for_basis(&b).unwrap(), 1.0, max_relative = 1e-15);

        let b = CoordinateBasis::new(Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(seminorm_for_basis(&b).unwrap(), 1.0);
    }

    #[test]
    fn optimal_basis_attains_lower_bound() {
        let f = AnalyticFunction::linear(vec![2.0, 1.0]).unwrap();
        let b = CoordinateBasis::optimal(&f, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(seminorm_for_basis(&b).unwrap(), 0.5, max_relative = 1e-15);

        let aux = [AnalyticFunction::linear(vec![1.0, 0.0]).unwrap()];
        let b = CoordinateBasis::from_functions(&f, &aux, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(seminorm_for_basis(&b).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn singular_basis_is_an_error() {
        let j = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(seminorm_for_basis(&CoordinateBasis::new(j).unwrap()), Err(Error::Singular(_))));
    }

    #[test]
    fn two_step_prediction_examples() {
        let sq = AnalyticFunction::polynomial(1, vec![Monomial::new(1.0, vec![2])]).unwrap();
        let p = two_step_prediction(&sq, &[0.7], &[0.01], 0.5, CurvatureForm::Squared).unwrap();
        assert_relative_eq!(p - 0.5, 3e-4, max_relative = 1e-12);

        let lin = AnalyticFunction::linear(vec![3.0, -1.0]).unwrap();
        let p = two_step_prediction(&lin, &[1.0, 2.0], &[0.3, 0.2], 0.25, CurvatureForm::Squared).unwrap();
        assert_eq!(p, 0.25);

        let prod = AnalyticFunction::product(2).unwrap();
        let s = 0.004;
        let p = two_step_prediction(&prod, &[1.0, 1.0], &[s, s], 0.1, CurvatureForm::Squared).unwrap();
        assert_relative_eq!(p - 0.1, s * s, max_relative = 1e-12);
    }

    #[test]
    fn squared_and_printed_forms_differ_when_hessian_entries_are_not_unit() {
        let sq = AnalyticFunction::polynomial(1, vec![Monomial::new(1.0, vec![2])]).unwrap();
        let h = sq.hessian(&[0.0]).unwrap();
        assert_eq!(curvature_residual(&h, &[1.0], CurvatureForm::Squared), 3.0);
        assert_eq!(curvature_residual(&h, &[1.0], CurvatureForm::AsPrinted), 2.0);
    }

    #[test]
    fn product_time_coefficients() {
        let f = AnalyticFunction::product(2).unwrap();
        let c = time_mse_coefficients(&f, &[1.0, 1.0]).unwrap();
        assert_eq!((c.g1, c.g2, c.g3), (1.0, 1.0, 1.0));
        let m = c.mse_at(100.0, 900.0);
        let expect = 1.0 / 810_000.0 + 1.0 / (1e4 * 810_000.0) + 1e-8;
        assert_relative_eq!(m, expect, max_relative = 1e-14);
        assert_relative_eq!(m, 1.24469e-6, max_relative = 1e-5);
    }

    #[test]
    fn linear_time_coefficients() {
        let f = AnalyticFunction::linear(vec![3.0, -4.0]).unwrap();
        let c = time_mse_coefficients(&f, &[0.1, 0.2]).unwrap();
        assert_eq!((c.g1, c.g3, c.g2), (0.0, 0.0, 16.0));
        assert_eq!(c.mse_at(0.0, 10.0), 0.16);
    }

    #[test]
    fn zero_gradient_flags_degenerate_coefficients() {
        let f = AnalyticFunction::polynomial(
            2,
            vec![Monomial::new(1.0, vec![2, 0]), Monomial::new(1.0, vec![0, 2])],
        )
        .unwrap();
        let c = time_mse_coefficients(&f, &[0.0, 0.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.g2, 0.0);
    }

    #[test]
    fn photon_coefficients_for_product() {
        let f = AnalyticFunction::product(2).unwrap();
        let p = photon_mse_coefficients(&f, &[1.0, 1.0]).unwrap();
        assert_eq!(p.g2, 4.0);
        // slope_k = sum_i f_ik = 1, curvature terms vanish
        assert_eq!(p.mode_coefficients, vec![1.0, 1.0]);
        assert_eq!(p.curvature_term(&[0.5, 0.5]), 16.0);
        let eff = p.effective(&[0.5, 0.5]);
        assert_eq!((eff.g1, eff.g3), (16.0, 8.0));
    }
}
