//! Real analytic functions of `d` parameters with derivative access up to third
//! order.
//!
//! Closed-form families (linear, product, quadratic, polynomial) provide exact
//! derivatives. Functions defined only through a value rule, or a value and
//! gradient rule, get the missing orders from central differences and are
//! flagged as approximate.

mod finite_diff;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

pub use finite_diff::{
    central_gradient, central_hessian, central_hessian_from_gradient, central_third,
    central_third_from_gradient, finite_diff_validate, FdSteps,
};

/// Above this dimension only the `f_{j* i i}` slice of the third-derivative tensor
/// is materialized.
pub const FULL_THIRD_TENSOR_MAX_DIM: usize = 16;

/// Point in parameter space. Non-empty, all entries finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "Vec<T>", into = "Vec<T>")]
pub struct ParamVector<T: Real>(Vec<T>);

impl<T: Real> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("parameter vector must have d >= 1".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "parameter vector", index });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T: Real> TryFrom<Vec<T>> for ParamVector<T> {
    type Error = Error;
    fn try_from(v: Vec<T>) -> Result<Self> {
        Self::new(v)
    }
}

impl<T: Real> From<ParamVector<T>> for Vec<T> {
    fn from(p: ParamVector<T>) -> Vec<T> {
        p.0
    }
}

impl<T: Real> std::ops::Deref for ParamVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// A scalar map defined by code rather than by a closed form.
pub trait ScalarMap<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[T]) -> Result<T>;
    /// Whether [`ScalarMap::gradient`] is an analytic rule rather than the
    /// finite-difference default.
    fn provides_gradient(&self) -> bool {
        false
    }
    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        central_gradient(|y| self.value(y), x, FdSteps::default().gradient)
    }
}

/// `coefficient * prod_i x_i^powers[i]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Monomial<T: Real> {
    pub coefficient: T,
    pub powers: Vec<u32>,
}

impl<T: Real> Monomial<T> {
    pub fn new(coefficient: T, powers: Vec<u32>) -> Self {
        Self { coefficient, powers }
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    /// Mixed partial derivative along the index multiset `idx`.
    fn derivative(&self, x: &[T], idx: &[usize]) -> T {
        let mut out = self.coefficient;
        for (v, &p) in self.powers.iter().enumerate() {
            let k = idx.iter().filter(|&&i| i == v).count() as u32;
            if k > p {
                return T::zero();
            }
            for m in 0..k {
                out *= T::from_count((p - m) as usize);
            }
            let rest = p - k;
            if rest > 0 {
                out *= x[v].powi(rest as i32);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    Linear,
    Product,
    Quadratic,
    Polynomial,
    GaussianBeamInduced,
    UserComposite,
}

#[derive(Clone)]
enum Family<T: Real> {
    Linear { weights: Vec<T>, offset: T },
    Product { dim: usize },
    Quadratic { a: Matrix<T>, b: Vec<T> },
    Polynomial { dim: usize, terms: Vec<Monomial<T>> },
    Map { tag: FamilyTag, map: Arc<dyn ScalarMap<T>> },
}

/// An analytic scalar function of `d` real parameters.
#[derive(Clone)]
pub struct AnalyticFunction<T: Real> {
    family: Family<T>,
}

impl<T: Real> fmt::Debug for AnalyticFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticFunction")
            .field("family", &self.family_tag())
            .field("dim", &self.dim())
            .finish()
    }
}

/// Third derivatives: the whole tensor, or for large `d` just `f_{j i i}` for
/// the steepest coordinate `j`.
#[derive(Clone, Debug, PartialEq)]
pub enum ThirdDerivatives<T: Real> {
    Full(Tensor3<T>),
    DiagonalSlice { index: usize, values: Vec<T> },
}

impl<T: Real> ThirdDerivatives<T> {
    /// `sum_i f_{j i i}`, when the slice for `j` is available.
    pub fn diagonal_sum(&self, j: usize) -> Option<T> {
        match self {
            ThirdDerivatives::Full(t) => Some((0..t.dim()).map(|i| t[(j, i, i)]).sum()),
            ThirdDerivatives::DiagonalSlice { index, values } if *index == j => {
                Some(values.iter().copied().sum())
            }
            ThirdDerivatives::DiagonalSlice { .. } => None,
        }
    }
}

/// Dense symmetric rank-3 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T: Real> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![T::zero(); dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Fill from a rule on sorted index triples, mirroring to every permutation.
    fn from_symmetric_rule(dim: usize, mut rule: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    let v = rule(i, j, k);
                    for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                        t[(a, b, c)] = v;
                    }
                }
            }
        }
        t
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| {
                (0..d).all(|k| {
                    let v = self[(i, j, k)];
                    [(i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)]
                        .iter()
                        .all(|&p| (self[p] - v).abs() <= tol)
                })
            })
        })
    }
}

impl<T: Real> std::ops::Index<(usize, usize, usize)> for Tensor3<T> {
    type Output = T;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &T {
        &self.data[(i * self.dim + j) * self.dim + k]
    }
}

impl<T: Real> std::ops::IndexMut<(usize, usize, usize)> for Tensor3<T> {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut T {
        &mut self.data[(i * self.dim + j) * self.dim + k]
    }
}

/// Derivatives up to a requested order.
#[derive(Clone, Debug)]
pub struct Derivatives<T: Real> {
    pub value: T,
    pub gradient: Option<Vec<T>>,
    pub hessian: Option<Matrix<T>>,
    pub third: Option<ThirdDerivatives<T>>,
    /// True when any returned order came from finite differences.
    pub approximate: bool,
}

/// Result of [`argmax_grad_index`]. `index` is zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientArgmax {
    pub index: usize,
    pub zero_gradient: bool,
}

/// Index maximizing `|g_j|`, ties to the lowest index. An identically zero
/// gradient yields index 0 with the flag set.
pub fn argmax_grad_index<T: Real>(gradient: &[T]) -> GradientArgmax {
    let mut best = 0;
    let mut best_abs = T::zero();
    for (j, g) in gradient.iter().enumerate() {
        if g.abs() > best_abs {
            best = j;
            best_abs = g.abs();
        }
    }
    GradientArgmax { index: best, zero_gradient: best_abs == T::zero() }
}

fn check_finite<T: Real>(what: &'static str, values: &[T]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

impl<T: Real> AnalyticFunction<T> {
    pub fn linear(weights: Vec<T>) -> Result<Self> {
        Self::linear_with_offset(weights, T::zero())
    }

    pub fn linear_with_offset(weights: Vec<T>, offset: T) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("linear function needs at least one weight".into()));
        }
        check_finite("linear weights", &weights)?;
        Ok(Self { family: Family::Linear { weights, offset } })
    }

    /// `prod_i theta_i`
    pub fn product(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("product function needs d >= 1".into()));
        }
        Ok(Self { family: Family::Product { dim } })
    }

    /// `theta^T A theta + b^T theta`
    pub fn quadratic(a: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() || b.is_empty() {
            return Err(Error::DimensionMismatch { expected: a.rows(), got: b.len() });
        }
        check_finite("quadratic matrix", a.as_slice())?;
        check_finite("quadratic vector", &b)?;
        Ok(Self { family: Family::Quadratic { a, b } })
    }

    pub fn polynomial(dim: usize, terms: Vec<Monomial<T>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("polynomial needs d >= 1".into()));
        }
        if let Some(t) = terms.iter().find(|t| t.powers.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: t.powers.len() });
        }
        Ok(Self { family: Family::Polynomial { dim, terms } })
    }

    /// User function known only through a value rule; every derivative comes
    /// from finite differences.
    pub fn composite(map: Arc<dyn ScalarMap<T>>) -> Self {
        Self { family: Family::Map { tag: FamilyTag::UserComposite, map } }
    }

    pub(crate) fn induced(map: Arc<dyn ScalarMap<T>>, tag: FamilyTag) -> Self {
        Self { family: Family::Map { tag, map } }
    }

    pub fn family_tag(&self) -> FamilyTag {
        match &self.family {
            Family::Linear { .. } => FamilyTag::Linear,
            Family::Product { .. } => FamilyTag::Product,
            Family::Quadratic { .. } => FamilyTag::Quadratic,
            Family::Polynomial { .. } => FamilyTag::Polynomial,
            Family::Map { tag, .. } => *tag,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Linear { weights, .. } => weights.len(),
            Family::Product { dim } | Family::Polynomial { dim, .. } => *dim,
            Family::Quadratic { b, .. } => b.len(),
            Family::Map { map, .. } => map.dim(),
        }
    }

    /// True when derivatives are exact closed forms.
    pub fn is_closed_form(&self) -> bool {
        !matches!(self.family, Family::Map { .. })
    }

    /// True when the gradient does not depend on the point (affine function).
    pub fn has_constant_gradient(&self) -> bool {
        match &self.family {
            Family::Linear { .. } => true,
            Family::Product { dim } => *dim == 1,
            Family::Quadratic { a, .. } => a.as_slice().iter().all(|x| *x == T::zero()),
            Family::Polynomial { terms, .. } => {
                terms.iter().all(|t| t.degree() <= 1 || t.coefficient == T::zero())
            }
            Family::Map { .. } => false,
        }
    }

    fn check_dim(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    pub fn value(&self, theta: &[T]) -> Result<T> {
        self.check_dim(theta)?;
        let v = match &self.family {
            Family::Linear { weights, offset } => crate::scalar::dot(weights, theta) + *offset,
            Family::Product { .. } => theta.iter().copied().fold(T::one(), |a, b| a * b),
            Family::Quadratic { a, b } => {
                let at = a.mul_vec(theta)?;
                crate::scalar::dot(theta, &at) + crate::scalar::dot(b, theta)
            }
            Family::Polynomial { terms, .. } => terms.iter().map(|t| t.derivative(theta, &[])).sum(),
            Family::Map { map, .. } => map.value(theta)?,
        };
        check_finite("value", &[v])?;
        Ok(v)
    }

    pub fn gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        self.check_dim(theta)?;
        let d = self.dim();
        let g = match &self.family {
            Family::Linear { weights, .. } => weights.clone(),
            Family::Product { .. } => (0..d).map(|i| product_excluding(theta, &[i])).collect(),
            Family::Quadratic { a, b } => (0..d)
                .map(|i| b[i] + (0..d).map(|j| (a[(i, j)] + a[(j, i)]) * theta[j]).sum::<T>())
                .collect(),
            Family::Polynomial { terms, .. } => (0..d)
                .map(|i| terms.iter().map(|t| t.derivative(theta, &[i])).sum())
                .collect(),
            Family::Map { map, .. } => map.gradient(theta)?,
        };
        check_finite("gradient", &g)?;
        Ok(g)
    }

    pub fn hessian(&self, theta: &[T]) -> Result<Matrix<T>> {
        self.check_dim(theta)?;
        let d = self.dim();
        let steps = FdSteps::default();
        let h = match &self.family {
            Family::Linear { .. } => Matrix::zeros(d, d),
            Family::Product { .. } => symmetric_matrix(d, |i, j| {
                if i == j {
                    T::zero()
                } else {
                    product_excluding(theta, &[i, j])
                }
            }),
            Family::Quadratic { a, .. } => symmetric_matrix(d, |i, j| a[(i, j)] + a[(j, i)]),
            Family::Polynomial { terms, .. } => {
                symmetric_matrix(d, |i, j| terms.iter().map(|t| t.derivative(theta, &[i, j])).sum())
            }
            Family::Map { map, .. } => {
                let scale = T::one() + self.gradient(theta)?.iter().fold(T::zero(), |m, g| m.max(g.abs()));
                let (mut h, floor) = if map.provides_gradient() {
                    (central_hessian_from_gradient(|x| map.gradient(x), theta, steps.hessian)?, T::lit(1e-8) * scale)
                } else {
                    let v = map.value(theta)?.abs();
                    (central_hessian(|x| map.value(x), theta, steps.hessian)?, T::lit(1e-6) * (scale + v))
                };
                // entries at the differencing noise level are taken as exact zeros
                for i in 0..d {
                    for j in 0..d {
                        if h[(i, j)].abs() < floor {
                            h[(i, j)] = T::zero();
                        }
                    }
                }
                h
            }
        };
        check_finite("hessian", h.as_slice())?;
        Ok(h)
    }

    /// Full third-derivative tensor.
    pub fn third_tensor(&self, theta: &[T]) -> Result<Tensor3<T>> {
        self.check_dim(theta)?;
        let d = self.dim();
        let steps = FdSteps::default();
        let t = match &self.family {
            Family::Linear { .. } | Family::Quadratic { .. } => Tensor3::zeros(d),
            Family::Product { .. } => Tensor3::from_symmetric_rule(d, |i, j, k| {
                if i == j || j == k {
                    T::zero()
                } else {
                    product_excluding(theta, &[i, j, k])
                }
            }),
            Family::Polynomial { terms, .. } => Tensor3::from_symmetric_rule(d, |i, j, k| {
                terms.iter().map(|t| t.derivative(theta, &[i, j, k])).sum()
            }),
            Family::Map { map, .. } => {
                if map.provides_gradient() {
                    central_third_from_gradient(|x| map.gradient(x), theta, steps.third)?
                } else {
                    central_third(|x| map.value(x), theta, steps.third)?
                }
            }
        };
        check_finite("third derivatives", t.as_slice())?;
        Ok(t)
    }

    /// `f_{j i i}` for every `i`.
    pub fn third_diagonal_slice(&self, theta: &[T], j: usize) -> Result<Vec<T>> {
        self.check_dim(theta)?;
        let d = self.dim();
        if j >= d {
            return Err(Error::InvalidArgument(format!("slice index {j} out of range for d={d}")));
        }
        let s = match &self.family {
            // f_{jii} always repeats an index, which kills every product term
            Family::Linear { .. } | Family::Quadratic { .. } | Family::Product { .. } => {
                vec![T::zero(); d]
            }
            Family::Polynomial { terms, .. } => (0..d)
                .map(|i| terms.iter().map(|t| t.derivative(theta, &[j, i, i])).sum())
                .collect(),
            Family::Map { .. } if d <= FULL_THIRD_TENSOR_MAX_DIM => {
                let t = self.third_tensor(theta)?;
                (0..d).map(|i| t[(j, i, i)]).collect()
            }
            Family::Map { map, .. } => {
                let h = FdSteps::default().third;
                finite_diff::third_diagonal_slice(|x| map.value(x), theta, j, h)?
            }
        };
        check_finite("third derivative slice", &s)?;
        Ok(s)
    }

    /// Value and derivatives up to `order` (0..=3).
    pub fn eval_all(&self, theta: &[T], order: u8) -> Result<Derivatives<T>> {
        if order > 3 {
            return Err(Error::InvalidArgument(format!("derivative order {order} not supported")));
        }
        let value = self.value(theta)?;
        let gradient = if order >= 1 { Some(self.gradient(theta)?) } else { None };
        let hessian = if order >= 2 { Some(self.hessian(theta)?) } else { None };
        let third = if order >= 3 {
            if self.dim() <= FULL_THIRD_TENSOR_MAX_DIM {
                Some(ThirdDerivatives::Full(self.third_tensor(theta)?))
            } else {
                let g = gradient.as_deref().expect("gradient computed for order 3");
                let index = argmax_grad_index(g).index;
                Some(ThirdDerivatives::DiagonalSlice {
                    index,
                    values: self.third_diagonal_slice(theta, index)?,
                })
            }
        } else {
            None
        };
        let approximate = order >= 1 && !self.is_closed_form();
        Ok(Derivatives { value, gradient, hessian, third, approximate })
    }
}

fn product_excluding<T: Real>(theta: &[T], skip: &[usize]) -> T {
    theta
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .fold(T::one(), |acc, (_, &x)| acc * x)
}

fn symmetric_matrix<T: Real>(d: usize, mut rule: impl FnMut(usize, usize) -> T) -> Matrix<T> {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = rule(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}
