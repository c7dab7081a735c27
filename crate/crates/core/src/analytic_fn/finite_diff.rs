//! Central-difference stencils and the exact-vs-numeric derivative check.
//!
//! Every stencil scales its step per coordinate as `h * max(1, |x_i|)`.

use super::AnalyticFunction;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

use super::Tensor3;

/// Base step per derivative order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSteps {
    pub gradient: f64,
    pub hessian: f64,
    pub third: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { gradient: 1e-5, hessian: 1e-4, third: 1e-3 }
    }
}

fn scaled_steps<T: Real>(x: &[T], base: f64) -> Vec<T> {
    let h = T::lit(base);
    x.iter().map(|v| h * v.abs().max(T::one())).collect()
}

fn shifted<T: Real>(x: &[T], moves: &[(usize, T)]) -> Vec<T> {
    let mut y = x.to_vec();
    for &(i, dx) in moves {
        y[i] += dx;
    }
    y
}

pub fn central_gradient<T: Real, F>(f: F, x: &[T], base: f64) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> Result<T>,
{
    let h = scaled_steps(x, base);
    let two = T::lit(2.0);
    (0..x.len())
        .map(|i| {
            let up = f(&shifted(x, &[(i, h[i])]))?;
            let down = f(&shifted(x, &[(i, -h[i])]))?;
            Ok((up - down) / (two * h[i]))
        })
        .collect()
}

/// Hessian from values alone: the four-point mixed stencil, which collapses to
/// `(f(x+2h) - 2f(x) + f(x-2h)) / 4h^2` on the diagonal.
pub fn central_hessian<T: Real, F>(f: F, x: &[T], base: f64) -> Result<Matrix<T>>
where
    F: Fn(&[T]) -> Result<T>,
{
    let d = x.len();
    let h = scaled_steps(x, base);
    let four = T::lit(4.0);
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = T::zero();
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let v = f(&shifted(x, &[(i, T::lit(si) * h[i]), (j, T::lit(sj) * h[j])]))?;
                acc += T::lit(si * sj) * v;
            }
            let v = acc / (four * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Hessian as the symmetrized Jacobian of a gradient rule.
pub fn central_hessian_from_gradient<T: Real, G>(g: G, x: &[T], base: f64) -> Result<Matrix<T>>
where
    G: Fn(&[T]) -> Result<Vec<T>>,
{
    let d = x.len();
    let h = scaled_steps(x, base);
    let two = T::lit(2.0);
    let mut jac = Matrix::zeros(d, d);
    for j in 0..d {
        let up = g(&shifted(x, &[(j, h[j])]))?;
        let down = g(&shifted(x, &[(j, -h[j])]))?;
        for i in 0..d {
            jac[(i, j)] = (up[i] - down[i]) / (two * h[j]);
        }
    }
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = (jac[(i, j)] + jac[(j, i)]) / two;
        }
    }
    Ok(out)
}

/// Third derivatives from values: the eight-point product of central stencils.
pub fn central_third<T: Real, F>(f: F, x: &[T], base: f64) -> Result<Tensor3<T>>
where
    F: Fn(&[T]) -> Result<T>,
{
    let h = scaled_steps(x, base);
    let mut err = None;
    let t = Tensor3::from_symmetric_rule(x.len(), |i, j, k| {
        match third_entry(&f, x, &h, i, j, k) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                T::zero()
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(t),
    }
}

fn third_entry<T: Real, F>(f: &F, x: &[T], h: &[T], i: usize, j: usize, k: usize) -> Result<T>
where
    F: Fn(&[T]) -> Result<T>,
{
    let mut acc = T::zero();
    for si in [1.0, -1.0] {
        for sj in [1.0, -1.0] {
            for sk in [1.0, -1.0] {
                let v = f(&shifted(
                    x,
                    &[(i, T::lit(si) * h[i]), (j, T::lit(sj) * h[j]), (k, T::lit(sk) * h[k])],
                ))?;
                acc += T::lit(si * sj * sk) * v;
            }
        }
    }
    Ok(acc / (T::lit(8.0) * h[i] * h[j] * h[k]))
}

/// `f_{j i i}` for all `i`, from values.
pub(crate) fn third_diagonal_slice<T: Real, F>(f: F, x: &[T], j: usize, base: f64) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> Result<T>,
{
    let h = scaled_steps(x, base);
    (0..x.len()).map(|i| third_entry(&f, x, &h, j, i, i)).collect()
}

/// Third derivatives as the Hessian (four-point stencil) of each gradient
/// component, symmetrized over index permutations.
pub fn central_third_from_gradient<T: Real, G>(g: G, x: &[T], base: f64) -> Result<Tensor3<T>>
where
    G: Fn(&[T]) -> Result<Vec<T>>,
{
    let d = x.len();
    let h = scaled_steps(x, base);
    let four = T::lit(4.0);
    // raw[(i, j, k)] approximates d^2 g_i / dx_j dx_k
    let mut raw = Tensor3::zeros(d);
    for j in 0..d {
        for k in j..d {
            let mut acc = vec![T::zero(); d];
            for (sj, sk) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let v = g(&shifted(x, &[(j, T::lit(sj) * h[j]), (k, T::lit(sk) * h[k])]))?;
                for i in 0..d {
                    acc[i] += T::lit(sj * sk) * v[i];
                }
            }
            for i in 0..d {
                let v = acc[i] / (four * h[j] * h[k]);
                raw[(i, j, k)] = v;
                raw[(i, k, j)] = v;
            }
        }
    }
    let three = T::lit(3.0);
    Ok(Tensor3::from_symmetric_rule(d, |i, j, k| (raw[(i, j, k)] + raw[(j, i, k)] + raw[(k, i, j)]) / three))
}

/// Maximum absolute deviation between the function's own derivatives of the
/// given order and central differences of its value rule.
pub fn finite_diff_validate<T: Real>(f: &AnalyticFunction<T>, theta: &[T], order: u8) -> Result<T> {
    let steps = FdSteps::default();
    let value = |x: &[T]| f.value(x);
    let dev = |a: &[T], b: &[T]| {
        a.iter().zip(b).fold(T::zero(), |m, (&p, &q)| m.max((p - q).abs()))
    };
    match order {
        0 => Ok(T::zero()),
        1 => Ok(dev(&f.gradient(theta)?, &central_gradient(value, theta, steps.gradient)?)),
        2 => Ok(dev(
            f.hessian(theta)?.as_slice(),
            central_hessian(value, theta, steps.hessian)?.as_slice(),
        )),
        3 => Ok(dev(
            f.third_tensor(theta)?.as_slice(),
            central_third(value, theta, steps.third)?.as_slice(),
        )),
        _ => Err(Error::InvalidArgument(format!("derivative order {order} not supported"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_fn::Monomial;

    #[test]
    fn product_gradient_agrees() {
        let f = AnalyticFunction::product(2).unwrap();
        assert!(finite_diff_validate(&f, &[1.0, 1.0], 1).unwrap() < 1e-8);
    }

    #[test]
    fn linear_hessian_vanishes() {
        let f = AnalyticFunction::linear(vec![3.0, 4.0]).unwrap();
        assert!(finite_diff_validate(&f, &[0.3, -2.0], 2).unwrap() < 1e-6);
    }

    #[test]
    fn square_second_derivative() {
        let f = AnalyticFunction::polynomial(1, vec![Monomial::new(1.0, vec![2])]).unwrap();
        assert_eq!(f.hessian(&[2.0]).unwrap()[(0, 0)], 2.0);
        assert!(finite_diff_validate(&f, &[2.0], 2).unwrap() < 1e-6);
    }

    #[test]
    fn third_order_for_cubic_polynomial() {
        let f = AnalyticFunction::polynomial(
            2,
            vec![Monomial::new(0.5, vec![3, 0]), Monomial::new(-1.0, vec![1, 2])],
        )
        .unwrap();
        assert!(finite_diff_validate(&f, &[0.7, 1.3], 3).unwrap() < 1e-5);
    }

    #[test]
    fn gradient_route_agrees_with_value_route() {
        let f = AnalyticFunction::product(3).unwrap();
        let x = [1.5, -0.5, 2.0];
        let a: Tensor3<f64> = central_third_from_gradient(|y| f.gradient(y), &x, 1e-3).unwrap();
        let b = f.third_tensor(&x).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
        let h = central_hessian_from_gradient(|y| f.gradient(y), &x, 1e-4).unwrap();
        assert!(h.is_symmetric(0.0));
    }
}
