//! Payoffs: scalar functionals of the terminal state.

use crate::error::{MlmcError, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Twice continuously differentiable.
    C2,
    /// Lipschitz but not differentiable everywhere; cannot be Ito-linearized.
    Lipschitz,
    Linear,
}

impl Smoothness {
    pub fn is_twice_differentiable(self) -> bool {
        matches!(self, Smoothness::C2 | Smoothness::Linear)
    }
}

pub trait Payoff<T: Real>: Send + Sync {
    fn value(&self, x: &[T]) -> T;

    fn smoothness(&self) -> Smoothness;

    /// Writes `∂P/∂x_i` into `out`; returns `false` if the payoff has no gradient.
    fn gradient(&self, x: &[T], out: &mut [T]) -> bool;

    /// Writes the row-major `d × d` Hessian into `out`; returns `false` if unavailable.
    fn hessian(&self, x: &[T], out: &mut [T]) -> bool;

    /// Rejects payoffs that read components outside a `dim`-dimensional state.
    fn check_dim(&self, dim: usize) -> Result<()>;
}

/// The payoffs shipped with the crate. Component indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinPayoff<T> {
    /// `max(0, S_c − K)`.
    EuropeanCall { component: usize, strike: T },
    /// `sin S_c`.
    Sin { component: usize },
    /// `S_c`, the coordinate selector.
    Linear { component: usize },
    /// `S_i S_j`.
    Quadratic { i: usize, j: usize },
}

pub fn european_call<T: Real>(component: usize, strike: T) -> BuiltinPayoff<T> {
    BuiltinPayoff::EuropeanCall { component, strike }
}

pub fn sin_of_component<T: Real>(component: usize) -> BuiltinPayoff<T> {
    BuiltinPayoff::Sin { component }
}

pub fn linear<T: Real>(component: usize) -> BuiltinPayoff<T> {
    BuiltinPayoff::Linear { component }
}

pub fn quadratic<T: Real>(i: usize, j: usize) -> BuiltinPayoff<T> {
    BuiltinPayoff::Quadratic { i, j }
}

/// Named constructors: `call`, `sin`, `linear`, `quadratic`.
///
/// `component` is used by all four (as `i = j = component` for `quadratic`);
/// `strike` only by `call`.
pub fn builtin_payoff<T: Real>(name: &str, component: usize, strike: T) -> Result<BuiltinPayoff<T>> {
    Ok(match name {
        "call" | "european_call" => european_call(component, strike),
        "sin" | "sin_of_component" => sin_of_component(component),
        "linear" => linear(component),
        "quadratic" => quadratic(component, component),
        other => return Err(MlmcError::Config(format!("unknown payoff `{other}`"))),
    })
}

impl<T: Real> Payoff<T> for BuiltinPayoff<T> {
    #[inline]
    fn value(&self, x: &[T]) -> T {
        match *self {
            BuiltinPayoff::EuropeanCall { component, strike } => (x[component] - strike).max(T::zero()),
            BuiltinPayoff::Sin { component } => x[component].sin(),
            BuiltinPayoff::Linear { component } => x[component],
            BuiltinPayoff::Quadratic { i, j } => x[i] * x[j],
        }
    }

    fn smoothness(&self) -> Smoothness {
        match self {
            BuiltinPayoff::EuropeanCall { .. } => Smoothness::Lipschitz,
            BuiltinPayoff::Sin { .. } | BuiltinPayoff::Quadratic { .. } => Smoothness::C2,
            BuiltinPayoff::Linear { .. } => Smoothness::Linear,
        }
    }

    fn gradient(&self, x: &[T], out: &mut [T]) -> bool {
        out.iter_mut().for_each(|v| *v = T::zero());
        match *self {
            BuiltinPayoff::EuropeanCall { .. } => return false,
            BuiltinPayoff::Sin { component } => out[component] = x[component].cos(),
            BuiltinPayoff::Linear { component } => out[component] = T::one(),
            BuiltinPayoff::Quadratic { i, j } => {
                out[i] = out[i] + x[j];
                out[j] = out[j] + x[i];
            }
        }
        true
    }

    fn hessian(&self, x: &[T], out: &mut [T]) -> bool {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = T::zero());
        match *self {
            BuiltinPayoff::EuropeanCall { .. } => return false,
            BuiltinPayoff::Sin { component } => {
                out[component * d + component] = -x[component].sin();
            }
            BuiltinPayoff::Linear { .. } => {}
            BuiltinPayoff::Quadratic { i, j } => {
                out[i * d + j] = out[i * d + j] + T::one();
                out[j * d + i] = out[j * d + i] + T::one();
            }
        }
        true
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let max_index = match *self {
            BuiltinPayoff::EuropeanCall { component, .. }
            | BuiltinPayoff::Sin { component }
            | BuiltinPayoff::Linear { component } => component,
            BuiltinPayoff::Quadratic { i, j } => i.max(j),
        };
        if max_index >= dim {
            return Err(MlmcError::Dimension(format!(
                "payoff reads component {max_index} of a {dim}-dimensional state"
            )));
        }
        Ok(())
    }
}
