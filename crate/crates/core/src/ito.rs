//! Ito linearization.
//!
//! For a C² payoff `P`, Ito's lemma gives `P(S(t))` its own SDE. Appending it to the
//! state yields a `(d+1)`-dimensional system whose payoff is the linear selector of
//! the last component, so the one-step base level has a closed-form mean.

use smallvec::SmallVec;

use crate::brownian::Correlation;
use crate::error::{MlmcError, Result};
use crate::model::SdeSystem;
use crate::payoff::{BuiltinPayoff, Payoff};
use crate::real::Real;

type Scratch<T> = SmallVec<[T; 32]>;

/// The augmented system `(S, P(S))`.
///
/// Drift and diffusion of the last component are
/// `α = Σ a_i P_i + ½ Σ_j Σ_ik b_ij b_kj P_ik` and `β_j = Σ_i b_ij P_i`.
/// Its h-tensor row needs the inner diffusion Jacobian and the payoff Hessian; both are
/// analytic for the built-in models and payoffs.
pub struct ItoAugmented<'a, T, S: ?Sized, P: ?Sized> {
    inner: &'a S,
    payoff: &'a P,
    initial_state: Vec<T>,
}

pub fn augment<'a, T, S, P>(system: &'a S, payoff: &'a P) -> Result<ItoAugmented<'a, T, S, P>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    let d = system.state_dim();
    payoff.check_dim(d)?;
    if !payoff.smoothness().is_twice_differentiable() {
        return Err(MlmcError::Config(
            "Ito linearization needs a payoff with two continuous derivatives; \
             this payoff is only Lipschitz"
                .into(),
        ));
    }
    let s0 = system.initial_state();
    let mut scratch: Scratch<T> = SmallVec::from_elem(T::zero(), d * d.max(1));
    if !payoff.gradient(s0, &mut scratch[..d]) || !payoff.hessian(s0, &mut scratch[..d * d]) {
        return Err(MlmcError::Config(
            "Ito linearization needs the payoff gradient and Hessian".into(),
        ));
    }
    let mut initial_state = s0.to_vec();
    initial_state.push(payoff.value(s0));
    Ok(ItoAugmented {
        inner: system,
        payoff,
        initial_state,
    })
}

impl<'a, T, S, P> ItoAugmented<'a, T, S, P>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    pub fn inner(&self) -> &S {
        self.inner
    }

    /// Dimension of the un-augmented state.
    pub fn inner_dim(&self) -> usize {
        self.inner.state_dim()
    }

    /// The payoff of the augmented problem: its last coordinate.
    pub fn selector(&self) -> BuiltinPayoff<T> {
        BuiltinPayoff::Linear {
            component: self.inner_dim(),
        }
    }

    fn payoff_derivatives(&self, x: &[T], grad: &mut [T], hess: &mut [T]) {
        self.payoff.gradient(x, grad);
        self.payoff.hessian(x, hess);
    }
}

/// `E[P₀] = P(S₀) + α_{d+1}(S₀, 0) T`: the exact mean of the one-step base level.
pub fn base_level_expectation<T, S, P>(aug: &ItoAugmented<'_, T, S, P>, horizon: T) -> T
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    let dim = aug.state_dim();
    let mut a = vec![T::zero(); dim];
    let s0 = aug.initial_state();
    aug.drift(s0, T::zero(), &mut a);
    s0[dim - 1] + a[dim - 1] * horizon
}

impl<'a, T, S, P> SdeSystem<T> for ItoAugmented<'a, T, S, P>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    fn state_dim(&self) -> usize {
        self.inner.state_dim() + 1
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn initial_state(&self) -> &[T] {
        &self.initial_state
    }

    fn horizon(&self) -> T {
        self.inner.horizon()
    }

    fn correlation(&self) -> &Correlation<T> {
        self.inner.correlation()
    }

    fn drift(&self, x: &[T], t: T, out: &mut [T]) {
        let d = self.inner.state_dim();
        let nd = self.inner.noise_dim();
        let s = &x[..d];
        self.inner.drift(s, t, &mut out[..d]);
        let mut b: Scratch<T> = SmallVec::from_elem(T::zero(), d * nd);
        let mut grad: Scratch<T> = SmallVec::from_elem(T::zero(), d);
        let mut hess: Scratch<T> = SmallVec::from_elem(T::zero(), d * d);
        self.inner.diffusion(s, t, &mut b);
        self.payoff_derivatives(s, &mut grad, &mut hess);
        let mut alpha = T::zero();
        for i in 0..d {
            alpha = alpha + out[i] * grad[i];
        }
        let mut second = T::zero();
        for j in 0..nd {
            for i in 0..d {
                let bij = b[i * nd + j];
                if bij == T::zero() {
                    continue;
                }
                for k in 0..d {
                    second = second + bij * b[k * nd + j] * hess[i * d + k];
                }
            }
        }
        out[d] = alpha + T::lit(0.5) * second;
    }

    fn diffusion(&self, x: &[T], t: T, out: &mut [T]) {
        let d = self.inner.state_dim();
        let nd = self.inner.noise_dim();
        let s = &x[..d];
        self.inner.diffusion(s, t, &mut out[..d * nd]);
        let mut grad: Scratch<T> = SmallVec::from_elem(T::zero(), d);
        self.payoff.gradient(s, &mut grad);
        for j in 0..nd {
            let mut beta = T::zero();
            for i in 0..d {
                beta = beta + out[i * nd + j] * grad[i];
            }
            out[d * nd + j] = beta;
        }
    }

    fn diffusion_jacobian(&self, x: &[T], t: T, out: &mut [T]) {
        let d = self.inner.state_dim();
        let nd = self.inner.noise_dim();
        let da = d + 1;
        let s = &x[..d];
        let mut jac: Scratch<T> = SmallVec::from_elem(T::zero(), d * nd * d);
        self.inner.diffusion_jacobian(s, t, &mut jac);
        out.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..d {
            for j in 0..nd {
                for l in 0..d {
                    out[(i * nd + j) * da + l] = jac[(i * nd + j) * d + l];
                }
            }
        }
        let mut b: Scratch<T> = SmallVec::from_elem(T::zero(), d * nd);
        let mut grad: Scratch<T> = SmallVec::from_elem(T::zero(), d);
        let mut hess: Scratch<T> = SmallVec::from_elem(T::zero(), d * d);
        self.inner.diffusion(s, t, &mut b);
        self.payoff_derivatives(s, &mut grad, &mut hess);
        for j in 0..nd {
            for l in 0..d {
                let mut acc = T::zero();
                for i in 0..d {
                    acc = acc + jac[(i * nd + j) * d + l] * grad[i] + b[i * nd + j] * hess[i * d + l];
                }
                out[(d * nd + j) * da + l] = acc;
            }
        }
    }

    fn h_tensor(&self, x: &[T], t: T, out: &mut [T]) {
        let d = self.inner.state_dim();
        let nd = self.inner.noise_dim();
        let s = &x[..d];
        // rows of the inner state are unaffected by the extra coordinate
        self.inner.h_tensor(s, t, &mut out[..d * nd * nd]);

        let mut jac: Scratch<T> = SmallVec::from_elem(T::zero(), d * nd * d);
        let mut b: Scratch<T> = SmallVec::from_elem(T::zero(), d * nd);
        let mut grad: Scratch<T> = SmallVec::from_elem(T::zero(), d);
        let mut hess: Scratch<T> = SmallVec::from_elem(T::zero(), d * d);
        self.inner.diffusion_jacobian(s, t, &mut jac);
        self.inner.diffusion(s, t, &mut b);
        self.payoff_derivatives(s, &mut grad, &mut hess);

        // dbeta[j*d + l] = ∂β_{d+1,j}/∂x_l
        let mut dbeta: Scratch<T> = SmallVec::from_elem(T::zero(), nd * d);
        for j in 0..nd {
            for l in 0..d {
                let mut acc = T::zero();
                for i in 0..d {
                    acc = acc + jac[(i * nd + j) * d + l] * grad[i] + b[i * nd + j] * hess[i * d + l];
                }
                dbeta[j * d + l] = acc;
            }
        }
        let half = T::lit(0.5);
        for j in 0..nd {
            for k in 0..nd {
                let mut acc = T::zero();
                for l in 0..d {
                    acc = acc + b[l * nd + k] * dbeta[j * d + l];
                }
                out[(d * nd + j) * nd + k] = half * acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heston::{gbm_system, heston_default};
    use crate::model::{fd_h_tensor, SdeSystemExt};
    use crate::payoff::{european_call, linear, quadratic, sin_of_component, Smoothness};

    struct Constant;

    impl Payoff<f64> for Constant {
        fn value(&self, _x: &[f64]) -> f64 {
            2.5
        }
        fn smoothness(&self) -> Smoothness {
            Smoothness::C2
        }
        fn gradient(&self, _x: &[f64], out: &mut [f64]) -> bool {
            out.iter_mut().for_each(|v| *v = 0.0);
            true
        }
        fn hessian(&self, _x: &[f64], out: &mut [f64]) -> bool {
            out.iter_mut().for_each(|v| *v = 0.0);
            true
        }
        fn check_dim(&self, _dim: usize) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn heston_sin_augmented_coefficients() {
        let sys = heston_default::<f64>();
        let p = sin_of_component(1);
        let aug = augment(&sys, &p).unwrap();
        let x = [0.5, 1.0, 1f64.sin()];
        let a = aug.drift_vec(&x, 0.0);
        let expected_alpha = 1f64.cos() - 0.5 * 1f64.sin() / 32.0;
        assert!((a[2] - expected_alpha).abs() / expected_alpha < 1e-10);
        assert!((a[2] - 0.527154).abs() < 1e-6);
        let b = aug.diffusion_vec(&x, 0.0);
        assert_eq!(b[4], 0.0);
        let beta32 = 0.25 * 0.5f64.sqrt() * 1f64.cos();
        assert!((b[5] - beta32).abs() / beta32 < 1e-12);
        assert!((b[5] - 0.095513).abs() < 1e-6);
        // inner rows untouched
        assert_eq!(&a[..2], &sys.drift_vec(&x[..2], 0.0)[..]);
        assert_eq!(&b[..4], &sys.diffusion_vec(&x[..2], 0.0)[..]);
        assert_eq!(aug.initial_state()[2], 1f64.sin());
    }

    #[test]
    fn base_level_expectation_values() {
        let sys = heston_default::<f64>();
        let p = sin_of_component(1);
        let aug = augment(&sys, &p).unwrap();
        let e = base_level_expectation(&aug, 0.125);
        let expected = 1f64.sin() + 0.125 * (1f64.cos() - 1f64.sin() / 64.0);
        assert!((e - expected).abs() / expected < 1e-12);
        assert!((e - 0.907365).abs() < 1e-6);
        assert_eq!(base_level_expectation(&aug, 0.0), 1f64.sin());

        let lin = linear(1);
        let aug = augment(&sys, &lin).unwrap();
        assert!((base_level_expectation(&aug, 0.125) - 1.125).abs() < 1e-14);
    }

    #[test]
    fn linear_payoff_copies_component() {
        let sys = heston_default::<f64>();
        let p = linear(1);
        let aug = augment(&sys, &p).unwrap();
        let x = [0.8, 1.4, 1.4];
        let a = aug.drift_vec(&x, 0.0);
        let b = aug.diffusion_vec(&x, 0.0);
        assert_eq!(a[2], a[1]);
        assert_eq!(&b[4..6], &b[2..4]);
    }

    #[test]
    fn constant_payoff_has_frozen_last_component() {
        let sys = heston_default::<f64>();
        let aug = augment(&sys, &Constant).unwrap();
        let x = [0.8, 1.4, 2.5];
        assert_eq!(aug.drift_vec(&x, 0.0)[2], 0.0);
        assert_eq!(&aug.diffusion_vec(&x, 0.0)[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn lipschitz_payoff_rejected() {
        let sys = heston_default::<f64>();
        let p = european_call(1, 1.0);
        let err = augment(&sys, &p).err().unwrap();
        assert!(matches!(err, MlmcError::Config(ref m) if m.contains("two continuous derivatives")));
    }

    #[test]
    fn augmented_h_tensor_matches_finite_differences() {
        let sys = heston_default::<f64>();
        for p in [sin_of_component(1), quadratic(0, 1), linear(1)] {
            let aug = augment(&sys, &p).unwrap();
            for x in [[0.5, 1.0, 0.3], [1.3, 0.4, -0.2], [0.2, 2.5, 1.0]] {
                let h = aug.h_tensor_vec(&x, 0.0);
                let fd = fd_h_tensor(&aug, &x, 0.0);
                for (a, b) in h.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-6), "{a} vs {b}");
                }
            }
        }
        let g = gbm_system(0.3f64, 0.7, 1.0, 1.0).unwrap();
        let q = quadratic(0, 0);
        let aug = augment(&g, &q).unwrap();
        let h = aug.h_tensor_vec(&[1.2, 1.44], 0.0);
        let fd = fd_h_tensor(&aug, &[1.2, 1.44], 0.0);
        for (a, b) in h.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-6));
        }
    }
}
