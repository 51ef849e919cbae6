//! Heston stochastic volatility model and geometric Brownian motion.

use crate::brownian::Correlation;
use crate::error::{MlmcError, Result};
use crate::model::SdeSystem;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams<T> {
    /// Mean reversion rate of the volatility.
    pub kappa: T,
    /// Long-run volatility level.
    pub theta: T,
    /// Volatility of volatility.
    pub xi: T,
    /// Asset drift.
    pub mu: T,
    /// Asset diffusion scale.
    pub eta: T,
}

impl<T: Real> Default for HestonParams<T> {
    fn default() -> Self {
        Self {
            kappa: T::one(),
            theta: T::one(),
            xi: T::one(),
            mu: T::one(),
            eta: T::lit(0.25),
        }
    }
}

/// Volatility `S₁` and asset price `S₂`:
///
/// ```text
/// dS₁ = κ(θ − S₁) dt + ξ √S₁ dW₁
/// dS₂ = μ S₂ dt + η √S₁ S₂ dW₂
/// ```
///
/// `√S₁` is evaluated as `√max(S₁, 0)`; below zero the diffusion, its Jacobian and the
/// h-tensor all vanish.
#[derive(Debug, Clone)]
pub struct Heston<T> {
    params: HestonParams<T>,
    initial_state: [T; 2],
    horizon: T,
    correlation: Correlation<T>,
}

/// The test configuration used throughout: `θ = μ = ξ = κ = 1`, `η = 1/4`,
/// `S₀ = (0.5, 1)`, `T = 0.125`.
pub fn heston_default<T: Real>() -> Heston<T> {
    heston_system(HestonParams::default(), [T::lit(0.5), T::one()], T::lit(0.125))
        .expect("default Heston parameters are valid")
}

pub fn heston_system<T: Real>(
    params: HestonParams<T>,
    initial_state: [T; 2],
    horizon: T,
) -> Result<Heston<T>> {
    let HestonParams {
        kappa,
        theta,
        xi,
        mu,
        eta,
    } = params;
    if [kappa, theta, xi, mu, eta, horizon].iter().any(|v| !v.is_finite()) {
        return Err(MlmcError::Domain("Heston parameters must be finite".into()));
    }
    if !(initial_state[0] > T::zero()) {
        return Err(MlmcError::Domain(format!(
            "initial volatility must be positive, got {}",
            initial_state[0]
        )));
    }
    if !(initial_state[1] > T::zero()) {
        return Err(MlmcError::Domain(format!(
            "initial asset price must be positive, got {}",
            initial_state[1]
        )));
    }
    if horizon < T::zero() {
        return Err(MlmcError::Domain("horizon must be nonnegative".into()));
    }
    Ok(Heston {
        params,
        initial_state,
        horizon,
        correlation: Correlation::identity(2),
    })
}

impl<T: Real> Heston<T> {
    pub fn params(&self) -> &HestonParams<T> {
        &self.params
    }

    pub fn with_correlation(mut self, correlation: Correlation<T>) -> Result<Self> {
        if correlation.dim() != 2 {
            return Err(MlmcError::Dimension("Heston correlation must be 2x2".into()));
        }
        self.correlation = correlation;
        Ok(self)
    }
}

impl<T: Real> SdeSystem<T> for Heston<T> {
    fn state_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> &[T] {
        &self.initial_state
    }

    fn horizon(&self) -> T {
        self.horizon
    }

    fn correlation(&self) -> &Correlation<T> {
        &self.correlation
    }

    #[inline]
    fn drift(&self, x: &[T], _t: T, out: &mut [T]) {
        let p = &self.params;
        out[0] = p.kappa * (p.theta - x[0]);
        out[1] = p.mu * x[1];
    }

    #[inline]
    fn diffusion(&self, x: &[T], _t: T, out: &mut [T]) {
        let p = &self.params;
        let vol = x[0].max(T::zero()).sqrt();
        out[0] = p.xi * vol;
        out[1] = T::zero();
        out[2] = T::zero();
        out[3] = p.eta * vol * x[1];
    }

    fn diffusion_jacobian(&self, x: &[T], _t: T, out: &mut [T]) {
        let p = &self.params;
        out.iter_mut().for_each(|v| *v = T::zero());
        if x[0] <= T::zero() {
            return;
        }
        let vol = x[0].sqrt();
        let half = T::lit(0.5);
        // (i, j, l) -> (i*2 + j)*2 + l
        out[0] = half * p.xi / vol;
        out[6] = half * p.eta * x[1] / vol;
        out[7] = p.eta * vol;
    }

    #[inline]
    fn h_tensor(&self, x: &[T], _t: T, out: &mut [T]) {
        let p = &self.params;
        out.iter_mut().for_each(|v| *v = T::zero());
        if x[0] <= T::zero() {
            return;
        }
        let quarter = T::lit(0.25);
        // (i, j, k) -> (i*2 + j)*2 + k
        out[0] = quarter * p.xi * p.xi;
        out[6] = quarter * p.xi * p.eta * x[1];
        out[7] = T::lit(0.5) * p.eta * p.eta * x[0] * x[1];
    }
}

/// `dS = μ S dt + σ S dW`. Mean `E[S(T)] = S₀ e^{μT}`.
#[derive(Debug, Clone)]
pub struct Gbm<T> {
    pub mu: T,
    pub sigma: T,
    initial_state: [T; 1],
    horizon: T,
    correlation: Correlation<T>,
}

pub fn gbm_system<T: Real>(mu: T, sigma: T, s0: T, horizon: T) -> Result<Gbm<T>> {
    if !(s0 > T::zero()) {
        return Err(MlmcError::Domain(format!("GBM initial value must be positive, got {s0}")));
    }
    if [mu, sigma, horizon].iter().any(|v| !v.is_finite()) {
        return Err(MlmcError::Domain("GBM parameters must be finite".into()));
    }
    Ok(Gbm {
        mu,
        sigma,
        initial_state: [s0],
        horizon,
        correlation: Correlation::identity(1),
    })
}

impl<T: Real> Gbm<T> {
    pub fn exact_mean(&self) -> T {
        self.initial_state[0] * (self.mu * self.horizon).exp()
    }
}

impl<T: Real> SdeSystem<T> for Gbm<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> &[T] {
        &self.initial_state
    }
    fn horizon(&self) -> T {
        self.horizon
    }
    fn correlation(&self) -> &Correlation<T> {
        &self.correlation
    }
    #[inline]
    fn drift(&self, x: &[T], _t: T, out: &mut [T]) {
        out[0] = self.mu * x[0];
    }
    #[inline]
    fn diffusion(&self, x: &[T], _t: T, out: &mut [T]) {
        out[0] = self.sigma * x[0];
    }
    fn diffusion_jacobian(&self, _x: &[T], _t: T, out: &mut [T]) {
        out[0] = self.sigma;
    }
    #[inline]
    fn h_tensor(&self, x: &[T], _t: T, out: &mut [T]) {
        out[0] = T::lit(0.5) * self.sigma * self.sigma * x[0];
    }
}
