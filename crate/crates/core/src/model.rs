//! SDE systems `dS_i = a_i dt + Σ_j b_ij dW_j`.
//!
//! Coefficients are written into caller-provided buffers, all row-major:
//! drift `a` has `d` entries, diffusion `b` is `d × D`, the diffusion Jacobian is
//! `d × D × d` with entry `(i, j, l) = ∂b_ij/∂x_l`, and the Milstein tensor `h` is
//! `d × D × D` with `h_ijk = ½ Σ_l b_lk ∂b_ij/∂x_l`.

use crate::brownian::Correlation;
use crate::real::Real;

pub trait SdeSystem<T: Real>: Send + Sync {
    /// State dimension `d`.
    fn state_dim(&self) -> usize;

    /// Noise dimension `D`.
    fn noise_dim(&self) -> usize;

    fn initial_state(&self) -> &[T];

    /// Final time `T`.
    fn horizon(&self) -> T;

    fn correlation(&self) -> &Correlation<T>;

    fn drift(&self, x: &[T], t: T, out: &mut [T]);

    fn diffusion(&self, x: &[T], t: T, out: &mut [T]);

    /// Central finite differences of [`SdeSystem::diffusion`] unless overridden.
    fn diffusion_jacobian(&self, x: &[T], t: T, out: &mut [T]) {
        fd_diffusion_jacobian(self, x, t, out);
    }

    /// Built from [`SdeSystem::diffusion_jacobian`] unless overridden; with the default
    /// Jacobian this is the finite-difference fallback and is only accurate to the
    /// difference step.
    fn h_tensor(&self, x: &[T], t: T, out: &mut [T]) {
        let (d, nd) = (self.state_dim(), self.noise_dim());
        let mut b = vec![T::zero(); d * nd];
        let mut jac = vec![T::zero(); d * nd * d];
        self.diffusion(x, t, &mut b);
        self.diffusion_jacobian(x, t, &mut jac);
        h_from_jacobian(d, nd, &b, &jac, out);
    }
}

/// `h_ijk = ½ Σ_l b_lk J_ijl`.
pub fn h_from_jacobian<T: Real>(d: usize, nd: usize, b: &[T], jac: &[T], out: &mut [T]) {
    let half = T::lit(0.5);
    for i in 0..d {
        for j in 0..nd {
            let row = &jac[(i * nd + j) * d..(i * nd + j + 1) * d];
            for k in 0..nd {
                let mut acc = T::zero();
                for (l, &dbl) in row.iter().enumerate() {
                    acc = acc + b[l * nd + k] * dbl;
                }
                out[(i * nd + j) * nd + k] = half * acc;
            }
        }
    }
}

/// Relative step used by the finite-difference fallbacks.
pub fn fd_step<T: Real>(x: T) -> T {
    T::lit(1e-6) * (T::one() + x.abs())
}

pub fn fd_diffusion_jacobian<T: Real, S: SdeSystem<T> + ?Sized>(
    system: &S,
    x: &[T],
    t: T,
    out: &mut [T],
) {
    let (d, nd) = (system.state_dim(), system.noise_dim());
    let mut xp = x.to_vec();
    let mut bp = vec![T::zero(); d * nd];
    let mut bm = vec![T::zero(); d * nd];
    for l in 0..d {
        let step = fd_step(x[l]);
        xp[l] = x[l] + step;
        system.diffusion(&xp, t, &mut bp);
        xp[l] = x[l] - step;
        system.diffusion(&xp, t, &mut bm);
        xp[l] = x[l];
        let two_step = step + step;
        for ij in 0..d * nd {
            out[ij * d + l] = (bp[ij] - bm[ij]) / two_step;
        }
    }
}

/// Allocating convenience wrappers, mostly for tests and diagnostics.
pub trait SdeSystemExt<T: Real>: SdeSystem<T> {
    fn drift_vec(&self, x: &[T], t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim()];
        self.drift(x, t, &mut out);
        out
    }

    fn diffusion_vec(&self, x: &[T], t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim() * self.noise_dim()];
        self.diffusion(x, t, &mut out);
        out
    }

    fn h_tensor_vec(&self, x: &[T], t: T) -> Vec<T> {
        let nd = self.noise_dim();
        let mut out = vec![T::zero(); self.state_dim() * nd * nd];
        self.h_tensor(x, t, &mut out);
        out
    }

    fn jacobian_vec(&self, x: &[T], t: T) -> Vec<T> {
        let d = self.state_dim();
        let mut out = vec![T::zero(); d * self.noise_dim() * d];
        self.diffusion_jacobian(x, t, &mut out);
        out
    }
}

impl<T: Real, S: SdeSystem<T> + ?Sized> SdeSystemExt<T> for S {}

/// An h-tensor computed purely from finite differences of the diffusion, for
/// comparison against analytic tensors.
pub fn fd_h_tensor<T: Real, S: SdeSystem<T> + ?Sized>(system: &S, x: &[T], t: T) -> Vec<T> {
    let (d, nd) = (system.state_dim(), system.noise_dim());
    let b = system.diffusion_vec(x, t);
    let mut jac = vec![T::zero(); d * nd * d];
    fd_diffusion_jacobian(system, x, t, &mut jac);
    let mut out = vec![T::zero(); d * nd * nd];
    h_from_jacobian(d, nd, &b, &jac, &mut out);
    out
}

/// Wraps user-supplied drift and diffusion closures; Jacobian and h-tensor come from
/// finite differences and are therefore lower accuracy than an analytic model.
pub struct ClosureSystem<T, A, B> {
    state_dim: usize,
    noise_dim: usize,
    initial_state: Vec<T>,
    horizon: T,
    correlation: Correlation<T>,
    drift: A,
    diffusion: B,
}

impl<T, A, B> ClosureSystem<T, A, B>
where
    T: Real,
    A: Fn(&[T], T, &mut [T]) + Send + Sync,
    B: Fn(&[T], T, &mut [T]) + Send + Sync,
{
    pub fn new(
        noise_dim: usize,
        initial_state: Vec<T>,
        horizon: T,
        drift: A,
        diffusion: B,
    ) -> crate::Result<Self> {
        if initial_state.is_empty() || noise_dim == 0 {
            return Err(crate::MlmcError::Dimension(
                "system needs at least one state and one noise dimension".into(),
            ));
        }
        Ok(Self {
            state_dim: initial_state.len(),
            noise_dim,
            initial_state,
            horizon,
            correlation: Correlation::identity(noise_dim),
            drift,
            diffusion,
        })
    }

    pub fn with_correlation(mut self, correlation: Correlation<T>) -> crate::Result<Self> {
        if correlation.dim() != self.noise_dim {
            return Err(crate::MlmcError::Dimension(format!(
                "correlation dimension {} does not match noise dimension {}",
                correlation.dim(),
                self.noise_dim
            )));
        }
        self.correlation = correlation;
        Ok(self)
    }
}

impl<T, A, B> SdeSystem<T> for ClosureSystem<T, A, B>
where
    T: Real,
    A: Fn(&[T], T, &mut [T]) + Send + Sync,
    B: Fn(&[T], T, &mut [T]) + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
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
    fn drift(&self, x: &[T], t: T, out: &mut [T]) {
        (self.drift)(x, t, out)
    }
    fn diffusion(&self, x: &[T], t: T, out: &mut [T]) {
        (self.diffusion)(x, t, out)
    }
}
