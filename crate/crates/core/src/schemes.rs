//! Time-stepping kernels and the coupled fine/coarse path evolvers.
//!
//! A level-`l` sample advances a fine path with `M^l` steps of `δt = T M^{-l}` and a
//! coarse path with `M^{l-1}` steps of `Δt = M δt`. Both consume the same
//! [`IncrementGrid`] for each coarse interval: the fine path row by row, the coarse
//! path through the row sums.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::brownian::{IncrementGrid, PathSeed};
use crate::error::{MlmcError, Result};
use crate::model::SdeSystem;
use crate::payoff::Payoff;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Euler-Maruyama on both levels.
    Euler,
    /// Full Milstein; only available when `D = 1`, where the Lévy areas vanish.
    Milstein,
    /// Lévy-area-free Milstein fine path averaged with its sub-step-reversed twin.
    Antithetic,
    /// Milstein fine path against a coarse step corrected by the Lévy-area quadrature,
    /// with drift taken from an auxiliary starred path.
    ApproxMilstein,
}

/// How one coupled sample is charged, in time steps per level pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostRule {
    /// `h_l⁻¹ + h_{l-1}⁻¹`
    Euler,
    /// `2 h_l⁻¹ + h_{l-1}⁻¹`
    Antithetic,
    /// `h_l⁻¹ + 2 h_{l-1}⁻¹`
    ApproxMilstein,
}

impl CostRule {
    /// Number of fine and coarse paths advanced per sample.
    pub fn path_counts(self) -> (u64, u64) {
        match self {
            CostRule::Euler => (1, 1),
            CostRule::Antithetic => (2, 1),
            CostRule::ApproxMilstein => (1, 2),
        }
    }

    /// Steps charged for one sample at `level`; level 0 is a single step.
    pub fn steps_per_sample(self, level: u32, refinement: u64) -> u64 {
        if level == 0 {
            return 1;
        }
        let (fine, coarse) = self.path_counts();
        fine * refinement.pow(level) + coarse * refinement.pow(level - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeDescriptor {
    pub name: &'static str,
    /// Weak order `p`.
    pub weak_order: Ratio<u32>,
    /// Strong order `q`.
    pub strong_order: Ratio<u32>,
    /// Expected `β` in `V_l ~ h_l^β`.
    pub variance_exponent: Ratio<u32>,
    pub cost: CostRule,
}

impl SchemeDescriptor {
    pub fn beta(&self) -> f64 {
        *self.variance_exponent.numer() as f64 / *self.variance_exponent.denom() as f64
    }
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Euler,
        Scheme::Milstein,
        Scheme::Antithetic,
        Scheme::ApproxMilstein,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Milstein => "milstein",
            Scheme::Antithetic => "antithetic",
            Scheme::ApproxMilstein => "approx-milstein",
        }
    }

    pub fn descriptor(self) -> SchemeDescriptor {
        let r = Ratio::new;
        let (strong, cost) = match self {
            Scheme::Euler => (r(1, 2), CostRule::Euler),
            Scheme::Milstein => (r(1, 1), CostRule::Euler),
            Scheme::Antithetic => (r(1, 2), CostRule::Antithetic),
            Scheme::ApproxMilstein => (r(1, 2), CostRule::ApproxMilstein),
        };
        let beta = match self {
            Scheme::Euler => r(1, 1),
            _ => r(2, 1),
        };
        SchemeDescriptor {
            name: self.name(),
            weak_order: r(1, 1),
            strong_order: strong,
            variance_exponent: beta,
            cost,
        }
    }

    /// Rejects scheme/system combinations the scheme cannot discretize.
    pub fn check_compatible(self, noise_dim: usize, refinement: usize) -> Result<()> {
        if refinement < 2 {
            return Err(MlmcError::Config(format!(
                "refinement factor must be at least 2, got {refinement}"
            )));
        }
        if self == Scheme::Milstein && noise_dim != 1 {
            return Err(MlmcError::Config(format!(
                "full Milstein needs Lévy areas when D = {noise_dim}; \
                 use antithetic or approx-milstein"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = MlmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "milstein" => Ok(Scheme::Milstein),
            "antithetic" => Ok(Scheme::Antithetic),
            "approx-milstein" | "approx_milstein" => Ok(Scheme::ApproxMilstein),
            other => Err(MlmcError::Config(format!(
                "unknown scheme `{other}` (expected euler, milstein, antithetic or approx-milstein)"
            ))),
        }
    }
}

/// Coefficient buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    dim: usize,
    noise_dim: usize,
    a: Vec<T>,
    b: Vec<T>,
    h: Vec<T>,
    quad: Vec<T>,
    dw: Vec<T>,
    big_dw: Vec<T>,
    levy: Vec<T>,
    prefix: Vec<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new(dim: usize, noise_dim: usize) -> Self {
        Self {
            dim,
            noise_dim,
            a: vec![T::zero(); dim],
            b: vec![T::zero(); dim * noise_dim],
            h: vec![T::zero(); dim * noise_dim * noise_dim],
            quad: vec![T::zero(); noise_dim * noise_dim],
            dw: vec![T::zero(); noise_dim],
            big_dw: vec![T::zero(); noise_dim],
            levy: vec![T::zero(); noise_dim * noise_dim],
            prefix: vec![T::zero(); noise_dim],
        }
    }

    #[inline]
    fn apply_drift_diffusion(&self, x: &mut [T], step: T, dw: &[T]) {
        let nd = self.noise_dim;
        for (i, xi) in x.iter_mut().enumerate() {
            let mut acc = self.a[i] * step;
            for (j, &w) in dw.iter().enumerate() {
                acc = acc + self.b[i * nd + j] * w;
            }
            *xi = *xi + acc;
        }
    }

    #[inline]
    fn apply_h_term(&self, x: &mut [T]) {
        let nn = self.noise_dim * self.noise_dim;
        for (i, xi) in x.iter_mut().enumerate() {
            let h = &self.h[i * nn..(i + 1) * nn];
            let mut acc = T::zero();
            for (hv, qv) in h.iter().zip(&self.quad) {
                acc = acc + *hv * *qv;
            }
            *xi = *xi + acc;
        }
    }

    #[inline]
    fn fill_quad(&mut self, dw: &[T], step: T, omega: &[T]) {
        let nd = self.noise_dim;
        for j in 0..nd {
            for k in 0..nd {
                self.quad[j * nd + k] = dw[j] * dw[k] - omega[j * nd + k] * step;
            }
        }
    }

    /// `x ← x + a h + b dW`.
    pub fn euler<S: SdeSystem<T> + ?Sized>(&mut self, sys: &S, x: &mut [T], t: T, step: T, dw: &[T]) {
        debug_assert_eq!(x.len(), self.dim);
        sys.drift(x, t, &mut self.a);
        sys.diffusion(x, t, &mut self.b);
        self.apply_drift_diffusion(x, step, dw);
    }

    /// `x ← x + a h + b ΔW + Σ_jk h_jk (ΔW_j ΔW_k − Ω_jk h)`: Milstein without Lévy areas.
    pub fn milstein<S: SdeSystem<T> + ?Sized>(&mut self, sys: &S, x: &mut [T], t: T, step: T, dw: &[T]) {
        sys.drift(x, t, &mut self.a);
        sys.diffusion(x, t, &mut self.b);
        sys.h_tensor(x, t, &mut self.h);
        self.fill_quad(dw, step, sys.correlation().omega());
        self.apply_drift_diffusion(x, step, dw);
        self.apply_h_term(x);
    }

    /// Coarse step of the approximate Milstein pair: drift at `star`, diffusion and
    /// h-tensor at `coarse`, and the h-term corrected by `−𝒜_jk + 𝒜_kj`.
    pub fn approx_milstein_coarse<S: SdeSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        star: &[T],
        coarse: &mut [T],
        t: T,
        grid: &IncrementGrid<T>,
    ) {
        let nd = self.noise_dim;
        let step = grid.coarse_dt();
        grid.coarse_increment_into(&mut self.dw);
        grid.levy_quadrature_into(&mut self.prefix, &mut self.levy);
        sys.drift(star, t, &mut self.a);
        sys.diffusion(coarse, t, &mut self.b);
        sys.h_tensor(coarse, t, &mut self.h);
        let dw = std::mem::take(&mut self.dw);
        self.fill_quad(&dw, step, sys.correlation().omega());
        for j in 0..nd {
            for k in 0..nd {
                self.quad[j * nd + k] =
                    self.quad[j * nd + k] - self.levy[j * nd + k] + self.levy[k * nd + j];
            }
        }
        self.apply_drift_diffusion(coarse, step, &dw);
        self.apply_h_term(coarse);
        self.dw = dw;
    }
}

/// One Euler-Maruyama step.
pub fn euler_step<T: Real, S: SdeSystem<T> + ?Sized>(sys: &S, state: &[T], t: T, step: T, dw: &[T]) -> Vec<T> {
    let mut x = state.to_vec();
    Stepper::new(sys.state_dim(), sys.noise_dim()).euler(sys, &mut x, t, step, dw);
    x
}

/// One Milstein step with the Lévy areas set to zero, driven by the total increment `dw`.
pub fn milstein_fine_step<T: Real, S: SdeSystem<T> + ?Sized>(
    sys: &S,
    state: &[T],
    t: T,
    step: T,
    dw: &[T],
) -> Vec<T> {
    let mut x = state.to_vec();
    Stepper::new(sys.state_dim(), sys.noise_dim()).milstein(sys, &mut x, t, step, dw);
    x
}

/// One approximate-Milstein coarse step of length `grid.coarse_dt()`.
pub fn approx_milstein_coarse_step<T: Real, S: SdeSystem<T> + ?Sized>(
    sys: &S,
    star_state: &[T],
    coarse_state: &[T],
    t: T,
    grid: &IncrementGrid<T>,
) -> Vec<T> {
    let mut x = coarse_state.to_vec();
    Stepper::new(sys.state_dim(), sys.noise_dim()).approx_milstein_coarse(sys, star_state, &mut x, t, grid);
    x
}

/// The paths advanced together by one coupled sample.
///
/// `aux` is the antithetic path for [`Scheme::Antithetic`] and the starred path for
/// [`Scheme::ApproxMilstein`]; other schemes leave it at the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPaths<T> {
    pub fine: Vec<T>,
    pub aux: Vec<T>,
    pub coarse: Vec<T>,
}

impl<T: Real> CoupledPaths<T> {
    pub fn starting_at(x0: &[T]) -> Self {
        Self {
            fine: x0.to_vec(),
            aux: x0.to_vec(),
            coarse: x0.to_vec(),
        }
    }

    fn reset(&mut self, x0: &[T]) {
        self.fine.copy_from_slice(x0);
        self.aux.copy_from_slice(x0);
        self.coarse.copy_from_slice(x0);
    }

    /// `‖fine − coarse‖²`, with the antithetic pair replaced by its average.
    fn sq_gap(&self, scheme: Scheme) -> T {
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for i in 0..self.fine.len() {
            let f = if scheme == Scheme::Antithetic {
                half * (self.fine[i] + self.aux[i])
            } else {
                self.fine[i]
            };
            let diff = f - self.coarse[i];
            acc = acc + diff * diff;
        }
        acc
    }
}

/// Advances all paths of `scheme` across one coarse interval starting at `t`.
pub fn advance_coarse_step<T: Real, S: SdeSystem<T> + ?Sized>(
    sys: &S,
    stepper: &mut Stepper<T>,
    scheme: Scheme,
    paths: &mut CoupledPaths<T>,
    t: T,
    grid: &IncrementGrid<T>,
) {
    let substeps = grid.substeps();
    let dt = grid.delta_t();
    let big_dt = grid.coarse_dt();
    let mut dw = std::mem::take(&mut stepper.big_dw);
    grid.coarse_increment_into(&mut dw);
    let sub_time = |m: usize| t + T::from_count(m as u64) * dt;
    match scheme {
        Scheme::Euler => {
            for m in 0..substeps {
                stepper.euler(sys, &mut paths.fine, sub_time(m), dt, grid.row(m));
            }
            stepper.euler(sys, &mut paths.coarse, t, big_dt, &dw);
        }
        Scheme::Milstein => {
            for m in 0..substeps {
                stepper.milstein(sys, &mut paths.fine, sub_time(m), dt, grid.row(m));
            }
            stepper.milstein(sys, &mut paths.coarse, t, big_dt, &dw);
        }
        Scheme::Antithetic => {
            for m in 0..substeps {
                stepper.milstein(sys, &mut paths.fine, sub_time(m), dt, grid.row(m));
            }
            for m in 0..substeps {
                stepper.milstein(sys, &mut paths.aux, sub_time(m), dt, grid.row(substeps - 1 - m));
            }
            stepper.milstein(sys, &mut paths.coarse, t, big_dt, &dw);
        }
        Scheme::ApproxMilstein => {
            for m in 0..substeps {
                stepper.milstein(sys, &mut paths.fine, sub_time(m), dt, grid.row(m));
            }
            // coarse reads the starred state before the starred path moves
            stepper.approx_milstein_coarse(sys, &paths.aux, &mut paths.coarse, t, grid);
            stepper.milstein(sys, &mut paths.aux, t, big_dt, &dw);
        }
    }
    stepper.big_dw = dw;
}

/// Runs the coupled paths of `scheme` over an explicit sequence of coarse-interval grids.
pub fn evolve_with_grids<T: Real, S: SdeSystem<T> + ?Sized>(
    sys: &S,
    scheme: Scheme,
    grids: &[IncrementGrid<T>],
) -> CoupledPaths<T> {
    let mut stepper = Stepper::new(sys.state_dim(), sys.noise_dim());
    let mut paths = CoupledPaths::starting_at(sys.initial_state());
    let mut t = T::zero();
    for grid in grids {
        advance_coarse_step(sys, &mut stepper, scheme, &mut paths, t, grid);
        t = t + grid.coarse_dt();
    }
    paths
}

/// One per-path output of a level: `P^f_l`, `P^c_l`, terminal states and step cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSample<T> {
    pub fine_payoff: T,
    /// Absent at level 0.
    pub coarse_payoff: Option<T>,
    pub fine_terminal: Vec<T>,
    pub coarse_terminal: Option<Vec<T>>,
    /// Antithetic or starred terminal state, for schemes that carry one.
    pub auxiliary_terminal: Option<Vec<T>>,
    /// Unweighted time steps taken for this sample.
    pub steps_taken: u64,
    /// `max_n ‖S^f_n − S^c_n‖²` over coarse time points.
    pub max_sq_gap: T,
}

impl<T: Real> CoupledSample<T> {
    /// `P^f_l − P^c_l`, or `P^f_0` at level 0.
    pub fn difference(&self) -> T {
        self.fine_payoff - self.coarse_payoff.unwrap_or_else(T::zero)
    }
}

/// Generates coupled samples for one (system, payoff, scheme, M, seed) configuration,
/// reusing its buffers across paths.
pub struct PathSampler<'a, T: Real, S: ?Sized, P: ?Sized> {
    system: &'a S,
    payoff: &'a P,
    scheme: Scheme,
    refinement: usize,
    global_seed: u64,
    stepper: Stepper<T>,
    paths: CoupledPaths<T>,
    grid: IncrementGrid<T>,
    base_grid: IncrementGrid<T>,
    current_dt: T,
}

impl<'a, T, S, P> PathSampler<'a, T, S, P>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    pub fn new(system: &'a S, payoff: &'a P, scheme: Scheme, refinement: usize, global_seed: u64) -> Result<Self> {
        scheme.check_compatible(system.noise_dim(), refinement)?;
        payoff.check_dim(system.state_dim())?;
        if system.correlation().dim() != system.noise_dim() {
            return Err(MlmcError::Dimension("correlation does not match noise dimension".into()));
        }
        let horizon = system.horizon();
        if !(horizon > T::zero()) {
            return Err(MlmcError::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let nd = system.noise_dim();
        Ok(Self {
            system,
            payoff,
            scheme,
            refinement,
            global_seed,
            stepper: Stepper::new(system.state_dim(), nd),
            paths: CoupledPaths::starting_at(system.initial_state()),
            grid: IncrementGrid::zeros(refinement, nd, horizon)?,
            base_grid: IncrementGrid::zeros(1, nd, horizon)?,
            current_dt: T::zero(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// Fine step `h_l = T M^{-l}`.
    pub fn step_size(&self, level: u32) -> T {
        self.system.horizon() / T::from_count(self.refinement as u64).powi(level as i32)
    }

    fn run(&mut self, level: u32, path_index: u64) -> (T, Option<T>, T) {
        let sys = self.system;
        self.paths.reset(sys.initial_state());
        if level == 0 {
            let seed = PathSeed::new(self.global_seed, 0, path_index, 0);
            self.base_grid.fill(&seed, sys.correlation());
            let grid = &self.base_grid;
            let dw = grid.row(0);
            let step = grid.delta_t();
            match self.scheme {
                Scheme::Euler => self.stepper.euler(sys, &mut self.paths.fine, T::zero(), step, dw),
                _ => self.stepper.milstein(sys, &mut self.paths.fine, T::zero(), step, dw),
            }
            return (self.payoff.value(&self.paths.fine), None, T::zero());
        }

        let dt = self.step_size(level);
        if dt != self.current_dt {
            self.grid = IncrementGrid::zeros(self.refinement, sys.noise_dim(), dt)
                .expect("positive sub-step");
            self.current_dt = dt;
        }
        let coarse_steps = (self.refinement as u64).pow(level - 1);
        let big_dt = self.grid.coarse_dt();
        let mut max_gap = T::zero();
        for n in 0..coarse_steps {
            let seed = PathSeed::new(self.global_seed, level, path_index, n);
            self.grid.fill(&seed, sys.correlation());
            let t = T::from_count(n) * big_dt;
            advance_coarse_step(sys, &mut self.stepper, self.scheme, &mut self.paths, t, &self.grid);
            max_gap = max_gap.max(self.paths.sq_gap(self.scheme));
        }
        let fine = match self.scheme {
            Scheme::Antithetic => {
                T::lit(0.5) * (self.payoff.value(&self.paths.fine) + self.payoff.value(&self.paths.aux))
            }
            _ => self.payoff.value(&self.paths.fine),
        };
        (fine, Some(self.payoff.value(&self.paths.coarse)), max_gap)
    }

    fn steps(&self, level: u32) -> u64 {
        self.scheme
            .descriptor()
            .cost
            .steps_per_sample(level, self.refinement as u64)
    }

    /// Full sample record for path `path_index` at `level`.
    pub fn sample(&mut self, level: u32, path_index: u64) -> CoupledSample<T> {
        let (fine_payoff, coarse_payoff, max_sq_gap) = self.run(level, path_index);
        let has_aux = level > 0 && matches!(self.scheme, Scheme::Antithetic | Scheme::ApproxMilstein);
        CoupledSample {
            fine_payoff,
            coarse_payoff,
            fine_terminal: self.paths.fine.clone(),
            coarse_terminal: coarse_payoff.map(|_| self.paths.coarse.clone()),
            auxiliary_terminal: has_aux.then(|| self.paths.aux.clone()),
            steps_taken: self.steps(level),
            max_sq_gap,
        }
    }

    /// `P^f_l − P^c_l` and the steps charged, without copying terminal states.
    #[inline]
    pub fn difference(&mut self, level: u32, path_index: u64) -> (T, u64) {
        let (fine, coarse, _) = self.run(level, path_index);
        (fine - coarse.unwrap_or_else(T::zero), self.steps(level))
    }
}

fn coupled<T, S, P>(
    sys: &S,
    payoff: &P,
    scheme: Scheme,
    level: u32,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    if level == 0 {
        return Err(MlmcError::Config("coupled evolution needs level >= 1".into()));
    }
    Ok(PathSampler::new(sys, payoff, scheme, refinement, global_seed)?.sample(level, path_index))
}

pub fn evolve_euler_coupled<T, S, P>(
    sys: &S,
    payoff: &P,
    level: u32,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    coupled(sys, payoff, Scheme::Euler, level, refinement, global_seed, path_index)
}

pub fn evolve_milstein_coupled<T, S, P>(
    sys: &S,
    payoff: &P,
    level: u32,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    coupled(sys, payoff, Scheme::Milstein, level, refinement, global_seed, path_index)
}

pub fn evolve_antithetic_coupled<T, S, P>(
    sys: &S,
    payoff: &P,
    level: u32,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    coupled(sys, payoff, Scheme::Antithetic, level, refinement, global_seed, path_index)
}

/// Approximate-Milstein pair. The equal-expectation property holds componentwise,
/// so the payoff must be linear: use it on an Ito-linearized system.
pub fn evolve_approx_milstein_coupled<T, S, P>(
    sys: &S,
    payoff: &P,
    level: u32,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    if payoff.smoothness() != crate::payoff::Smoothness::Linear {
        return Err(MlmcError::Config(
            "approx-milstein needs a linear payoff; Ito-linearize the system first".into(),
        ));
    }
    coupled(sys, payoff, Scheme::ApproxMilstein, level, refinement, global_seed, path_index)
}

/// Level-0 sample: one step of length `T`, no coarse path.
pub fn evolve_base_level<T, S, P>(
    sys: &S,
    payoff: &P,
    scheme: Scheme,
    refinement: usize,
    global_seed: u64,
    path_index: u64,
) -> Result<CoupledSample<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    Ok(PathSampler::new(sys, payoff, scheme, refinement, global_seed)?.sample(0, path_index))
}
