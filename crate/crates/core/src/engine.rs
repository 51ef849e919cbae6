//! Adaptive multilevel driver.
//!
//! Starting from `L = 1`, each round draws initial samples on the new level, tops every
//! level up to the variance-optimal `N_l`, and stops once both of the two finest level
//! means are small enough that the estimated bias is below `ε/√2`.
//!
//! With Ito linearization the base level is the closed-form mean of the augmented
//! system (`N_0 = 1`, `V_0 = 0`, no cost); otherwise it is sampled like any other level.

use rayon::prelude::*;

use crate::error::{MlmcError, Result};
use crate::ito::{augment, base_level_expectation};
use crate::model::SdeSystem;
use crate::payoff::Payoff;
use crate::real::Real;
use crate::schemes::{PathSampler, Scheme, SchemeDescriptor};
use crate::stats::LevelStats;

/// Paths per parallel work unit. Blocks are reduced in index order, so results do not
/// depend on the number of worker threads.
const BLOCK: u64 = 512;

/// Guard against allocation rounds that keep asking for more samples.
const MAX_TOP_UP_ROUNDS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcConfig<T> {
    /// Target RMS error `ε`.
    pub epsilon: T,
    /// Refinement factor `M`.
    pub refinement: usize,
    pub scheme: Scheme,
    /// Replace the payoff by the last coordinate of the Ito-augmented system and use the
    /// exact base level. Approx-milstein always runs on the augmented system; this flag
    /// then only decides whether its base level is exact or sampled.
    pub ito_linearize: bool,
    /// Initial sample count on level 1 (and level 0 when it is sampled).
    pub initial_samples: u64,
    pub max_level: u32,
    pub global_seed: u64,
}

impl<T: Real> MlmcConfig<T> {
    pub fn new(epsilon: T, refinement: usize, scheme: Scheme) -> Self {
        Self {
            epsilon,
            refinement,
            scheme,
            ito_linearize: false,
            initial_samples: 400,
            max_level: 12,
            global_seed: 0,
        }
    }

    pub fn with_ito(mut self, on: bool) -> Self {
        self.ito_linearize = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.global_seed = seed;
        self
    }

    pub fn with_max_level(mut self, max_level: u32) -> Self {
        self.max_level = max_level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(MlmcError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.refinement < 2 {
            return Err(MlmcError::Config(format!(
                "refinement factor must be at least 2, got {}",
                self.refinement
            )));
        }
        if self.max_level < 2 {
            return Err(MlmcError::Config(format!("max level must be at least 2, got {}", self.max_level)));
        }
        if self.initial_samples < 2 {
            return Err(MlmcError::Config("initial sample count must be at least 2".into()));
        }
        Ok(())
    }

    /// Whether the run simulates the Ito-augmented system.
    pub fn augments(&self) -> bool {
        self.ito_linearize || self.scheme == Scheme::ApproxMilstein
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcResult<T> {
    /// `P̂_L = Σ_l Ŷ_l`.
    pub estimate: T,
    /// One entry per level `0..=L`.
    pub levels: Vec<LevelStats<T>>,
    /// Weighted cost `K` in units of inverse time steps.
    pub total_cost: f64,
    pub converged: bool,
    /// `max(|Ŷ_L|, |Ŷ_{L-1}|/M)` at the final level (`|Ŷ_1|` if `L = 1`).
    pub bias_proxy: T,
    pub scheme: Scheme,
    pub refinement: usize,
    pub horizon: T,
    /// Base level evaluated in closed form.
    pub exact_base: bool,
    /// The augmented system was simulated; cost carries the `(d+1)/d` factor.
    pub augmented: bool,
    /// Dimension of the original (un-augmented) system.
    pub dimension: usize,
}

impl<T: Real> MlmcResult<T> {
    /// Finest level `L`.
    pub fn final_level(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    /// `Σ V_l / N_l` over the sampled levels.
    pub fn sampling_variance(&self) -> T {
        self.levels
            .iter()
            .filter(|s| !(self.exact_base && s.level == 0))
            .filter_map(|s| s.variance().map(|v| v / T::from_count(s.count())))
            .sum()
    }

    /// Weighted steps spent on each level, normalized to sum to one.
    pub fn work_fractions(&self) -> Vec<f64> {
        let per_level: Vec<f64> = (0..self.levels.len())
            .map(|l| level_cost(self, &self.scheme.descriptor(), l))
            .collect();
        let total: f64 = per_level.iter().sum();
        if total == 0.0 {
            return per_level;
        }
        per_level.iter().map(|c| c / total).collect()
    }
}

/// `h_l = T M^{-l}`.
pub fn step_size<T: Real>(horizon: T, refinement: usize, level: u32) -> T {
    horizon / T::from_count(refinement as u64).powi(level as i32)
}

/// `ceil` that ignores round-off of a few ulps above an integer.
fn ceil_count(x: f64) -> u64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 8.0 * f64::EPSILON * x.abs().max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Variance-optimal sample counts
/// `N_l = ⌈(2/ε²) √(V_l h_l) Σ_k √(V_k/h_k)⌉`, with the sum over the given levels.
/// Counts below 2 are raised to 2 so that every `V_l` stays defined.
pub fn optimal_sample_sizes<T: Real>(
    stats: &[LevelStats<T>],
    epsilon: T,
    horizon: T,
    refinement: usize,
) -> Result<Vec<u64>> {
    if !(epsilon > T::zero()) {
        return Err(MlmcError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut vh = Vec::with_capacity(stats.len());
    for s in stats {
        let v = s.variance().ok_or_else(|| {
            MlmcError::Config(format!("level {} has fewer than two samples", s.level))
        })?;
        vh.push((v.to_f64_lossy(), step_size(horizon, refinement, s.level).to_f64_lossy()));
    }
    let eps = epsilon.to_f64_lossy();
    let sum: f64 = vh.iter().map(|(v, h)| (v / h).sqrt()).sum();
    Ok(vh
        .iter()
        .map(|(v, h)| ceil_count(2.0 / (eps * eps) * (v * h).sqrt() * sum).max(2))
        .collect())
}

/// Initial samples on a newly added level: `default` on level 1, otherwise
/// `⌈M^{-(β+1)/2} N_{L-1}⌉` (at least 2).
pub fn initial_samples(level: u32, refinement: usize, beta: f64, previous: u64, default: u64) -> u64 {
    if level <= 1 {
        return default;
    }
    let factor = (refinement as f64).powf(-(beta + 1.0) / 2.0);
    ceil_count(factor * previous as f64).max(2)
}

/// Convergence test: `L ≥ 2` and `max(|Ŷ_L|, |Ŷ_{L-1}|/M) ≤ ε/√2`.
pub fn converged<T: Real>(y_last: T, y_prev: T, refinement: usize, epsilon: T, level: u32) -> bool {
    if level < 2 {
        return false;
    }
    bias_statistic(y_last, y_prev, refinement) <= epsilon / T::lit(2.0).sqrt()
}

fn bias_statistic<T: Real>(y_last: T, y_prev: T, refinement: usize) -> T {
    y_last.abs().max(y_prev.abs() / T::from_count(refinement as u64))
}

fn level_cost<T: Real>(result: &MlmcResult<T>, scheme: &SchemeDescriptor, level: usize) -> f64 {
    let stats = &result.levels[level];
    if level == 0 && result.exact_base {
        return 0.0;
    }
    let steps = scheme.cost.steps_per_sample(level as u32, result.refinement as u64) as f64;
    let weight = if result.augmented {
        (result.dimension as f64 + 1.0) / result.dimension as f64
    } else {
        1.0
    };
    weight * stats.count() as f64 * steps / result.horizon.to_f64_lossy()
}

/// `K = w Σ_l N_l (f h_l⁻¹ + c h_{l-1}⁻¹)`, where `(f, c)` are the fine/coarse path
/// counts of the scheme's cost rule, level 0 is charged `N_0 h_0⁻¹` (nothing when it is
/// exact), and `w = (d+1)/d` for runs on the augmented system.
pub fn total_cost<T: Real>(result: &MlmcResult<T>, scheme: &SchemeDescriptor, dimension: usize) -> f64 {
    let adjusted = MlmcResult {
        dimension,
        ..result.clone()
    };
    (0..result.levels.len()).map(|l| level_cost(&adjusted, scheme, l)).sum()
}

/// Samples one level over contiguous path indices, in parallel blocks.
pub struct LevelSampler<'a, T, S: ?Sized, P: ?Sized> {
    system: &'a S,
    payoff: &'a P,
    scheme: Scheme,
    refinement: usize,
    global_seed: u64,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T, S, P> LevelSampler<'a, T, S, P>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    pub fn new(system: &'a S, payoff: &'a P, scheme: Scheme, refinement: usize, global_seed: u64) -> Result<Self> {
        PathSampler::new(system, payoff, scheme, refinement, global_seed)?;
        Ok(Self {
            system,
            payoff,
            scheme,
            refinement,
            global_seed,
            _scalar: std::marker::PhantomData,
        })
    }

    /// Statistics of paths `first .. first + count` at `level`.
    pub fn sample(&self, level: u32, first: u64, count: u64) -> LevelStats<T> {
        let blocks = count.div_ceil(BLOCK);
        let partial: Vec<LevelStats<T>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut sampler =
                    PathSampler::new(self.system, self.payoff, self.scheme, self.refinement, self.global_seed)
                        .expect("validated in LevelSampler::new");
                let start = first + b * BLOCK;
                let end = (start + BLOCK).min(first + count);
                let mut stats = LevelStats::new(level);
                for path in start..end {
                    let (diff, steps) = sampler.difference(level, path);
                    stats.push(diff, steps);
                }
                stats
            })
            .collect();
        let mut total = LevelStats::new(level);
        for p in &partial {
            total.merge(p);
        }
        total
    }
}

/// Statistics of `count` coupled samples at `level` under the system `config` selects
/// (augmented for Ito linearization and approx-milstein). Level 0 with an exact base
/// returns the closed-form mean with zero variance.
pub fn level_statistics<T, S, P>(
    config: &MlmcConfig<T>,
    system: &S,
    payoff: &P,
    level: u32,
    count: u64,
) -> Result<LevelStats<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    config.validate()?;
    payoff.check_dim(system.state_dim())?;
    let (m, seed, scheme) = (config.refinement, config.global_seed, config.scheme);
    if config.augments() {
        let aug = augment(system, payoff)?;
        if level == 0 && config.ito_linearize {
            let mean = base_level_expectation(&aug, system.horizon());
            return Ok(LevelStats::from_moments(0, count.max(2), mean, T::zero()));
        }
        let selector = aug.selector();
        Ok(LevelSampler::new(&aug, &selector, scheme, m, seed)?.sample(level, 0, count))
    } else {
        Ok(LevelSampler::new(system, payoff, scheme, m, seed)?.sample(level, 0, count))
    }
}

enum Mode<'c> {
    Adaptive,
    Fixed(&'c [u64]),
}

/// Runs the adaptive estimator.
pub fn run<T, S, P>(config: &MlmcConfig<T>, system: &S, payoff: &P) -> Result<MlmcResult<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    dispatch(config, system, payoff, Mode::Adaptive)
}

/// Non-adaptive estimator with `counts[l]` samples on level `l` (`L = counts.len() - 1`).
/// `counts[0]` is ignored when the base level is exact.
pub fn run_with_counts<T, S, P>(
    config: &MlmcConfig<T>,
    system: &S,
    payoff: &P,
    counts: &[u64],
) -> Result<MlmcResult<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    if counts.is_empty() {
        return Err(MlmcError::Config("need at least the base level count".into()));
    }
    dispatch(config, system, payoff, Mode::Fixed(counts))
}

fn dispatch<T, S, P>(config: &MlmcConfig<T>, system: &S, payoff: &P, mode: Mode<'_>) -> Result<MlmcResult<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    config.validate()?;
    payoff.check_dim(system.state_dim())?;
    let dimension = system.state_dim();
    if config.augments() {
        let aug = augment(system, payoff)?;
        let selector = aug.selector();
        let base = config
            .ito_linearize
            .then(|| base_level_expectation(&aug, system.horizon()));
        drive(config, &aug, &selector, base, dimension, true, mode)
    } else {
        drive(config, system, payoff, None, dimension, false, mode)
    }
}

fn drive<T, S, P>(
    config: &MlmcConfig<T>,
    system: &S,
    payoff: &P,
    exact_base: Option<T>,
    dimension: usize,
    augmented: bool,
    mode: Mode<'_>,
) -> Result<MlmcResult<T>>
where
    T: Real,
    S: SdeSystem<T> + ?Sized,
    P: Payoff<T> + ?Sized,
{
    let sampler = LevelSampler::new(system, payoff, config.scheme, config.refinement, config.global_seed)?;
    let horizon = system.horizon();
    let m = config.refinement;
    let beta = config.scheme.descriptor().beta();

    let mut levels = Vec::new();
    match exact_base {
        Some(value) => levels.push(LevelStats::from_moments(0, 1, value, T::zero())),
        None => {
            let n0 = match mode {
                Mode::Fixed(counts) => counts[0],
                Mode::Adaptive => config.initial_samples,
            };
            levels.push(sampler.sample(0, 0, n0));
        }
    }
    let first_sampled = usize::from(exact_base.is_some());

    let mut is_converged = false;
    match mode {
        Mode::Fixed(counts) => {
            for (l, &n) in counts.iter().enumerate().skip(1) {
                levels.push(sampler.sample(l as u32, 0, n));
            }
        }
        Mode::Adaptive => {
            let mut level = 1u32;
            loop {
                let previous = levels[level as usize - 1].count();
                let n_init = initial_samples(level, m, beta, previous, config.initial_samples);
                levels.push(sampler.sample(level, 0, n_init));

                for _ in 0..MAX_TOP_UP_ROUNDS {
                    let targets = optimal_sample_sizes(&levels[first_sampled..], config.epsilon, horizon, m)?;
                    let mut added = false;
                    for (offset, target) in targets.into_iter().enumerate() {
                        let stats = &mut levels[first_sampled + offset];
                        let have = stats.count();
                        if target > have {
                            let extra = sampler.sample(stats.level, have, target - have);
                            stats.merge(&extra);
                            added = true;
                        }
                    }
                    if !added {
                        break;
                    }
                }

                let l = level as usize;
                if l >= 2 && converged(levels[l].mean(), levels[l - 1].mean(), m, config.epsilon, level) {
                    is_converged = true;
                    break;
                }
                if level >= config.max_level {
                    break;
                }
                level += 1;
            }
        }
    }

    let last = levels.len() - 1;
    let bias_proxy = if last >= 2 {
        bias_statistic(levels[last].mean(), levels[last - 1].mean(), m)
    } else {
        levels[last].mean().abs()
    };
    let mut result = MlmcResult {
        estimate: levels.iter().map(|s| s.mean()).sum(),
        levels,
        total_cost: 0.0,
        converged: is_converged,
        bias_proxy,
        scheme: config.scheme,
        refinement: m,
        horizon,
        exact_base: exact_base.is_some(),
        augmented,
        dimension,
    };
    result.total_cost = total_cost(&result, &config.scheme.descriptor(), dimension);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heston::gbm_system;
    use crate::payoff::{european_call, linear};

    fn stats(level: u32, variance: f64) -> LevelStats<f64> {
        LevelStats::from_moments(level, 100, 0.0, variance)
    }

    #[test]
    fn optimal_sizes_single_level() {
        let n = optimal_sample_sizes(&[stats(1, 0.01)], 0.1, 0.125, 2).unwrap();
        assert_eq!(n, vec![2]);
    }

    #[test]
    fn optimal_sizes_two_levels() {
        // T = 0.5, M = 2 gives h_1 = 0.25, h_2 = 0.125
        let n = optimal_sample_sizes(&[stats(1, 0.01), stats(2, 0.0025)], 0.1, 0.5, 2).unwrap();
        assert_eq!(n, vec![4, 2]);
    }

    #[test]
    fn optimal_sizes_scale_with_inverse_epsilon_squared() {
        let s = [stats(1, 0.3), stats(2, 0.07), stats(3, 0.02)];
        let unrounded = |eps: f64| {
            let vh: Vec<(f64, f64)> = s
                .iter()
                .map(|x| (x.variance().unwrap(), step_size(0.125, 2, x.level)))
                .collect();
            let sum: f64 = vh.iter().map(|(v, h)| (v / h).sqrt()).sum();
            vh.iter().map(|(v, h)| 2.0 / (eps * eps) * (v * h).sqrt() * sum).collect::<Vec<_>>()
        };
        let a = unrounded(0.01);
        let b = unrounded(0.0025);
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 16.0).abs() < 1e-12);
        }
        let n = optimal_sample_sizes(&s, 0.01, 0.125, 2).unwrap();
        for (k, x) in n.iter().zip(&a) {
            assert_eq!(*k, x.ceil() as u64);
        }
        assert!(optimal_sample_sizes(&s, 0.0, 0.125, 2).is_err());
        assert!(optimal_sample_sizes(&[LevelStats::<f64>::new(1)], 0.1, 0.125, 2).is_err());
    }

    #[test]
    fn zero_variance_levels_keep_two_samples() {
        let n = optimal_sample_sizes(&[stats(1, 0.0), stats(2, 0.0)], 0.1, 1.0, 2).unwrap();
        assert_eq!(n, vec![2, 2]);
    }

    #[test]
    fn initial_sample_rule() {
        assert_eq!(initial_samples(1, 4, 2.0, 0, 400), 400);
        assert_eq!(initial_samples(2, 4, 2.0, 400, 400), 50);
        assert_eq!(initial_samples(2, 2, 1.0, 400, 400), 200);
        assert_eq!(initial_samples(5, 7, 2.0, 3, 400), 2);
    }

    #[test]
    fn convergence_rule() {
        assert!(!converged(0.05, 0.3, 2, 0.1, 3));
        assert!(converged(0.0, 0.0, 2, 0.1, 3));
        assert!(!converged(0.0, 0.0, 2, 0.1, 1));
        assert!(converged(0.07, 0.14, 2, 0.1, 2));
    }

    fn fake_result(exact_base: bool, augmented: bool, counts: &[u64]) -> MlmcResult<f64> {
        MlmcResult {
            estimate: 0.0,
            levels: counts
                .iter()
                .enumerate()
                .map(|(l, &n)| LevelStats::from_moments(l as u32, n, 0.0, 1.0))
                .collect(),
            total_cost: 0.0,
            converged: true,
            bias_proxy: 0.0,
            scheme: Scheme::Euler,
            refinement: 2,
            horizon: 0.125,
            exact_base,
            augmented,
            dimension: 2,
        }
    }

    #[test]
    fn cost_accounting() {
        let r = fake_result(false, false, &[100, 50]);
        assert!((total_cost(&r, &Scheme::Euler.descriptor(), 1) - 2000.0).abs() < 1e-9);
        assert!((total_cost(&r, &Scheme::Antithetic.descriptor(), 1) - 2800.0).abs() < 1e-9);
        let r = fake_result(true, true, &[1]);
        assert_eq!(total_cost(&r, &Scheme::Euler.descriptor(), 2), 0.0);
        // approx-milstein on a 2-d system: (3/2)·(N0/h0 + N1(16 + 2·8))
        let r = fake_result(false, true, &[100, 50]);
        let k = total_cost(&r, &Scheme::ApproxMilstein.descriptor(), 2);
        assert!((k - 1.5 * (800.0 + 50.0 * 32.0)).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let g = gbm_system(1.0f64, 0.2, 1.0, 0.125).unwrap();
        let p = linear(0);
        let bad_eps = MlmcConfig::new(0.0, 2, Scheme::Euler);
        assert!(matches!(run(&bad_eps, &g, &p), Err(MlmcError::Config(_))));
        let bad_m = MlmcConfig::new(0.01, 1, Scheme::Euler);
        assert!(run(&bad_m, &g, &p).is_err());
        let bad_l = MlmcConfig::new(0.01, 2, Scheme::Euler).with_max_level(1);
        assert!(run(&bad_l, &g, &p).is_err());
        let call = european_call(0, 1.0);
        let am = MlmcConfig::new(0.01, 2, Scheme::ApproxMilstein);
        assert!(matches!(run(&am, &g, &call), Err(MlmcError::Config(_))));
    }

    #[test]
    fn zero_noise_run_has_zero_variances() {
        let g = gbm_system(1.0f64, 0.0, 1.0, 0.125).unwrap();
        let p = linear(0);
        let cfg = MlmcConfig::new(1e-3, 2, Scheme::Euler).with_seed(5);
        let r = run(&cfg, &g, &p).unwrap();
        assert!(r.converged);
        for s in &r.levels {
            assert_eq!(s.variance().unwrap(), 0.0);
        }
        // the estimate telescopes to the deterministic Euler value on the finest grid
        let l = r.final_level();
        let n = 2u32.pow(l);
        let h = 0.125 / n as f64;
        let fine = (1.0 + h).powi(n as i32);
        assert!((r.estimate - fine).abs() < 1e-12);
    }
}
