use crate::real::Real;

/// Streaming count, mean and variance of the level-difference samples at one level,
/// plus the unweighted time steps spent producing them.
///
/// Updates use Welford's recurrence; [`LevelStats::merge`] combines two disjoint
/// accumulators with the Chan et al. pairwise formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats<T> {
    pub level: u32,
    count: u64,
    mean: T,
    m2: T,
    steps: u64,
}

impl<T: Real> LevelStats<T> {
    pub fn new(level: u32) -> Self {
        Self {
            level,
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
            steps: 0,
        }
    }

    /// Accumulator with prescribed moments, e.g. an exactly known level.
    pub fn from_moments(level: u32, count: u64, mean: T, variance: T) -> Self {
        let m2 = if count > 1 {
            variance * T::from_count(count - 1)
        } else {
            T::zero()
        };
        Self {
            level,
            count,
            mean,
            m2,
            steps: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, value: T, steps: u64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean = self.mean + delta / T::from_count(self.count);
        self.m2 = self.m2 + delta * (value - self.mean);
        self.steps += steps;
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let level = self.level;
            *self = *other;
            self.level = level;
            return;
        }
        let n_a = T::from_count(self.count);
        let n_b = T::from_count(other.count);
        let n = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean = self.mean + delta * n_b / n;
        self.m2 = self.m2 + other.m2 + delta * delta * n_a * n_b / n;
        self.count += other.count;
        self.steps += other.steps;
    }

    /// `N_l`.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// `Ŷ_l`.
    pub fn mean(&self) -> T {
        self.mean
    }

    /// Unbiased `V_l`; `None` until two samples are in.
    pub fn variance(&self) -> Option<T> {
        (self.count >= 2).then(|| (self.m2 / T::from_count(self.count - 1)).max(T::zero()))
    }

    /// Standard error of the mean, `√(V_l / N_l)`.
    pub fn standard_error(&self) -> Option<T> {
        self.variance().map(|v| (v / T::from_count(self.count)).sqrt())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}
