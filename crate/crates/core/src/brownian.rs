//! Brownian increments for one coarse interval of one path.
//!
//! Every increment stream is keyed by a [`PathSeed`]: the four seed fields form the
//! 256-bit key of a ChaCha8 block function, so the increments for any
//! `(level, path, coarse step)` are available directly, without streaming through
//! the preceding ones. Uniform words are mapped to normals by the inverse normal CDF,
//! one word per normal.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::function::erf::erfc_inv;

use crate::error::{MlmcError, Result};
use crate::real::Real;

/// Key of one increment stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathSeed {
    pub global_seed: u64,
    pub level: u32,
    pub path_index: u64,
    pub coarse_step_index: u64,
}

impl PathSeed {
    pub fn new(global_seed: u64, level: u32, path_index: u64, coarse_step_index: u64) -> Self {
        Self {
            global_seed,
            level,
            path_index,
            coarse_step_index,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.global_seed.to_le_bytes());
        key[8..16].copy_from_slice(&u64::from(self.level).to_le_bytes());
        key[16..24].copy_from_slice(&self.path_index.to_le_bytes());
        key[24..32].copy_from_slice(&self.coarse_step_index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Maps a 64-bit word to a standard normal draw through the inverse CDF.
#[inline]
pub fn standard_normal_from_bits(bits: u64) -> f64 {
    // 53 random bits, shifted to the open interval (0, 1); the upper half is mirrored
    // so that both tails are computed from a small, exactly representable argument
    const HALF: u64 = 1 << 52;
    let k = bits >> 11;
    let scale = 1.0 / (1u64 << 53) as f64;
    if k >= HALF {
        let v = ((2 * HALF - 1 - k) as f64 + 0.5) * scale;
        std::f64::consts::SQRT_2 * erfc_inv(2.0 * v)
    } else {
        let u = (k as f64 + 0.5) * scale;
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
    }
}

/// Noise correlation `Ω` together with a factor `R` satisfying `R Rᵀ = Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation<T> {
    dim: usize,
    root: Vec<T>,
    omega: Vec<T>,
    identity: bool,
}

impl<T: Real> Correlation<T> {
    pub fn identity(dim: usize) -> Self {
        let mut root = vec![T::zero(); dim * dim];
        for j in 0..dim {
            root[j * dim + j] = T::one();
        }
        Self {
            dim,
            omega: root.clone(),
            root,
            identity: true,
        }
    }

    /// Builds the correlation from a row-major `dim × dim` factor `R`.
    pub fn from_root(dim: usize, root: Vec<T>) -> Result<Self> {
        if dim == 0 || root.len() != dim * dim {
            return Err(MlmcError::Dimension(format!(
                "correlation root must be {dim}x{dim}, got {} entries",
                root.len()
            )));
        }
        if root.iter().any(|x| !x.is_finite()) {
            return Err(MlmcError::Domain("correlation root has non-finite entries".into()));
        }
        let mut omega = vec![T::zero(); dim * dim];
        for j in 0..dim {
            for k in 0..dim {
                omega[j * dim + k] = (0..dim).map(|l| root[j * dim + l] * root[k * dim + l]).sum();
            }
        }
        let identity = root == Self::identity(dim).root;
        Ok(Self {
            dim,
            root,
            omega,
            identity,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &[T] {
        &self.root
    }

    /// `Ω`, row-major.
    pub fn omega(&self) -> &[T] {
        &self.omega
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }
}

/// Fine Brownian increments `δW` for one coarse step: `M` rows of `D` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementGrid<T> {
    substeps: usize,
    noise_dim: usize,
    delta_t: T,
    increments: Vec<T>,
}

impl<T: Real> IncrementGrid<T> {
    /// Zero-filled grid.
    pub fn zeros(substeps: usize, noise_dim: usize, delta_t: T) -> Result<Self> {
        check_shape(substeps, noise_dim)?;
        if !(delta_t > T::zero()) {
            return Err(MlmcError::Domain(format!("sub-step must be positive, got {delta_t}")));
        }
        Ok(Self {
            substeps,
            noise_dim,
            delta_t,
            increments: vec![T::zero(); substeps * noise_dim],
        })
    }

    /// Wraps explicit increments given row by row.
    pub fn from_rows(noise_dim: usize, delta_t: T, increments: Vec<T>) -> Result<Self> {
        if noise_dim == 0 || increments.is_empty() || increments.len() % noise_dim != 0 {
            return Err(MlmcError::Dimension(format!(
                "{} increments do not form rows of width {noise_dim}",
                increments.len()
            )));
        }
        let mut grid = Self::zeros(increments.len() / noise_dim, noise_dim, delta_t)?;
        grid.increments = increments;
        Ok(grid)
    }

    /// Number of sub-steps `M`.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Sub-step length `δt`.
    pub fn delta_t(&self) -> T {
        self.delta_t
    }

    /// Coarse step length `Δt = M δt`.
    pub fn coarse_dt(&self) -> T {
        self.delta_t * T::from_count(self.substeps as u64)
    }

    pub fn increments(&self) -> &[T] {
        &self.increments
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[T] {
        &self.increments[m * self.noise_dim..(m + 1) * self.noise_dim]
    }

    #[inline]
    pub fn get(&self, m: usize, j: usize) -> T {
        self.increments[m * self.noise_dim + j]
    }

    /// Overwrites the grid with the increments keyed by `seed`.
    ///
    /// `correlation` must have the grid's noise dimension.
    pub fn fill(&mut self, seed: &PathSeed, correlation: &Correlation<T>) {
        debug_assert_eq!(correlation.dim(), self.noise_dim);
        let mut rng = seed.rng();
        let scale = self.delta_t.sqrt();
        let dim = self.noise_dim;
        if correlation.is_identity() {
            for x in self.increments.iter_mut() {
                *x = T::lit(standard_normal_from_bits(rng.next_u64())) * scale;
            }
            return;
        }
        let mut z = smallvec::SmallVec::<[T; 8]>::from_elem(T::zero(), dim);
        let root = correlation.root();
        for row in self.increments.chunks_exact_mut(dim) {
            for zj in z.iter_mut() {
                *zj = T::lit(standard_normal_from_bits(rng.next_u64()));
            }
            for (j, out) in row.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (l, zl) in z.iter().enumerate() {
                    acc = acc + root[j * dim + l] * *zl;
                }
                *out = acc * scale;
            }
        }
    }

    /// Sum of the rows, `ΔW_j = Σ_m δW_{j,m}`, written into `out`.
    pub fn coarse_increment_into(&self, out: &mut [T]) {
        out.iter_mut().for_each(|x| *x = T::zero());
        for row in self.increments.chunks_exact(self.noise_dim) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w;
            }
        }
    }

    /// `𝒜_jk = Σ_{m≥1} δW_{k,m} Σ_{q<m} δW_{j,q}`, row-major into `out`, via a
    /// running prefix sum over sub-steps.
    pub fn levy_quadrature_into(&self, prefix: &mut [T], out: &mut [T]) {
        let dim = self.noise_dim;
        out.iter_mut().for_each(|x| *x = T::zero());
        prefix.iter_mut().for_each(|x| *x = T::zero());
        for (m, row) in self.increments.chunks_exact(dim).enumerate() {
            if m > 0 {
                for j in 0..dim {
                    let pj = prefix[j];
                    for k in 0..dim {
                        out[j * dim + k] = out[j * dim + k] + pj * row[k];
                    }
                }
            }
            for (p, &w) in prefix.iter_mut().zip(row) {
                *p = *p + w;
            }
        }
    }

    /// Grid whose row `m` is row `M-1-m` of `self`.
    pub fn reversed(&self) -> Self {
        let mut increments = Vec::with_capacity(self.increments.len());
        for m in (0..self.substeps).rev() {
            increments.extend_from_slice(self.row(m));
        }
        Self {
            increments,
            ..self.clone()
        }
    }
}

fn check_shape(substeps: usize, noise_dim: usize) -> Result<()> {
    if substeps == 0 || noise_dim == 0 {
        return Err(MlmcError::Dimension(format!(
            "grid needs at least one sub-step and one noise dimension, got M={substeps}, D={noise_dim}"
        )));
    }
    Ok(())
}

/// Draws the `M × D` grid of correlated increments keyed by `seed`.
pub fn sample_increments<T: Real>(
    seed: &PathSeed,
    substeps: usize,
    noise_dim: usize,
    delta_t: T,
    correlation: &Correlation<T>,
) -> Result<IncrementGrid<T>> {
    if correlation.dim() != noise_dim {
        return Err(MlmcError::Dimension(format!(
            "correlation is {0}x{0} but noise dimension is {noise_dim}",
            correlation.dim()
        )));
    }
    let mut grid = IncrementGrid::zeros(substeps, noise_dim, delta_t)?;
    grid.fill(seed, correlation);
    Ok(grid)
}

/// `ΔW`: column sums of the grid, summed in ascending sub-step order.
pub fn coarse_increment<T: Real>(grid: &IncrementGrid<T>) -> Vec<T> {
    let mut out = vec![T::zero(); grid.noise_dim()];
    grid.coarse_increment_into(&mut out);
    out
}

/// The `D × D` Lévy-area quadrature `𝒜` of the grid, row-major.
pub fn levy_quadrature<T: Real>(grid: &IncrementGrid<T>) -> Vec<T> {
    let d = grid.noise_dim();
    let mut prefix = vec![T::zero(); d];
    let mut out = vec![T::zero(); d * d];
    grid.levy_quadrature_into(&mut prefix, &mut out);
    out
}

/// Reverses the sub-step order; drives the antithetic fine path.
pub fn reverse_substeps<T: Real>(grid: &IncrementGrid<T>) -> IncrementGrid<T> {
    grid.reversed()
}
