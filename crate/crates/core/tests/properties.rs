use mlmc::model::fd_h_tensor;
use mlmc::{
    coarse_increment, gbm_system, heston_default, levy_quadrature, optimal_sample_sizes, reverse_substeps,
    step_size, IncrementGrid, LevelStats, SdeSystem, SdeSystemExt,
};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = IncrementGrid<f64>> {
    (1usize..=8, 1usize..=3).prop_flat_map(|(m, d)| {
        proptest::collection::vec(-1.0f64..1.0, m * d)
            .prop_map(move |v| IncrementGrid::from_rows(d, 0.01, v).unwrap())
    })
}

proptest! {
    #[test]
    fn coarse_increment_is_linear(g in grid_strategy(), c in -3.0f64..3.0) {
        let d = g.noise_dim();
        let other: Vec<f64> = g.increments().iter().map(|x| x * 0.5 - 0.1).collect();
        let h = IncrementGrid::from_rows(d, 0.01, other).unwrap();
        let sum: Vec<f64> = g.increments().iter().zip(h.increments()).map(|(a, b)| c * a + b).collect();
        let s = IncrementGrid::from_rows(d, 0.01, sum).unwrap();
        let (cg, ch, cs) = (coarse_increment(&g), coarse_increment(&h), coarse_increment(&s));
        for j in 0..d {
            prop_assert!((cs[j] - (c * cg[j] + ch[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn reversal_is_an_involution(g in grid_strategy()) {
        prop_assert_eq!(reverse_substeps(&reverse_substeps(&g)), g);
    }

    #[test]
    fn reversed_quadrature_is_the_transpose(g in grid_strategy()) {
        let d = g.noise_dim();
        let a = levy_quadrature(&g);
        let b = levy_quadrature(&reverse_substeps(&g));
        for j in 0..d {
            for k in 0..d {
                prop_assert!((b[j * d + k] - a[k * d + j]).abs() < 1e-12);
            }
        }
    }

    /// `𝒜_jk + 𝒜_kj + Σ_m δW_j δW_k = ΔW_j ΔW_k`.
    #[test]
    fn quadrature_polarization(g in grid_strategy()) {
        let d = g.noise_dim();
        let a = levy_quadrature(&g);
        let w = coarse_increment(&g);
        for j in 0..d {
            for k in 0..d {
                let diag: f64 = (0..g.substeps()).map(|m| g.get(m, j) * g.get(m, k)).sum();
                let lhs = a[j * d + k] + a[k * d + j] + diag;
                prop_assert!((lhs - w[j] * w[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heston_h_matches_finite_differences(s1 in 0.1f64..2.0, s2 in 0.1f64..3.0) {
        let sys = heston_default::<f64>();
        let x = [s1, s2];
        let h = sys.h_tensor_vec(&x, 0.0);
        let fd = fd_h_tensor(&sys, &x, 0.0);
        for (a, b) in h.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gbm_h_matches_finite_differences(s in 0.1f64..3.0, sigma in 0.0f64..1.5) {
        let g = gbm_system(0.3f64, sigma, 1.0, 1.0).unwrap();
        let h = g.h_tensor_vec(&[s], 0.0);
        let fd = fd_h_tensor(&g, &[s], 0.0);
        prop_assert!((h[0] - fd[0]).abs() <= 1e-6 * h[0].abs().max(1.0));
    }

    /// The allocation meets the sampling budget and scales like `ε⁻²`.
    #[test]
    fn allocation_meets_budget(
        vars in proptest::collection::vec(1e-9f64..1.0, 1..6),
        eps in 1e-3f64..0.1,
        m in 2usize..8,
    ) {
        let stats: Vec<LevelStats<f64>> = vars
            .iter()
            .enumerate()
            .map(|(l, &v)| LevelStats::from_moments(l as u32, 10, 0.0, v))
            .collect();
        let n = optimal_sample_sizes(&stats, eps, 0.125, m).unwrap();
        let budget: f64 = vars.iter().zip(&n).map(|(v, &k)| v / k as f64).sum();
        prop_assert!(budget <= eps * eps / 2.0 * (1.0 + 1e-9));
        prop_assert!(n.iter().all(|&k| k >= 2));
        let finer = optimal_sample_sizes(&stats, eps / 2.0, 0.125, m).unwrap();
        for (a, b) in n.iter().zip(&finer) {
            // 4x the unrounded count, so within rounding of 4x the rounded one
            prop_assert!(*b as f64 >= 4.0 * (*a as f64 - 1.0) && *b as f64 <= 4.0 * *a as f64 + 1.0 || *a == 2);
        }
    }

    #[test]
    fn step_sizes_refine_geometrically(m in 2usize..9, l in 0u32..8) {
        let h = step_size(0.125f64, m, l);
        prop_assert!((h * (m as f64).powi(l as i32) - 0.125).abs() < 1e-15);
    }
}

#[test]
fn heston_coefficients_at_the_initial_state() {
    let sys = heston_default::<f64>();
    let x = sys.initial_state().to_vec();
    assert_eq!(sys.drift_vec(&x, 0.0), vec![0.5, 1.0]);
    let b = sys.diffusion_vec(&x, 0.0);
    assert!((b[0] - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((b[3] - 0.25 * 0.5f64.sqrt()).abs() < 1e-12);
    assert_eq!((b[1], b[2]), (0.0, 0.0));
}
