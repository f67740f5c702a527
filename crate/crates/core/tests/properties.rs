use approx::assert_relative_eq;
use hinf_dpi::archive;
use hinf_dpi::basis::{BasisSet, MonomialTable};
use hinf_dpi::collection::{collect_dataset, BehaviorSignalSpec, CollectionConfig, CollectionMode, WindowStatistics};
use hinf_dpi::dynamics::{AugmentedState, ScalarLinear};
use hinf_dpi::learner::{assemble_row, least_squares, RankPolicy, TrainConfig, WeightSet};
use hinf_dpi::quadrature::DiscountedRule;
use hinf_dpi::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

fn weights(basis: &BasisSet) -> impl Strategy<Value = WeightSet> {
    let (l1, l2, l3) = (basis.critic.len(), basis.actor_u.len(), basis.actor_d.len());
    (vec_of(l1), vec_of(l2), vec_of(l3)).prop_map(|(c, a, d)| WeightSet {
        critic: DVector::from_vec(c),
        actor_u: DMatrix::from_vec(a.len(), 1, a),
        actor_d: DMatrix::from_vec(d.len(), 1, d),
    })
}

fn symmetric(n: usize, v: Vec<f64>) -> DMatrix<f64> {
    let a = DMatrix::from_vec(n, n, v);
    &a * a.transpose()
}

fn statistics(basis: &BasisSet) -> impl Strategy<Value = WindowStatistics> {
    let (l1, l2, l3, n) = (basis.critic.len(), basis.actor_u.len(), basis.actor_d.len(), basis.n_vars());
    (vec_of(l1), vec_of(l1), 0.0..5.0f64, vec_of(l2), vec_of(l2 * l2), vec_of(l3), vec_of(l3 * l3)).prop_map(
        move |(rs, re, i_q, pu, pp, vd, vv)| WindowStatistics {
            state_start: DVector::zeros(n),
            state_end: DVector::zeros(n),
            rho_start: DVector::from_vec(rs),
            rho_end: DVector::from_vec(re),
            i_q,
            i_phi_u: DMatrix::from_vec(l2, 1, pu),
            i_phi_phi: symmetric(l2, pp),
            i_vphi_d: DMatrix::from_vec(l3, 1, vd),
            i_vphi_vphi: symmetric(l3, vv),
        },
    )
}

fn bench_basis() -> BasisSet {
    BasisSet::polynomial(4).unwrap()
}

fn scalar_basis() -> BasisSet {
    let t = |e: Vec<Vec<u32>>| MonomialTable::from_exponents(2, e).unwrap();
    BasisSet::new(t(vec![vec![2, 0]]), t(vec![vec![1, 0]]), t(vec![vec![1, 0]])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stack_unstack_roundtrip(w in weights(&bench_basis())) {
        let basis = bench_basis();
        let stacked = w.stack();
        prop_assert_eq!(stacked.len(), basis.unknowns(1, 1));
        prop_assert_eq!(WeightSet::unstack(&stacked, &basis, 1, 1).unwrap(), w);
    }

    #[test]
    fn row_is_affine_in_delta(
        stats in statistics(&bench_basis()),
        w in weights(&bench_basis()),
        delta in 0.01..1.0f64,
    ) {
        let cfg = |d| TrainConfig::new(d, 5.0, 0.1, DMatrix::identity(2, 2) * 10.0, vec![1.0]);
        let (omega, lambda) = assemble_row(&stats, &w, &cfg(delta), 0.1).unwrap();
        let (omega0, lambda0) = assemble_row(&stats, &w, &cfg(0.0), 0.1).unwrap();
        let (omega1, lambda1) = assemble_row(&stats, &w, &cfg(1.0), 0.1).unwrap();
        prop_assert_eq!(&omega, &omega0);
        prop_assert_eq!(&omega, &omega1);
        let blend = (1.0 - delta) * lambda0 + delta * lambda1;
        prop_assert!((lambda - blend).abs() <= 1e-9 * (1.0 + lambda0.abs() + lambda1.abs()));
    }

    #[test]
    fn least_squares_recovers_consistent_solution(
        a in vec_of(40 * 5),
        x in vec_of(5),
    ) {
        let rows = DMatrix::from_vec(40, 5, a) + DMatrix::identity(40, 5) * 10.0;
        let x = DVector::from_vec(x);
        let b = &rows * &x;
        let (w, info) = least_squares(&rows, &b, 0.0, 1e-9, RankPolicy::Strict).unwrap();
        prop_assert_eq!(info.rank, 5);
        prop_assert!((w - x).amax() < 1e-9);
    }

    #[test]
    fn quadrature_exact_for_linear_integrands(
        alpha in 0.0..2.0f64,
        a in -5.0..5.0f64,
        b in -5.0..5.0f64,
        steps in 1usize..40,
    ) {
        let h = 0.01;
        let rule = DiscountedRule::new(alpha, h, steps).unwrap();
        let values: Vec<f64> = (0..=steps).map(|k| a + b * k as f64 * h).collect();
        let t = steps as f64 * h;
        // ∫₀ᵗ e^{−αs}(a + bs) ds
        let exact = if alpha == 0.0 {
            a * t + b * t * t / 2.0
        } else {
            let e = (-alpha * t).exp();
            a * (1.0 - e) / alpha + b * ((1.0 - e) / (alpha * alpha) - t * e / alpha)
        };
        assert_relative_eq!(rule.integrate(&values).unwrap(), exact, epsilon = 1e-12, max_relative = 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn archive_roundtrip(seed in 0u64..1000, x0 in -1.0..1.0f64) {
        let basis = scalar_basis();
        let spec = |amplitude: f64| BehaviorSignalSpec {
            amplitude,
            n_sinusoids: 4,
            freq_range: [0.1, 5.0],
            noise_amplitude: amplitude / 4.0,
            seed,
        };
        let cfg = CollectionConfig {
            period: 0.1,
            substeps: 10,
            alpha: 0.1,
            q_weight: DMatrix::identity(1, 1),
            n_windows: 20,
            mode: CollectionMode::SingleTrajectory,
            seed,
        };
        let start = AugmentedState::new(DVector::from_vec(vec![x0, 0.0])).unwrap();
        let data = collect_dataset(&ScalarLinear::default(), &basis, &[spec(2.0)], &[spec(1.0)], &start, &cfg, false)
            .unwrap()
            .dataset;
        let bytes = archive::encode(&data).unwrap();
        prop_assert_eq!(archive::decode(&bytes).unwrap(), data);
    }
}
