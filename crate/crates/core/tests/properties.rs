use mkdv_core::flows::{single_step, Hamiltonian, Integrator};
use mkdv_core::functionals::{alpha, mass, AlphaMethod};
use mkdv_core::initial::{random_smooth, scale_into_ball};
use mkdv_core::inverse_map::{forward_r, invert_r};
use mkdv_core::lax::{greens_diagnostics, identity_residuals, DiagnosticsOptions};
use mkdv_core::{Field, Geometry, Mu};
use proptest::prelude::*;

fn mu_strategy() -> impl Strategy<Value = Mu> {
    prop_oneof![Just(Mu::Focusing), Just(Mu::Defocusing)]
}

fn small_field(n: usize, kappa: f64) -> impl Strategy<Value = Field> {
    (any::<u64>(), 0.005..0.05f64).prop_map(move |(seed, radius)| {
        let g = Geometry::circle(n).unwrap();
        scale_into_ball(&random_smooth(g, seed, 4.0), kappa, radius).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn samples_survive_coefficient_round_trip(v in prop::collection::vec(-1.0..1.0f64, 32)) {
        let g = Geometry::circle(32).unwrap();
        let f = Field::from_samples(g, v).unwrap();
        let back = Field::from_coeffs(g, f.coeffs().to_vec()).unwrap();
        // the Nyquist mode is dropped, so compare after one projection
        let again = Field::from_coeffs(g, back.coeffs().to_vec()).unwrap();
        prop_assert!(back.sub(&again).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn diagnostics_satisfy_identities(q in small_field(64, 4.0), mu in mu_strategy()) {
        let d = greens_diagnostics(&q, 4.0, mu, &DiagnosticsOptions::default()).unwrap();
        prop_assert!(identity_residuals(&q, &d, mu).unwrap().max() < 1e-9);
    }

    #[test]
    fn r_commutes_with_translation(q in small_field(32, 4.0), h in 0.0..1.0f64, mu in mu_strategy()) {
        let a = forward_r(&q.shift(h), 4.0, mu).unwrap();
        let b = forward_r(&q, 4.0, mu).unwrap().shift(h);
        prop_assert!(a.sub(&b).unwrap().l2_norm() < 1e-12);
    }

    #[test]
    fn inversion_round_trip(q in small_field(32, 6.0), mu in mu_strategy()) {
        let rep = invert_r(&forward_r(&q, 6.0, mu).unwrap(), 6.0, mu, 1e-12, 100).unwrap();
        prop_assert!(rep.q_recovered.sub(&q).unwrap().l2_norm() < 1e-9);
    }

    #[test]
    fn mkdv_step_keeps_mass(q in small_field(32, 4.0), mu in mu_strategy()) {
        let next = single_step(&q, Hamiltonian::Mkdv, mu, 1e-4, Integrator::EtdRk4).unwrap();
        // explicit RK keeps a quadratic invariant only to truncation error,
        // which reaches ~5e-10 on under-resolved draws
        prop_assert!((mass(&next) - mass(&q)).abs() < 1e-8 * (1.0 + mass(&q)));
    }

    #[test]
    fn alpha_methods_agree(q in small_field(32, 4.0), mu in mu_strategy()) {
        let a = alpha(&q, 4.0, mu, AlphaMethod::Series).unwrap().alpha;
        let b = alpha(&q, 4.0, mu, AlphaMethod::Logdet).unwrap().alpha;
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}
