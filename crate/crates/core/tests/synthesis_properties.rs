mod common;

use gridforge::certification::check_local_structure;
use gridforge::model::{augment, build_dgu_matrices, DguId, FilterParams, LineParams};
use gridforge::synthesis::{
    synthesize, synthesize_filter, verify_controller, verify_k1_identity, K1Residual, LocalController, SynthesisConfig,
    SynthesisOutcome,
};
use nalgebra::{Matrix2, Matrix3, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn accepted(filter: &FilterParams, sigma_bar: f64) -> LocalController {
    match synthesize_filter(filter, &SynthesisConfig::new(sigma_bar).unwrap()).unwrap() {
        SynthesisOutcome::Accepted(c) => *c,
        SynthesisOutcome::Denied(r) => panic!("denied at {filter:?}: {r}"),
    }
}

/// Spectral norm of a symmetric 2×2 matrix from its closed-form eigenvalues.
fn sym2_norm(m: &Matrix2<f64>) -> f64 {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let radius = (0.25 * (m[(0, 0)] - m[(1, 1)]).powi(2) + m[(0, 1)] * m[(1, 0)]).sqrt();
    (mean + radius).abs().max((mean - radius).abs())
}

fn bits(m: &Matrix3<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

fn filter_strategy() -> impl Strategy<Value = FilterParams> {
    (0.05..=1.0f64, 1e-3..=10e-3f64, 1e-3..=5e-3f64).prop_map(|(r_t, l_t, c_t)| FilterParams { r_t, l_t, c_t })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn structural_identities_hold(filter in filter_strategy(), sigma_bar in prop::sample::select(vec![1.0, 10.0, 100.0])) {
        let ctrl = accepted(&filter, sigma_bar);
        let q22 = Matrix2::new(ctrl.q_local[(1, 1)], ctrl.q_local[(1, 2)], ctrl.q_local[(2, 1)], ctrl.q_local[(2, 2)]);
        let null = q22 * Vector2::new(1.0, ctrl.delta);
        prop_assert!(null.norm() <= 1e-6 * sym2_norm(&q22), "Q22 [1; δ] = {null:?}");

        let f22 = ctrl.closed_loop().unwrap()[(1, 1)];
        if f22.abs() > 1e-9 {
            let (p22, p23) = (ctrl.p[(1, 1)], ctrl.p[(1, 2)]);
            prop_assert!((p22 + ctrl.delta * p23).abs() <= 1e-6 * p22.abs());
        }

        match verify_k1_identity(&ctrl) {
            K1Residual::Value(r) => prop_assert!(r <= 1e-6 * (1.0 + ctrl.k[0].abs()), "k1 residual {r}"),
            K1Residual::NotApplicable => prop_assert!(false, "δ vanished"),
        }

        let p_norm = ctrl.p.norm();
        prop_assert!(ctrl.p[(0, 1)].abs() <= 1e-10 * p_norm && ctrl.p[(0, 2)].abs() <= 1e-10 * p_norm);
        prop_assert_eq!(ctrl.p[(0, 0)], sigma_bar * filter.c_t);
        prop_assert!(ctrl.k.norm() < ctrl.raw.beta.sqrt() * ctrl.raw.zeta);
        prop_assert!(ctrl.k[2] != 0.0);
        prop_assert!((ctrl.delta + (ctrl.k[1] - filter.r_t) / ctrl.k[2]).abs() <= 1e-12 * (1.0 + ctrl.delta.abs()));
        prop_assert!(check_local_structure(&ctrl).unwrap().passed);
    }

    #[test]
    fn synthesis_ignores_attached_lines(filter in filter_strategy(), r1 in 0.01..1.0f64, r2 in 0.01..1.0f64) {
        let cfg = SynthesisConfig::new(10.0).unwrap();
        let me = DguId(7);
        let lines = [LineParams::new(me, DguId(1), r1), LineParams::new(DguId(2), me, r2)];
        let mut gains = Vec::new();
        for attached in [&lines[..0], &lines[..1], &lines[..]] {
            let dgu = augment(&build_dgu_matrices(me, &filter, attached).unwrap());
            let ctrl = synthesize(&dgu, &filter, &cfg).unwrap().controller().cloned().unwrap();
            gains.push((ctrl.k.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits(&ctrl.p)));
        }
        prop_assert_eq!(&gains[0], &gains[1]);
        prop_assert_eq!(&gains[0], &gains[2]);
    }
}

#[test]
fn capacitance_scales_eta_and_pinned_entry() {
    let base = FilterParams::new(0.2, 2e-3, 1e-3).unwrap();
    let scaled = FilterParams { c_t: base.c_t * 10.0, ..base };
    let (a, b) = (accepted(&base, 10.0), accepted(&scaled, 10.0));
    assert!((b.eta / a.eta - 10.0).abs() < 1e-12);
    assert!((b.raw.y[(0, 0)] / a.raw.y[(0, 0)] - 0.1).abs() < 1e-12);
}

#[test]
fn broken_structure_gives_large_k1_residual() {
    let mut ctrl = accepted(&FilterParams::new(0.1, 1.8e-3, 2.2e-3).unwrap(), 10.0);
    ctrl.k[0] += 0.5;
    let K1Residual::Value(r) = verify_k1_identity(&ctrl) else { panic!("expected a value") };
    assert!(r > 0.4);
}

#[test]
fn vanishing_delta_is_not_applicable() {
    let mut ctrl = accepted(&FilterParams::new(0.1, 1.8e-3, 2.2e-3).unwrap(), 10.0);
    ctrl.k[1] = ctrl.filter.r_t;
    ctrl.delta = 0.0;
    assert_eq!(verify_k1_identity(&ctrl), K1Residual::NotApplicable);
}

#[test]
fn tampered_lyapunov_matrix_fails_verification() {
    let mut ctrl = accepted(&FilterParams::new(0.1, 1.8e-3, 2.2e-3).unwrap(), 10.0);
    ctrl.p[(0, 1)] = 1e-3;
    assert!(verify_controller(&ctrl).is_err());
}

#[test]
fn seeded_green_box_draws_are_never_denied() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let filter = common::green_filter(&mut rng);
        let outcome = synthesize_filter(&filter, &SynthesisConfig::new(10.0).unwrap()).unwrap();
        assert!(matches!(outcome, SynthesisOutcome::Accepted(_)), "{filter:?}");
    }
}

#[test]
fn huge_capacitance_is_denied_not_failed() {
    let filter = FilterParams::new(1.0, 1e-3, 1e6).unwrap();
    let outcome = synthesize_filter(&filter, &SynthesisConfig::new(10.0).unwrap()).unwrap();
    assert!(matches!(outcome, SynthesisOutcome::Denied(_)));
}
