mod common;

use std::collections::BTreeMap;

use gridforge::certification::{
    build_laplacian, check_global, check_lasalle_kernel, check_theorem1, ControllerSet, Verdict,
};
use gridforge::model::{DguId, MicrogridTopology};
use gridforge::synthesis::{synthesize_filter, SigmaBar, SynthesisConfig};
use gridforge_lmi::sym_eig;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthesize_all(topology: &MicrogridTopology, sigma_bar: f64) -> ControllerSet {
    let cfg = SynthesisConfig::new(sigma_bar).unwrap();
    topology
        .dgus()
        .iter()
        .map(|d| {
            let ctrl = synthesize_filter(&d.params.filter(), &cfg).unwrap().controller().cloned().unwrap();
            (d.id, ctrl)
        })
        .collect()
}

fn nonzero_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = sym_eig(m).unwrap();
    let scale = eig.values.amax().max(1.0);
    eig.values.iter().copied().filter(|v| v.abs() > 1e-9 * scale).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_connected_grids_are_certified(
        seed in any::<u64>(),
        n in 2usize..=10,
        sigma_bar in prop::sample::select(vec![1.0, 10.0, 100.0]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = common::random_connected(&mut rng, n);
        let controllers = synthesize_all(&topology, sigma_bar);
        let cert = check_global(&controllers, &topology, SigmaBar::new(sigma_bar).unwrap()).unwrap();
        prop_assert!(cert.checks.passed(), "{:?}", cert.checks);
        let report = check_theorem1(&cert, &topology);
        prop_assert_eq!(&report.verdict, &Verdict::Pass);
        prop_assert!(report.spectral_abscissa < 0.0);
        prop_assert!(cert.laplacian.max_row_sum() <= 1e-9);
        let kernel = check_lasalle_kernel(&cert);
        prop_assert_eq!(kernel.nullity, n + 1);
        prop_assert!(kernel.angle <= 1e-6, "angle {}", kernel.angle);
    }

    #[test]
    fn laplacian_is_a_negated_weighted_graph_laplacian(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topology = common::random_connected(&mut rng, n);
        let sigma_bar = 10.0;
        let lap = build_laplacian(&topology, SigmaBar::new(sigma_bar).unwrap());
        prop_assert!(lap.is_symmetric());
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| lap.l[(i, j)].abs()).sum();
            prop_assert!((lap.l[(i, i)] + off).abs() <= 1e-12 * off.max(1.0));
        }
        // Off-diagonal entries are 2σ̄/R_ij on edges and zero elsewhere.
        let mut expected = DMatrix::<f64>::zeros(n, n);
        for line in topology.lines() {
            let (a, b) = (topology.index_of(line.i).unwrap(), topology.index_of(line.j).unwrap());
            expected[(a, b)] = 2.0 * sigma_bar / line.r;
            expected[(b, a)] = 2.0 * sigma_bar / line.r;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert!((lap.l[(i, j)] - expected[(i, j)]).abs() <= 1e-12 * expected[(i, j)].max(1.0));
                }
            }
        }
        let eig = sym_eig(&lap.l).unwrap();
        prop_assert!(eig.max() <= 1e-9 * eig.values.amax());
        let zero = eig.values.iter().filter(|v| v.abs() <= 1e-9 * eig.values.amax()).count();
        prop_assert_eq!(zero, 1);
    }
}

#[test]
fn coupling_blocks_share_the_laplacian_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let topology = common::random_connected(&mut rng, 5);
    let controllers = synthesize_all(&topology, 10.0);
    let cert = check_global(&controllers, &topology, SigmaBar::new(10.0).unwrap()).unwrap();
    let bc = &cert.block_b + &cert.block_c;
    let from_blocks = nonzero_eigenvalues(&bc);
    let from_laplacian = nonzero_eigenvalues(&cert.laplacian.l);
    assert_eq!(from_blocks.len(), from_laplacian.len());
    for (a, b) in from_blocks.iter().zip(&from_laplacian) {
        assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn every_local_block_has_the_predicted_null_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let topology = common::random_connected(&mut rng, 4);
    let controllers = synthesize_all(&topology, 10.0);
    for ctrl in controllers.values() {
        let f = ctrl.closed_loop().unwrap();
        // F22 [1; δ] = 0: the lower-right 2×2 block kills the δ direction.
        let r0 = f[(1, 1)] + f[(1, 2)] * ctrl.delta;
        let r1 = f[(2, 1)] + f[(2, 2)] * ctrl.delta;
        let scale = f.fixed_view::<2, 2>(1, 1).norm();
        assert!(r0.abs().max(r1.abs()) <= 1e-9 * scale);
    }
}

#[test]
fn removing_a_controller_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let topology = common::random_connected(&mut rng, 3);
    let mut controllers: BTreeMap<DguId, _> = synthesize_all(&topology, 10.0);
    controllers.remove(&DguId(2));
    assert!(check_global(&controllers, &topology, SigmaBar::new(10.0).unwrap()).is_err());
}
