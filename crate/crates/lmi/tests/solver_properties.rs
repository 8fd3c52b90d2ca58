use gridforge_lmi::{solve, sym_eig, LmiBlock, LmiProgram, Sense, SolveStatus, SolverOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Cyclic Jacobi rotations: an eigenvalue oracle that shares no code with the library.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * a.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    values.sort_by(f64::total_cmp);
    values
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn block(label: &str, constant: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>, sense: Sense) -> LmiBlock {
    LmiBlock { label: label.into(), constant, coeffs, sense, strict: false }
}

/// minimize t subject to t I − A ⪰ 0.
fn largest_eigenvalue_program(a: &DMatrix<f64>) -> LmiProgram {
    let n = a.nrows();
    let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
    p.push_block(block("upper", -a.clone(), vec![DMatrix::identity(n, n)], Sense::Psd));
    p
}

fn close(found: f64, expected: f64) -> bool {
    (found - expected).abs() <= 1e-6 * (1.0 + expected.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn largest_eigenvalue_is_recovered(a in symmetric(4)) {
        let s = solve(&largest_eigenvalue_program(&a), &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        let oracle = *jacobi_eigenvalues(&a).last().unwrap();
        prop_assert!(close(s.x[0], oracle), "{} vs {}", s.x[0], oracle);
    }

    #[test]
    fn smallest_eigenvalue_is_recovered(a in symmetric(3)) {
        // maximize t subject to A − t I ⪰ 0, written as minimize −t.
        let mut p = LmiProgram::new(1).with_objective(vec![-1.0]);
        p.push_block(block("lower", a.clone(), vec![-DMatrix::identity(3, 3)], Sense::Psd));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        let oracle = jacobi_eigenvalues(&a)[0];
        prop_assert!(close(s.x[0], oracle), "{} vs {}", s.x[0], oracle);
    }

    #[test]
    fn spectral_norm_is_recovered(v in prop::collection::vec(-3.0..3.0f64, 6)) {
        // minimize t subject to [[t I, M], [Mᵀ, t I]] ⪰ 0 with M 2×3.
        let m = DMatrix::from_row_slice(2, 3, &v);
        let mut constant = DMatrix::zeros(5, 5);
        constant.view_mut((0, 2), (2, 3)).copy_from(&m);
        constant.view_mut((2, 0), (3, 2)).copy_from(&m.transpose());
        let mut p = LmiProgram::new(1).with_objective(vec![1.0]);
        p.push_block(block("norm", constant, vec![DMatrix::identity(5, 5)], Sense::Psd));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        let oracle = jacobi_eigenvalues(&(m.transpose() * &m)).last().unwrap().max(0.0).sqrt();
        prop_assert!(close(s.x[0], oracle), "{} vs {}", s.x[0], oracle);
    }

    #[test]
    fn solves_are_deterministic(a in symmetric(3)) {
        let p = largest_eigenvalue_program(&a);
        let first = solve(&p, &SolverOptions::default()).unwrap();
        let second = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert_eq!(first.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        second.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(first.iterations, second.iterations);
    }

    #[test]
    fn reported_margins_survive_independent_check(a in symmetric(3), b in symmetric(3)) {
        // Two coupled blocks: t I − A ⪰ 0 and B + s I ⪯ 0 with s ≤ t, minimize t − s.
        let mut p = LmiProgram::new(2).with_objective(vec![1.0, -1.0]);
        let zero = DMatrix::zeros(3, 3);
        p.push_block(block("upper", -a.clone(), vec![DMatrix::identity(3, 3), zero.clone()], Sense::Psd));
        p.push_block(block("lower", b.clone(), vec![zero, DMatrix::identity(3, 3)], Sense::Nsd));
        let s = solve(&p, &SolverOptions::default()).unwrap();
        prop_assert!(s.status.is_feasible());
        for (blk, &margin) in p.blocks.iter().zip(&s.margins) {
            let oracle = jacobi_eigenvalues(&blk.slack(&s.x))[0];
            prop_assert!(oracle >= -1e-9 * (1.0 + blk.slack(&s.x).norm()));
            prop_assert!((oracle - margin).abs() <= 1e-9 * (1.0 + margin.abs()));
        }
    }

    #[test]
    fn merit_never_increases_within_a_stage(a in symmetric(4)) {
        let s = solve(&largest_eigenvalue_program(&a), &SolverOptions::default()).unwrap();
        for pair in s.trace.windows(2) {
            if pair[0].phase == pair[1].phase && pair[0].tau == pair[1].tau {
                prop_assert!(pair[1].merit <= pair[0].merit);
            }
        }
    }

    #[test]
    fn symmetric_decomposition_reconstructs(a in symmetric(5)) {
        let eig = sym_eig(&a).unwrap();
        let rebuilt = &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
        prop_assert!((rebuilt - &a).norm() <= 1e-12 * (1.0 + a.norm()));
        let orth = eig.vectors.transpose() * &eig.vectors - DMatrix::<f64>::identity(5, 5);
        prop_assert!(orth.norm() <= 1e-12);
        let oracle = jacobi_eigenvalues(&a);
        for (v, o) in eig.values.iter().zip(&oracle) {
            prop_assert!((v - o).abs() <= 1e-10 * (1.0 + o.abs()));
        }
    }
}

#[test]
fn contradictory_blocks_are_infeasible() {
    // x ⪰ 1 and x ⪯ −1.
    let mut p = LmiProgram::new(1);
    p.push_block(block("above", DMatrix::from_element(1, 1, -1.0), vec![DMatrix::from_element(1, 1, 1.0)], Sense::Psd));
    p.push_block(block("below", DMatrix::from_element(1, 1, 1.0), vec![DMatrix::from_element(1, 1, 1.0)], Sense::Nsd));
    let s = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Infeasible);
}

#[test]
fn malformed_program_is_rejected() {
    let mut p = LmiProgram::new(2);
    p.push_block(block("short", DMatrix::identity(2, 2), vec![DMatrix::identity(2, 2)], Sense::Psd));
    assert!(solve(&p, &SolverOptions::default()).is_err());
}

#[test]
fn asymmetric_block_is_rejected() {
    let mut p = LmiProgram::new(1);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
    p.push_block(block("skew", bad, vec![DMatrix::identity(2, 2)], Sense::Psd));
    assert!(solve(&p, &SolverOptions::default()).is_err());
}
