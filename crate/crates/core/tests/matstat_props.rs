use dse_core::matstat::{cholesky, psd_floor, solve_linear, sym_eigen, symmetrize, Matrix, SymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn square(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
        let rows: Vec<Vec<f64>> = v.chunks(n).map(|c| c.to_vec()).collect();
        Matrix::from_rows(&rows)
    })
}

fn nalgebra_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let n = m.dim();
    let d = DMatrix::from_row_slice(n, n, m.as_matrix().as_slice());
    let mut ev: Vec<f64> = d.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

proptest! {
    #[test]
    fn cholesky_reconstructs_spd(a in (1usize..=6).prop_flat_map(square)) {
        let n = a.rows();
        let spd = symmetrize(&a.mul(&a.transpose()).add(&Matrix::identity(n).scale(0.1)));
        let l = cholesky(&spd).unwrap();
        let back = l.as_matrix().mul(&l.as_matrix().transpose());
        prop_assert!(back.sub(spd.as_matrix()).max_abs() <= 1e-12 * spd.as_matrix().max_abs().max(1.0));
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(l.as_matrix()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn symmetrize_is_idempotent(a in (1usize..=6).prop_flat_map(square)) {
        let s = symmetrize(&a);
        prop_assert!(s.is_exactly_symmetric());
        prop_assert_eq!(symmetrize(s.as_matrix()), s);
    }

    #[test]
    fn eigenvalues_agree_with_nalgebra(a in (1usize..=6).prop_flat_map(square)) {
        let s = symmetrize(&a);
        let (mut ours, vecs) = sym_eigen(&s);
        ours.sort_by(f64::total_cmp);
        let theirs = nalgebra_eigenvalues(&s);
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        let vtv = vecs.transpose().mul(&vecs);
        prop_assert!(vtv.sub(&Matrix::identity(s.dim())).max_abs() <= 1e-10);
    }

    #[test]
    fn psd_floor_lifts_spectrum(a in (1usize..=6).prop_flat_map(square), floor in 0.0f64..0.5) {
        let s = symmetrize(&a);
        let lifted = psd_floor(&s, floor);
        prop_assert!(lifted.is_exactly_symmetric());
        let ev = nalgebra_eigenvalues(&lifted);
        prop_assert!(ev[0] >= floor - 1e-10, "min eigenvalue {} below floor {}", ev[0], floor);
        let original = nalgebra_eigenvalues(&s);
        if original[0] >= floor {
            prop_assert_eq!(lifted, s);
        }
    }

    #[test]
    fn solve_linear_inverts_well_conditioned_systems(a in (1usize..=6).prop_flat_map(square), seed in 0u64..1000) {
        let n = a.rows();
        let m = a.add(&Matrix::identity(n).scale(5.0));
        let b: Vec<f64> = (0..n).map(|i| ((seed + i as u64) % 7) as f64 - 3.0).collect();
        let x = solve_linear(&m, &b).unwrap();
        let back = m.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
    }
}

#[test]
fn indefinite_matrix_is_rejected_by_cholesky() {
    let m = symmetrize(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]));
    assert!(cholesky(&m).is_err());
    assert!(solve_linear(&Matrix::zeros(2, 2), &[1.0, 1.0]).is_none());
}
