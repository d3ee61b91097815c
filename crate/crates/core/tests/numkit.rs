use mixattn::numkit::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_na(m: &SeqMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn rand_mat(rows: usize, cols: usize, seed: u64) -> SeqMatrix {
    SeqMatrix::random_normal(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #[test]
    fn matmul_matches_nalgebra(r in 1usize..9, k in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let a = rand_mat(r, k, seed);
        let b = rand_mat(k, c, seed ^ 1);
        let ours = matmul(&a, &b).unwrap();
        let theirs = to_na(&a) * to_na(&b);
        for i in 0..r {
            for j in 0..c {
                prop_assert!((ours.get(i, j) - theirs[(i, j)]).abs() < 1e-12);
            }
        }
        let nt = a.matmul_nt(&b.transpose()).unwrap();
        let tn = a.transpose().matmul_tn(&b).unwrap();
        prop_assert!(nt.max_abs_diff(&ours) < 1e-12);
        prop_assert!(tn.max_abs_diff(&ours) < 1e-12);
    }

    #[test]
    fn matmul_rejects_inner_mismatch(r in 1usize..6, k in 1usize..6, c in 1usize..6) {
        let a = SeqMatrix::zeros(r, k);
        let b = SeqMatrix::zeros(k + 1, c);
        prop_assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions(r in 1usize..6, c in 1usize..12, seed in any::<u64>(), shift in -1e3f64..1e3) {
        let x = rand_mat(r, c, seed).scale(10.0);
        let s = softmax_rows(&x);
        for i in 0..r {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&p| p >= 0.0));
        }
        // adding a constant per row changes nothing
        let shifted = softmax_rows(&x.map(|v| v + shift));
        prop_assert!(shifted.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn ffn_is_linear_in_second_weight(seed in any::<u64>(), s in -3.0f64..3.0) {
        let a = rand_mat(3, 4, seed);
        let w1 = rand_mat(4, 16, seed ^ 2);
        let w2 = rand_mat(16, 4, seed ^ 3);
        for act in [Activation::Gelu, Activation::Silu] {
            let y = ffn_forward(&a, &w1, &w2, act).unwrap();
            let ys = ffn_forward(&a, &w1, &w2.scale(s), act).unwrap();
            prop_assert!(ys.max_abs_diff(&y.scale(s)) < 1e-10);
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let x = SeqMatrix::from_rows(&[vec![1e300, 1e300, -1e300], vec![-1e9, 0.0, -1e9]]).unwrap();
    let s = softmax_rows(&x);
    assert!(s.is_finite());
    assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
    assert_eq!(s.get(1, 1), 1.0);
}

#[test]
fn gelu_reference_values() {
    // tanh approximation, values computed independently
    let g = |x: f64| {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    };
    for x in [-3.0, -1.0, -0.1, 0.0, 0.5, 2.0] {
        assert!((Activation::Gelu.apply(x) - g(x)).abs() < 1e-15);
    }
    assert!((Activation::Silu.apply(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
}

fn opts() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-5,
        coords_per_param: 12,
        seed: 3,
    }
}

fn check<F>(f: F, theta: &[SeqMatrix])
where
    F: Fn(&mut Tape, &[Var]) -> mixattn::Result<Var>,
{
    let report = grad_check(f, theta, opts()).unwrap();
    assert!(
        report.max_rel_err < 1e-6,
        "max rel err {}",
        report.max_rel_err
    );
}

#[test]
fn grad_matmul_and_friends() {
    let theta = [rand_mat(3, 4, 1), rand_mat(4, 5, 2), rand_mat(4, 5, 3)];
    check(
        |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let abt = t.matmul_nt(ab, v[2])?;
            let s = t.scale(abt, 0.3);
            Ok(t.mean_square(s))
        },
        &theta,
    );
}

#[test]
fn grad_softmax_and_activation() {
    let theta = [rand_mat(3, 6, 4), rand_mat(6, 6, 5)];
    for act in [Activation::Gelu, Activation::Silu] {
        check(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.activation(h, act);
                let s = t.softmax_rows(h);
                let s = t.matmul(s, v[1])?;
                Ok(t.mean_square(s))
            },
            &theta,
        );
    }
}

#[test]
fn grad_rms_norm() {
    let theta = [rand_mat(4, 6, 6), rand_mat(1, 6, 7)];
    check(
        |t, v| {
            let n = t.rms_norm(v[0], v[1], 1e-6)?;
            let y = t.matmul_nt(n, v[0])?;
            Ok(t.mean_square(y))
        },
        &theta,
    );
}

#[test]
fn grad_structural_ops() {
    let theta = [rand_mat(3, 4, 8), rand_mat(2, 4, 9), rand_mat(5, 4, 10)];
    check(
        |t, v| {
            let cat = t.concat_rows(&[v[0], v[1]])?;
            let lower = t.slice_rows(cat, 1, 3)?;
            let left = t.slice_cols(lower, 0, 2)?;
            let wide = t.concat_cols(&[left, lower])?;
            let g = t.gather_rows(v[2], &[4, 0, 4])?;
            let g_left = t.slice_cols(g, 0, 2)?;
            let g_wide = t.concat_cols(&[g_left, g])?;
            let y = t.matmul_nt(wide, g_wide)?;
            Ok(t.mean_square(y))
        },
        &theta,
    );
}

#[test]
fn grad_rope_and_cross_entropy() {
    let theta = [rand_mat(4, 8, 11), rand_mat(8, 6, 12)];
    check(
        |t, v| {
            let r = t.rope(v[0], &[0, 3, 7, 100], 4, 10_000.0)?;
            let logits = t.matmul(r, v[1])?;
            t.cross_entropy(logits, &[0, 5, 2, 2])
        },
        &theta,
    );
}

#[test]
fn quadratic_loss_is_exact_at_any_step() {
    let theta = [rand_mat(2, 2, 13)];
    let f = |t: &mut Tape, v: &[Var]| Ok(t.mean_square(v[0]));
    let coarse = grad_check(
        f,
        &theta,
        GradCheckOptions {
            eps: 1e-3,
            ..opts()
        },
    )
    .unwrap();
    let fine = grad_check(
        f,
        &theta,
        GradCheckOptions {
            eps: 1e-7,
            ..opts()
        },
    )
    .unwrap();
    assert!(coarse.max_rel_err < 1e-9);
    assert!(fine.max_rel_err < 1e-6);
    assert_eq!(coarse.params.len(), 1);
    assert_eq!(coarse.params[0].coords_checked, 4);
}

#[test]
fn relative_error_definition() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-12);
}

#[test]
fn backward_accumulates_shared_uses() {
    let mut t = Tape::new();
    let x = t.param(SeqMatrix::from_rows(&[vec![2.0]]).unwrap());
    let y = t.add(x, x).unwrap();
    let z = t.matmul(y, x).unwrap(); // 2x * x = 2x^2
    let g = t.backward(z);
    assert_eq!(g.wrt(x).get(0, 0), 8.0);
}
