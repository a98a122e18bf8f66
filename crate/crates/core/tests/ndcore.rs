mod tensor {
    use dualflow::ndcore::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 2, 2], vec![0.0; 8]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn raw_matmul_identity() {
        let id = [1.0, 0.0, 0.0, 1.0];
        let b = [3.0, 4.0];
        assert_eq!(matmul_raw(&id, &b, 2, 2, 1), vec![3.0, 4.0]);
    }

    #[test]
    fn sinusoid_is_bounded_and_sized() {
        let e = sinusoid(0.37, 16);
        assert_eq!(e.len(), 16);
        assert!(e.values().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(sinusoid(0.0, 4).values(), &[0.0, 0.0, 1.0, 1.0]);
    }
}

mod ops {
    use dualflow::ndcore::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let id = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let c = tape.matmul(id, b).unwrap();
        assert_eq!(tape.value(c).values(), &[3.0, 4.0]);

        let z = tape.constant(Tensor::zeros(&[2, 2]));
        let c = tape.matmul(z, b).unwrap();
        assert!(tape.value(c).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0 = random(&[3, 4], &mut rng);
        let b0 = random(&[4, 2], &mut rng);
        let w = random(&[3, 2], &mut rng);
        let loss = |a: &Tensor, b: &Tensor| {
            let mut t = Tape::new();
            let (a, b, w) = (t.constant(a.clone()), t.constant(b.clone()), t.constant(w.clone()));
            let c = t.matmul(a, b).unwrap();
            let m = t.mul(c, w).unwrap();
            let s = t.sum(m).unwrap();
            t.value(s).item()
        };
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone(), true);
        let b = tape.leaf(b0.clone(), true);
        let wv = tape.constant(w.clone());
        let c = tape.matmul(a, b).unwrap();
        let m = tape.mul(c, wv).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        let ga = g.wrt(&tape, a).unwrap();
        let gb = g.wrt(&tape, b).unwrap();
        let na = finite_difference(&a0, 1e-5, |x| loss(x, &b0));
        let nb = finite_difference(&b0, 1e-5, |x| loss(&a0, x));
        assert!(max_rel_err(ga.values(), &na, 1e-8) < 1e-6);
        assert!(max_rel_err(gb.values(), &nb, 1e-8) < 1e-6);
    }

    #[test]
    fn cross_entropy_symmetric_and_saturated() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::vector(vec![0.3; 4]));
        let ce = softmax_cross_entropy(&mut tape, l, 2).unwrap();
        assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);

        let l = tape.constant(Tensor::vector(vec![0.0, 50.0, 0.0]));
        let ce = softmax_cross_entropy(&mut tape, l, 1).unwrap();
        assert!(tape.value(ce).item() < 1e-20);

        assert!(matches!(
            softmax_cross_entropy(&mut tape, l, 3),
            Err(TensorError::Index { .. })
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let logits = random(&[n], &mut rng).map(|v| 3.0 * v);
            let y = rng.random_range(0..n);
            let mut tape = Tape::new();
            let z = tape.leaf(logits.clone(), true);
            let ce = softmax_cross_entropy(&mut tape, z, y).unwrap();
            let g = tape.backward(ce).unwrap().wrt(&tape, z).unwrap();
            let m = logits.values().iter().cloned().fold(f64::MIN, f64::max);
            let zsum: f64 = logits.values().iter().map(|v| (v - m).exp()).sum();
            for (j, gj) in g.values().iter().enumerate() {
                let p = (logits.values()[j] - m).exp() / zsum;
                let expect = p - if j == y { 1.0 } else { 0.0 };
                assert!((gj - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constant_loss_gives_no_gradient_and_sum_gives_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let c = tape.constant(Tensor::scalar(4.0));
        let g = tape.backward(c).unwrap();
        assert!(g.wrt(&tape, a).is_none_or(|t| t.values().iter().all(|&v| v == 0.0)));
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, a).unwrap().values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn log_of_zero_is_a_non_finite_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![0.0]), true);
        assert!(matches!(tape.log(a), Err(TensorError::NonFinite { op: "log" })));
    }
}

mod rng {
    use dualflow::rng::*;

    #[test]
    fn derived_seeds_differ_and_are_stable() {
        assert_eq!(derive_seed(42, 3), derive_seed(42, 3));
        assert_ne!(derive_seed(42, 3), derive_seed(42, 4));
        assert_ne!(derive_seed(42, 3), derive_seed(43, 3));
    }
}
