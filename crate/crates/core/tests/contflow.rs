use dualflow::contflow::*;
use dualflow::ndcore::{finite_difference, max_rel_err, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn interpolate_endpoints_and_midpoint() {
    let (x0, x1) = (vec![0.0, 0.0], vec![2.0, 4.0]);
    assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
    assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
    assert_eq!(interpolate(&x0, &x1, 0.5).unwrap(), vec![1.0, 2.0]);
    assert_eq!(interpolate(&x0, &x1, 1.5), Err(FlowError::Time(1.5)));
    assert_eq!(interpolate(&x0, &[1.0], 0.5), Err(FlowError::Dimension(2, 1)));
}

#[test]
fn velocity_target_cases() {
    assert_eq!(velocity_target(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(velocity_target(&[0.0, 0.0], &[2.0, 4.0]).unwrap(), vec![2.0, 4.0]);
}

#[test]
fn velocity_is_time_derivative_of_path() {
    let x0 = [0.3, -1.2, 2.5];
    let x1 = [1.1, 0.4, -0.7];
    let u = velocity_target(&x0, &x1).unwrap();
    let h = 1e-6;
    for t in [0.1, 0.5, 0.9] {
        let a = interpolate(&x0, &x1, t + h).unwrap();
        let b = interpolate(&x0, &x1, t - h).unwrap();
        for i in 0..3 {
            assert!(((a[i] - b[i]) / (2.0 * h) - u[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn fm_loss_values() {
    let u = [0.5, -1.0, 2.0, 0.0];
    assert_eq!(fm_loss(&u, &u).unwrap(), 0.0);
    let v = [1.5, -1.0, 2.0, 0.0];
    assert!((fm_loss(&v, &u).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn fm_loss_gradient_is_two_over_d_residual() {
    let u = vec![0.2, -0.4, 1.0, 3.0, -2.0];
    let v0 = Tensor::vector(vec![1.0, 0.5, -0.3, 2.0, 0.0]);
    let mut tape = Tape::new();
    let v = tape.leaf(v0.clone(), true);
    let l = fm_loss_tape(&mut tape, v, &u).unwrap();
    let g = tape.backward(l).unwrap().wrt(&tape, v).unwrap();
    let closed: Vec<f64> = v0.values().iter().zip(&u).map(|(a, b)| 2.0 / 5.0 * (a - b)).collect();
    let fd = finite_difference(&v0, 1e-5, |x| fm_loss(x.values(), &u).unwrap());
    assert!(max_rel_err(g.values(), &closed, 1e-12) < 1e-12);
    assert!(max_rel_err(g.values(), &fd, 1e-8) < 1e-6);
}

#[test]
fn euler_with_constant_and_zero_fields() {
    let x0 = [1.0, -2.0];
    assert_eq!(euler_sample(|_, _| vec![0.0, 0.0], &x0, 5).unwrap(), x0.to_vec());
    for steps in [1, 3, 28] {
        let x = euler_sample(|_, _| vec![0.5, 1.5], &x0, steps).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] + 0.5).abs() < 1e-12);
    }
    assert_eq!(euler_sample(|_, _| vec![0.0, 0.0], &x0, 0), Err(FlowError::Steps));
}

#[test]
fn euler_divergence_is_reported() {
    let r = euler_sample(|_, _| vec![f64::INFINITY], &[0.0], 3);
    assert!(matches!(r, Err(FlowError::Divergence { step: 0, .. })));
}

proptest! {
    #[test]
    fn exact_field_is_step_invariant(
        x0 in proptest::collection::vec(-3.0f64..3.0, 4),
        x1 in proptest::collection::vec(-3.0f64..3.0, 4),
        steps in 1usize..40,
    ) {
        let u = velocity_target(&x0, &x1).unwrap();
        let x = euler_sample(|_, _| u.clone(), &x0, steps).unwrap();
        for (a, b) in x.iter().zip(&x1) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolate_is_affine(
        x0 in proptest::collection::vec(-3.0f64..3.0, 3),
        x1 in proptest::collection::vec(-3.0f64..3.0, 3),
        a in 0.0f64..1.0, b in 0.0f64..1.0,
    ) {
        let m = interpolate(&x0, &x1, (a + b) / 2.0).unwrap();
        let pa = interpolate(&x0, &x1, a).unwrap();
        let pb = interpolate(&x0, &x1, b).unwrap();
        for i in 0..3 {
            prop_assert!((m[i] - (pa[i] + pb[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fm_loss_nonnegative(
        v in proptest::collection::vec(-3.0f64..3.0, 6),
        u in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let l = fm_loss(&v, &u).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, v == u);
    }
}

#[test]
fn velocity_guidance_identities() {
    let c = vec![0.1 + 0.2, -3.7, 1e-300];
    let u = vec![5.0, 2.0, -1.0];
    let same = cfg_velocity(&c, &u, 1.0).unwrap();
    assert!(same.iter().zip(&c).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(cfg_velocity(&c, &u, 0.0).unwrap(), u);
    assert_eq!(cfg_velocity(&[1.0], &[0.0], 3.0).unwrap(), vec![3.0]);
    assert!(cfg_velocity(&c, &u[..2], 1.0).is_err());
}
