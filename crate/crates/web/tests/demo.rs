use dualflow_web::demo::*;

#[test]
fn curves_have_fixed_ends_and_identity_at_zero() {
    let ps = [-5.0, 0.0, 5.0];
    let c = tau_curves(&ps, 11).unwrap();
    assert_eq!(c.len(), 33);
    for row in c.chunks(11) {
        assert_eq!((row[0], row[10]), (0.0, 1.0));
        assert!(row.windows(2).all(|w| w[1] >= w[0]));
    }
    for (i, &v) in c[11..22].iter().enumerate() {
        assert_eq!(v, i as f64 / 10.0);
    }
    // Text leads for negative p, lags for positive.
    assert!(c[5] > 0.5 && c[27] < 0.5);
    assert!(tau_curves(&[f64::NAN], 5).is_err());
    assert!(tau_curves(&ps, 1).is_err());
}

#[test]
fn surface_edges() {
    let s = surface(16, 5, true).unwrap();
    assert_eq!(s.len(), 25);
    assert_eq!(s[4], f64::INFINITY);
    assert_eq!(s[20], f64::NEG_INFINITY);
    assert!(s[24].is_nan());
    assert!(s[..24].iter().filter(|v| v.is_finite()).count() == 16);
    let lo = surface(16, 5, false).unwrap();
    // The lower text bound is smaller, so its ratio is larger.
    assert!(lo.iter().zip(&s).filter(|(a, _)| a.is_finite()).all(|(a, b)| a >= b));
    assert!(surface(1, 5, true).is_err());
}

#[test]
fn corrupted_captions_keep_every_word() {
    let caps = captions();
    assert_eq!(caps.len(), 48);
    for (i, cap) in caps.iter().enumerate() {
        let (marked, retained) = corrupt_caption(i, 0.5, 3).unwrap();
        let plain: Vec<String> = marked.split(' ').map(|w| w.trim_matches(['[', ']']).to_string()).collect();
        assert_eq!(plain.join(" "), *cap);
        let kept: Vec<&str> = marked.split(' ').filter(|w| !w.starts_with('[')).collect();
        assert_eq!(kept.join(" "), retained);
    }
    assert_eq!(corrupt_caption(0, 1.0, 0).unwrap().0, caps[0]);
    assert!(corrupt_caption(0, 0.0, 0).unwrap().1.is_empty());
    assert!(corrupt_caption(48, 0.5, 0).is_err());
}

#[test]
fn retained_lengths_match_the_binomial() {
    let h = retained_lengths(4, 0.3, 50_000, 1).unwrap();
    let (emp, exact) = h.split_at(5);
    let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
    for k in 0..5 {
        let p = binom[k] * 0.3f64.powi(k as i32) * 0.7f64.powi(4 - k as i32);
        assert!((exact[k] - p).abs() < 1e-12);
        assert!((emp[k] - p).abs() < 0.01, "{k}: {} vs {p}", emp[k]);
    }
    assert!(retained_lengths(13, 0.3, 10, 0).is_err());
}

#[test]
fn monte_carlo_checks() {
    let m = mse_check(16, 0.5, 20_000, 0).unwrap();
    assert_eq!(m[1], 0.25);
    assert!((m[0] - 0.25).abs() < 0.01);
    let c = ce_check(4, 2.0, 5000, 0).unwrap();
    assert!(c[2] <= c[1] && c[1] <= c[3]);
    assert!(mse_check(16, 1.5, 10, 0).is_err());
    assert!(ce_check(16, 1.0, 0, 0).is_err());
}
