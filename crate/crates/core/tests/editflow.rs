use dualflow::editflow::*;

pub fn spec() -> SeqSpec {
    SeqSpec {
        vocab_size: 10,
        eos: 9,
        max_len: 16,
    }
}

#[test]
fn sequence_validation() {
    let s = spec();
    assert!(TokenSequence::new(vec![1, 2, 9], &s).is_ok());
    assert_eq!(TokenSequence::new(vec![1, 2], &s), Err(EditError::Eos { eos: 9 }));
    assert_eq!(TokenSequence::new(vec![9, 1, 9], &s), Err(EditError::Eos { eos: 9 }));
    assert!(matches!(TokenSequence::new(vec![12, 9], &s), Err(EditError::Token { .. })));
    assert!(matches!(TokenSequence::new(vec![0; 17].into_iter().chain([9]).collect(), &s), Err(EditError::TooLong { .. })));
    assert!(TokenSequence::empty(&s).is_empty());
}

#[test]
fn insertable_mapping_skips_eos() {
    let s = SeqSpec {
        vocab_size: 5,
        eos: 2,
        max_len: 8,
    };
    assert_eq!(s.insertable(), 4);
    assert_eq!(s.insertable_index(2), None);
    assert_eq!(s.insertable_index(3), Some(2));
    for j in 0..4 {
        assert_eq!(s.insertable_index(s.token_of_insertable(j)), Some(j));
    }
}

mod corrupt {
    use dualflow::editflow::*;
    use super::spec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 0;
    const BLACK: usize = 1;
    const CAT: usize = 2;

    fn seq(t: &[usize]) -> TokenSequence {
        TokenSequence::new(t.to_vec(), &spec()).unwrap()
    }

    #[test]
    fn endpoints() {
        let y = seq(&[A, BLACK, CAT, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = corrupt(&y, 1.0, &mut rng);
        assert_eq!(c.retained, y);
        assert!(c.gaps.iter().all(Vec::is_empty));
        let c = corrupt(&y, 0.0, &mut rng);
        assert_eq!(c.retained, TokenSequence::empty(&spec()));
        assert_eq!(c.gaps, vec![vec![A, BLACK, CAT]]);
    }

    #[test]
    fn black_cat_gap_example() {
        let y = seq(&[A, BLACK, CAT, 9]);
        let cur = seq(&[CAT, 9]);
        let gaps = align(&cur, &y).unwrap();
        assert_eq!(gaps, vec![vec![A, BLACK], vec![]]);

        // find a seed whose corruption at tau = 0.5 lands on [cat, EOS]
        let hit = (0..200u64)
            .map(|s| corrupt(&y, 0.5, &mut ChaCha8Rng::seed_from_u64(s)))
            .find(|c| c.retained == cur)
            .expect("some seed retains only `cat`");
        assert_eq!(hit.gaps, vec![vec![A, BLACK], vec![]]);
    }

    #[test]
    fn pmf_small_case() {
        let y = seq(&[0, 1, 2, 9]);
        let pmf = corruption_pmf(&y, 0.5, &spec()).unwrap();
        assert!((pmf[&seq(&[1, 9])] - 0.125).abs() < 1e-15);
        let total: f64 = pmf.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let pmf = corruption_pmf(&y, 1.0, &spec()).unwrap();
        assert_eq!(pmf.len(), 1);
        assert_eq!(pmf[&y], 1.0);
    }

    #[test]
    fn pmf_aggregates_duplicate_subsequences() {
        // [a, a, EOS]: keeping either `a` alone gives the same sequence
        let y = seq(&[0, 0, 9]);
        let pmf = corruption_pmf(&y, 0.5, &spec()).unwrap();
        assert_eq!(pmf.len(), 3);
        assert!((pmf[&seq(&[0, 9])] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pmf_rejects_long_sequences() {
        let s = SeqSpec {
            vocab_size: 10,
            eos: 9,
            max_len: 32,
        };
        let y = TokenSequence::new([vec![1; 13], vec![9]].concat(), &s).unwrap();
        assert_eq!(corruption_pmf(&y, 0.5, &s), Err(EditError::Enumeration(13)));
    }

    proptest! {
        #[test]
        fn reconstruction_holds(
            body in proptest::collection::vec(0usize..9, 0..15),
            tau in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let y = seq(&[body, vec![9]].concat());
            let c = corrupt(&y, tau, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(c.reconstruct(), y.tokens().to_vec());
            prop_assert_eq!(c.gaps.len(), c.retained.len());
            prop_assert_eq!(c.counts().iter().sum::<usize>() + c.retained.len(), y.len());
            prop_assert_eq!(*c.retained.tokens().last().unwrap(), 9);
        }
    }
}

mod guidance {
    use dualflow::editflow::*;
    use proptest::prelude::*;

    fn pred(gate: f64, rate: f64, w: Vec<f64>) -> InsertionPrediction {
        InsertionPrediction {
            gate: vec![gate],
            rate: vec![rate],
            token_dist: vec![w],
        }
    }

    #[test]
    fn identity_scales() {
        let c = pred(0.7, 4.0, vec![0.2, 0.8, 0.0]);
        let u = pred(0.3, 1.0, vec![0.5, 0.5, 0.0]);
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u);
    }

    #[test]
    fn rate_mixes_in_log_space() {
        let c = pred(0.5, 4.0, vec![0.5, 0.5]);
        let u = pred(0.5, 1.0, vec![0.5, 0.5]);
        let g = cfg_combine(&c, &u, 2.0).unwrap();
        assert!((g.rate[0] - 16.0).abs() < 1e-12);
        assert!((g.gate[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distribution_is_renormalized_geometric_mix() {
        let c = pred(0.5, 1.0, vec![0.8, 0.2]);
        let u = pred(0.5, 1.0, vec![0.5, 0.5]);
        let g = cfg_combine(&c, &u, 2.0).unwrap();
        // w ∝ u^{-1} c^{2}: (0.64/0.5, 0.04/0.5) -> (16/17, 1/17)
        assert!((g.token_dist[0][0] - 16.0 / 17.0).abs() < 1e-12);
        assert!((g.token_dist[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_support_fails_to_renormalize() {
        let c = pred(0.5, 1.0, vec![1.0, 0.0]);
        let u = pred(0.5, 1.0, vec![0.0, 1.0]);
        assert_eq!(cfg_combine(&c, &u, 0.5), Err(EditError::Renormalize(0)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = pred(0.5, 1.0, vec![1.0]);
        assert_eq!(cfg_combine(&c, &c, -1.0), Err(EditError::Guidance(-1.0)));
        let z = pred(0.5, 0.0, vec![1.0]);
        assert_eq!(cfg_combine(&c, &z, 2.0), Err(EditError::Rate(0.0)));
    }

    proptest! {
        #[test]
        fn equal_inputs_are_a_fixed_point(
            gate in 0.01f64..0.99,
            rate in 0.05f64..20.0,
            raw in proptest::collection::vec(0.01f64..1.0, 5),
            gamma in 0.0f64..6.0,
        ) {
            let z: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let p = pred(gate, rate, w.clone());
            let g = cfg_combine(&p, &p, gamma).unwrap();
            prop_assert!((g.gate[0] - gate).abs() < 1e-12);
            prop_assert!((g.rate[0] - rate).abs() < 1e-12 * rate.max(1.0));
            for (a, b) in g.token_dist[0].iter().zip(&w) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

mod loss {
    use dualflow::editflow::*;

    fn pred(gate: Vec<f64>, rate: Vec<f64>, dist: Vec<Vec<f64>>) -> InsertionPrediction {
        InsertionPrediction {
            gate,
            rate,
            token_dist: dist,
        }
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn count_loss_values() {
        let p = pred(vec![0.5], vec![2.0], vec![uniform(10)]);
        let l = count_loss(&p, &[2]).unwrap();
        assert!((l - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((l - 0.6137).abs() < 1e-4);

        let p = pred(vec![0.5], vec![0.5], vec![uniform(10)]);
        assert!((count_loss(&p, &[0]).unwrap() - 0.5).abs() < 1e-15);

        let p = pred(vec![0.5], vec![0.0], vec![uniform(10)]);
        assert_eq!(count_loss(&p, &[1]), Err(EditError::Rate(0.0)));
    }

    #[test]
    fn count_loss_stationary_at_observed_count() {
        let k = 3;
        let h = 1e-6;
        let f = |r: f64| r - k as f64 * r.ln();
        let d = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn count_loss_minimizer_by_golden_section() {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for k in 1..8usize {
            let f = |r: f64| r - k as f64 * r.ln();
            let (mut a, mut b) = (1e-3, 50.0);
            while b - a > 1e-9 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            assert!(((a + b) / 2.0 - k as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn token_loss_values() {
        let p = pred(vec![0.5; 2], vec![1.0; 2], vec![uniform(10), uniform(10)]);
        assert_eq!(token_loss(&p, &[vec![], vec![]]).unwrap(), 0.0);
        let l = token_loss(&p, &[vec![3], vec![]]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);

        let mut w = vec![0.0; 10];
        w[2] = 0.5;
        w[5] = 0.5;
        let p = pred(vec![0.5], vec![1.0], vec![w]);
        assert!((token_loss(&p, &[vec![2, 5]]).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn token_loss_zero_mass_is_guarded() {
        let before = token_loss_guard_hits();
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        let p = pred(vec![0.5], vec![1.0], vec![w]);
        let l = token_loss(&p, &[vec![1]]).unwrap();
        assert!(l.is_finite());
        assert!((l + LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(token_loss_guard_hits() > before);
    }

    #[test]
    fn zip_loss_values() {
        let p = pred(vec![0.0, 0.0], vec![1.0, 1.0], vec![uniform(4), uniform(4)]);
        assert_eq!(zip_loss(&p, &[vec![], vec![]]).unwrap(), 0.0);

        let mut w = vec![0.0; 4];
        w[2] = 1.0;
        let p = pred(vec![0.5], vec![1.0], vec![w]);
        let l = zip_loss(&p, &[vec![2]]).unwrap();
        assert!((l - (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zip_loss_decreases_in_gate_for_nonempty_gap() {
        let mut prev = f64::INFINITY;
        for i in 1..20 {
            let pi = i as f64 / 20.0;
            let p = pred(vec![pi], vec![2.0], vec![uniform(4)]);
            let l = zip_loss(&p, &[vec![1, 2]]).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }
}

mod sampler {
    use dualflow::editflow::*;
    use super::spec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point_mass(tok: usize, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        w[tok] = 1.0;
        w
    }

    fn flat_pred(len: usize, gate: f64, rate: f64) -> InsertionPrediction {
        let mut w = vec![1.0 / 9.0; 10];
        w[9] = 0.0;
        InsertionPrediction {
            gate: vec![gate; len],
            rate: vec![rate; len],
            token_dist: vec![w; len],
        }
    }

    #[test]
    fn closed_gate_leaves_sequence_unchanged() {
        let s = spec();
        let cur = TokenSequence::new(vec![1, 2, 9], &s).unwrap();
        let p = flat_pred(3, 0.0, 5.0);
        for counts in [CountRule::Expected, CountRule::Sampled] {
            let opts = DecodeOpts {
                counts,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let o = reverse_step(&cur, &p, 0.2, 0.8, &opts, None, &s, &mut rng).unwrap();
            assert_eq!(o.seq, cur);
        }
    }

    #[test]
    fn empty_span_leaves_sequence_unchanged() {
        let s = spec();
        let cur = TokenSequence::new(vec![1, 2, 9], &s).unwrap();
        let p = flat_pred(3, 1.0, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = reverse_step(&cur, &p, 0.2, 0.8, &DecodeOpts::default(), Some(&SpanMask::Empty), &s, &mut rng)
            .unwrap();
        assert_eq!(o.seq, cur);
    }

    #[test]
    fn final_step_with_point_mass_is_deterministic() {
        let s = spec();
        let cur = TokenSequence::empty(&s);
        let p = InsertionPrediction {
            gate: vec![1.0],
            rate: vec![3.0],
            token_dist: vec![point_mass(4, 10)],
        };
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = reverse_step(&cur, &p, 0.95, 0.05, &DecodeOpts::default(), None, &s, &mut rng).unwrap();
            assert_eq!(o.seq.tokens(), &[4, 4, 4, 9]);
        }
    }

    #[test]
    fn overflow_truncates_and_flags() {
        let s = SeqSpec {
            max_len: 4,
            ..spec()
        };
        let cur = TokenSequence::new(vec![1, 9], &s).unwrap();
        let p = InsertionPrediction {
            gate: vec![1.0; 2],
            rate: vec![5.0; 2],
            token_dist: vec![point_mass(3, 10); 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = reverse_step(&cur, &p, 0.5, 0.5, &DecodeOpts::default(), None, &s, &mut rng).unwrap();
        assert!(o.truncated);
        assert_eq!(o.seq.len(), 4);
    }

    #[test]
    fn time_change_factor() {
        assert_eq!(time_change(0.0, 0.25), 0.25);
        assert_eq!(time_change(0.5, 0.25), 0.5);
        assert_eq!(time_change(0.9, 0.1), 1.0);
        assert_eq!(time_change(1.0, 0.0), 1.0);
    }

    #[test]
    fn poisson_samplers_have_right_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| sample_poisson(2.5, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((m - 2.5).abs() < 0.02);
        let lam: f64 = 1.0;
        let m: f64 = (0..n).map(|_| sample_zero_truncated_poisson(lam, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((m - lam / (1.0 - (-lam).exp())).abs() < 0.01);
    }

    #[test]
    fn temperature_top_k_sampling_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = vec![0.5, 0.3, 0.2, 0.0];
        let opts = DecodeOpts {
            temperature: 1.0,
            top_k: 2,
            counts: CountRule::Sampled,
        };
        let mut hist = [0usize; 4];
        for _ in 0..20_000 {
            hist[decode_token(&w, &opts, &mut rng)] += 1;
        }
        assert_eq!(hist[2] + hist[3], 0);
        let frac = hist[0] as f64 / 20_000.0;
        assert!((frac - 0.625).abs() < 0.015);
    }

    /// Oracle predictions from the true alignment: gate 1 on nonempty gaps,
    /// rate = gap size, point mass on the leftmost missing token.
    fn oracle(cur: &TokenSequence, clean: &TokenSequence) -> InsertionPrediction {
        let gaps = align(cur, clean).unwrap();
        InsertionPrediction {
            gate: gaps.iter().map(|g| if g.is_empty() { 0.0 } else { 1.0 }).collect(),
            rate: gaps.iter().map(|g| (g.len() as f64).max(1e-3)).collect(),
            token_dist: gaps
                .iter()
                .map(|g| point_mass(*g.first().unwrap_or(&0), 10))
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn oracle_reverse_trajectory_reconstructs(
            body in proptest::collection::vec(0usize..9, 0..9),
            steps in prop::sample::select(vec![8usize, 16, 28, 50]),
        ) {
            let s = spec();
            let y = TokenSequence::new([body, vec![9]].concat(), &s).unwrap();
            let mut cur = TokenSequence::empty(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for k in 0..steps {
                let tau = k as f64 / steps as f64;
                let dtau = (k + 1) as f64 / steps as f64 - tau;
                let p = oracle(&cur, &y);
                cur = reverse_step(&cur, &p, tau, dtau, &DecodeOpts::default(), None, &s, &mut rng)
                    .unwrap()
                    .seq;
            }
            prop_assert_eq!(cur, y);
        }

        #[test]
        fn reverse_step_preserves_existing_and_span(
            body in proptest::collection::vec(0usize..9, 0..6),
            prefix in 0usize..4,
            gate in 0.0f64..=1.0,
            rate in 0.1f64..6.0,
            tau in 0.0f64..0.99,
            seed in any::<u64>(),
        ) {
            let s = spec();
            let cur = TokenSequence::new([body, vec![9]].concat(), &s).unwrap();
            let prefix = prefix.min(cur.len() - 1);
            let span = SpanMask::Region { prefix, suffix: 1 };
            let p = flat_pred(cur.len(), gate, rate);
            let opts = DecodeOpts { temperature: 1.0, top_k: 0, counts: CountRule::Sampled };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = reverse_step(&cur, &p, tau, 1.0 - tau, &opts, Some(&span), &s, &mut rng).unwrap();
            prop_assert!(o.seq.len() <= s.max_len);
            // fixed prefix and suffix survive untouched
            prop_assert_eq!(&o.seq.tokens()[..prefix], &cur.tokens()[..prefix]);
            prop_assert_eq!(o.seq.tokens().last(), cur.tokens().last());
            // existing tokens form a subsequence of the output
            prop_assert!(align(&cur, &o.seq).is_some());
            prop_assert_eq!(o.seq.len(), cur.len() + o.inserted);
        }
    }
}
