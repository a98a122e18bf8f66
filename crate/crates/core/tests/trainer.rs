use std::collections::BTreeMap;

use dualflow::backbone::{Backbone, Group, ModelConfig, ModelParams};
use dualflow::editflow::{corrupt, zip_loss};
use dualflow::ndcore::{finite_difference, max_rel_err, Tape, Tensor};
use dualflow::rng::stream;
use dualflow::schedules::{ScheduleSpec, TimePair};
use dualflow::synthdata::{AttributeSpec, Dataset, JointSample};
use dualflow::trainer::*;

fn model_for(ds: &Dataset) -> ModelConfig {
    ModelConfig {
        d: ds.spec.d(),
        vocab_size: ds.vocab.len(),
        eos: ds.vocab.eos(),
        max_len: 12,
        hidden: 8,
        blocks: 1,
        heads: 2,
        ff_mult: 2,
        time_dim: 4,
        lora_rank: 2,
        lora_alpha: 2.0,
    }
}

struct Fixture {
    ds: Dataset,
    data: Vec<JointSample>,
    bb: Backbone,
    init: ModelParams,
}

fn fixture() -> Fixture {
    let ds = Dataset::new(AttributeSpec::default()).unwrap();
    let data = ds.generate(64, 7);
    let (bb, init) = Backbone::init(model_for(&ds), 11).unwrap();
    Fixture { ds, data, bb, init }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        batch: 4,
        seed: 3,
        schedule: ScheduleSpec::switched(2),
        balance: BalanceState {
            estimate_every: 2,
            ..BalanceState::default()
        },
        ..TrainConfig::default()
    }
}

fn trainer<'a>(f: &'a Fixture, cfg: TrainConfig) -> Trainer<'a> {
    Trainer {
        bb: &f.bb,
        cfg,
        data: &f.data,
        vocab: Some(&f.ds.vocab),
    }
}

fn uplift_mask(p: &ModelParams) -> Vec<bool> {
    p.mask(Phase::Uplift.groups())
}

fn loss_values(f: &Fixture, p: &ModelParams, opts: &LossOpts, times: TimePair, seed: u64) -> (f64, f64, f64) {
    let s = &f.data[0];
    let mut tape = Tape::new();
    let input = LossInput::Joint { x: &s.x, y: &s.y };
    let lv = joint_loss(&mut tape, &f.bb, p, &uplift_mask(p), &input, times, opts, &mut stream(seed, 0)).unwrap();
    (tape.value(lv.total).item(), tape.value(lv.image).item(), tape.value(lv.text).item())
}

fn opts(lambda_txt: f64, teacher: TeacherMode) -> LossOpts {
    LossOpts {
        lambda_txt,
        teacher,
        lora_enabled: true,
    }
}

#[test]
fn zero_text_weight_leaves_the_image_loss() {
    let f = fixture();
    let (total, image, text) = loss_values(&f, &f.init, &opts(0.0, TeacherMode::None), TimePair { t: 0.4, tau: 0.5 }, 1);
    assert!(text > 0.0);
    assert_eq!(total, image);
}

#[test]
fn loss_is_image_plus_weighted_text() {
    let f = fixture();
    for (k, lam) in [0.05, 0.7, 3.0].into_iter().enumerate() {
        let (total, image, text) = loss_values(&f, &f.init, &opts(lam, TeacherMode::None), TimePair { t: 0.3, tau: 0.6 }, k as u64);
        assert!((total - (image + lam * text)).abs() <= 1e-12 * total.abs().max(1.0));
    }
}

#[test]
fn same_noise_teacher_loss_is_exactly_zero_at_uplift_start() {
    let f = fixture();
    for seed in 0..8 {
        let times = TimePair {
            t: 0.1 * seed as f64,
            tau: 1.0 - 0.1 * seed as f64,
        };
        let (_, image, _) = loss_values(&f, &f.init, &opts(0.05, TeacherMode::SameNoise), times, seed);
        assert_eq!(image, 0.0, "seed {seed}");
    }
}

#[test]
fn clean_text_teacher_sees_what_the_student_does_not() {
    let f = fixture();
    // τ = 0 deletes the whole caption, so the student and the clean-text
    // teacher condition on different sequences even at initialization.
    let (_, image, _) = loss_values(&f, &f.init, &opts(0.05, TeacherMode::CleanText), TimePair { t: 0.5, tau: 0.0 }, 9);
    assert!(image > 0.0 && image.is_finite());
    let (_, same, _) = loss_values(&f, &f.init, &opts(0.05, TeacherMode::CleanText), TimePair { t: 0.5, tau: 1.0 }, 9);
    assert_eq!(same, 0.0);
}

#[test]
fn balance_examples_and_fixed_point() {
    let s = BalanceState::default();
    let r = balance_ratio(&s, 1.0, 10.0);
    assert!((r - 0.5).abs() < 1e-9);
    let next = balance_update(s, 1.0, 10.0);
    assert!((next.lambda_txt - (0.99 * 0.05 + 0.01 * r)).abs() < 1e-15);

    // g_img/g_txt chosen so the scaled ratio equals λ exactly.
    let s = BalanceState {
        lambda_txt: 0.25,
        eps: 0.0,
        ratio_scale: 5.0,
        ..BalanceState::default()
    };
    assert_eq!(balance_ratio(&s, 1.0, 20.0), 0.25);
    assert_eq!(balance_update(s, 1.0, 20.0).lambda_txt, 0.25);
}

#[test]
fn clipping_rescales_only_above_the_threshold() {
    let mut g = BTreeMap::new();
    g.insert(0usize, vec![3.0, 0.0]);
    g.insert(1usize, vec![0.0, 4.0]);
    assert_eq!(global_norm(&g), 5.0);
    let before = clip_global(&mut g, 2.0);
    assert_eq!(before, 5.0);
    assert!((global_norm(&g) - 2.0).abs() < 1e-15);
    let kept = g.clone();
    clip_global(&mut g, 10.0);
    assert_eq!(g, kept);
}

#[test]
fn ema_boundaries() {
    let f = fixture();
    let mut p = f.init.clone();
    f.bb.perturb_adapters(&mut p, 0.5, &mut stream(1, 1));
    let ids: Vec<_> = p.ids().collect();
    let mut e = f.init.clone();
    ema_update(&mut e, &p, &ids, 1.0);
    assert_eq!(e, f.init);
    ema_update(&mut e, &p, &ids, 0.0);
    assert_eq!(e, p);
}

#[test]
fn zero_gradient_without_decay_does_not_move_parameters() {
    let f = fixture();
    let mut p = f.init.clone();
    let cfg = OptimConfig {
        head: GroupHyper {
            lr: 1e-2,
            weight_decay: 0.0,
        },
        ..OptimConfig::default()
    };
    let grads: BTreeMap<_, _> = p.ids().map(|id| (id, vec![0.0; p.get(id).len()])).collect();
    let mut opt = AdamW::new();
    for _ in 0..3 {
        opt.update(&mut p, &grads, &cfg, 1.0);
    }
    assert_eq!(p, f.init);

    let decayed = OptimConfig {
        head: GroupHyper {
            lr: 1e-2,
            weight_decay: 0.5,
        },
        ..cfg
    };
    AdamW::new().update(&mut p, &grads, &decayed, 1.0);
    let head = p.ids().find(|&i| p.group(i) == Group::Head && p.get(i).values().iter().any(|v| *v != 0.0)).unwrap();
    for (a, b) in p.get(head).values().iter().zip(f.init.get(head).values()) {
        assert!((a - b * (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let f = fixture();
    let mut p = f.init.clone();
    let id = p.ids().find(|&i| p.group(i) == Group::Adapter).unwrap();
    let n = p.get(id).len();
    let mut g = BTreeMap::new();
    g.insert(id, (0..n).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect::<Vec<_>>());
    let cfg = OptimConfig::default();
    AdamW::new().update(&mut p, &g, &cfg, 1.0);
    let lr = cfg.adapter.lr;
    for (i, (a, b)) in p.get(id).values().iter().zip(f.init.get(id).values()).enumerate() {
        let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
        assert!((a - b - sign * lr).abs() < 1e-10, "{i}: {a} {b}");
    }
}

#[test]
fn tape_zip_loss_agrees_with_the_reference() {
    let f = fixture();
    let mut p = f.init.clone();
    f.bb.perturb_adapters(&mut p, 0.4, &mut stream(2, 2));
    let spec = f.bb.config().seq_spec();
    let mut rng = stream(4, 4);
    for s in f.data.iter().take(12) {
        let ct = corrupt(&s.y, 0.4, &mut rng);
        let mut tape = Tape::new();
        let fv = f
            .bb
            .forward(&mut tape, &p, &vec![false; p.len()], &s.x, 0.5, &ct.retained, 0.4, true)
            .unwrap();
        let on_tape = zip_loss_tape(&mut tape, &fv, &ct.gaps, None, &spec).unwrap();
        let reference = zip_loss(&f.bb.insertion_prediction(&tape, &fv), &ct.gaps).unwrap();
        let got = tape.value(on_tape).item();
        assert!((got - reference).abs() < 1e-9 * reference.abs().max(1.0), "{got} vs {reference}");
    }
}

fn check_joint_gradients(teacher: TeacherMode, groups: &[Group], times: TimePair) {
    let f = fixture();
    let mut p = f.init.clone();
    f.bb.perturb_adapters(&mut p, 0.3, &mut stream(6, 6));
    p.set(f.bb.gate_scalar_id(), Tensor::vector(vec![0.4]));
    let o = opts(0.3, teacher);
    let s = &f.data[3];
    let input = LossInput::Joint { x: &s.x, y: &s.y };
    let mask = p.mask(groups);
    let eval = |q: &ModelParams, m: &[bool], tape: &mut Tape| {
        joint_loss(tape, &f.bb, q, m, &input, times, &o, &mut stream(12, 0)).unwrap().total
    };
    let mut tape = Tape::new();
    let l = eval(&p, &mask, &mut tape);
    let g = tape.backward(l).unwrap();
    let mut checked = 0;
    for id in p.ids().filter(|&i| mask[i]) {
        let analytic = g
            .param(id)
            .map(|t| t.values().to_vec())
            .unwrap_or_else(|| vec![0.0; p.get(id).len()]);
        let numeric = finite_difference(p.get(id), 1e-5, |t| {
            let mut q = p.clone();
            q.set(id, t.clone());
            let mut tape = Tape::new();
            let l = eval(&q, &vec![false; q.len()], &mut tape);
            tape.value(l).item()
        });
        let e = max_rel_err(&analytic, &numeric, 1e-6);
        assert!(e < 1e-4, "{teacher}: {}: rel err {e}", p.name(id));
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn joint_loss_gradients_match_finite_differences() {
    check_joint_gradients(TeacherMode::None, Phase::Uplift.groups(), TimePair { t: 0.35, tau: 0.55 });
}

#[test]
fn teacher_target_is_a_constant_for_the_adapters() {
    check_joint_gradients(TeacherMode::SameNoise, &[Group::Adapter], TimePair { t: 0.6, tau: 0.3 });
}

#[test]
fn base_phase_touches_only_base_parameters() {
    let f = fixture();
    let tr = trainer(&f, small_train());
    let mut p = f.init.clone();
    let mut st = TrainState::new(Phase::Base, &p, tr.cfg.balance);
    tr.run(&mut p, &mut st, 2, |_| {}).unwrap();
    for id in p.ids() {
        if p.group(id) != Group::Base {
            assert_eq!(p.get(id), f.init.get(id), "{}", p.name(id));
        }
    }
    assert_ne!(p, f.init);
}

#[test]
fn uplift_keeps_the_base_frozen_and_updates_lambda() {
    let f = fixture();
    let tr = trainer(&f, small_train());
    let mut p = f.init.clone();
    let mut st = TrainState::new(Phase::Uplift, &p, tr.cfg.balance);
    let mut rows = Vec::new();
    tr.run(&mut p, &mut st, 3, |m| rows.push(m.clone())).unwrap();
    for id in p.ids() {
        if p.group(id) == Group::Base {
            assert_eq!(p.get(id), f.init.get(id), "{}", p.name(id));
        }
    }
    assert!(rows[0].probe.is_some() && rows[1].probe.is_none() && rows[2].probe.is_some());
    assert_eq!(rows[0].lambda_txt, 0.05);
    assert_ne!(st.balance.lambda_txt, 0.05);
    assert!(rows.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn probe_sees_both_parts() {
    let f = fixture();
    let cfg = TrainConfig {
        teacher: TeacherMode::None,
        ..small_train()
    };
    let tr = trainer(&f, cfg);
    let mut p = f.init.clone();
    f.bb.perturb_adapters(&mut p, 0.2, &mut stream(8, 8));
    let st = TrainState::new(Phase::Uplift, &p, tr.cfg.balance);
    let pr = tr.probe(&p, &st).unwrap();
    assert!(pr.g_img > 0.0 && pr.g_txt > 0.0);
    assert_eq!(pr.ratio, balance_ratio(&st.balance, pr.g_img, pr.g_txt));
}

#[test]
fn vqa_phase_needs_the_vocabulary() {
    let f = fixture();
    let tr = Trainer {
        vocab: None,
        ..trainer(&f, small_train())
    };
    let mut p = f.init.clone();
    let mut st = TrainState::new(Phase::Vqa, &p, tr.cfg.balance);
    assert!(matches!(tr.step(&mut p, &mut st), Err(TrainError::Config(_))));
    let tr = trainer(&f, small_train());
    let m = tr.step(&mut p, &mut st).unwrap();
    assert_eq!(m.image, 0.0);
    assert!(m.text > 0.0);
}

#[test]
fn runs_are_bit_reproducible_and_resumable() {
    let f = fixture();
    let tr = trainer(&f, small_train());
    let go = |steps: &[u64]| {
        let mut p = f.init.clone();
        let mut st = TrainState::new(Phase::Uplift, &p, tr.cfg.balance);
        let mut rows = Vec::new();
        for &n in steps {
            // A clone stands in for a checkpoint round trip.
            let (mut q, mut s) = (p.clone(), st.clone());
            tr.run(&mut q, &mut s, n, |m| rows.push(m.csv_row())).unwrap();
            p = q;
            st = s;
        }
        (p, st, rows)
    };
    let a = go(&[4]);
    assert_eq!(a, go(&[4]));
    assert_eq!(a, go(&[1, 3]));
    assert_eq!(a, go(&[2, 0, 2]));
}

#[test]
fn empty_batch_is_a_config_error() {
    let f = fixture();
    let tr = trainer(
        &f,
        TrainConfig {
            batch: 0,
            ..small_train()
        },
    );
    let mut p = f.init.clone();
    let mut st = TrainState::new(Phase::Base, &p, tr.cfg.balance);
    assert!(matches!(tr.step(&mut p, &mut st), Err(TrainError::Config(_))));
}

#[test]
fn metrics_rows_match_the_header() {
    let f = fixture();
    let tr = trainer(&f, small_train());
    let mut p = f.init.clone();
    let mut st = TrainState::new(Phase::Uplift, &p, tr.cfg.balance);
    let m = tr.step(&mut p, &mut st).unwrap();
    let cols = METRICS_HEADER.split(',').count();
    assert_eq!(m.csv_row().split(',').count(), cols);
    assert!(m.csv_row().starts_with("uplift,0,"));
}

#[test]
fn warmup_ramps_linearly() {
    let cfg = OptimConfig {
        warmup_steps: 4,
        ..OptimConfig::default()
    };
    let w: Vec<f64> = (0..6).map(|s| cfg.warmup(s)).collect();
    assert_eq!(w, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    let none = OptimConfig {
        warmup_steps: 0,
        ..cfg
    };
    assert_eq!(none.warmup(0), 1.0);
}
