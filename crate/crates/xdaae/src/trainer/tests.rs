use super::*;
use crate::datasets::synth::{synth_pair, SynthSpec};
use crate::objectives::LossWeights;

fn desk_cfg(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        weights: match mode {
            TrainMode::Supervised => LossWeights::supervised_digits(),
            TrainMode::SemiSupervised => LossWeights::semisupervised_digits(),
        },
        net: NetConfig { k: 4, style_dim_a: 4, style_dim_b: 4, width: 0.125 },
        batch_size: 4,
        steps: 6,
        lr_enc_gen: 2e-4,
        lr_disc: 2e-4,
        adam_beta1: 0.5,
        adam_beta2: 0.999,
        seed: 11,
        checkpoint_every: 0,
        labeled_per_class: 3,
    }
}

fn desk_data() -> DatasetPair {
    synth_pair(&SynthSpec { k: 4, n_train_per_class: 8, n_test_per_class: 2, seed: 3 }).unwrap()
}

fn snapshot(store: &ParamStore<f32>, prefixes: &[&str]) -> Vec<(String, Vec<f32>)> {
    store
        .params_iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, e)| (n.to_string(), e.values.clone()))
        .collect()
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let mut cfg = desk_cfg(TrainMode::Supervised);
    cfg.weights = LossWeights {
        alpha1: 0.0,
        alpha2: 0.0,
        alpha3: 0.0,
        alpha4: 0.0,
        beta1: 0.0,
        beta2: 0.0,
        beta3: 0.0,
        gamma1: 0.0,
        gamma2: 0.0,
        lambda1: 0.0,
        lambda2: 0.0,
        eta1: 0.0,
        eta2: 0.0,
    };
    let data = desk_data();
    let mut t = Trainer::new(cfg).unwrap();
    let before = snapshot(&t.store, &["e_", "g_", "d_"]);
    let ba = data.train_a.batch(&[0, 1, 2, 3]).unwrap();
    let bb = data.train_b.batch(&[0, 1, 2, 3]).unwrap();
    t.train_step_supervised(&ba, &bb).unwrap();
    let after = snapshot(&t.store, &["e_", "g_", "d_"]);
    assert_eq!(before, after);
}

#[test]
fn alternating_schedule_isolates_parameter_groups() {
    let data = desk_data();
    let mut t = Trainer::new(desk_cfg(TrainMode::Supervised)).unwrap();
    let ba = data.train_a.batch(&[0, 1, 2, 3]).unwrap();
    let bb = data.train_b.batch(&[0, 1, 2, 3]).unwrap();

    // discriminator phase must not move encoder/generator parameters
    let enc_before = snapshot(&t.store, &crate::nets::ENC_GEN_PREFIXES);
    let disc_before = snapshot(&t.store, &crate::nets::DISC_PREFIXES);
    t.phase_disc(&ba, &bb).unwrap();
    assert_eq!(enc_before, snapshot(&t.store, &crate::nets::ENC_GEN_PREFIXES));
    assert_ne!(disc_before, snapshot(&t.store, &crate::nets::DISC_PREFIXES));

    // a full step moves encoder/generator parameters but the encoder phase
    // leaves discriminators where the discriminator phase put them
    let mut t2 = Trainer::new(desk_cfg(TrainMode::Supervised)).unwrap();
    t2.phase_disc(&ba, &bb).unwrap();
    let disc_after_dphase = snapshot(&t2.store, &crate::nets::DISC_PREFIXES);
    let mut t3 = Trainer::new(desk_cfg(TrainMode::Supervised)).unwrap();
    t3.train_step_supervised(&ba, &bb).unwrap();
    assert_eq!(disc_after_dphase, snapshot(&t3.store, &crate::nets::DISC_PREFIXES));
    assert_ne!(enc_before, snapshot(&t3.store, &crate::nets::ENC_GEN_PREFIXES));
}

#[test]
fn supervised_step_requires_labels_and_mode() {
    let data = desk_data();
    let mut t = Trainer::new(desk_cfg(TrainMode::Supervised)).unwrap();
    let ba = data.train_a.batch(&[0, 1]).unwrap();
    let unlabeled = DomainBatch { labels: None, ..ba.clone() };
    assert!(t.train_step_supervised(&unlabeled, &ba).is_err());

    let mut wrong_mode = Trainer::new(desk_cfg(TrainMode::SemiSupervised)).unwrap();
    assert!(wrong_mode.train_step_supervised(&ba, &ba).is_err());
}

#[test]
fn supervised_mode_never_evaluates_unlabeled_consistency() {
    let data = desk_data();
    let mut t = Trainer::new(desk_cfg(TrainMode::Supervised)).unwrap();
    let ba = data.train_a.batch(&[0, 1, 2, 3]).unwrap();
    let bb = data.train_b.batch(&[0, 1, 2, 3]).unwrap();
    for _ in 0..3 {
        let report = t.train_step_supervised(&ba, &bb).unwrap();
        assert!(report.get("cc_un").is_none());
        assert!(report.get("cc_su").is_some());
    }
    assert!(!t.cc_used.contains("cc_un"));
    assert!(!t.cc_used.contains("cc_suun"));
}

#[test]
fn label_economy_is_audited() {
    let data = desk_data();
    let cfg = desk_cfg(TrainMode::SemiSupervised);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let la = data.train_a.batch(&[0, 1, 2]).unwrap();
    let lb = data.train_b.batch(&[3, 4, 5]).unwrap();
    let ua = DomainBatch { labels: None, ..data.train_a.batch(&[8, 9, 10, 11]).unwrap() };
    let ub = DomainBatch { labels: None, ..data.train_b.batch(&[8, 9, 10, 11]).unwrap() };
    for _ in 0..4 {
        t.train_step_semisup(&la, &lb, &ua, &ub).unwrap();
    }
    assert_eq!(t.labels_consumed, 4 * 6);
}

#[test]
fn identical_seeds_give_identical_report_sequences() {
    let data = desk_data();
    let mut cfg = desk_cfg(TrainMode::SemiSupervised);
    cfg.steps = 8;
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let r1 = train_run(&cfg, &data, dir1.path(), None).unwrap();
    let r2 = train_run(&cfg, &data, dir2.path(), None).unwrap();
    assert_eq!(r1.reports.len(), 8);
    for (a, b) in r1.reports.iter().zip(&r2.reports) {
        assert_eq!(a, b);
    }
    // metrics files byte-identical
    let m1 = std::fs::read(&r1.metrics_path).unwrap();
    let m2 = std::fs::read(&r2.metrics_path).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn resume_matches_uninterrupted_run_bitwise() {
    let data = desk_data();
    let mut cfg = desk_cfg(TrainMode::Supervised);
    cfg.steps = 10;
    cfg.checkpoint_every = 6;

    let dir_full = tempfile::tempdir().unwrap();
    let full = train_run(&cfg, &data, dir_full.path(), None).unwrap();

    let dir_part = tempfile::tempdir().unwrap();
    let mut cfg_part = cfg.clone();
    cfg_part.steps = 6;
    cfg_part.checkpoint_every = 0;
    train_run(&cfg_part, &data, dir_part.path(), None).unwrap();

    let dir_resume = tempfile::tempdir().unwrap();
    let resumed = train_run(&cfg, &data, dir_resume.path(), Some(&dir_part.path().join("ck_final.bin"))).unwrap();

    assert_eq!(resumed.reports.len(), 4);
    for (a, b) in full.reports[6..].iter().zip(&resumed.reports) {
        assert_eq!(a, b);
    }
    // final parameters identical bit for bit
    let ck_full = checkpoint::load(&full.final_checkpoint).unwrap();
    let ck_res = checkpoint::load(&resumed.final_checkpoint).unwrap();
    assert_eq!(ck_full.store, ck_res.store);
}

#[test]
fn metrics_csv_has_one_row_per_active_term() {
    let data = desk_data();
    let mut cfg = desk_cfg(TrainMode::Supervised);
    cfg.steps = 3;
    let dir = tempfile::tempdir().unwrap();
    let out = train_run(&cfg, &data, dir.path(), None).unwrap();
    let text = std::fs::read_to_string(&out.metrics_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,term,value");
    let terms_per_step = out.reports[0].len();
    assert_eq!(lines.len(), 1 + 3 * terms_per_step);
    for step in 1..=3u64 {
        let count = lines.iter().filter(|l| l.starts_with(&format!("{step},"))).count();
        assert_eq!(count, terms_per_step);
    }
}

#[test]
fn no_nan_or_inf_over_a_short_budget() {
    let data = desk_data();
    let mut cfg = desk_cfg(TrainMode::SemiSupervised);
    cfg.steps = 12;
    let dir = tempfile::tempdir().unwrap();
    let out = train_run(&cfg, &data, dir.path(), None).unwrap();
    for r in &out.reports {
        for (_, v) in r.iter() {
            assert!(v.is_finite());
        }
    }
    // parameters stay finite too
    let ck = checkpoint::load(&out.final_checkpoint).unwrap();
    for (_, e) in ck.store.params_iter() {
        assert!(e.values.iter().all(|v| v.is_finite()));
    }
}

// ----- single-step minimax direction checks -----

mod minimax {
    use super::*;
    use crate::autodiff::{Adam, AdamConfig, BnMode, Fwd};
    use crate::nets::{Domain, Nets};
    use crate::objectives::{adv_content_loss, adv_encoder_surrogate, adv_style_loss};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Frozen {
        nets: Nets,
        imgs_a: Vec<f32>,
        imgs_b: Vec<f32>,
        prior_a: Vec<f32>,
        prior_b: Vec<f32>,
        prior_c: Vec<f32>,
        n: usize,
    }

    fn frozen(seed: u64) -> Frozen {
        let nets = Nets::new(NetConfig { k: 4, style_dim_a: 4, style_dim_b: 4, width: 0.125 }).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = 5;
        let imgs_a: Vec<f32> = (0..n * 3072).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let imgs_b: Vec<f32> = (0..n * 3072).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prior = nets.cfg.prior();
        let prior_a = prior.sample_style(&mut rng, n, Domain::A);
        let prior_b = prior.sample_style(&mut rng, n, Domain::B);
        let prior_c = prior.sample_content(&mut rng, n).0;
        Frozen { nets, imgs_a, imgs_b, prior_a, prior_b, prior_c, n }
    }

    /// Eq-form adversarial objective on a frozen batch with frozen draws.
    fn adversarial_objective(f: &Frozen, store: &ParamStore<f32>, w: &LossWeights, backward: bool) -> (f64, std::collections::BTreeMap<String, Vec<f32>>) {
        let mut fwd = Fwd::new(store, BnMode::TrainFrozen);
        let xa = fwd.graph.constant(&[f.n, 3, 32, 32], f.imgs_a.clone()).unwrap();
        let xb = fwd.graph.constant(&[f.n, 3, 32, 32], f.imgs_b.clone()).unwrap();
        let ea = f.nets.encode(&mut fwd, xa, Domain::A).unwrap();
        let eb = f.nets.encode(&mut fwd, xb, Domain::B).unwrap();
        let pa = fwd.graph.constant(&[f.n, 4], f.prior_a.clone()).unwrap();
        let pb = fwd.graph.constant(&[f.n, 4], f.prior_b.clone()).unwrap();
        let pc = fwd.graph.constant(&[f.n, 4], f.prior_c.clone()).unwrap();
        let adv_s = adv_style_loss(&f.nets, &mut fwd, ea.1, eb.1, pa, pb, w).unwrap();
        let adv_c = adv_content_loss(&f.nets, &mut fwd, Some(ea.0), Some(eb.0), Some(pc), w).unwrap();
        let total = fwd.graph.add(adv_s.total, adv_c.total).unwrap();
        let value = fwd.graph.scalar(total) as f64;
        let grads = if backward {
            let neg = fwd.graph.neg(total);
            fwd.graph.backward(neg).unwrap();
            fwd.grads()
        } else {
            Default::default()
        };
        (value, grads)
    }

    fn surrogate_objective(f: &Frozen, store: &ParamStore<f32>, w: &LossWeights, backward: bool) -> (f64, std::collections::BTreeMap<String, Vec<f32>>) {
        let mut fwd = Fwd::new(store, BnMode::TrainFrozen);
        let xa = fwd.graph.constant(&[f.n, 3, 32, 32], f.imgs_a.clone()).unwrap();
        let xb = fwd.graph.constant(&[f.n, 3, 32, 32], f.imgs_b.clone()).unwrap();
        let ea = f.nets.encode(&mut fwd, xa, Domain::A).unwrap();
        let eb = f.nets.encode(&mut fwd, xb, Domain::B).unwrap();
        let sur = adv_encoder_surrogate(&f.nets, &mut fwd, ea.1, eb.1, Some(ea.0), Some(eb.0), w).unwrap();
        let value = fwd.graph.scalar(sur) as f64;
        let grads = if backward {
            fwd.graph.backward(sur).unwrap();
            fwd.grads()
        } else {
            Default::default()
        };
        (value, grads)
    }

    #[test]
    fn tiny_discriminator_step_does_not_decrease_the_objective() {
        let f = frozen(21);
        let mut store = f.nets.init_params(4);
        let w = LossWeights { beta1: 1.0, beta2: 1.0, ..LossWeights::supervised_digits() };
        let (before, grads) = adversarial_objective(&f, &store, &w, true);
        let mut opt = Adam::new(AdamConfig { lr: 1e-5, ..Default::default() });
        let names = crate::nets::group_names(&store, &crate::nets::DISC_PREFIXES);
        let present: Vec<&str> = names.iter().map(|s| s.as_str()).filter(|n| grads.contains_key(*n)).collect();
        opt.step(&mut store, &grads, present).unwrap();
        let (after, _) = adversarial_objective(&f, &store, &w, false);
        assert!(after >= before - 1e-7, "ascent step decreased objective: {before} -> {after}");
    }

    #[test]
    fn tiny_encoder_step_does_not_increase_the_surrogate() {
        let f = frozen(22);
        let mut store = f.nets.init_params(5);
        let w = LossWeights { beta1: 1.0, beta2: 1.0, ..LossWeights::supervised_digits() };
        let (before, grads) = surrogate_objective(&f, &store, &w, true);
        let mut opt = Adam::new(AdamConfig { lr: 1e-5, ..Default::default() });
        let names = crate::nets::group_names(&store, &crate::nets::ENC_GEN_PREFIXES);
        let present: Vec<&str> = names.iter().map(|s| s.as_str()).filter(|n| grads.contains_key(*n)).collect();
        opt.step(&mut store, &grads, present).unwrap();
        let (after, _) = surrogate_objective(&f, &store, &w, false);
        assert!(after <= before + 1e-7, "descent step increased surrogate: {before} -> {after}");
    }

    #[test]
    fn freezing_both_sides_leaves_the_objective_unchanged() {
        let f = frozen(23);
        let store = f.nets.init_params(6);
        let w = LossWeights::semisupervised_digits();
        let (v1, _) = adversarial_objective(&f, &store, &w, false);
        let (v2, _) = adversarial_objective(&f, &store, &w, false);
        assert_eq!(v1, v2);
    }
}
