use super::*;
use crate::data::{synth_generate, SynthSpec};
use crate::tensor::Tensor;

pub(crate) fn tiny_setup() -> (ModelConfig, Dataset, Dataset) {
    let spec = SynthSpec {
        vocab_size: 3,
        sentences: 6,
        sentence_len: (1, 2),
        frames_per_gloss: (8, 10),
        image_size: 16,
        channels: 1,
        styles: 3,
        ..Default::default()
    };
    let corpus = synth_generate(&spec).unwrap();
    let model = ModelConfig {
        input_channels: 1,
        input_size: 8,
        stem_channels: 2,
        stem_kernel: 3,
        block_channels: vec![3],
        block_strides: vec![2],
        block_3d: vec![true],
        window: 4,
        stride: 2,
        gloss_hidden: 4,
        sentence_hidden: 3,
        vocab_size: 3,
        word_classes: 3,
        ..Default::default()
    };
    let pre = PreprocessConfig { size: 8, ..Default::default() };
    let train = Dataset::from_synth(&corpus.train, pre.clone()).unwrap();
    let test = Dataset::from_synth(&corpus.test, pre).unwrap();
    (model, train, test)
}

fn losses(h: &TrainHistory) -> Vec<(f64, Option<f64>, f64, bool, f64, Option<f64>)> {
    h.epochs.iter().map(|e| (e.ctc, e.kl, e.total, e.regularizer_active, e.running_wer, e.eval_wer)).collect()
}

fn run(model_cfg: &ModelConfig, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> (TrainHistory, SfNet) {
    let mut model = SfNet::new(model_cfg.clone()).unwrap();
    let mut adam = Adam::new(cfg.weight_decay);
    let h = train_loop(&mut model, &mut adam, train, Some(test), cfg, |_, _, _| Ok(())).unwrap();
    (h, model)
}

#[test]
fn halving_schedule() {
    let cfg = TrainConfig { epochs: 60, ..Default::default() };
    assert_eq!(lr_at_epoch(30, &cfg), 1e-4);
    assert_eq!(lr_at_epoch(31, &cfg), 5e-5);
    let cfg = TrainConfig { epochs: 40, ..Default::default() };
    assert_eq!(lr_at_epoch(1, &cfg), 1e-4);
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = TrainConfig { e_start: 5, dataset_kind: DatasetKind::Rwth, early_stop_wer: 0.05, ..TrainConfig::desk() };
    let mut back = TrainConfig::default();
    back.apply(&KeyValues::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(TrainConfig { e_start: 70, ..Default::default() }.validate().is_err());
}

#[test]
fn gating_at_last_epoch_matches_no_regularizer() {
    let (m, train, test) = tiny_setup();
    let base = TrainConfig { lr: 1e-2, epochs: 3, e_start: 3, ..Default::default() };
    let (a, ma) = run(&m, &train, &test, &base);
    let (b, mb) = run(&m, &train, &test, &TrainConfig { regularizer: false, ..base.clone() });
    assert_eq!(losses(&a), losses(&b));
    for (p, q) in ma.params().iter().zip(mb.params()) {
        assert_eq!(p.data(), q.data(), "{}", p.name);
    }
    // the regularizer does change the run when it is switched on early
    let (c, _) = run(&m, &train, &test, &TrainConfig { e_start: 1, ..base });
    assert!(c.epochs[1].regularizer_active && c.epochs[1].kl.is_some());
    assert_ne!(losses(&a)[2], losses(&c)[2]);
}

#[test]
fn same_seed_same_curve() {
    let (m, train, test) = tiny_setup();
    let cfg = TrainConfig { lr: 1e-2, epochs: 2, e_start: 1, ..Default::default() };
    assert_eq!(losses(&run(&m, &train, &test, &cfg).0), losses(&run(&m, &train, &test, &cfg).0));
}

#[test]
fn zero_lr_leaves_parameters() {
    let (m, train, test) = tiny_setup();
    let cfg = TrainConfig { lr: 0.0, weight_decay: 0.0, epochs: 1, e_start: 0, ..Default::default() };
    let fresh = SfNet::new(m.clone()).unwrap();
    let (_, trained) = run(&m, &train, &test, &cfg);
    for (p, q) in fresh.params().iter().zip(trained.params()) {
        if p.is_trainable() {
            assert_eq!(p.data(), q.data(), "{}", p.name);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (m, train, test) = tiny_setup();
    let cfg = TrainConfig { lr: 1e-2, epochs: 1, e_start: 0, ..Default::default() };
    let mut model = SfNet::new(m).unwrap();
    let mut adam = Adam::new(cfg.weight_decay);
    train_loop(&mut model, &mut adam, &train, None, &cfg, |_, _, _| Ok(())).unwrap();
    let ck = Checkpoint::capture(&model, &adam, 1, &cfg.to_kv(), "a\nb\nc\n");
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.restore_optimizer().unwrap(), adam);
    let mut restored = back.restore_model().unwrap();
    let a = evaluate(&mut model, &test, 2).unwrap();
    let b = evaluate(&mut restored, &test, 2).unwrap();
    assert_eq!(a.paths, b.paths);
    let batch = test.batch(&[0, 1], 4, false, 0, 0).unwrap();
    let _g = no_grad();
    let x = model.forward_full(&batch, false).unwrap();
    let y = restored.forward_full(&batch, false).unwrap();
    assert_eq!(x.logits_sl.data(), y.logits_sl.data());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"garbage").is_err());
}

#[test]
fn checkpoint_rejects_wrong_shapes() {
    let (m, ..) = tiny_setup();
    let model = SfNet::new(m.clone()).unwrap();
    let mut ck = Checkpoint::capture(&model, &Adam::new(0.0), 0, &KeyValues::default(), "");
    ck.tensors.get_mut("gloss.lstm.w_hh").unwrap().0 = vec![1, 1];
    let err = ck.restore_model().unwrap_err().to_string();
    assert!(err.contains("gloss.lstm.w_hh"));
}

#[test]
fn infeasible_targets_are_reported_up_front() {
    let (mut m, train, test) = tiny_setup();
    // a window longer than every video
    m.window = 200;
    let mut model = SfNet::new(m).unwrap();
    let mut adam = Adam::new(0.0);
    let err = train_loop(&mut model, &mut adam, &train, Some(&test), &TrainConfig::default(), |_, _, _| Ok(()));
    let msg = err.unwrap_err().to_string();
    assert!(msg.contains("s0000"), "{msg}");
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let (m, train, _) = tiny_setup();
    let mut model = SfNet::new(m).unwrap();
    let name = "sentence.head.bias";
    let n = model.param(name).unwrap().data().len();
    model.param_mut(name).unwrap().set_data(vec![f64::NAN; n]);
    let mut adam = Adam::new(0.0);
    let batch = train.batch(&[0], 4, true, 0, 1).unwrap();
    let err = train_step(&mut model, &mut adam, &batch, &TrainConfig::default(), 1, 1e-3).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert!(err.to_string().contains("epoch 1"), "{err}");
    let _ = Tensor::scalar(0.0);
}
