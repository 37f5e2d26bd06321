use sfnet::data::{synth_generate, Dataset, PreprocessConfig, SynthSpec};
use sfnet::gradcheck::{check, random_tensor, run_suite, weighted_sum, DEFAULT_STEP, DEFAULT_TOLERANCE};
use sfnet::loss::CtcTarget;
use sfnet::model::{transfer_parameters, ModelConfig, SfNet};
use sfnet::nn::conv_video;
use sfnet::train::{evaluate_words, train_step, train_word_loop, Adam, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model(vocab: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        input_channels: 1,
        input_size: 8,
        stem_channels: 3,
        stem_kernel: 3,
        block_channels: vec![4],
        block_strides: vec![2],
        block_3d: vec![true],
        window: 4,
        stride: 2,
        gloss_hidden: 5,
        sentence_hidden: 4,
        vocab_size: vocab,
        word_classes: vocab,
        init_seed: seed,
        ..Default::default()
    }
}

fn tiny_data(seed: u64, sentence_len: (usize, usize), sentences: usize) -> Dataset {
    let spec = SynthSpec {
        vocab_size: 3,
        sentences,
        sentence_len,
        frames_per_gloss: (8, 10),
        image_size: 16,
        channels: 1,
        styles: 2,
        test_styles: 1,
        seed,
        ..Default::default()
    };
    let corpus = synth_generate(&spec).unwrap();
    Dataset::from_synth(&corpus.train, PreprocessConfig { size: 8, ..Default::default() }).unwrap()
}

#[test]
fn loss_on_a_fixed_batch_decreases_monotonically() {
    let mut monotone = 0;
    for seed in 0..10 {
        let data = tiny_data(seed, (1, 2), 4);
        let batch = data.batch(&[0, 1], 4, true, seed, 1).unwrap();
        let mut model = SfNet::new(tiny_model(3, seed)).unwrap();
        let mut adam = Adam::new(0.0);
        let cfg = TrainConfig { regularizer: false, e_start: 0, clip_norm: 5.0, ..Default::default() };
        let losses: Vec<f64> =
            (0..50).map(|_| train_step(&mut model, &mut adam, &batch, &cfg, 1, 1e-3).unwrap().loss.ctc).collect();
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "only {monotone}/10 seeded trials were monotone");
}

#[test]
fn corrupted_conv_backward_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random_tensor(&mut rng, &[1, 2, 2, 5, 5], 1.0), random_tensor(&mut rng, &[2, 2, 3, 3], 0.5), random_tensor(&mut rng, &[2], 0.5)];
    // Same forward value, gradient scaled by 1.5.
    let bad = check(
        "conv2d",
        &inputs,
        |p| {
            let y = conv_video(&p[0], &p[1], &p[2], 1)?;
            weighted_sum(&y.scale(1.5).sub(&y.detach().scale(0.5))?, 1)
        },
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )
    .unwrap();
    assert!(!bad.passed(), "corrupted backward passed with {}", bad.max_rel_error);
    assert!(run_suite("conv2d", 2).unwrap().iter().all(|r| r.passed()));
}

#[test]
fn ctc_scope_checks_only_ctc() {
    let reports = run_suite("ctc", 0).unwrap();
    assert_eq!(reports.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["ctc"]);
    assert!(run_suite("softmax", 0).is_err());
}

#[test]
fn transfer_copies_frame_and_gloss_levels() {
    let source = SfNet::new(tiny_model(3, 1)).unwrap();
    let mut target = SfNet::new(tiny_model(5, 2)).unwrap();
    let copied = transfer_parameters(&source, &mut target).unwrap();
    assert!(!copied.is_empty());
    for name in &copied {
        assert!(name.starts_with("frame.") || name.starts_with("gloss.lstm"), "{name}");
        assert_eq!(source.param(name).unwrap().data(), target.param(name).unwrap().data());
    }
    assert!(copied.iter().all(|n| !n.starts_with("sentence.")));
    let head = target.param("sentence.head.weight").map(|p| p.shape().to_vec());
    assert_ne!(head, source.param("sentence.head.weight").map(|p| p.shape().to_vec()));
}

#[test]
fn word_level_training_learns_isolated_glosses() {
    let data = tiny_data(4, (1, 1), 18);
    let mut cfg_model = tiny_model(3, 3);
    cfg_model.word_level_mode = true;
    let pre = PreprocessConfig { size: 8, fixed_frames: cfg_model.window, ..Default::default() };
    let data = Dataset::new(data.samples().to_vec(), pre).unwrap();
    let mut model = SfNet::new(cfg_model).unwrap();
    let mut adam = Adam::new(0.0);
    let cfg = TrainConfig { epochs: 30, e_start: 0, lr: 3e-3, batch_size: 3, ..Default::default() };
    let h = train_word_loop(&mut model, &mut adam, &data, None, &cfg, |_, _, _| Ok(())).unwrap();
    assert!(h.epochs.last().unwrap().total < h.epochs[0].total);
    let (err, preds) = evaluate_words(&mut model, &data, 3).unwrap();
    assert_eq!(preds.len(), data.len());
    assert!(err <= 0.34, "word error {err}");
}

#[test]
fn ctc_target_alphabet_is_checked() {
    assert!(CtcTarget::new(vec![1, 4], 4).is_err());
    assert_eq!(CtcTarget::new(vec![1, 1, 2], 4).unwrap().min_steps(), 4);
}
