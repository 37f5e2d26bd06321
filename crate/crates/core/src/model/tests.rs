use super::*;
use crate::gradcheck::random_tensor;
use crate::tensor::no_grad;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        input_channels: 1,
        input_size: 8,
        stem_channels: 2,
        stem_kernel: 3,
        stem_stride: 2,
        block_channels: vec![3],
        block_strides: vec![2],
        block_3d: vec![true],
        window: 4,
        stride: 2,
        gloss_hidden: 5,
        sentence_hidden: 4,
        vocab_size: vocab,
        word_classes: vocab,
        ..Default::default()
    }
}

fn clip(b: usize, t: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tensor(&mut rng, &[b, t, 1, 8, 8], 1.0)
}

#[test]
fn output_shapes_follow_meta_frame_count() {
    let mut cfg = ModelConfig::desk(20);
    cfg.input_size = 16;
    let mut net = SfNet::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&mut rng, &[2, 24, 3, 16, 16], 1.0);
    let out = net.forward(&x, &[24, 24], None, true).unwrap();
    assert_eq!(out.logits_sl.shape(), &[2, 5, 21]);
    assert_eq!(out.logits_gl.as_ref().unwrap().shape(), &[2, 5, 21]);
    assert_eq!(out.features.m.shape(), &[2, 5, 32]);
    assert_eq!(out.lengths(), &[5, 5]);
}

#[test]
fn ablation_shapes() {
    let x = clip(2, 10, 1);
    let mut nf = SfNet::new(ModelConfig { no_framing: true, ..tiny(3) }).unwrap();
    let out = nf.forward(&x, &[10, 7], None, true).unwrap();
    assert_eq!(out.logits_sl.shape(), &[2, 10, 4]);
    assert!(out.logits_gl.is_none());
    assert_eq!(out.lengths(), &[10, 7]);

    let mut ng = SfNet::new(ModelConfig { no_gloss_lstm: true, ..tiny(3) }).unwrap();
    let out = ng.forward(&x, &[10, 7], None, true).unwrap();
    // F = (10-4)/2+1 = 4 and (7-4)/2+1 = 2; feature = 4 frames x 3 channels
    assert_eq!(out.features.m.shape(), &[2, 4, 12]);
    assert_eq!(out.lengths(), &[4, 2]);
    assert!(ng.param("gloss.lstm.w_ih").is_none());
}

#[test]
fn distributions_are_normalized() {
    let mut net = SfNet::new(tiny(3)).unwrap();
    let out = net.forward(&clip(2, 9, 2), &[9, 6], None, true).unwrap();
    for t in [out.logits_sl.softmax(), out.logits_gl.unwrap().softmax()] {
        for row in t.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn zeroed_3d_equals_no_3d() {
    let x = clip(2, 9, 3);
    let mut full = SfNet::new(tiny(3)).unwrap();
    full.zero_3d();
    let mut plain = SfNet::new(ModelConfig { no_3d: true, ..tiny(3) }).unwrap();
    for train in [true, false] {
        let a = full.forward(&x, &[9, 5], None, train).unwrap();
        let b = plain.forward(&x, &[9, 5], None, train).unwrap();
        assert_eq!(a.logits_sl.data(), b.logits_sl.data());
        assert_eq!(a.logits_gl.unwrap().data(), b.logits_gl.unwrap().data());
    }
}

#[test]
fn meta_frames_ignore_frames_outside_their_window() {
    let net = SfNet::new(tiny(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pooled = random_tensor(&mut rng, &[1, 10, 3], 1.0);
    let base = net.gloss_level(&pooled, &[10], None).unwrap();
    // meta frame 0 covers frames 0..4; perturb frame 7
    let mut data = pooled.data().to_vec();
    for v in &mut data[7 * 3..8 * 3] {
        *v += 5.0;
    }
    let moved = net.gloss_level(&Tensor::new(&[1, 10, 3], data), &[10], None).unwrap();
    assert_eq!(&base.m.data()[..5], &moved.m.data()[..5]);
    assert_ne!(&base.m.data()[15..20], &moved.m.data()[15..20]);
}

#[test]
fn padding_does_not_change_valid_outputs_in_eval() {
    let mut net = SfNet::new(tiny(3)).unwrap();
    let x = clip(1, 8, 5);
    let mut padded = x.data().to_vec();
    padded.extend(std::iter::repeat_n(0.0, 4 * 64));
    let padded = Tensor::new(&[1, 12, 1, 8, 8], padded);
    let _g = no_grad();
    let a = net.forward(&x, &[8], None, false).unwrap();
    let b = net.forward(&padded, &[8], None, false).unwrap();
    assert_eq!(a.lengths(), b.lengths());
    let n = a.logits_sl.numel();
    for (p, q) in a.logits_sl.data().iter().zip(&b.logits_sl.data()[..n]) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn word_level_single_meta_frame() {
    let cfg = ModelConfig { word_level_mode: true, word_classes: 6, ..tiny(3) };
    let mut net = SfNet::new(cfg).unwrap();
    assert!(net.param("sentence.head.weight").is_none());
    let one = clip(1, 4, 6);
    let two = Tensor::new(&[2, 4, 1, 8, 8], [one.data(), one.data()].concat());
    let logits = net.forward_word_level(&two, &[4, 4], None, false).unwrap();
    assert_eq!(logits.shape(), &[2, 6]);
    assert_eq!(&logits.data()[..6], &logits.data()[6..]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
    assert!(net.forward_word_level(&clip(1, 6, 6), &[6], None, false).is_err());
    assert!(net.forward(&two, &[4, 4], None, false).is_err());
}

#[test]
fn transfer_copies_shared_levels() {
    let word = SfNet::new(ModelConfig { word_level_mode: true, init_seed: 9, ..tiny(3) }).unwrap();
    let mut sent = SfNet::new(tiny(3)).unwrap();
    let head_before = sent.param("sentence.head.weight").unwrap().data().to_vec();
    let copied = transfer_parameters(&word, &mut sent).unwrap();
    assert!(copied.iter().any(|n| n == "gloss.lstm.w_hh"));
    assert!(copied.iter().all(|n| is_transferable(n)));
    assert_eq!(sent.param("sentence.head.weight").unwrap().data(), &head_before[..]);
    let x = clip(1, 8, 7);
    let mut word = word;
    let (a, _) = word.frame_features(&x, &[8], false).unwrap();
    let (b, _) = sent.frame_features(&x, &[8], false).unwrap();
    assert_eq!(a.data(), b.data());
    let ma = word.gloss_level(&a, &[8], None).unwrap();
    let mb = sent.gloss_level(&b, &[8], None).unwrap();
    assert_eq!(ma.m.data(), mb.m.data());
}

#[test]
fn transfer_rejects_mismatched_hidden() {
    let word = SfNet::new(ModelConfig { word_level_mode: true, gloss_hidden: 7, ..tiny(3) }).unwrap();
    let mut sent = SfNet::new(tiny(3)).unwrap();
    let before = sent.param("frame.stem.conv.weight").unwrap().data().to_vec();
    let err = transfer_parameters(&word, &mut sent).unwrap_err().to_string();
    assert!(err.contains("gloss.lstm.w_hh"), "{err}");
    assert_eq!(sent.param("frame.stem.conv.weight").unwrap().data(), &before[..]);
}

#[test]
fn short_sample_error_names_it() {
    let mut net = SfNet::new(tiny(3)).unwrap();
    let ids = vec!["long".to_string(), "short".to_string()];
    let err = net.forward(&clip(2, 6, 8), &[6, 3], Some(&ids), true).unwrap_err();
    assert!(err.to_string().contains("short"));
}

#[test]
fn parameter_names_are_unique() {
    let net = SfNet::new(tiny(3)).unwrap();
    let mut names: Vec<&str> = net.params().iter().map(|p| p.name.as_str()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}
