use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sfnet::config::KeyValues;
use sfnet::data::{synth_generate, Dataset, GlossVocabulary, Manifest, SynthSpec};
use sfnet::gradcheck::run_suite;
use sfnet::loss::BLANK;
use sfnet::metrics::format_report;
use sfnet::model::{transfer_parameters, ModelConfig, SfNet, MODEL_KEYS};
use sfnet::train::{evaluate, evaluate_words, train_loop, train_word_loop, word_labels, Adam, Checkpoint, TrainConfig, TRAIN_KEYS};

use crate::{CliError, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn synth(a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        vocab_size: a.vocab,
        sentences: a.sentences,
        sentence_len: (a.min_len, a.max_len),
        frames_per_gloss: (a.min_frames, a.max_frames),
        image_size: a.image_size,
        channels: a.channels,
        styles: a.styles,
        test_styles: a.test_styles,
        transition_frames: a.transition,
        fps: a.fps,
        seed: a.seed,
    };
    spec.validate()?;
    if a.out.exists() {
        if !a.force {
            return Err(CliError::Usage(format!("{} already exists; pass --force to overwrite", a.out.display())));
        }
        fs::remove_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    }
    let corpus = synth_generate(&spec)?;
    corpus.write_to(&a.out)?;
    let all: Vec<_> = corpus.train.iter().chain(&corpus.test).collect();
    let frames: usize = all.iter().map(|s| s.blob.frames).sum();
    let words: usize = all.iter().map(|s| s.glosses.len()).sum();
    println!("wrote {}", a.out.display());
    println!("vocabulary\t{}", corpus.vocab.len());
    println!("sentences\t{} (train {}, test {})", all.len(), corpus.train.len(), corpus.test.len());
    println!("frames\t{frames} (mean {:.1} per sentence)", frames as f64 / all.len() as f64);
    println!("glosses\t{words} (mean {:.2} per sentence)", words as f64 / all.len() as f64);
    Ok(())
}

fn vocab_path(explicit: &Option<PathBuf>, manifest: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("vocab.txt"))
}

fn load_split(path: &Path, vocab: &GlossVocabulary, cfg: sfnet::data::PreprocessConfig) -> CliResult<Dataset> {
    let manifest = Manifest::load(path)?;
    manifest.validate(vocab.len())?;
    Ok(Dataset::from_manifest(&manifest, vocab, cfg)?)
}

/// Flags that mirror config keys, as key-value overrides.
fn flag_overrides(a: &TrainArgs) -> CliResult<KeyValues> {
    let mut kv = KeyValues::default();
    macro_rules! opt {
        ($($field:ident => $key:literal),* $(,)?) => {
            $(if let Some(v) = &a.$field { kv.set($key, v); })*
        };
    }
    opt!(
        lr => "lr", weight_decay => "weight_decay", epochs => "epochs", e_start => "e_start",
        kl_weight => "kl_weight", batch_size => "batch_size", seed => "seed", init_seed => "init_seed",
        clip_norm => "clip_norm", checkpoint_every => "checkpoint_every", eval_every => "eval_every",
        early_stop_wer => "early_stop_wer", dataset_kind => "dataset_kind", crop_fraction => "crop_fraction",
        decimation => "decimation", fixed_frames => "fixed_frames", input_size => "input_size",
        window => "window", stride => "stride", gloss_hidden => "gloss_hidden", sentence_hidden => "sentence_hidden",
    );
    for (on, key) in [
        (a.no_3d, "no_3d"),
        (a.no_framing, "no_framing"),
        (a.no_gloss_lstm, "no_gloss_lstm"),
        (a.word_level, "word_level_mode"),
    ] {
        if on {
            kv.set(key, true);
        }
    }
    if a.no_regularizer {
        kv.set("regularizer", false);
    }
    for s in &a.set {
        let Some((k, v)) = s.split_once('=') else {
            return Err(CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")));
        };
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

/// Preset, then config file, then flags; vocabulary size always comes from the vocabulary.
pub fn resolve_config(a: &TrainArgs, vocab_len: usize, channels: Option<usize>) -> CliResult<(ModelConfig, TrainConfig)> {
    let (mut model, mut train) = match a.preset.as_str() {
        "desk" => (ModelConfig::desk(vocab_len), TrainConfig::desk()),
        "paper" => (
            ModelConfig { vocab_size: vocab_len, word_classes: vocab_len, ..Default::default() },
            TrainConfig::default(),
        ),
        other => return Err(CliError::Usage(format!("unknown preset {other:?}; expected desk or paper"))),
    };
    let mut kv = match &a.config {
        Some(p) => KeyValues::parse(&fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?)?,
        None => KeyValues::default(),
    };
    kv.merge(&flag_overrides(a)?);
    let known: Vec<&str> = MODEL_KEYS.iter().chain(TRAIN_KEYS).copied().collect();
    kv.check_known(&known)?;
    if let Some(v) = kv.get_str("vocab_size") {
        if v.parse::<usize>().ok() != Some(vocab_len) {
            return Err(CliError::Usage(format!("vocab_size {v} disagrees with the vocabulary's {vocab_len} glosses")));
        }
    }
    if let (Some(c), None) = (channels, kv.get_str("input_channels")) {
        model.input_channels = c;
    }
    model.apply(&kv)?;
    train.apply(&kv)?;
    model.vocab_size = vocab_len;
    if kv.get_str("word_classes").is_none() {
        model.word_classes = vocab_len;
    }
    if model.word_level_mode && train.fixed_frames == 0 {
        train.fixed_frames = model.window;
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

pub fn train(a: &TrainArgs) -> CliResult {
    let vocab_file = vocab_path(&a.vocab, &a.train);
    let vocab = GlossVocabulary::load(&vocab_file)?;
    let probe = Manifest::load(&a.train)?;
    let channels = match probe.entries.first() {
        Some(e) => Some(sfnet::data::FrameBlob::read(&probe.resolve(e))?.channels),
        None => return Err(CliError::Data(format!("{} has no samples", a.train.display()))),
    };
    let (model_cfg, cfg) = resolve_config(a, vocab.len(), channels)?;
    let pre = cfg.preprocess(&model_cfg);
    let train_set = load_split(&a.train, &vocab, pre.clone())?;
    let held_out = a.eval.as_deref().map(|p| load_split(p, &vocab, pre.clone())).transpose()?;

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut resolved = model_cfg.to_kv();
    resolved.merge(&cfg.to_kv());
    let config_path = a.out.join("config.txt");
    fs::write(&config_path, resolved.to_text()).map_err(|e| io_err(&config_path, e))?;
    if a.dry_run {
        print!("{}", resolved.to_text());
        return Ok(());
    }

    let mut model = SfNet::new(model_cfg.clone())?;
    if let Some(src) = &a.init_from {
        let source = Checkpoint::load(src)?.restore_model()?;
        let copied = transfer_parameters(&source, &mut model)?;
        if !a.quiet {
            println!("initialized {} tensors from {}", copied.len(), src.display());
        }
    }
    let mut adam = Adam::new(cfg.weight_decay);
    let log_path = a.out.join("metrics.log");
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let extra = cfg.to_kv();
    let vocab_text = vocab.to_text();
    if !a.quiet {
        println!(
            "training {} samples ({} trainable parameters, {} epochs)",
            train_set.len(),
            model.num_trainable(),
            cfg.epochs
        );
    }
    let on_epoch = |e: &sfnet::train::EpochLog, m: &SfNet, opt: &Adam| -> sfnet::Result<()> {
        let line = e.line();
        writeln!(log, "{line}").map_err(|err| sfnet::Error::Io { path: log_path.clone(), source: err })?;
        if !a.quiet {
            println!("{line}");
        }
        if cfg.checkpoint_every > 0 && e.epoch.is_multiple_of(cfg.checkpoint_every) {
            Checkpoint::capture(m, opt, e.epoch as u64, &extra, &vocab_text).save(&a.out.join(format!("epoch-{:03}.ckpt", e.epoch)))?;
        }
        Ok(())
    };
    let history = if model_cfg.word_level_mode {
        word_labels(&train_set, model_cfg.word_classes)?;
        train_word_loop(&mut model, &mut adam, &train_set, held_out.as_ref(), &cfg, on_epoch)?
    } else {
        train_loop(&mut model, &mut adam, &train_set, held_out.as_ref(), &cfg, on_epoch)?
    };
    let last = history.epochs.last().map_or(0, |e| e.epoch);
    let final_path = a.out.join("final.ckpt");
    Checkpoint::capture(&model, &adam, last as u64, &extra, &vocab_text).save(&final_path)?;

    let metric = if model_cfg.word_level_mode { "error" } else { "wer" };
    let train_score = if model_cfg.word_level_mode {
        evaluate_words(&mut model, &train_set, cfg.batch_size)?.0
    } else {
        evaluate(&mut model, &train_set, cfg.batch_size)?.wer()
    };
    println!("epochs\t{last}{}", if history.stopped_early { " (stopped early)" } else { "" });
    println!("train_{metric}\t{train_score:.4}");
    if let Some(e) = history.epochs.last().and_then(|e| e.eval_wer) {
        println!("eval_{metric}\t{e:.4}");
    }
    println!("checkpoint\t{}", final_path.display());
    Ok(())
}

fn render_path(path: &[usize], vocab: &GlossVocabulary) -> String {
    path.iter()
        .map(|&k| if k == BLANK { "-" } else { vocab.gloss(k).unwrap_or("?") })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab = GlossVocabulary::load(&vocab_path(&a.vocab, &a.manifest))?;
    if vocab.to_text() != ckpt.vocab {
        return Err(CliError::Data(format!(
            "vocabulary differs from the one {} was trained with",
            a.checkpoint.display()
        )));
    }
    let mut model = ckpt.restore_model()?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&ckpt.config)?;
    let data = load_split(&a.manifest, &vocab, cfg.preprocess(model.config()))?;
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be positive".into()));
    }

    let mut report = String::new();
    if model.config().word_level_mode {
        let labels = word_labels(&data, model.config().word_classes)?;
        let (error, preds) = evaluate_words(&mut model, &data, a.batch_size)?;
        for ((s, l), p) in data.samples().iter().zip(&labels).zip(&preds) {
            let name = |c: usize| vocab.gloss(c + 1).unwrap_or("?").to_string();
            report.push_str(&format!("{}\t{}\t{}\n", s.id, name(*l), name(*p)));
        }
        report.push_str(&format!("error\t{error:.6}\n"));
    } else {
        sfnet::train::check_feasible(model.config(), &data)?;
        let result = evaluate(&mut model, &data, a.batch_size)?;
        report = format_report(result.rows())?;
        if a.dump_alignments {
            for (i, id) in result.ids.iter().enumerate() {
                report.push_str(&format!(
                    "align\t{id}\tref: {}\thyp: {}\tpath: {}\n",
                    vocab.render(&result.references[i]),
                    vocab.render(&result.hypotheses[i]),
                    render_path(&result.paths[i], &vocab)
                ));
            }
        }
    }
    match &a.out {
        Some(p) => fs::write(p, &report).map_err(|e| io_err(p, e))?,
        None => print!("{report}"),
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    let reports = run_suite(&a.scope, a.seed)?;
    println!("{:<8} {:>8} {:>12} {:>10}  result", "check", "entries", "max_rel_err", "tolerance");
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passed();
        println!(
            "{:<8} {:>8} {:>12.3e} {:>10.1e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            r.tolerance,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
