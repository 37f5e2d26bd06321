use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfnet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sfnet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_corpus(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec![
        "synth", "--out", p(&out), "--vocab", "4", "--sentences", "8", "--image-size", "16", "--channels", "1",
        "--min-len", "1", "--max-len", "3", "--min-frames", "6", "--max-frames", "8", "--styles", "4", "--seed", "5",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

const TINY_MODEL: &[&str] = &[
    "--input-size", "8", "--window", "4", "--stride", "2", "--gloss-hidden", "4", "--sentence-hidden", "4",
];

fn train_tiny(data: &Path, out: &Path, extra: &[&str]) -> String {
    let train = data.join("train.tsv");
    let eval = data.join("test.tsv");
    let mut args = vec!["train", "--train", p(&train), "--eval", p(&eval), "--out", p(out), "--epochs", "2", "--e-start", "1"];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn synth_is_deterministic_and_guards_its_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_corpus(dir.path(), &[]);
    let first = fs::read(a.join("train.tsv")).unwrap();
    let blob = fs::read(a.join("blobs/s0000.blob")).unwrap();

    let again = sfnet(&["synth", "--out", p(&a)]);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    tiny_corpus(&dir.path().join("second"), &[]);
    let b = dir.path().join("second/data");
    assert_eq!(first, fs::read(b.join("train.tsv")).unwrap());
    assert_eq!(blob, fs::read(b.join("blobs/s0000.blob")).unwrap());

    let one = sfnet(&["synth", "--out", p(&dir.path().join("v1")), "--vocab", "1"]);
    assert_eq!(code(&one), 1);
}

#[test]
fn default_corpus_has_one_manifest_line_per_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let stats = ok(&["synth", "--out", p(&out), "--vocab", "20", "--sentences", "200", "--seed", "7"]);
    assert!(stats.contains("sentences\t200"));
    let lines = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!(lines("train.tsv") + lines("test.tsv"), 200);
    assert_eq!(lines("vocab.txt"), 20);
    assert_eq!(fs::read_dir(out.join("blobs")).unwrap().count(), 200);
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path(), &[]);
    let run = dir.path().join("run");
    let summary = train_tiny(&data, &run, &["--checkpoint-every", "1"]);
    assert!(summary.contains("train_wer\t"), "{summary}");
    for f in ["config.txt", "metrics.log", "final.ckpt", "epoch-001.ckpt", "epoch-002.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().nth(1).unwrap().contains("reg 1"));

    let ckpt = run.join("final.ckpt");
    let test = data.join("test.tsv");
    let eval = ["eval", "--checkpoint", p(&ckpt), "--manifest", p(&test)];
    let report = ok(&eval);
    assert_eq!(report, ok(&eval));
    assert!(report.lines().last().unwrap().starts_with("pooled\t"));

    let mut dump = eval.to_vec();
    dump.push("--dump-alignments");
    let aligned = ok(&dump);
    let rows: Vec<&str> = aligned.lines().filter(|l| l.starts_with("align\t")).collect();
    assert_eq!(rows.len(), report.lines().count() - 1);
    assert!(rows.iter().all(|r| r.contains("\tpath: ")));

    let other = dir.path().join("other.txt");
    fs::write(&other, "a\nb\nc\nd\ne\n").unwrap();
    let mismatch = sfnet(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--vocab", p(&other)]);
    assert_eq!(code(&mismatch), 2);
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("vocabulary"));

    let id = fs::read_to_string(&test).unwrap().split('\t').next().unwrap().to_string();
    let a = dir.path().join("ia");
    let b = dir.path().join("ib");
    ok(&["inspect", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--sample", &id, "--out", p(&a)]);
    ok(&["inspect", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--sample", &id, "--out", p(&b)]);
    for f in ["stem.pgm", "block1.pgm", "block2.pgm", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read(a.join("stem.pgm")).unwrap().starts_with(b"P5\n"));

    let missing = sfnet(&["inspect", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--sample", "nope", "--out", p(&a)]);
    assert_eq!(code(&missing), 2);
}

fn summary_row<'a>(summary: &'a str, map: &str) -> Vec<&'a str> {
    summary.lines().find(|l| l.starts_with(&format!("{map}\t"))).unwrap().split('\t').collect()
}

#[test]
fn inspect_zero_input_and_3d_branch() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path(), &[]);
    let full = dir.path().join("full");
    let flat = dir.path().join("flat");
    train_tiny(&data, &full, &[]);
    train_tiny(&data, &flat, &["--no-3d"]);
    let test = data.join("test.tsv");
    let id = fs::read_to_string(&test).unwrap().split('\t').next().unwrap().to_string();
    let inspect = |run: &Path, out: &str, zero: bool| {
        let ckpt = run.join("final.ckpt");
        let o = dir.path().join(out);
        let mut args = vec!["inspect", "--checkpoint", p(&ckpt), "--manifest", p(&test), "--sample", &id, "--out", p(&o)];
        if zero {
            args.push("--zero-input");
        }
        ok(&args);
        fs::read_to_string(o.join("summary.txt")).unwrap()
    };
    // Zero frames: the stem sees only its bias, so its map is one constant.
    let zero = inspect(&full, "zero", true);
    let stem = summary_row(&zero, "stem");
    assert_eq!(stem[6].parse::<f64>().unwrap(), 0.0);
    assert_eq!(stem[7], stem[8]);

    let with_3d = inspect(&full, "with", false);
    let without = inspect(&flat, "without", false);
    assert_ne!(summary_row(&with_3d, "block2"), summary_row(&without, "block2"));
}

#[test]
fn flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path(), &[]);
    let train = data.join("train.tsv");
    let resolved = |out: &str, extra: &[&str]| {
        let o = dir.path().join(out);
        let mut args = vec!["train", "--train", p(&train), "--out", p(&o), "--dry-run"];
        args.extend_from_slice(extra);
        ok(&args);
        fs::read_to_string(o.join("config.txt")).unwrap()
    };
    let a = resolved("a", &["--e-start", "15"]);
    let b = resolved("b", &["--e-start", "25", "--epochs", "40"]);
    let c = resolved("c", &["--e-start", "25"]);
    let delta: Vec<(&str, &str)> = a.lines().zip(c.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(delta, vec![("e_start = 15", "e_start = 25")]);
    assert_eq!(b, c);
    assert!(a.contains("window = 12") && a.contains("stride = 3"));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# ablation\nno_3d = true\nwindow = 6\n").unwrap();
    let d = resolved("d", &["--config", p(&cfg), "--window", "8", "--set", "kl_weight=0.5"]);
    assert!(d.contains("no_3d = true") && d.contains("window = 8") && d.contains("kl_weight = 0.5"));

    fs::write(&cfg, "bogus = 1\n").unwrap();
    let bad = sfnet(&["train", "--train", p(&train), "--out", p(&dir.path().join("e")), "--config", p(&cfg)]);
    assert_eq!(code(&bad), 1);
    let wrong_vocab = sfnet(&["train", "--train", p(&train), "--out", p(&dir.path().join("f")), "--set", "vocab_size=9"]);
    assert_eq!(code(&wrong_vocab), 1);
}

#[test]
fn small_framing_window_trains() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path(), &[]);
    let out = train_tiny(&data, &dir.path().join("w3"), &["--window", "3", "--stride", "1", "--epochs", "1", "--e-start", "0"]);
    assert!(out.contains("epochs\t1"));
}

#[test]
fn infeasible_targets_are_reported_with_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_corpus(dir.path(), &["--force", "--min-len", "3", "--max-len", "3", "--min-frames", "3", "--max-frames", "3", "--transition", "1"]);
    let train = data.join("train.tsv");
    let out_dir = dir.path().join("r");
    let mut args = vec!["train", "--train", p(&train), "--out", p(&out_dir), "--epochs", "1", "--e-start", "0"];
    args.extend_from_slice(&["--input-size", "8", "--window", "8", "--stride", "4"]);
    let out = sfnet(&args);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("infeasible") && err.contains("s0000"), "{err}");
}

#[test]
fn transfer_and_word_level_modes() {
    let dir = tempfile::tempdir().unwrap();
    let words = dir.path().join("words");
    let data = tiny_corpus(&words, &["--min-len", "1", "--max-len", "1", "--force"]);
    let word_run = dir.path().join("word");
    let summary = train_tiny(&data, &word_run, &["--word-level", "--e-start", "0"]);
    assert!(summary.contains("train_error\t"), "{summary}");
    let ckpt = word_run.join("final.ckpt");
    let report = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&data.join("test.tsv"))]);
    assert!(report.lines().last().unwrap().starts_with("error\t"));

    let sentences = tiny_corpus(&dir.path().join("sent"), &[]);
    let out = train_tiny(&sentences, &dir.path().join("sl"), &["--init-from", p(&ckpt)]);
    assert!(out.starts_with("initialized "), "{out}");
}

#[test]
fn gradcheck_table_and_scope() {
    let all = ok(&["gradcheck"]);
    for name in ["conv2d", "conv3d", "mict", "bn", "seq_bn", "lstm", "bilstm", "fc", "ctc", "kl"] {
        assert!(all.lines().any(|l| l.starts_with(name) && l.ends_with("PASS")), "{name}: {all}");
    }
    let ctc = ok(&["gradcheck", "--scope", "ctc", "--seed", "3"]);
    assert_eq!(ctc.lines().count(), 2);
    assert!(ctc.lines().nth(1).unwrap().starts_with("ctc"));
    assert_eq!(code(&sfnet(&["gradcheck", "--scope", "nope"])), 1);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&sfnet(&["train", "--no-such-flag"])), 1);
    assert!(sfnet(&["--help"]).status.success());
}
