use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisecond_core::corpus::{read_manifest, RecordKind, Split, MANIFEST_FILE};
use noisecond_core::dsp::Waveform;
use noisecond_core::trainer::{load_checkpoint, save_checkpoint, BEST_CHECKPOINT, TRAIN_LOG};
use noisecond_core::verify::rel_rms;
use noisecond_core::wav::{read_wav, write_wav};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noisecond"));
    c.env_remove("NOISECOND_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, envs: &str, utts: &str, seed: &str) -> Output {
    run(&[
        "synth", "--out", p(dir), "--environments", envs, "--utterances", utts, "--seed", seed, "--speech-secs", "0.5",
        "--noise-secs", "1.0",
    ])
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn train_mini(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--corpus", p(corpus), "--out", p(out), "--preset", "miniature", "--steps", "3", "--set",
        "train.batch_size=4", "--set", "train.val_examples=4", "--threads", "1",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synth_counts_determinism_and_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let o = synth(&a, "5", "20", "3");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_manifest(a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(records.len(), 25);

    let b = tmp.path().join("b");
    assert_eq!(code(&synth(&b, "5", "20", "3")), 0);
    assert_eq!(tree(&a), tree(&b));

    assert_eq!(code(&synth(&a, "5", "20", "3")), 2);
    let forced = run(&[
        "synth", "--out", p(&a), "--environments", "4", "--utterances", "4", "--speech-secs", "0.5", "--noise-secs", "1.0",
        "--force",
    ]);
    assert_eq!(code(&forced), 0);
    assert_eq!(read_manifest(a.join(MANIFEST_FILE)).unwrap().len(), 8);

    assert_eq!(code(&synth(&tmp.path().join("c"), "0", "20", "3")), 2);
}

#[test]
fn default_sized_manifest_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("c");
    let o = run(&[
        "synth", "--out", p(&dir), "--environments", "50", "--utterances", "200", "--speech-secs", "0.1", "--noise-secs",
        "0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_manifest(dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(records.len(), 250);
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    assert_eq!(code(&synth(&corpus, "10", "60", "1")), 0);

    let run_dir = tmp.path().join("emb");
    let o = train_mini(&corpus, &run_dir, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt_path = run_dir.join(BEST_CHECKPOINT);
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    assert!(run_dir.join(TRAIN_LOG).exists());
    assert_eq!(code(&train_mini(&corpus, &run_dir, &[])), 2, "existing run dir needs --force");

    let plain_dir = tmp.path().join("plain");
    assert_eq!(code(&train_mini(&corpus, &plain_dir, &["--no-embedding"])), 0);
    let plain = load_checkpoint(plain_dir.join(BEST_CHECKPOINT)).unwrap();
    assert_ne!(plain.config().hash(), ckpt.config().hash());
    let base_dir = tmp.path().join("base");
    assert_eq!(code(&train_mini(&corpus, &base_dir, &["--baseline", "noise-aware"])), 0);

    // Enhancement of a test recording.
    let records = read_manifest(corpus.join(MANIFEST_FILE)).unwrap();
    let speech = records.iter().find(|r| r.split == Split::Test && r.kind == RecordKind::Speech).unwrap();
    let noise = records.iter().find(|r| r.split == Split::Test && r.kind == RecordKind::Noise).unwrap();
    let noisy_path = corpus.join(&speech.path);
    let hint_path = corpus.join(&noise.path);
    let out = tmp.path().join("enh.wav");
    let o = run(&["enhance", "--ckpt", p(&ckpt_path), "--noisy", p(&noisy_path), "--hint", p(&hint_path), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_wav(&out).unwrap().samples().len(), read_wav(&noisy_path).unwrap().samples().len());
    let again = run(&["enhance", "--ckpt", p(&ckpt_path), "--noisy", p(&noisy_path), "--hint", p(&hint_path), "--out", p(&out)]);
    assert_eq!(code(&again), 2);
    let missing = run(&["enhance", "--ckpt", p(&ckpt_path), "--noisy", p(&noisy_path), "--out", p(&tmp.path().join("x.wav"))]);
    assert_eq!(code(&missing), 2);
    let short = tmp.path().join("short.wav");
    let head = read_wav(&noisy_path).unwrap().samples()[..100].to_vec();
    write_wav(&short, &Waveform::new(head, 16_000).unwrap()).unwrap();
    let o = run(&["enhance", "--ckpt", p(&ckpt_path), "--noisy", p(&short), "--hint", p(&hint_path), "--out", p(&tmp.path().join("y.wav"))]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("too short"));

    // Identity checkpoint reproduces its input.
    let mut identity = ckpt.clone();
    identity.model.zero_output_layer();
    let id_path = tmp.path().join("identity.ckpt");
    save_checkpoint(&identity, &id_path).unwrap();
    let id_out = tmp.path().join("id.wav");
    let o = run(&["enhance", "--ckpt", p(&id_path), "--noisy", p(&noisy_path), "--hint", p(&hint_path), "--out", p(&id_out)]);
    assert_eq!(code(&o), 0);
    let (a, b) = (read_wav(&noisy_path).unwrap(), read_wav(&id_out).unwrap());
    assert!(rel_rms(a.samples(), b.samples(), 0..a.samples().len()) < 1e-3);

    // Evaluation report.
    let rep = tmp.path().join("report");
    let o = run(&["evaluate", "--ckpt", p(&ckpt_path), "--corpus", p(&corpus), "--out", p(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let jsonl = std::fs::read_to_string(rep.join("report.jsonl")).unwrap();
    let buckets: Vec<serde_json::Value> = jsonl
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["record"] == "bucket" && v["method"] == "best" && !v["snr_db"].is_null())
        .collect();
    let snrs: Vec<f64> = buckets.iter().map(|b| b["snr_db"].as_f64().unwrap()).collect();
    assert_eq!(snrs, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0]);
    assert!(jsonl.lines().any(|l| l.contains("\"method\":\"noisy\"")));
    let table = std::fs::read_to_string(rep.join("report.txt")).unwrap();
    assert!(table.contains("Noisy speech"));
    let rep2 = tmp.path().join("report2");
    assert_eq!(code(&run(&["evaluate", "--ckpt", p(&ckpt_path), "--corpus", p(&corpus), "--out", p(&rep2)])), 0);
    assert_eq!(tree(&rep), tree(&rep2));
    let o = run(&["evaluate", "--ckpt", p(&ckpt_path), "--corpus", p(&corpus), "--split", "dev", "--out", p(&tmp.path().join("r3"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_mini(&tmp.path().join("missing"), &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 2);

    let corpus = tmp.path().join("corpus");
    assert_eq!(code(&synth(&corpus, "10", "20", "2")), 0);
    let o = train_mini(&corpus, &tmp.path().join("o1"), &["--set", "train.bogus=1"]);
    assert_eq!(code(&o), 2);
    let cfg = tmp.path().join("run.txt");
    std::fs::write(&cfg, "train.lr = 1e30\ntrain.nan_retries = 0\n").unwrap();
    let o = train_mini(&corpus, &tmp.path().join("o2"), &["--config", p(&cfg)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));

    // Copy a training environment over a test one: the corpus now leaks.
    let records = read_manifest(corpus.join(MANIFEST_FILE)).unwrap();
    let noise = |s: Split| records.iter().find(|r| r.split == s && r.kind == RecordKind::Noise).unwrap();
    std::fs::copy(corpus.join(&noise(Split::Train).path), corpus.join(&noise(Split::Test).path)).unwrap();
    let o = train_mini(&corpus, &tmp.path().join("o3"), &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("split violation"));
}

#[test]
fn verify_and_help() {
    let o = run(&["verify", "--suite", "shapes"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("[PASS]")), "{stdout}");
    assert!(stdout.contains("(12, 101)"), "{stdout}");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let o = bin().args(["verify", "--suite", "metrics"]).env("NOISECOND_THREADS", "1").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(code(&run(&["--threads", "0", "verify", "--suite", "shapes"])), 2);
}
