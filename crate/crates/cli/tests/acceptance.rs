//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.
//!
//! Runs without the libtest harness so the lines reach the terminal under a
//! plain `cargo test`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use noisecond_core::corpus::{
    build_eval_set, mix_components, realized_snr_db, synth_corpus, write_corpus, Corpus, EnvKind, ExampleSampler,
    SampleSpec, Split, SynthConfig, STANDARD_SNRS,
};
use noisecond_core::dsp::Waveform;
use noisecond_core::metrics::evaluate;
use noisecond_core::model::{Model, ModelConfig};
use noisecond_core::trainer::{
    enhance_utterance, train, train_with_data, validation_loss, Checkpoint, TrainConfig, TrainData, BEST_CHECKPOINT,
    LAST_CHECKPOINT, TRAIN_LOG,
};
use noisecond_core::verify::{self, rel_rms, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

/// Training budget shared by the two directional experiments.
const EXPERIMENT_STEPS: u64 = 3000;
const EXPERIMENT_BATCH: usize = 32;
const EXPERIMENT_SEEDS: [u64; 3] = [0, 1, 2];
const CORPUS_SEED: u64 = 7;
const TEST_EXAMPLES: usize = 256;

struct Gate {
    results: Vec<bool>,
}

impl Gate {
    fn run(&mut self, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = f();
        let elapsed = started.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= limit;
        let passed = ok && in_time;
        let timing = format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs());
        let late = if in_time { "" } else { " [over time limit]" };
        println!("{} criterion {id:>2} {name} ({timing}){late}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.results.push(passed);
    }
}

fn checks(suite: Suite) -> Outcome {
    let checks = verify::run(suite)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.line()).collect();
    let detail = if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        failed.join("; ")
    };
    Ok((failed.is_empty() && !checks.is_empty(), detail))
}

fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    Waveform::from_samples((0..len).map(|_| rng.random_range(-0.9f32..0.9)).collect()).expect("finite samples")
}

fn snr_mixing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(800..4_000);
        let speech = random_wave(len, &mut rng);
        let noise = random_wave(len, &mut rng);
        for snr in STANDARD_SNRS {
            let m = mix_components(&speech, &noise, snr)?;
            worst = worst.max((realized_snr_db(speech.samples(), &m.scaled_noise) - snr).abs());
        }
    }
    Ok((worst < 1e-6, format!("worst |realized - target| = {worst:.2e} dB over 600 mixtures")))
}

fn small_corpus(environments: usize, utterances: usize, seed: u64) -> noisecond_core::Result<Corpus> {
    let cfg = SynthConfig { environments, utterances, speech_secs: 0.5, noise_secs: 1.0, ..SynthConfig::default() };
    Ok(synth_corpus(&cfg, seed)?.corpus)
}

fn identity_model() -> Outcome {
    let mut model = Model::<f32>::new(ModelConfig::miniature(), 5)?;
    model.zero_output_layer();
    let ckpt = Checkpoint::from_bytes(&Checkpoint::new(model, 0, None).to_bytes())?;
    let corpus = small_corpus(10, 60, 5)?;
    let test = corpus.subset(Split::Test);
    let cfg = ckpt.config();
    let spec = SampleSpec::new(cfg.framing()?, cfg.context, cfg.hint)?;
    let pairs = build_eval_set(&test.speech, &test.noise, &STANDARD_SNRS, &spec, 1)?;
    let mut model = ckpt.model.clone();
    let mut worst_wave: f64 = 0.0;
    for p in &pairs {
        let out = enhance_utterance(&mut model, &p.noisy, Some(&p.noise_segment))?;
        worst_wave = worst_wave.max(rel_rms(out.samples(), p.noisy.samples(), 0..p.noisy.len()));
    }
    let report = evaluate(&ckpt.model, &pairs, "identity", None)?;
    let rows = report.buckets.iter().chain(std::iter::once(&report.overall));
    let worst_row = rows
        .map(|b| (b.model.seg_snr_db - b.noisy.seg_snr_db).abs().max((b.model.lsd - b.noisy.lsd).abs()))
        .fold(0.0f64, f64::max);
    let ok = worst_wave < 1e-3 && worst_row < 1e-3 && !pairs.is_empty();
    Ok((ok, format!("{} utterances, worst rel RMS {worst_wave:.2e}, worst metric row gap {worst_row:.2e}", pairs.len())))
}

fn overfit_probe() -> Outcome {
    let corpus = small_corpus(10, 40, 6)?;
    let cfg = TrainConfig {
        model: ModelConfig::miniature(),
        lr: 0.1,
        batch_size: 16,
        steps: 2000,
        eval_every: 2000,
        seed: 3,
        ..TrainConfig::default()
    };
    let sampler = ExampleSampler::new(&corpus.subset(Split::Train), &cfg.snrs, cfg.sample_spec()?)?;
    let fixed = sampler.sample_many(16, &mut ChaCha8Rng::seed_from_u64(8))?;
    let out = train_with_data(&cfg, &TrainData::Fixed(fixed), &[])?;
    let losses = out.train_losses();
    let initial = losses[0];
    let hit = losses.iter().position(|&l| l < 0.1 * initial);
    let detail = match hit {
        Some(i) => format!("loss {initial:.4} fell below 10% at step {} (lr {})", i + 1, out.lr),
        None => format!("loss {initial:.4} -> {:.4} after {} steps", losses[losses.len() - 1], losses.len()),
    };
    Ok((hit.is_some(), detail))
}

/// Held-out scores of one trained model.
#[derive(Clone, Copy)]
struct Score {
    mse: f64,
    lsd: f64,
}

/// The tone corpus of the two directional experiments: 64 training, 16
/// validation and 16 test environments.
struct ToneBench {
    corpus: Corpus,
    test_examples: Vec<noisecond_core::corpus::TrainingExample>,
    test_pairs: Vec<noisecond_core::corpus::EvalPair>,
    runs: BTreeMap<(usize, bool, u64), (Score, Duration)>,
}

impl ToneBench {
    fn new() -> noisecond_core::Result<Self> {
        let syn = SynthConfig {
            environments: 96,
            utterances: 120,
            env_kind: EnvKind::Tones,
            noise_ratios: (64.0 / 96.0, 16.0 / 96.0, 16.0 / 96.0),
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&syn, CORPUS_SEED)?.corpus;
        let mini = ModelConfig::miniature();
        let spec = SampleSpec::new(mini.framing()?, mini.context, mini.hint)?;
        let test = corpus.subset(Split::Test);
        let sampler = ExampleSampler::new(&test, &STANDARD_SNRS, spec)?;
        let test_examples = sampler.sample_many(TEST_EXAMPLES, &mut ChaCha8Rng::seed_from_u64(99))?;
        let test_pairs = build_eval_set(&test.speech, &test.noise, &STANDARD_SNRS, &spec, 5)?;
        Ok(ToneBench { corpus, test_examples, test_pairs, runs: BTreeMap::new() })
    }

    /// Corpus restricted to the first `envs` training environments.
    fn with_train_envs(&self, envs: usize) -> Corpus {
        let mut c = self.corpus.clone();
        let mut kept = 0;
        c.noise.retain(|n| {
            if n.split != Split::Train {
                return true;
            }
            kept += 1;
            kept <= envs
        });
        c
    }

    fn score(&mut self, envs: usize, embedding: bool, seed: u64) -> noisecond_core::Result<(Score, Duration)> {
        if let Some(hit) = self.runs.get(&(envs, embedding, seed)) {
            return Ok(*hit);
        }
        let started = Instant::now();
        let cfg = TrainConfig {
            model: ModelConfig { use_noise_embedding: embedding, ..ModelConfig::miniature() },
            batch_size: EXPERIMENT_BATCH,
            steps: EXPERIMENT_STEPS,
            eval_every: EXPERIMENT_STEPS / 5,
            val_examples: 64,
            seed,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &self.with_train_envs(envs))?;
        let mut model = out.best.model;
        let mse = validation_loss(&mut model, &self.test_examples, 64)?;
        let lsd = evaluate(&model, &self.test_pairs, "run", None)?.overall.model.lsd;
        let hit = (Score { mse, lsd }, started.elapsed());
        self.runs.insert((envs, embedding, seed), hit);
        Ok(hit)
    }

    /// Median scores over the seed set, with the summed training time.
    fn median(&mut self, envs: usize, embedding: bool) -> noisecond_core::Result<(Score, Duration)> {
        let mut scores = Vec::new();
        let mut spent = Duration::ZERO;
        for seed in EXPERIMENT_SEEDS {
            let (s, t) = self.score(envs, embedding, seed)?;
            scores.push(s);
            spent += t;
        }
        let med = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        Ok((
            Score { mse: med(scores.iter().map(|s| s.mse).collect()), lsd: med(scores.iter().map(|s| s.lsd).collect()) },
            spent,
        ))
    }
}

fn conditioning(bench: &mut ToneBench) -> Outcome {
    let (emb, _) = bench.median(64, true)?;
    let (plain, _) = bench.median(64, false)?;
    let ok = emb.mse < plain.mse && emb.lsd < plain.lsd;
    Ok((
        ok,
        format!(
            "median test MSE {:.4} vs {:.4}, median LSD {:.3} vs {:.3} (embedding vs none)",
            emb.mse, plain.mse, emb.lsd, plain.lsd
        ),
    ))
}

fn environment_trend(bench: &mut ToneBench) -> Outcome {
    let (many, reused) = bench.median(64, false)?;
    let (few, _) = bench.median(8, false)?;
    Ok((
        many.lsd <= few.lsd,
        format!(
            "median held-out LSD {:.3} with 64 environments vs {:.3} with 8 (64-environment runs reused, {:.0}s)",
            many.lsd,
            few.lsd,
            reused.as_secs_f64()
        ),
    ))
}

fn train_cli(corpus: &Path, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let status = Command::new(env!("CARGO_BIN_EXE_noisecond"))
        .args(["--threads", "1", "train", "--preset", "miniature", "--steps", "150", "--seed", "4"])
        .args(["--set", "train.batch_size=8", "--set", "train.eval_every=50", "--set", "train.val_examples=16"])
        .arg("--corpus")
        .arg(corpus)
        .arg("--out")
        .arg(out)
        .status()?;
    if !status.success() {
        return Err(format!("train exited with {status}").into());
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let corpus_dir = tmp.path().join("corpus");
    write_corpus(&corpus_dir, &small_corpus(10, 40, 9)?)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_cli(&corpus_dir, &a)?;
    train_cli(&corpus_dir, &b)?;
    let mut differing = Vec::new();
    for name in [BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG, "run_config.txt"] {
        if std::fs::read(a.join(name))? != std::fs::read(b.join(name))? {
            differing.push(name);
        }
    }
    let detail = if differing.is_empty() {
        "checkpoints, training log and run config byte-identical".to_string()
    } else {
        format!("differing files: {differing:?}")
    };
    Ok((differing.is_empty(), detail))
}

fn main() {
    // `cargo test -- <filter>` and `--list` pass arguments; honour a list
    // request and otherwise run everything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut gate = Gate { results: Vec::new() };
    let secs = Duration::from_secs;
    gate.run(1, "gradient correctness", secs(120), || checks(Suite::Gradcheck));
    gate.run(2, "shape fidelity", secs(10), || checks(Suite::Shapes));
    gate.run(3, "DSP round trip", secs(30), || checks(Suite::Dsp));
    gate.run(4, "SNR mixing exactness", secs(10), snr_mixing);
    gate.run(5, "identity model end to end", secs(60), identity_model);
    gate.run(6, "overfit probe", secs(600), overfit_probe);
    let mut bench = None;
    gate.run(7, "conditioning efficacy", secs(3600), || {
        let b = bench.insert(ToneBench::new()?);
        conditioning(b)
    });
    gate.run(8, "environment-count trend", secs(3600), || match bench.as_mut() {
        Some(b) => environment_trend(b),
        None => environment_trend(bench.insert(ToneBench::new()?)),
    });
    gate.run(9, "metric sanity", secs(30), || checks(Suite::Metrics));
    gate.run(10, "determinism", secs(600), determinism);
    let passed = gate.results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed} of {} criteria passed", gate.results.len());
    if passed != gate.results.len() {
        std::process::exit(1);
    }
}
