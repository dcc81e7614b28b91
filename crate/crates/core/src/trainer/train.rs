//! Minibatch SGD on the frame-level squared error with validation-based
//! model selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use noisecond_autodiff::{sgd_step, Mode};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint};
use crate::corpus::{Corpus, ExampleSampler, SampleSpec, Split, TrainingExample, STANDARD_SNRS};
use crate::error::{Error, Result};
use crate::model::{Inputs, Model, ModelConfig};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TIMINGS_LOG: &str = "timings.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Validation period in steps; the last step is always evaluated.
    pub eval_every: u64,
    /// Size of the fixed validation set.
    pub val_examples: usize,
    pub snrs: Vec<f64>,
    /// How many times a non-finite loss restarts training at half the rate.
    pub nan_retries: u32,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 0.1,
            batch_size: 32,
            steps: 1000,
            seed: 0,
            eval_every: 100,
            val_examples: 64,
            snrs: STANDARD_SNRS.to_vec(),
            nan_retries: 3,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be at least 2 for batch statistics, got {}",
                self.batch_size
            )));
        }
        if self.steps == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("steps and eval_every must be positive".into()));
        }
        if self.snrs.is_empty() || self.snrs.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snrs must be a nonempty list of finite values".into()));
        }
        Ok(())
    }

    pub fn sample_spec(&self) -> Result<SampleSpec> {
        SampleSpec::new(self.model.framing()?, self.model.context, self.model.hint)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        train_loss: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_loss: Option<f64>,
    },
    /// A non-finite loss stopped the run, which restarts at `retry_lr`.
    NanAbort { step: u64, lr: f64, retry_lr: Option<f64> },
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialise")
    }
}

/// Where training batches come from.
#[derive(Debug, Clone)]
pub enum TrainData {
    /// A fresh random example for every batch slot.
    Sampler(ExampleSampler),
    /// A fixed set visited in reshuffled epochs.
    Fixed(Vec<TrainingExample>),
}

struct Batches<'a> {
    data: &'a TrainData,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Batches<'a> {
    fn new(data: &'a TrainData, seed: u64) -> Self {
        Batches { data, rng: ChaCha8Rng::seed_from_u64(seed), order: Vec::new(), cursor: 0 }
    }

    fn next(&mut self, size: usize) -> Result<Vec<TrainingExample>> {
        match self.data {
            TrainData::Sampler(s) => s.sample_many(size, &mut self.rng),
            TrainData::Fixed(all) if all.len() <= size => Ok(all.clone()),
            TrainData::Fixed(all) => {
                let mut out = Vec::with_capacity(size);
                while out.len() < size {
                    if self.cursor == self.order.len() {
                        self.order = (0..all.len()).collect();
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    out.push(all[self.order[self.cursor]].clone());
                    self.cursor += 1;
                }
                Ok(out)
            }
        }
    }
}

/// A model plus the plain SGD update.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    lr: f32,
    step: u64,
}

impl Trainer {
    /// `lr` may be zero here, which leaves parameters untouched.
    pub fn new(model: Model<f32>, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be finite and non-negative, got {lr}")));
        }
        Ok(Trainer { model, lr: lr as f32, step: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One forward/backward/update on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[TrainingExample]) -> Result<f64> {
        let (inputs, target) = Inputs::from_examples(batch)?;
        self.step += 1;
        let (loss, grads) = self.model.loss_and_grads(&inputs, &target, Mode::Train)?;
        if !loss.is_finite() || grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericFailure { step: self.step, detail: format!("train loss {loss}") });
        }
        self.model.params.zero_grad();
        self.model.params.accumulate(&grads);
        sgd_step(&mut self.model.params, self.lr)?;
        Ok(loss as f64)
    }
}

/// Mean eval-mode loss over `examples`, in chunks of `chunk`.
pub fn validation_loss(model: &mut Model<f32>, examples: &[TrainingExample], chunk: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no validation examples".into()));
    }
    let mut total = 0.0;
    for part in examples.chunks(chunk.max(1)) {
        let (inputs, target) = Inputs::from_examples(part)?;
        total += model.loss(&inputs, &target, Mode::Eval)? as f64 * part.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation loss among evaluated steps.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRecord>,
    /// Learning rate of the run that finished.
    pub lr: f64,
}

impl TrainOutcome {
    pub fn train_losses(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { train_loss, .. } => Some(*train_loss),
                LogRecord::NanAbort { .. } => None,
            })
            .collect()
    }
}

/// Trains on the corpus's train split, validating on a fixed sample of its
/// validation split.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    cfg.validate()?;
    corpus.validate()?;
    corpus.check_split_discipline()?;
    let spec = cfg.sample_spec()?;
    let sampler = ExampleSampler::new(&corpus.subset(Split::Train), &cfg.snrs, spec)?;
    let val_sampler = ExampleSampler::new(&corpus.subset(Split::Valid), &cfg.snrs, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7661_6c69_6461_7465);
    let val = val_sampler.sample_many(cfg.val_examples, &mut rng)?;
    train_with_data(cfg, &TrainData::Sampler(sampler), &val)
}

struct Sinks {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    timings: Option<BufWriter<File>>,
    started: Instant,
}

impl Sinks {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let create = |d: &Path, name: &str| -> Result<BufWriter<File>> {
            let p = d.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        };
        let (log, timings) = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                (Some(create(d, TRAIN_LOG)?), Some(create(d, TIMINGS_LOG)?))
            }
            None => (None, None),
        };
        Ok(Sinks { dir: dir.map(Path::to_path_buf), log, timings, started: Instant::now() })
    }

    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        if let (Some(w), Some(d)) = (&mut self.log, &self.dir) {
            writeln!(w, "{}", rec.to_line()).and_then(|_| w.flush()).map_err(|e| Error::io(d.join(TRAIN_LOG), e))?;
        }
        if let (Some(w), Some(d), LogRecord::Step { step, .. }) = (&mut self.timings, &self.dir, rec) {
            let ms = self.started.elapsed().as_secs_f64() * 1e3;
            writeln!(w, "{{\"step\":{step},\"wall_ms\":{ms:.3}}}").map_err(|e| Error::io(d.join(TIMINGS_LOG), e))?;
        }
        Ok(())
    }

    fn save(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        match &self.dir {
            Some(d) => save_checkpoint(ckpt, d.join(name)),
            None => Ok(()),
        }
    }

    fn finish(&mut self) -> Result<()> {
        if let (Some(w), Some(d)) = (&mut self.timings, &self.dir) {
            w.flush().map_err(|e| Error::io(d.join(TIMINGS_LOG), e))?;
        }
        Ok(())
    }
}

/// Trains from an explicit data source. With an empty validation set every
/// evaluation point keeps the latest model.
pub fn train_with_data(cfg: &TrainConfig, data: &TrainData, val: &[TrainingExample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let TrainData::Fixed(v) = data {
        if v.len() < 2 {
            return Err(Error::EmptyCorpus("need at least two fixed training examples".into()));
        }
    }
    let mut sinks = Sinks::open(cfg.checkpoint_dir.as_deref())?;
    let mut log = Vec::new();
    let mut lr = cfg.lr;
    let mut attempt = 0;
    loop {
        match run(cfg, data, val, lr, &mut log, &mut sinks) {
            Ok((best, last)) => {
                sinks.finish()?;
                return Ok(TrainOutcome { best, last, log, lr });
            }
            Err(Error::NumericFailure { step, detail }) => {
                let retry = (attempt < cfg.nan_retries).then_some(lr / 2.0);
                let rec = LogRecord::NanAbort { step, lr, retry_lr: retry };
                sinks.record(&rec)?;
                log.push(rec);
                match retry {
                    Some(next) => {
                        lr = next;
                        attempt += 1;
                    }
                    None => {
                        sinks.finish()?;
                        return Err(Error::NumericFailure { step, detail });
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn run(
    cfg: &TrainConfig,
    data: &TrainData,
    val: &[TrainingExample],
    lr: f64,
    log: &mut Vec<LogRecord>,
    sinks: &mut Sinks,
) -> Result<(Checkpoint, Checkpoint)> {
    let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, lr)?;
    let mut batches = Batches::new(data, cfg.seed.wrapping_add(1));
    let mut best: Option<Checkpoint> = None;
    for step in 1..=cfg.steps {
        let batch = batches.next(cfg.batch_size)?;
        let train_loss = trainer.step(&batch)?;
        let mut val_loss = None;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let l = if val.is_empty() { None } else { Some(validation_loss(&mut trainer.model, val, cfg.batch_size)?) };
            if let Some(v) = l {
                if !v.is_finite() {
                    return Err(Error::NumericFailure { step, detail: format!("validation loss {v}") });
                }
            }
            let improves = match (&best, l) {
                (None, _) | (_, None) => true,
                (Some(b), Some(v)) => b.val_loss.is_none_or(|bv| v < bv),
            };
            if improves {
                let ckpt = Checkpoint::new(trainer.model.clone(), step, l);
                sinks.save(BEST_CHECKPOINT, &ckpt)?;
                best = Some(ckpt);
            }
            val_loss = l;
        }
        let rec = LogRecord::Step { step, train_loss, val_loss };
        sinks.record(&rec)?;
        log.push(rec);
    }
    let last = Checkpoint::new(trainer.model, cfg.steps, log.iter().rev().find_map(|r| match r {
        LogRecord::Step { val_loss, .. } => *val_loss,
        LogRecord::NanAbort { .. } => None,
    }));
    sinks.save(LAST_CHECKPOINT, &last)?;
    Ok((best.expect("the last step is always evaluated"), last))
}
