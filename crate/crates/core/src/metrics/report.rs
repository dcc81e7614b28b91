//! Per-SNR evaluation of a model against the unprocessed noisy input.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lsd, seg_snr};
use crate::corpus::EvalPair;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::enhance_utterance;

/// Metric means over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seg_snr_db: f64,
    pub lsd: f64,
    pub count: usize,
}

/// One SNR condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    /// `None` for the overall row.
    pub snr_db: Option<f64>,
    pub model: MetricRow,
    pub noisy: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub speech_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub reason: String,
}

/// Metrics of one evaluated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub speech_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub seg_snr_db: f64,
    pub lsd: f64,
    pub noisy_seg_snr_db: f64,
    pub noisy_lsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Label for the model rows, e.g. the run name.
    pub method: String,
    pub config_hash: String,
    /// Identifier of the evaluated checkpoint, if known.
    pub checkpoint: Option<String>,
    /// Ascending by SNR.
    pub buckets: Vec<BucketRow>,
    pub overall: BucketRow,
    pub pairs: Vec<PairResult>,
    pub skipped: Vec<SkippedPair>,
}

fn mean_row<'a>(items: impl Iterator<Item = (f64, f64)> + 'a) -> MetricRow {
    let (mut s, mut l, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in items {
        s += a;
        l += b;
        n += 1;
    }
    let d = n.max(1) as f64;
    MetricRow { seg_snr_db: s / d, lsd: l / d, count: n }
}

fn bucket(snr_db: Option<f64>, pairs: &[&PairResult]) -> BucketRow {
    BucketRow {
        snr_db,
        model: mean_row(pairs.iter().map(|p| (p.seg_snr_db, p.lsd))),
        noisy: mean_row(pairs.iter().map(|p| (p.noisy_seg_snr_db, p.noisy_lsd))),
    }
}

fn evaluate_pair(model: &mut Model<f32>, pair: &EvalPair) -> Result<PairResult> {
    let enhanced = enhance_utterance(model, &pair.noisy, Some(&pair.noise_segment))?;
    Ok(PairResult {
        speech_id: pair.speech_id.clone(),
        noise_id: pair.noise_id.clone(),
        snr_db: pair.snr_db,
        seg_snr_db: seg_snr(&pair.clean, &enhanced)?,
        lsd: lsd(&pair.clean, &enhanced)?,
        noisy_seg_snr_db: seg_snr(&pair.clean, &pair.noisy)?,
        noisy_lsd: lsd(&pair.clean, &pair.noisy)?,
    })
}

fn pair_key(snr: f64, speech: &str, noise: &str) -> (u64, String, String) {
    let b = snr.to_bits();
    let ordered = if b >> 63 == 1 { !b } else { b | (1 << 63) };
    (ordered, speech.to_string(), noise.to_string())
}

/// Enhances every pair and aggregates SegSNR and LSD per SNR, alongside the
/// same metrics for the unprocessed noisy signal. Pairs that fail are listed
/// in `skipped`; the call fails only if every pair does.
pub fn evaluate(
    model: &Model<f32>,
    pairs: &[EvalPair],
    method: &str,
    checkpoint: Option<String>,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus("no evaluation pairs".into()));
    }
    let outcomes: Vec<(&EvalPair, Result<PairResult>)> = pairs
        .par_iter()
        .map_init(|| model.clone(), |m, p| (p, evaluate_pair(m, p)))
        .collect();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (pair, r) in outcomes {
        match r {
            Ok(r) => results.push(r),
            Err(e) => skipped.push(SkippedPair {
                speech_id: pair.speech_id.clone(),
                noise_id: pair.noise_id.clone(),
                snr_db: pair.snr_db,
                reason: e.to_string(),
            }),
        }
    }
    results.sort_by_key(|p| pair_key(p.snr_db, &p.speech_id, &p.noise_id));
    skipped.sort_by_key(|p| pair_key(p.snr_db, &p.speech_id, &p.noise_id));
    if results.is_empty() {
        return Err(Error::AllPairsFailed { count: skipped.len(), first: skipped[0].reason.clone() });
    }
    let mut buckets = Vec::new();
    let mut i = 0;
    while i < results.len() {
        let snr = results[i].snr_db;
        let group: Vec<&PairResult> = results[i..].iter().take_while(|p| p.snr_db == snr).collect();
        i += group.len();
        buckets.push(bucket(Some(snr), &group));
    }
    let all: Vec<&PairResult> = results.iter().collect();
    Ok(MetricsReport {
        method: method.to_string(),
        config_hash: model.config().hash(),
        checkpoint,
        overall: bucket(None, &all),
        buckets,
        pairs: results,
        skipped,
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Run { method: &'a str, config_hash: &'a str, checkpoint: Option<&'a str>, pairs: usize, skipped: usize },
    Bucket { method: &'a str, snr_db: Option<f64>, seg_snr_db: f64, lsd: f64, count: usize },
    Pair(&'a PairResult),
    Skipped(&'a SkippedPair),
}

pub const NOISY_METHOD: &str = "noisy";

impl MetricsReport {
    /// One JSON object per line: a run header, bucket rows for the noisy
    /// reference and the model (overall rows have `snr_db: null`), per-pair
    /// results and skipped pairs.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Run {
            method: &self.method,
            config_hash: &self.config_hash,
            checkpoint: self.checkpoint.as_deref(),
            pairs: self.pairs.len(),
            skipped: self.skipped.len(),
        }];
        for (method, pick) in [
            (NOISY_METHOD, (|b: &BucketRow| b.noisy) as fn(&BucketRow) -> MetricRow),
            (self.method.as_str(), |b: &BucketRow| b.model),
        ] {
            for b in self.buckets.iter().chain([&self.overall]) {
                let r = pick(b);
                lines.push(Line::Bucket { method, snr_db: b.snr_db, seg_snr_db: r.seg_snr_db, lsd: r.lsd, count: r.count });
            }
        }
        lines.extend(self.pairs.iter().map(Line::Pair));
        lines.extend(self.skipped.iter().map(Line::Skipped));
        lines.iter().map(|l| serde_json::to_string(l).expect("report serialises") + "\n").collect()
    }

    /// Plain-text table: one block per metric, one row per method, one
    /// column per SNR plus the overall mean.
    pub fn to_table(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.snr_buckets().iter().map(|s| format!("{s} dB")));
        header.push("overall".into());
        let label_w = self.method.len().max("Noisy speech".len()).max(header[0].len());
        let mut out = String::new();
        for (title, get) in [
            ("SegSNR (dB, higher is better)", (|r: &MetricRow| r.seg_snr_db) as fn(&MetricRow) -> f64),
            ("LSD (dB, lower is better)", |r: &MetricRow| r.lsd),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<label_w$}", header[0]);
            for h in &header[1..] {
                let _ = write!(out, " {h:>9}");
            }
            out.push('\n');
            for (label, model_row) in [("Noisy speech", false), (self.method.as_str(), true)] {
                let _ = write!(out, "{label:<label_w$}");
                for b in self.buckets.iter().chain([&self.overall]) {
                    let row = if model_row { &b.model } else { &b.noisy };
                    let _ = write!(out, " {:>9.3}", get(row));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{} pairs evaluated, {} skipped; config {}",
            self.pairs.len(),
            self.skipped.len(),
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        out
    }

    pub fn snr_buckets(&self) -> Vec<f64> {
        self.buckets.iter().filter_map(|b| b.snr_db).collect()
    }
}
