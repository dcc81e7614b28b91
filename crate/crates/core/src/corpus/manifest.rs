use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Corpus, NoiseRecording, SpeechUtterance, Split};
use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Speech,
    Noise,
}

/// One manifest line. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    pub kind: RecordKind,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records serialise");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `speech/<id>.wav`, `noise/<id>.wav` and the manifest under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    corpus.validate()?;
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(corpus.speech.len() + corpus.noise.len());
    for sub in ["speech", "noise"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for s in &corpus.speech {
        let rel = PathBuf::from("speech").join(format!("{}.wav", s.id));
        write_wav(dir.join(&rel), &s.waveform)?;
        records.push(ManifestRecord { id: s.id.clone(), path: rel, split: s.split, kind: RecordKind::Speech });
    }
    for n in &corpus.noise {
        let rel = PathBuf::from("noise").join(format!("{}.wav", n.id));
        write_wav(dir.join(&rel), &n.waveform)?;
        records.push(ManifestRecord { id: n.id.clone(), path: rel, split: n.split, kind: RecordKind::Noise });
    }
    write_manifest(dir.join(MANIFEST_FILE), &records)
}

/// Reads the manifest in `dir` and every file it names, checking that ids are
/// unique so the splits are disjoint.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let records = read_manifest(dir.join(MANIFEST_FILE))?;
    let mut corpus = Corpus::default();
    for r in records {
        let waveform = Arc::new(read_wav(dir.join(&r.path))?);
        match r.kind {
            RecordKind::Speech => corpus.speech.push(SpeechUtterance { id: r.id, waveform, split: r.split }),
            RecordKind::Noise => corpus.noise.push(NoiseRecording { id: r.id, waveform, split: r.split }),
        }
    }
    corpus.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!("{} lists no recordings", dir.display())));
    }
    Ok(corpus)
}
