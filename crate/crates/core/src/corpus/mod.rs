//! Speech and noise corpora with environment-disjoint splits.

mod manifest;
mod mix;
mod sample;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub use manifest::{load_corpus, read_manifest, write_corpus, write_manifest, RecordKind, ManifestRecord, MANIFEST_FILE};
pub use mix::{fit_noise, mix_at_snr, mix_components, realized_snr_db, Mixture};
pub use sample::{
    build_eval_set, sample_training_example, EvalPair, ExampleSampler, SampleSpec, TrainingExample,
};
pub use split::{assign_splits, SplitTable};
pub use synth::{synth_corpus, EnvKind, EnvSignature, SynthConfig, SynthCorpus};

/// SNRs used for mixing, in dB.
pub const STANDARD_SNRS: [f64; 6] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

/// Environment-only recording.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecording {
    pub id: String,
    pub waveform: Arc<Waveform>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechUtterance {
    pub id: String,
    pub waveform: Arc<Waveform>,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub speech: Vec<SpeechUtterance>,
    pub noise: Vec<NoiseRecording>,
}

impl Corpus {
    /// Checks that every id occurs once, which makes splits disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let ids = self
            .speech
            .iter()
            .map(|s| &s.id)
            .chain(self.noise.iter().map(|n| &n.id));
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    /// Rejects noise recordings whose samples appear verbatim in more than
    /// one split, which would leak an environment across the split boundary.
    pub fn check_split_discipline(&self) -> Result<()> {
        let mut seen: BTreeMap<[u8; 32], (&str, Split)> = BTreeMap::new();
        for n in &self.noise {
            let mut h = Sha256::new();
            for s in n.waveform.samples() {
                h.update(s.to_le_bytes());
            }
            let key: [u8; 32] = h.finalize().into();
            match seen.get(&key) {
                Some(&(other, split)) if split != n.split => {
                    return Err(Error::SplitViolation(format!(
                        "noise {} ({}) duplicates {other} ({})",
                        n.id,
                        n.split.as_str(),
                        split.as_str()
                    )));
                }
                Some(_) => {}
                None => {
                    seen.insert(key, (&n.id, n.split));
                }
            }
        }
        Ok(())
    }

    pub fn subset(&self, split: Split) -> Corpus {
        Corpus {
            speech: self.speech.iter().filter(|s| s.split == split).cloned().collect(),
            noise: self.noise.iter().filter(|n| n.split == split).cloned().collect(),
        }
    }

    pub fn noise_ids(&self, split: Split) -> BTreeSet<&str> {
        self.noise
            .iter()
            .filter(|n| n.split == split)
            .map(|n| n.id.as_str())
            .collect()
    }

    pub fn speech_ids(&self, split: Split) -> BTreeSet<&str> {
        self.speech
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty() && self.noise.is_empty()
    }
}
