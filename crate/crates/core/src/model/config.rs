use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dsp::Framing;
use crate::error::{Error, Result};

/// Kernel, stride and output channels of one residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub channels: usize,
}

impl BlockSpec {
    pub const fn new(kernel: (usize, usize), stride: (usize, usize), channels: usize) -> Self {
        BlockSpec { kernel, stride, channels }
    }

    /// Spatial extent after this block under the same-ceil rule.
    pub fn out_extent(&self, (h, w): (usize, usize)) -> (usize, usize) {
        (h.div_ceil(self.stride.0), w.div_ceil(self.stride.1))
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}/{}x{}/{}",
            self.kernel.0, self.kernel.1, self.stride.0, self.stride.1, self.channels
        )
    }
}

fn pair(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once('x')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl FromStr for BlockSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("block {s:?} is not KHxKW/SHxSW/C"));
        let mut parts = s.trim().split('/');
        let (k, st, c) = (parts.next(), parts.next(), parts.next());
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(BlockSpec {
            kernel: k.and_then(pair).ok_or_else(bad)?,
            stride: st.and_then(pair).ok_or_else(bad)?,
            channels: c.and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Embedding subnetwork plus conditioned enhancement subnetwork.
    Conditioned,
    /// Fully-connected net fed a noisy crop and the time-averaged noise.
    NoiseAware,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Conditioned => "conditioned",
            Arch::NoiseAware => "noise_aware",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioned" => Ok(Arch::Conditioned),
            "noise_aware" => Ok(Arch::NoiseAware),
            _ => Err(Error::InvalidConfig(format!("unknown arch {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Noisy-segment frames `n`.
    pub context: usize,
    /// Noise-segment frames `r`.
    pub hint: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub freq_bins: usize,
    pub embed_dim: usize,
    pub emb_blocks: Vec<BlockSpec>,
    pub enh_blocks: Vec<BlockSpec>,
    pub loc_hidden: usize,
    pub use_noise_embedding: bool,
    pub baseline_frames: usize,
    pub baseline_hidden: usize,
    pub baseline_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

fn enh_plan(channels: [usize; 8]) -> Vec<BlockSpec> {
    (0..8)
        .map(|i| {
            let kernel = if i < 4 { (4, 4) } else { (3, 3) };
            let stride = if matches!(i, 2 | 4 | 6) { (2, 2) } else { (1, 1) };
            BlockSpec::new(kernel, stride, channels[i])
        })
        .collect()
}

fn emb_plan(channels: [usize; 4]) -> Vec<BlockSpec> {
    vec![
        BlockSpec::new((8, 4), (3, 2), channels[0]),
        BlockSpec::new((8, 4), (3, 2), channels[1]),
        BlockSpec::new((4, 4), (1, 1), channels[2]),
        BlockSpec::new((4, 4), (1, 2), channels[3]),
    ]
}

impl ModelConfig {
    /// Full-size configuration (200 x 201 context, 512-d embedding).
    pub fn full() -> Self {
        ModelConfig {
            arch: Arch::Conditioned,
            context: 200,
            hint: 35,
            frame_len: 400,
            hop: 160,
            freq_bins: 201,
            embed_dim: 512,
            emb_blocks: emb_plan([64, 128, 256, 512]),
            enh_blocks: enh_plan([64, 64, 128, 128, 256, 256, 512, 512]),
            loc_hidden: 50,
            use_noise_embedding: true,
            baseline_frames: 9,
            baseline_hidden: 512,
            baseline_layers: 3,
        }
    }

    /// Reduced widths and context for CPU runs.
    pub fn desk() -> Self {
        ModelConfig {
            context: 48,
            hint: 16,
            embed_dim: 64,
            emb_blocks: emb_plan([16, 32, 64, 64]),
            enh_blocks: enh_plan([16, 16, 32, 32, 64, 64, 128, 128]),
            ..Self::full()
        }
    }

    /// Tiny configuration on 32-sample frames (17 bins) for gradient checks.
    pub fn miniature() -> Self {
        ModelConfig {
            context: 12,
            hint: 8,
            frame_len: 32,
            hop: 16,
            freq_bins: 17,
            embed_dim: 8,
            emb_blocks: emb_plan([4, 4, 8, 8]),
            enh_blocks: enh_plan([4, 4, 4, 4, 8, 8, 8, 8]),
            loc_hidden: 8,
            baseline_hidden: 16,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "miniature" => Ok(Self::miniature()),
            _ => Err(Error::InvalidConfig(format!("unknown model preset {name:?}"))),
        }
    }

    pub fn framing(&self) -> Result<Framing> {
        Framing::new(self.frame_len, self.hop)
    }

    pub fn central(&self) -> usize {
        self.context / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.framing()?;
        if self.freq_bins != self.frame_len / 2 + 1 {
            return bad(format!(
                "freq_bins {} does not match frame_len {}",
                self.freq_bins, self.frame_len
            ));
        }
        for (k, v) in [
            ("context", self.context),
            ("hint", self.hint),
            ("embed_dim", self.embed_dim),
            ("loc_hidden", self.loc_hidden),
            ("baseline_frames", self.baseline_frames),
            ("baseline_hidden", self.baseline_hidden),
            ("baseline_layers", self.baseline_layers),
        ] {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if self.baseline_frames > self.context {
            return bad("baseline_frames exceeds context".into());
        }
        for (name, blocks) in [("emb_blocks", &self.emb_blocks), ("enh_blocks", &self.enh_blocks)] {
            if blocks.is_empty() {
                return bad(format!("{name} is empty"));
            }
            for b in blocks.iter() {
                if [b.kernel.0, b.kernel.1, b.stride.0, b.stride.1, b.channels].contains(&0) {
                    return bad(format!("{name} has a zero extent in {b}"));
                }
            }
            if blocks.windows(2).any(|w| w[1].channels < w[0].channels) {
                return bad(format!("{name} channel plan decreases"));
            }
        }
        if !self.enh_blocks.len().is_multiple_of(2) {
            return bad("enh_blocks needs an even number of blocks".into());
        }
        if self.emb_blocks.last().unwrap().channels != self.embed_dim {
            return bad(format!(
                "embed_dim {} differs from the last embedding block's {} channels",
                self.embed_dim,
                self.emb_blocks.last().unwrap().channels
            ));
        }
        Ok(())
    }

    fn trace(blocks: &[BlockSpec], input: (usize, usize)) -> Vec<(usize, usize)> {
        let mut out = vec![input];
        for b in blocks {
            out.push(b.out_extent(*out.last().unwrap()));
        }
        out
    }

    /// Spatial extents from the noise-segment input through every embedding block.
    pub fn embedding_trace(&self) -> Vec<(usize, usize)> {
        Self::trace(&self.emb_blocks, (self.hint, self.freq_bins))
    }

    /// Spatial extents from the noisy-segment input through every enhancement block.
    pub fn enhancement_trace(&self) -> Vec<(usize, usize)> {
        Self::trace(&self.enh_blocks, (self.context, self.freq_bins))
    }

    pub fn flatten_width(&self) -> usize {
        let (h, w) = *self.enhancement_trace().last().unwrap();
        h * w * self.enh_blocks.last().unwrap().channels
    }

    /// Canonical `key = value` text; the config hash is taken over it.
    pub fn to_kv(&self) -> String {
        let blocks = |b: &[BlockSpec]| b.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        for (k, v) in [
            ("arch", self.arch.as_str().to_string()),
            ("context", self.context.to_string()),
            ("hint", self.hint.to_string()),
            ("frame_len", self.frame_len.to_string()),
            ("hop", self.hop.to_string()),
            ("freq_bins", self.freq_bins.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("emb_blocks", blocks(&self.emb_blocks)),
            ("enh_blocks", blocks(&self.enh_blocks)),
            ("loc_hidden", self.loc_hidden.to_string()),
            ("use_noise_embedding", self.use_noise_embedding.to_string()),
            ("baseline_frames", self.baseline_frames.to_string()),
            ("baseline_hidden", self.baseline_hidden.to_string()),
            ("baseline_layers", self.baseline_layers.to_string()),
        ] {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub const KEYS: [&'static str; 14] = [
        "arch",
        "context",
        "hint",
        "frame_len",
        "hop",
        "freq_bins",
        "embed_dim",
        "emb_blocks",
        "enh_blocks",
        "loc_hidden",
        "use_noise_embedding",
        "baseline_frames",
        "baseline_hidden",
        "baseline_layers",
    ];

    /// Sets one field from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{key}: {value:?} is not a non-negative integer")))
        };
        let blocks = || -> Result<Vec<BlockSpec>> { value.split(',').map(str::parse).collect() };
        match key {
            "arch" => self.arch = value.parse()?,
            "context" => self.context = num()?,
            "hint" => self.hint = num()?,
            "frame_len" => self.frame_len = num()?,
            "hop" => self.hop = num()?,
            "freq_bins" => self.freq_bins = num()?,
            "embed_dim" => self.embed_dim = num()?,
            "emb_blocks" => self.emb_blocks = blocks()?,
            "enh_blocks" => self.enh_blocks = blocks()?,
            "loc_hidden" => self.loc_hidden = num()?,
            "use_noise_embedding" => {
                self.use_noise_embedding = value
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: {value:?} is not true/false")))?
            }
            "baseline_frames" => self.baseline_frames = num()?,
            "baseline_hidden" => self.baseline_hidden = num()?,
            "baseline_layers" => self.baseline_layers = num()?,
            _ => return Err(Error::InvalidConfig(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Parses canonical text as written by [`ModelConfig::to_kv`]; every key
    /// must be present exactly once.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::full();
        let mut seen = Vec::new();
        for (k, v) in parse_kv_lines(text)? {
            if seen.contains(&k) {
                return Err(Error::InvalidConfig(format!("duplicate key {k:?}")));
            }
            cfg.set(&k, &v)?;
            seen.push(k);
        }
        if let Some(missing) = Self::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(Error::InvalidConfig(format!("missing key {missing:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(self.to_kv().as_bytes()).into()
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_size_traces() {
        let c = ModelConfig::full();
        c.validate().unwrap();
        assert_eq!(c.embedding_trace(), vec![(35, 201), (12, 101), (4, 51), (4, 51), (4, 26)]);
        assert_eq!(
            c.enhancement_trace(),
            vec![(200, 201), (200, 201), (200, 201), (100, 101), (100, 101), (50, 51), (50, 51), (25, 26), (25, 26)]
        );
        assert_eq!(c.flatten_width(), 332_800);
    }

    #[test]
    fn presets_validate() {
        for name in ["full", "desk", "miniature"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn kv_round_trip_and_hash() {
        let c = ModelConfig::miniature();
        let back = ModelConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.use_noise_embedding = false;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk();
        c.freq_bins = 200;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.enh_blocks.pop();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.enh_blocks[1].channels = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.embed_dim = 7;
        assert!(c.validate().is_err());
        assert!(ModelConfig::from_kv("arch = conditioned\n").is_err());
        assert!(ModelConfig::desk().set("bogus", "1").is_err());
        assert!("8x4/3x2".parse::<BlockSpec>().is_err());
    }

    proptest! {
        #[test]
        #[allow(clippy::manual_div_ceil)]
        fn trace_follows_ceil_rule(h in 1usize..300, w in 1usize..300, sh in 1usize..4, sw in 1usize..4) {
            let b = BlockSpec::new((3, 3), (sh, sw), 4);
            let (oh, ow) = b.out_extent((h, w));
            prop_assert_eq!(oh, (h + sh - 1) / sh);
            prop_assert_eq!(ow, (w + sw - 1) / sw);
            prop_assert!(oh * sh >= h && (oh - 1) * sh < h);
        }
    }
}
