//! Datasets, synthetic generators, and JSONL persistence.
//!
//! Line formats:
//!
//! ```text
//! seqclass   {"tokens": [int, ...], "label": int}
//! seqlabel   {"tokens": [int, ...], "targets": [int, ...]}
//! pianoroll  {"n_v": int, "frames": [[0|1, ...], ...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::hex;
use crate::seed;
use crate::tensor::Vector;

/// A token sequence with either one target per token or a single label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
}

impl SequenceSample {
    pub fn classification(tokens: Vec<usize>, label: usize) -> Self {
        SequenceSample {
            tokens,
            targets: vec![label],
        }
    }

    pub fn labelled(tokens: Vec<usize>, targets: Vec<usize>) -> Self {
        SequenceSample { tokens, targets }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The class label, for single-target samples.
    pub fn label(&self) -> Option<usize> {
        match self.targets.as_slice() {
            [l] => Some(*l),
            _ => None,
        }
    }
}

/// Binary piano-roll slices, one vector of 0/1 values per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Vec<Vector>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Vector>) -> Self {
        FrameSequence { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    /// Split into consecutive groups of `batch` frames; the last group may be shorter.
    pub fn chunks(&self, batch: usize) -> Vec<FrameSequence> {
        self.frames
            .chunks(batch.max(1))
            .map(|c| FrameSequence::new(c.to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    SeqClass,
    SeqLabel,
    PianoRoll,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seqclass" => Ok(DatasetKind::SeqClass),
            "seqlabel" => Ok(DatasetKind::SeqLabel),
            "pianoroll" => Ok(DatasetKind::PianoRoll),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::SeqClass => "seqclass",
            DatasetKind::SeqLabel => "seqlabel",
            DatasetKind::PianoRoll => "pianoroll",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    SeqClass(Vec<SequenceSample>),
    SeqLabel(Vec<SequenceSample>),
    PianoRoll { n_v: usize, seqs: Vec<FrameSequence> },
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::SeqClass(_) => DatasetKind::SeqClass,
            Dataset::SeqLabel(_) => DatasetKind::SeqLabel,
            Dataset::PianoRoll { .. } => DatasetKind::PianoRoll,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::SeqClass(s) | Dataset::SeqLabel(s) => s.len(),
            Dataset::PianoRoll { seqs, .. } => seqs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sequences(&self) -> Option<&[SequenceSample]> {
        match self {
            Dataset::SeqClass(s) | Dataset::SeqLabel(s) => Some(s),
            Dataset::PianoRoll { .. } => None,
        }
    }

    pub fn frames(&self) -> Option<&[FrameSequence]> {
        match self {
            Dataset::PianoRoll { seqs, .. } => Some(seqs),
            _ => None,
        }
    }

    /// Smallest vocabulary covering every token and target.
    pub fn vocab(&self) -> usize {
        self.sequences().map_or(0, |seqs| {
            seqs.iter()
                .flat_map(|s| s.tokens.iter().chain(&s.targets))
                .max()
                .map_or(0, |m| m + 1)
        })
    }

    /// Number of distinct labels needed (max label + 1) for classification sets.
    pub fn classes(&self) -> usize {
        match self {
            Dataset::SeqClass(s) => s.iter().flat_map(|x| x.targets.iter()).max().map_or(0, |m| m + 1),
            _ => 0,
        }
    }

    /// Regroup piano-roll sequences into `batch`-frame training samples.
    pub fn chunked(&self, batch: usize) -> Dataset {
        match self {
            Dataset::PianoRoll { n_v, seqs } => Dataset::PianoRoll {
                n_v: *n_v,
                seqs: seqs.iter().flat_map(|s| s.chunks(batch)).collect(),
            },
            other => other.clone(),
        }
    }
}

/// Describes how a dataset came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_v: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Indices of samples built to be hard (synthetic seqclass only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hard_indices: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Generators

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqClassConfig {
    pub n: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SeqClassConfig {
    fn default() -> Self {
        SeqClassConfig {
            n: 200,
            vocab: 50,
            min_len: 8,
            max_len: 16,
            hard_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Tokens `0` and `1` mark the label; the rest of the vocabulary is split
/// evenly into a common band and a rare band.
fn token_bands(vocab: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let split = 2 + (vocab - 2) / 2;
    (2..split, split..vocab)
}

/// The half of the rare band associated with `label`. A one-token band is
/// shared by both labels.
fn rare_half(rare: &std::ops::Range<usize>, label: usize) -> std::ops::Range<usize> {
    if rare.len() < 2 {
        return rare.clone();
    }
    let cut = rare.start + rare.len() / 2;
    if label == 0 {
        rare.start..cut
    } else {
        cut..rare.end
    }
}

/// Binary sequence classification with a difficulty knob.
///
/// Easy samples have lengths in `[min_len, mid]`, start with their label
/// marker, and continue with distinct common tokens. Hard samples have
/// lengths in `[mid, max_len]` and repeat one rare token; the label is the
/// half of the rare band that token comes from. Repeating one input keeps the
/// per-step contributions to the input-weight gradient aligned, so hard
/// samples carry larger base-gradient norms.
pub fn gen_seqclass(cfg: &SeqClassConfig) -> Result<(Dataset, DatasetManifest)> {
    if cfg.n == 0 {
        return Err(Error::InvalidInput("empty dataset: n must be at least 1".into()));
    }
    if cfg.vocab < 4 {
        return Err(Error::InvalidInput("vocab must be at least 4".into()));
    }
    if !(0.0..=1.0).contains(&cfg.hard_fraction) {
        return Err(Error::InvalidInput("hard fraction must lie in [0, 1]".into()));
    }
    if cfg.min_len < 2 || cfg.max_len < cfg.min_len {
        return Err(Error::InvalidInput("need 2 <= min_len <= max_len".into()));
    }

    let mut rng = seed::stream_rng(cfg.seed, seed::streams::DATA);
    let (common, rare) = token_bands(cfg.vocab);
    let mid = (cfg.min_len + cfg.max_len) / 2;
    let n_hard = (cfg.n as f64 * cfg.hard_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng);
    let mut hard_indices: Vec<usize> = order[..n_hard].to_vec();
    hard_indices.sort_unstable();
    let mut is_hard = vec![false; cfg.n];
    for &i in &hard_indices {
        is_hard[i] = true;
    }

    let mut labels: Vec<usize> = (0..cfg.n).map(|_| rng.gen_range(0..2)).collect();
    if cfg.n >= 2 && labels.iter().all(|&l| l == labels[0]) {
        labels[cfg.n - 1] = 1 - labels[0];
    }

    let common_pool: Vec<usize> = common.collect();
    let samples = (0..cfg.n)
        .map(|i| {
            let label = labels[i];
            if is_hard[i] {
                let len = rng.gen_range(mid..=cfg.max_len);
                let token = rng.gen_range(rare_half(&rare, label));
                SequenceSample::classification(vec![token; len], label)
            } else {
                let len = rng.gen_range(cfg.min_len..=mid);
                let mut tokens = Vec::with_capacity(len);
                tokens.push(label);
                if common_pool.len() >= len - 1 {
                    tokens.extend(common_pool.choose_multiple(&mut rng, len - 1).copied());
                } else {
                    tokens.extend((1..len).map(|_| common_pool[rng.gen_range(0..common_pool.len())]));
                }
                SequenceSample::classification(tokens, label)
            }
        })
        .collect();

    let manifest = DatasetManifest {
        kind: DatasetKind::SeqClass,
        n_samples: cfg.n,
        vocab: Some(cfg.vocab),
        n_v: None,
        generator: Some(serde_json::to_value(cfg)?),
        seed: Some(cfg.seed),
        source: None,
        hard_indices,
    };
    Ok((Dataset::SeqClass(samples), manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqLabelConfig {
    pub n: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that the next token follows the deterministic successor rule.
    pub regularity: f64,
    pub seed: u64,
}

/// Next-token prediction over a noisy successor chain `t → (3t + 1) mod V`.
pub fn gen_seqlabel(cfg: &SeqLabelConfig) -> Result<(Dataset, DatasetManifest)> {
    if cfg.n == 0 {
        return Err(Error::InvalidInput("empty dataset: n must be at least 1".into()));
    }
    if cfg.vocab < 2 || cfg.min_len < 1 || cfg.max_len < cfg.min_len {
        return Err(Error::InvalidInput(
            "need vocab >= 2 and 1 <= min_len <= max_len".into(),
        ));
    }
    let mut rng = seed::stream_rng(cfg.seed, seed::streams::DATA);
    let samples = (0..cfg.n)
        .map(|_| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut seq = vec![rng.gen_range(0..cfg.vocab)];
            for _ in 0..len {
                let prev = *seq.last().expect("non-empty");
                let next = if rng.gen::<f64>() < cfg.regularity {
                    (3 * prev + 1) % cfg.vocab
                } else {
                    rng.gen_range(0..cfg.vocab)
                };
                seq.push(next);
            }
            SequenceSample::labelled(seq[..len].to_vec(), seq[1..].to_vec())
        })
        .collect();
    let manifest = DatasetManifest {
        kind: DatasetKind::SeqLabel,
        n_samples: cfg.n,
        vocab: Some(cfg.vocab),
        n_v: None,
        generator: Some(serde_json::to_value(cfg)?),
        seed: Some(cfg.seed),
        source: None,
        hard_indices: Vec::new(),
    };
    Ok((Dataset::SeqLabel(samples), manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PianoRollConfig {
    pub n: usize,
    pub n_v: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub patterns: usize,
    pub seed: u64,
}

impl Default for PianoRollConfig {
    fn default() -> Self {
        PianoRollConfig {
            n: 40,
            n_v: 88,
            min_len: 50,
            max_len: 100,
            patterns: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Motif {
    notes: Vec<usize>,
    period: usize,
    duty: usize,
}

/// Sequences of overlapping periodic chords. Each sequence layers one or two
/// motifs drawn from a shared pool of `patterns`, each at a random phase.
pub fn gen_pianoroll(cfg: &PianoRollConfig) -> Result<(Dataset, DatasetManifest)> {
    if cfg.n == 0 {
        return Err(Error::InvalidInput("empty dataset: n must be at least 1".into()));
    }
    if cfg.n_v < 4 {
        return Err(Error::InvalidInput("n_v must be at least 4".into()));
    }
    if cfg.patterns == 0 || cfg.min_len == 0 || cfg.max_len < cfg.min_len {
        return Err(Error::InvalidInput(
            "need patterns >= 1 and 1 <= min_len <= max_len".into(),
        ));
    }
    let mut rng = seed::stream_rng(cfg.seed, seed::streams::DATA);
    let chord = 3.min(cfg.n_v - 1);
    let motifs: Vec<Motif> = (0..cfg.patterns)
        .map(|_| {
            let mut all: Vec<usize> = (0..cfg.n_v).collect();
            all.shuffle(&mut rng);
            let mut notes = all[..chord].to_vec();
            notes.sort_unstable();
            let period = rng.gen_range(2..=6);
            Motif {
                notes,
                period,
                duty: period.div_ceil(2),
            }
        })
        .collect();

    let seqs = (0..cfg.n)
        .map(|_| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let layers = if cfg.patterns > 1 { 2 } else { 1 };
            let chosen: Vec<(usize, usize)> = (0..layers)
                .map(|_| {
                    let m = rng.gen_range(0..cfg.patterns);
                    (m, rng.gen_range(0..motifs[m].period))
                })
                .collect();
            let frames = (0..len)
                .map(|t| {
                    let mut f = Vector::zeros(cfg.n_v);
                    for &(m, phase) in &chosen {
                        let motif = &motifs[m];
                        if (t + phase) % motif.period < motif.duty {
                            for &note in &motif.notes {
                                f[note] = 1.0;
                            }
                        }
                    }
                    f
                })
                .collect();
            FrameSequence::new(frames)
        })
        .collect();

    let manifest = DatasetManifest {
        kind: DatasetKind::PianoRoll,
        n_samples: cfg.n,
        vocab: None,
        n_v: Some(cfg.n_v),
        generator: Some(serde_json::to_value(cfg)?),
        seed: Some(cfg.seed),
        source: None,
        hard_indices: Vec::new(),
    };
    Ok((Dataset::PianoRoll { n_v: cfg.n_v, seqs }, manifest))
}

// ---------------------------------------------------------------------------
// JSONL persistence

/// SHA-256 of `bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassLine {
    tokens: Vec<usize>,
    label: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    tokens: Vec<usize>,
    targets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RollLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_v: Option<usize>,
    frames: Vec<Vec<u8>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyLine {
    Class(ClassLine),
    Label(LabelLine),
    Roll(RollLine),
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    match ds {
        Dataset::SeqClass(samples) => {
            for s in samples {
                let label = *s
                    .targets
                    .first()
                    .ok_or_else(|| Error::InvalidInput("classification sample without label".into()))?;
                let line = ClassLine {
                    tokens: s.tokens.clone(),
                    label,
                };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Dataset::SeqLabel(samples) => {
            for s in samples {
                let line = LabelLine {
                    tokens: s.tokens.clone(),
                    targets: s.targets.clone(),
                };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        Dataset::PianoRoll { n_v, seqs } => {
            for s in seqs {
                let line = RollLine {
                    n_v: Some(*n_v),
                    frames: s
                        .frames
                        .iter()
                        .map(|f| f.iter().map(|&b| u8::from(b > 0.5)).collect())
                        .collect(),
                };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut class = Vec::new();
    let mut label = Vec::new();
    let mut roll: Vec<FrameSequence> = Vec::new();
    let mut width: Option<usize> = None;
    let mut kind: Option<DatasetKind> = None;

    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        let parsed: AnyLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let this = match &parsed {
            AnyLine::Class(_) => DatasetKind::SeqClass,
            AnyLine::Label(_) => DatasetKind::SeqLabel,
            AnyLine::Roll(_) => DatasetKind::PianoRoll,
        };
        match kind {
            None => kind = Some(this),
            Some(k) if k != this => {
                return Err(parse_err(format!("{this} line in a {k} dataset")));
            }
            _ => {}
        }
        match parsed {
            AnyLine::Class(c) => {
                if c.tokens.is_empty() {
                    return Err(parse_err("empty token list".into()));
                }
                class.push(SequenceSample::classification(c.tokens, c.label));
            }
            AnyLine::Label(l) => {
                if l.tokens.is_empty() || l.tokens.len() != l.targets.len() {
                    return Err(parse_err(
                        "tokens and targets must be non-empty and equal length".into(),
                    ));
                }
                label.push(SequenceSample::labelled(l.tokens, l.targets));
            }
            AnyLine::Roll(rl) => {
                if rl.frames.is_empty() {
                    return Err(parse_err("empty frame list".into()));
                }
                let w = rl.n_v.unwrap_or(rl.frames[0].len());
                if let Some(prev) = width {
                    if prev != w {
                        return Err(parse_err(format!("n_v {w} differs from earlier {prev}")));
                    }
                }
                width = Some(w);
                let mut frames = Vec::with_capacity(rl.frames.len());
                for f in rl.frames {
                    if f.len() != w {
                        return Err(parse_err(format!("frame of width {} where n_v = {w}", f.len())));
                    }
                    if f.iter().any(|&b| b > 1) {
                        return Err(parse_err("frame entries must be 0 or 1".into()));
                    }
                    frames.push(f.into_iter().map(f64::from).collect());
                }
                roll.push(FrameSequence::new(frames));
            }
        }
    }

    match kind {
        None => Err(Error::Validation("dataset file contains no samples".into())),
        Some(DatasetKind::SeqClass) => Ok(Dataset::SeqClass(class)),
        Some(DatasetKind::SeqLabel) => Ok(Dataset::SeqLabel(label)),
        Some(DatasetKind::PianoRoll) => Ok(Dataset::PianoRoll {
            n_v: width.unwrap_or(0),
            seqs: roll,
        }),
    }
}
