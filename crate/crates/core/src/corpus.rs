//! Dialogue data model, label coarsening, splitting and the synthetic
//! corpus generator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three utterance modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Acoustic,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Acoustic, Modality::Visual];

    /// Single-letter tag used in files and configuration (`t`, `a`, `v`).
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Text => "t",
            Modality::Acoustic => "a",
            Modality::Visual => "v",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "t" | "T" => Some(Modality::Text),
            "a" | "A" => Some(Modality::Acoustic),
            "v" | "V" => Some(Modality::Visual),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDims {
    pub t: usize,
    pub a: usize,
    pub v: usize,
}

impl ModalityDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.t,
            Modality::Acoustic => self.a,
            Modality::Visual => self.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: usize,
    pub label: usize,
    pub text: Vec<f64>,
    pub acoustic: Vec<f64>,
    pub visual: Vec<f64>,
}

impl Utterance {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Text => &self.text,
            Modality::Acoustic => &self.acoustic,
            Modality::Visual => &self.visual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    /// Number of participants `D`; every speaker id is below it.
    pub speakers: usize,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speaker_ids(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub labels: Vec<String>,
    pub dims: ModalityDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn classes(&self) -> usize {
        self.header.labels.len()
    }

    /// Largest participant count over all dialogues.
    pub fn max_speakers(&self) -> usize {
        self.dialogues.iter().map(|d| d.speakers).max().unwrap_or(0)
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.header.labels.iter().position(|l| l == name)
    }

    /// Check every structural invariant, naming the dialogue and utterance
    /// at fault.
    pub fn validate(&self) -> Result<()> {
        let c = self.classes();
        if c == 0 {
            return Err(Error::Data("corpus header declares no labels".into()));
        }
        for (i, l) in self.header.labels.iter().enumerate() {
            if self.header.labels[..i].contains(l) {
                return Err(Error::Data(format!("duplicate label '{l}' in header")));
            }
        }
        for d in &self.dialogues {
            if d.speakers < 2 {
                return Err(Error::Data(format!(
                    "dialogue '{}': speaker count {} is below 2",
                    d.id, d.speakers
                )));
            }
            if d.is_empty() {
                return Err(Error::Data(format!("dialogue '{}' has no utterances", d.id)));
            }
            for (k, u) in d.utterances.iter().enumerate() {
                if u.speaker >= d.speakers {
                    return Err(Error::Data(format!(
                        "dialogue '{}' utterance {k}: speaker {} >= {}",
                        d.id, u.speaker, d.speakers
                    )));
                }
                if u.label >= c {
                    return Err(Error::Data(format!(
                        "dialogue '{}' utterance {k}: label id {} >= {c}",
                        d.id, u.label
                    )));
                }
                for m in Modality::ALL {
                    let (got, want) = (u.features(m).len(), self.header.dims.get(m));
                    if got != want {
                        return Err(Error::Data(format!(
                            "dialogue '{}' utterance {k}: modality '{}' has {got} features, expected {want}",
                            d.id,
                            m.tag()
                        )));
                    }
                    if u.features(m).iter().any(|v| !v.is_finite()) {
                        return Err(Error::Data(format!(
                            "dialogue '{}' utterance {k}: non-finite '{}' feature",
                            d.id,
                            m.tag()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Three-way sentiment classes used by coarsened corpora and the synthetic
/// generator, in label-id order.
pub const COARSE_LABELS: [&str; 3] = ["Positive", "Neutral", "Negative"];

pub const IEMOCAP_LABELS: [&str; 6] = ["Happy", "Sad", "Neutral", "Angry", "Excited", "Frustrated"];
pub const MELD_LABELS: [&str; 7] = ["Neutral", "Surprise", "Fear", "Sadness", "Joy", "Disgust", "Anger"];

/// Fine label names plus their mapping onto [`COARSE_LABELS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: String,
    pub names: Vec<String>,
    pub coarse: BTreeMap<String, String>,
}

impl LabelScheme {
    fn build(name: &str, groups: &[(&str, &[&str])]) -> Self {
        let mut names = Vec::new();
        let mut coarse = BTreeMap::new();
        for (target, fine) in groups {
            for f in *fine {
                names.push(f.to_string());
                coarse.insert(f.to_string(), target.to_string());
            }
        }
        LabelScheme {
            name: name.into(),
            names,
            coarse,
        }
    }

    pub fn iemocap() -> Self {
        Self::build(
            "iemocap",
            &[
                ("Positive", &["Happy", "Excited"]),
                ("Negative", &["Sad", "Angry", "Frustrated"]),
                ("Neutral", &["Neutral"]),
            ],
        )
    }

    pub fn meld() -> Self {
        Self::build(
            "meld",
            &[
                ("Positive", &["Joy"]),
                ("Negative", &["Surprise", "Fear", "Sadness", "Disgust", "Anger"]),
                ("Neutral", &["Neutral"]),
            ],
        )
    }

    /// Identity mapping over already-coarse labels.
    pub fn three_class() -> Self {
        Self::build(
            "three-class",
            &[
                ("Positive", &["Positive"]),
                ("Negative", &["Negative"]),
                ("Neutral", &["Neutral"]),
            ],
        )
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "iemocap" => Some(Self::iemocap()),
            "meld" => Some(Self::meld()),
            "three-class" => Some(Self::three_class()),
            _ => None,
        }
    }

    /// First built-in scheme whose mapping covers every label in `labels`.
    pub fn detect(labels: &[String]) -> Option<Self> {
        [Self::three_class(), Self::iemocap(), Self::meld()]
            .into_iter()
            .find(|s| labels.iter().all(|l| s.coarse.contains_key(l)))
    }

    pub fn coarsen(&self, fine: &str) -> Option<&str> {
        self.coarse.get(fine).map(String::as_str)
    }
}

/// Relabel a corpus onto the three coarse classes. Features, speakers and
/// utterance order are left untouched.
pub fn coarsen_labels(corpus: &Corpus, scheme: &LabelScheme) -> Result<Corpus> {
    let mut map = Vec::with_capacity(corpus.classes());
    for l in &corpus.header.labels {
        let target = scheme
            .coarsen(l)
            .ok_or_else(|| Error::Data(format!("label '{l}' is not mapped by scheme '{}'", scheme.name)))?;
        let id = COARSE_LABELS
            .iter()
            .position(|c| *c == target)
            .ok_or_else(|| Error::Data(format!("scheme maps '{l}' to unknown class '{target}'")))?;
        map.push(id);
    }
    let dialogues = corpus
        .dialogues
        .iter()
        .map(|d| Dialogue {
            id: d.id.clone(),
            speakers: d.speakers,
            utterances: d
                .utterances
                .iter()
                .map(|u| Utterance {
                    label: map[u.label],
                    ..u.clone()
                })
                .collect(),
        })
        .collect();
    Ok(Corpus {
        header: CorpusHeader {
            labels: COARSE_LABELS.iter().map(|s| s.to_string()).collect(),
            dims: corpus.header.dims,
        },
        dialogues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// First 80% for training, of which the last 10% is held out for
    /// validation; the remaining 20% is the test set. Boundaries use floor.
    Sequential8010,
    /// Seeded shuffle, then floor boundaries at the given train/valid
    /// fractions; the rest is test.
    Random { train: f64, valid: f64 },
}

/// Dialogue indices of a train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, scheme: SplitScheme, seed: u64) -> Result<SplitIndices> {
    if n < 3 {
        return Err(Error::Data(format!(
            "cannot split {n} dialogue(s) into train/valid/test"
        )));
    }
    let (order, train_end, valid_end) = match scheme {
        SplitScheme::Sequential8010 => {
            let pool = (n * 8) / 10;
            let train_end = (pool * 9) / 10;
            ((0..n).collect::<Vec<_>>(), train_end, pool)
        }
        SplitScheme::Random { train, valid } => {
            if !(train > 0.0 && valid >= 0.0 && train + valid <= 1.0) {
                return Err(Error::Config(format!(
                    "invalid split fractions train={train} valid={valid}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let train_end = libm::floor(train * n as f64) as usize;
            let valid_end = libm::floor((train + valid) * n as f64) as usize;
            (order, train_end, valid_end.min(n))
        }
    };
    if train_end == 0 {
        return Err(Error::Data(format!("split of {n} dialogues leaves no training data")));
    }
    Ok(SplitIndices {
        train: order[..train_end].to_vec(),
        valid: order[train_end..valid_end].to_vec(),
        test: order[valid_end..].to_vec(),
    })
}

/// Partition a corpus at dialogue granularity.
pub fn split_corpus(corpus: &Corpus, scheme: SplitScheme, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let idx = split_indices(corpus.dialogues.len(), scheme, seed)?;
    let take = |ids: &[usize]| Corpus {
        header: corpus.header.clone(),
        dialogues: ids.iter().map(|&i| corpus.dialogues[i].clone()).collect(),
    };
    Ok((take(&idx.train), take(&idx.valid), take(&idx.test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub speakers: usize,
    pub dims: ModalityDims,
    /// Standard deviation of the Gaussian noise on every coordinate.
    pub noise: f64,
    /// Magnitude of the latent-bit signal on the first coordinate.
    pub signal: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dialogues: 200,
            min_len: 8,
            max_len: 12,
            speakers: 2,
            dims: ModalityDims { t: 24, a: 24, v: 24 },
            noise: 0.5,
            signal: 2.0,
        }
    }
}

/// Label of an utterance with latent bits `(b1, b2)`:
/// Neutral unless `b1`, then Positive if `b2` else Negative.
pub fn synthetic_label(b1: bool, b2: bool) -> usize {
    match (b1, b2) {
        (false, _) => 1,
        (true, true) => 0,
        (true, false) => 2,
    }
}

/// Deterministic synthetic corpus.
///
/// Each utterance draws two fair latent bits `b1, b2`. Coordinate 0 of the
/// text vector carries `b1`, of the acoustic vector `b2`, and of the visual
/// vector `b1 XOR b2`, each as `±signal`; every coordinate (signal included)
/// gets `N(0, noise²)` noise. No single modality determines the label, while
/// any two do.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Corpus> {
    if cfg.dialogues == 0 {
        return Err(Error::Config("synthetic corpus needs at least one dialogue".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "invalid dialogue length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if cfg.speakers < 2 {
        return Err(Error::Config("synthetic dialogues need at least 2 speakers".into()));
    }
    if cfg.dims.t == 0 || cfg.dims.a == 0 || cfg.dims.v == 0 {
        return Err(Error::Config("modality dimensions must be positive".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite() && cfg.signal.is_finite()) {
        return Err(Error::Config("noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(format!("{e}")))?;
    let draw = |rng: &mut ChaCha8Rng, dim: usize, bit: bool| -> Vec<f64> {
        (0..dim)
            .map(|k| {
                let base = if k == 0 {
                    if bit {
                        cfg.signal
                    } else {
                        -cfg.signal
                    }
                } else {
                    0.0
                };
                base + noise.sample(rng)
            })
            .collect()
    };
    let mut dialogues = Vec::with_capacity(cfg.dialogues);
    for di in 0..cfg.dialogues {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut utterances = Vec::with_capacity(len);
        for _ in 0..len {
            let b1: bool = rng.random();
            let b2: bool = rng.random();
            let speaker = rng.random_range(0..cfg.speakers);
            let text = draw(&mut rng, cfg.dims.t, b1);
            let acoustic = draw(&mut rng, cfg.dims.a, b2);
            let visual = draw(&mut rng, cfg.dims.v, b1 ^ b2);
            utterances.push(Utterance {
                speaker,
                label: synthetic_label(b1, b2),
                text,
                acoustic,
                visual,
            });
        }
        dialogues.push(Dialogue {
            id: format!("syn{di:04}"),
            speakers: cfg.speakers,
            utterances,
        });
    }
    Ok(Corpus {
        header: CorpusHeader {
            labels: COARSE_LABELS.iter().map(|s| s.to_string()).collect(),
            dims: cfg.dims,
        },
        dialogues,
    })
}
