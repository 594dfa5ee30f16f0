//! Dataset ingestion and synthetic task generation.
//!
//! Storage is line-delimited JSON records `{"id", "feat", "text"}` for
//! inspectability; at desk scale the text overhead is negligible. The vocab
//! file holds one character per line with the first three lines reserved
//! for `<sos>`, `<eos>`, `<unk>`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Character↔id table with ids 0/1/2 reserved for `<sos>`/`<eos>`/`<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, 3 + i).is_some() {
                return Err(Error::data(format!("duplicate vocab character '{c}'")));
            }
        }
        Ok(Vocab { chars, index })
    }

    /// Total id space including the three reserved tokens.
    pub fn size(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn encode_char(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }

    /// Encode a text as character ids followed by `<eos>`. Returns the ids
    /// and the number of characters mapped to `<unk>`.
    pub fn encode(&self, text: &str) -> (Vec<usize>, usize) {
        let mut ids = Vec::with_capacity(text.chars().count() + 1);
        let mut unk = 0usize;
        for c in text.chars() {
            let id = self.encode_char(c);
            if id == UNK_ID {
                unk += 1;
            }
            ids.push(id);
        }
        ids.push(EOS_ID);
        (ids, unk)
    }

    /// Render token ids back to text, stopping at `<eos>` and rendering
    /// reserved ids symbolically.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                EOS_ID => break,
                SOS_ID => out.push_str("<sos>"),
                UNK_ID => out.push_str("<unk>"),
                _ => match self.chars.get(id - 3) {
                    Some(&c) => out.push(c),
                    None => out.push_str("<bad>"),
                },
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        for (i, expected) in ["<sos>", "<eos>", "<unk>"].iter().enumerate() {
            match lines.next() {
                Some(Ok(line)) if line == *expected => {}
                Some(Ok(line)) => {
                    return Err(Error::parse(
                        i + 1,
                        format!("expected reserved token {expected}, found '{line}'"),
                    ))
                }
                Some(Err(e)) => return Err(e.into()),
                None => return Err(Error::parse(i + 1, "truncated vocab file")),
            }
        }
        let mut chars = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let mut it = line.chars();
            let c = it
                .next()
                .ok_or_else(|| Error::parse(i + 4, "empty vocab line"))?;
            if it.next().is_some() {
                return Err(Error::parse(i + 4, format!("vocab line '{line}' is not a single character")));
            }
            chars.push(c);
        }
        Vocab::from_chars(chars)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "<sos>\n<eos>\n<unk>")?;
        for &c in &self.chars {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Framewise features, `T x d`.
    pub feat: Array2<f64>,
    pub text: String,
    /// Encoded characters terminated by `<eos>`.
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub vocab: Vocab,
    pub feat_dim: usize,
    /// Characters mapped to `<unk>` during loading, for a warning summary.
    pub unk_mapped: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    feat: Vec<Vec<f64>>,
    text: String,
}

/// Load a line-delimited dataset, validating a uniform feature dimension.
pub fn load_jsonl(path: &Path, vocab_path: &Path) -> Result<Dataset> {
    let vocab = Vocab::load(vocab_path)?;
    let file = std::fs::File::open(path)?;
    let mut utterances = Vec::new();
    let mut feat_dim: Option<usize> = None;
    let mut unk_mapped = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if rec.feat.is_empty() {
            return Err(Error::data(format!("utterance '{}' has no frames", rec.id)));
        }
        let d = rec.feat[0].len();
        match feat_dim {
            None => feat_dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::data(format!(
                    "utterance '{}' has feature dim {d}, expected {expected}",
                    rec.id
                )))
            }
            _ => {}
        }
        let t = rec.feat.len();
        let mut feat = Array2::zeros((t, d));
        for (r, row) in rec.feat.iter().enumerate() {
            if row.len() != d {
                return Err(Error::data(format!(
                    "utterance '{}' frame {r} has dim {}, expected {d}",
                    rec.id,
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                feat[[r, c]] = v;
            }
        }
        let (target, unk) = vocab.encode(&rec.text);
        unk_mapped += unk;
        utterances.push(Utterance {
            id: rec.id,
            feat,
            text: rec.text,
            target,
        });
    }
    Ok(Dataset {
        utterances,
        vocab,
        feat_dim: feat_dim.unwrap_or(0),
        unk_mapped,
    })
}

pub fn write_jsonl(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for u in &dataset.utterances {
        let rec = Record {
            id: u.id.clone(),
            feat: u.feat.rows().into_iter().map(|r| r.to_vec()).collect(),
            text: u.text.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of distinct characters; the id space adds the three reserved tokens.
    pub vocab_size: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub n: usize,
    pub noise_sigma: f64,
    /// Frames emitted per character; >1 forces nontrivial attention alignment.
    pub frames_per_char: usize,
    pub feat_dim: usize,
    /// Stream seed for string draws and noise.
    pub seed: u64,
    /// Seed for the fixed per-character embedding table. Splits meant to be
    /// train/dev pairs must share it (and differ in `seed`).
    pub embedding_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 8,
            len_min: 3,
            len_max: 10,
            n: 100,
            noise_sigma: 0.1,
            frames_per_char: 3,
            feat_dim: 8,
            seed: 0,
            embedding_seed: 0,
        }
    }
}

/// The per-character embeddings a synthetic dataset was generated from,
/// reproducible from the same seed and dimensions.
pub fn synth_embeddings(vocab_size: usize, feat_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb = Array2::zeros((vocab_size, feat_dim));
    for v in emb.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    emb
}

/// Generate a transduction dataset: random character strings whose features
/// are per-character fixed random embeddings repeated `frames_per_char`
/// times plus i.i.d. Gaussian noise of scale `noise_sigma`.
pub fn synth_transduce(config: &SynthConfig) -> Result<Dataset> {
    if config.vocab_size < 2 {
        return Err(Error::invalid_argument("vocab_size must be at least 2"));
    }
    if config.len_min > config.len_max || config.len_min == 0 {
        return Err(Error::invalid_argument("need 1 <= len_min <= len_max"));
    }
    if config.n == 0 {
        return Err(Error::invalid_argument("n must be at least 1"));
    }
    if config.frames_per_char == 0 || config.feat_dim == 0 {
        return Err(Error::invalid_argument(
            "frames_per_char and feat_dim must be positive",
        ));
    }
    if config.noise_sigma < 0.0 {
        return Err(Error::invalid_argument("noise_sigma must be nonnegative"));
    }
    if config.vocab_size > 26 {
        return Err(Error::invalid_argument(
            "vocab_size beyond 26 single letters is unsupported",
        ));
    }
    let emb = synth_embeddings(config.vocab_size, config.feat_dim, config.embedding_seed);
    let vocab = Vocab::from_chars((0..config.vocab_size).map(|i| (b'a' + i as u8) as char))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid_argument(e.to_string()))?;
    let mut utterances = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let len = rng.gen_range(config.len_min..=config.len_max);
        let char_ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
        let text: String = char_ids.iter().map(|&c| (b'a' + c as u8) as char).collect();
        let t = len * config.frames_per_char;
        let mut feat = Array2::zeros((t, config.feat_dim));
        for (k, &c) in char_ids.iter().enumerate() {
            for f in 0..config.frames_per_char {
                for d in 0..config.feat_dim {
                    let eps = if config.noise_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    feat[[k * config.frames_per_char + f, d]] = emb[[c, d]] + eps;
                }
            }
        }
        let (target, _) = vocab.encode(&text);
        utterances.push(Utterance {
            id: format!("synth-{i:05}"),
            feat,
            text,
            target,
        });
    }
    Ok(Dataset {
        utterances,
        vocab,
        feat_dim: config.feat_dim,
        unk_mapped: 0,
    })
}
