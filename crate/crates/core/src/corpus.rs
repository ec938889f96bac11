//! Bag-structured corpus ingestion and the planted-ties synthetic generator.
//!
//! Corpus files are UTF-8 JSON lines; each record carries the raw tokens, the
//! two entity positions and the relation names of one sentence. Sentences are
//! grouped into bags by entity pair and bag labels are the union of the
//! line-level relation sets. The synthetic generator plants implication rules
//! and exclusion pairs into a corpus and returns them as ground truth so that
//! tie recovery can be scored later.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `NA` ("no relation") is always relation index 0.
pub const NA_RELATION: usize = 0;
/// Unknown-token index.
pub const UNK_ID: usize = 0;
/// Padding-token index (reserved).
pub const PAD_ID: usize = 1;
/// Position-offset clip distance; the position vocabulary is `2 * D + 1`.
pub const DEFAULT_MAX_POS_DISTANCE: usize = 30;
/// Sentences longer than this are truncated to a window containing both
/// entities.
pub const MAX_SENTENCE_TOKENS: usize = 120;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bag {bag_id}: {message}")]
    Record { bag_id: String, message: String },
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error("relation mapping: {0}")]
    RelationMap(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token-to-index mapping with fixed `UNK`/`PAD` specials.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        v.intern("<unk>");
        v.intern("<pad>");
        v
    }

    /// Index of `token`, inserting it if absent.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    /// Index of `token`, or `UNK_ID` when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Relation-name to index mapping; `NA` is pinned to index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationMap {
    /// Builds from names listed in index order; `names[0]` must be `NA`.
    pub fn from_names(names: Vec<String>) -> Result<Self, CorpusError> {
        if names.first().map(String::as_str) != Some("NA") {
            return Err(CorpusError::RelationMap(
                "relation index 0 must be NA".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(CorpusError::RelationMap(format!(
                    "duplicate relation name {name}"
                )));
            }
        }
        Ok(Self { names, index })
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Reads `name<TAB>index` lines; indices must be a permutation of
    /// `0..k` with `NA` at 0.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let name = parts.next().unwrap_or_default().to_string();
            let idx: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    CorpusError::RelationMap(format!("line {}: expected name<TAB>index", lineno + 1))
                })?;
            pairs.push((idx, name));
        }
        pairs.sort();
        for (expect, (idx, _)) in pairs.iter().enumerate() {
            if *idx != expect {
                return Err(CorpusError::RelationMap(format!(
                    "indices must cover 0..{} exactly, found {}",
                    pairs.len(),
                    idx
                )));
            }
        }
        Self::from_names(pairs.into_iter().map(|(_, n)| n).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(&format!("{name}\t{i}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// One token/position-encoded sentence mentioning the bag's entity pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInstance {
    pub token_ids: Vec<usize>,
    pub head_pos: usize,
    pub tail_pos: usize,
    pub pos1_ids: Vec<usize>,
    pub pos2_ids: Vec<usize>,
}

/// An entity pair, its sentences and its gold relation label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub head: String,
    pub tail: String,
    pub sentences: Vec<SentenceInstance>,
    pub labels: BTreeSet<usize>,
}

/// Relative-offset position indices, clipped to `[-d_max, d_max]` and shifted
/// so that offset 0 maps to index `d_max`.
pub fn encode_positions(
    token_count: usize,
    head_pos: usize,
    tail_pos: usize,
    d_max: usize,
) -> (Vec<usize>, Vec<usize>) {
    let encode = |anchor: usize| -> Vec<usize> {
        (0..token_count)
            .map(|i| {
                let offset = i as i64 - anchor as i64;
                let clipped = offset.clamp(-(d_max as i64), d_max as i64);
                (clipped + d_max as i64) as usize
            })
            .collect()
    };
    (encode(head_pos), encode(tail_pos))
}

/// On-disk JSON-lines record for one sentence.
#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    head: String,
    tail: String,
    tokens: Vec<String>,
    head_pos: usize,
    tail_pos: usize,
    relations: Vec<String>,
}

/// Vocabulary handling during corpus loading.
pub enum VocabMode<'a> {
    /// Build a fresh vocabulary from the file (training split).
    Build,
    /// Reuse an existing vocabulary; unknown tokens map to `UNK`.
    Reuse(&'a Vocabulary),
}

fn bag_key(head: &str, tail: &str) -> String {
    format!("{head}|{tail}")
}

/// Truncates to `MAX_SENTENCE_TOKENS` keeping both entities inside the
/// window; returns the new window start.
fn truncation_window(
    token_count: usize,
    head_pos: usize,
    tail_pos: usize,
) -> Result<usize, String> {
    if token_count <= MAX_SENTENCE_TOKENS {
        return Ok(0);
    }
    let lo = head_pos.min(tail_pos);
    let hi = head_pos.max(tail_pos);
    if hi - lo + 1 > MAX_SENTENCE_TOKENS {
        return Err(format!(
            "entity span {} exceeds the {MAX_SENTENCE_TOKENS}-token cap",
            hi - lo + 1
        ));
    }
    // Center the window on the entity midpoint, clamped into bounds.
    let mid = (lo + hi) / 2;
    let half = MAX_SENTENCE_TOKENS / 2;
    let mut start = mid.saturating_sub(half);
    if start + MAX_SENTENCE_TOKENS > token_count {
        start = token_count - MAX_SENTENCE_TOKENS;
    }
    if start > lo {
        start = lo;
    }
    Ok(start)
}

/// Loads a JSON-lines corpus, grouping sentences into bags by entity pair.
///
/// Bag labels are the union of line-level relation lists; bags keep the order
/// in which their pair first appears in the file.
pub fn load_corpus(
    path: impl AsRef<Path>,
    mode: VocabMode<'_>,
    relations: &RelationMap,
    d_max: usize,
) -> Result<(Vec<Bag>, Vocabulary), CorpusError> {
    let text = fs::read_to_string(path)?;
    load_corpus_str(&text, mode, relations, d_max)
}

pub fn load_corpus_str(
    text: &str,
    mode: VocabMode<'_>,
    relations: &RelationMap,
    d_max: usize,
) -> Result<(Vec<Bag>, Vocabulary), CorpusError> {
    let mut vocab = match &mode {
        VocabMode::Build => Vocabulary::new(),
        VocabMode::Reuse(v) => (*v).clone(),
    };
    let building = matches!(mode, VocabMode::Build);

    let mut bags: Vec<Bag> = Vec::new();
    let mut by_pair: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let bag_id = bag_key(&record.head, &record.tail);
        if record.tokens.is_empty() {
            return Err(CorpusError::Record {
                bag_id,
                message: "sentence has no tokens".into(),
            });
        }
        if record.head_pos >= record.tokens.len() || record.tail_pos >= record.tokens.len() {
            return Err(CorpusError::Record {
                bag_id,
                message: format!(
                    "entity positions ({}, {}) outside sentence of {} tokens",
                    record.head_pos,
                    record.tail_pos,
                    record.tokens.len()
                ),
            });
        }
        let start = truncation_window(record.tokens.len(), record.head_pos, record.tail_pos)
            .map_err(|message| CorpusError::Record {
                bag_id: bag_id.clone(),
                message,
            })?;
        let end = (start + MAX_SENTENCE_TOKENS).min(record.tokens.len());
        let window = &record.tokens[start..end];
        let head_pos = record.head_pos - start;
        let tail_pos = record.tail_pos - start;

        let token_ids: Vec<usize> = window
            .iter()
            .map(|t| {
                if building {
                    vocab.intern(t)
                } else {
                    vocab.lookup(t)
                }
            })
            .collect();
        let (pos1_ids, pos2_ids) = encode_positions(token_ids.len(), head_pos, tail_pos, d_max);

        let mut labels = BTreeSet::new();
        for name in &record.relations {
            let idx = relations.lookup(name).ok_or_else(|| CorpusError::Record {
                bag_id: bag_id.clone(),
                message: format!("unknown relation name {name}"),
            })?;
            labels.insert(idx);
        }
        if labels.is_empty() {
            return Err(CorpusError::Record {
                bag_id,
                message: "record lists no relations (NA must be explicit)".into(),
            });
        }

        let instance = SentenceInstance {
            token_ids,
            head_pos,
            tail_pos,
            pos1_ids,
            pos2_ids,
        };
        match by_pair.get(&bag_id) {
            Some(&i) => {
                bags[i].sentences.push(instance);
                bags[i].labels.extend(labels);
            }
            None => {
                by_pair.insert(bag_id.clone(), bags.len());
                bags.push(Bag {
                    bag_id,
                    head: record.head,
                    tail: record.tail,
                    sentences: vec![instance],
                    labels,
                });
            }
        }
    }
    Ok((bags, vocab))
}

/// Writes bags back to the JSON-lines corpus format (one line per sentence).
pub fn write_corpus(
    bags: &[Bag],
    vocab: &Vocabulary,
    relations: &RelationMap,
    mut writer: impl Write,
) -> Result<(), CorpusError> {
    for bag in bags {
        let names: Vec<String> = bag
            .labels
            .iter()
            .map(|&r| relations.name(r).to_string())
            .collect();
        for s in &bag.sentences {
            let record = CorpusRecord {
                head: bag.head.clone(),
                tail: bag.tail.clone(),
                tokens: s.token_ids.iter().map(|&t| vocab.token(t).to_string()).collect(),
                head_pos: s.head_pos,
                tail_pos: s.tail_pos,
                relations: names.clone(),
            };
            let line = serde_json::to_string(&record).expect("corpus record serializes");
            writeln!(writer, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_corpus_file(
    bags: &[Bag],
    vocab: &Vocabulary,
    relations: &RelationMap,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let file = fs::File::create(path)?;
    write_corpus(bags, vocab, relations, std::io::BufWriter::new(file))
}

/// One (bag, gold relation) pair fed to the softmax loss. A bag with `j`
/// labels expands into `j` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingUnit {
    pub bag: usize,
    pub relation: usize,
}

/// Expands multi-label bags into per-relation training units, bag order
/// preserved and relations ascending within a bag.
pub fn expand_training_units(bags: &[Bag]) -> Vec<TrainingUnit> {
    let mut units = Vec::new();
    for (i, bag) in bags.iter().enumerate() {
        for &relation in &bag.labels {
            units.push(TrainingUnit { bag: i, relation });
        }
    }
    units
}

/// A planted implication rule: bags labeled `premise` also get `conclusion`
/// with the given probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicationRule {
    pub premise: usize,
    pub conclusion: usize,
    pub probability: f64,
}

/// Specification for the synthetic planted-ties corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Relation count including `NA`.
    pub num_relations: usize,
    /// Total bags across the train and test splits.
    pub num_bags: usize,
    /// Number of noise tokens in the vocabulary.
    pub vocab_size: usize,
    pub implications: Vec<ImplicationRule>,
    /// Pairs of relations that must never share a bag.
    pub exclusions: Vec<(usize, usize)>,
    /// Cue tokens per relation; empty lists are filled with generated names.
    #[serde(default)]
    pub trigger_tokens: Vec<Vec<String>>,
    /// Fraction of bags labeled `NA` only.
    pub na_fraction: f64,
    pub seed: u64,
    /// Fraction of bags assigned to the training split.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// When false (default), labels added by implication rules plant no cue
    /// tokens: the implied fact is latent in the text, so recovering it needs
    /// the label ties themselves.
    #[serde(default)]
    pub cue_implied_labels: bool,
    /// Relative sampling weight per relation when drawing a bag's seed
    /// relation; empty means uniform. Index 0 is ignored. Down-weighting rule
    /// premises creates the low-resource relations that ties are meant to
    /// help.
    #[serde(default)]
    pub seed_weights: Vec<f64>,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for SynthSpec {
    /// Desk-scale benchmark: 12 relations, two certain implications from
    /// well-resourced premises, two probabilistic implications from
    /// low-resource premises, and five planted exclusions. The low-resource
    /// premises sit where their noisy reverse transitions fall under the
    /// default threshold while every forward edge survives it.
    fn default() -> Self {
        Self {
            num_relations: 12,
            num_bags: 2000,
            vocab_size: 150,
            implications: vec![
                ImplicationRule { premise: 1, conclusion: 2, probability: 1.0 },
                ImplicationRule { premise: 3, conclusion: 4, probability: 0.8 },
                ImplicationRule { premise: 5, conclusion: 6, probability: 0.5 },
                ImplicationRule { premise: 7, conclusion: 8, probability: 0.5 },
            ],
            exclusions: vec![(1, 9), (3, 10), (5, 11), (9, 10), (7, 9)],
            trigger_tokens: Vec::new(),
            na_fraction: 0.3,
            seed: 7,
            train_fraction: 0.7,
            cue_implied_labels: false,
            seed_weights: vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.4, 1.0, 0.4, 1.0, 1.0, 1.0, 1.0],
        }
    }
}

/// The exact ties planted by the generator, for later recovery scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTies {
    pub implications: Vec<ImplicationRule>,
    pub exclusions: Vec<(usize, usize)>,
}

impl PlantedTies {
    /// `IMPLIES`/`EXCLUDES` tab-separated lines using relation names.
    pub fn to_tsv(&self, relations: &RelationMap) -> String {
        let mut out = String::new();
        for rule in &self.implications {
            out.push_str(&format!(
                "IMPLIES\t{}\t{}\t{}\n",
                relations.name(rule.premise),
                relations.name(rule.conclusion),
                rule.probability
            ));
        }
        for &(a, b) in &self.exclusions {
            out.push_str(&format!(
                "EXCLUDES\t{}\t{}\n",
                relations.name(a),
                relations.name(b)
            ));
        }
        out
    }

    pub fn parse_tsv(text: &str, relations: &RelationMap) -> Result<Self, CorpusError> {
        let mut ties = PlantedTies {
            implications: Vec::new(),
            exclusions: Vec::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let resolve = |name: &str| {
                relations.lookup(name).ok_or_else(|| CorpusError::Parse {
                    line: lineno + 1,
                    message: format!("unknown relation {name}"),
                })
            };
            match fields.as_slice() {
                ["IMPLIES", a, b, p] => ties.implications.push(ImplicationRule {
                    premise: resolve(a)?,
                    conclusion: resolve(b)?,
                    probability: p.parse().map_err(|_| CorpusError::Parse {
                        line: lineno + 1,
                        message: format!("bad probability {p}"),
                    })?,
                }),
                ["EXCLUDES", a, b] => ties.exclusions.push((resolve(a)?, resolve(b)?)),
                _ => {
                    return Err(CorpusError::Parse {
                        line: lineno + 1,
                        message: "expected IMPLIES or EXCLUDES record".into(),
                    })
                }
            }
        }
        Ok(ties)
    }
}

/// Everything the generator produces for one seed.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
    pub ties: PlantedTies,
    pub vocab: Vocabulary,
    pub relations: RelationMap,
}

fn validate_spec(spec: &SynthSpec) -> Result<(), CorpusError> {
    let k = spec.num_relations;
    if k < 2 {
        return Err(CorpusError::Spec("need at least NA and one relation".into()));
    }
    if !(0.0..=1.0).contains(&spec.na_fraction) {
        return Err(CorpusError::Spec(format!(
            "na_fraction {} outside [0, 1]",
            spec.na_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.train_fraction) && spec.train_fraction != 1.0 {
        return Err(CorpusError::Spec(format!(
            "train_fraction {} outside (0, 1]",
            spec.train_fraction
        )));
    }
    for rule in &spec.implications {
        if !(0.0..=1.0).contains(&rule.probability) {
            return Err(CorpusError::Spec(format!(
                "rule probability {} outside [0, 1]",
                rule.probability
            )));
        }
        for &r in [rule.premise, rule.conclusion].iter() {
            if r == NA_RELATION || r >= k {
                return Err(CorpusError::Spec(format!(
                    "rule relation {r} must be a non-NA index below {k}"
                )));
            }
        }
    }
    for &(a, b) in &spec.exclusions {
        if a == b || a == NA_RELATION || b == NA_RELATION || a >= k || b >= k {
            return Err(CorpusError::Spec(format!(
                "exclusion pair ({a}, {b}) must name two distinct non-NA relations below {k}"
            )));
        }
    }
    if !spec.seed_weights.is_empty() {
        if spec.seed_weights.len() != k {
            return Err(CorpusError::Spec(format!(
                "seed_weights has {} entries, expected {k}",
                spec.seed_weights.len()
            )));
        }
        if spec.seed_weights[1..].iter().any(|&w| w < 0.0)
            || spec.seed_weights[1..].iter().sum::<f64>() <= 0.0
        {
            return Err(CorpusError::Spec(
                "seed_weights must be non-negative with a positive total".into(),
            ));
        }
    }
    // A label set is always a subset of the positive-probability closure of
    // its seed relation, so exclusions are violated exactly when some closure
    // contains both members of a pair.
    for seed_rel in 1..k {
        let closure = positive_closure(spec, seed_rel);
        for &(a, b) in &spec.exclusions {
            if closure.contains(&a) && closure.contains(&b) {
                return Err(CorpusError::Spec(format!(
                    "rules can label a bag with both ({a}, {b}) from seed relation {seed_rel}, \
                     which contradicts their exclusion"
                )));
            }
        }
    }
    Ok(())
}

fn positive_closure(spec: &SynthSpec, seed_rel: usize) -> BTreeSet<usize> {
    let mut set = BTreeSet::from([seed_rel]);
    loop {
        let mut grew = false;
        for rule in &spec.implications {
            if rule.probability > 0.0
                && set.contains(&rule.premise)
                && set.insert(rule.conclusion)
            {
                grew = true;
            }
        }
        if !grew {
            return set;
        }
    }
}

fn fire_rules(spec: &SynthSpec, seed_rel: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut labels = BTreeSet::from([seed_rel]);
    loop {
        let mut grew = false;
        for rule in &spec.implications {
            if labels.contains(&rule.premise)
                && !labels.contains(&rule.conclusion)
                && rng.gen_bool(rule.probability)
            {
                labels.insert(rule.conclusion);
                grew = true;
            }
        }
        if !grew {
            return labels;
        }
    }
}

/// Generates a deterministic planted-ties corpus with disjoint train/test
/// entity pairs.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput, CorpusError> {
    validate_spec(spec)?;
    let k = spec.num_relations;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut relation_names = vec!["NA".to_string()];
    relation_names.extend((1..k).map(|i| format!("r{i}")));
    let relations = RelationMap::from_names(relation_names)?;

    let mut triggers: Vec<Vec<String>> = spec.trigger_tokens.clone();
    triggers.resize(k, Vec::new());
    for (r, list) in triggers.iter_mut().enumerate().skip(1) {
        if list.is_empty() {
            *list = vec![format!("r{r}_cue_a"), format!("r{r}_cue_b")];
        }
    }

    let mut vocab = Vocabulary::new();
    let noise: Vec<usize> = (0..spec.vocab_size)
        .map(|i| vocab.intern(&format!("w{i}")))
        .collect();
    let trigger_ids: Vec<Vec<usize>> = triggers
        .iter()
        .map(|list| list.iter().map(|t| vocab.intern(t)).collect())
        .collect();

    let draw_seed = |rng: &mut ChaCha8Rng| -> usize {
        if spec.seed_weights.is_empty() {
            return rng.gen_range(1..k);
        }
        let total: f64 = spec.seed_weights[1..].iter().sum();
        let mut ticket = rng.gen_range(0.0..total);
        for (r, &w) in spec.seed_weights.iter().enumerate().skip(1) {
            if ticket < w {
                return r;
            }
            ticket -= w;
        }
        k - 1
    };

    let mut bags = Vec::with_capacity(spec.num_bags);
    for bag_no in 0..spec.num_bags {
        let (labels, seed_rel): (BTreeSet<usize>, Option<usize>) =
            if rng.gen_bool(spec.na_fraction) {
                (BTreeSet::from([NA_RELATION]), None)
            } else {
                let seed_rel = draw_seed(&mut rng);
                (fire_rules(spec, seed_rel, &mut rng), Some(seed_rel))
            };

        let head = format!("ent{bag_no}_h");
        let tail = format!("ent{bag_no}_t");
        let head_id = vocab.intern(&head);
        let tail_id = vocab.intern(&tail);

        // Implied labels stay textually silent unless asked for: the tie,
        // not a cue token, is what links them to the bag.
        let positive: Vec<usize> = if spec.cue_implied_labels {
            labels.iter().copied().filter(|&r| r != NA_RELATION).collect()
        } else {
            seed_rel.into_iter().collect()
        };
        let sentence_count = rng.gen_range(1..=4);
        let mut sentences = Vec::with_capacity(sentence_count);
        for sent_no in 0..sentence_count {
            // The first sentence cues every label so each bag is learnable;
            // later sentences drop cues at random to give attention noise.
            let mut cues = Vec::new();
            for &r in &positive {
                if sent_no == 0 || rng.gen_bool(0.7) {
                    cues.push(trigger_ids[r][rng.gen_range(0..trigger_ids[r].len())]);
                }
            }
            let len = (2 + cues.len() + 4 + rng.gen_range(0..5)).max(8);
            let mut token_ids: Vec<usize> =
                (0..len).map(|_| noise[rng.gen_range(0..noise.len())]).collect();
            let head_pos = rng.gen_range(0..len);
            let mut tail_pos = rng.gen_range(0..len - 1);
            if tail_pos >= head_pos {
                tail_pos += 1;
            }
            token_ids[head_pos] = head_id;
            token_ids[tail_pos] = tail_id;
            let mut free: Vec<usize> =
                (0..len).filter(|&i| i != head_pos && i != tail_pos).collect();
            for cue in cues {
                let slot = free.remove(rng.gen_range(0..free.len()));
                token_ids[slot] = cue;
            }
            let (pos1_ids, pos2_ids) =
                encode_positions(len, head_pos, tail_pos, DEFAULT_MAX_POS_DISTANCE);
            sentences.push(SentenceInstance {
                token_ids,
                head_pos,
                tail_pos,
                pos1_ids,
                pos2_ids,
            });
        }
        bags.push(Bag {
            bag_id: bag_key(&head, &tail),
            head,
            tail,
            sentences,
            labels,
        });
    }

    let train_len = ((spec.num_bags as f64) * spec.train_fraction).round() as usize;
    let test = bags.split_off(train_len.min(bags.len()));
    Ok(SynthOutput {
        train: bags,
        test,
        ties: PlantedTies {
            implications: spec.implications.clone(),
            exclusions: spec.exclusions.clone(),
        },
        vocab,
        relations,
    })
}
