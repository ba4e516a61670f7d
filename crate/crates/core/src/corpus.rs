//! Essay corpora: JSONL I/O, segment-to-sentence conversion, selective
//! sampling and training-set construction.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{ArgTree, LinkLabel, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceCorpus {
    #[serde(rename = "in")]
    InDomain,
    #[serde(rename = "out")]
    OutDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Essay {
    pub essay_id: String,
    pub sentences: Vec<Sentence>,
    pub gold: ArgTree,
    pub source_corpus: SourceCorpus,
}

impl Essay {
    /// Builds an essay from sentence texts and a gold tree, validating the
    /// gold invariants. `is_ac` is derived from the tree.
    pub fn new(
        essay_id: impl Into<String>,
        texts: Vec<String>,
        gold: ArgTree,
        source_corpus: SourceCorpus,
    ) -> Result<Self> {
        let essay_id = essay_id.into();
        if texts.len() != gold.n() {
            return Err(Error::validation(
                essay_id,
                format!("{} sentences but {} heads", texts.len(), gold.n()),
            ));
        }
        gold.validate_gold()
            .map_err(|e| Error::validation(&essay_id, e.to_string()))?;
        let sentences = texts
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                is_ac: gold.is_ac(index),
                text,
            })
            .collect();
        Ok(Essay {
            essay_id,
            sentences,
            gold,
            source_corpus,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn non_ac_count(&self) -> usize {
        self.sentences.iter().filter(|s| !s.is_ac).count()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }

    /// Same essay with a different tree (e.g. a prediction). Skips the gold
    /// validation since decoded trees may have several rooted subtrees.
    pub fn with_tree(&self, tree: ArgTree) -> Result<Essay> {
        if tree.n() != self.len() {
            return Err(Error::validation(
                &self.essay_id,
                format!("tree has {} nodes, essay {}", tree.n(), self.len()),
            ));
        }
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence {
                is_ac: tree.is_ac(s.index),
                ..s.clone()
            })
            .collect();
        Ok(Essay {
            essay_id: self.essay_id.clone(),
            sentences,
            gold: tree,
            source_corpus: self.source_corpus,
        })
    }
}

/// One line of the essay JSONL format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: String,
    pub corpus: SourceCorpus,
    pub sentences: Vec<String>,
    pub head: Vec<i64>,
    pub relation: Vec<Option<String>>,
}

impl EssayRecord {
    pub fn from_essay(e: &Essay) -> Self {
        EssayRecord {
            essay_id: e.essay_id.clone(),
            corpus: e.source_corpus,
            sentences: e.texts().map(str::to_owned).collect(),
            head: e.gold.heads().iter().map(|&h| h as i64).collect(),
            relation: e
                .gold
                .relations()
                .iter()
                .map(|r| r.map(|l| l.as_str().to_owned()))
                .collect(),
        }
    }

    /// Structural validation only (used for predicted trees).
    pub fn into_essay_unchecked(self) -> Result<Essay> {
        let tree = self.tree()?;
        let sentences = self
            .sentences
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                is_ac: tree.is_ac(index),
                text,
            })
            .collect();
        Ok(Essay {
            essay_id: self.essay_id,
            sentences,
            gold: tree,
            source_corpus: self.corpus,
        })
    }

    pub fn into_essay(self) -> Result<Essay> {
        let tree = self.tree()?;
        Essay::new(self.essay_id, self.sentences, tree, self.corpus)
    }

    fn tree(&self) -> Result<ArgTree> {
        let id = &self.essay_id;
        let n = self.sentences.len();
        if self.head.len() != n || self.relation.len() != n {
            return Err(Error::validation(
                id,
                format!(
                    "{} sentences, {} heads, {} relations",
                    n,
                    self.head.len(),
                    self.relation.len()
                ),
            ));
        }
        let head = self
            .head
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                usize::try_from(h)
                    .ok()
                    .filter(|&h| h < n)
                    .ok_or_else(|| {
                        Error::validation(id, format!("head[{i}] = {h} outside 0..{n}"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let relation = self
            .relation
            .iter()
            .map(|r| r.as_deref().map(LinkLabel::from_str).transpose())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::validation(id, e.to_string()))?;
        ArgTree::with_relations(head, relation).map_err(|e| Error::validation(id, e.to_string()))
    }
}

/// One AC span inside a sentence; offsets are character positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
    pub head_segment: Option<usize>,
}

/// One line of the segment JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotatedEssay {
    pub essay_id: String,
    pub sentences: Vec<String>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub max_sentences: usize,
    pub max_non_acs: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            max_sentences: 17,
            max_non_acs: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainingSetting {
    /// In-domain training essays only.
    #[serde(rename = "I")]
    InDomain,
    /// In-domain plus every out-of-domain essay.
    #[serde(rename = "P+I")]
    PlusOutDomain,
    /// In-domain plus the selectively sampled out-of-domain essays.
    #[serde(rename = "SS")]
    SelectiveSampling,
}

impl TrainingSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSetting::InDomain => "I",
            TrainingSetting::PlusOutDomain => "P+I",
            TrainingSetting::SelectiveSampling => "SS",
        }
    }
}

impl FromStr for TrainingSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(TrainingSetting::InDomain),
            "P+I" | "P_plus_I" => Ok(TrainingSetting::PlusOutDomain),
            "SS" => Ok(TrainingSetting::SelectiveSampling),
            other => Err(Error::Argument(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Essay,
    Segment,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "essay" => Ok(CorpusFormat::Essay),
            "segment" => Ok(CorpusFormat::Segment),
            other => Err(Error::Argument(format!("unknown corpus format {other:?}"))),
        }
    }
}

fn read_jsonl<T, F>(path: &Path, mut convert: F) -> Result<Vec<T>>
where
    F: FnMut(&str, usize) -> Result<T>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = convert(&line, i + 1).map_err(|e| match e {
            e @ (Error::Parse { .. } | Error::Io { .. }) => e,
            other => Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: other.to_string(),
            },
        })?;
        out.push(record);
    }
    Ok(out)
}

fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        message: e.to_string(),
    })
}

/// Loads a corpus, converting segment-level files on the fly.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Essay>> {
    let path = path.as_ref();
    match format {
        CorpusFormat::Essay => read_jsonl(path, |line, no| {
            parse_line::<EssayRecord>(path, line, no)?.into_essay()
        }),
        CorpusFormat::Segment => read_jsonl(path, |line, no| {
            segment_to_sentence(&parse_line(path, line, no)?)
        }),
    }
}

/// Loads an essay file whose trees are predictions (no single-root check).
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Essay>> {
    let path = path.as_ref();
    read_jsonl(path, |line, no| {
        parse_line::<EssayRecord>(path, line, no)?.into_essay_unchecked()
    })
}

pub fn load_segment_corpus(path: impl AsRef<Path>) -> Result<Vec<SegmentAnnotatedEssay>> {
    let path = path.as_ref();
    read_jsonl(path, |line, no| parse_line(path, line, no))
}

pub fn write_corpus<W: Write>(mut w: W, essays: &[Essay]) -> Result<()> {
    for e in essays {
        serde_json::to_writer(&mut w, &EssayRecord::from_essay(e))?;
        w.write_all(b"\n").map_err(|err| Error::io("<writer>", err))?;
    }
    Ok(())
}

/// Writes via a temporary sibling file and renames it into place.
pub fn save_corpus(path: impl AsRef<Path>, essays: &[Essay]) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| write_corpus(w, essays))
}

pub(crate) fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

pub(crate) fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let tmp = path.with_extension("tmp~");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Whitespace tokens of `text` with their character spans.
fn tokens_with_spans(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut char_idx = 0;
    for (byte, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some((cs, bs)) = start.take() {
                out.push((cs, char_idx, &text[bs..byte]));
            }
        } else if start.is_none() {
            start = Some((char_idx, byte));
        }
        char_idx += 1;
    }
    if let Some((cs, bs)) = start {
        out.push((cs, char_idx, &text[bs..]));
    }
    out
}

/// Converts a segment-annotated essay to sentence level.
///
/// A sentence with one AC becomes a whole-sentence AC. A sentence with
/// `k >= 2` ACs is split into `k` sentences at token boundaries: each piece
/// runs from the token after the previous AC's last token (or the sentence
/// start) through the last token its AC touches; trailing tokens after the
/// last AC stay with the last piece. Split pieces are re-joined with single
/// spaces. Sentences without ACs become non-ACs.
pub fn segment_to_sentence(e: &SegmentAnnotatedEssay) -> Result<Essay> {
    let id = &e.essay_id;
    let n_seg = e.segments.len();
    let mut by_sentence: Vec<Vec<usize>> = vec![Vec::new(); e.sentences.len()];
    for (k, seg) in e.segments.iter().enumerate() {
        let Some(text) = e.sentences.get(seg.sent) else {
            return Err(Error::validation(
                id,
                format!("segment {k} refers to sentence {} of {}", seg.sent, e.sentences.len()),
            ));
        };
        let len = text.chars().count();
        if seg.start >= seg.end || seg.end > len {
            return Err(Error::validation(
                id,
                format!(
                    "segment {k} span {}..{} crosses the boundary of sentence {} ({len} chars)",
                    seg.start, seg.end, seg.sent
                ),
            ));
        }
        if let Some(h) = seg.head_segment {
            if h >= n_seg || h == k {
                return Err(Error::validation(id, format!("segment {k} has invalid head {h}")));
            }
        }
        by_sentence[seg.sent].push(k);
    }

    let mut texts = Vec::new();
    let mut seg_to_sentence = vec![0usize; n_seg];
    for (s, text) in e.sentences.iter().enumerate() {
        let segs = &mut by_sentence[s];
        segs.sort_by_key(|&k| e.segments[k].start);
        for pair in segs.windows(2) {
            if e.segments[pair[0]].end > e.segments[pair[1]].start {
                return Err(Error::validation(
                    id,
                    format!("segments {} and {} overlap in sentence {s}", pair[0], pair[1]),
                ));
            }
        }
        if segs.len() <= 1 {
            if let Some(&k) = segs.first() {
                seg_to_sentence[k] = texts.len();
            }
            texts.push(text.clone());
            continue;
        }
        let tokens = tokens_with_spans(text);
        let mut first = 0;
        for (pos, &k) in segs.iter().enumerate() {
            let seg = &e.segments[k];
            let last = tokens
                .iter()
                .rposition(|&(ts, te, _)| ts < seg.end && te > seg.start)
                .ok_or_else(|| Error::validation(id, format!("segment {k} covers no token")))?;
            let last = if pos + 1 == segs.len() {
                tokens.len() - 1
            } else {
                last
            };
            if last < first {
                return Err(Error::validation(
                    id,
                    format!("segment {k} shares its final token with the previous AC"),
                ));
            }
            seg_to_sentence[k] = texts.len();
            let piece: Vec<&str> = tokens[first..=last].iter().map(|t| t.2).collect();
            texts.push(piece.join(" "));
            first = last + 1;
        }
    }

    let mut head: Vec<usize> = (0..texts.len()).collect();
    for (k, seg) in e.segments.iter().enumerate() {
        if let Some(h) = seg.head_segment {
            head[seg_to_sentence[k]] = seg_to_sentence[h];
        }
    }
    let tree = ArgTree::from_heads(head).map_err(|err| Error::validation(id, err.to_string()))?;
    Essay::new(id.clone(), texts, tree, SourceCorpus::OutDomain)
}

pub fn passes_policy(e: &Essay, policy: &SamplingPolicy) -> bool {
    e.len() <= policy.max_sentences && e.non_ac_count() <= policy.max_non_acs
}

/// Keeps essays within both limits, inclusive, in input order.
pub fn selective_sample(essays: &[Essay], policy: &SamplingPolicy) -> Vec<Essay> {
    essays
        .iter()
        .filter(|e| passes_policy(e, policy))
        .cloned()
        .collect()
}

pub fn build_training_set(
    in_domain: &[Essay],
    out_domain: &[Essay],
    setting: TrainingSetting,
    policy: &SamplingPolicy,
) -> Vec<Essay> {
    let mut set = in_domain.to_vec();
    match setting {
        TrainingSetting::InDomain => {}
        TrainingSetting::PlusOutDomain => set.extend_from_slice(out_domain),
        TrainingSetting::SelectiveSampling => set.extend(selective_sample(out_domain, policy)),
    }
    set
}

/// Seeded train/test partition. The train side holds
/// `round(len * train_fraction)` essays; both sides keep corpus order.
pub fn split_train_test(
    essays: &[Essay],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Essay>, Vec<Essay>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (essays.len() as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..essays.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; essays.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = essays
        .iter()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(e, _)| e.clone()).collect(),
        test.into_iter().map(|(e, _)| e.clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn essay(id: &str, heads: Vec<usize>) -> Essay {
        let texts = (0..heads.len()).map(|i| format!("sentence {i}")).collect();
        Essay::new(id, texts, ArgTree::from_heads(heads).unwrap(), SourceCorpus::OutDomain).unwrap()
    }

    /// Chain of ACs followed by `non_acs` isolated sentences.
    fn sized(id: &str, n: usize, non_acs: usize) -> Essay {
        let acs = n - non_acs;
        let heads = (0..n)
            .map(|i| if i == 0 || i >= acs { i } else { i - 1 })
            .collect();
        essay(id, heads)
    }

    #[test]
    fn sampling_boundaries() {
        let p = SamplingPolicy::default();
        assert!(!passes_policy(&sized("a", 18, 0), &p));
        assert!(passes_policy(&sized("b", 17, 2), &p));
        assert!(!passes_policy(&sized("c", 10, 3), &p));
        let pool = vec![sized("a", 18, 0), sized("b", 17, 2), sized("c", 5, 1)];
        let kept = selective_sample(&pool, &p);
        let ids: Vec<_> = kept.iter().map(|e| e.essay_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
    }

    #[test]
    fn training_set_settings() {
        let inn: Vec<_> = (0..3).map(|i| sized(&format!("i{i}"), 4, 0)).collect();
        let out = vec![sized("o1", 20, 0), sized("o2", 6, 1)];
        let p = SamplingPolicy::default();
        assert_eq!(build_training_set(&inn, &out, TrainingSetting::InDomain, &p).len(), 3);
        assert_eq!(build_training_set(&inn, &out, TrainingSetting::PlusOutDomain, &p).len(), 5);
        assert_eq!(build_training_set(&inn, &out, TrainingSetting::SelectiveSampling, &p).len(), 4);
        assert_eq!(build_training_set(&inn, &[], TrainingSetting::SelectiveSampling, &p), inn);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pool: Vec<_> = (0..10).map(|i| sized(&format!("e{i}"), 3, 0)).collect();
        let (tr, te) = split_train_test(&pool, 0.8, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split_train_test(&pool, 0.8, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert!(split_train_test(&pool, 1.0, 7).is_err());
        let big: Vec<_> = (0..434).map(|i| sized(&format!("e{i}"), 2, 0)).collect();
        let (tr, te) = split_train_test(&big, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (347, 87));
    }

    #[test]
    fn single_ac_sentence_kept_whole() {
        let e = SegmentAnnotatedEssay {
            essay_id: "p".into(),
            sentences: vec![
                "In short, cities need parks.".into(),
                "Parks  reduce stress for residents.".into(),
                "Thanks for reading.".into(),
            ],
            segments: vec![
                Segment { sent: 0, start: 10, end: 27, head_segment: None },
                Segment { sent: 1, start: 0, end: 20, head_segment: Some(0) },
            ],
        };
        let out = segment_to_sentence(&e).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.sentences[1].text, "Parks  reduce stress for residents.");
        assert_eq!(out.gold.heads(), &[0, 0, 2]);
        assert!(!out.sentences[2].is_ac);
    }

    #[test]
    fn span_past_sentence_end_is_rejected() {
        let e = SegmentAnnotatedEssay {
            essay_id: "bad".into(),
            sentences: vec!["Short.".into()],
            segments: vec![Segment { sent: 0, start: 0, end: 40, head_segment: None }],
        };
        let err = segment_to_sentence(&e).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn record_with_out_of_range_head_fails() {
        let rec = EssayRecord {
            essay_id: "x".into(),
            corpus: SourceCorpus::InDomain,
            sentences: vec!["a".into(), "b".into()],
            head: vec![0, 2],
            relation: vec![None, None],
        };
        assert!(matches!(rec.into_essay(), Err(Error::Validation { .. })));
    }
}
