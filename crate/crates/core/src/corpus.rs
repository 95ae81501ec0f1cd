//! Tokenization, vocabularies, parallel-corpus loading and padded batches.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::AttentionMaskSet;
use crate::rng::Rng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '-'];

/// Lowercase, split on whitespace, and detach punctuation as one-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if PUNCT.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Tokens seen at least `min_freq` times, ordered by descending count then lexically.
    pub fn build<'a, I>(sentences: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_freq == 0 {
            return Err(Error::config("min_freq must be at least 1"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !RESERVED.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Ok(Self::from_tokens(tokens, min_freq))
    }

    /// Rebuilds a vocabulary from its id-ordered token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index, min_freq }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i >= RESERVED.len() => i,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String], add_bos_eos: bool) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        if add_bos_eos {
            ids.push(BOS);
        }
        ids.extend(tokens.iter().map(|t| self.id(t)));
        if add_bos_eos {
            ids.push(EOS);
        }
        ids
    }

    /// Space-joined tokens with PAD, BOS, EOS and UNK dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        self.decode_tokens(ids).join(" ")
    }

    pub fn decode_tokens(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= RESERVED.len())
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub origin: String,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.src.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.tgt.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    /// One `source<TAB>target` pair per line.
    Tsv(PathBuf),
    /// Two line-aligned files.
    Pair(PathBuf, PathBuf),
}

impl fmt::Display for CorpusSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusSource::Tsv(p) => write!(f, "tsv:{}", p.display()),
            CorpusSource::Pair(s, t) => write!(f, "pair:{}+{}", s.display(), t.display()),
        }
    }
}

/// Pairs removed by the length filter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropReport {
    pub total: usize,
    pub max_tokens: usize,
    /// `(line, source tokens, target tokens)`
    pub dropped: Vec<(usize, usize, usize)>,
}

impl DropReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "total={}\nkept={}\ndropped={}\nmax_tokens={}\n",
            self.total,
            self.total - self.dropped.len(),
            self.dropped.len(),
            self.max_tokens
        );
        for (line, a, b) in &self.dropped {
            s.push_str(&format!("line {line}: source {a} tokens, target {b} tokens\n"));
        }
        s
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Tokenized pairs in file order, before filtering.
pub fn read_pairs(source: &CorpusSource) -> Result<Vec<SentencePair>> {
    match source {
        CorpusSource::Tsv(path) => {
            let text = read_text(path)?;
            let mut pairs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 {
                    return Err(Error::CorpusLine {
                        path: path.clone(),
                        line: i + 1,
                        msg: format!("expected one tab separator, found {}", fields.len() - 1),
                    });
                }
                pairs.push(SentencePair { src: tokenize(fields[0]), tgt: tokenize(fields[1]), line: i + 1 });
            }
            Ok(pairs)
        }
        CorpusSource::Pair(src, tgt) => {
            let a = read_text(src)?;
            let b = read_text(tgt)?;
            let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
            if la.len() != lb.len() {
                return Err(Error::Corpus(format!(
                    "{} has {} lines but {} has {}",
                    src.display(),
                    la.len(),
                    tgt.display(),
                    lb.len()
                )));
            }
            Ok(la
                .iter()
                .zip(&lb)
                .enumerate()
                .filter(|(_, (s, t))| !s.trim().is_empty() || !t.trim().is_empty())
                .map(|(i, (s, t))| SentencePair { src: tokenize(s), tgt: tokenize(t), line: i + 1 })
                .collect())
        }
    }
}

/// Drops pairs with an empty side or a side longer than `max_len - 2` tokens.
pub fn filter_pairs(pairs: Vec<SentencePair>, max_len: usize) -> (Vec<SentencePair>, DropReport) {
    let max_tokens = max_len.saturating_sub(2);
    let mut report = DropReport { total: pairs.len(), max_tokens, dropped: Vec::new() };
    let kept = pairs
        .into_iter()
        .filter(|p| {
            let ok = !p.src.is_empty()
                && !p.tgt.is_empty()
                && p.src.len() <= max_tokens
                && p.tgt.len() <= max_tokens;
            if !ok {
                report.dropped.push((p.line, p.src.len(), p.tgt.len()));
            }
            ok
        })
        .collect();
    (kept, report)
}

/// Seeded shuffle, then the first `round(ratio * n)` pairs train.
pub fn split_pairs(mut pairs: Vec<SentencePair>, ratio: f64, rng: &mut Rng) -> Result<(Vec<SentencePair>, Vec<SentencePair>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("split ratio must be in [0, 1], got {ratio}")));
    }
    rng.shuffle(&mut pairs);
    let n_train = (ratio * pairs.len() as f64).round() as usize;
    let test = pairs.split_off(n_train);
    Ok((pairs, test))
}

/// Reads, filters and splits a parallel corpus.
pub fn load_parallel(
    source: &CorpusSource,
    max_len: usize,
    split_ratio: f64,
    rng: &mut Rng,
) -> Result<(ParallelCorpus, ParallelCorpus, DropReport)> {
    let pairs = read_pairs(source)?;
    let (kept, report) = filter_pairs(pairs, max_len);
    if kept.is_empty() {
        return Err(Error::Corpus(format!("{source}: no usable sentence pairs")));
    }
    let (train, test) = split_pairs(kept, split_ratio, rng)?;
    let origin = source.to_string();
    Ok((
        ParallelCorpus { pairs: train, origin: origin.clone() },
        ParallelCorpus { pairs: test, origin },
        report,
    ))
}

/// One padded mini-batch. Id matrices are row-major `[batch, len]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<usize>,
    /// BOS-prefixed decoder input.
    pub tgt_in: Vec<usize>,
    /// EOS-suffixed decoder target.
    pub tgt_out: Vec<usize>,
    /// Encoder self-attention masks; cross-attention reuses their padding.
    pub src_masks: AttentionMaskSet,
    /// Decoder self-attention masks.
    pub tgt_masks: AttentionMaskSet,
}

fn pad_rows(rows: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let mut out = vec![PAD; rows.len() * len];
    for (r, row) in rows.iter().enumerate() {
        out[r * len..r * len + row.len()].copy_from_slice(row);
    }
    (len, out)
}

impl Batch {
    /// Pads unframed source ids and unframed target ids; the target gains BOS/EOS here.
    pub fn from_ids(src: &[Vec<usize>], tgt: &[Vec<usize>], zero_diag: bool) -> Result<Batch> {
        if src.len() != tgt.len() || src.is_empty() {
            return Err(Error::shape(format!("batch of {} sources and {} targets", src.len(), tgt.len())));
        }
        let tin: Vec<Vec<usize>> = tgt.iter().map(|t| std::iter::once(BOS).chain(t.iter().copied()).collect()).collect();
        let tout: Vec<Vec<usize>> = tgt.iter().map(|t| t.iter().copied().chain(std::iter::once(EOS)).collect()).collect();
        Self::from_decoder_rows(src, &tin, Some(&tout), zero_diag)
    }

    /// Pads already-framed decoder inputs; targets default to PAD.
    pub fn from_decoder_rows(
        src: &[Vec<usize>],
        tgt_in: &[Vec<usize>],
        tgt_out: Option<&[Vec<usize>]>,
        zero_diag: bool,
    ) -> Result<Batch> {
        let batch = src.len();
        let (src_len, src_ids) = pad_rows(src);
        let (tgt_len, tin) = pad_rows(tgt_in);
        let tout = match tgt_out {
            Some(rows) => {
                let (l, t) = pad_rows(rows);
                if l != tgt_len {
                    return Err(Error::shape("decoder input and output lengths differ"));
                }
                t
            }
            None => vec![PAD; batch * tgt_len],
        };
        let src_masks = AttentionMaskSet {
            padding: Some(AttentionMaskSet::padding_from_ids(&src_ids, batch, src_len, PAD)),
            causal: None,
            zero_diag: zero_diag.then(|| AttentionMaskSet::zero_diag_mask(src_len)),
        };
        let tgt_masks = AttentionMaskSet {
            padding: Some(AttentionMaskSet::padding_from_ids(&tin, batch, tgt_len, PAD)),
            causal: Some(AttentionMaskSet::causal_mask(tgt_len)),
            zero_diag: zero_diag.then(|| AttentionMaskSet::zero_diag_mask(tgt_len)),
        };
        Ok(Batch { batch, src_len, tgt_len, src: src_ids, tgt_in: tin, tgt_out: tout, src_masks, tgt_masks })
    }

    /// Cross-attention masks: source padding only.
    pub fn cross_masks(&self) -> AttentionMaskSet {
        AttentionMaskSet { padding: self.src_masks.padding.clone(), causal: None, zero_diag: None }
    }

    /// Number of non-PAD decoder targets.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|&&t| t != PAD).count()
    }
}

/// Shuffles by `rng` and cuts into batches of `batch_size` (the last may be smaller).
pub fn make_batches(
    corpus: &ParallelCorpus,
    v_src: &Vocabulary,
    v_tgt: &Vocabulary,
    batch_size: usize,
    zero_diag: bool,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let src: Vec<Vec<usize>> = chunk.iter().map(|&i| v_src.encode(&corpus.pairs[i].src, false)).collect();
            let tgt: Vec<Vec<usize>> = chunk.iter().map(|&i| v_tgt.encode(&corpus.pairs[i].tgt, false)).collect();
            Batch::from_ids(&src, &tgt, zero_diag)
        })
        .collect()
}

const SUBJECTS: [(&str, &str); 8] = [
    ("der mann", "the man"),
    ("die frau", "the woman"),
    ("das kind", "the child"),
    ("ein hund", "a dog"),
    ("eine katze", "a cat"),
    ("der junge", "the boy"),
    ("das mädchen", "the girl"),
    ("ein alter mann", "an old man"),
];
const VERBS: [(&str, &str); 8] = [
    ("sieht", "sees"),
    ("trägt", "carries"),
    ("hält", "holds"),
    ("sucht", "looks for"),
    ("malt", "paints"),
    ("findet", "finds"),
    ("wirft", "throws"),
    ("kauft", "buys"),
];
const OBJECTS: [(&str, &str); 8] = [
    ("einen ball", "a ball"),
    ("ein buch", "a book"),
    ("eine blume", "a flower"),
    ("einen hut", "a hat"),
    ("ein bild", "a picture"),
    ("einen stein", "a stone"),
    ("eine tasche", "a bag"),
    ("ein fahrrad", "a bicycle"),
];
const PLACES: [(&str, &str); 6] = [
    ("im park", "in the park"),
    ("am strand", "on the beach"),
    ("auf der straße", "on the street"),
    ("im garten", "in the garden"),
    ("vor dem haus", "in front of the house"),
    ("in der stadt", "in the city"),
];

/// Deterministic German-like to English-like sentence pairs built from a
/// small phrase lexicon. Distinct pairs up to 8*8*8*7 = 3584.
pub fn toy_corpus(n_pairs: usize, seed: u64) -> Vec<(String, String)> {
    let total = SUBJECTS.len() * VERBS.len() * OBJECTS.len() * (PLACES.len() + 1);
    let mut codes: Vec<usize> = (0..total).collect();
    Rng::keyed(seed, "toy-corpus").shuffle(&mut codes);
    codes
        .into_iter()
        .cycle()
        .take(n_pairs)
        .map(|c| {
            let (s, v, o, p) = (c % 8, (c / 8) % 8, (c / 64) % 8, c / 512);
            let (mut de, mut en) = (
                format!("{} {} {}", SUBJECTS[s].0, VERBS[v].0, OBJECTS[o].0),
                format!("{} {} {}", SUBJECTS[s].1, VERBS[v].1, OBJECTS[o].1),
            );
            if p < PLACES.len() {
                de = format!("{} {} {} {}", SUBJECTS[s].0, VERBS[v].0, OBJECTS[o].0, PLACES[p].0);
                en.push(' ');
                en.push_str(PLACES[p].1);
            }
            (format!("{de} ."), format!("{en} ."))
        })
        .collect()
}

/// `toy_corpus` as TSV text.
pub fn toy_corpus_tsv(n_pairs: usize, seed: u64) -> String {
    toy_corpus(n_pairs, seed).into_iter().map(|(a, b)| format!("{a}\t{b}\n")).collect()
}

/// `toy_corpus`, tokenized, as an in-memory corpus with line numbers from 1.
pub fn toy_parallel(n_pairs: usize, seed: u64) -> ParallelCorpus {
    let pairs = toy_corpus(n_pairs, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (s, t))| SentencePair { src: tokenize(&s), tgt: tokenize(&t), line: i + 1 })
        .collect();
    ParallelCorpus { pairs, origin: format!("toy({n_pairs}, seed {seed})") }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("The animal did not cross the street because it was too tired"),
            toks("the animal did not cross the street because it was too tired")
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Don't stop."), toks("don ' t stop ."));
        assert_eq!(tokenize("  a\t\tb  (c) "), toks("a b ( c )"));
    }

    #[test]
    fn min_freq_threshold() {
        let s = vec![toks("a a b")];
        let v = Vocabulary::build(s.iter().map(Vec::as_slice), 2).unwrap();
        assert_ne!(v.id("a"), UNK);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.len(), 5);
        assert!(Vocabulary::build(s.iter().map(Vec::as_slice), 0).is_err());
    }

    #[test]
    fn framing_and_round_trip() {
        let s = vec![toks("the cat sat")];
        let v = Vocabulary::build(s.iter().map(Vec::as_slice), 1).unwrap();
        let ids = v.encode(&s[0], true);
        assert_eq!((ids[0], *ids.last().unwrap()), (BOS, EOS));
        assert_eq!(v.decode(&ids), "the cat sat");
        assert_eq!(v.decode(&v.encode(&toks("the dog"), false)), "the");
    }

    #[test]
    fn reserved_tokens_in_text_are_not_special() {
        let s = vec![toks("<pad> x")];
        let v = Vocabulary::build(s.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(v.id("<pad>"), UNK);
        assert_eq!(v.token(PAD), Some("<pad>"));
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ten_pairs_split_eight_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", &toy_corpus_tsv(10, 1));
        let src = CorpusSource::Tsv(p);
        let (a, b, rep) = load_parallel(&src, 256, 0.8, &mut Rng::new(5)).unwrap();
        assert_eq!((a.len(), b.len(), rep.dropped.len()), (8, 2, 0));
        let (a2, b2, _) = load_parallel(&src, 256, 0.8, &mut Rng::new(5)).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn long_pair_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let long = vec!["w"; 1000].join(" ");
        let p = write(dir.path(), "c.tsv", &format!("a b\tc d\n{long}\tx\n"));
        let (a, b, rep) = load_parallel(&CorpusSource::Tsv(p), 256, 1.0, &mut Rng::new(1)).unwrap();
        assert_eq!((a.len(), b.len()), (1, 0));
        assert_eq!(rep.dropped, vec![(2, 1000, 1)]);
        assert!(rep.to_text().contains("dropped=1"));
    }

    #[test]
    fn extra_tab_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", "a\tb\nc\td\te\n");
        match read_pairs(&CorpusSource::Tsv(p)) {
            Err(Error::CorpusLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unequal_pair_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.txt", "a\nb\n");
        let t = write(dir.path(), "t.txt", "a\n");
        assert!(matches!(read_pairs(&CorpusSource::Pair(s, t)), Err(Error::Corpus(_))));
    }

    #[test]
    fn missing_file_is_io() {
        let r = read_pairs(&CorpusSource::Tsv("/nonexistent/c.tsv".into()));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    fn small_corpus(n: usize) -> (ParallelCorpus, Vocabulary, Vocabulary) {
        let pairs = toy_corpus(n, 3)
            .iter()
            .enumerate()
            .map(|(i, (a, b))| SentencePair { src: tokenize(a), tgt: tokenize(b), line: i + 1 })
            .collect();
        let c = ParallelCorpus { pairs, origin: "toy".into() };
        let vs = Vocabulary::build(c.sources(), 1).unwrap();
        let vt = Vocabulary::build(c.targets(), 1).unwrap();
        (c, vs, vt)
    }

    #[test]
    fn batches_partition_and_shift() {
        let (c, vs, vt) = small_corpus(5);
        let bs = make_batches(&c, &vs, &vt, 2, false, &mut Rng::new(1)).unwrap();
        assert_eq!(bs.iter().map(|b| b.batch).collect::<Vec<_>>(), vec![2, 2, 1]);
        for b in &bs {
            assert!(b.src.iter().all(|&i| i < vs.len()));
            assert!(b.tgt_out.iter().all(|&i| i < vt.len()));
            for r in 0..b.batch {
                let tin = &b.tgt_in[r * b.tgt_len..(r + 1) * b.tgt_len];
                let tout = &b.tgt_out[r * b.tgt_len..(r + 1) * b.tgt_len];
                assert_eq!(tin[0], BOS);
                let n = tout.iter().position(|&t| t == EOS).unwrap();
                assert_eq!(&tin[1..=n], &tout[..n]);
                assert!(tout[n + 1..].iter().all(|&t| t == PAD));
            }
            assert!(b.src_masks.zero_diag.is_none());
        }
    }

    #[test]
    fn epoch_order_follows_seed() {
        let (c, vs, vt) = small_corpus(20);
        let first = |seed| make_batches(&c, &vs, &vt, 4, true, &mut Rng::new(seed)).unwrap()[0].src.clone();
        assert_eq!(first(1), first(1));
        assert_ne!(first(1), first(2));
    }

    #[test]
    fn toy_corpus_is_deterministic_and_distinct() {
        let a = toy_corpus(200, 9);
        assert_eq!(a, toy_corpus(200, 9));
        let mut srcs: Vec<&String> = a.iter().map(|p| &p.0).collect();
        srcs.sort();
        srcs.dedup();
        assert_eq!(srcs.len(), 200);
    }
}
