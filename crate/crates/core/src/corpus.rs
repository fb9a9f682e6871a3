//! Raw short texts to canonical biterm streams.
//!
//! A document of `n` resolved tokens yields every index pair `i < j`, so a
//! repeated token produces duplicate or self-pair biterms and the biterm
//! count is exactly `n (n - 1) / 2`. Documents never pair across each other.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{BtmError, Result};

/// Dense, frozen token <-> id map.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an ordered token list. Duplicates are rejected.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for (line, w) in words.into_iter().enumerate() {
            let w = w.into();
            if vocab.index.contains_key(&w) {
                return Err(BtmError::parse(line + 1, format!("duplicate token {w:?}")));
            }
            vocab.index.insert(w.clone(), vocab.words.len());
            vocab.words.push(w);
        }
        Ok(vocab)
    }

    /// Counting pre-pass over tokenized documents. Tokens seen fewer than
    /// `min_freq` times are dropped; ids follow first appearance.
    pub fn build(docs: &[Vec<String>], min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for tok in docs.iter().flatten() {
            let c = counts.entry(tok.as_str()).or_insert_with(|| {
                order.push(tok.as_str());
                0
            });
            *c += 1;
        }
        let kept = order.into_iter().filter(|t| counts[t] >= min_freq.max(1));
        Vocabulary::from_words(kept).expect("first-appearance order has no duplicates")
    }

    /// Placeholder tokens `w0 .. w{size-1}` for synthetic corpora.
    pub fn synthetic(size: usize) -> Self {
        Vocabulary::from_words((0..size).map(|i| format!("w{i}"))).expect("distinct tokens")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Id of `token`, or `None` if it is not in the vocabulary.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One token per line; line `i` holds the token with id `i`.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let tok = line.trim_end_matches(['\r', '\n']);
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(BtmError::parse(i + 1, "vocabulary lines must hold one token"));
            }
            words.push(tok.to_string());
        }
        Vocabulary::from_words(words)
    }
}

/// Unordered word pair stored canonically with `w1 <= w2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Biterm {
    w1: usize,
    w2: usize,
}

impl Biterm {
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            Biterm { w1: a, w2: b }
        } else {
            Biterm { w1: b, w2: a }
        }
    }

    #[inline]
    pub fn w1(&self) -> usize {
        self.w1
    }

    #[inline]
    pub fn w2(&self) -> usize {
        self.w2
    }

    #[inline]
    pub fn is_self_pair(&self) -> bool {
        self.w1 == self.w2
    }

    #[inline]
    pub fn contains(&self, w: usize) -> bool {
        self.w1 == w || self.w2 == w
    }

    pub fn check(&self, vocab_size: usize) -> Result<()> {
        if self.w2 >= vocab_size {
            return Err(BtmError::UnknownWord { id: self.w2, vocab_size });
        }
        Ok(())
    }
}

/// A biterm stream together with its vocabulary and per-word biterm
/// frequencies `n_w`.
#[derive(Debug, Clone)]
pub struct Corpus {
    biterms: Vec<Biterm>,
    vocab: Vocabulary,
    word_biterm_count: Vec<u64>,
}

impl Corpus {
    pub fn new(biterms: Vec<Biterm>, vocab: Vocabulary) -> Result<Self> {
        let w = vocab.len();
        for b in &biterms {
            b.check(w)?;
        }
        let word_biterm_count = word_biterm_counts(&biterms, w);
        Ok(Corpus { biterms, vocab, word_biterm_count })
    }

    /// Tokenizes, builds the vocabulary and extracts biterms document by
    /// document.
    pub fn from_documents<S: AsRef<str> + Sync>(
        docs: &[S],
        stopwords: &HashSet<String>,
        min_freq: usize,
    ) -> Self {
        let tokenized: Vec<Vec<String>> =
            docs.par_iter().map(|d| tokenize_and_filter(d.as_ref(), stopwords)).collect();
        let vocab = Vocabulary::build(&tokenized, min_freq);
        let biterms: Vec<Biterm> = tokenized
            .par_iter()
            .map(|toks| extract_biterms(toks, &vocab))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        Corpus::new(biterms, vocab).expect("biterms resolved against their own vocabulary")
    }

    pub fn biterms(&self) -> &[Biterm] {
        &self.biterms
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.biterms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biterms.is_empty()
    }

    /// `n_w`: number of biterms containing `w`, a self-pair counted once.
    pub fn word_biterm_count(&self) -> &[u64] {
        &self.word_biterm_count
    }

    pub fn into_biterms(self) -> Vec<Biterm> {
        self.biterms
    }
}

/// Tallies `n_w` over a biterm slice.
pub fn word_biterm_counts(biterms: &[Biterm], vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; vocab_size];
    for b in biterms {
        counts[b.w1] += 1;
        if !b.is_self_pair() {
            counts[b.w2] += 1;
        }
    }
    counts
}

/// Lowercases, splits on anything that is not alphabetic and drops
/// stopwords.
pub fn tokenize_and_filter(raw: &str, stopwords: &HashSet<String>) -> Vec<String> {
    raw.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// All index pairs of the resolvable tokens. Fewer than two resolved tokens
/// give no biterms.
pub fn extract_biterms<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<Biterm> {
    let ids: Vec<usize> = tokens.iter().filter_map(|t| vocab.id(t.as_ref())).collect();
    let n = ids.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(Biterm::new(ids[i], ids[j]));
        }
    }
    out
}

/// Seeded shuffle followed by a cut at `round(ratio * N_B)`.
pub fn split_shuffle(biterms: &[Biterm], ratio: f64, seed: u64) -> Result<(Vec<Biterm>, Vec<Biterm>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(BtmError::InvalidRatio(ratio));
    }
    let mut all = biterms.to_vec();
    let mut rng = StdRng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let cut = (ratio * all.len() as f64).round() as usize;
    let test = all.split_off(cut);
    Ok((all, test))
}

/// Writes `w1<TAB>w2` lines.
pub fn write_biterms<W: Write>(biterms: &[Biterm], mut out: W) -> Result<()> {
    for b in biterms {
        writeln!(out, "{}\t{}", b.w1, b.w2)?;
    }
    Ok(())
}

/// Reads a biterm stream, rejecting non-canonical pairs and, when
/// `vocab_size` is given, out-of-range ids.
pub fn read_biterms<R: BufRead>(input: R, vocab_size: Option<usize>) -> Result<Vec<Biterm>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => return Err(BtmError::parse(i + 1, "expected two tab-separated ids")),
        };
        let a: usize = a.parse().map_err(|_| BtmError::parse(i + 1, format!("bad id {a:?}")))?;
        let b: usize = b.parse().map_err(|_| BtmError::parse(i + 1, format!("bad id {b:?}")))?;
        if a > b {
            return Err(BtmError::parse(i + 1, "biterm is not canonical (w1 > w2)"));
        }
        let bt = Biterm::new(a, b);
        if let Some(w) = vocab_size {
            bt.check(w)?;
        }
        out.push(bt);
    }
    Ok(out)
}

pub fn read_stopwords<R: BufRead>(input: R) -> Result<HashSet<String>> {
    let mut set = HashSet::new();
    for line in input.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            set.insert(t.to_lowercase());
        }
    }
    Ok(set)
}

/// Line `i` holds `n_w` for word id `i`.
pub fn write_word_counts<W: Write>(counts: &[u64], mut out: W) -> Result<()> {
    for c in counts {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

pub fn read_word_counts<R: BufRead>(input: R) -> Result<Vec<u64>> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let l = l?;
            l.trim().parse().map_err(|_| BtmError::parse(i + 1, format!("bad count {l:?}")))
        })
        .collect()
}
