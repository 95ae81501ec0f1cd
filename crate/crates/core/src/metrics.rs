//! Corpus BLEU against a single reference per candidate.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Precision used for orders with zero matches when smoothing is on.
pub const SMOOTH_FLOOR: f64 = 1e-9;

/// Count of candidate n-grams clipped by their multiplicity in the reference,
/// and the number of candidate n-grams.
pub fn modified_precision<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    assert!(n >= 1, "n-gram order must be at least 1");
    if candidate.len() < n {
        return (0, 0);
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len() + 1 - n)
}

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
    }
    m
}

pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Aggregated n-gram statistics for orders `1..=max_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats { matches: vec![0; max_n], totals: vec![0; max_n], cand_len: 0, ref_len: 0 }
    }

    pub fn add<S: AsRef<str>>(&mut self, candidate: &[S], reference: &[S]) {
        for n in 1..=self.matches.len() {
            let (m, t) = modified_precision(candidate, reference, n);
            self.matches[n - 1] += m;
            self.totals[n - 1] += t;
        }
        self.cand_len += candidate.len();
        self.ref_len += reference.len();
    }

    pub fn score(&self, smooth: bool) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let max_n = self.matches.len() as f64;
        let mut log_sum = 0.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            let p = if t == 0 { 0.0 } else { m as f64 / t as f64 };
            let p = match (p == 0.0, smooth) {
                (true, false) => return 0.0,
                (true, true) => SMOOTH_FLOOR,
                _ => p,
            };
            log_sum += p.ln() / max_n;
        }
        brevity_penalty(self.cand_len, self.ref_len) * log_sum.exp()
    }
}

pub fn corpus_stats<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<BleuStats> {
    if candidates.len() != references.len() {
        return Err(Error::Metric(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Metric("BLEU of an empty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::Metric("BLEU needs max_n of at least 1".into()));
    }
    let mut st = BleuStats::new(max_n);
    for (c, r) in candidates.iter().zip(references) {
        st.add(c, r);
    }
    Ok(st)
}

/// Corpus BLEU in `[0, 1]`; 0 whenever an order has no matches.
pub fn corpus_bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<f64> {
    Ok(corpus_stats(candidates, references, max_n)?.score(false))
}

/// Corpus BLEU with zero-match orders floored at [`SMOOTH_FLOOR`].
pub fn corpus_bleu_smoothed<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<f64> {
    Ok(corpus_stats(candidates, references, max_n)?.score(true))
}

/// Mean of the last `min(k, len)` scores.
pub fn running_average_last_k(scores: &[f64], k: usize) -> Result<f64> {
    if scores.is_empty() || k == 0 {
        return Err(Error::Metric("running average of an empty window".into()));
    }
    let tail = &scores[scores.len().saturating_sub(k)..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}
