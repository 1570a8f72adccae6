//! Corpus BLEU over whitespace tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Clipped n-gram precisions in percent, n = 1..4.
    pub precisions: [f64; MAX_ORDER],
    pub bp: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Matched and total n-gram counts for one pair.
fn sentence_stats(hyp: &str, reference: &str) -> ([usize; MAX_ORDER], [usize; MAX_ORDER], usize, usize) {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        totals[n - 1] = h.len().saturating_sub(n - 1);
        matches[n - 1] = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
    }
    (matches, totals, h.len(), r.len())
}

fn combine(matches: [usize; MAX_ORDER], totals: [usize; MAX_ORDER], sys_len: usize, ref_len: usize) -> BleuScore {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = 100.0 * matches[n] as f64 / totals[n] as f64;
        }
    }
    let bp = if sys_len == 0 {
        0.0
    } else if sys_len < ref_len {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    } else {
        1.0
    };
    let score = if matches.contains(&0) {
        0.0
    } else {
        let log_mean = (0..MAX_ORDER)
            .map(|n| (matches[n] as f64 / totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * bp * log_mean.exp()
    };
    BleuScore { score, precisions, bp, sys_len, ref_len, matches, totals }
}

/// Corpus-level BLEU without smoothing: any n-gram order with zero matches
/// yields 0.
pub fn corpus_bleu(hyps: &[String], refs: &[String]) -> Result<BleuScore> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    let (mut sys, mut rl) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (m, t, hl, rlen) = sentence_stats(h, r);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        sys += hl;
        rl += rlen;
    }
    Ok(combine(matches, totals, sys, rl))
}

/// Sentence BLEU with add-one smoothing on orders above one; diagnostics only.
pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    let (m, t, hl, rl) = sentence_stats(hyp, reference);
    if hl == 0 || m[0] == 0 {
        return 0.0;
    }
    let mut log_mean = (m[0] as f64 / t[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_mean += ((m[n] + 1) as f64 / (t[n] + 1) as f64).ln();
    }
    let bp = if hl < rl { (1.0 - rl as f64 / hl as f64).exp() } else { 1.0 };
    100.0 * bp * (log_mean / MAX_ORDER as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identity_is_100() {
        let r = s(&["a b c d e", "the cat sat on the mat"]);
        assert!((corpus_bleu(&r, &r).unwrap().score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn brevity_example() {
        let b = corpus_bleu(&s(&["a b c d"]), &s(&["a b c d e"])).unwrap();
        assert!((b.score - 77.880078).abs() < 1e-4, "{}", b.score);
        assert_eq!(b.precisions, [100.0; 4]);
    }

    #[test]
    fn no_four_gram_is_zero() {
        let b = corpus_bleu(&s(&["a b c x"]), &s(&["a b c d"])).unwrap();
        assert_eq!(b.score, 0.0);
        assert!(corpus_bleu(&s(&["a"]), &s(&[])).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let h = s(&["a b c d", "x y z w v", "p q r s t u"]);
        let r = s(&["a b c e", "x y z w v", "p q r s u t"]);
        let a = corpus_bleu(&h, &r).unwrap().score;
        let hp = s(&["p q r s t u", "a b c d", "x y z w v"]);
        let rp = s(&["p q r s u t", "a b c e", "x y z w v"]);
        assert_eq!(a, corpus_bleu(&hp, &rp).unwrap().score);
    }

    #[test]
    fn clipping() {
        let b = corpus_bleu(&s(&["the the the the"]), &s(&["the cat"])).unwrap();
        assert_eq!(b.matches[0], 1);
        assert!(sentence_bleu("a b c", "a b c") > 99.9);
    }
}
