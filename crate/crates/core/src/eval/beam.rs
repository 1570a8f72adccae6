//! Length-normalized beam search over any next-token scorer.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Produces next-token log-probabilities for a batch of prefixes.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn step(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { beam_size: 10, max_len: 200, length_penalty: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens after the start prefix, without the final eos.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / len^penalty`, where len counts the eos when finished.
    pub score: f64,
    pub truncated: bool,
}

fn normalized(log_prob: f64, len: usize, penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(penalty)
}

pub fn beam_search(
    scorer: &mut dyn StepScorer,
    start: &[usize],
    eos: usize,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(Error::Contract("beam_size and max_len must be >= 1".into()));
    }
    let v = scorer.vocab_size();
    let mut live: Vec<(Vec<usize>, f64)> = vec![(start.to_vec(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..cfg.max_len {
        let prefixes: Vec<Vec<usize>> = live.iter().map(|(p, _)| p.clone()).collect();
        let lps = scorer.step(&prefixes)?;
        if lps.len() != live.len() || lps.iter().any(|r| r.len() != v) {
            return Err(Error::Shape("scorer returned wrong log-prob shape".into()));
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * v);
        for (h, row) in lps.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((live[h].1 + lp, tok, h));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let gen_len = step + 1;
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (rank, &(lp, tok, h)) in cands.iter().enumerate() {
            if next.len() >= cfg.beam_size {
                break;
            }
            if tok == eos {
                if rank < cfg.beam_size {
                    finished.push(Hypothesis {
                        tokens: live[h].0[start.len()..].to_vec(),
                        log_prob: lp,
                        score: normalized(lp, gen_len, cfg.length_penalty),
                        truncated: false,
                    });
                }
                continue;
            }
            let mut p = live[h].0.clone();
            p.push(tok);
            next.push((p, lp));
        }
        live = next;
        if live.is_empty() || finished.len() >= cfg.beam_size {
            break;
        }
    }
    let best = |hs: Vec<Hypothesis>| {
        hs.into_iter().reduce(|a, b| if b.score > a.score { b } else { a })
    };
    if let Some(h) = best(finished) {
        return Ok(h);
    }
    let unfinished = live
        .into_iter()
        .map(|(p, lp)| {
            let tokens = p[start.len()..].to_vec();
            let score = normalized(lp, tokens.len(), cfg.length_penalty);
            Hypothesis { tokens, log_prob: lp, score, truncated: true }
        })
        .collect();
    best(unfinished).ok_or_else(|| Error::Contract("beam search found no hypothesis".into()))
}

/// Stepwise argmax, lowest id on ties, stopping at eos or `max_len`.
pub fn greedy_decode(scorer: &mut dyn StepScorer, start: &[usize], eos: usize, max_len: usize) -> Result<Hypothesis> {
    let mut prefix = start.to_vec();
    let mut lp_sum = 0.0;
    for _ in 0..max_len {
        let row = scorer.step(std::slice::from_ref(&prefix))?.remove(0);
        let (tok, lp) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        lp_sum += lp;
        if tok == eos {
            let tokens = prefix[start.len()..].to_vec();
            let n = tokens.len() + 1;
            return Ok(Hypothesis { tokens, log_prob: lp_sum, score: lp_sum / n as f64, truncated: false });
        }
        prefix.push(tok);
    }
    let tokens = prefix[start.len()..].to_vec();
    let n = tokens.len();
    Ok(Hypothesis { tokens, log_prob: lp_sum, score: normalized(lp_sum, n, 1.0), truncated: true })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::RngStream;
    use proptest::prelude::*;

    /// Log-probabilities depend on the full prefix through a hash.
    pub(crate) struct TableScorer {
        pub v: usize,
        pub seed: u64,
        pub calls: usize,
    }

    impl StepScorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn step(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            self.calls += 1;
            Ok(prefixes
                .iter()
                .map(|p| {
                    let mut key = self.seed;
                    for &t in p {
                        key = crate::tensor::mix64(key ^ (t as u64 + 1));
                    }
                    let mut rng = RngStream::new(key);
                    let logits: Vec<f64> = (0..self.v).map(|_| 2.0 * rng.normal()).collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z = logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
                    logits.iter().map(|x| x - z).collect()
                })
                .collect())
        }
    }

    /// Best eos-terminated sequence of at most `max_len` tokens by exhaustive search.
    fn exhaustive(s: &mut TableScorer, eos: usize, max_len: usize, pen: f64) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut frontier = vec![(vec![0usize], 0.0)];
        for len in 1..=max_len {
            let mut next = Vec::new();
            for (p, lp) in &frontier {
                let row = s.step(std::slice::from_ref(p)).unwrap().remove(0);
                for (t, &x) in row.iter().enumerate() {
                    if t == eos {
                        let sc = normalized(lp + x, len, pen);
                        if sc > best.1 {
                            best = (p[1..].to_vec(), sc);
                        }
                    } else {
                        let mut q = p.clone();
                        q.push(t);
                        next.push((q, lp + x));
                    }
                }
            }
            frontier = next;
        }
        best
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..50 {
            let mut s = TableScorer { v: 5, seed, calls: 0 };
            let cfg = BeamConfig { beam_size: 1, max_len: 8, length_penalty: 1.0 };
            let b = beam_search(&mut s, &[0], 4, &cfg).unwrap();
            let g = greedy_decode(&mut s, &[0], 4, 8).unwrap();
            assert_eq!(b.tokens, g.tokens);
            assert_eq!(b.truncated, g.truncated);
        }
    }

    #[test]
    fn full_beam_matches_exhaustive() {
        for seed in 0..100 {
            let mut s = TableScorer { v: 3, seed, calls: 0 };
            let cfg = BeamConfig { beam_size: 9, max_len: 2, length_penalty: 1.0 };
            let b = beam_search(&mut s, &[0], 2, &cfg).unwrap();
            let (tokens, score) = exhaustive(&mut s, 2, 2, 1.0);
            assert_eq!(b.tokens, tokens);
            assert!((b.score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_flag() {
        struct NeverEos;
        impl StepScorer for NeverEos {
            fn vocab_size(&self) -> usize {
                2
            }
            fn step(&mut self, p: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
                Ok(p.iter().map(|_| vec![0.0, f64::NEG_INFINITY]).collect())
            }
        }
        let cfg = BeamConfig { beam_size: 3, max_len: 4, length_penalty: 1.0 };
        let h = beam_search(&mut NeverEos, &[], 1, &cfg).unwrap();
        assert!(h.truncated);
        assert_eq!(h.tokens, vec![0; 4]);
    }

    proptest! {
        #[test]
        fn deterministic(seed in 0u64..1000, beam in 1usize..6) {
            let cfg = BeamConfig { beam_size: beam, max_len: 6, length_penalty: 1.0 };
            let a = beam_search(&mut TableScorer { v: 4, seed, calls: 0 }, &[0], 3, &cfg).unwrap();
            let b = beam_search(&mut TableScorer { v: 4, seed, calls: 0 }, &[0], 3, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
