//! Span masking for unit denoising and time/channel masking for contrastive
//! speech pretraining.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tensor::RngStream;
use crate::units::{UnitForm, UnitSequence, UnitVocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub lambda: f64,
    pub p: f64,
    pub mask_symbol: usize,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config("p", "must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// `(start, length)` after clipping to the sequence.
    pub spans: Vec<(usize, usize)>,
    pub bool_mask: Vec<bool>,
    pub total_masked: usize,
}

impl MaskSpec {
    pub fn empty(length: usize) -> Self {
        MaskSpec { spans: Vec::new(), bool_mask: vec![false; length], total_masked: 0 }
    }

    pub fn from_spans(length: usize, spans: &[(usize, usize)]) -> Result<Self> {
        let mut spec = MaskSpec::empty(length);
        for &(s, l) in spans {
            if s >= length {
                return Err(Error::Contract(format!("span start {s} outside length {length}")));
            }
            spec.push_span(s, l);
        }
        Ok(spec)
    }

    fn push_span(&mut self, start: usize, len: usize) {
        let end = (start + len).min(self.bool_mask.len());
        self.spans.push((start, end - start));
        for m in &mut self.bool_mask[start..end] {
            if !*m {
                *m = true;
                self.total_masked += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bool_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bool_mask.is_empty()
    }

    /// Number of maximal runs of masked positions.
    pub fn runs(&self) -> usize {
        let mut n = 0;
        let mut prev = false;
        for &m in &self.bool_mask {
            if m && !prev {
                n += 1;
            }
            prev = m;
        }
        n
    }
}

/// Exact Poisson draw: Knuth's product method for small means, the PTRS
/// transformed-rejection sampler otherwise.
pub fn sample_poisson(lambda: f64, rng: &mut RngStream) -> u64 {
    assert!(lambda > 0.0, "poisson mean must be positive");
    if lambda <= 30.0 {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = rng.next_f64();
        while p > limit {
            k += 1;
            p *= rng.next_f64();
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// Samples spans until the covered positions reach `ceil(p * length)`.
pub fn span_mask(length: usize, cfg: &NoiseConfig, rng: &mut RngStream) -> Result<MaskSpec> {
    cfg.validate()?;
    if length == 0 {
        return Err(Error::Contract("span_mask on an empty sequence".into()));
    }
    let mut spec = MaskSpec::empty(length);
    if cfg.p == 0.0 {
        return Ok(spec);
    }
    let target = ((cfg.p * length as f64).ceil() as usize).min(length);
    while spec.total_masked < target {
        let start = rng.below(length);
        let mut len = sample_poisson(cfg.lambda, rng);
        while len == 0 {
            len = sample_poisson(cfg.lambda, rng);
        }
        spec.push_span(start, len as usize);
    }
    Ok(spec)
}

/// Noised token ids: units plus the vocabulary's mask symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisedTokens {
    pub lang_tag: String,
    pub tokens: Vec<usize>,
}

/// Replaces every maximal masked run with one mask token.
pub fn apply_unit_noise(seq: &UnitSequence, spec: &MaskSpec, vocab: &UnitVocab) -> Result<NoisedTokens> {
    if seq.form != UnitForm::Reduced {
        return Err(Error::Contract("unit noise expects a reduced sequence".into()));
    }
    if spec.len() != seq.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for a sequence of length {}",
            spec.len(),
            seq.len()
        )));
    }
    let mut tokens = Vec::with_capacity(seq.len());
    let mut prev = false;
    for (&u, &m) in seq.units.iter().zip(&spec.bool_mask) {
        if !m {
            tokens.push(u);
        } else if !prev {
            tokens.push(vocab.mask());
        }
        prev = m;
    }
    Ok(NoisedTokens { lang_tag: seq.lang_tag.clone(), tokens })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2vMaskConfig {
    pub mask_prob: f64,
    pub mask_length: usize,
    pub channel_mask_prob: f64,
    pub mask_channel_length: usize,
}

impl W2vMaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("mask_prob", self.mask_prob), ("channel_mask_prob", self.channel_mask_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must be in [0, 1]"));
            }
        }
        if self.mask_length == 0 {
            return Err(Error::config("mask_length", "must be >= 1"));
        }
        if self.mask_channel_length == 0 {
            return Err(Error::config("mask_channel_length", "must be >= 1"));
        }
        Ok(())
    }
}

fn bernoulli_spans(n: usize, prob: f64, len: usize, rng: &mut RngStream) -> Vec<bool> {
    let mut mask = vec![false; n];
    for i in 0..n {
        if rng.bernoulli(prob) {
            for m in &mut mask[i..(i + len).min(n)] {
                *m = true;
            }
        }
    }
    mask
}

/// Returns (time mask [T], channel mask [D]).
pub fn w2v_time_channel_mask(
    t: usize,
    d: usize,
    cfg: &W2vMaskConfig,
    rng: &mut RngStream,
) -> Result<(Vec<bool>, Vec<bool>)> {
    cfg.validate()?;
    if t == 0 || d == 0 {
        return Err(Error::Contract("w2v mask needs T, D >= 1".into()));
    }
    let mut time = bernoulli_spans(t, cfg.mask_prob, cfg.mask_length, rng);
    if cfg.mask_prob > 0.0 && !time.contains(&true) {
        time = bernoulli_spans(t, cfg.mask_prob, cfg.mask_length, rng);
        if !time.contains(&true) {
            let s = rng.below(t);
            for m in &mut time[s..(s + cfg.mask_length).min(t)] {
                *m = true;
            }
        }
    }
    let channel = bernoulli_spans(d, cfg.channel_mask_prob, cfg.mask_channel_length, rng);
    Ok((time, channel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(lambda: f64, p: f64) -> NoiseConfig {
        NoiseConfig { lambda, p, mask_symbol: 0 }
    }

    #[test]
    fn poisson_small_lambda_is_zero() {
        let mut rng = RngStream::new(3);
        let zeros = (0..10_000).filter(|_| sample_poisson(1e-4, &mut rng) == 0).count();
        assert!(zeros >= 9_990);
    }

    #[test]
    fn poisson_large_lambda_moments() {
        let mut rng = RngStream::new(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_poisson(50.0, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 50.0).abs() < 0.3, "{mean}");
        assert!((var - 50.0).abs() < 3.0, "{var}");
    }

    #[test]
    fn span_mask_edge_cases() {
        let mut rng = RngStream::new(0);
        let s = span_mask(10, &cfg(3.0, 0.0), &mut rng).unwrap();
        assert!(s.spans.is_empty() && s.total_masked == 0);
        let s = span_mask(50, &cfg(100.0, 1.0), &mut rng).unwrap();
        assert_eq!(s.total_masked, 50);
        assert!(span_mask(0, &cfg(3.0, 0.5), &mut rng).is_err());
        assert!(span_mask(5, &cfg(0.0, 0.5), &mut rng).is_err());
    }

    #[test]
    fn unit_noise_examples() {
        let v = UnitVocab::new(8, &["en"]);
        let seq = UnitSequence::reduced("en", vec![1, 2, 3, 4]).unwrap();
        let id = apply_unit_noise(&seq, &MaskSpec::empty(4), &v).unwrap();
        assert_eq!(id.tokens, vec![1, 2, 3, 4]);
        let spec = MaskSpec::from_spans(4, &[(1, 2)]).unwrap();
        assert_eq!(apply_unit_noise(&seq, &spec, &v).unwrap().tokens, vec![1, v.mask(), 4]);
        let full = MaskSpec::from_spans(4, &[(0, 9)]).unwrap();
        let out = apply_unit_noise(&seq, &full, &v).unwrap();
        assert_eq!(out.tokens, vec![v.mask()]);
        assert_eq!(out.lang_tag, "en");
        assert!(apply_unit_noise(&seq, &MaskSpec::empty(3), &v).is_err());
    }

    #[test]
    fn w2v_mask_edges() {
        let mut rng = RngStream::new(1);
        let none = W2vMaskConfig { mask_prob: 0.0, mask_length: 3, channel_mask_prob: 0.0, mask_channel_length: 2 };
        let (t, c) = w2v_time_channel_mask(20, 8, &none, &mut rng).unwrap();
        assert!(!t.contains(&true) && !c.contains(&true));
        let all = W2vMaskConfig { mask_prob: 1.0, mask_length: 20, ..none.clone() };
        let (t, _) = w2v_time_channel_mask(20, 8, &all, &mut rng).unwrap();
        assert!(t.iter().all(|&m| m));
        let rare = W2vMaskConfig { mask_prob: 1e-9, mask_length: 2, ..none };
        let (t, _) = w2v_time_channel_mask(5, 8, &rare, &mut rng).unwrap();
        assert!(t.contains(&true));
    }

    #[test]
    fn w2v_expected_fraction() {
        let mut rng = RngStream::new(2);
        let c = W2vMaskConfig { mask_prob: 0.05, mask_length: 10, channel_mask_prob: 0.0, mask_channel_length: 1 };
        let trials = 1000;
        let mut frac = 0.0;
        for _ in 0..trials {
            let (t, _) = w2v_time_channel_mask(1000, 4, &c, &mut rng).unwrap();
            frac += t.iter().filter(|&&m| m).count() as f64 / 1000.0;
        }
        frac /= trials as f64;
        assert!((0.3..=0.5).contains(&frac), "{frac}");
    }

    proptest! {
        #[test]
        fn span_mask_invariants(seed in 0u64..500, len in 1usize..120, p in 0.01f64..1.0, lambda in 0.5f64..20.0) {
            let mut rng = RngStream::new(seed);
            let s = span_mask(len, &cfg(lambda, p), &mut rng).unwrap();
            let target = (p * len as f64).ceil() as usize;
            prop_assert!(s.total_masked >= target.min(len));
            prop_assert_eq!(s.total_masked, s.bool_mask.iter().filter(|&&m| m).count());
            let without = MaskSpec::from_spans(len, &s.spans[..s.spans.len() - 1]).unwrap();
            prop_assert!(without.total_masked < target);
            for &(st, l) in &s.spans {
                prop_assert!(st + l <= len && l >= 1);
            }
        }

        #[test]
        fn noised_length_formula(seed in 0u64..500, len in 1usize..60, p in 0.0f64..1.0) {
            let mut rng = RngStream::new(seed);
            let units: Vec<usize> = (0..len).map(|i| i % 2).collect();
            let seq = UnitSequence::reduced("en", units).unwrap();
            let s = span_mask(len, &cfg(3.0, p), &mut rng).unwrap();
            let out = apply_unit_noise(&seq, &s, &UnitVocab::new(2, &["en"])).unwrap();
            prop_assert_eq!(out.tokens.len(), len - s.total_masked + s.runs());
        }

        #[test]
        fn samplers_are_pure(seed in 0u64..1000) {
            let a = span_mask(40, &cfg(4.0, 0.3), &mut RngStream::new(seed)).unwrap();
            let b = span_mask(40, &cfg(4.0, 0.3), &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
