//! Discrete speech units: k-means quantizer, duplicate reduction and the
//! language-tagged unit vocabulary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_tensors, save_tensors};
use crate::tensor::{Checkpoint, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Tensor,
}

impl Codebook {
    /// Builds a codebook from a [K, D] centroid matrix.
    pub fn new(centroids: Tensor) -> Result<Self> {
        let (k, d) = centroids.dims2()?;
        if k == 0 || d == 0 {
            return Err(Error::Data("empty codebook".into()));
        }
        if !centroids.is_finite() {
            return Err(Error::Data("non-finite centroid".into()));
        }
        for i in 0..k {
            for j in i + 1..k {
                if centroids.row(i) == centroids.row(j) {
                    return Err(Error::Data(format!("centroids {i} and {j} are identical")));
                }
            }
        }
        Ok(Codebook { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centroids.shape()[1]
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }

    /// Index of the nearest centroid (squared Euclidean, lowest id on ties).
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.k() {
            let d = sq_dist(x, self.centroids.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let ck = Checkpoint {
            tensors: vec![("centroids".into(), self.centroids.clone())],
            meta: serde_json::json!({ "k": self.k(), "dim": self.dim() }),
        };
        save_tensors(dir, "centroids.bin", &ck)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = load_tensors(dir, "centroids.bin")?;
        let t = ck
            .get("centroids")
            .ok_or_else(|| Error::Checkpoint("codebook manifest lacks `centroids`".into()))?;
        Codebook::new(t.clone())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Inertia after every assignment step of a k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KmeansTrace {
    pub inertia: Vec<f64>,
    pub converged: bool,
}

pub fn kmeans_fit(features: &Tensor, k: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    kmeans_fit_traced(features, k, max_iters, seed).map(|(cb, _)| cb)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` updates have run. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans_fit_traced(
    features: &Tensor,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(Codebook, KmeansTrace)> {
    let (n, d) = features.dims2()?;
    if k == 0 {
        return Err(Error::Contract("k-means with K = 0".into()));
    }
    if n < k {
        return Err(Error::Contract(format!("k-means needs N >= K, got N = {n}, K = {k}")));
    }
    let mut rng = RngStream::new(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng)?;

    let assign_all = |cents: &[f64]| -> (Vec<usize>, f64) {
        let mut labels = vec![0; n];
        let mut inertia = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let x = features.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let dd = sq_dist(x, &cents[c * d..(c + 1) * d]);
                if dd < best.1 {
                    best = (c, dd);
                }
            }
            *label = best.0;
            inertia += best.1;
        }
        (labels, inertia)
    };

    let (mut labels, first) = assign_all(&centroids);
    let mut trace = KmeansTrace { inertia: vec![first], converged: false };
    for _ in 0..max_iters {
        update_centroids(features, &mut labels, &mut centroids, k);
        let (next, inertia) = assign_all(&centroids);
        trace.inertia.push(inertia);
        if next == labels {
            trace.converged = true;
            break;
        }
        labels = next;
    }
    let cb = Codebook::new(Tensor::new(vec![k, d], centroids)?)?;
    Ok((cb, trace))
}

fn plus_plus_init(features: &Tensor, k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    let n = features.shape()[0];
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data(format!(
                "fewer than K = {k} distinct feature vectors"
            )));
        }
        let mut r = rng.next_f64() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && r < w {
                pick = i;
                break;
            }
            r -= w;
        }
        // Floating-point fallthrough: take the last point with positive weight.
        if d2[pick] <= 0.0 {
            pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive total");
        }
        chosen.push(pick);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(features.row(i), features.row(pick)));
        }
    }
    Ok(chosen.iter().flat_map(|&i| features.row(i).to_vec()).collect())
}

fn update_centroids(features: &Tensor, labels: &mut [usize], centroids: &mut [f64], k: usize) {
    let d = features.shape()[1];
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        sums[c * d..(c + 1) * d].iter_mut().zip(features.row(i)).for_each(|(s, x)| *s += x);
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..d {
                centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
            }
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        // Farthest point from its own centroid, taken from a cluster that can spare it.
        let mut best: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] < 2 {
                continue;
            }
            let dd = sq_dist(features.row(i), &centroids[l * d..(l + 1) * d]);
            if best.is_none_or(|(_, bd)| dd > bd) {
                best = Some((i, dd));
            }
        }
        if let Some((i, _)) = best {
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] = 1;
            centroids[c * d..(c + 1) * d].copy_from_slice(features.row(i));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitForm {
    Raw,
    Reduced,
}

/// A language-tagged sequence of unit ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub lang_tag: String,
    pub units: Vec<usize>,
    pub form: UnitForm,
}

impl UnitSequence {
    pub fn raw(lang_tag: impl Into<String>, units: Vec<usize>) -> Self {
        UnitSequence { lang_tag: lang_tag.into(), units, form: UnitForm::Raw }
    }

    /// A reduced sequence; fails if two neighbouring ids are equal.
    pub fn reduced(lang_tag: impl Into<String>, units: Vec<usize>) -> Result<Self> {
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("reduced unit sequence has adjacent duplicates".into()));
        }
        Ok(UnitSequence { lang_tag: lang_tag.into(), units, form: UnitForm::Reduced })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Space-separated ids, as stored in corpus files.
    pub fn to_text(&self) -> String {
        self.units.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn parse_ids(s: &str) -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Data(format!("bad unit id `{t}`"))))
            .collect()
    }
}

/// Maps each feature frame to its nearest centroid.
pub fn kmeans_assign(features: &Tensor, cb: &Codebook, lang_tag: &str) -> Result<UnitSequence> {
    let (_, d) = features.dims2()?;
    if d != cb.dim() {
        return Err(Error::Shape(format!(
            "features have dimension {d}, codebook expects {}",
            cb.dim()
        )));
    }
    let units = (0..features.shape()[0]).map(|i| cb.nearest(features.row(i)).0).collect();
    Ok(UnitSequence::raw(lang_tag, units))
}

/// Collapses runs of equal ids. Idempotent.
pub fn reduce_units(seq: &UnitSequence) -> UnitSequence {
    let mut units = seq.units.clone();
    units.dedup();
    UnitSequence { lang_tag: seq.lang_tag.clone(), units, form: UnitForm::Reduced }
}

/// Unit ids occupy `[0, K)`; special symbols follow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitVocab {
    pub k: usize,
    pub langs: Vec<String>,
}

impl UnitVocab {
    pub fn new(k: usize, langs: &[&str]) -> Self {
        UnitVocab { k, langs: langs.iter().map(|s| s.to_string()).collect() }
    }

    pub fn pad(&self) -> usize {
        self.k
    }

    pub fn bos(&self) -> usize {
        self.k + 1
    }

    pub fn eos(&self) -> usize {
        self.k + 2
    }

    pub fn mask(&self) -> usize {
        self.k + 3
    }

    pub fn lang(&self, tag: &str) -> Result<usize> {
        self.langs
            .iter()
            .position(|l| l == tag)
            .map(|i| self.k + 4 + i)
            .ok_or_else(|| Error::Data(format!("unknown language tag `{tag}`")))
    }

    pub fn size(&self) -> usize {
        self.k + 4 + self.langs.len()
    }

    pub fn is_unit(&self, id: usize) -> bool {
        id < self.k
    }
}

/// Word-level vocabulary: 0 is padding (and the CTC blank), 1 bos, 2 eos,
/// then the words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab {
    pub words: Vec<String>,
}

impl WordVocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    const OFFSET: usize = 3;

    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut words: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        words.sort();
        words.dedup();
        WordVocab { words }
    }

    pub fn size(&self) -> usize {
        self.words.len() + Self::OFFSET
    }

    pub fn id(&self, w: &str) -> Result<usize> {
        self.words
            .binary_search_by(|x| x.as_str().cmp(w))
            .map(|i| i + Self::OFFSET)
            .map_err(|_| Error::Data(format!("word `{w}` not in vocabulary")))
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Drops special ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= Self::OFFSET && i < self.size())
            .map(|&i| self.words[i - Self::OFFSET].clone())
            .collect()
    }

    pub fn is_word(&self, id: usize) -> bool {
        id >= Self::OFFSET && id < self.size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn word_vocab_round_trip() {
        let v = WordVocab::new(["dog", "cat", "dog"]);
        assert_eq!(v.size(), 5);
        let ids = v.encode(&["cat", "dog"]).unwrap();
        assert_eq!(ids, vec![3, 4]);
        assert_eq!(v.decode(&[WordVocab::BOS, 4, 3, WordVocab::EOS, 99]), vec!["dog", "cat"]);
        assert!(v.id("cow").is_err());
    }

    #[test]
    fn k1_is_mean() {
        let x = mat(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, -1.0]]);
        let cb = kmeans_fit(&x, 1, 10, 0).unwrap();
        assert_eq!(cb.centroids().data(), &[2.0, 1.0]);
    }

    #[test]
    fn codebook_rows_are_fixpoint() {
        let x = mat(&[&[0.0, 0.0], &[5.0, 0.0], &[0.0, 5.0]]);
        let (cb, trace) = kmeans_fit_traced(&x, 3, 10, 4).unwrap();
        assert_eq!(trace.inertia[1], 0.0);
        assert!(trace.converged);
        assert_eq!(trace.inertia.len(), 2);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| cb.centroids().row(i).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![0.0, 5.0], vec![5.0, 0.0]]);
    }

    #[test]
    fn too_few_points() {
        let x = mat(&[&[0.0], &[1.0]]);
        assert!(matches!(kmeans_fit(&x, 3, 10, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn assign_ties_lowest_id() {
        let cb = Codebook::new(mat(&[&[9.0], &[9.5], &[-1.0], &[7.0], &[8.0], &[1.0]])).unwrap();
        let f = mat(&[&[7.0], &[0.0]]);
        assert_eq!(kmeans_assign(&f, &cb, "en").unwrap().units, vec![3, 2]);
        let bad = mat(&[&[1.0, 2.0]]);
        assert!(kmeans_assign(&bad, &cb, "en").is_err());
    }

    #[test]
    fn reduce_examples() {
        let r = reduce_units(&UnitSequence::raw("en", vec![1, 1, 2, 2, 1]));
        assert_eq!(r.units, vec![1, 2, 1]);
        assert_eq!(r.form, UnitForm::Reduced);
        assert!(reduce_units(&UnitSequence::raw("en", vec![])).is_empty());
        assert_eq!(reduce_units(&UnitSequence::raw("en", vec![3, 1, 2])).units, vec![3, 1, 2]);
    }

    #[test]
    fn vocab_specials_disjoint() {
        let v = UnitVocab::new(32, &["es", "en"]);
        let specials = [v.pad(), v.bos(), v.eos(), v.mask(), v.lang("es").unwrap(), v.lang("en").unwrap()];
        assert!(specials.iter().all(|&s| !v.is_unit(s) && s < v.size()));
        assert!(v.lang("fr").is_err());
    }

    #[test]
    fn codebook_round_trip() {
        let cb = Codebook::new(mat(&[&[0.25, 1.0], &[3.0, -2.0]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cb.save(dir.path()).unwrap();
        assert!(dir.path().join("centroids.bin").exists());
        assert_eq!(Codebook::load(dir.path()).unwrap(), cb);
    }

    proptest! {
        #[test]
        fn reduce_properties(xs in proptest::collection::vec(0usize..4, 0..40)) {
            let seq = UnitSequence::raw("en", xs.clone());
            let r = reduce_units(&seq);
            prop_assert!(r.units.windows(2).all(|w| w[0] != w[1]));
            prop_assert_eq!(reduce_units(&r).units, r.units.clone());
            prop_assert!(r.len() <= xs.len());
            let has_dup = xs.windows(2).any(|w| w[0] == w[1]);
            prop_assert_eq!(r.len() == xs.len(), !has_dup);
        }

        #[test]
        fn inertia_never_increases(seed in 0u64..200, n in 6usize..30, k in 1usize..5) {
            let mut rng = RngStream::new(seed);
            let data: Vec<f64> = (0..n * 2).map(|_| rng.normal()).collect();
            let x = Tensor::new(vec![n, 2], data).unwrap();
            let (cb, tr) = kmeans_fit_traced(&x, k, 50, seed).unwrap();
            for w in tr.inertia.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            if tr.converged {
                // the final assignment is a fixpoint: recomputed means reproduce the codebook
                let labels = kmeans_assign(&x, &cb, "x").unwrap().units;
                for c in 0..k {
                    let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                    if members.is_empty() { continue; }
                    for j in 0..2 {
                        let m = members.iter().map(|&i| x.at2(i, j)).sum::<f64>() / members.len() as f64;
                        prop_assert!((m - cb.centroids().at2(c, j)).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
