//! Unit-to-waveform rendering and framewise log filterbank features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::units::{kmeans_fit, Codebook};

pub const SAMPLE_RATE: u32 = 16_000;
/// One 20-ms frame at 16 kHz.
pub const FRAME: usize = 320;
const AMPLITUDE: f64 = 0.5;
const LOG_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.len() % FRAME != 0 {
            return Err(Error::Data(format!(
                "waveform length {} is not a multiple of {FRAME}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Data("waveform samples must be finite and within [-1, 1]".into()));
        }
        Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
    }

    pub fn empty() -> Self {
        Waveform { samples: Vec::new(), sample_rate: SAMPLE_RATE }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / FRAME
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::Data("audio file length is not a multiple of 4".into()));
        }
        Waveform::new(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

/// Tone frequency of unit `u` on a grid spanning 250 Hz to just under 7.75 kHz.
pub fn unit_frequency(u: usize, k: usize) -> f64 {
    250.0 + u as f64 * 7500.0 / k as f64
}

/// Each unit contributes one 20-ms pure tone with a fixed phase.
pub fn render_units_to_audio(units: &[usize], k: usize) -> Result<Waveform> {
    let mut samples = Vec::with_capacity(units.len() * FRAME);
    for &u in units {
        if u >= k {
            return Err(Error::Data(format!("unit id {u} outside [0, {k})")));
        }
        let f = unit_frequency(u, k);
        let phase = 2.0 * PI * ((u as f64 * 0.618_033_988_749_895) % 1.0);
        for n in 0..FRAME {
            let t = n as f64 / SAMPLE_RATE as f64;
            samples.push((AMPLITUDE * (2.0 * PI * f * t + phase).sin()) as f32);
        }
    }
    Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
}

/// Hann-windowed FFT per frame followed by `dim` triangular filters spaced
/// linearly over 0..8 kHz and a log.
pub struct FeatureExtractor {
    dim: usize,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// [dim][FRAME / 2 + 1] filter weights.
    filters: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feat_dim", "must be >= 1"));
        }
        let fft = FftPlanner::new().plan_fft_forward(FRAME);
        let window = (0..FRAME).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME as f64).cos()).collect();
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let bins = FRAME / 2 + 1;
        let step = nyquist / (dim + 1) as f64;
        let filters = (0..dim)
            .map(|i| {
                let (lo, c, hi) = (i as f64 * step, (i + 1) as f64 * step, (i + 2) as f64 * step);
                (0..bins)
                    .map(|b| {
                        let f = b as f64 * SAMPLE_RATE as f64 / FRAME as f64;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= c {
                            (f - lo) / (c - lo)
                        } else {
                            (hi - f) / (hi - c)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureExtractor { dim, fft, window, filters })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extract(&self, w: &Waveform) -> Result<Tensor> {
        let t = w.frames();
        if t == 0 {
            return Err(Error::Data("cannot extract features from an empty waveform".into()));
        }
        let mut out = Vec::with_capacity(t * self.dim);
        let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
        for frame in w.samples.chunks_exact(FRAME) {
            for ((b, &s), &h) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s as f64 * h, 0.0);
            }
            self.fft.process(&mut buf);
            let mags: Vec<f64> = buf[..FRAME / 2 + 1].iter().map(|c| c.norm()).collect();
            for f in &self.filters {
                let e: f64 = f.iter().zip(&mags).map(|(w, m)| w * m).sum();
                out.push((e + LOG_FLOOR).ln());
            }
        }
        Tensor::new(vec![t, self.dim], out)
    }
}

pub fn extract_features(w: &Waveform, dim: usize) -> Result<Tensor> {
    FeatureExtractor::new(dim)?.extract(w)
}

/// Features of every unit signature, one row per unit id.
pub fn unit_signatures(k: usize, dim: usize) -> Result<Tensor> {
    let all: Vec<usize> = (0..k).collect();
    extract_features(&render_units_to_audio(&all, k)?, dim)
}

/// Fits a K-means codebook on the rendered unit signatures and labels the
/// clusters so that cluster `u` is the one holding signature `u`; the renderer
/// then acts as a vocoder for the codebook.
pub fn fit_unit_codebook(k: usize, dim: usize, seed: u64) -> Result<Codebook> {
    let sig = unit_signatures(k, dim)?;
    let cb = kmeans_fit(&sig, k, 100, seed)?;
    let mut rows = Vec::with_capacity(k * dim);
    let mut used = vec![false; k];
    for u in 0..k {
        let (c, _) = cb.nearest(sig.row(u));
        if used[c] {
            return Err(Error::Data(format!("unit signatures {u} and another share cluster {c}")));
        }
        used[c] = true;
        rows.extend_from_slice(cb.centroids().row(c));
    }
    Codebook::new(Tensor::new(vec![k, dim], rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::kmeans_assign;

    #[test]
    fn framing() {
        assert!(render_units_to_audio(&[], 32).unwrap().is_empty());
        assert_eq!(render_units_to_audio(&[5], 32).unwrap().len(), 320);
        assert!(render_units_to_audio(&[32], 32).is_err());
        let w = Waveform::new(vec![0.0; 3200]).unwrap();
        assert_eq!(extract_features(&w, 16).unwrap().shape(), &[10, 16]);
        let w = Waveform::new(vec![0.1; 320]).unwrap();
        assert_eq!(extract_features(&w, 16).unwrap().shape(), &[1, 16]);
        assert!(extract_features(&Waveform::empty(), 16).is_err());
        assert!(Waveform::new(vec![0.0; 100]).is_err());
    }

    #[test]
    fn signatures_distinct() {
        let s = unit_signatures(32, 16).unwrap();
        for a in 0..32 {
            for b in a + 1..32 {
                let d: f64 = s.row(a).iter().zip(s.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d > 1e-3, "{a} {b} {d}");
            }
        }
    }

    #[test]
    fn quantizer_round_trip() {
        let cb = fit_unit_codebook(32, 16, 7).unwrap();
        let units = vec![3, 3, 31, 0, 17, 17, 17, 8];
        let f = extract_features(&render_units_to_audio(&units, 32).unwrap(), 16).unwrap();
        assert_eq!(f.shape()[0], units.len());
        assert_eq!(kmeans_assign(&f, &cb, "en").unwrap().units, units);
    }

    #[test]
    fn bytes_round_trip() {
        let w = render_units_to_audio(&[1, 2, 3], 32).unwrap();
        assert_eq!(Waveform::from_le_bytes(&w.to_le_bytes()).unwrap(), w);
    }
}
