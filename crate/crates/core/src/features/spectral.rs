//! Frame-averaged low-level spectral descriptors computed on Hann-windowed
//! magnitude spectra.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::mfcc::hann;
use crate::error::{Error, Result};
use crate::render::SoundBuffer;

pub const SPECTRAL_FEATURE_NAMES: [&str; 10] = [
    "centroid", "spread", "skewness", "kurtosis", "rolloff", "decrease", "slope", "flux",
    "flatness", "crest",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralFeatureSet {
    pub centroid: f64,
    pub spread: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub rolloff: f64,
    pub decrease: f64,
    pub slope: f64,
    pub flux: f64,
    pub flatness: f64,
    pub crest: f64,
}

impl SpectralFeatureSet {
    pub fn to_array(&self) -> [f64; 10] {
        [
            self.centroid,
            self.spread,
            self.skewness,
            self.kurtosis,
            self.rolloff,
            self.decrease,
            self.slope,
            self.flux,
            self.flatness,
            self.crest,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        SpectralFeatureSet {
            centroid: a[0],
            spread: a[1],
            skewness: a[2],
            kurtosis: a[3],
            rolloff: a[4],
            decrease: a[5],
            slope: a[6],
            flux: a[7],
            flatness: a[8],
            crest: a[9],
        }
    }

    pub fn index_of(name: &str) -> Result<usize> {
        SPECTRAL_FEATURE_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.to_array()[Self::index_of(name)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub rolloff_fraction: f64,
    /// Frames whose energy falls below this are treated as silent.
    pub silence_energy: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            frame_len: 1024,
            hop: 512,
            rolloff_fraction: 0.85,
            silence_energy: 1e-20,
        }
    }
}

pub struct SpectralExtractor {
    cfg: SpectralConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for SpectralExtractor {
    fn default() -> Self {
        SpectralExtractor::new(SpectralConfig::default())
    }
}

impl SpectralExtractor {
    pub fn new(cfg: SpectralConfig) -> Self {
        SpectralExtractor {
            fft: FftPlanner::new().plan_fft_forward(cfg.frame_len),
            window: hann(cfg.frame_len),
            cfg,
        }
    }

    /// Magnitude spectra of all full frames.
    pub fn magnitudes(&self, b: &SoundBuffer) -> Result<Vec<Vec<f64>>> {
        if b.len() < self.cfg.frame_len {
            return Err(Error::InsufficientFrames {
                len: b.len(),
                frame: self.cfg.frame_len,
            });
        }
        let count = (b.len() - self.cfg.frame_len) / self.cfg.hop + 1;
        let bins = self.cfg.frame_len / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.frame_len];
        Ok((0..count)
            .map(|f| {
                let start = f * self.cfg.hop;
                for (i, c) in buf.iter_mut().enumerate() {
                    *c = Complex::new(b.samples[start + i] * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..bins].iter().map(|c| c.norm()).collect()
            })
            .collect())
    }

    pub fn extract(&self, b: &SoundBuffer) -> Result<SpectralFeatureSet> {
        let mags = self.magnitudes(b)?;
        let sr = b.sample_rate as f64;
        let bin_hz = sr / self.cfg.frame_len as f64;
        let mut acc = [0.0; 10];
        let mut prev: Option<Vec<f64>> = None;
        for m in &mags {
            let frame = frame_features(m, bin_hz, &self.cfg);
            let normed = normalized(m).unwrap_or_else(|| vec![0.0; m.len()]);
            let flux = prev.as_ref().map_or(0.0, |p| {
                p.iter()
                    .zip(&normed)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            });
            let mut arr = frame.to_array();
            arr[7] = flux;
            for (a, v) in acc.iter_mut().zip(arr) {
                *a += v;
            }
            prev = Some(normed);
        }
        let n = mags.len() as f64;
        Ok(SpectralFeatureSet::from_array(acc.map(|a| a / n)))
    }
}

fn normalized(m: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = m.iter().sum();
    (s > 0.0).then(|| m.iter().map(|v| v / s).collect())
}

/// Descriptors of one magnitude frame (flux left at zero).
pub fn frame_features(m: &[f64], bin_hz: f64, cfg: &SpectralConfig) -> SpectralFeatureSet {
    let energy: f64 = m.iter().map(|v| v * v).sum();
    if energy < cfg.silence_energy {
        return SpectralFeatureSet {
            flatness: 1.0,
            crest: 1.0,
            ..Default::default()
        };
    }
    let k = m.len();
    let freqs: Vec<f64> = (0..k).map(|i| i as f64 * bin_hz).collect();
    let total: f64 = m.iter().sum();
    let centroid = freqs.iter().zip(m).map(|(f, a)| f * a).sum::<f64>() / total;
    let moment = |p: i32| {
        freqs
            .iter()
            .zip(m)
            .map(|(f, a)| (f - centroid).powi(p) * a)
            .sum::<f64>()
            / total
    };
    let spread = moment(2).sqrt();
    let (skewness, kurtosis) = if spread > 1e-12 {
        (moment(3) / spread.powi(3), moment(4) / spread.powi(4))
    } else {
        (0.0, 0.0)
    };

    let threshold = cfg.rolloff_fraction * energy;
    let mut cum = 0.0;
    let mut rolloff = freqs[k - 1];
    for (f, a) in freqs.iter().zip(m) {
        cum += a * a;
        if cum >= threshold {
            rolloff = *f;
            break;
        }
    }

    let tail: f64 = m[1..].iter().sum();
    let decrease = if tail > 0.0 {
        m[1..]
            .iter()
            .enumerate()
            .map(|(i, a)| (a - m[0]) / (i + 1) as f64)
            .sum::<f64>()
            / tail
    } else {
        0.0
    };

    // Least-squares slope of the sum-normalised magnitude over frequency.
    let f_mean = freqs.iter().sum::<f64>() / k as f64;
    let m_mean = 1.0 / k as f64;
    let (num, den) = freqs.iter().zip(m).fold((0.0, 0.0), |(n, d), (f, a)| {
        (n + (f - f_mean) * (a / total - m_mean), d + (f - f_mean).powi(2))
    });
    let slope = num / den;

    let eps = 1e-12;
    let log_mean = m.iter().map(|a| (a + eps).ln()).sum::<f64>() / k as f64;
    let arith = m.iter().map(|a| a + eps).sum::<f64>() / k as f64;
    let flatness = (log_mean.exp() / arith).clamp(0.0, 1.0);
    let crest = m.iter().cloned().fold(0.0, f64::max) / (total / k as f64);

    SpectralFeatureSet {
        centroid,
        spread,
        skewness,
        kurtosis,
        rolloff,
        decrease,
        slope,
        flux: 0.0,
        flatness,
        crest,
    }
}
