//! Statistically extended MFCCs: 12 cepstral coefficients (c0 dropped) and
//! their deltas, each summarised by mean, std, min and max over frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::render::{SoundBuffer, FEATURE_SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Coefficients computed per frame, c0 included.
    pub coefficients: usize,
    /// Regression half-width for deltas.
    pub delta_width: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            mel_bands: 40,
            f_min: 0.0,
            f_max: 8000.0,
            coefficients: 13,
            delta_width: 2,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Triangular filters on the HTK mel scale, evaluated at FFT bin centres.
pub fn mel_filterbank(cfg: &MfccConfig, sample_rate: f64) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.mel_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bands + 1) as f64))
        .collect();
    (0..cfg.mel_bands)
        .map(|b| {
            let (left, centre, right) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / cfg.fft_size as f64;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= centre {
                        (f - left) / (centre - left)
                    } else {
                        (right - f) / (right - centre)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `coefficients × inputs`.
pub fn dct_matrix(coefficients: usize, inputs: usize) -> Vec<Vec<f64>> {
    let m = inputs as f64;
    (0..coefficients)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..inputs)
                .map(|i| {
                    scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m).cos()
                })
                .collect()
        })
        .collect()
}

/// Reusable MFCC extractor; holds the FFT plan, window and filterbank.
pub struct MfccExtractor {
    cfg: MfccConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl Default for MfccExtractor {
    fn default() -> Self {
        MfccExtractor::new(MfccConfig::default())
    }
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        MfccExtractor {
            window: hann(cfg.frame_len),
            filters: mel_filterbank(&cfg, FEATURE_SAMPLE_RATE as f64),
            dct: dct_matrix(cfg.coefficients, cfg.mel_bands),
            fft,
            cfg,
        }
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Per-frame MFCCs with c0 included, `frames × coefficients`.
    pub fn frames(&self, b: &SoundBuffer) -> Result<Vec<Vec<f64>>> {
        if b.sample_rate != FEATURE_SAMPLE_RATE {
            return Err(Error::SampleRate(b.sample_rate));
        }
        let count = self.cfg.frame_count(b.len());
        if count == 0 {
            return Err(Error::InsufficientFrames {
                len: b.len(),
                frame: self.cfg.frame_len,
            });
        }
        let bins = self.cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut power = vec![0.0; bins];
        let mut logmel = vec![0.0; self.cfg.mel_bands];
        let mut out = Vec::with_capacity(count);
        for f in 0..count {
            let start = f * self.cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < self.cfg.frame_len {
                    Complex::new(b.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (l, filt) in logmel.iter_mut().zip(&self.filters) {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                *l = e.max(self.cfg.log_floor).ln();
            }
            out.push(
                self.dct
                    .iter()
                    .map(|row| row.iter().zip(&logmel).map(|(a, b)| a * b).sum())
                    .collect(),
            );
        }
        Ok(out)
    }

    pub fn extract(&self, b: &SoundBuffer) -> Result<FeatureVector> {
        let frames = self.frames(b)?;
        let ceps: Vec<Vec<f64>> = frames.into_iter().map(|f| f[1..].to_vec()).collect();
        let deltas = deltas(&ceps, self.cfg.delta_width);
        let mut values = Vec::with_capacity(2 * 4 * ceps[0].len());
        summarize_into(&ceps, &mut values);
        summarize_into(&deltas, &mut values);
        FeatureVector::new(values)
    }
}

/// Regression deltas with edge replication:
/// `d_t = Σ n (c_{t+n} - c_{t-n}) / (2 Σ n²)`.
pub fn deltas(frames: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let t_max = frames.len() as isize - 1;
    let denom: f64 = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize| &frames[t.clamp(0, t_max) as usize];
    (0..frames.len() as isize)
        .map(|t| {
            (0..frames[0].len())
                .map(|c| {
                    (1..=width as isize)
                        .map(|n| n as f64 * (at(t + n)[c] - at(t - n)[c]))
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect()
}

/// Appends `[mean, std, min, max]` for each column, population std.
fn summarize_into(frames: &[Vec<f64>], out: &mut Vec<f64>) {
    let n = frames.len() as f64;
    for c in 0..frames[0].len() {
        let col = frames.iter().map(|f| f[c]);
        let (min, max) = col
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let mean = (col.clone().sum::<f64>() / n).clamp(min, max);
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.extend([mean, var.sqrt(), min, max]);
    }
}
