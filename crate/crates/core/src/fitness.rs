//! Quality scores in [0, 1]: similarity to one reference, to the k nearest
//! references, or an intrinsic score from artefact detectors and
//! compressibility.

use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::spectral::{frame_features, SpectralConfig, SpectralExtractor};
use crate::features::cosine_distance;
use crate::refdb::ReferenceStore;
use crate::render::SoundBuffer;

/// DEFLATE level used for the compressibility term.
pub const COMPRESSION_LEVEL: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum FitnessRegime {
    SingleRef { reference: String },
    MultiRef { k: usize },
    RefFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    #[serde(flatten)]
    pub regime: FitnessRegime,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_power() -> f64 {
    1.0
}

impl FitnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("fitness power must be > 0, got {}", self.power)));
        }
        if let FitnessRegime::MultiRef { k: 0 } = self.regime {
            return Err(Error::Config("multi-reference k must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn needs_store(&self) -> bool {
        !matches!(self.regime, FitnessRegime::RefFree)
    }
}

/// `(1 - d_cos(fs, fr))^p` with the base clamped at zero.
pub fn q_single_ref(fs: &[f64], fr: &[f64], p: f64) -> Result<f64> {
    Ok((1.0 - cosine_distance(fs, fr)?).max(0.0).powf(p))
}

/// Mean similarity to the k nearest references, clamped and raised to `p`.
pub fn q_multi_ref(fs: &[f64], store: &ReferenceStore, k: usize, p: f64) -> Result<f64> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let nn = store.query_knn_positions(fs, k)?;
    let mean = nn.iter().map(|(_, d)| 1.0 - d).sum::<f64>() / nn.len() as f64;
    Ok(mean.max(0.0).powf(p))
}

pub const PROBLEM_NAMES: [&str; 6] = [
    "clicks",
    "gaps",
    "clipping",
    "noise_bursts",
    "saturation",
    "dc_offset",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorThresholds {
    /// Largest tolerated absolute second difference.
    pub click: f64,
    /// Frame RMS below which a frame is a gap.
    pub gap_rms: f64,
    pub clip_level: f64,
    pub clip_run: usize,
    pub burst_sigma: f64,
    pub burst_flatness: f64,
    pub saturation_level: f64,
    pub saturation_fraction: f64,
    pub dc: f64,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        DetectorThresholds {
            click: 0.5,
            gap_rms: 1e-4,
            clip_level: 0.999,
            clip_run: 3,
            burst_sigma: 4.0,
            burst_flatness: 0.6,
            saturation_level: 0.98,
            saturation_fraction: 0.5,
            dc: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProblemReport {
    /// Proportions in [`PROBLEM_NAMES`] order.
    pub proportions: [f64; 6],
    pub counts: [usize; 6],
    pub frames: usize,
}

impl ProblemReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        PROBLEM_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.proportions[i])
    }
}

const FRAME: usize = 1024;
const HOP: usize = 512;

fn frames(x: &[f64]) -> Vec<&[f64]> {
    if x.len() <= FRAME {
        return vec![x];
    }
    (0..=(x.len() - FRAME) / HOP)
        .map(|f| &x[f * HOP..f * HOP + FRAME])
        .collect()
}

pub fn detect_problems(b: &SoundBuffer) -> ProblemReport {
    detect_problems_with(b, &DetectorThresholds::default())
}

pub fn detect_problems_with(b: &SoundBuffer, t: &DetectorThresholds) -> ProblemReport {
    if b.is_empty() {
        return ProblemReport::default();
    }
    let frames = frames(&b.samples);
    let buffer_rms = (b.samples.iter().map(|s| s * s).sum::<f64>() / b.len() as f64).sqrt();
    let energies: Vec<f64> = frames.iter().map(|f| f.iter().map(|s| s * s).sum()).collect();
    let n = energies.len() as f64;
    let mu = energies.iter().sum::<f64>() / n;
    let sigma = (energies.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / n).sqrt();
    let spectral = SpectralExtractor::new(SpectralConfig {
        frame_len: FRAME,
        ..SpectralConfig::default()
    });
    let bin_hz = b.sample_rate as f64 / FRAME as f64;

    let mut counts = [0usize; 6];
    for (f, &energy) in frames.iter().zip(&energies) {
        let len = f.len() as f64;
        let click = f
            .windows(3)
            .any(|w| (w[2] - 2.0 * w[1] + w[0]).abs() > t.click);
        let gap = (energy / len).sqrt() < t.gap_rms && buffer_rms >= 10.0 * t.gap_rms;
        let mut run = 0;
        let clipping = f.iter().any(|s| {
            run = if s.abs() >= t.clip_level { run + 1 } else { 0 };
            run >= t.clip_run
        });
        let burst = energy > mu + t.burst_sigma * sigma && {
            let mut padded = f.to_vec();
            padded.resize(FRAME, 0.0);
            let mags = spectral
                .magnitudes(&SoundBuffer::new(padded, b.sample_rate))
                .expect("one full frame");
            frame_features(&mags[0], bin_hz, &SpectralConfig::default()).flatness
                > t.burst_flatness
        };
        let saturated = f.iter().filter(|s| s.abs() >= t.saturation_level).count() as f64;
        let saturation = saturated >= t.saturation_fraction * len;
        let dc = (f.iter().sum::<f64>() / len).abs() > t.dc;
        for (c, hit) in counts
            .iter_mut()
            .zip([click, gap, clipping, burst, saturation, dc])
        {
            *c += hit as usize;
        }
    }
    ProblemReport {
        proportions: counts.map(|c| c as f64 / n),
        counts,
        frames: frames.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionScore {
    pub c: f64,
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
}

/// `C = 1 - compressed/original` over 16-bit PCM, floored at zero. The
/// buffer is put in a canonical polarity first (first non-zero sample
/// positive) so that `x` and `-x` score alike.
pub fn compression_score(b: &SoundBuffer) -> CompressionScore {
    let flip = b
        .samples
        .iter()
        .find(|s| crate::render::to_i16(**s) != 0)
        .is_some_and(|s| *s < 0.0);
    let bytes: Vec<u8> = b
        .samples
        .iter()
        .flat_map(|&s| crate::render::to_i16(if flip { -s } else { s }).to_le_bytes())
        .collect();
    if bytes.is_empty() {
        return CompressionScore {
            c: 0.0,
            raw_bytes: 0,
            compressed_bytes: 0,
        };
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(COMPRESSION_LEVEL));
    enc.write_all(&bytes).expect("in-memory write");
    let compressed = enc.finish().expect("in-memory write").len();
    CompressionScore {
        c: (1.0 - compressed as f64 / bytes.len() as f64).max(0.0),
        raw_bytes: bytes.len(),
        compressed_bytes: compressed,
    }
}

/// `(Σ (1 - P_i) + C) / 7`.
pub fn compose_ref_free(problems: &ProblemReport, compression: &CompressionScore) -> f64 {
    (problems.proportions.iter().map(|p| 1.0 - p).sum::<f64>() + compression.c) / 7.0
}

pub fn q_ref_free(b: &SoundBuffer) -> f64 {
    compose_ref_free(&detect_problems(b), &compression_score(b))
}

/// Scores one candidate under a configured regime. `features` must be
/// normalised with the store's statistics.
pub struct Evaluator<'a> {
    config: FitnessConfig,
    store: Option<&'a ReferenceStore>,
    reference: Option<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(config: FitnessConfig, store: Option<&'a ReferenceStore>) -> Result<Evaluator<'a>> {
        config.validate()?;
        let reference = match &config.regime {
            FitnessRegime::SingleRef { reference } => {
                Some(store.ok_or(Error::EmptyStore)?.position(reference)?)
            }
            FitnessRegime::MultiRef { k } => {
                let s = store.ok_or(Error::EmptyStore)?;
                if *k > s.len() {
                    return Err(Error::KOutOfRange { k: *k, size: s.len() });
                }
                None
            }
            FitnessRegime::RefFree => None,
        };
        Ok(Evaluator {
            config,
            store,
            reference,
        })
    }

    pub fn score(&self, features: &[f64], buffer: &SoundBuffer) -> Result<f64> {
        let p = self.config.power;
        match &self.config.regime {
            FitnessRegime::SingleRef { .. } => {
                let store = self.store.ok_or(Error::EmptyStore)?;
                q_single_ref(features, store.normalized(self.reference.unwrap()), p)
            }
            FitnessRegime::MultiRef { k } => {
                q_multi_ref(features, self.store.ok_or(Error::EmptyStore)?, *k, p)
            }
            FitnessRegime::RefFree => Ok(q_ref_free(buffer).powf(p)),
        }
    }
}
