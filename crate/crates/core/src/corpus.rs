//! Synthetic reference corpus: tones, harmonic stacks, filtered noise,
//! chirps, AM/FM voices and percussive hits with randomised parameters.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{IoContext, Result};
use crate::refdb::{HnswParams, ReferenceStore, TARGET_RATE};
use crate::render::SoundBuffer;

pub const KINDS: [&str; 6] = ["tone", "harmonic", "noise", "chirp", "modulated", "percussive"];

#[derive(Debug, Clone)]
pub struct CorpusSound {
    pub id: String,
    pub buffer: SoundBuffer,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Attack/decay envelope with a sustained middle.
fn envelope(n: usize, attack: usize, release: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let a = if attack > 0 { (i as f64 / attack as f64).min(1.0) } else { 1.0 };
            let r = if release > 0 {
                ((n - i) as f64 / release as f64).min(1.0)
            } else {
                1.0
            };
            a * r
        })
        .collect()
}

fn normalise(mut x: Vec<f64>, gain: f64) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= gain / peak);
    }
    x
}

/// One-pole lowpass followed by an optional highpass difference.
fn coloured_noise<R: Rng>(rng: &mut R, n: usize, cutoff: f64, highpass: bool) -> Vec<f64> {
    let sr = TARGET_RATE as f64;
    let a = (-2.0 * PI * cutoff / sr).exp();
    let mut y = 0.0;
    let mut prev_x = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            if highpass {
                y = a * (y + w - prev_x);
                prev_x = w;
                y
            } else {
                y = (1.0 - a) * w + a * y;
                y
            }
        })
        .collect()
}

fn synth<R: Rng>(kind: usize, n: usize, rng: &mut R) -> Vec<f64> {
    let sr = TARGET_RATE as f64;
    let t = |i: usize| i as f64 / sr;
    match kind {
        0 => {
            let f = log_uniform(rng, 60.0, 5000.0);
            let ph = rng.random_range(0.0..2.0 * PI);
            (0..n).map(|i| (2.0 * PI * f * t(i) + ph).sin()).collect()
        }
        1 => {
            let f = log_uniform(rng, 50.0, 1000.0);
            let harmonics = rng.random_range(2..40usize);
            let tilt = rng.random_range(0.3..2.5);
            let odd_only = rng.random_bool(0.3);
            (0..n)
                .map(|i| {
                    (1..=harmonics)
                        .filter(|h| !odd_only || h % 2 == 1)
                        .filter(|&h| f * (h as f64) < sr / 2.0)
                        .map(|h| (2.0 * PI * f * h as f64 * t(i)).sin() / (h as f64).powf(tilt))
                        .sum()
                })
                .collect()
        }
        2 => {
            let cutoff = log_uniform(rng, 100.0, 7000.0);
            let hp = rng.random_bool(0.4);
            coloured_noise(rng, n, cutoff, hp)
        }
        3 => {
            let f0 = log_uniform(rng, 50.0, 6000.0);
            let f1 = log_uniform(rng, 50.0, 6000.0);
            let dur = n as f64 / sr;
            let k = (f1 / f0).ln() / dur;
            (0..n)
                .map(|i| {
                    let phase = if k.abs() < 1e-9 {
                        f0 * t(i)
                    } else {
                        f0 * ((k * t(i)).exp() - 1.0) / k
                    };
                    (2.0 * PI * phase).sin()
                })
                .collect()
        }
        4 => {
            let fc = log_uniform(rng, 80.0, 3000.0);
            let fm = log_uniform(rng, 0.5, 400.0);
            let index = rng.random_range(0.0..8.0);
            let am_rate = log_uniform(rng, 0.5, 30.0);
            let am_depth = rng.random_range(0.0..1.0);
            (0..n)
                .map(|i| {
                    let x = t(i);
                    let car = (2.0 * PI * fc * x + index * (2.0 * PI * fm * x).sin()).sin();
                    car * (1.0 - am_depth * 0.5 * (1.0 + (2.0 * PI * am_rate * x).sin()))
                })
                .collect()
        }
        _ => {
            let decay = log_uniform(rng, 0.01, 0.5);
            let tonal = rng.random_range(0.0..1.0);
            let f = log_uniform(rng, 40.0, 2000.0);
            let cutoff = log_uniform(rng, 200.0, 8000.0);
            let noise = coloured_noise(rng, n, cutoff, false);
            let onsets = rng.random_range(1..6usize);
            let period = n / onsets;
            (0..n)
                .map(|i| {
                    let local = t(i % period.max(1));
                    let env = (-local / decay).exp();
                    let body = tonal * (2.0 * PI * f * local).sin() + (1.0 - tonal) * noise[i] * 4.0;
                    env * body
                })
                .collect()
        }
    }
}

/// Generates `n` sounds of `duration_s` seconds at 16 kHz, cycling through
/// [`KINDS`]. Ids are `<kind>_<index>.wav`.
pub fn synth_corpus(n: usize, duration_s: f64, seed: u64) -> Vec<CorpusSound> {
    let len = (duration_s * TARGET_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = i % KINDS.len();
            let raw = synth(kind, len, &mut rng);
            let attack = rng.random_range(0..len / 8 + 1);
            let release = rng.random_range(0..len / 4 + 1);
            let shaped: Vec<f64> = raw
                .iter()
                .zip(envelope(len, attack, release))
                .map(|(x, e)| x * e)
                .collect();
            let gain = rng.random_range(0.3..0.95);
            CorpusSound {
                id: format!("{}_{i:04}.wav", KINDS[kind]),
                buffer: SoundBuffer::new(normalise(shaped, gain), TARGET_RATE),
            }
        })
        .collect()
}

/// Builds a reference store straight from generated sounds.
pub fn build_store(sounds: &[CorpusSound], params: HnswParams) -> Result<ReferenceStore> {
    ReferenceStore::from_sounds(sounds.iter().map(|s| (s.id.clone(), &s.buffer)), params)
}

/// Writes each sound as a 16-bit WAV file under `dir`.
pub fn write_wavs(sounds: &[CorpusSound], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for s in sounds {
        s.buffer.write_wav(&dir.join(&s.id))?;
    }
    Ok(())
}
