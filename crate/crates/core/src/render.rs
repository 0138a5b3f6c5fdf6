//! Offline, deterministic rendering of a genome to a mono buffer.
//!
//! Per sample the CPPN is evaluated in topological order (ties by node id),
//! its output taps feed the DSP graph, and the DSP graph is stepped in its
//! own topological order. The finished buffer is peak-normalised when it
//! exceeds full scale and then hard-clipped to [-1, 1].

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{
    cutoff_hz, CppnInput, CppnNodeKind, DspKind, DspSource, FilterMode, Genome, ParamSlot,
    ParamSpec,
};

pub const FEATURE_SAMPLE_RATE: u32 = 16_000;
pub const SUPPORTED_SAMPLE_RATES: [u32; 2] = [16_000, 48_000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub pitch_hz: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            duration_s: 4.0,
            sample_rate: FEATURE_SAMPLE_RATE,
            pitch_hz: 220.0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration {} must be positive", self.duration_s)));
        }
        if !SUPPORTED_SAMPLE_RATES.contains(&self.sample_rate) {
            return Err(Error::SampleRate(self.sample_rate));
        }
        if !(self.pitch_hz > 0.0 && self.pitch_hz.is_finite()) {
            return Err(Error::Config(format!("pitch {} must be positive", self.pitch_hz)));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.sample_rate as f64 * self.duration_s).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl SoundBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        SoundBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// 16-bit PCM mono RIFF.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(to_i16(s))?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Samples as little-endian 16-bit PCM bytes.
    pub fn pcm16_bytes(&self) -> Vec<u8> {
        self.samples
            .iter()
            .flat_map(|&s| to_i16(s).to_le_bytes())
            .collect()
    }
}

#[inline]
pub fn to_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderReport {
    /// Intermediate values that were NaN or infinite and replaced by zero.
    pub non_finite: usize,
    /// Pre-normalisation peak, when normalisation was applied.
    pub normalized_from: Option<f64>,
}

pub struct Rendered {
    pub buffer: SoundBuffer,
    pub report: RenderReport,
}

struct CppnStep {
    node: usize,
    activation: crate::genome::Activation,
    inputs: Vec<(usize, f64)>,
}

enum DspState {
    None,
    Delay { buf: Vec<f64>, pos: usize },
    Biquad { x1: f64, x2: f64, y1: f64, y2: f64, coeffs: Option<[f64; 5]> },
}

struct DspStep {
    node: usize,
    kind: DspKind,
    params: Vec<(ParamSlot, ParamSpec)>,
    inputs: Vec<DspSource>,
    state: DspState,
}

const MAX_DELAY_MS: f64 = 50.0;

/// Renders `g`; a pure function of its arguments.
pub fn render(g: &Genome, settings: &RenderSettings) -> Result<Rendered> {
    settings.validate()?;
    g.validate()?;
    let sr = settings.sample_rate as f64;
    let n = settings.sample_count();

    let inputs: Vec<(usize, CppnInput)> = g
        .cppn
        .nodes
        .iter()
        .filter_map(|node| match node.kind {
            CppnNodeKind::Input { source } => Some((node.id as usize, source)),
            _ => None,
        })
        .collect();
    let order = g.cppn.topological_order().expect("validated acyclic");
    let cppn_plan: Vec<CppnStep> = order
        .into_iter()
        .filter(|&id| !g.cppn.is_input(id))
        .map(|id| CppnStep {
            node: id as usize,
            activation: g.cppn.nodes[id as usize].activation,
            inputs: g
                .cppn
                .connections
                .iter()
                .filter(|c| c.enabled && c.target == id)
                .map(|c| (c.source as usize, c.weight))
                .collect(),
        })
        .collect();
    let taps: Vec<usize> = g.cppn.output_ids().into_iter().map(|i| i as usize).collect();

    let dsp_order = g.dsp.topological_order().expect("validated acyclic");
    let output = g.dsp.output_id().expect("validated output") as usize;
    let max_delay = (MAX_DELAY_MS * sr / 1000.0).ceil() as usize + 1;
    let mut dsp_plan: Vec<DspStep> = dsp_order
        .into_iter()
        .map(|id| {
            let node = &g.dsp.nodes[id as usize];
            let params: Vec<(ParamSlot, ParamSpec)> = node
                .params
                .iter()
                .copied()
                .zip(node.kind.param_specs().iter().copied())
                .collect();
            let state = match node.kind {
                DspKind::DelayLine => DspState::Delay {
                    buf: vec![0.0; max_delay],
                    pos: 0,
                },
                DspKind::BiquadFilter { mode } => {
                    let fixed = params.iter().all(|(s, _)| !s.is_bound());
                    let coeffs = fixed.then(|| {
                        let cutoff = params[0].0.resolve(&params[0].1, &[]);
                        let q = params[1].0.resolve(&params[1].1, &[]);
                        biquad_coeffs(mode, cutoff_hz(cutoff, sr), q, sr)
                    });
                    DspState::Biquad {
                        x1: 0.0,
                        x2: 0.0,
                        y1: 0.0,
                        y2: 0.0,
                        coeffs,
                    }
                }
                _ => DspState::None,
            };
            DspStep {
                node: id as usize,
                kind: node.kind,
                params,
                inputs: g.dsp.inputs_of(id),
                state,
            }
        })
        .collect();

    let mut cppn_vals = vec![0.0; g.cppn.nodes.len()];
    let mut tap_vals = vec![0.0; taps.len()];
    let mut dsp_vals = vec![0.0; g.dsp.nodes.len()];
    let mut report = RenderReport::default();
    let mut out = Vec::with_capacity(n);
    let pitch_w = 2.0 * PI * settings.pitch_hz / sr;

    for i in 0..n {
        let t = i as f64 / n as f64;
        for &(id, src) in &inputs {
            cppn_vals[id] = match src {
                CppnInput::Ramp => t,
                CppnInput::Pitch { ratio } => (pitch_w * ratio * i as f64).sin(),
            };
        }
        for step in &cppn_plan {
            let sum: f64 = step.inputs.iter().map(|&(s, w)| w * cppn_vals[s]).sum();
            cppn_vals[step.node] = finite_or_zero(step.activation.apply(sum), &mut report);
        }
        for (slot, &id) in tap_vals.iter_mut().zip(&taps) {
            *slot = cppn_vals[id];
        }
        for step in &mut dsp_plan {
            let y = step.process(&dsp_vals, &tap_vals, sr);
            dsp_vals[step.node] = finite_or_zero(y, &mut report);
        }
        out.push(dsp_vals[output]);
    }

    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        report.normalized_from = Some(peak);
        for s in &mut out {
            *s /= peak;
        }
    }
    for s in &mut out {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(Rendered {
        buffer: SoundBuffer::new(out, settings.sample_rate),
        report,
    })
}

#[inline]
fn finite_or_zero(v: f64, report: &mut RenderReport) -> f64 {
    if v.is_finite() {
        v
    } else {
        report.non_finite += 1;
        0.0
    }
}

impl DspStep {
    #[inline]
    fn input(&self, vals: &[f64], taps: &[f64], k: usize) -> f64 {
        match self.inputs[k] {
            DspSource::Node(s) => vals[s as usize],
            DspSource::Tap(t) => taps[t],
        }
    }

    #[inline]
    fn param(&self, k: usize, taps: &[f64]) -> f64 {
        let (slot, spec) = &self.params[k];
        slot.resolve(spec, taps)
    }

    fn process(&mut self, vals: &[f64], taps: &[f64], sr: f64) -> f64 {
        let x: f64 = (0..self.inputs.len()).map(|k| self.input(vals, taps, k)).sum();
        match self.kind {
            DspKind::Output => x,
            DspKind::Gain => self.param(0, taps) * x,
            DspKind::WaveShaper => (self.param(0, taps) * x).tanh(),
            DspKind::Mix => {
                let b = self.param(0, taps);
                let dry = if self.inputs.is_empty() {
                    0.0
                } else {
                    self.input(vals, taps, 0)
                };
                (1.0 - b) * dry + b * (x - dry)
            }
            DspKind::DelayLine => {
                let delay = (self.param(0, taps) * sr / 1000.0).round() as usize;
                let fb = self.param(1, taps);
                let DspState::Delay { buf, pos } = &mut self.state else {
                    unreachable!()
                };
                let len = buf.len();
                let y = if delay == 0 {
                    x
                } else {
                    x + fb * buf[(*pos + len - delay.min(len - 1)) % len]
                };
                buf[*pos] = y;
                *pos = (*pos + 1) % len;
                y
            }
            DspKind::BiquadFilter { mode } => {
                let coeffs = match &self.state {
                    DspState::Biquad {
                        coeffs: Some(c), ..
                    } => *c,
                    _ => biquad_coeffs(
                        mode,
                        cutoff_hz(self.param(0, taps), sr),
                        self.param(1, taps),
                        sr,
                    ),
                };
                let DspState::Biquad { x1, x2, y1, y2, .. } = &mut self.state else {
                    unreachable!()
                };
                let [b0, b1, b2, a1, a2] = coeffs;
                let y = b0 * x + b1 * *x1 + b2 * *x2 - a1 * *y1 - a2 * *y2;
                *x2 = *x1;
                *x1 = x;
                *y2 = *y1;
                *y1 = if y.is_finite() { y } else { 0.0 };
                y
            }
        }
    }
}

/// RBJ cookbook coefficients normalised by `a0`: `[b0, b1, b2, a1, a2]`.
pub fn biquad_coeffs(mode: FilterMode, f0: f64, q: f64, sr: f64) -> [f64; 5] {
    let w0 = 2.0 * PI * f0 / sr;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let (b0, b1, b2) = match mode {
        FilterMode::LowPass => ((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0),
        FilterMode::HighPass => ((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0),
        FilterMode::BandPass => (alpha, 0.0, -alpha),
    };
    let a0 = 1.0 + alpha;
    [b0 / a0, b1 / a0, b2 / a0, -2.0 * cos / a0, (1.0 - alpha) / a0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::FUNDAMENTAL_INPUT;

    fn desk() -> RenderSettings {
        RenderSettings {
            duration_s: 1.0,
            ..RenderSettings::default()
        }
    }

    #[test]
    fn minimal_genome_renders_weighted_sinusoid() {
        let g = Genome::minimal(0);
        let w = g.cppn.connections[0].weight;
        assert_eq!(g.cppn.connections[0].source, FUNDAMENTAL_INPUT);
        let settings = RenderSettings::default();
        let r = render(&g, &settings).unwrap();
        assert_eq!(r.buffer.len(), 64_000);
        for (i, &s) in r.buffer.samples.iter().enumerate() {
            let expect = (w * (2.0 * PI * 220.0 * i as f64 / 16_000.0).sin()).clamp(-1.0, 1.0);
            assert!((s - expect).abs() < 1e-12, "sample {i}");
        }
        assert_eq!(r.report, RenderReport::default());
    }

    #[test]
    fn rendering_is_deterministic() {
        let g = Genome::minimal(4);
        let a = render(&g, &desk()).unwrap().buffer;
        let b = render(&g, &desk()).unwrap().buffer;
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn loud_output_is_peak_normalised() {
        let mut g = Genome::minimal(0);
        g.cppn.connections[0].weight = 3.0;
        let r = render(&g, &desk()).unwrap();
        assert!(r.report.normalized_from.unwrap() > 2.9);
        assert!((r.buffer.peak() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsupported_rate() {
        let s = RenderSettings {
            sample_rate: 44_100,
            ..desk()
        };
        assert!(matches!(
            render(&Genome::minimal(0), &s),
            Err(Error::SampleRate(44_100))
        ));
    }

    #[test]
    fn length_follows_rate_and_duration() {
        let s = RenderSettings {
            sample_rate: 48_000,
            duration_s: 0.25,
            pitch_hz: 110.0,
        };
        assert_eq!(render(&Genome::minimal(0), &s).unwrap().buffer.len(), 12_000);
    }

    #[test]
    fn lowpass_coefficients_have_unit_dc_gain() {
        let [b0, b1, b2, a1, a2] = biquad_coeffs(FilterMode::LowPass, 1000.0, 0.707, 16_000.0);
        assert!(((b0 + b1 + b2) / (1.0 + a1 + a2) - 1.0).abs() < 1e-12);
    }
}
