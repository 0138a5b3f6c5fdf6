//! The DSP half of a genome: a small modular-synth style patch whose audio
//! and parameter inputs come from CPPN signal taps.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cppn::topo_order;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    LowPass,
    HighPass,
    BandPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DspKind {
    Gain,
    /// Crossfade between the first input (dry) and the sum of the rest.
    Mix,
    /// Feedback comb: `y[n] = x[n] + feedback · y[n - d]`.
    DelayLine,
    BiquadFilter { mode: FilterMode },
    /// `tanh(drive · x)`.
    WaveShaper,
    Output,
}

/// Static description of one parameter slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub default: f64,
}

impl ParamSpec {
    const fn new(name: &'static str, min: f64, max: f64, default: f64) -> Self {
        ParamSpec {
            name,
            min,
            max,
            default,
        }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        if v.is_finite() {
            v.clamp(self.min, self.max)
        } else {
            self.default
        }
    }
}

const GAIN: [ParamSpec; 1] = [ParamSpec::new("gain", -4.0, 4.0, 1.0)];
const MIX: [ParamSpec; 1] = [ParamSpec::new("balance", 0.0, 1.0, 0.5)];
const DELAY: [ParamSpec; 2] = [
    ParamSpec::new("delay_ms", 0.0, 50.0, 10.0),
    ParamSpec::new("feedback", -0.95, 0.95, 0.3),
];
/// Cutoff is a normalized log frequency: `20 · 1000^u` Hz.
const BIQUAD: [ParamSpec; 2] = [
    ParamSpec::new("cutoff", 0.0, 1.0, 0.6),
    ParamSpec::new("q", 0.1, 20.0, 0.707),
];
const SHAPER: [ParamSpec; 1] = [ParamSpec::new("drive", 0.1, 20.0, 2.0)];

impl DspKind {
    pub fn param_specs(self) -> &'static [ParamSpec] {
        match self {
            DspKind::Gain => &GAIN,
            DspKind::Mix => &MIX,
            DspKind::DelayLine => &DELAY,
            DspKind::BiquadFilter { .. } => &BIQUAD,
            DspKind::WaveShaper => &SHAPER,
            DspKind::Output => &[],
        }
    }

    /// Kinds a mutation may insert.
    pub const INSERTABLE: [DspKind; 7] = [
        DspKind::Gain,
        DspKind::Mix,
        DspKind::DelayLine,
        DspKind::BiquadFilter {
            mode: FilterMode::LowPass,
        },
        DspKind::BiquadFilter {
            mode: FilterMode::HighPass,
        },
        DspKind::BiquadFilter {
            mode: FilterMode::BandPass,
        },
        DspKind::WaveShaper,
    ];
}

/// Normalized cutoff to Hz, kept below Nyquist.
pub fn cutoff_hz(u: f64, sample_rate: f64) -> f64 {
    (20.0 * 1000f64.powf(u)).min(0.45 * sample_rate)
}

/// A parameter is either a constant or follows a CPPN tap:
/// `offset + scale · tap`, clamped to the slot's range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamSlot {
    Fixed { value: f64 },
    Bound { tap: usize, offset: f64, scale: f64 },
}

impl ParamSlot {
    #[inline]
    pub fn resolve(&self, spec: &ParamSpec, taps: &[f64]) -> f64 {
        match *self {
            ParamSlot::Fixed { value } => spec.clamp(value),
            ParamSlot::Bound { tap, offset, scale } => {
                spec.clamp(offset + scale * taps.get(tap).copied().unwrap_or(0.0))
            }
        }
    }

    pub fn is_bound(&self) -> bool {
        matches!(self, ParamSlot::Bound { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspNode {
    pub id: u32,
    #[serde(flatten)]
    pub kind: DspKind,
    pub params: Vec<ParamSlot>,
}

impl DspNode {
    pub fn with_defaults(id: u32, kind: DspKind) -> Self {
        DspNode {
            id,
            kind,
            params: kind
                .param_specs()
                .iter()
                .map(|s| ParamSlot::Fixed { value: s.default })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum DspSource {
    Node(u32),
    Tap(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspEdge {
    pub innovation: u64,
    pub source: DspSource,
    pub target: u32,
}

/// Node ids are dense, like the CPPN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspGraph {
    pub nodes: Vec<DspNode>,
    pub edges: Vec<DspEdge>,
}

impl DspGraph {
    pub fn node(&self, id: u32) -> Option<&DspNode> {
        self.nodes.get(id as usize)
    }

    pub fn output_id(&self) -> Option<u32> {
        self.nodes
            .iter()
            .find(|n| n.kind == DspKind::Output)
            .map(|n| n.id)
    }

    pub fn push_node(&mut self, kind: DspKind) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(DspNode::with_defaults(id, kind));
        id
    }

    pub fn has_edge(&self, source: DspSource, target: u32) -> bool {
        self.edges
            .iter()
            .any(|e| e.source == source && e.target == target)
    }

    /// Whether `to` is reachable from node `from`.
    pub fn reaches(&self, from: u32, to: u32) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            stack.extend(
                self.edges
                    .iter()
                    .filter(|e| e.source == DspSource::Node(n))
                    .map(|e| e.target),
            );
        }
        false
    }

    /// Incoming edges of `target`, in innovation order.
    pub fn inputs_of(&self, target: u32) -> Vec<DspSource> {
        let mut v: Vec<&DspEdge> = self.edges.iter().filter(|e| e.target == target).collect();
        v.sort_by_key(|e| e.innovation);
        v.into_iter().map(|e| e.source).collect()
    }

    pub fn topological_order(&self) -> Option<Vec<u32>> {
        topo_order(
            self.nodes.len(),
            self.edges.iter().filter_map(|e| match e.source {
                DspSource::Node(s) => Some((s as usize, e.target as usize)),
                DspSource::Tap(_) => None,
            }),
        )
        .map(|v| v.into_iter().map(|i| i as u32).collect())
    }

    pub fn validate(&self, tap_count: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenome(format!("dsp: {m}")));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id as usize != i {
                return bad(format!("node at index {i} has id {}", n.id));
            }
            let specs = n.kind.param_specs();
            if n.params.len() != specs.len() {
                return bad(format!(
                    "node {} has {} parameter slots, expected {}",
                    n.id,
                    n.params.len(),
                    specs.len()
                ));
            }
            for (slot, spec) in n.params.iter().zip(specs) {
                match *slot {
                    ParamSlot::Fixed { value } => {
                        if !value.is_finite() || value < spec.min || value > spec.max {
                            return bad(format!("node {} {} = {value} out of range", n.id, spec.name));
                        }
                    }
                    ParamSlot::Bound { tap, offset, scale } => {
                        if tap >= tap_count {
                            return bad(format!("node {} binds missing tap {tap}", n.id));
                        }
                        if !offset.is_finite() || !scale.is_finite() {
                            return bad(format!("node {} {} binding not finite", n.id, spec.name));
                        }
                    }
                }
            }
        }
        let outputs: Vec<u32> = self
            .nodes
            .iter()
            .filter(|n| n.kind == DspKind::Output)
            .map(|n| n.id)
            .collect();
        let [out] = outputs[..] else {
            return bad(format!("expected exactly one output node, found {}", outputs.len()));
        };
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if self.node(e.target).is_none() {
                return bad(format!("edge {} targets a missing node", e.innovation));
            }
            match e.source {
                DspSource::Node(s) => {
                    if self.node(s).is_none() {
                        return bad(format!("edge {} from a missing node", e.innovation));
                    }
                    if s == out {
                        return bad(format!("edge {} leaves the output node", e.innovation));
                    }
                }
                DspSource::Tap(t) if t >= tap_count => {
                    return bad(format!("edge {} reads missing tap {t}", e.innovation));
                }
                DspSource::Tap(_) => {}
            }
            if !seen.insert((e.source, e.target)) {
                return bad(format!("duplicate edge into node {}", e.target));
            }
        }
        if self.topological_order().is_none() {
            return bad("graph contains a cycle".into());
        }
        if self.inputs_of(out).is_empty() {
            return bad("output node has no inputs".into());
        }
        for n in &self.nodes {
            if !self.reaches(n.id, out) {
                return bad(format!("node {} is not connected to the output", n.id));
            }
        }
        Ok(())
    }
}
