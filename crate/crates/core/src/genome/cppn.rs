//! Compositional pattern producing network: a DAG of waveform activations
//! fed by a time ramp and a set of pitch sinusoids.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency multiples of the render pitch offered as CPPN inputs.
pub const DEFAULT_PITCH_RATIOS: [f64; 5] = [1.0, 0.5, 2.0, 3.0, 5.0];

/// Input index of the fundamental pitch sinusoid in a default graph.
pub const FUNDAMENTAL_INPUT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Square,
    Sawtooth,
    Triangle,
    Identity,
}

impl Activation {
    pub const WAVEFORMS: [Activation; 4] = [
        Activation::Sine,
        Activation::Square,
        Activation::Sawtooth,
        Activation::Triangle,
    ];

    /// All periodic activations have period 2 in their argument, so an input
    /// swinging over [-1, 1] traces exactly one cycle.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sine => (PI * x).sin(),
            Activation::Square => {
                let u = x * 0.5;
                if u - u.floor() < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Activation::Sawtooth => sawtooth(x),
            Activation::Triangle => 1.0 - 2.0 * sawtooth(x).abs(),
            Activation::Identity => x,
        }
    }
}

#[inline]
fn sawtooth(x: f64) -> f64 {
    let u = (x + 1.0) * 0.5;
    2.0 * (u - u.floor()) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CppnInput {
    /// Linear ramp over the sound, `t` in [0, 1).
    Ramp,
    /// `sin(2π · ratio · pitch · seconds)`.
    Pitch { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum CppnNodeKind {
    Input { source: CppnInput },
    Hidden,
    /// Signal tap consumed by the DSP graph.
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppnNode {
    pub id: u32,
    pub kind: CppnNodeKind,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppnConnection {
    pub innovation: u64,
    pub source: u32,
    pub target: u32,
    pub weight: f64,
    pub enabled: bool,
}

/// Node ids are dense: node `i` lives at `nodes[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppnGraph {
    pub nodes: Vec<CppnNode>,
    pub connections: Vec<CppnConnection>,
}

impl CppnGraph {
    /// Input nodes for a ramp plus one sinusoid per ratio, no other nodes.
    pub fn with_inputs(pitch_ratios: &[f64]) -> Self {
        let mut nodes = vec![CppnNode {
            id: 0,
            kind: CppnNodeKind::Input {
                source: CppnInput::Ramp,
            },
            activation: Activation::Identity,
        }];
        for &ratio in pitch_ratios {
            nodes.push(CppnNode {
                id: nodes.len() as u32,
                kind: CppnNodeKind::Input {
                    source: CppnInput::Pitch { ratio },
                },
                activation: Activation::Identity,
            });
        }
        CppnGraph {
            nodes,
            connections: Vec::new(),
        }
    }

    pub fn push_node(&mut self, kind: CppnNodeKind, activation: Activation) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(CppnNode {
            id,
            kind,
            activation,
        });
        id
    }

    pub fn node(&self, id: u32) -> Option<&CppnNode> {
        self.nodes.get(id as usize)
    }

    pub fn is_input(&self, id: u32) -> bool {
        matches!(
            self.node(id).map(|n| n.kind),
            Some(CppnNodeKind::Input { .. })
        )
    }

    pub fn input_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, CppnNodeKind::Input { .. }))
            .map(|n| n.id)
    }

    /// Output node ids in tap order.
    pub fn output_ids(&self) -> Vec<u32> {
        self.nodes
            .iter()
            .filter(|n| n.kind == CppnNodeKind::Output)
            .map(|n| n.id)
            .collect()
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == CppnNodeKind::Hidden)
            .count()
    }

    /// Number of non-input nodes.
    pub fn evolved_node_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.kind, CppnNodeKind::Input { .. }))
            .count()
    }

    pub fn has_connection(&self, source: u32, target: u32) -> bool {
        self.connections
            .iter()
            .any(|c| c.source == source && c.target == target)
    }

    /// True when `to` is reachable from `from` along any connection,
    /// enabled or not.
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
                self.connections
                    .iter()
                    .filter(|c| c.source == n)
                    .map(|c| c.target),
            );
        }
        false
    }

    /// Whether some output is reachable from some input over enabled edges.
    pub fn has_signal_path(&self) -> bool {
        let mut live: BTreeSet<u32> = self.input_ids().collect();
        let mut frontier: Vec<u32> = live.iter().copied().collect();
        while let Some(n) = frontier.pop() {
            for c in self.connections.iter().filter(|c| c.enabled && c.source == n) {
                if live.insert(c.target) {
                    frontier.push(c.target);
                }
            }
        }
        self.output_ids().iter().any(|o| live.contains(o))
    }

    /// Kahn's algorithm over all connections, ties broken by lowest id.
    /// Returns `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<u32>> {
        topo_order(
            self.nodes.len(),
            self.connections
                .iter()
                .map(|c| (c.source as usize, c.target as usize)),
        )
        .map(|v| v.into_iter().map(|i| i as u32).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenome(format!("cppn: {m}")));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id as usize != i {
                return bad(format!("node at index {i} has id {}", n.id));
            }
        }
        if self.input_ids().next().is_none() {
            return bad("no input nodes".into());
        }
        if self.output_ids().is_empty() {
            return bad("no output nodes".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.connections {
            if self.node(c.source).is_none() || self.node(c.target).is_none() {
                return bad(format!(
                    "connection {} references a missing node",
                    c.innovation
                ));
            }
            if self.is_input(c.target) {
                return bad(format!("connection {} targets an input", c.innovation));
            }
            if !c.weight.is_finite() {
                return bad(format!("connection {} has a non-finite weight", c.innovation));
            }
            if !seen.insert((c.source, c.target)) {
                return bad(format!("duplicate connection {} -> {}", c.source, c.target));
            }
        }
        if self.topological_order().is_none() {
            return bad("graph contains a cycle".into());
        }
        if !self.has_signal_path() {
            return bad("no enabled path from an input to an output".into());
        }
        Ok(())
    }
}

/// Kahn's algorithm with smallest-index-first tie breaking.
pub(crate) fn topo_order(
    n: usize,
    edges: impl Iterator<Item = (usize, usize)>,
) -> Option<Vec<usize>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut indeg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for (s, t) in edges {
        adj[s].push(t);
        indeg[t] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &t in &adj[i] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(Reverse(t));
            }
        }
    }
    (order.len() == n).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveforms_are_bounded_and_periodic() {
        for act in Activation::WAVEFORMS {
            for i in -400..400 {
                let x = i as f64 * 0.0137;
                let y = act.apply(x);
                assert!((-1.0..=1.0).contains(&y), "{act:?}({x}) = {y}");
                assert!((act.apply(x + 2.0) - y).abs() < 1e-9, "{act:?} period");
            }
        }
    }

    #[test]
    fn waveform_landmarks() {
        assert!((Activation::Sine.apply(0.5) - 1.0).abs() < 1e-12);
        assert_eq!(Activation::Square.apply(0.5), 1.0);
        assert_eq!(Activation::Square.apply(-0.5), -1.0);
        assert!((Activation::Sawtooth.apply(0.5) - 0.5).abs() < 1e-12);
        assert!((Activation::Triangle.apply(0.0) - 1.0).abs() < 1e-12);
        assert!((Activation::Triangle.apply(1.0) + 1.0).abs() < 1e-12);
        assert_eq!(Activation::Identity.apply(3.5), 3.5);
    }

    #[test]
    fn topo_order_breaks_ties_by_id() {
        let order = topo_order(4, [(3, 0), (2, 1)].into_iter()).unwrap();
        assert_eq!(order, vec![2, 1, 3, 0]);
        assert!(topo_order(2, [(0, 1), (1, 0)].into_iter()).is_none());
    }
}
