//! NEAT-style mutation operators for both halves of a genome. No crossover,
//! no speciation: each child derives from exactly one parent.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cppn::{Activation, CppnConnection, CppnNodeKind};
use super::dsp::{DspEdge, DspKind, DspSource, ParamSlot};
use super::{Genome, GenomeId};
use crate::error::{Error, Result};

/// CPPN weights stay inside `[-WEIGHT_LIMIT, WEIGHT_LIMIT]`.
pub const WEIGHT_LIMIT: f64 = 8.0;

/// Attempts made by a structural operator before it gives up.
const STRUCTURAL_RETRIES: usize = 20;
/// Rounds of operator sampling before the mutation is abandoned.
const MAX_ROUNDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationRates {
    pub add_cppn_node: f64,
    pub add_cppn_connection: f64,
    pub perturb_weight: f64,
    pub add_dsp_node: f64,
    pub add_dsp_connection: f64,
    pub perturb_dsp_parameter: f64,
    pub toggle_connection: f64,
    /// Standard deviation of Gaussian weight perturbations.
    pub weight_sigma: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        MutationRates {
            add_cppn_node: 0.05,
            add_cppn_connection: 0.1,
            perturb_weight: 0.8,
            add_dsp_node: 0.03,
            add_dsp_connection: 0.05,
            perturb_dsp_parameter: 0.3,
            toggle_connection: 0.02,
            weight_sigma: 0.5,
        }
    }
}

impl MutationRates {
    /// Every rate zero.
    pub fn none() -> Self {
        MutationRates {
            add_cppn_node: 0.0,
            add_cppn_connection: 0.0,
            perturb_weight: 0.0,
            add_dsp_node: 0.0,
            add_dsp_connection: 0.0,
            perturb_dsp_parameter: 0.0,
            toggle_connection: 0.0,
            weight_sigma: 0.5,
        }
    }

    fn rates(&self) -> [f64; 7] {
        [
            self.add_cppn_node,
            self.add_cppn_connection,
            self.perturb_weight,
            self.add_dsp_node,
            self.add_dsp_connection,
            self.perturb_dsp_parameter,
            self.toggle_connection,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let rates = self.rates();
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("mutation rates must lie in [0, 1]".into()));
        }
        if rates.iter().all(|&r| r == 0.0) {
            return Err(Error::Config("at least one mutation rate must be positive".into()));
        }
        if !(self.weight_sigma > 0.0 && self.weight_sigma.is_finite()) {
            return Err(Error::Config("weight_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Operator {
    AddCppnNode,
    AddCppnConnection,
    PerturbWeight,
    AddDspNode,
    AddDspConnection,
    PerturbDspParameter,
    ToggleConnection,
}

const OPERATORS: [Operator; 7] = [
    Operator::AddCppnNode,
    Operator::AddCppnConnection,
    Operator::PerturbWeight,
    Operator::AddDspNode,
    Operator::AddDspConnection,
    Operator::PerturbDspParameter,
    Operator::ToggleConnection,
];

impl Genome {
    /// Produces a mutated child. Each operator fires independently with its
    /// rate; rounds are resampled until at least one operator changed the
    /// genome. The parent is untouched.
    pub fn mutate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        rates: &MutationRates,
        child_id: GenomeId,
    ) -> Genome {
        let mut child = self.clone();
        child.id = child_id;
        child.parent = Some(self.id);

        let rs = rates.rates();
        if rs.iter().all(|&r| r <= 0.0) {
            return child;
        }
        for _ in 0..MAX_ROUNDS {
            let mut applied = false;
            for (op, &rate) in OPERATORS.iter().zip(&rs) {
                if rate > 0.0 && rng.random::<f64>() < rate {
                    applied |= child.apply(*op, rng, rates);
                }
            }
            if applied {
                break;
            }
        }
        debug_assert!(child.validate().is_ok());
        child
    }

    fn apply<R: Rng + ?Sized>(&mut self, op: Operator, rng: &mut R, rates: &MutationRates) -> bool {
        match op {
            Operator::AddCppnNode => self.add_cppn_node(rng),
            Operator::AddCppnConnection => self.add_cppn_connection(rng),
            Operator::PerturbWeight => self.perturb_weights(rng, rates.weight_sigma),
            Operator::AddDspNode => self.add_dsp_node(rng),
            Operator::AddDspConnection => self.add_dsp_connection(rng),
            Operator::PerturbDspParameter => self.perturb_dsp_parameter(rng),
            Operator::ToggleConnection => self.toggle_connection(rng),
        }
    }

    fn next_innovation(&mut self) -> u64 {
        self.innovation += 1;
        self.innovation
    }

    /// Splits an enabled connection `a -> b` into `a -> new -> b`.
    fn add_cppn_node<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let enabled: Vec<usize> = (0..self.cppn.connections.len())
            .filter(|&i| self.cppn.connections[i].enabled)
            .collect();
        let Some(&ci) = enabled.choose(rng) else {
            return false;
        };
        let activation = *Activation::WAVEFORMS.choose(rng).unwrap();
        let (source, target, weight) = {
            let c = &mut self.cppn.connections[ci];
            c.enabled = false;
            (c.source, c.target, c.weight)
        };
        let node = self.cppn.push_node(CppnNodeKind::Hidden, activation);
        let i1 = self.next_innovation();
        let i2 = self.next_innovation();
        self.cppn.connections.push(CppnConnection {
            innovation: i1,
            source,
            target: node,
            weight: 1.0,
            enabled: true,
        });
        self.cppn.connections.push(CppnConnection {
            innovation: i2,
            source: node,
            target,
            weight,
            enabled: true,
        });
        true
    }

    fn add_cppn_connection<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let n = self.cppn.nodes.len() as u32;
        for _ in 0..STRUCTURAL_RETRIES {
            let source = rng.random_range(0..n);
            let target = rng.random_range(0..n);
            if source == target
                || self.cppn.is_input(target)
                || self.cppn.has_connection(source, target)
                || self.cppn.reaches(target, source)
            {
                continue;
            }
            let innovation = self.next_innovation();
            self.cppn.connections.push(CppnConnection {
                innovation,
                source,
                target,
                weight: rng.random_range(-1.0..=1.0),
                enabled: true,
            });
            return true;
        }
        false
    }

    fn perturb_weights<R: Rng + ?Sized>(&mut self, rng: &mut R, sigma: f64) -> bool {
        let count = self.cppn.connections.len();
        if count == 0 {
            return false;
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
        let forced = rng.random_range(0..count);
        let mut changed = false;
        for i in 0..count {
            if i != forced && !rng.random_bool(0.5) {
                continue;
            }
            let old = self.cppn.connections[i].weight;
            for _ in 0..8 {
                let w = (old + normal.sample(rng)).clamp(-WEIGHT_LIMIT, WEIGHT_LIMIT);
                if w != old {
                    self.cppn.connections[i].weight = w;
                    changed = true;
                    break;
                }
            }
        }
        changed
    }

    /// Splits a DSP edge `a -> b` into `a -> new -> b`.
    fn add_dsp_node<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.dsp.edges.is_empty() {
            return false;
        }
        let ei = rng.random_range(0..self.dsp.edges.len());
        let kind = *DspKind::INSERTABLE.choose(rng).unwrap();
        let node = self.dsp.push_node(kind);
        let specs = kind.param_specs();
        for (slot, spec) in self.dsp.nodes[node as usize].params.iter_mut().zip(specs) {
            *slot = ParamSlot::Fixed {
                value: rng.random_range(spec.min..=spec.max),
            };
        }
        let old = self.dsp.edges.remove(ei);
        let i1 = self.next_innovation();
        let i2 = self.next_innovation();
        self.dsp.edges.push(DspEdge {
            innovation: i1,
            source: old.source,
            target: node,
        });
        self.dsp.edges.push(DspEdge {
            innovation: i2,
            source: DspSource::Node(node),
            target: old.target,
        });
        true
    }

    /// Adds an audio edge. The source may be a DSP node, an existing CPPN
    /// tap, or a freshly grown tap.
    fn add_dsp_connection<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let Some(out) = self.dsp.output_id() else {
            return false;
        };
        let n = self.dsp.nodes.len() as u32;
        for _ in 0..STRUCTURAL_RETRIES {
            let target = rng.random_range(0..n);
            let source = match rng.random_range(0..4u8) {
                0 => DspSource::Tap(self.tap_count()),
                1 => DspSource::Tap(rng.random_range(0..self.tap_count())),
                _ => DspSource::Node(rng.random_range(0..n)),
            };
            let ok = match source {
                DspSource::Node(s) => {
                    s != out && s != target && !self.dsp.reaches(target, s)
                }
                DspSource::Tap(_) => true,
            };
            if !ok || self.dsp.has_edge(source, target) {
                continue;
            }
            if let DspSource::Tap(t) = source {
                if t == self.tap_count() {
                    self.grow_tap(rng);
                }
            }
            let innovation = self.next_innovation();
            self.dsp.edges.push(DspEdge {
                innovation,
                source,
                target,
            });
            return true;
        }
        false
    }

    /// New CPPN output fed from a random non-output node.
    fn grow_tap<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let sources: Vec<u32> = self
            .cppn
            .nodes
            .iter()
            .filter(|n| n.kind != CppnNodeKind::Output)
            .map(|n| n.id)
            .collect();
        let source = *sources.choose(rng).unwrap();
        let activation = *Activation::WAVEFORMS.choose(rng).unwrap();
        let node = self.cppn.push_node(CppnNodeKind::Output, activation);
        let innovation = self.next_innovation();
        self.cppn.connections.push(CppnConnection {
            innovation,
            source,
            target: node,
            weight: rng.random_range(-1.0..=1.0),
            enabled: true,
        });
        self.tap_count() - 1
    }

    fn perturb_dsp_parameter<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let candidates: Vec<usize> = (0..self.dsp.nodes.len())
            .filter(|&i| !self.dsp.nodes[i].params.is_empty())
            .collect();
        let Some(&ni) = candidates.choose(rng) else {
            return false;
        };
        let taps = self.tap_count();
        let node = &mut self.dsp.nodes[ni];
        let pi = rng.random_range(0..node.params.len());
        let spec = node.kind.param_specs()[pi];
        let sigma = 0.1 * spec.span();
        let normal = Normal::new(0.0, sigma).expect("positive span");
        let slot = &mut node.params[pi];
        let before = *slot;
        *slot = match *slot {
            ParamSlot::Fixed { value } if rng.random_bool(0.15) && taps > 0 => ParamSlot::Bound {
                tap: rng.random_range(0..taps),
                offset: value,
                scale: rng.random_range(-0.5..=0.5) * spec.span(),
            },
            ParamSlot::Fixed { value } => ParamSlot::Fixed {
                value: spec.clamp(value + normal.sample(rng)),
            },
            ParamSlot::Bound { offset, .. } if rng.random_bool(0.1) => ParamSlot::Fixed {
                value: spec.clamp(offset),
            },
            ParamSlot::Bound { tap, offset, scale } => {
                if rng.random_bool(0.5) {
                    ParamSlot::Bound {
                        tap,
                        offset: (offset + normal.sample(rng)).clamp(spec.min, spec.max),
                        scale,
                    }
                } else {
                    ParamSlot::Bound {
                        tap,
                        offset,
                        scale: (scale + normal.sample(rng)).clamp(-spec.span(), spec.span()),
                    }
                }
            }
        };
        *slot != before
    }

    /// Flips one CPPN connection, refusing flips that would cut every
    /// input-to-output path.
    fn toggle_connection<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let count = self.cppn.connections.len();
        if count == 0 {
            return false;
        }
        for _ in 0..STRUCTURAL_RETRIES {
            let i = rng.random_range(0..count);
            self.cppn.connections[i].enabled ^= true;
            if self.cppn.has_signal_path() {
                return true;
            }
            self.cppn.connections[i].enabled ^= true;
        }
        false
    }
}
