//! Sound-generator genomes: a CPPN producing waveform and control signals,
//! coupled to a DSP graph that shapes them into audio. Variation is
//! mutation-only and grows structure from a minimal topology.

mod cppn;
mod dsp;
mod mutation;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cppn::{
    Activation, CppnConnection, CppnGraph, CppnInput, CppnNode, CppnNodeKind,
    DEFAULT_PITCH_RATIOS, FUNDAMENTAL_INPUT,
};
pub use dsp::{
    cutoff_hz, DspEdge, DspGraph, DspKind, DspNode, DspSource, FilterMode, ParamSlot, ParamSpec,
};
pub use mutation::{MutationRates, WEIGHT_LIMIT};

pub const GENOME_SCHEMA_VERSION: u32 = 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct GenomeId(pub u64);

impl std::fmt::Display for GenomeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub id: GenomeId,
    pub parent: Option<GenomeId>,
    /// Last innovation number handed out; every structural addition bumps it.
    pub innovation: u64,
    pub cppn: CppnGraph,
    pub dsp: DspGraph,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema_version: u32,
    #[serde(flatten)]
    genome: &'a Genome,
}


impl Genome {
    /// The smallest legal generator: the fundamental pitch sinusoid wired
    /// through one identity output tap into a unit gain node. Only the
    /// connection weight depends on `seed`.
    pub fn minimal(seed: u64) -> Genome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cppn = CppnGraph::with_inputs(&DEFAULT_PITCH_RATIOS);
        let out = cppn.push_node(CppnNodeKind::Output, Activation::Identity);
        cppn.connections.push(CppnConnection {
            innovation: 1,
            source: FUNDAMENTAL_INPUT,
            target: out,
            weight: rng.random_range(-1.0..=1.0),
            enabled: true,
        });

        let mut dsp = DspGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        let output = dsp.push_node(DspKind::Output);
        let gain = dsp.push_node(DspKind::Gain);
        dsp.edges.push(DspEdge {
            innovation: 2,
            source: DspSource::Tap(0),
            target: gain,
        });
        dsp.edges.push(DspEdge {
            innovation: 3,
            source: DspSource::Node(gain),
            target: output,
        });

        Genome {
            id: GenomeId(0),
            parent: None,
            innovation: 3,
            cppn,
            dsp,
        }
    }

    pub fn with_id(mut self, id: GenomeId) -> Genome {
        self.id = id;
        self
    }

    pub fn tap_count(&self) -> usize {
        self.cppn.output_ids().len()
    }

    /// Total node count across both graphs (inputs included).
    pub fn node_count(&self) -> usize {
        self.cppn.nodes.len() + self.dsp.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.cppn.validate()?;
        self.dsp.validate(self.tap_count())?;
        let max_innov = self
            .cppn
            .connections
            .iter()
            .map(|c| c.innovation)
            .chain(self.dsp.edges.iter().map(|e| e.innovation))
            .max()
            .unwrap_or(0);
        if max_innov > self.innovation {
            return Err(Error::InvalidGenome(format!(
                "innovation counter {} behind highest innovation {max_innov}",
                self.innovation
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&Envelope {
            schema_version: GENOME_SCHEMA_VERSION,
            genome: self,
        })?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Genome> {
        let mut value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Decode {
                field: "<root>".into(),
                reason: e.to_string(),
            })?;
        let version = value
            .as_object_mut()
            .and_then(|o| o.remove("schema_version"))
            .ok_or_else(|| Error::Decode {
                field: "schema_version".into(),
                reason: "missing".into(),
            })?;
        if version.as_u64() != Some(GENOME_SCHEMA_VERSION as u64) {
            return Err(Error::Decode {
                field: "schema_version".into(),
                reason: format!("unsupported version {version} (expected {GENOME_SCHEMA_VERSION})"),
            });
        }
        let genome: Genome = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Decode {
                field: if path == "." { "<root>".into() } else { path },
                reason: e.into_inner().to_string(),
            }
        })?;
        genome.validate()?;
        Ok(genome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_genome_shape() {
        let g = Genome::minimal(0);
        g.validate().unwrap();
        assert_eq!(g.cppn.hidden_count(), 0);
        assert_eq!(g.cppn.output_ids().len(), 1);
        assert_eq!(g.cppn.connections.len(), 1);
        let gains = g.dsp.nodes.iter().filter(|n| n.kind == DspKind::Gain).count();
        assert_eq!(gains, 1);
        assert_eq!(g.dsp.nodes.len(), 2);
    }

    #[test]
    fn minimal_genome_is_deterministic() {
        assert_eq!(Genome::minimal(0), Genome::minimal(0));
    }

    #[test]
    fn minimal_genomes_differ_only_in_weights() {
        let mut a = Genome::minimal(0);
        let mut b = Genome::minimal(1);
        assert_ne!(a.cppn.connections[0].weight, b.cppn.connections[0].weight);
        a.cppn.connections[0].weight = 0.0;
        b.cppn.connections[0].weight = 0.0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn json_round_trip() {
        let g = Genome::minimal(0);
        let back = Genome::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn truncated_json_is_a_decode_error() {
        let bytes = Genome::minimal(3).to_json().unwrap();
        let err = Genome::from_json(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }), "{err}");
    }

    #[test]
    fn wrong_field_type_names_the_field() {
        let bytes = Genome::minimal(3).to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["cppn"]["connections"][0]["weight"] = serde_json::json!("heavy");
        let err = Genome::from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        match err {
            Error::Decode { field, .. } => assert!(field.contains("weight"), "{field}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let bytes = Genome::minimal(3).to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["schema_version"] = serde_json::json!(99);
        let err = Genome::from_json(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Decode { ref field, .. } if field == "schema_version"));
    }
}
