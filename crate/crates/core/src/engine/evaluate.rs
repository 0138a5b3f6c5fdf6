use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{MfccExtractor, SpectralExtractor, SpectralFeatureSet, FEATURE_DIM};
use crate::fitness::{q_multi_ref, q_ref_free, q_single_ref, FitnessConfig, FitnessRegime};
use crate::genome::Genome;
use crate::refdb::{resample_linear, ReferenceStore, TARGET_RATE};
use crate::render::{render, RenderSettings, SoundBuffer};

/// What evaluating one genome yields. Features are raw (not normalised).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub features: Vec<f64>,
    pub spectral: Option<SpectralFeatureSet>,
    pub fitness: f64,
}

/// Turns a genome into features and a quality score. Must be a pure
/// function of the genome so that results do not depend on scheduling.
pub trait CandidateEvaluator: Sync {
    fn evaluate(&self, genome: &Genome) -> Result<Evaluation>;
}

/// Render, extract, score.
pub struct SoundEvaluator {
    render: RenderSettings,
    mfcc: MfccExtractor,
    spectral: SpectralExtractor,
    fitness: FitnessConfig,
    store: Option<Arc<ReferenceStore>>,
    reference: Option<usize>,
}

impl SoundEvaluator {
    pub fn new(
        render: RenderSettings,
        fitness: FitnessConfig,
        store: Option<Arc<ReferenceStore>>,
    ) -> Result<SoundEvaluator> {
        render.validate()?;
        fitness.validate()?;
        let reference = match (&fitness.regime, &store) {
            (FitnessRegime::SingleRef { reference }, Some(s)) => Some(s.position(reference)?),
            (FitnessRegime::SingleRef { .. } | FitnessRegime::MultiRef { .. }, None) => {
                return Err(Error::EmptyStore)
            }
            (FitnessRegime::MultiRef { k }, Some(s)) if *k > s.len() => {
                return Err(Error::KOutOfRange { k: *k, size: s.len() })
            }
            _ => None,
        };
        Ok(SoundEvaluator {
            render,
            mfcc: MfccExtractor::default(),
            spectral: SpectralExtractor::default(),
            fitness,
            store,
            reference,
        })
    }

    pub fn render_settings(&self) -> &RenderSettings {
        &self.render
    }

    /// Rendered audio at the feature sample rate.
    pub fn sound(&self, genome: &Genome) -> Result<SoundBuffer> {
        let b = render(genome, &self.render)?.buffer;
        Ok(if b.sample_rate == TARGET_RATE {
            b
        } else {
            SoundBuffer::new(resample_linear(&b.samples, b.sample_rate, TARGET_RATE), TARGET_RATE)
        })
    }
}

impl CandidateEvaluator for SoundEvaluator {
    fn evaluate(&self, genome: &Genome) -> Result<Evaluation> {
        let buffer = self.sound(genome)?;
        let features = self.mfcc.extract(&buffer)?.into_inner();
        let spectral = self.spectral.extract(&buffer)?;
        let p = self.fitness.power;
        let fitness = match (&self.fitness.regime, &self.store) {
            (FitnessRegime::SingleRef { .. }, Some(s)) => {
                let v = s.norm().apply_slice(&features);
                q_single_ref(&v, s.normalized(self.reference.unwrap()), p)?
            }
            (FitnessRegime::MultiRef { k }, Some(s)) => {
                q_multi_ref(&s.norm().apply_slice(&features), s, *k, p)?
            }
            (FitnessRegime::RefFree, _) => q_ref_free(&buffer).powf(p),
            _ => return Err(Error::EmptyStore),
        };
        Ok(Evaluation {
            features,
            spectral: Some(spectral),
            fitness,
        })
    }
}

/// Synthetic evaluator for protocol tests: features and fitness are
/// pseudo-random functions of the genome's structure and weights.
#[derive(Debug, Clone, Default)]
pub struct MockEvaluator {
    /// Fraction of genomes reported as failures.
    pub failure_rate: f64,
}

impl CandidateEvaluator for MockEvaluator {
    fn evaluate(&self, genome: &Genome) -> Result<Evaluation> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for c in &genome.cppn.connections {
            mix(c.weight.to_bits());
            mix(c.innovation);
        }
        for n in &genome.dsp.nodes {
            mix(n.id as u64);
        }
        mix(genome.innovation);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        if rng.random::<f64>() < self.failure_rate {
            return Err(Error::InvalidGenome("mock failure".into()));
        }
        let features: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spectral = SpectralFeatureSet::from_array(std::array::from_fn(|_| rng.random::<f64>()));
        Ok(Evaluation {
            features,
            spectral: Some(spectral),
            fitness: rng.random(),
        })
    }
}
