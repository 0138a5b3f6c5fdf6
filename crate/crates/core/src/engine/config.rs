use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::ProtectionRule;
use crate::error::{Error, IoContext, Result};
use crate::fitness::{FitnessConfig, FitnessRegime};
use crate::genome::MutationRates;
use crate::projection::TrainConfig;
use crate::render::RenderSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRegime {
    Manual,
    PcaStatic,
    PcaDynamic,
    AeStatic,
    AeDynamic,
}

impl ProjectionRegime {
    pub fn is_dynamic(self) -> bool {
        matches!(self, ProjectionRegime::PcaDynamic | ProjectionRegime::AeDynamic)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProjectionRegime::Manual => "manual",
            ProjectionRegime::PcaStatic => "pca_static",
            ProjectionRegime::PcaDynamic => "pca_dynamic",
            ProjectionRegime::AeStatic => "ae_static",
            ProjectionRegime::AeDynamic => "ae_dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub regime: ProjectionRegime,
    #[serde(default = "default_manual_features")]
    pub manual_features: [String; 2],
    /// Increment factor of the retraining schedule.
    #[serde(default = "default_increment")]
    pub retrain_increment: u64,
    #[serde(default)]
    pub autoencoder: TrainConfig,
}

fn default_manual_features() -> [String; 2] {
    ["slope".into(), "rolloff".into()]
}

fn default_increment() -> u64 {
    50
}

impl ProjectionConfig {
    pub fn new(regime: ProjectionRegime) -> Self {
        ProjectionConfig {
            regime,
            manual_features: default_manual_features(),
            retrain_increment: default_increment(),
            autoencoder: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub budget: u64,
    pub seed_iterations: u64,
    pub batch_size: u64,
    pub grid_size: usize,
    pub projection: ProjectionConfig,
    pub fitness: FitnessConfig,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub mutation: MutationRates,
    #[serde(default)]
    pub protection: ProtectionRule,
    /// Reference store directory; required by reference-based fitness.
    #[serde(default)]
    pub reference_store: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Abort when more than this fraction of a batch is invalid.
    #[serde(default = "default_invalid_fraction")]
    pub max_invalid_fraction: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_checkpoint_every() -> u64 {
    500
}

fn default_invalid_fraction() -> f64 {
    0.5
}

impl RunConfig {
    /// 300 000 evaluations on a 100×100 grid with 4 s sounds.
    pub fn full(projection: ProjectionRegime, fitness: FitnessConfig) -> RunConfig {
        RunConfig {
            seed: 0,
            budget: 300_000,
            seed_iterations: 512,
            batch_size: 64,
            grid_size: 100,
            projection: ProjectionConfig::new(projection),
            fitness,
            render: RenderSettings::default(),
            mutation: MutationRates::default(),
            protection: ProtectionRule::default(),
            reference_store: None,
            checkpoint_every: default_checkpoint_every(),
            max_invalid_fraction: default_invalid_fraction(),
            output_dir: None,
        }
    }

    /// 20 000 evaluations on a 32×32 grid with 1 s sounds.
    pub fn desk(projection: ProjectionRegime, fitness: FitnessConfig) -> RunConfig {
        RunConfig {
            budget: 20_000,
            grid_size: 32,
            render: RenderSettings {
                duration_s: 1.0,
                ..RenderSettings::default()
            },
            ..RunConfig::full(projection, fitness)
        }
    }

    /// Checks everything except that a configured store path exists.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seed_iterations == 0 {
            return bad("seed_iterations must be ≥ 1".into());
        }
        if self.budget < self.seed_iterations {
            return bad(format!(
                "budget {} is smaller than seed_iterations {}",
                self.budget, self.seed_iterations
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.grid_size == 0 {
            return bad("grid_size must be ≥ 1".into());
        }
        if self.projection.retrain_increment == 0 || self.projection.retrain_increment % 2 != 0 {
            return bad("retrain_increment must be a positive even number".into());
        }
        if !(0.0..=1.0).contains(&self.max_invalid_fraction) {
            return bad("max_invalid_fraction must lie in [0, 1]".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be ≥ 1".into());
        }
        self.render.validate()?;
        self.mutation.validate()?;
        self.fitness.validate()?;
        for f in &self.projection.manual_features {
            crate::features::SpectralFeatureSet::index_of(f)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.fitness.needs_store() && self.reference_store.is_none() {
            return Err(Error::Config(format!(
                "fitness regime {:?} needs a reference_store",
                self.fitness.regime
            )));
        }
        Ok(())
    }

    /// Generations spent on seeding (the last may be partial).
    pub fn seed_generations(&self) -> u64 {
        self.seed_iterations.div_ceil(self.batch_size)
    }

    /// Generations after the seed phase (the last may be partial).
    pub fn evolution_generations(&self) -> u64 {
        (self.budget - self.seed_iterations).div_ceil(self.batch_size)
    }

    /// Seed plus evolution generations: 4688 at the full-scale defaults.
    pub fn total_generations(&self) -> u64 {
        self.seed_generations() + self.evolution_generations()
    }

    /// Number of candidates evaluated in 1-based generation `g`.
    pub fn batch_at(&self, g: u64) -> u64 {
        let s = self.seed_generations();
        if g <= s {
            (self.seed_iterations - (g - 1) * self.batch_size).min(self.batch_size)
        } else {
            let done = (g - s - 1) * self.batch_size;
            (self.budget - self.seed_iterations - done).min(self.batch_size)
        }
    }

    /// Digest of every field that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Decode {
            field: e.path().to_string(),
            reason: e.inner().message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(store) = &cfg.reference_store {
            if store.is_relative() {
                cfg.reference_store = Some(base.join(store));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn uses_store(&self) -> bool {
        self.fitness.needs_store() || self.reference_store.is_some()
    }

    pub fn describe(&self) -> String {
        let fit = match &self.fitness.regime {
            FitnessRegime::SingleRef { reference } => format!("single_ref({reference})"),
            FitnessRegime::MultiRef { k } => format!("multi_ref(k={k})"),
            FitnessRegime::RefFree => "ref_free".into(),
        };
        format!("{}/{fit}", self.projection.regime.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref_free() -> FitnessConfig {
        FitnessConfig {
            regime: FitnessRegime::RefFree,
            power: 1.0,
        }
    }

    #[test]
    fn full_protocol_has_4688_generations() {
        let c = RunConfig::full(ProjectionRegime::PcaDynamic, ref_free());
        assert_eq!(c.seed_generations(), 8);
        assert_eq!(c.evolution_generations(), 4680);
        assert_eq!(c.total_generations(), 4688);
        let evals: u64 = (1..=c.total_generations()).map(|g| c.batch_at(g)).sum();
        assert_eq!(evals, 300_000);
        assert_eq!(c.batch_at(4688), 32);
    }

    #[test]
    fn seed_only_budget() {
        let mut c = RunConfig::full(ProjectionRegime::Manual, ref_free());
        c.budget = 512;
        assert_eq!(c.evolution_generations(), 0);
        assert_eq!(c.total_generations(), c.seed_generations());
    }

    #[test]
    fn toml_round_trip_and_field_errors() {
        let c = RunConfig::desk(ProjectionRegime::PcaStatic, ref_free());
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let broken = text.replace("batch_size = 64", "batch_size = \"many\"");
        match RunConfig::from_toml(&broken).unwrap_err() {
            Error::Decode { field, .. } => assert_eq!(field, "batch_size"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::desk(ProjectionRegime::PcaStatic, ref_free());
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::desk(ProjectionRegime::PcaStatic, ref_free());
        c.validate().unwrap();
        c.budget = 10;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk(
            ProjectionRegime::PcaStatic,
            FitnessConfig {
                regime: FitnessRegime::MultiRef { k: 15 },
                power: 1.0,
            },
        );
        assert!(c.validate().is_err());
        c.reference_store = Some("store".into());
        c.validate().unwrap();
    }
}
