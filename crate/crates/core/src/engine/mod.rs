//! The MAP-Elites loop: seeding, selection, mutation, parallel evaluation,
//! ordered commits, retraining barriers and checkpoints.

pub mod config;
pub mod evaluate;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::diversity;
use crate::archive::{write_events_jsonl, Archive, Cell, Elite, Origin};
use crate::error::{Error, IoContext, Result};
use crate::features::{NormStats, SpectralFeatureSet};
use crate::genome::{Genome, GenomeId};
use crate::projection::{
    fit_autoencoder, fit_pca, manual_projector, ProjectionInput, Projector, RetrainSchedule,
};
use crate::refdb::ReferenceStore;

pub use config::{ProjectionConfig, ProjectionRegime, RunConfig};
pub use evaluate::{CandidateEvaluator, Evaluation, MockEvaluator, SoundEvaluator};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: Genome,
    pub parent_cell: Option<Cell>,
    pub features: Vec<f64>,
    pub spectral: Option<SpectralFeatureSet>,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub generation: u64,
    pub evaluations: u64,
    pub occupied: usize,
    pub coverage: f64,
    pub diversity: f64,
    pub grid_mean_fitness: f64,
    pub qd_score: f64,
    /// Mean cross-cell crownings over occupied cells, remap included.
    pub goal_switches: f64,
    /// Mean cross-cell settlements of mutation offspring only.
    pub mutation_goal_switches: f64,
    pub cross_cell_total: u64,
    pub remap_cross_cell_total: u64,
    pub invalid: u64,
    pub retrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Last completed generation, 1-based; 0 before the first.
    pub generation: u64,
    pub evaluations: u64,
    pub next_id: u64,
    pub invalid: u64,
    pub archive: Archive,
    pub projector: Option<Projector>,
    pub schedule: RetrainSchedule,
    pub rng: ChaCha8Rng,
    pub norm: Option<NormStats>,
    /// Seed-phase candidates awaiting the initial projector.
    pub seed_buffer: Vec<Candidate>,
    pub retrain_generations: Vec<u64>,
    pub last_metrics: Option<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub state: RunState,
    /// Output file lengths at checkpoint time, used to truncate on resume.
    pub metrics_len: u64,
    pub events_len: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let c: Checkpoint = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Decode {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        if c.config.hash() != c.config_hash {
            return Err(Error::Checkpoint("embedded config does not match its hash".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path).at(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub generations: u64,
    pub evaluations: u64,
    pub invalid: u64,
    pub coverage: f64,
    pub diversity: f64,
    pub grid_mean_fitness: f64,
    pub qd_score: f64,
    pub goal_switches: f64,
    pub mutation_goal_switches: f64,
    pub retrain_generations: Vec<u64>,
}

/// Run directory manifest: config echo, code version, seed, timestamps and
/// the reference store digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seed: u64,
    pub store_digest: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Manifest> {
        let path = run_dir.join(MANIFEST);
        Ok(serde_json::from_slice(&std::fs::read(&path).at(&path)?)?)
    }

    /// Checks that the configured reference store still has the digest
    /// recorded at run start.
    pub fn verify_store(&self) -> Result<()> {
        let (Some(expected), Some(dir)) = (&self.store_digest, &self.config.reference_store) else {
            return Ok(());
        };
        let actual = store_digest(dir)?;
        if &actual != expected {
            return Err(Error::Checkpoint(format!(
                "reference store {} changed since the run started (digest {actual}, expected {expected})",
                dir.display()
            )));
        }
        Ok(())
    }
}

const METRICS: &str = "metrics.csv";
const EVENTS: &str = "events.jsonl";
const MANIFEST: &str = "manifest.json";

struct RunOutput {
    dir: PathBuf,
    metrics: csv::Writer<BufWriter<File>>,
    events: BufWriter<File>,
}

impl RunOutput {
    fn open(dir: &Path, truncate_to: Option<(u64, u64)>) -> Result<RunOutput> {
        for sub in ["", "checkpoints", "projectors"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).at(&d)?;
        }
        let open = |name: &str, len: Option<u64>| -> Result<File> {
            let path = dir.join(name);
            let f = match len {
                Some(len) => {
                    let f = OpenOptions::new().write(true).open(&path).at(&path)?;
                    f.set_len(len).at(&path)?;
                    OpenOptions::new().append(true).open(&path).at(&path)?
                }
                None => File::create(&path).at(&path)?,
            };
            Ok(f)
        };
        let metrics = open(METRICS, truncate_to.map(|t| t.0))?;
        let events = open(EVENTS, truncate_to.map(|t| t.1))?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            metrics: csv::WriterBuilder::new()
                .has_headers(truncate_to.is_none())
                .from_writer(BufWriter::new(metrics)),
            events: BufWriter::new(events),
        })
    }

    fn flush(&mut self) -> Result<(u64, u64)> {
        let err = |e: std::io::Error| Error::Io {
            path: self.dir.clone(),
            source: e,
        };
        self.metrics.flush().map_err(err)?;
        self.events.flush().map_err(err)?;
        let len = |n: &str| -> Result<u64> {
            let p = self.dir.join(n);
            Ok(std::fs::metadata(&p).at(&p)?.len())
        };
        Ok((len(METRICS)?, len(EVENTS)?))
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Digest over the files of a stored reference corpus.
pub fn store_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in ["manifest.json", "features.bin", "index.bin"] {
        let p = dir.join(name);
        h.update(std::fs::read(&p).at(&p)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Picks `n` parent cells uniformly with replacement.
pub fn select_parent_cells<R: Rng>(occupied: &[Cell], n: usize, rng: &mut R) -> Vec<Cell> {
    (0..n)
        .map(|_| occupied[rng.random_range(0..occupied.len())])
        .collect()
}

pub struct Engine<E: CandidateEvaluator> {
    config: RunConfig,
    evaluator: E,
    store: Option<Arc<ReferenceStore>>,
    state: RunState,
    output: Option<RunOutput>,
    pool: Option<rayon::ThreadPool>,
}

impl<E: CandidateEvaluator> Engine<E> {
    pub fn new(config: RunConfig, evaluator: E, store: Option<Arc<ReferenceStore>>) -> Result<Self> {
        config.validate_structure()?;
        if config.fitness.needs_store() && store.is_none() {
            return Err(Error::EmptyStore);
        }
        let state = RunState {
            generation: 0,
            evaluations: 0,
            next_id: 1,
            invalid: 0,
            archive: Archive::with_rule(config.grid_size, config.protection),
            projector: None,
            schedule: RetrainSchedule {
                increment: config.projection.retrain_increment,
                next_event: 1,
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            norm: store.as_ref().map(|s| s.norm().clone()),
            seed_buffer: Vec::new(),
            retrain_generations: Vec::new(),
            last_metrics: None,
        };
        Ok(Engine {
            config,
            evaluator,
            store,
            state,
            output: None,
            pool: None,
        })
    }

    /// Writes outputs under `dir`: manifest, metrics, events, checkpoints,
    /// projectors and final snapshots.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        let resuming = self.state.generation > 0;
        if !resuming {
            self.output = Some(RunOutput::open(dir, None)?);
            let manifest = Manifest {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_hash: self.config.hash(),
                config: self.config.clone(),
                seed: self.config.seed,
                store_digest: match &self.config.reference_store {
                    Some(p) if p.join("manifest.json").exists() => Some(store_digest(p)?),
                    _ => None,
                },
                started_unix: now_unix(),
                finished_unix: None,
            };
            let path = dir.join(MANIFEST);
            std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
        }
        Ok(self)
    }

    /// Worker threads for evaluation; 0 uses rayon's default.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        if workers > 0 {
            self.pool = Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            );
        }
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn archive(&self) -> &Archive {
        &self.state.archive
    }

    pub fn is_finished(&self) -> bool {
        self.state.generation >= self.config.total_generations()
    }

    pub fn checkpoint(&mut self) -> Result<Checkpoint> {
        let (metrics_len, events_len) = match &mut self.output {
            Some(o) => o.flush()?,
            None => (0, 0),
        };
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            state: self.state.clone(),
            metrics_len,
            events_len,
        })
    }

    /// Continues from a checkpoint. When `config` is given it must hash to
    /// the checkpoint's config. Output files in `dir` are truncated back to
    /// their lengths at checkpoint time.
    pub fn resume(
        ckpt: Checkpoint,
        config: Option<&RunConfig>,
        evaluator: E,
        store: Option<Arc<ReferenceStore>>,
        dir: Option<&Path>,
    ) -> Result<Self> {
        if let Some(c) = config {
            if c.hash() != ckpt.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash {} differs from checkpoint config hash {}",
                    c.hash(),
                    ckpt.config_hash
                )));
            }
        }
        let mut engine = Engine::new(ckpt.config, evaluator, store)?;
        engine.state = ckpt.state;
        if let Some(dir) = dir {
            engine.output = Some(RunOutput::open(dir, Some((ckpt.metrics_len, ckpt.events_len)))?);
        }
        Ok(engine)
    }

    fn evaluate_batch(&self, genomes: &[Genome]) -> Vec<Result<Evaluation>> {
        let eval = || {
            genomes
                .par_iter()
                .map(|g| {
                    let e = self.evaluator.evaluate(g)?;
                    if !e.fitness.is_finite() || e.features.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidGenome("non-finite evaluation".into()));
                    }
                    Ok(e)
                })
                .collect()
        };
        match &self.pool {
            Some(p) => p.install(eval),
            None => eval(),
        }
    }

    fn fresh_id(&mut self) -> GenomeId {
        let id = GenomeId(self.state.next_id);
        self.state.next_id += 1;
        id
    }

    fn seed_genome(&mut self) -> Genome {
        let base = Genome::minimal(self.state.rng.random());
        let id = self.fresh_id();
        let mut g = base.mutate(&mut self.state.rng, &self.config.mutation, id);
        g.parent = None;
        g
    }

    /// Runs one generation and returns its metrics.
    pub fn step(&mut self) -> Result<MetricsRow> {
        if self.is_finished() {
            return Err(Error::Config("run already finished".into()));
        }
        let g = self.state.generation + 1;
        let n = self.config.batch_at(g) as usize;
        let seeding = g <= self.config.seed_generations();

        let occupied = self.state.archive.occupied_cells();
        let (genomes, parents): (Vec<Genome>, Vec<Option<Cell>>) = if seeding || occupied.is_empty() {
            (0..n).map(|_| (self.seed_genome(), None)).unzip()
        } else {
            let cells = select_parent_cells(&occupied, n, &mut self.state.rng);
            cells
                .into_iter()
                .map(|cell| {
                    let id = self.fresh_id();
                    let parent = &self.state.archive.get(cell).expect("occupied").genome;
                    let child = parent.mutate(&mut self.state.rng, &self.config.mutation, id);
                    (child, Some(cell))
                })
                .unzip()
        };

        let results = self.evaluate_batch(&genomes);
        let invalid = results.iter().filter(|r| r.is_err()).count();
        if invalid as f64 > self.config.max_invalid_fraction * n as f64 {
            let first = results.iter().find_map(|r| r.as_ref().err()).unwrap();
            log::error!("generation {g}: {invalid}/{n} invalid; first failure: {first}");
            return Err(Error::TooManyInvalid {
                generation: g,
                invalid,
                batch: n,
            });
        }
        self.state.invalid += invalid as u64;
        self.state.evaluations += n as u64;

        let candidates: Vec<Candidate> = genomes
            .into_iter()
            .zip(parents)
            .zip(results)
            .filter_map(|((genome, parent_cell), r)| {
                r.ok().map(|e| Candidate {
                    genome,
                    parent_cell,
                    features: e.features,
                    spectral: e.spectral,
                    fitness: e.fitness,
                })
            })
            .collect();

        if seeding {
            self.state.seed_buffer.extend(candidates);
            if g == self.config.seed_generations() {
                self.finish_seeding(g)?;
            }
        } else {
            for c in candidates {
                self.place(c, g, Origin::Mutation)?;
            }
        }

        let mut retrained = false;
        if self.config.projection.regime.is_dynamic()
            && self.state.schedule.fire(g)
            && self.state.projector.is_some()
        {
            self.retrain(g)?;
            retrained = true;
        }

        let row = self.metrics(g, retrained);
        self.state.generation = g;
        self.state.last_metrics = Some(row.clone());
        let checkpoint_due = g % self.config.checkpoint_every == 0;
        let events = self.state.archive.drain_events();
        if let Some(out) = &mut self.output {
            out.metrics
                .serialize(&row)
                .map_err(|e| Error::Decode {
                    field: "metrics".into(),
                    reason: e.to_string(),
                })?;
            write_events_jsonl(&events, &mut out.events)?;
        }
        if checkpoint_due && self.output.is_some() {
            self.write_checkpoint()?;
        }
        Ok(row)
    }

    fn write_checkpoint(&mut self) -> Result<PathBuf> {
        let ckpt = self.checkpoint()?;
        let dir = &self.output.as_ref().expect("output").dir;
        let path = dir
            .join("checkpoints")
            .join(format!("ckpt_{:06}.json", self.state.generation));
        std::fs::write(&path, ckpt.to_bytes()?).at(&path)?;
        Ok(path)
    }

    fn norm(&self) -> &NormStats {
        self.state.norm.as_ref().expect("normalisation fitted")
    }

    fn input<'a>(features: &'a [f64], spectral: Option<&'a SpectralFeatureSet>) -> ProjectionInput<'a> {
        ProjectionInput { features, spectral }
    }

    fn place(&mut self, c: Candidate, g: u64, origin: Origin) -> Result<()> {
        let features = self.norm().apply_slice(&c.features);
        let projector = self.state.projector.as_ref().expect("projector fitted");
        let coord = projector.project(
            Self::input(&features, c.spectral.as_ref()),
            self.config.grid_size,
        )?;
        let elite = Elite {
            genome: c.genome,
            fitness: c.fitness,
            features,
            spectral: c.spectral,
            coord,
            generation: g,
            parent_cell: c.parent_cell,
            protection_until: 0,
        };
        self.state.archive.try_place(elite, g, origin);
        Ok(())
    }

    fn finish_seeding(&mut self, g: u64) -> Result<()> {
        let seeds = std::mem::take(&mut self.state.seed_buffer);
        if seeds.is_empty() {
            return Err(Error::DegenerateTraining("no valid seed candidates".into()));
        }
        if self.state.norm.is_none() {
            self.state.norm = Some(NormStats::fit(seeds.iter().map(|c| c.features.as_slice()))?);
        }
        let normalized: Vec<Vec<f64>> = seeds
            .iter()
            .map(|c| self.norm().apply_slice(&c.features))
            .collect();
        let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
        let pc = &self.config.projection;
        let projector = match pc.regime {
            ProjectionRegime::Manual => {
                let from_store: Option<Vec<SpectralFeatureSet>> = self
                    .store
                    .as_ref()
                    .and_then(|s| s.records().iter().map(|r| r.spectral).collect());
                let source = match from_store {
                    Some(s) => s,
                    None => seeds.iter().filter_map(|c| c.spectral).collect(),
                };
                manual_projector(&pc.manual_features[0], &pc.manual_features[1], &source)?
            }
            ProjectionRegime::PcaStatic | ProjectionRegime::PcaDynamic => fit_pca(&refs, g)?,
            ProjectionRegime::AeStatic | ProjectionRegime::AeDynamic => {
                fit_autoencoder(&refs, None, None, &pc.autoencoder, g)?.0
            }
        };
        self.save_projector(&projector)?;
        self.state.projector = Some(projector);
        for c in seeds {
            self.place(c, g, Origin::Seed)?;
        }
        Ok(())
    }

    fn save_projector(&self, p: &Projector) -> Result<()> {
        if let Some(out) = &self.output {
            p.save(
                &out.dir
                    .join("projectors")
                    .join(format!("{}_gen{:06}.json", p.name(), p.generation)),
            )?;
        }
        Ok(())
    }

    fn retrain(&mut self, g: u64) -> Result<()> {
        let training: Vec<&[f64]> = self
            .state
            .archive
            .elites()
            .map(|e| e.features.as_slice())
            .collect();
        let pc = &self.config.projection;
        let fitted = match pc.regime {
            ProjectionRegime::PcaDynamic => fit_pca(&training, g),
            ProjectionRegime::AeDynamic => {
                fit_autoencoder(&training, self.state.projector.as_ref(), None, &pc.autoencoder, g)
                    .map(|r| r.0)
            }
            _ => unreachable!("static regimes never retrain"),
        };
        let projector = match fitted {
            Ok(p) => p,
            Err(Error::DegenerateTraining(why)) => {
                log::warn!("generation {g}: retraining skipped ({why})");
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        info!("generation {g}: retrained {} projector", projector.name());
        let grid = self.config.grid_size;
        let dropped = self.state.archive.remap(g, |e| {
            projector.project(Self::input(&e.features, e.spectral.as_ref()), grid)
        })?;
        if !dropped.is_empty() {
            info!("generation {g}: remap dropped {} elites", dropped.len());
        }
        self.save_projector(&projector)?;
        self.state.projector = Some(projector);
        self.state.retrain_generations.push(g);
        Ok(())
    }

    fn metrics(&self, g: u64, retrained: bool) -> MetricsRow {
        let a = &self.state.archive;
        let feats: Vec<&[f64]> = a.elites().map(|e| e.features.as_slice()).collect();
        let occupied = feats.len();
        let qd_score: f64 = a.elites().map(|e| e.fitness).sum();
        let switches = a.goal_switches();
        MetricsRow {
            generation: g,
            evaluations: self.state.evaluations,
            occupied,
            coverage: a.coverage(),
            diversity: diversity(&feats),
            grid_mean_fitness: if occupied > 0 { qd_score / occupied as f64 } else { 0.0 },
            qd_score,
            goal_switches: a.mean_goal_switches(),
            mutation_goal_switches: a.mean_mutation_goal_switches(),
            cross_cell_total: switches.values().map(|s| s.cross_cell).sum(),
            remap_cross_cell_total: switches.values().map(|s| s.remap_cross_cell).sum(),
            invalid: self.state.invalid,
            retrained,
        }
    }

    /// Steps until generation `target` (inclusive) or the end of the run.
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        while self.state.generation < target.min(self.config.total_generations()) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to completion and writes final artefacts.
    pub fn run(mut self) -> Result<RunReport> {
        self.run_until(u64::MAX)?;
        self.finish()
    }

    pub fn report(&self) -> RunReport {
        let m = self.state.last_metrics.clone().unwrap_or_else(|| self.metrics(0, false));
        RunReport {
            config_hash: self.config.hash(),
            generations: self.state.generation,
            evaluations: self.state.evaluations,
            invalid: self.state.invalid,
            coverage: m.coverage,
            diversity: m.diversity,
            grid_mean_fitness: m.grid_mean_fitness,
            qd_score: m.qd_score,
            goal_switches: m.goal_switches,
            mutation_goal_switches: m.mutation_goal_switches,
            retrain_generations: self.state.retrain_generations.clone(),
        }
    }

    /// Writes the grid snapshot, elites, report, a final checkpoint and the
    /// completed manifest.
    pub fn finish(mut self) -> Result<RunReport> {
        let report = self.report();
        if self.output.is_none() {
            return Ok(report);
        }
        self.write_checkpoint()?;
        let dir = self.output.as_ref().unwrap().dir.clone();
        self.state.archive.save_snapshot_csv(&dir.join("grid.csv"))?;
        let path = dir.join("elites.jsonl");
        let mut w = BufWriter::new(File::create(&path).at(&path)?);
        for e in self.state.archive.elites() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").at(&path)?;
        }
        w.flush().at(&path)?;
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&report)?).at(&path)?;
        let path = dir.join(MANIFEST);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(mut m) = serde_json::from_slice::<Manifest>(&bytes) {
                m.finished_unix = Some(now_unix());
                std::fs::write(&path, serde_json::to_vec_pretty(&m)?).at(&path)?;
            }
        }
        Ok(report)
    }
}

/// Reads `elites.jsonl` from a run directory.
pub fn load_elites(run_dir: &Path) -> Result<Vec<Elite>> {
    let path = run_dir.join("elites.jsonl");
    let text = std::fs::read_to_string(&path).at(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Reads `metrics.csv` from a run directory.
pub fn load_metrics(run_dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = run_dir.join(METRICS);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Decode {
        field: path.display().to_string(),
        reason: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Decode {
                field: "metrics".into(),
                reason: e.to_string(),
            })
        })
        .collect()
}
