//! `sonicqd`: reference ingest, quality-diversity runs, resume and analyses.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use sonicqd::analysis::{
    dataset_projection_coverage, line_chart, rank_features, remap_to_manual, save_archive_png,
    write_ranks_csv, DEFAULT_LAMBDA,
};
use sonicqd::archive::{Archive, Origin};
use sonicqd::corpus::{synth_corpus, write_wavs};
use sonicqd::engine::{
    load_elites, load_metrics, Checkpoint, Engine, Manifest, RunConfig, SoundEvaluator,
};
use sonicqd::features::{SpectralExtractor, SpectralFeatureSet};
use sonicqd::projection::manual_projector;
use sonicqd::refdb::{HnswParams, ReferenceStore};

const OUTPUT_ROOT_ENV: &str = "SONICQD_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "sonicqd", version, about = "Quality-diversity search for synthesised sounds")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and inspect reference stores.
    #[command(subcommand)]
    Refdb(RefdbCommand),
    /// Generate a synthetic reference corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Start a run from a config file.
    Run(RunArgs),
    /// Continue a run from one of its checkpoints.
    Resume(ResumeArgs),
    /// Post-hoc analyses of runs and reference stores.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand)]
enum RefdbCommand {
    /// Extract features from every .wav under DIR and index them.
    Ingest {
        dir: PathBuf,
        /// Store directory to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = HnswParams::default().m)]
        m: usize,
        #[arg(long, default_value_t = HnswParams::default().ef_construction)]
        ef_construction: usize,
        #[arg(long, default_value_t = HnswParams::default().ef_search)]
        ef_search: usize,
        #[arg(long, default_value_t = HnswParams::default().seed)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write tones, harmonic stacks, noise, chirps, AM/FM and percussive
    /// sounds as 16 kHz WAV files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        /// Seconds per sound.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ResumeArgs {
    checkpoint: PathBuf,
    /// Config to check against the checkpoint's config hash.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Plot per-generation metrics and the final archive of a run.
    Metrics { run_dir: PathBuf },
    /// Project a run's elites into a manual behaviour space.
    Remap {
        run_dir: PathBuf,
        /// Two spectral features, e.g. slope,rolloff.
        #[arg(long, value_parser = parse_bd, default_value = "slope,rolloff")]
        bd: FeaturePair,
        /// Grid size of the manual space; defaults to the run's.
        #[arg(long)]
        grid: Option<usize>,
        /// Store for calibration; defaults to the run's reference store,
        /// else the elites themselves.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Rank the spectral features of a store by variance and correlation.
    RankFeatures {
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Coverage of a store's sounds in a manual behaviour space.
    DatasetCoverage {
        store: PathBuf,
        #[arg(long, value_parser = parse_bd, default_value = "slope,rolloff")]
        bd: FeaturePair,
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
}

/// Two spectral feature names spanning a manual behaviour space.
#[derive(Clone, Debug)]
struct FeaturePair(String, String);

fn parse_bd(s: &str) -> Result<FeaturePair, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [x, y] = parts[..] else {
        return Err(format!("expected two comma-separated features, got {s:?}"));
    };
    for f in [x, y] {
        SpectralFeatureSet::index_of(f).map_err(|e| e.to_string())?;
    }
    Ok(FeaturePair(x.into(), y.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Refdb(RefdbCommand::Ingest {
            dir,
            out,
            m,
            ef_construction,
            ef_search,
            seed,
        }) => {
            let params = HnswParams {
                m,
                ef_construction,
                ef_search,
                seed,
            };
            let (store, report) = ReferenceStore::ingest(&dir, params)
                .with_context(|| format!("ingesting {}", dir.display()))?;
            store.save(&out)?;
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.path.display(), s.reason);
            }
            println!(
                "ingested {} sounds into {} ({} skipped)",
                report.ingested,
                out.display(),
                report.skipped.len()
            );
            Ok(())
        }
        Command::Corpus(CorpusCommand::Synth {
            out,
            count,
            duration,
            seed,
        }) => {
            if !(duration > 0.0) {
                bail!("--duration must be positive");
            }
            write_wavs(&synth_corpus(count, duration, seed), &out)?;
            println!("wrote {count} sounds to {}", out.display());
            Ok(())
        }
        Command::Run(args) => run(args),
        Command::Resume(args) => resume(args),
        Command::Analyze(cmd) => analyze(cmd),
    }
}

fn load_store(config: &RunConfig) -> Result<Option<Arc<ReferenceStore>>> {
    match &config.reference_store {
        Some(dir) => Ok(Some(Arc::new(
            ReferenceStore::load(dir)
                .with_context(|| format!("loading reference store {}", dir.display()))?,
        ))),
        None => Ok(None),
    }
}

fn evaluator(
    config: &RunConfig,
) -> Result<(SoundEvaluator, Option<Arc<ReferenceStore>>)> {
    let store = load_store(config)?;
    let ev = SoundEvaluator::new(config.render, config.fitness.clone(), store.clone())?;
    Ok((ev, store))
}

fn run_dir_name(config: &RunConfig) -> String {
    format!(
        "{}_{}_seed{}_{}",
        config.projection.regime.name(),
        config.describe().split('/').nth(1).unwrap_or("fitness").replace(['(', ')', '=', '.'], "_"),
        config.seed,
        &config.hash()[..8]
    )
}

fn output_dir(config: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(run_dir_name(config))
    })
}

fn drive(mut engine: Engine<SoundEvaluator>, dir: &Path) -> Result<()> {
    let total = engine.config().total_generations();
    while !engine.is_finished() {
        let row = engine.step()?;
        if row.generation % 50 == 0 || row.retrained {
            info!(
                "generation {}/{total}: coverage {:.3}, diversity {:.3}, mean fitness {:.3}{}",
                row.generation,
                row.coverage,
                row.diversity,
                row.grid_mean_fitness,
                if row.retrained { ", retrained" } else { "" }
            );
        }
    }
    let report = engine.finish()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("run directory: {}", dir.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    config.validate()?;
    let dir = output_dir(&config, args.out);
    if dir.join("manifest.json").exists() {
        if !args.force {
            bail!(
                "{} already holds a run; use `resume` or pass --force",
                dir.display()
            );
        }
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let (ev, store) = evaluator(&config)?;
    let engine = Engine::new(config, ev, store)?
        .with_workers(args.workers)?
        .with_output(&dir)?;
    drive(engine, &dir)
}

fn resume(args: ResumeArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let dir = args
        .checkpoint
        .parent()
        .and_then(Path::parent)
        .context("checkpoint must sit in <run_dir>/checkpoints/")?
        .to_path_buf();
    let manifest = Manifest::load(&dir)?;
    if manifest.config_hash != ckpt.config_hash {
        bail!("checkpoint does not belong to the run in {}", dir.display());
    }
    manifest.verify_store()?;
    let config = match &args.config {
        Some(p) => Some(RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    let (ev, store) = evaluator(&ckpt.config)?;
    let engine = Engine::resume(ckpt, config.as_ref(), ev, store, Some(&dir))?
        .with_workers(args.workers)?;
    drive(engine, &dir)
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Metrics { run_dir } => {
            let rows = load_metrics(&run_dir)?;
            let last = rows.last().context("metrics.csv has no rows")?;
            let plots = run_dir.join("plots");
            std::fs::create_dir_all(&plots)?;
            type Pick = fn(&sonicqd::engine::MetricsRow) -> f64;
            let series: [(&str, Pick); 5] = [
                ("coverage", |r| r.coverage),
                ("diversity", |r| r.diversity),
                ("grid_mean_fitness", |r| r.grid_mean_fitness),
                ("qd_score", |r| r.qd_score),
                ("goal_switches", |r| r.goal_switches),
            ];
            for (name, pick) in series {
                let pts = rows.iter().map(|r| (r.generation as f64, pick(r))).collect();
                line_chart(&[(name, pts)], 640, 360).save(plots.join(format!("{name}.png")))?;
            }
            let manifest = Manifest::load(&run_dir)?;
            let mut archive = Archive::with_rule(manifest.config.grid_size, manifest.config.protection);
            for e in load_elites(&run_dir)? {
                archive.try_place(e, 0, Origin::Seed);
            }
            save_archive_png(&archive, &plots.join("archive_fitness.png"))?;
            println!(
                "generation {}: coverage {:.4}, diversity {:.4}, grid mean fitness {:.4}, qd score {:.3}, goal switches {:.3}",
                last.generation, last.coverage, last.diversity, last.grid_mean_fitness, last.qd_score, last.goal_switches
            );
            println!("plots written to {}", plots.display());
            Ok(())
        }
        AnalyzeCommand::Remap {
            run_dir,
            bd,
            grid,
            store,
        } => {
            let manifest = Manifest::load(&run_dir)?;
            let config = manifest.config;
            let elites = load_elites(&run_dir)?;
            let grid = grid.unwrap_or(config.grid_size);
            let store_dir = store.or_else(|| config.reference_store.clone());
            let calibration: Vec<SpectralFeatureSet> = match &store_dir {
                Some(dir) => ReferenceStore::load(dir)?
                    .records()
                    .iter()
                    .filter_map(|r| r.spectral)
                    .collect(),
                None => elites.iter().filter_map(|e| e.spectral).collect(),
            };
            let projector = manual_projector(&bd.0, &bd.1, &calibration)?;
            let ev = SoundEvaluator::new(config.render, sonicqd::fitness::FitnessConfig {
                regime: sonicqd::fitness::FitnessRegime::RefFree,
                power: 1.0,
            }, None)?;
            let spectral = SpectralExtractor::default();
            let re_extract = |g: &sonicqd::genome::Genome| spectral.extract(&ev.sound(g)?);
            let result = remap_to_manual(&elites, &projector, grid, Some(&re_extract));
            let stem = format!("remap_{}_{}", bd.0, bd.1);
            result.density.write_csv(&run_dir.join(format!("{stem}.csv")))?;
            result.density.save_png(&run_dir.join(format!("{stem}.png")))?;
            let native = elites.len() as f64 / (config.grid_size * config.grid_size) as f64;
            println!(
                "native coverage {:.4}; remapped coverage in ({}, {}) {:.4} over {} elites ({} skipped)",
                native,
                bd.0,
                bd.1,
                result.coverage(),
                elites.len(),
                result.skipped
            );
            Ok(())
        }
        AnalyzeCommand::RankFeatures { store, lambda } => {
            let s = ReferenceStore::load(&store)?;
            let dataset: Vec<SpectralFeatureSet> =
                s.records().iter().filter_map(|r| r.spectral).collect();
            let ranks = rank_features(&dataset, lambda)?;
            let path = store.join("feature_ranks.csv");
            write_ranks_csv(&ranks, lambda, &path)?;
            println!("{:>4}  {:<10} {:>9} {:>12} {:>9}", "rank", "feature", "variance", "max|corr|", "score");
            for (i, r) in ranks.iter().enumerate() {
                println!(
                    "{:>4}  {:<10} {:>9.5} {:>12.4} {:>9.5}",
                    i + 1,
                    r.name,
                    r.variance,
                    r.max_abs_corr,
                    r.score
                );
            }
            println!("lambda = {lambda}; written to {}", path.display());
            Ok(())
        }
        AnalyzeCommand::DatasetCoverage { store, bd, grid } => {
            let s = ReferenceStore::load(&store)?;
            let density = dataset_projection_coverage(&s, &bd.0, &bd.1, grid)?;
            let stem = format!("dataset_coverage_{}_{}", bd.0, bd.1);
            density.write_csv(&store.join(format!("{stem}.csv")))?;
            density.save_png(&store.join(format!("{stem}.png")))?;
            println!(
                "{} sounds cover {} of {} cells ({:.2}%)",
                s.len(),
                density.occupied(),
                grid * grid,
                100.0 * density.coverage()
            );
            Ok(())
        }
    }
}
