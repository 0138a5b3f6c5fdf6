//! Reference corpus: per-sound features, the normalisation fitted over
//! them, and a nearest-neighbour index over the normalised vectors.

pub mod hnsw;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::features::store::{load_binary, save_binary};
use crate::features::{
    FeatureRecord, FeatureVector, MfccExtractor, NormStats, SpectralExtractor,
};
use crate::render::SoundBuffer;

pub use hnsw::{HnswIndex, HnswParams};

pub const TARGET_RATE: u32 = 16_000;

const MANIFEST: &str = "manifest.json";
const FEATURES: &str = "features.bin";
const INDEX: &str = "index.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub id: String,
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    count: usize,
    params: HnswParams,
    norm: NormStats,
    entries: Vec<ReferenceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStore {
    entries: Vec<ReferenceEntry>,
    records: Vec<FeatureRecord>,
    norm: NormStats,
    normalized: Vec<Vec<f64>>,
    index: HnswIndex,
}

impl ReferenceStore {
    /// Builds a store from already extracted features.
    pub fn from_records(
        records: Vec<FeatureRecord>,
        sources: Vec<Option<PathBuf>>,
        params: HnswParams,
    ) -> Result<ReferenceStore> {
        if records.is_empty() {
            return Err(Error::EmptyStore);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Config(format!("duplicate reference id {:?}", r.id)));
            }
        }
        let norm = NormStats::fit(records.iter().map(|r| r.mfcc.values()))?;
        let normalized = nonzero(records.iter().map(|r| norm.apply_slice(r.mfcc.values())));
        let index = HnswIndex::build(&normalized, params)?;
        let entries = records
            .iter()
            .zip(sources.into_iter().chain(std::iter::repeat(None)))
            .map(|(r, source)| ReferenceEntry {
                id: r.id.clone(),
                source,
            })
            .collect();
        Ok(ReferenceStore {
            entries,
            records,
            norm,
            normalized,
            index,
        })
    }

    /// Extracts features from in-memory 16 kHz sounds.
    pub fn from_sounds<'a>(
        sounds: impl IntoIterator<Item = (String, &'a SoundBuffer)>,
        params: HnswParams,
    ) -> Result<ReferenceStore> {
        let mfcc = MfccExtractor::default();
        let spectral = SpectralExtractor::default();
        let records = sounds
            .into_iter()
            .map(|(id, b)| {
                Ok(FeatureRecord {
                    id,
                    mfcc: mfcc.extract(b)?,
                    spectral: Some(spectral.extract(b)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ReferenceStore::from_records(records, Vec::new(), params)
    }

    /// Reads every `.wav` under `dir` (sorted by path), downmixes to mono,
    /// resamples to 16 kHz and extracts features. Undecodable files are
    /// skipped and reported.
    pub fn ingest(dir: &Path, params: HnswParams) -> Result<(ReferenceStore, IngestReport)> {
        let mut paths = Vec::new();
        collect_wavs(dir, &mut paths)?;
        paths.sort();
        let mfcc = MfccExtractor::default();
        let spectral = SpectralExtractor::default();
        let mut report = IngestReport::default();
        let mut records = Vec::new();
        let mut sources = Vec::new();
        for p in paths {
            let id = p
                .strip_prefix(dir)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            let extracted = read_wav(&p).and_then(|b| {
                Ok(FeatureRecord {
                    id,
                    mfcc: mfcc.extract(&b)?,
                    spectral: Some(spectral.extract(&b)?),
                })
            });
            match extracted {
                Ok(r) => {
                    records.push(r);
                    sources.push(Some(p));
                }
                Err(e) => {
                    warn!("skipping {}: {e}", p.display());
                    report.skipped.push(SkippedFile {
                        path: p,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if records.is_empty() {
            return Err(Error::NoDecodableFiles(dir.to_path_buf()));
        }
        report.ingested = records.len();
        Ok((ReferenceStore::from_records(records, sources, params)?, report))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn index(&self) -> &HnswIndex {
        &self.index
    }

    /// Normalised feature vector of entry `i`.
    pub fn normalized(&self, i: usize) -> &[f64] {
        &self.normalized[i]
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::UnknownReference(id.to_string()))
    }

    /// Approximate k nearest references to a normalised vector, as
    /// `(id, cosine distance)` sorted by distance.
    pub fn query_knn(&self, v: &FeatureVector, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self
            .query_knn_positions(v.values(), k)?
            .into_iter()
            .map(|(i, d)| (self.entries[i].id.clone(), d))
            .collect())
    }

    pub fn query_knn_positions(&self, v: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, size: self.len() });
        }
        Ok(self
            .index
            .search(v, k)?
            .into_iter()
            .map(|(i, d)| (i as usize, d))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        save_binary(&self.records, &dir.join(FEATURES))?;
        let index_path = dir.join(INDEX);
        let f = std::fs::File::create(&index_path).at(&index_path)?;
        let mut w = std::io::BufWriter::new(f);
        self.index.write_graph(&mut w).at(&index_path)?;
        std::io::Write::flush(&mut w).at(&index_path)?;
        let manifest = Manifest {
            version: 1,
            count: self.len(),
            params: *self.index.params(),
            norm: self.norm.clone(),
            entries: self.entries.clone(),
        };
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)
    }

    pub fn load(dir: &Path) -> Result<ReferenceStore> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read(&path).at(&path)?;
        let mut de = serde_json::Deserializer::from_slice(&text);
        let manifest: Manifest =
            serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Decode {
                field: e.path().to_string(),
                reason: e.inner().to_string(),
            })?;
        let records = load_binary(&dir.join(FEATURES))?;
        if records.len() != manifest.count || manifest.entries.len() != manifest.count {
            return Err(Error::Decode {
                field: "count".into(),
                reason: format!(
                    "manifest lists {} entries, feature file holds {}",
                    manifest.count,
                    records.len()
                ),
            });
        }
        let normalized = nonzero(records.iter().map(|r| manifest.norm.apply_slice(r.mfcc.values())));
        let index_path = dir.join(INDEX);
        let f = std::fs::File::open(&index_path).at(&index_path)?;
        let index = HnswIndex::read_graph(std::io::BufReader::new(f), &normalized)?;
        Ok(ReferenceStore {
            entries: manifest.entries,
            records,
            norm: manifest.norm,
            normalized,
            index,
        })
    }
}

/// The all-zero normalised vector (an entry sitting exactly on the mean)
/// has no direction; nudge it so the index can hold it.
fn nonzero(vs: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    vs.map(|mut v| {
        if v.iter().all(|x| *x == 0.0) {
            if let Some(x) = v.first_mut() {
                *x = 1e-9;
            }
        }
        v
    })
    .collect()
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Decodes a WAV file to mono 16 kHz.
pub fn read_wav(path: &Path) -> Result<SoundBuffer> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(SoundBuffer::new(
        resample_linear(&mono, spec.sample_rate, TARGET_RATE),
        TARGET_RATE,
    ))
}

pub fn resample_linear(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let out_len = (x.len() as u64 * to as u64 / from as u64) as usize;
    let step = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, seed: u64) -> Vec<FeatureRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| FeatureRecord {
                id: format!("r{i}"),
                mfcc: FeatureVector::from_raw((0..96).map(|_| rng.random_range(-3.0..3.0)).collect()),
                spectral: None,
            })
            .collect()
    }

    #[test]
    fn self_match_and_exhaustive_query() {
        let store = ReferenceStore::from_records(synthetic(30, 1), vec![], HnswParams::default()).unwrap();
        let v = FeatureVector::from_raw(store.normalized(7).to_vec());
        let r = store.query_knn(&v, 1).unwrap();
        assert_eq!(r[0].0, "r7");
        assert!(r[0].1.abs() < 1e-12);
        let all = store.query_knn(&v, 30).unwrap();
        let ids: HashSet<_> = all.iter().map(|p| p.0.clone()).collect();
        assert_eq!(ids.len(), 30);
        assert!(matches!(store.query_knn(&v, 31), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn single_entry_store_is_queryable() {
        let store = ReferenceStore::from_records(synthetic(1, 4), vec![], HnswParams::default()).unwrap();
        assert!(store.normalized(0).iter().any(|x| *x != 0.0));
        let q = FeatureVector::from_raw(vec![0.5; 96]);
        let r = store.query_knn(&q, 1).unwrap();
        assert_eq!(r[0].0, "r0");
        let direct = crate::features::cosine_distance(q.values(), store.normalized(0)).unwrap();
        assert!((r[0].1 - direct).abs() < 1e-12);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut recs = synthetic(3, 2);
        recs[2].id = "r0".into();
        assert!(ReferenceStore::from_records(recs, vec![], HnswParams::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let store = ReferenceStore::from_records(synthetic(50, 3), vec![], HnswParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        assert_eq!(ReferenceStore::load(dir.path()).unwrap(), store);
    }

    #[test]
    fn resample_halves_length() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y = resample_linear(&x, 32_000, 16_000);
        assert_eq!(y.len(), 50);
        assert_eq!(y[10], 20.0);
    }
}
