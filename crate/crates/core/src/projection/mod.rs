//! Behaviour descriptors: projection of features to the unit square and
//! discretisation onto the archive grid.

pub mod autoencoder;
pub mod pca;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::features::SpectralFeatureSet;

pub use autoencoder::{Autoencoder, TrainConfig, TrainReport};
pub use pca::Pca;

/// Maps a unit-interval coordinate to a cell index.
pub fn cell_index(x: f64, grid: usize) -> usize {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    ((x * grid as f64).floor() as usize).min(grid - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviourCoord {
    pub x: f64,
    pub y: f64,
    pub row: usize,
    pub col: usize,
    /// Set when a raw value fell outside the calibration range.
    pub clamped: bool,
}

impl BehaviourCoord {
    pub fn from_unit(x: f64, y: f64, grid: usize) -> BehaviourCoord {
        let clamped = !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y);
        let (x, y) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
        BehaviourCoord {
            x,
            y,
            row: cell_index(x, grid),
            col: cell_index(y, grid),
            clamped,
        }
    }

    pub fn cell(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

/// Per-axis min/max used to scale raw projections into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Calibration {
    /// Range of the given raw points; a collapsed axis is widened to unit
    /// width around its value.
    pub fn fit(points: impl IntoIterator<Item = [f64; 2]>) -> Result<Calibration> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for p in points {
            for a in 0..2 {
                if !p[a].is_finite() {
                    return Err(Error::DegenerateTraining("non-finite projection".into()));
                }
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
            any = true;
        }
        if !any {
            return Err(Error::DegenerateTraining("empty calibration set".into()));
        }
        for a in 0..2 {
            if max[a] - min[a] <= 1e-12 * max[a].abs().max(1.0) {
                min[a] -= 0.5;
                max[a] += 0.5;
            }
        }
        Ok(Calibration { min, max })
    }

    pub fn scale(&self, raw: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|a| (raw[a] - self.min[a]) / (self.max[a] - self.min[a]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectorKind {
    Manual { feature_x: String, feature_y: String },
    Pca(Pca),
    Autoencoder(Autoencoder),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    #[serde(flatten)]
    pub kind: ProjectorKind,
    pub calibration: Calibration,
    /// Generation at which this projector was fitted.
    pub generation: u64,
}

/// What a projector reads: normalised features and, for manual
/// projectors, the spectral descriptors.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionInput<'a> {
    pub features: &'a [f64],
    pub spectral: Option<&'a SpectralFeatureSet>,
}

impl Projector {
    pub fn name(&self) -> &'static str {
        match self.kind {
            ProjectorKind::Manual { .. } => "manual",
            ProjectorKind::Pca(_) => "pca",
            ProjectorKind::Autoencoder(_) => "autoencoder",
        }
    }

    pub fn raw(&self, input: ProjectionInput) -> Result<[f64; 2]> {
        match &self.kind {
            ProjectorKind::Manual { feature_x, feature_y } => {
                let s = input.spectral.ok_or_else(|| {
                    Error::Config("manual projection needs spectral features".into())
                })?;
                Ok([s.get(feature_x)?, s.get(feature_y)?])
            }
            ProjectorKind::Pca(p) => Ok(p.project(input.features)),
            ProjectorKind::Autoencoder(ae) => Ok(ae.encode(input.features)),
        }
    }

    pub fn project(&self, input: ProjectionInput, grid: usize) -> Result<BehaviourCoord> {
        let [x, y] = self.calibration.scale(self.raw(input)?);
        Ok(BehaviourCoord::from_unit(
            if x.is_finite() { x } else { 0.0 },
            if y.is_finite() { y } else { 0.0 },
            grid,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Projector> {
        let bytes = std::fs::read(path).at(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Min-max projector over two named spectral features.
pub fn manual_projector(
    feature_x: &str,
    feature_y: &str,
    calibration_source: &[SpectralFeatureSet],
) -> Result<Projector> {
    let (ix, iy) = (
        SpectralFeatureSet::index_of(feature_x)?,
        SpectralFeatureSet::index_of(feature_y)?,
    );
    let calibration = Calibration::fit(calibration_source.iter().map(|s| {
        let a = s.to_array();
        [a[ix], a[iy]]
    }))?;
    Ok(Projector {
        kind: ProjectorKind::Manual {
            feature_x: feature_x.into(),
            feature_y: feature_y.into(),
        },
        calibration,
        generation: 0,
    })
}

pub fn fit_pca(training: &[&[f64]], generation: u64) -> Result<Projector> {
    let pca = Pca::fit(training)?;
    let calibration = Calibration::fit(training.iter().map(|v| pca.project(v)))?;
    Ok(Projector {
        kind: ProjectorKind::Pca(pca),
        calibration,
        generation,
    })
}

/// Trains from scratch, or fine-tunes when `prior` holds an autoencoder.
/// Uses `cfg.epochs` for a fresh model and `cfg.fine_tune_epochs` for a
/// fine-tune unless `epochs` overrides.
pub fn fit_autoencoder(
    training: &[&[f64]],
    prior: Option<&Projector>,
    epochs: Option<usize>,
    cfg: &TrainConfig,
    generation: u64,
) -> Result<(Projector, TrainReport)> {
    if training.len() < 8 {
        return Err(Error::DegenerateTraining(format!(
            "need at least 8 vectors, got {}",
            training.len()
        )));
    }
    let dim = training[0].len();
    let (mut ae, default_epochs) = match prior.map(|p| &p.kind) {
        Some(ProjectorKind::Autoencoder(prev)) if prev.input_dim() == dim => {
            (prev.clone(), cfg.fine_tune_epochs)
        }
        _ => (Autoencoder::new(dim, cfg.seed), cfg.epochs),
    };
    let report = ae.train(training, epochs.unwrap_or(default_epochs), cfg)?;
    let calibration = Calibration::fit(training.iter().map(|v| ae.encode(v)))?;
    Ok((
        Projector {
            kind: ProjectorKind::Autoencoder(ae),
            calibration,
            generation,
        },
        report,
    ))
}

/// Retraining events at cumulative generations `G_k = (inc/2)·k·(k+1)`,
/// i.e. 50, 150, 300, 500, 750, … for an increment factor of 50.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainSchedule {
    pub increment: u64,
    /// Index of the next event, starting at 1.
    pub next_event: u64,
}

impl Default for RetrainSchedule {
    fn default() -> Self {
        RetrainSchedule {
            increment: 50,
            next_event: 1,
        }
    }
}

impl RetrainSchedule {
    pub fn event_generation(&self, k: u64) -> u64 {
        self.increment * k * (k + 1) / 2
    }

    /// Gap between event `k - 1` and event `k`.
    pub fn gap(&self, k: u64) -> u64 {
        self.event_generation(k) - self.event_generation(k.saturating_sub(1))
    }

    pub fn next_retrain_generation(&self) -> u64 {
        self.event_generation(self.next_event)
    }

    /// True (and advances) when `generation` has reached the next event.
    pub fn fire(&mut self, generation: u64) -> bool {
        if generation >= self.next_retrain_generation() {
            self.next_event += 1;
            true
        } else {
            false
        }
    }

    /// All event generations up to and including `last`.
    pub fn events_until(&self, last: u64) -> Vec<u64> {
        (1..)
            .map(|k| self.event_generation(k))
            .take_while(|&g| g <= last)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_mapping_edges() {
        assert_eq!(BehaviourCoord::from_unit(0.0, 0.0, 100).cell(), (0, 0));
        assert_eq!(BehaviourCoord::from_unit(1.0, 1.0, 100).cell(), (99, 99));
        assert_eq!(BehaviourCoord::from_unit(0.999999, 0.5, 100).cell(), (99, 50));
        assert_eq!(BehaviourCoord::from_unit(0.505, 0.505, 100).cell(), (50, 50));
        let c = BehaviourCoord::from_unit(1.5, -0.2, 100);
        assert!(c.clamped);
        assert_eq!(c.cell(), (99, 0));
    }

    #[test]
    fn retrain_schedule_events() {
        let s = RetrainSchedule::default();
        assert_eq!(s.events_until(750), vec![50, 150, 300, 500, 750]);
        assert_eq!(s.gap(1), 50);
        assert_eq!(s.gap(2), 100);
        assert_eq!(s.event_generation(5), 750);
        for k in 1..=10 {
            assert_eq!(s.event_generation(k), 25 * k * (k + 1));
        }
        let mut s = s;
        assert!(!s.fire(49));
        assert!(s.fire(50));
        assert_eq!(s.next_retrain_generation(), 150);
    }

    #[test]
    fn manual_projector_endpoints_and_clamp() {
        let mut lo = SpectralFeatureSet::default();
        lo.slope = -2.0;
        lo.rolloff = 100.0;
        let mut hi = lo;
        hi.slope = 2.0;
        hi.rolloff = 4000.0;
        let p = manual_projector("slope", "rolloff", &[lo, hi]).unwrap();
        let at = |s: &SpectralFeatureSet| {
            p.project(ProjectionInput { features: &[], spectral: Some(s) }, 100).unwrap()
        };
        let a = at(&lo);
        assert_eq!((a.x, a.y), (0.0, 0.0));
        let b = at(&hi);
        assert_eq!((b.x, b.y), (1.0, 1.0));
        let mut out = hi;
        out.slope = 10.0;
        assert!(at(&out).clamped);
        assert!(manual_projector("slope", "nope", &[lo, hi]).is_err());
    }

    #[test]
    fn pca_training_set_lands_in_unit_square() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), (0.3 * t).cos(), 0.1 * t, (t * 1.7).sin() * 0.2]
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = fit_pca(&refs, 0).unwrap();
        for r in &refs {
            let c = p.project(ProjectionInput { features: r, spectral: None }, 100).unwrap();
            assert!(!c.clamped);
        }
    }

    #[test]
    fn zero_epoch_fine_tune_is_identity() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| (0..6).map(|j| ((i * j) as f64).sin()).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let (prior, _) = fit_autoencoder(&refs, None, None, &cfg, 7).unwrap();
        let (tuned, _) = fit_autoencoder(&refs, Some(&prior), Some(0), &cfg, 7).unwrap();
        assert_eq!(tuned, prior);
        assert_eq!(tuned.calibration, prior.calibration);
    }

    #[test]
    fn projector_file_round_trip() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 % 7.0, 1.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = fit_pca(&refs, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        assert_eq!(Projector::load(&path).unwrap(), p);
    }
}
