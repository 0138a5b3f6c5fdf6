//! Run metrics and post-hoc analyses, with CSV and PNG export.

use std::path::Path;

use image::{Rgb, RgbImage};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, Cell, Elite};
use crate::error::{Error, IoContext, Result};
use crate::features::{SpectralFeatureSet, SPECTRAL_FEATURE_NAMES};
use crate::genome::Genome;
use crate::projection::{manual_projector, ProjectionInput, Projector};
use crate::refdb::ReferenceStore;

/// Mean pairwise cosine distance. Zero vectors are left out; fewer than
/// two remaining vectors give 0.
///
/// Uses `Σ_{i<j} u_i·u_j = (|Σ u_i|² - n) / 2` over unit vectors, which is
/// linear in `n`.
pub fn diversity(vectors: &[&[f64]]) -> f64 {
    let Some(dim) = vectors.first().map(|v| v.len()) else {
        return 0.0;
    };
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            warn!("diversity: skipping a zero or non-finite vector");
            continue;
        }
        for (s, x) in sum.iter_mut().zip(v.iter()) {
            *s += x / norm;
        }
        n += 1;
    }
    if n < 2 {
        return 0.0;
    }
    let s2: f64 = sum.iter().map(|s| s * s).sum();
    let nf = n as f64;
    (1.0 - (s2 - nf) / (nf * (nf - 1.0))).clamp(0.0, 2.0)
}

pub fn coverage(a: &Archive) -> f64 {
    a.coverage()
}

/// Occupancy counts on a `grid × grid` lattice, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub grid: usize,
    pub counts: Vec<u32>,
}

impl DensityGrid {
    pub fn new(grid: usize) -> DensityGrid {
        DensityGrid {
            grid,
            counts: vec![0; grid * grid],
        }
    }

    pub fn add(&mut self, (r, c): Cell) {
        self.counts[r * self.grid + c] += 1;
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn coverage(&self) -> f64 {
        self.occupied() as f64 / self.counts.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["row", "col", "count"]).map_err(csv_err)?;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                w.write_record([
                    (i / self.grid).to_string(),
                    (i % self.grid).to_string(),
                    c.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().at(path)
    }

    /// Heatmap with row 0 at the bottom; empty cells are white.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        heatmap(self.grid, |cell| {
            let c = self.counts[cell.0 * self.grid + cell.1];
            (c > 0).then(|| (c as f64).ln_1p() / max.ln_1p())
        })
        .save(path)?;
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_writer(std::fs::File::create(path).at(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Decode {
        field: "csv".into(),
        reason: e.to_string(),
    }
}

fn colour(t: f64) -> Rgb<u8> {
    // Dark blue to yellow.
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(20.0, 250.0), lerp(30.0, 220.0), lerp(110.0, 40.0)])
}

fn heatmap(grid: usize, value: impl Fn(Cell) -> Option<f64>) -> RgbImage {
    let px = (512 / grid).max(2) as u32;
    let side = px * grid as u32;
    RgbImage::from_fn(side, side, |x, y| {
        let col = (x / px) as usize;
        let row = grid - 1 - (y / px) as usize;
        value((row, col)).map_or(Rgb([255, 255, 255]), colour)
    })
}

/// Fitness heatmap of an archive.
pub fn save_archive_png(a: &Archive, path: &Path) -> Result<()> {
    heatmap(a.grid_size(), |cell| a.get(cell).map(|e| e.fitness))
        .save(path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemapResult {
    pub cells: Vec<Option<Cell>>,
    pub density: DensityGrid,
    pub skipped: usize,
}

impl RemapResult {
    pub fn coverage(&self) -> f64 {
        self.density.coverage()
    }
}

/// Projects elites into a manual behaviour space. Elites lacking spectral
/// features are re-extracted with `re_extract` when given, else skipped.
pub fn remap_to_manual(
    elites: &[Elite],
    projector: &Projector,
    grid: usize,
    re_extract: Option<&dyn Fn(&Genome) -> Result<SpectralFeatureSet>>,
) -> RemapResult {
    let mut density = DensityGrid::new(grid);
    let mut skipped = 0;
    let cells = elites
        .iter()
        .map(|e| {
            let spectral = match (e.spectral, re_extract) {
                (Some(s), _) => Some(s),
                (None, Some(f)) => f(&e.genome).ok(),
                (None, None) => None,
            };
            let Some(s) = spectral else {
                warn!("elite {} has no spectral features; skipped", e.id());
                skipped += 1;
                return None;
            };
            let input = ProjectionInput {
                features: &e.features,
                spectral: Some(&s),
            };
            match projector.project(input, grid) {
                Ok(c) => {
                    density.add(c.cell());
                    Some(c.cell())
                }
                Err(err) => {
                    warn!("elite {}: {err}", e.id());
                    skipped += 1;
                    None
                }
            }
        })
        .collect();
    RemapResult {
        cells,
        density,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub name: String,
    pub variance: f64,
    pub max_abs_corr: f64,
    pub score: f64,
}

pub const DEFAULT_LAMBDA: f64 = 0.5;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Ranks named feature columns by `variance - λ·max|corr|`, variance
/// taken over min-max normalised values. Constant columns rank last.
pub fn rank_columns(names: &[String], columns: &[Vec<f64>], lambda: f64) -> Result<Vec<FeatureRank>> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::Config(format!("feature ranking needs ≥ 2 sounds, got {n}")));
    }
    let normalized: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
            if hi > lo {
                c.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; c.len()]
            }
        })
        .collect();
    let mut out: Vec<(bool, FeatureRank)> = normalized
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let variance = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let max_abs_corr = normalized
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| pearson(c, o).abs())
                .fold(0.0, f64::max);
            (
                variance == 0.0,
                FeatureRank {
                    name: names[i].clone(),
                    variance,
                    max_abs_corr,
                    score: variance - lambda * max_abs_corr,
                },
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.score.total_cmp(&a.1.score)));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

pub fn rank_features(dataset: &[SpectralFeatureSet], lambda: f64) -> Result<Vec<FeatureRank>> {
    let names: Vec<String> = SPECTRAL_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let columns: Vec<Vec<f64>> = (0..10)
        .map(|k| dataset.iter().map(|s| s.to_array()[k]).collect())
        .collect();
    rank_columns(&names, &columns, lambda)
}

pub fn write_ranks_csv(ranks: &[FeatureRank], lambda: f64, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rank", "feature", "variance", "max_abs_corr", "score", "lambda"])
        .map_err(csv_err)?;
    for (i, r) in ranks.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.name.clone(),
            r.variance.to_string(),
            r.max_abs_corr.to_string(),
            r.score.to_string(),
            lambda.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().at(path)
}

/// Projects every reference sound into the manual `(fx, fy)` space,
/// calibrated on the store itself.
pub fn dataset_projection_coverage(
    store: &ReferenceStore,
    fx: &str,
    fy: &str,
    grid: usize,
) -> Result<DensityGrid> {
    let spectral: Vec<SpectralFeatureSet> = store
        .records()
        .iter()
        .map(|r| {
            r.spectral
                .ok_or_else(|| Error::Config(format!("reference {} has no spectral features", r.id)))
        })
        .collect::<Result<_>>()?;
    let projector = manual_projector(fx, fy, &spectral)?;
    let mut density = DensityGrid::new(grid);
    for s in &spectral {
        let c = projector.project(
            ProjectionInput {
                features: &[],
                spectral: Some(s),
            },
            grid,
        )?;
        density.add(c.cell());
    }
    Ok(density)
}

/// Line chart of one or more series over a shared x axis, each series
/// scaled to its own range. Returns the image.
pub fn line_chart(series: &[(&str, Vec<(f64, f64)>)], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 20u32;
    let (w, h) = (width - 2 * margin, height - 2 * margin);
    for x in margin..=margin + w {
        img.put_pixel(x, margin + h, Rgb([0, 0, 0]));
    }
    for y in margin..=margin + h {
        img.put_pixel(margin, y, Rgb([0, 0, 0]));
    }
    let palette = [
        Rgb([200, 40, 40]),
        Rgb([40, 120, 200]),
        Rgb([40, 160, 60]),
        Rgb([160, 80, 180]),
        Rgb([220, 140, 20]),
    ];
    let xs = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let x_span = if x1 > x0 { x1 - x0 } else { 1.0 };
    for (k, (_, pts)) in series.iter().enumerate() {
        let (y0, y1) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let y_span = if y1 > y0 { y1 - y0 } else { 1.0 };
        let to_px = |p: &(f64, f64)| {
            let x = margin as f64 + (p.0 - x0) / x_span * w as f64;
            let y = (margin + h) as f64 - (p.1 - y0) / y_span * h as f64;
            (x, y)
        };
        for pair in pts.windows(2) {
            let (a, b) = (to_px(&pair[0]), to_px(&pair[1]));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (a.0 + (b.0 - a.0) * t).round() as u32;
                let y = (a.1 + (b.1 - a.1) * t).round() as u32;
                if x < width && y < height {
                    img.put_pixel(x, y, palette[k % palette.len()]);
                }
            }
        }
    }
    img
}
