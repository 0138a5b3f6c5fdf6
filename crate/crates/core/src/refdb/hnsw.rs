//! Hierarchical navigable small world graph under cosine distance.
//!
//! Vectors are stored unit-normalised so the distance is `1 - u·v`.
//! Construction is sequential with a seeded level generator, which makes
//! the graph a deterministic function of (vectors, params).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 256,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    dist: f64,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    units: Vec<Vec<f64>>,
    /// `links[node][layer]` neighbour ids.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

pub fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl HnswIndex {
    pub fn build(vectors: &[Vec<f64>], params: HnswParams) -> Result<HnswIndex> {
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut idx = HnswIndex {
            params,
            dim,
            units: Vec::with_capacity(vectors.len()),
            links: Vec::with_capacity(vectors.len()),
            entry: None,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m.max(2) as f64).ln();
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: v.len(),
                });
            }
            let u: f64 = rng.random::<f64>();
            let level = (-(1.0 - u).ln() * ml).floor() as usize;
            idx.insert(unit(v)?, level);
        }
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    fn dist(&self, q: &[f64], id: u32) -> f64 {
        1.0 - dot(q, &self.units[id as usize])
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, u: Vec<f64>, level: usize) {
        let id = self.units.len() as u32;
        self.units.push(u);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return;
        };
        let q = self.units[id as usize].clone();
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut entries = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &entries, self.params.ef_construction, layer);
            let chosen = self.select(&q, &found, self.params.m);
            self.links[id as usize][layer] = chosen.iter().map(|s| s.id).collect();
            for s in &chosen {
                self.connect(s.id, id, layer);
            }
            entries = found.iter().map(|s| s.id).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(id);
        }
    }

    /// Adds `new` to `node`'s list, pruning with the neighbour heuristic.
    fn connect(&mut self, node: u32, new: u32, layer: usize) {
        let cap = self.max_links(layer);
        self.links[node as usize][layer].push(new);
        if self.links[node as usize][layer].len() <= cap {
            return;
        }
        let base = self.units[node as usize].clone();
        let mut cands: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Scored {
                dist: self.dist(&base, n),
                id: n,
            })
            .collect();
        cands.sort();
        let kept = self.select(&base, &cands, cap);
        self.links[node as usize][layer] = kept.into_iter().map(|s| s.id).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every already kept neighbour; top up with the closest
    /// pruned ones. `cands` must be sorted ascending.
    fn select(&self, _base: &[f64], cands: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in cands {
            if kept.len() >= m {
                break;
            }
            let cu = &self.units[c.id as usize];
            if kept.iter().all(|k| 1.0 - dot(cu, &self.units[k.id as usize]) > c.dist) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy(&self, q: &[f64], mut ep: u32, layer: usize) -> u32 {
        let mut best = self.dist(q, ep);
        loop {
            let mut moved = false;
            for &n in &self.links[ep as usize][layer] {
                let d = self.dist(q, n);
                if d < best || (d == best && n < ep) {
                    best = d;
                    ep = n;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` results ascending.
    fn search_layer(&self, q: &[f64], entries: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entries.iter().copied().collect();
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut best: BinaryHeap<Scored> = BinaryHeap::new();
        for &e in entries {
            let s = Scored {
                dist: self.dist(q, e),
                id: e,
            };
            candidates.push(Reverse(s));
            best.push(s);
            if best.len() > ef {
                best.pop();
            }
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if best.len() >= ef && c > *best.peek().unwrap() {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    dist: self.dist(q, n),
                    id: n,
                };
                if best.len() < ef || s < *best.peek().unwrap() {
                    candidates.push(Reverse(s));
                    best.push(s);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Approximate k nearest neighbours as `(id, cosine distance)`, sorted
    /// by distance then id. Falls back to an exact scan when the beam would
    /// cover the whole index anyway.
    pub fn search(&self, v: &[f64], k: usize) -> Result<Vec<(u32, f64)>> {
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, size: self.len() });
        }
        if v.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let q = unit(v)?;
        let ef = self.params.ef_search.max(k);
        let mut found = if ef >= self.len() {
            let mut all: Vec<Scored> = (0..self.len() as u32)
                .map(|id| Scored {
                    dist: self.dist(&q, id),
                    id,
                })
                .collect();
            all.sort();
            all
        } else {
            let mut ep = self.entry.expect("non-empty index");
            for layer in (1..=self.max_level).rev() {
                ep = self.greedy(&q, ep, layer);
            }
            self.search_layer(&q, &[ep], ef, 0)
        };
        found.truncate(k);
        Ok(found
            .into_iter()
            .map(|s| (s.id, s.dist.clamp(0.0, 2.0)))
            .collect())
    }

    /// Exact search, used as a reference.
    pub fn brute_force(&self, v: &[f64], k: usize) -> Result<Vec<(u32, f64)>> {
        let q = unit(v)?;
        let mut all: Vec<Scored> = (0..self.len() as u32)
            .map(|id| Scored {
                dist: self.dist(&q, id),
                id,
            })
            .collect();
        all.sort();
        all.truncate(k);
        Ok(all.into_iter().map(|s| (s.id, s.dist)).collect())
    }

    /// Graph-only binary encoding; vectors are supplied again on load.
    pub fn write_graph(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(b"SQDH")?;
        for v in [
            self.params.m as u64,
            self.params.ef_construction as u64,
            self.params.ef_search as u64,
            self.params.seed,
            self.dim as u64,
            self.units.len() as u64,
            self.entry.map_or(u64::MAX, |e| e as u64),
            self.max_level as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for layers in &self.links {
            w.write_all(&(layers.len() as u32).to_le_bytes())?;
            for l in layers {
                w.write_all(&(l.len() as u32).to_le_bytes())?;
                for n in l {
                    w.write_all(&n.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_graph(mut r: impl Read, vectors: &[Vec<f64>]) -> Result<HnswIndex> {
        let bad = |f: &str, e: String| Error::Decode {
            field: format!("index.{f}"),
            reason: e,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad("magic", e.to_string()))?;
        if &magic != b"SQDH" {
            return Err(bad("magic", "not an index file".into()));
        }
        let mut u64s = [0u64; 8];
        for (i, v) in u64s.iter_mut().enumerate() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| bad(&format!("header[{i}]"), e.to_string()))?;
            *v = u64::from_le_bytes(b);
        }
        let [m, efc, efs, seed, dim, count, entry, max_level] = u64s;
        if count as usize != vectors.len() {
            return Err(bad(
                "count",
                format!("graph has {count} nodes but {} vectors supplied", vectors.len()),
            ));
        }
        let mut read_u32 = |f: &str| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| bad(f, e.to_string()))?;
            Ok(u32::from_le_bytes(b))
        };
        let mut links = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let layers = read_u32("layers")? as usize;
            let mut node = Vec::with_capacity(layers);
            for _ in 0..layers {
                let len = read_u32("links")? as usize;
                node.push((0..len).map(|_| read_u32("link")).collect::<Result<Vec<_>>>()?);
            }
            links.push(node);
        }
        Ok(HnswIndex {
            params: HnswParams {
                m: m as usize,
                ef_construction: efc as usize,
                ef_search: efs as usize,
                seed,
            },
            dim: dim as usize,
            units: vectors.iter().map(|v| unit(v)).collect::<Result<_>>()?,
            links,
            entry: (entry != u64::MAX).then_some(entry as u32),
            max_level: max_level as usize,
        })
    }
}
