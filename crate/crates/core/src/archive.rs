//! MAP-Elites grid with novelty protection, remapping and an event log
//! from which the grid can be rebuilt.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::features::SpectralFeatureSet;
use crate::genome::{Genome, GenomeId};
use crate::projection::BehaviourCoord;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genome: Genome,
    pub fitness: f64,
    /// Normalised feature vector.
    pub features: Vec<f64>,
    pub spectral: Option<SpectralFeatureSet>,
    pub coord: BehaviourCoord,
    pub generation: u64,
    pub parent_cell: Option<Cell>,
    pub protection_until: u64,
}

impl Elite {
    pub fn id(&self) -> GenomeId {
        self.genome.id
    }

    pub fn cell(&self) -> Cell {
        self.coord.cell()
    }

    pub fn record(&self) -> EliteRecord {
        EliteRecord {
            id: self.genome.id,
            parent: self.genome.parent,
            fitness: self.fitness,
            coord: self.coord,
            generation: self.generation,
            parent_cell: self.parent_cell,
            protection_until: self.protection_until,
        }
    }
}

/// The genome-free part of an elite, as logged and snapshotted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EliteRecord {
    pub id: GenomeId,
    pub parent: Option<GenomeId>,
    pub fitness: f64,
    pub coord: BehaviourCoord,
    pub generation: u64,
    pub parent_cell: Option<Cell>,
    pub protection_until: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Mutation,
    Remap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ArchiveEvent {
    Place {
        generation: u64,
        cell: Cell,
        origin: Origin,
        elite: EliteRecord,
        displaced: Option<GenomeId>,
    },
    /// Start of a remap: the grid is emptied and survivors re-placed.
    Remap { generation: u64 },
    /// An elite lost a collision during a remap.
    Dropped {
        generation: u64,
        cell: Cell,
        id: GenomeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    PlacedNew,
    Replaced(GenomeId),
    Rejected,
}

impl Placement {
    pub fn accepted(self) -> bool {
        !matches!(self, Placement::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectionRule {
    pub generations: u64,
    pub factor: f64,
}

impl Default for ProtectionRule {
    fn default() -> Self {
        ProtectionRule {
            generations: 10,
            factor: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoalSwitchCount {
    /// Mutation-derived new elites.
    pub settlements: u64,
    /// Mutation-derived new elites whose parent sat in another cell.
    pub cross_cell: u64,
    /// Remap survivors crowned in a cell other than their previous one.
    #[serde(default)]
    pub remap_settlements: u64,
    /// Those of `remap_settlements` whose parent sat in another cell.
    #[serde(default)]
    pub remap_cross_cell: u64,
}

impl GoalSwitchCount {
    pub fn total_cross_cell(&self) -> u64 {
        self.cross_cell + self.remap_cross_cell
    }

    fn record(&mut self, origin: Origin, cell: Cell, parent: Option<Cell>, previous: Option<Cell>) {
        let cross = parent.is_some_and(|p| p != cell);
        if origin == Origin::Remap {
            if previous != Some(cell) {
                self.remap_settlements += 1;
                self.remap_cross_cell += cross as u64;
            }
        } else {
            self.settlements += 1;
            self.cross_cell += cross as u64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    grid: usize,
    cells: Vec<Option<Elite>>,
    rule: ProtectionRule,
    #[serde(skip)]
    events: Vec<ArchiveEvent>,
    /// Dense per-cell settlement counts.
    switches: Vec<GoalSwitchCount>,
}

/// Does `challenger` displace `occupant` at `generation`?
pub fn wins(challenger: f64, occupant: &EliteRecord, generation: u64, rule: &ProtectionRule) -> bool {
    if generation < occupant.protection_until {
        challenger >= rule.factor * occupant.fitness
    } else {
        challenger > occupant.fitness
    }
}

impl Archive {
    pub fn new(grid: usize) -> Archive {
        Archive::with_rule(grid, ProtectionRule::default())
    }

    pub fn with_rule(grid: usize, rule: ProtectionRule) -> Archive {
        Archive {
            grid,
            cells: vec![None; grid * grid],
            rule,
            events: Vec::new(),
            switches: vec![GoalSwitchCount::default(); grid * grid],
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    fn slot(&self, (r, c): Cell) -> usize {
        r * self.grid + c
    }

    pub fn get(&self, cell: Cell) -> Option<&Elite> {
        self.cells[self.slot(cell)].as_ref()
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn coverage(&self) -> f64 {
        self.occupied() as f64 / self.cells.len() as f64
    }

    /// Occupied cells in row-major order.
    pub fn occupied_cells(&self) -> Vec<Cell> {
        self.elites().map(Elite::cell).collect()
    }

    /// Elites in row-major cell order.
    pub fn elites(&self) -> impl Iterator<Item = &Elite> {
        self.cells.iter().flatten()
    }

    pub fn events(&self) -> &[ArchiveEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<ArchiveEvent> {
        std::mem::take(&mut self.events)
    }

    /// Counts for every cell that has seen a settlement.
    pub fn goal_switches(&self) -> BTreeMap<Cell, GoalSwitchCount> {
        self.switches
            .iter()
            .enumerate()
            .filter(|(_, s)| s.settlements + s.remap_settlements > 0)
            .map(|(i, s)| ((i / self.grid, i % self.grid), *s))
            .collect()
    }

    fn mean_over_occupied(&self, f: impl Fn(&GoalSwitchCount) -> u64) -> f64 {
        let cells = self.occupied_cells();
        if cells.is_empty() {
            return 0.0;
        }
        cells
            .iter()
            .map(|&c| f(&self.switches[self.slot(c)]))
            .sum::<u64>() as f64
            / cells.len() as f64
    }

    /// Mean cross-cell crowning count over currently occupied cells,
    /// counting both mutation offspring and remap survivors.
    pub fn mean_goal_switches(&self) -> f64 {
        self.mean_over_occupied(GoalSwitchCount::total_cross_cell)
    }

    /// As [`Archive::mean_goal_switches`] but for mutation offspring only.
    pub fn mean_mutation_goal_switches(&self) -> f64 {
        self.mean_over_occupied(|s| s.cross_cell)
    }

    /// Places `elite` in its cell if the cell is empty or the occupant
    /// loses under the protection rule.
    pub fn try_place(&mut self, elite: Elite, generation: u64, origin: Origin) -> Placement {
        self.place_from(elite, generation, origin, None)
    }

    fn place_from(
        &mut self,
        mut elite: Elite,
        generation: u64,
        origin: Origin,
        previous: Option<Cell>,
    ) -> Placement {
        let cell = elite.cell();
        let slot = self.slot(cell);
        let outcome = match &self.cells[slot] {
            None => Placement::PlacedNew,
            Some(occ) if wins(elite.fitness, &occ.record(), generation, &self.rule) => {
                Placement::Replaced(occ.id())
            }
            Some(_) => Placement::Rejected,
        };
        if outcome.accepted() {
            if origin != Origin::Remap {
                elite.generation = generation;
            }
            elite.protection_until = generation + self.rule.generations;
            self.switches[slot].record(origin, cell, elite.parent_cell, previous);
            self.events.push(ArchiveEvent::Place {
                generation,
                cell,
                origin,
                elite: elite.record(),
                displaced: match outcome {
                    Placement::Replaced(id) => Some(id),
                    _ => None,
                },
            });
            self.cells[slot] = Some(elite);
        }
        outcome
    }

    /// Re-projects every elite with `project` and resolves collisions in
    /// descending fitness order (ties by genome id). Returns the ids of
    /// dropped elites.
    pub fn remap<F>(&mut self, generation: u64, mut project: F) -> Result<Vec<GenomeId>>
    where
        F: FnMut(&Elite) -> Result<BehaviourCoord>,
    {
        let mut elites: Vec<(Cell, Elite)> = self
            .cells
            .iter_mut()
            .filter_map(Option::take)
            .map(|e| (e.cell(), e))
            .collect();
        for (_, e) in &mut elites {
            e.coord = project(e)?;
        }
        elites.sort_by(|(_, a), (_, b)| b.fitness.total_cmp(&a.fitness).then(a.id().cmp(&b.id())));
        self.events.push(ArchiveEvent::Remap { generation });
        let mut dropped = Vec::new();
        for (previous, e) in elites {
            let (id, cell) = (e.id(), e.cell());
            if !self
                .place_from(e, generation, Origin::Remap, Some(previous))
                .accepted()
            {
                self.events.push(ArchiveEvent::Dropped {
                    generation,
                    cell,
                    id,
                });
                dropped.push(id);
            }
        }
        Ok(dropped)
    }

    /// Grid state as records, row-major.
    pub fn snapshot(&self) -> Vec<EliteRecord> {
        self.elites().map(Elite::record).collect()
    }

    pub fn write_snapshot_csv(&self, w: impl Write) -> Result<()> {
        write_records_csv(&self.snapshot(), w)
    }

    pub fn save_snapshot_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).at(path)?;
        self.write_snapshot_csv(std::io::BufWriter::new(f))
    }
}

pub fn write_records_csv(records: &[EliteRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let e = |e: csv::Error| crate::error::Error::Decode {
        field: "snapshot".into(),
        reason: e.to_string(),
    };
    out.write_record(["row", "col", "fitness", "genome_id", "generation"])
        .map_err(e)?;
    for r in records {
        out.write_record([
            r.coord.row.to_string(),
            r.coord.col.to_string(),
            format!("{:?}", r.fitness),
            r.id.0.to_string(),
            r.generation.to_string(),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|err| crate::error::Error::Decode {
        field: "snapshot".into(),
        reason: err.to_string(),
    })
}

/// Rebuilds the grid from an event log.
pub fn replay(grid: usize, events: &[ArchiveEvent]) -> Vec<EliteRecord> {
    let mut cells: Vec<Option<EliteRecord>> = vec![None; grid * grid];
    for ev in events {
        match ev {
            ArchiveEvent::Place { cell, elite, .. } => cells[cell.0 * grid + cell.1] = Some(*elite),
            ArchiveEvent::Remap { .. } => cells.iter_mut().for_each(|c| *c = None),
            ArchiveEvent::Dropped { .. } => {}
        }
    }
    cells.into_iter().flatten().collect()
}

/// Per-cell settlement counts from an event log. `settlements` and
/// `cross_cell` cover mutation-derived placements only; remap crowning is
/// tallied in the `remap_*` fields.
pub fn goal_switch_stats(events: &[ArchiveEvent]) -> BTreeMap<Cell, GoalSwitchCount> {
    let mut out: BTreeMap<Cell, GoalSwitchCount> = BTreeMap::new();
    let mut last_cell: HashMap<GenomeId, Cell> = HashMap::new();
    for ev in events {
        if let ArchiveEvent::Place {
            cell, origin, elite, ..
        } = ev
        {
            let previous = last_cell.insert(elite.id, *cell);
            out.entry(*cell)
                .or_default()
                .record(*origin, *cell, elite.parent_cell, previous);
        }
    }
    out
}

pub fn write_events_jsonl(events: &[ArchiveEvent], mut w: impl Write) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}

pub fn read_events_jsonl(text: &str) -> Result<Vec<ArchiveEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
