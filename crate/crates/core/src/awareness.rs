//! Citizen-side analytics over the public risk map.
//!
//! Everything here takes the owner's private history and the published
//! [`RiskMap`] and returns a local result; nothing is sent anywhere.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

use crate::authority::RiskMap;
use crate::pds::{CellId, CoarsenedVisit, SECONDS_PER_DAY};

pub const ROUTINE_MIN_DAYS: usize = 3;
pub const RISK_WEIGHT: u64 = 10;
/// Level at which a routine cell is flagged.
pub const FLAG_LEVEL: u8 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AwarenessError {
    #[error("visit to {cell} at {bin_start} lies outside the risk map")]
    SpaceMismatch { cell: CellId, bin_start: i64 },
    #[error("history spans {found} days, need at least {needed}")]
    InsufficientHistory { found: usize, needed: usize },
    #[error("cell {0} is not in the lattice")]
    OutsideLattice(CellId),
    #[error("destination unreachable")]
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitContribution {
    pub cell: CellId,
    pub bin_start: i64,
    pub dwell_min: u32,
    pub level: u8,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureScore {
    pub total: f64,
    pub per_visit: Vec<VisitContribution>,
}

/// Sum over visits of `dwell_min × level(cell, bin)`.
pub fn exposure_score(visits: &[CoarsenedVisit], risk: &RiskMap) -> Result<ExposureScore, AwarenessError> {
    let per_visit = visits
        .iter()
        .map(|v| {
            let level = risk
                .level(&v.cell, v.bin_start)
                .ok_or(AwarenessError::SpaceMismatch {
                    cell: v.cell,
                    bin_start: v.bin_start,
                })?;
            Ok(VisitContribution {
                cell: v.cell,
                bin_start: v.bin_start,
                dwell_min: v.dwell_min,
                level,
                contribution: v.dwell_min as f64 * level as f64,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total = per_visit.iter().map(|c| c.contribution).sum();
    Ok(ExposureScore { total, per_visit })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoutineSegment {
    pub cell: CellId,
    /// Bins in which the cell was visited.
    pub bins: Vec<i64>,
    pub days_visited: usize,
    /// Highest level among the visited bins.
    pub risk_level: u8,
}

/// Cells visited on at least `min_days` distinct days whose highest risk
/// level over those visits is at least [`FLAG_LEVEL`].
///
/// Sorted by level, then number of days, both descending, then by cell.
/// Visits outside the map count as level 0.
pub fn flag_risky_segments(
    history: &[CoarsenedVisit],
    risk: &RiskMap,
    min_days: usize,
) -> Result<Vec<RoutineSegment>, AwarenessError> {
    let day_of = |t: i64| t.div_euclid(SECONDS_PER_DAY);
    let span = match (
        history.iter().map(|v| day_of(v.bin_start)).min(),
        history.iter().map(|v| day_of(v.bin_start)).max(),
    ) {
        (Some(lo), Some(hi)) => (hi - lo + 1) as usize,
        _ => 0,
    };
    if span < min_days {
        return Err(AwarenessError::InsufficientHistory {
            found: span,
            needed: min_days,
        });
    }

    let mut by_cell: BTreeMap<CellId, (BTreeSet<i64>, BTreeSet<i64>, u8)> = BTreeMap::new();
    for v in history {
        let entry = by_cell.entry(v.cell).or_default();
        entry.0.insert(day_of(v.bin_start));
        entry.1.insert(v.bin_start);
        entry.2 = entry.2.max(risk.level(&v.cell, v.bin_start).unwrap_or(0));
    }
    let mut out: Vec<RoutineSegment> = by_cell
        .into_iter()
        .filter(|(_, (days, _, level))| days.len() >= min_days && *level >= FLAG_LEVEL)
        .map(|(cell, (days, bins, level))| RoutineSegment {
            cell,
            bins: bins.into_iter().collect(),
            days_visited: days.len(),
            risk_level: level,
        })
        .collect();
    out.sort_by(|a, b| {
        b.risk_level
            .cmp(&a.risk_level)
            .then(b.days_visited.cmp(&a.days_visited))
            .then(a.cell.cmp(&b.cell))
    });
    Ok(out)
}

/// A rectangular block of grid cells `Grid(x0 + i, y0 + j)`, 4-connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl Lattice {
    pub fn new(x0: i64, y0: i64, width: usize, height: usize) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
        }
    }

    fn node(&self, cell: &CellId) -> Option<usize> {
        let CellId::Grid(x, y) = *cell else {
            return None;
        };
        let (i, j) = (x - self.x0, y - self.y0);
        (0..self.width as i64).contains(&i).then_some(())?;
        (0..self.height as i64).contains(&j).then_some(())?;
        Some(i as usize * self.height + j as usize)
    }

    fn cell(&self, node: usize) -> CellId {
        CellId::Grid(
            self.x0 + (node / self.height) as i64,
            self.y0 + (node % self.height) as i64,
        )
    }

    fn neighbours(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = ((node / self.height) as i64, (node % self.height) as i64);
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0 && a < self.width as i64 && b < self.height as i64)
            .map(|(a, b)| a as usize * self.height + b as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub cells: Vec<CellId>,
    pub cost: u64,
}

impl Route {
    /// One cell per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,cell_x,cell_y\n");
        for (step, cell) in self.cells.iter().enumerate() {
            let (x, y) = cell.export_xy();
            out.push_str(&format!("{step},{x},{y}\n"));
        }
        out
    }
}

/// Minimum-cost path where entering a cell costs `1 + weight × level`.
///
/// Among equal-cost paths the one with fewer hops wins, then the
/// lexicographically smallest cell sequence. Levels come from `risk` for the
/// bin containing `t`; cells outside the map count as level 0.
pub fn safer_route(
    lattice: &Lattice,
    origin: CellId,
    dest: CellId,
    risk: &RiskMap,
    t: i64,
    weight: u64,
) -> Result<Route, AwarenessError> {
    let start = lattice.node(&origin).ok_or(AwarenessError::OutsideLattice(origin))?;
    let goal = lattice.node(&dest).ok_or(AwarenessError::OutsideLattice(dest))?;
    let n = lattice.width * lattice.height;
    let enter_cost: Vec<u64> = (0..n)
        .map(|v| 1 + weight * risk.level(&lattice.cell(v), t).unwrap_or(0) as u64)
        .collect();

    // Distances to the goal as (cost, hops), found by a backward search:
    // the cost of moving u -> v is charged at v.
    let mut dist: Vec<Option<(u64, u64)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[goal] = Some((0, 0));
    heap.push(Reverse(((0u64, 0u64), goal)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if dist[v] != Some(d) {
            continue;
        }
        for u in lattice.neighbours(v) {
            let candidate = (d.0 + enter_cost[v], d.1 + 1);
            if dist[u].is_none_or(|cur| candidate < cur) {
                dist[u] = Some(candidate);
                heap.push(Reverse((candidate, u)));
            }
        }
    }

    let total = dist[start].ok_or(AwarenessError::Unreachable)?;
    // Walk forward choosing the smallest cell among neighbours on an optimal path.
    let mut path = vec![start];
    let mut here = start;
    let mut remaining = total;
    while here != goal {
        let next = lattice
            .neighbours(here)
            .filter(|&v| {
                dist[v].is_some_and(|d| (d.0 + enter_cost[v], d.1 + 1) == remaining)
            })
            .min_by_key(|&v| lattice.cell(v))
            .ok_or(AwarenessError::Unreachable)?;
        remaining = dist[next].expect("on an optimal path");
        path.push(next);
        here = next;
    }
    Ok(Route {
        cells: path.into_iter().map(|v| lattice.cell(v)).collect(),
        cost: total.0,
    })
}
