use std::fmt::Write as _;

use serde::ser::SerializeStruct;
use serde::Serialize;

use super::LocationStore;
use crate::pds::CellId;
use crate::secure_agg::CellIndexSpace;

pub const K_ANON: u64 = 5;
pub const RATIO_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotspotPolicy {
    pub k_anon: u64,
    pub ratio_min: f64,
}

impl Default for HotspotPolicy {
    fn default() -> Self {
        Self {
            k_anon: K_ANON,
            ratio_min: RATIO_MIN,
        }
    }
}

/// Infected-visit counts over a space, with an optional population baseline.
///
/// The raw counts stay internal; anything published goes through
/// [`DensityMap::published_counts`], which zeroes counts below `k_anon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    space: CellIndexSpace,
    infected: Vec<u64>,
    total: Option<Vec<u64>>,
    k_anon: u64,
}

impl DensityMap {
    pub fn new(space: CellIndexSpace, infected: Vec<u64>, total: Option<Vec<u64>>, k_anon: u64) -> Self {
        assert_eq!(infected.len(), space.dimension());
        if let Some(t) = &total {
            assert_eq!(t.len(), infected.len());
        }
        Self {
            space,
            infected,
            total,
            k_anon,
        }
    }

    pub fn space(&self) -> &CellIndexSpace {
        &self.space
    }

    pub fn k_anon(&self) -> u64 {
        self.k_anon
    }

    pub fn baseline(&self) -> Option<&[u64]> {
        self.total.as_deref()
    }

    /// Counts with every value in `(0, k_anon)` replaced by zero.
    pub fn published_counts(&self) -> Vec<u64> {
        self.infected
            .iter()
            .map(|&c| if c < self.k_anon { 0 } else { c })
            .collect()
    }

    /// `cell_x,cell_y,bin_start,count` over the published counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_x,cell_y,bin_start,count\n");
        for (i, count) in self.published_counts().into_iter().enumerate() {
            let (cell, bin) = self.space.coordinates(i);
            let (x, y) = cell.export_xy();
            writeln!(out, "{x},{y},{bin},{count}").unwrap();
        }
        out
    }
}

pub fn build_density_map(store: &LocationStore, space: &CellIndexSpace, k_anon: u64) -> DensityMap {
    let fill = |counts: &std::collections::BTreeMap<(CellId, i64), u64>| {
        let mut out = vec![0u64; space.dimension()];
        for (&(cell, bin), &count) in counts {
            if let Some(idx) = space.index_of(&cell, bin) {
                out[idx] += count;
            }
        }
        out
    };
    let infected = fill(store.infected_counts());
    let total = store.baseline_counts().map(fill);
    DensityMap::new(space.clone(), infected, total, k_anon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    /// No baseline was available.
    NoBaseline,
    Finite(f64),
    /// Baseline of zero with enough infected visits.
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hotspot {
    pub cell: CellId,
    pub bin_start: i64,
    pub infected_count: u64,
    pub ratio: Ratio,
}

impl Serialize for Hotspot {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut s = ser.serialize_struct("Hotspot", 4)?;
        s.serialize_field("cell", &self.cell)?;
        s.serialize_field("bin_start", &self.bin_start)?;
        s.serialize_field("infected_count", &self.infected_count)?;
        match self.ratio {
            Ratio::NoBaseline => s.serialize_field("ratio", &Option::<f64>::None)?,
            Ratio::Finite(r) => s.serialize_field("ratio", &r)?,
            Ratio::Infinite => s.serialize_field("ratio", "inf")?,
        }
        s.end()
    }
}

/// Cells with at least `k_anon` infected visits and, when a baseline exists,
/// an infected share of at least `ratio_min`.
///
/// Sorted by count descending, then `(cell, bin_start)` ascending.
pub fn detect_hotspots(map: &DensityMap, policy: &HotspotPolicy) -> Vec<Hotspot> {
    let mut out: Vec<Hotspot> = map
        .infected
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= policy.k_anon && c > 0)
        .filter_map(|(i, &infected)| {
            let ratio = match &map.total {
                None => Ratio::NoBaseline,
                Some(total) if total[i] == 0 => Ratio::Infinite,
                Some(total) => Ratio::Finite(infected as f64 / total[i] as f64),
            };
            if let Ratio::Finite(r) = ratio {
                if r < policy.ratio_min {
                    return None;
                }
            }
            let (cell, bin_start) = map.space.coordinates(i);
            Some(Hotspot {
                cell,
                bin_start,
                infected_count: infected,
                ratio,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.infected_count
            .cmp(&a.infected_count)
            .then_with(|| (a.cell, a.bin_start).cmp(&(b.cell, b.bin_start)))
    });
    out
}

pub fn hotspots_json(hotspots: &[Hotspot]) -> String {
    serde_json::to_string_pretty(hotspots).expect("hotspots serialize")
}

/// Per cell×bin risk level in `0..=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskMap {
    space: CellIndexSpace,
    levels: Vec<u8>,
}

impl RiskMap {
    pub fn new(space: CellIndexSpace, levels: Vec<u8>) -> Self {
        assert_eq!(levels.len(), space.dimension());
        assert!(levels.iter().all(|&l| l <= 3));
        Self { space, levels }
    }

    pub fn space(&self) -> &CellIndexSpace {
        &self.space
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    /// Level of the bin containing `t`, or `None` outside the space.
    pub fn level(&self, cell: &CellId, t: i64) -> Option<u8> {
        self.space.index_of(cell, t).map(|i| self.levels[i])
    }

    /// `cell_x,cell_y,bin_start,level`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_x,cell_y,bin_start,level\n");
        for (i, level) in self.levels.iter().enumerate() {
            let (cell, bin) = self.space.coordinates(i);
            let (x, y) = cell.export_xy();
            writeln!(out, "{x},{y},{bin},{level}").unwrap();
        }
        out
    }
}

/// Level 3 for hotspots. Remaining cells with a nonzero published count get
/// level 2 or 1 when at least two thirds or one third of all nonzero published
/// counts are strictly below theirs; everything else is 0.
pub fn publish_risk_map(map: &DensityMap, hotspots: &[Hotspot]) -> RiskMap {
    let published = map.published_counts();
    let mut nonzero: Vec<u64> = published.iter().copied().filter(|&c| c > 0).collect();
    nonzero.sort_unstable();
    let m = nonzero.len() as u64;
    let hot: std::collections::HashSet<usize> = hotspots
        .iter()
        .filter_map(|h| map.space.index_of(&h.cell, h.bin_start))
        .collect();
    let levels = published
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            if hot.contains(&i) {
                return 3;
            }
            if count == 0 {
                return 0;
            }
            let below = nonzero.partition_point(|&c| c < count) as u64;
            if 3 * below >= 2 * m {
                2
            } else if 3 * below >= m {
                1
            } else {
                0
            }
        })
        .collect();
    RiskMap::new(map.space.clone(), levels)
}
