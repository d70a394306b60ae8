use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PdsError;

/// Largest time a single sample is assumed to represent when computing dwell.
pub const MAX_SAMPLE_GAP_SECS: i64 = 15 * 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationPoint {
    lat: f64,
    lon: f64,
    t: i64,
}

impl LocationPoint {
    pub fn new(lat: f64, lon: f64, t: i64) -> Result<Self, PdsError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(PdsError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon, t })
    }

    pub fn t(&self) -> i64 {
        self.t
    }

    // Coordinates stay crate-private: only coarsened views leave the store.
    pub(crate) fn lat(&self) -> f64 {
        self.lat
    }

    pub(crate) fn lon(&self) -> f64 {
        self.lon
    }
}

/// Side length of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GridSize {
    /// 0.001 degrees
    Fine,
    /// 0.01 degrees
    Medium,
    /// 0.1 degrees
    Coarse,
}

impl GridSize {
    pub fn cell_deg(self) -> f64 {
        match self {
            GridSize::Fine => 0.001,
            GridSize::Medium => 0.01,
            GridSize::Coarse => 0.1,
        }
    }

    pub fn cell_of(self, lat: f64, lon: f64) -> (i64, i64) {
        let deg = self.cell_deg();
        ((lat / deg).floor() as i64, (lon / deg).floor() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spatial {
    ExactPoint,
    Grid(GridSize),
    Poi,
    Municipality,
}

impl Spatial {
    fn rank(self) -> u8 {
        match self {
            Spatial::ExactPoint => 0,
            Spatial::Grid(GridSize::Fine) => 1,
            Spatial::Grid(GridSize::Medium) => 2,
            Spatial::Grid(GridSize::Coarse) => 3,
            Spatial::Poi => 4,
            Spatial::Municipality => 5,
        }
    }
}

impl PartialOrd for Spatial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Coarseness order: finer levels compare less.
impl Ord for Spatial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for Spatial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Spatial::ExactPoint => f.write_str("exact"),
            Spatial::Grid(size) => write!(f, "grid:{}", size.cell_deg()),
            Spatial::Poi => f.write_str("poi"),
            Spatial::Municipality => f.write_str("municipality"),
        }
    }
}

impl FromStr for Spatial {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "exact" => Spatial::ExactPoint,
            "grid:0.001" => Spatial::Grid(GridSize::Fine),
            "grid:0.01" => Spatial::Grid(GridSize::Medium),
            "grid:0.1" => Spatial::Grid(GridSize::Coarse),
            "poi" => Spatial::Poi,
            "municipality" => Spatial::Municipality,
            other => return Err(format!("unknown spatial granularity {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemporalBin {
    Minute,
    QuarterHour,
    Hour,
    Day,
}

impl TemporalBin {
    pub fn minutes(self) -> u32 {
        match self {
            TemporalBin::Minute => 1,
            TemporalBin::QuarterHour => 15,
            TemporalBin::Hour => 60,
            TemporalBin::Day => 1440,
        }
    }

    pub fn seconds(self) -> i64 {
        self.minutes() as i64 * 60
    }

    pub fn from_minutes(minutes: u32) -> Option<Self> {
        Some(match minutes {
            1 => TemporalBin::Minute,
            15 => TemporalBin::QuarterHour,
            60 => TemporalBin::Hour,
            1440 => TemporalBin::Day,
            _ => return None,
        })
    }

    pub fn bin_start(self, t: i64) -> i64 {
        t.div_euclid(self.seconds()) * self.seconds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Granularity {
    #[serde(with = "spatial_str")]
    pub spatial: Spatial,
    #[serde(rename = "bin_minutes", with = "bin_minutes")]
    pub temporal: TemporalBin,
}

impl Granularity {
    pub const fn new(spatial: Spatial, temporal: TemporalBin) -> Self {
        Self { spatial, temporal }
    }

    /// True when `self` is finer than `other` on either axis.
    pub fn is_finer_than(&self, other: &Granularity) -> bool {
        self.spatial < other.spatial || self.temporal < other.temporal
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}min", self.spatial, self.temporal.minutes())
    }
}

mod spatial_str {
    use super::Spatial;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &Spatial, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Spatial, D::Error> {
        String::deserialize(de)?.parse().map_err(serde::de::Error::custom)
    }
}

mod bin_minutes {
    use super::TemporalBin;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &TemporalBin, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_u32(b.minutes())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<TemporalBin, D::Error> {
        let minutes = u32::deserialize(de)?;
        TemporalBin::from_minutes(minutes)
            .ok_or_else(|| serde::de::Error::custom(format!("unsupported bin {minutes} min")))
    }
}

/// Identifier of a coarsened location.
///
/// Grid pairs are `(floor(lat / cell_deg), floor(lon / cell_deg))`. Exact points
/// are kept at 1e-7 degree resolution so they can be hashed and ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellId {
    Point(i64, i64),
    Grid(i64, i64),
    Poi(u32),
    Municipality(u32),
}

impl CellId {
    /// The two leading CSV columns used by map exports.
    pub fn export_xy(&self) -> (String, String) {
        match self {
            CellId::Point(a, b) | CellId::Grid(a, b) => (a.to_string(), b.to_string()),
            CellId::Poi(id) => (format!("poi:{id}"), String::new()),
            CellId::Municipality(id) => (format!("municipality:{id}"), String::new()),
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellId::Point(a, b) => write!(f, "point:{a}:{b}"),
            CellId::Grid(a, b) => write!(f, "{a}:{b}"),
            CellId::Poi(id) => write!(f, "poi:{id}"),
            CellId::Municipality(id) => write!(f, "municipality:{id}"),
        }
    }
}

/// Grid cells serialize as `[a, b]`, labelled regions as strings.
impl Serialize for CellId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            CellId::Grid(a, b) => [*a, *b].serialize(ser),
            other => ser.collect_str(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarsenedVisit {
    pub cell: CellId,
    pub bin_start: i64,
    pub dwell_min: u32,
}

/// Lookup from grid cells to externally supplied region labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    base: GridSize,
    labels: HashMap<(i64, i64), u32>,
}

impl RegionMap {
    pub fn new(base: GridSize) -> Self {
        Self {
            base,
            labels: HashMap::new(),
        }
    }

    pub fn insert(&mut self, cell: (i64, i64), label: u32) {
        self.labels.insert(cell, label);
    }

    pub fn label_of(&self, lat: f64, lon: f64) -> Option<u32> {
        self.labels.get(&self.base.cell_of(lat, lon)).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionMaps {
    pub poi: Option<RegionMap>,
    pub municipality: Option<RegionMap>,
}

fn cell_for(
    point: &LocationPoint,
    spatial: Spatial,
    maps: &RegionMaps,
) -> Result<Option<CellId>, PdsError> {
    Ok(match spatial {
        Spatial::ExactPoint => Some(CellId::Point(
            (point.lat * 1e7).round() as i64,
            (point.lon * 1e7).round() as i64,
        )),
        Spatial::Grid(size) => {
            let (a, b) = size.cell_of(point.lat, point.lon);
            Some(CellId::Grid(a, b))
        }
        Spatial::Poi => maps
            .poi
            .as_ref()
            .ok_or(PdsError::MissingMap(Spatial::Poi))?
            .label_of(point.lat, point.lon)
            .map(CellId::Poi),
        Spatial::Municipality => maps
            .municipality
            .as_ref()
            .ok_or(PdsError::MissingMap(Spatial::Municipality))?
            .label_of(point.lat, point.lon)
            .map(CellId::Municipality),
    })
}

/// Reduces a time-sorted trajectory to visits at granularity `g`.
///
/// Each point stands for the time until the next point, capped at
/// [`MAX_SAMPLE_GAP_SECS`]; the last point stands for nothing. Consecutive
/// points falling in the same (cell, bin) merge into one visit whose dwell is
/// the rounded sum, at least one minute. Points outside every labelled region
/// of a POI or municipality map are dropped and break the run.
pub fn coarsen(
    traj: &[LocationPoint],
    g: Granularity,
    maps: &RegionMaps,
) -> Result<Vec<CoarsenedVisit>, PdsError> {
    match g.spatial {
        Spatial::Poi if maps.poi.is_none() => return Err(PdsError::MissingMap(Spatial::Poi)),
        Spatial::Municipality if maps.municipality.is_none() => {
            return Err(PdsError::MissingMap(Spatial::Municipality))
        }
        _ => {}
    }
    debug_assert!(traj.windows(2).all(|w| w[0].t <= w[1].t));

    let mut visits: Vec<CoarsenedVisit> = Vec::new();
    // (cell, bin, dwell seconds) of the run being built.
    let mut current: Option<(CellId, i64, i64)> = None;
    let flush = |run: Option<(CellId, i64, i64)>, visits: &mut Vec<CoarsenedVisit>| {
        if let Some((cell, bin_start, secs)) = run {
            let dwell_min = ((secs + 30) / 60).max(1) as u32;
            visits.push(CoarsenedVisit {
                cell,
                bin_start,
                dwell_min,
            });
        }
    };

    for (i, point) in traj.iter().enumerate() {
        let secs = traj
            .get(i + 1)
            .map(|next| (next.t - point.t).clamp(0, MAX_SAMPLE_GAP_SECS))
            .unwrap_or(0);
        let Some(cell) = cell_for(point, g.spatial, maps)? else {
            flush(current.take(), &mut visits);
            continue;
        };
        let bin = g.temporal.bin_start(point.t);
        match current.as_mut() {
            Some((c, b, acc)) if *c == cell && *b == bin => *acc += secs,
            _ => {
                flush(current.take(), &mut visits);
                current = Some((cell, bin, secs));
            }
        }
    }
    flush(current, &mut visits);
    visits.sort_by_key(|v| v.bin_start);
    Ok(visits)
}
