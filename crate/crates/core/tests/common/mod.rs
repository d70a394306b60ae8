//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the code under test for the quantity being checked:
//! identifiers are re-derived with `sha2` straight from the report's wire
//! bytes, sums are plain integer sums, and routes come from enumeration or a
//! textbook Dijkstra.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use civitrace_core::authority::RiskMap;
use civitrace_core::contact_store::{EncounterRecord, ExposureEvent, ExposurePolicy};
use civitrace_core::pds::{CellId, SECONDS_PER_DAY};
use civitrace_core::secure_agg::CellIndexSpace;
use sha2::{Digest, Sha256};

pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn oracle_ephid(secret: &[u8; 32], epoch: u32) -> [u8; 16] {
    sha256(&[secret, b"EPHID", &epoch.to_be_bytes()])[..16].try_into().unwrap()
}

/// Every identifier a report covers, parsed from its wire bytes and sorted.
pub fn oracle_ids(report_bytes: &[u8]) -> Vec<[u8; 16]> {
    let count = u32::from_be_bytes(report_bytes[8..12].try_into().unwrap()) as usize;
    assert_eq!(report_bytes.len(), 12 + 32 * count);
    let mut ids = Vec::with_capacity(count * 96);
    for k in 0..count {
        let secret: [u8; 32] = report_bytes[12 + 32 * k..12 + 32 * (k + 1)].try_into().unwrap();
        for epoch in 0..96 {
            ids.push(oracle_ephid(&secret, epoch));
        }
    }
    ids.sort_unstable();
    ids
}

/// Exposure events by brute force: binary search per record, group by day.
pub fn oracle_exposure(
    records: &[EncounterRecord],
    report_bytes: &[u8],
    policy: &ExposurePolicy,
) -> Vec<ExposureEvent> {
    let ids = oracle_ids(report_bytes);
    let mut per_day: BTreeMap<u64, (u32, Vec<u32>)> = BTreeMap::new();
    for r in records {
        if r.attenuation() > policy.attenuation_cutoff as u32 {
            continue;
        }
        if ids.binary_search(r.observed().as_bytes()).is_ok() {
            let e = per_day.entry(r.day()).or_default();
            e.0 += r.duration_min();
            e.1.push(r.epoch());
        }
    }
    per_day
        .into_iter()
        .filter(|(_, (m, _))| *m >= policy.min_minutes)
        .map(|(day, (cumulative_min, mut epochs))| {
            epochs.sort_unstable();
            epochs.dedup();
            ExposureEvent {
                day,
                cumulative_min,
                matched_epochs: epochs,
            }
        })
        .collect()
}

pub fn plaintext_sum(vectors: &[Vec<u32>]) -> Vec<u32> {
    let d = vectors[0].len();
    (0..d)
        .map(|k| vectors.iter().fold(0u32, |acc, v| acc.wrapping_add(v[k])))
        .collect()
}

/// Risk map over `Grid(x, y)` for `x < width`, `y < height` with one daily bin
/// at 0; `levels` is row-major in x.
pub fn lattice_risk(width: usize, height: usize, levels: &[u8]) -> RiskMap {
    let cells = (0..width as i64)
        .flat_map(|x| (0..height as i64).map(move |y| CellId::Grid(x, y)))
        .collect();
    let space = CellIndexSpace::new(cells, vec![0], SECONDS_PER_DAY).unwrap();
    RiskMap::new(space, levels.to_vec())
}

fn neighbours(width: usize, height: usize, (x, y): (usize, usize)) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if x > 0 {
        out.push((x - 1, y));
    }
    if x + 1 < width {
        out.push((x + 1, y));
    }
    if y > 0 {
        out.push((x, y - 1));
    }
    if y + 1 < height {
        out.push((x, y + 1));
    }
    out
}

/// Best route by enumerating every simple path: minimum cost, then hops, then
/// lexicographically smallest cell sequence.
/// Cheapest route so far as (cost, hops, path); ordering gives the tie-break.
type Best = Option<(u64, usize, Vec<(usize, usize)>)>;

pub fn enumerate_best_route(
    width: usize,
    height: usize,
    levels: &[u8],
    origin: (usize, usize),
    dest: (usize, usize),
    weight: u64,
) -> (u64, Vec<(usize, usize)>) {
    let cost = |c: (usize, usize)| 1 + weight * levels[c.0 * height + c.1] as u64;
    let mut best: Best = None;
    let mut path = vec![origin];
    let mut on_path = vec![false; width * height];
    on_path[origin.0 * height + origin.1] = true;

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        width: usize,
        height: usize,
        dest: (usize, usize),
        cost: &dyn Fn((usize, usize)) -> u64,
        path: &mut Vec<(usize, usize)>,
        on_path: &mut Vec<bool>,
        so_far: u64,
        best: &mut Best,
    ) {
        let here = *path.last().unwrap();
        if here == dest {
            let key = (so_far, path.len(), path.clone());
            if best.as_ref().is_none_or(|b| key < *b) {
                *best = Some(key);
            }
            return;
        }
        if let Some(b) = best {
            if so_far > b.0 {
                return;
            }
        }
        for n in neighbours(width, height, here) {
            let idx = n.0 * height + n.1;
            if on_path[idx] {
                continue;
            }
            on_path[idx] = true;
            path.push(n);
            dfs(width, height, dest, cost, path, on_path, so_far + cost(n), best);
            path.pop();
            on_path[idx] = false;
        }
    }

    dfs(width, height, dest, &cost, &mut path, &mut on_path, 0, &mut best);
    let (c, _, p) = best.expect("grid is connected");
    (c, p)
}

/// Minimum cost and, among minimum-cost paths, minimum hops, by a plain
/// Dijkstra over (cost, hops).
pub fn dijkstra_cost_hops(
    width: usize,
    height: usize,
    levels: &[u8],
    origin: (usize, usize),
    dest: (usize, usize),
    weight: u64,
) -> (u64, usize) {
    let n = width * height;
    let mut dist = vec![(u64::MAX, usize::MAX); n];
    let idx = |c: (usize, usize)| c.0 * height + c.1;
    let mut heap = BinaryHeap::new();
    dist[idx(origin)] = (0, 0);
    heap.push(Reverse(((0u64, 0usize), origin)));
    while let Some(Reverse((d, c))) = heap.pop() {
        if d > dist[idx(c)] {
            continue;
        }
        for nb in neighbours(width, height, c) {
            let nd = (d.0 + 1 + weight * levels[idx(nb)] as u64, d.1 + 1);
            if nd < dist[idx(nb)] {
                dist[idx(nb)] = nd;
                heap.push(Reverse((nd, nb)));
            }
        }
    }
    dist[idx(dest)]
}

pub fn route_xy(cells: &[CellId]) -> Vec<(usize, usize)> {
    cells
        .iter()
        .map(|c| match *c {
            CellId::Grid(x, y) => (x as usize, y as usize),
            other => panic!("unexpected cell {other}"),
        })
        .collect()
}

/// Density-map exports for the same citizens via direct upload (A) and via
/// secure aggregation (B), both at 0.1° / 1-day granularity.
pub fn modality_exports(seed: u64, citizens: usize, days: i64) -> (String, String) {
    use civitrace_core::authority::{build_density_map, LocationStore, K_ANON};
    use civitrace_core::pds::{
        DayRange, Granularity, GridSize, LocationPoint, PersonalDataStore, Purpose, Spatial,
        TemporalBin,
    };
    use civitrace_core::secure_agg::run_round;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Granularity::new(Spatial::Grid(GridSize::Coarse), TemporalBin::Day);
    let cells: Vec<CellId> = (0..4i64)
        .flat_map(|i| (0..4i64).map(move |j| CellId::Grid(430 + i, 100 + j)))
        .collect();
    let space = CellIndexSpace::contiguous(cells, 0, SECONDS_PER_DAY, days as usize).unwrap();
    let window = DayRange::new(0, days - 1);
    let now = days * SECONDS_PER_DAY;

    let mut direct = LocationStore::new();
    let mut contributions = Vec::new();
    for _ in 0..citizens {
        let places: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(43.0..43.4), rng.random_range(10.0..10.4)))
            .collect();
        let mut pds = PersonalDataStore::new();
        let mut t = 0;
        while t < days * SECONDS_PER_DAY {
            let (lat, lon) = places[rng.random_range(0..places.len())];
            for _ in 0..rng.random_range(1..12) {
                pds.append_location(LocationPoint::new(lat, lon, t).unwrap()).unwrap();
                t += 900;
            }
        }
        pds.set_consent(Purpose::LocationUpload, true);
        pds.set_consent(Purpose::AggregateParticipation, true);
        let (payload, _) = pds
            .build_share_payload(Purpose::LocationUpload, Some(g), window, now, &mut rng)
            .unwrap();
        direct.ingest_location_payload(&payload).unwrap();
        let (vector, _) = pds.build_contribution(&space, g, window, now).unwrap();
        contributions.push(vector);
    }
    let sums = run_round(&contributions, space.dimension(), &mut rng).unwrap();
    let mut aggregated = LocationStore::new();
    aggregated.ingest_aggregate(&space, &sums).unwrap();
    (
        build_density_map(&direct, &space, K_ANON).to_csv(),
        build_density_map(&aggregated, &space, K_ANON).to_csv(),
    )
}

/// Counts found in every published artifact of a random map: the density CSV,
/// the hotspot JSON and the risk-map CSV. Returns the offending count, if any.
pub fn suppression_violation(counts: &[u64], k: u64) -> Option<u64> {
    use civitrace_core::authority::{
        detect_hotspots, hotspots_json, publish_risk_map, DensityMap, HotspotPolicy,
    };

    let cells = (0..counts.len() as i64).map(|x| CellId::Grid(x, 0)).collect();
    let space = CellIndexSpace::new(cells, vec![0], 3600).unwrap();
    let map = DensityMap::new(space, counts.to_vec(), None, k);
    let policy = HotspotPolicy {
        k_anon: k,
        ..HotspotPolicy::default()
    };
    let hot = detect_hotspots(&map, &policy);
    let bad = |c: u64| c > 0 && c < k;
    for line in map.to_csv().lines().skip(1) {
        let c: u64 = line.rsplit(',').next().unwrap().parse().unwrap();
        if bad(c) {
            return Some(c);
        }
    }
    let json: serde_json::Value = serde_json::from_str(&hotspots_json(&hot)).unwrap();
    for h in json.as_array().unwrap() {
        let c = h["infected_count"].as_u64().unwrap();
        if bad(c) {
            return Some(c);
        }
    }
    // Levels are not counts, but a level-bearing cell must have a published count.
    let risk = publish_risk_map(&map, &hot);
    let published = map.published_counts();
    for (level, count) in risk.levels().iter().zip(&published) {
        if *level > 0 && *count == 0 {
            return Some(*count);
        }
    }
    None
}
