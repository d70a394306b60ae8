mod common;

use civitrace_core::awareness::{
    exposure_score, flag_risky_segments, safer_route, Lattice, RISK_WEIGHT,
};
use civitrace_core::pds::{CellId, CoarsenedVisit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cell((x, y): (usize, usize)) -> CellId {
    CellId::Grid(x as i64, y as i64)
}

#[test]
fn four_by_four_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lattice = Lattice::new(0, 0, 4, 4);
    for _ in 0..200 {
        let mask: u16 = rng.random();
        let levels: Vec<u8> = (0..16).map(|b| if mask >> b & 1 == 1 { 3 } else { 0 }).collect();
        let origin = (rng.random_range(0..4), rng.random_range(0..4));
        let dest = (rng.random_range(0..4), rng.random_range(0..4));
        let risk = common::lattice_risk(4, 4, &levels);
        let route = safer_route(&lattice, cell(origin), cell(dest), &risk, 0, RISK_WEIGHT).unwrap();
        let (cost, path) = common::enumerate_best_route(4, 4, &levels, origin, dest, RISK_WEIGHT);
        assert_eq!(route.cost, cost, "levels {levels:?}");
        assert_eq!(common::route_xy(&route.cells), path, "levels {levels:?}");
    }
}

#[test]
fn eight_by_eight_matches_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lattice = Lattice::new(0, 0, 8, 8);
    for _ in 0..200 {
        let levels: Vec<u8> = (0..64).map(|_| rng.random_range(0..=3)).collect();
        let origin = (rng.random_range(0..8), rng.random_range(0..8));
        let dest = (rng.random_range(0..8), rng.random_range(0..8));
        let risk = common::lattice_risk(8, 8, &levels);
        let route = safer_route(&lattice, cell(origin), cell(dest), &risk, 0, RISK_WEIGHT).unwrap();
        let (cost, hops) = common::dijkstra_cost_hops(8, 8, &levels, origin, dest, RISK_WEIGHT);
        assert_eq!((route.cost, route.cells.len() - 1), (cost, hops));
        // The returned path is a real walk with the claimed cost.
        let xy = common::route_xy(&route.cells);
        assert_eq!(xy[0], origin);
        assert_eq!(*xy.last().unwrap(), dest);
        let mut walked = 0;
        for w in xy.windows(2) {
            let step = w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1);
            assert_eq!(step, 1);
            walked += 1 + RISK_WEIGHT * levels[w[1].0 * 8 + w[1].1] as u64;
        }
        assert_eq!(walked, cost);
    }
}

fn visits_on(cells: &[(usize, usize)], dwell: &[u32]) -> Vec<CoarsenedVisit> {
    cells
        .iter()
        .zip(dwell)
        .map(|(&c, &d)| CoarsenedVisit {
            cell: cell(c),
            bin_start: 0,
            dwell_min: d,
        })
        .collect()
}

proptest! {
    #[test]
    fn raising_a_level_never_lowers_the_score(
        levels in prop::collection::vec(0u8..=3, 9),
        visits in prop::collection::vec((0usize..3, 0usize..3, 1u32..120), 1..10),
        bump in 0usize..9,
    ) {
        let cells: Vec<_> = visits.iter().map(|v| (v.0, v.1)).collect();
        let dwell: Vec<_> = visits.iter().map(|v| v.2).collect();
        let history = visits_on(&cells, &dwell);
        let before = exposure_score(&history, &common::lattice_risk(3, 3, &levels)).unwrap();
        let mut raised = levels.clone();
        raised[bump] = (raised[bump] + 1).min(3);
        let after = exposure_score(&history, &common::lattice_risk(3, 3, &raised)).unwrap();
        prop_assert!(after.total >= before.total);
        let expected: f64 = history
            .iter()
            .map(|v| {
                let (x, y) = match v.cell { CellId::Grid(x, y) => (x as usize, y as usize), _ => unreachable!() };
                v.dwell_min as f64 * levels[x * 3 + y] as f64
            })
            .sum();
        prop_assert_eq!(before.total, expected);
    }
}

#[test]
fn routine_cells_flagged_only_when_risky() {
    use civitrace_core::pds::SECONDS_PER_DAY;
    let levels = [3, 0, 2, 1];
    let risk = {
        let cells: Vec<CellId> = (0..4).map(|x| CellId::Grid(x, 0)).collect();
        let space = civitrace_core::secure_agg::CellIndexSpace::contiguous(cells, 0, 7 * SECONDS_PER_DAY, 1).unwrap();
        civitrace_core::authority::RiskMap::new(space, levels.to_vec())
    };
    let mut history = Vec::new();
    for day in 0..5 {
        for x in 0..4 {
            history.push(CoarsenedVisit {
                cell: CellId::Grid(x, 0),
                bin_start: day * SECONDS_PER_DAY,
                dwell_min: 30,
            });
        }
    }
    let flagged = flag_risky_segments(&history, &risk, 3).unwrap();
    let cells: Vec<_> = flagged.iter().map(|s| s.cell).collect();
    assert_eq!(cells, vec![CellId::Grid(0, 0), CellId::Grid(2, 0)]);
    assert_eq!(flagged[0].days_visited, 5);
}
