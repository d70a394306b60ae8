use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use civitrace_core::pds::{
    minimum_granularity, DayRange, Granularity, GridSize, LocationPoint, PersonalDataStore, Purpose, Spatial,
    TemporalBin, SECONDS_PER_DAY,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

const SAMPLE_SECS: i64 = 5 * 60;

fn pds_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// One day of 5-minute samples: a random walk that drifts between a few
/// anchor places.
fn trajectory(rng: &mut ChaCha8Rng) -> Vec<LocationPoint> {
    let anchors = [(43.7200, 10.4000), (43.7230, 10.4080), (43.7420, 10.3950)];
    let (mut lat, mut lon) = anchors[0];
    let mut target = anchors[0];
    let mut points = Vec::new();
    for t in (0..SECONDS_PER_DAY).step_by(SAMPLE_SECS as usize) {
        if rng.random_bool(0.02) {
            target = anchors[rng.random_range(0..anchors.len())];
        }
        lat += 0.2 * (target.0 - lat) + rng.random_range(-0.0003..0.0003);
        lon += 0.2 * (target.1 - lon) + rng.random_range(-0.0003..0.0003);
        points.push(LocationPoint::new(lat, lon, t).expect("coordinates in range"));
    }
    points
}

pub fn run(seed: u64, out: &Path) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pds = PersonalDataStore::new();
    for p in trajectory(&mut rng) {
        pds.append_location(p).map_err(pds_err)?;
    }
    println!("{} location points over one day", pds.location_count());

    let day = DayRange::new(0, 0);
    let mut csv = String::from("grid_deg,bin_minutes,distinct_cells,visits,total_dwell_min\n");
    println!("{:>9} {:>8} {:>7} {:>7}", "grid_deg", "bin_min", "cells", "visits");
    for grid in [GridSize::Fine, GridSize::Medium, GridSize::Coarse] {
        for bin in [TemporalBin::QuarterHour, TemporalBin::Hour, TemporalBin::Day] {
            let g = Granularity::new(Spatial::Grid(grid), bin);
            let visits = pds.history(g, day).map_err(pds_err)?;
            let mut cells: Vec<_> = visits.iter().map(|v| v.cell).collect();
            cells.sort();
            cells.dedup();
            let dwell: u32 = visits.iter().map(|v| v.dwell_min).sum();
            println!("{:>9} {:>8} {:>7} {:>7}", grid.cell_deg(), bin.minutes(), cells.len(), visits.len());
            writeln!(csv, "{},{},{},{},{dwell}", grid.cell_deg(), bin.minutes(), cells.len(), visits.len())
                .expect("write to string");
        }
    }

    println!("minimum granularity per purpose:");
    for purpose in [Purpose::ContactUpload, Purpose::LocationUpload, Purpose::AggregateParticipation] {
        println!("  {purpose:?}: {:?}", minimum_granularity(purpose));
    }

    pds.set_consent(Purpose::LocationUpload, true);
    let exact = Granularity::new(Spatial::ExactPoint, TemporalBin::Minute);
    match pds.build_share_payload(Purpose::LocationUpload, Some(exact), day, SECONDS_PER_DAY, &mut rng) {
        Err(e) => println!("exact-point location upload refused: {e}"),
        Ok(_) => return Err(CliError::Runtime("exact-point upload was accepted".into())),
    }
    let allowed = Granularity::new(Spatial::Grid(GridSize::Medium), TemporalBin::Hour);
    let (payload, consent) = pds
        .build_share_payload(Purpose::LocationUpload, Some(allowed), day, SECONDS_PER_DAY, &mut rng)
        .map_err(pds_err)?;
    println!(
        "location upload at 0.01 deg / 60 min: {} visits under a fresh pseudonym, consent issued at t={}",
        payload.body.len(),
        consent.issued_at
    );

    fs::create_dir_all(out)?;
    fs::write(out.join("coarsen.csv"), csv)?;
    Ok(())
}
