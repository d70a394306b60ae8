use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use civitrace_core::secure_agg::{run_round, ContributionVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

/// Largest per-entry count drawn for a participant.
const DEMO_MAX_COUNT: u32 = 100;
const SHOWN: usize = 8;

pub fn run(n: usize, d: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors: Vec<Vec<u32>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0..=DEMO_MAX_COUNT)).collect())
        .collect();
    let contributions = vectors
        .iter()
        .map(|v| ContributionVector::with_dimension(d, v.clone()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let start = Instant::now();
    let masked_sum = run_round(&contributions, d, &mut rng).map_err(|e| CliError::Runtime(e.to_string()))?;
    let elapsed = start.elapsed();

    let mut plain = vec![0u64; d];
    for v in &vectors {
        for (acc, &c) in plain.iter_mut().zip(v) {
            *acc += c as u64;
        }
    }

    println!("{n} participants, dimension {d}, round took {:.3} s", elapsed.as_secs_f64());
    println!("{:>8} {:>12} {:>12}", "index", "aggregate", "plaintext");
    let mut csv = String::from("index,aggregate,plaintext\n");
    let mut mismatches = 0;
    for (k, (&got, &want)) in masked_sum.iter().zip(&plain).enumerate() {
        if got as u64 != want {
            mismatches += 1;
        }
        if k < SHOWN {
            println!("{k:>8} {got:>12} {want:>12}");
        }
        writeln!(csv, "{k},{got},{want}").expect("write to string");
    }
    if d > SHOWN {
        println!("{:>8}", format!("(+{})", d - SHOWN));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("aggregate.csv"), csv)?;

    if mismatches == 0 {
        println!("aggregate equals plaintext sum on all {d} entries");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{mismatches} of {d} entries differ from the plaintext sum")))
    }
}
