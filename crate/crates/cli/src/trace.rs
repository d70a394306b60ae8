//! End-to-end proximity tracing on synthetic encounters.
//!
//! Every encounter is one whole 15-minute epoch within the attenuation cutoff,
//! so a single record already meets the per-day exposure threshold. That makes
//! the centralized notified set directly comparable to the decentralized one.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use civitrace_core::authority::{Authority, TracingMode};
use civitrace_core::contact_store::{EncounterRecord, ExposureEvent, ExposurePolicy, ATTENUATION_CUTOFF};
use civitrace_core::crypto_ids::{report_from_seeds, DailySeed, RegistrantToken, EPOCHS_PER_DAY, EPOCH_MINUTES};
use civitrace_core::pds::{DayRange, PayloadBody, PersonalDataStore, Purpose, SECONDS_PER_DAY};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Colocation {
    /// Any two users meet on a given day with probability 0.3.
    Random,
    /// Every user meets user 0 exactly once; no other meetings.
    Forced,
    /// Users meet each other at random but never user 0.
    Never,
}

const POSITIVE: usize = 0;
const MEET_PROBABILITY: f64 = 0.3;

struct User {
    seeds: Vec<DailySeed>,
    pds: PersonalDataStore,
}

fn meet(users: &mut [User], a: usize, b: usize, day: u64, epoch: usize, rng: &mut ChaCha8Rng) {
    let attenuation = rng.random_range(10..=ATTENUATION_CUTOFF as u32);
    for (me, other) in [(a, b), (b, a)] {
        let seen = users[other].seeds[day as usize].ephemeral_id(epoch);
        let rec = EncounterRecord::new(seen, day, epoch as u32, EPOCH_MINUTES, attenuation).expect("valid encounter");
        users[me].pds.contacts_mut().record_encounter(rec);
    }
}

fn synthesize(n: usize, days: u64, colocation: Colocation, rng: &mut ChaCha8Rng) -> Vec<User> {
    let mut users: Vec<User> = (0..n)
        .map(|_| {
            let mut seeds = vec![DailySeed::random(0, rng)];
            for _ in 1..days {
                let next = seeds.last().unwrap().next();
                seeds.push(next);
            }
            User {
                seeds,
                pds: PersonalDataStore::new(),
            }
        })
        .collect();
    match colocation {
        Colocation::Forced => {
            for other in 1..n {
                let day = rng.random_range(0..days);
                let epoch = rng.random_range(0..EPOCHS_PER_DAY);
                meet(&mut users, POSITIVE, other, day, epoch, rng);
            }
        }
        Colocation::Random | Colocation::Never => {
            let first = if colocation == Colocation::Never { 1 } else { 0 };
            for day in 0..days {
                for a in first..n {
                    for b in a + 1..n {
                        if !rng.random_bool(MEET_PROBABILITY) {
                            continue;
                        }
                        let start = rng.random_range(0..EPOCHS_PER_DAY - 4);
                        for epoch in start..start + rng.random_range(1..=4) {
                            meet(&mut users, a, b, day, epoch, rng);
                        }
                    }
                }
            }
        }
    }
    users
}

fn event_json(e: &ExposureEvent) -> serde_json::Value {
    json!({ "day": e.day, "cumulative_min": e.cumulative_min, "matched_epochs": e.matched_epochs })
}

pub fn run(n: usize, days: u64, colocation: Colocation, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = synthesize(n, days, colocation, &mut rng);
    let policy = ExposurePolicy::default();

    // Decentralized: user 0 publishes seeds, every phone matches locally.
    let mut board = Authority::new(TracingMode::Decentralized);
    let report = report_from_seeds(&users[POSITIVE].seeds).map_err(|e| CliError::Runtime(e.to_string()))?;
    board.publish_report(report, days - 1);
    println!("decentralized: user {POSITIVE} published {days} daily seeds");
    let mut matched = BTreeSet::new();
    let mut per_user = Vec::new();
    for (k, user) in users.iter().enumerate().skip(1) {
        let events: Vec<ExposureEvent> = board
            .board()
            .entries()
            .iter()
            .flat_map(|entry| user.pds.contacts().check_exposure(&entry.report, &policy))
            .collect();
        println!("  user {k}: {} exposure(s)", events.len());
        for e in &events {
            println!("    day {} for {} min, epochs {:?}", e.day, e.cumulative_min, e.matched_epochs);
        }
        if !events.is_empty() {
            matched.insert(k);
        }
        per_user.push(json!({ "user": k, "events": events.iter().map(event_json).collect::<Vec<_>>() }));
    }

    // Centralized: seeds are escrowed and user 0 uploads digests of what it heard.
    let mut authority = Authority::new(TracingMode::Centralized);
    for (k, user) in users.iter().enumerate() {
        for s in &user.seeds {
            authority
                .escrow_register(s, RegistrantToken(k as u64))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let positive = &mut users[POSITIVE].pds;
    positive.set_consent(Purpose::ContactUpload, true);
    let now = days as i64 * SECONDS_PER_DAY;
    let (payload, _) = positive
        .build_share_payload(Purpose::ContactUpload, None, DayRange::new(0, days as i64 - 1), now, &mut rng)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let PayloadBody::ContactDigests(digests) = &payload.body else {
        return Err(CliError::Runtime("contact upload carried no digests".into()));
    };
    let notified: BTreeSet<usize> = authority
        .resolve_and_notify(digests)
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .into_iter()
        .map(|t| t.0 as usize)
        .collect();
    println!("centralized: user {POSITIVE} uploaded {} contact digests", digests.len());
    println!("  notified: {notified:?}");

    let agree = matched == notified;
    println!("decentralized matched {matched:?}; modes agree: {agree}");

    fs::create_dir_all(out)?;
    let doc = json!({
        "users": n,
        "days": days,
        "seed": seed,
        "colocation": format!("{colocation:?}").to_lowercase(),
        "positive": POSITIVE,
        "decentralized": per_user,
        "centralized_notified": notified,
        "modes_agree": agree,
    });
    fs::write(out.join("trace.json"), serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    if agree {
        Ok(())
    } else {
        Err(CliError::Runtime("centralized and decentralized notification sets differ".into()))
    }
}
