//! Device-local encounter log and exposure matching.
//!
//! The store never talks to anything else: [`ContactStore::check_exposure`]
//! takes a published report and returns the matches for the owner to act on.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::crypto_ids::{ContactDigest, EphemeralId, ExposureReport, EPHID_LEN, EPOCHS_PER_DAY};

pub const RETENTION_DAYS: u64 = 14;
pub const EXPOSURE_MIN_MINUTES: u32 = 15;
pub const ATTENUATION_CUTOFF: u8 = 60;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContactError {
    #[error("epoch {0} outside 0..{EPOCHS_PER_DAY}")]
    EpochOutOfRange(u32),
    #[error("duration {0} min outside 1..=15")]
    DurationOutOfRange(u32),
    #[error("attenuation {0} outside 0..=100")]
    AttenuationOutOfRange(u32),
    #[error("day {0} too large")]
    DayOutOfRange(u64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Thresholds for what counts as a close and prolonged contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExposurePolicy {
    pub retention_days: u64,
    pub min_minutes: u32,
    pub attenuation_cutoff: u8,
}

impl Default for ExposurePolicy {
    fn default() -> Self {
        Self {
            retention_days: RETENTION_DAYS,
            min_minutes: EXPOSURE_MIN_MINUTES,
            attenuation_cutoff: ATTENUATION_CUTOFF,
        }
    }
}

/// One observed identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncounterRecord {
    observed: EphemeralId,
    day: u32,
    epoch: u8,
    duration_min: u8,
    attenuation: u8,
}

impl EncounterRecord {
    pub fn new(
        observed: EphemeralId,
        day: u64,
        epoch: u32,
        duration_min: u32,
        attenuation: u32,
    ) -> Result<Self, ContactError> {
        if epoch as usize >= EPOCHS_PER_DAY {
            return Err(ContactError::EpochOutOfRange(epoch));
        }
        if !(1..=15).contains(&duration_min) {
            return Err(ContactError::DurationOutOfRange(duration_min));
        }
        if attenuation > 100 {
            return Err(ContactError::AttenuationOutOfRange(attenuation));
        }
        let day = u32::try_from(day).map_err(|_| ContactError::DayOutOfRange(day))?;
        Ok(Self {
            observed,
            day,
            epoch: epoch as u8,
            duration_min: duration_min as u8,
            attenuation: attenuation as u8,
        })
    }

    pub fn observed(&self) -> EphemeralId {
        self.observed
    }

    pub fn day(&self) -> u64 {
        self.day as u64
    }

    pub fn epoch(&self) -> u32 {
        self.epoch as u32
    }

    pub fn duration_min(&self) -> u32 {
        self.duration_min as u32
    }

    pub fn attenuation(&self) -> u32 {
        self.attenuation as u32
    }
}

/// A day on which matched contact time reached the exposure threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureEvent {
    pub day: u64,
    pub cumulative_min: u32,
    pub matched_epochs: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContactStore {
    records: Vec<EncounterRecord>,
}

impl ContactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EncounterRecord] {
        &self.records
    }

    /// Appends a record. Duplicates are kept.
    pub fn record_encounter(&mut self, rec: EncounterRecord) {
        self.records.push(rec);
    }

    /// Keeps records with `day > today - retention_days`.
    pub fn prune(&mut self, today: u64, retention_days: u64) {
        self.records
            .retain(|r| r.day as i128 > today as i128 - retention_days as i128);
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Matches the store against one published report.
    pub fn check_exposure(
        &self,
        report: &ExposureReport,
        policy: &ExposurePolicy,
    ) -> Vec<ExposureEvent> {
        let ids = report.derive_id_set();
        self.check_against(&ids, policy)
    }

    /// Matches against a pre-expanded identifier set, e.g. the union of every
    /// report published in a round.
    pub fn check_against(
        &self,
        ids: &HashSet<EphemeralId>,
        policy: &ExposurePolicy,
    ) -> Vec<ExposureEvent> {
        if ids.is_empty() {
            return Vec::new();
        }
        let mut per_day: BTreeMap<u64, (u32, Vec<u32>)> = BTreeMap::new();
        for rec in &self.records {
            if rec.attenuation <= policy.attenuation_cutoff && ids.contains(&rec.observed) {
                let entry = per_day.entry(rec.day as u64).or_default();
                entry.0 += rec.duration_min as u32;
                entry.1.push(rec.epoch as u32);
            }
        }
        per_day
            .into_iter()
            .filter(|(_, (minutes, _))| *minutes >= policy.min_minutes)
            .map(|(day, (cumulative_min, mut matched_epochs))| {
                matched_epochs.sort_unstable();
                matched_epochs.dedup();
                ExposureEvent {
                    day,
                    cumulative_min,
                    matched_epochs,
                }
            })
            .collect()
    }

    /// Digests of every observed identifier on days in `[from_day, to_day]`,
    /// deduplicated and sorted.
    pub fn digests_in_window(&self, from_day: u64, to_day: u64) -> Vec<ContactDigest> {
        let mut out: Vec<ContactDigest> = self
            .records
            .iter()
            .filter(|r| (from_day..=to_day).contains(&(r.day as u64)))
            .map(|r| r.observed.digest())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Writes `day,epoch,duration_min,attenuation,hex(observed)` lines.
    pub fn export<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.day, r.epoch, r.duration_min, r.attenuation, r.observed
            )?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(input: R) -> Result<Self, ContactError> {
        let mut store = ContactStore::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| ContactError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            store.record_encounter(parse_record(&line).map_err(|reason| ContactError::Parse {
                line: lineno,
                reason,
            })?);
        }
        Ok(store)
    }
}

fn parse_record(line: &str) -> Result<EncounterRecord, String> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    let [day, epoch, duration, attenuation, id] = fields[..] else {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    };
    let num = |s: &str, name: &str| -> Result<u64, String> {
        s.parse::<u64>().map_err(|e| format!("{name}: {e}"))
    };
    let mut bytes = [0u8; EPHID_LEN];
    hex::decode_to_slice(id, &mut bytes).map_err(|e| format!("observed: {e}"))?;
    let to_u32 = |v: u64| u32::try_from(v).unwrap_or(u32::MAX);
    EncounterRecord::new(
        EphemeralId(bytes),
        num(day, "day")?,
        to_u32(num(epoch, "epoch")?),
        to_u32(num(duration, "duration_min")?),
        to_u32(num(attenuation, "attenuation")?),
    )
    .map_err(|e| e.to_string())
}
