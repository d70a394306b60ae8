//! Health-authority backend.
//!
//! Two channels reach the authority and are kept apart:
//!
//! * the contact channel: published [`ExposureReport`]s on an append-only
//!   [`ExposureBoard`], and in centralized mode a [`SeedEscrow`] that resolves
//!   uploaded contact digests to registrants;
//! * the location channel: coarsened visits (direct uploads) and secure
//!   aggregates, accumulated in a [`LocationStore`] with no identifiers.
//!
//! Density maps, hotspots and risk maps are derived from the location channel
//! only.

mod density;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::contact_store::RETENTION_DAYS;
use crate::crypto_ids::{
    ContactDigest, DailySeed, EscrowEntry, ExposureReport, IdError, RegistrantToken, SeedEscrow,
};
use crate::pds::{CellId, PayloadBody, Pseudonym, Purpose, SharePayload};
use crate::secure_agg::CellIndexSpace;

pub use density::{
    build_density_map, detect_hotspots, hotspots_json, publish_risk_map, DensityMap, Hotspot, HotspotPolicy,
    Ratio, RiskMap, K_ANON, RATIO_MIN,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthorityError {
    #[error("payload purpose {0:?} is not a location upload")]
    WrongPurpose(Purpose),
    #[error("aggregate has {found} entries, space has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Id(#[from] IdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TracingMode {
    /// Reports are broadcast; phones match locally.
    #[default]
    Decentralized,
    /// Seeds are escrowed; the authority resolves uploaded contacts.
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardEntry {
    /// Position in publication order, starting at 0.
    pub seq: usize,
    pub published_day: u64,
    pub report: ExposureReport,
}

/// Public, append-only list of exposure reports within a retention horizon.
#[derive(Debug, Clone)]
pub struct ExposureBoard {
    entries: Vec<BoardEntry>,
    retention_days: u64,
    // Count of entries ever published; lets readers fetch only what is new.
    published: usize,
}

impl Default for ExposureBoard {
    fn default() -> Self {
        Self::new(RETENTION_DAYS)
    }
}

impl ExposureBoard {
    pub fn new(retention_days: u64) -> Self {
        Self {
            entries: Vec::new(),
            retention_days,
            published: 0,
        }
    }

    pub fn publish_report(&mut self, report: ExposureReport, today: u64) {
        self.prune(today);
        self.entries.push(BoardEntry {
            seq: self.published,
            published_day: today,
            report,
        });
        self.published += 1;
    }

    /// Drops reports whose last covered day fell out of the horizon.
    pub fn prune(&mut self, today: u64) {
        let horizon = self.retention_days as i128;
        self.entries
            .retain(|e| e.report.last_day() as i128 > today as i128 - horizon);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BoardEntry] {
        &self.entries
    }

    pub fn total_published(&self) -> usize {
        self.published
    }

    /// Entries published after a reader last saw `seen` total publications.
    pub fn since(&self, seen: usize) -> &[BoardEntry] {
        let fresh = self.published.saturating_sub(seen).min(self.entries.len());
        &self.entries[self.entries.len() - fresh..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted { visits: usize },
    /// Same pseudonym already seen in this upload window.
    Duplicate,
}

/// Location-channel accumulator: counts keyed by (cell, bin start).
#[derive(Debug, Clone, Default)]
pub struct LocationStore {
    infected: BTreeMap<(CellId, i64), u64>,
    baseline: Option<BTreeMap<(CellId, i64), u64>>,
    window_pseudonyms: HashSet<Pseudonym>,
}

impl LocationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest_location_payload(
        &mut self,
        payload: &SharePayload,
    ) -> Result<IngestOutcome, AuthorityError> {
        let PayloadBody::Visits(visits) = &payload.body else {
            return Err(AuthorityError::WrongPurpose(payload.purpose));
        };
        if payload.purpose != Purpose::LocationUpload {
            return Err(AuthorityError::WrongPurpose(payload.purpose));
        }
        if !self.window_pseudonyms.insert(payload.pseudonym) {
            return Ok(IngestOutcome::Duplicate);
        }
        for v in visits {
            *self.infected.entry((v.cell, v.bin_start)).or_default() += 1;
        }
        Ok(IngestOutcome::Accepted {
            visits: visits.len(),
        })
    }

    /// Forgets the pseudonyms of the closing upload window.
    pub fn close_upload_window(&mut self) {
        self.window_pseudonyms.clear();
    }

    pub fn pending_pseudonyms(&self) -> usize {
        self.window_pseudonyms.len()
    }

    /// Adds a securely aggregated count vector over `space` to the infected counts.
    pub fn ingest_aggregate(
        &mut self,
        space: &CellIndexSpace,
        sums: &[u32],
    ) -> Result<(), AuthorityError> {
        accumulate(&mut self.infected, space, sums)
    }

    /// Adds a population-wide aggregate used as the hotspot baseline.
    pub fn ingest_baseline(
        &mut self,
        space: &CellIndexSpace,
        sums: &[u32],
    ) -> Result<(), AuthorityError> {
        accumulate(self.baseline.get_or_insert_with(BTreeMap::new), space, sums)
    }

    pub fn infected_counts(&self) -> &BTreeMap<(CellId, i64), u64> {
        &self.infected
    }

    pub fn baseline_counts(&self) -> Option<&BTreeMap<(CellId, i64), u64>> {
        self.baseline.as_ref()
    }
}

fn accumulate(
    target: &mut BTreeMap<(CellId, i64), u64>,
    space: &CellIndexSpace,
    sums: &[u32],
) -> Result<(), AuthorityError> {
    if sums.len() != space.dimension() {
        return Err(AuthorityError::DimensionMismatch {
            expected: space.dimension(),
            found: sums.len(),
        });
    }
    for (i, &count) in sums.iter().enumerate().filter(|(_, &c)| c > 0) {
        *target.entry(space.coordinates(i)).or_default() += count as u64;
    }
    Ok(())
}

/// The authority, owning both channels.
#[derive(Debug, Clone, Default)]
pub struct Authority {
    mode: TracingMode,
    board: ExposureBoard,
    escrow: Option<SeedEscrow>,
    locations: LocationStore,
    notified: BTreeSet<RegistrantToken>,
}

impl Authority {
    pub fn new(mode: TracingMode) -> Self {
        Self {
            mode,
            escrow: (mode == TracingMode::Centralized).then(SeedEscrow::new),
            ..Self::default()
        }
    }

    pub fn mode(&self) -> TracingMode {
        self.mode
    }

    pub fn board(&self) -> &ExposureBoard {
        &self.board
    }

    pub fn locations(&self) -> &LocationStore {
        &self.locations
    }

    pub fn locations_mut(&mut self) -> &mut LocationStore {
        &mut self.locations
    }

    pub fn publish_report(&mut self, report: ExposureReport, today: u64) {
        self.board.publish_report(report, today);
    }

    pub fn escrow_register(
        &mut self,
        seed: &DailySeed,
        registrant: RegistrantToken,
    ) -> Result<EscrowEntry, AuthorityError> {
        let escrow = self
            .escrow
            .as_mut()
            .ok_or(IdError::CentralizedModeDisabled)?;
        Ok(escrow.register(seed, registrant)?)
    }

    /// Registrants owning any of the uploaded digests. Registrants already
    /// notified by an earlier call are not returned again.
    pub fn resolve_and_notify(
        &mut self,
        contact_digests: &[ContactDigest],
    ) -> Result<BTreeSet<RegistrantToken>, AuthorityError> {
        let escrow = self.escrow.as_ref().ok_or(IdError::CentralizedModeDisabled)?;
        let hits = escrow.resolve_all(contact_digests);
        let fresh: BTreeSet<_> = hits.difference(&self.notified).copied().collect();
        self.notified.extend(fresh.iter().copied());
        Ok(fresh)
    }

    /// Lets a registrant be notified again, e.g. after their quarantine ended.
    pub fn reset_notification(&mut self, registrant: RegistrantToken) {
        self.notified.remove(&registrant);
    }

    pub fn ingest_location_payload(
        &mut self,
        payload: &SharePayload,
    ) -> Result<IngestOutcome, AuthorityError> {
        self.locations.ingest_location_payload(payload)
    }

    pub fn build_density_map(&self, space: &CellIndexSpace) -> DensityMap {
        build_density_map(&self.locations, space, K_ANON)
    }
}
