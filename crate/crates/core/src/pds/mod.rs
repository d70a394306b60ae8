//! The citizen's personal data store.
//!
//! Raw location points go in and never come back out: every read goes
//! through [`coarsen`] at a granularity the owner picks. Sharing builds a
//! [`SharePayload`] under a fresh random pseudonym and appends a
//! [`ConsentRecord`] to the local ledger.

mod granularity;
mod snapshot;

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact_store::ContactStore;
use crate::crypto_ids::ContactDigest;
use crate::secure_agg::{CellIndexSpace, ContributionVector, SecAggError};

pub use granularity::{
    coarsen, CellId, CoarsenedVisit, Granularity, GridSize, LocationPoint, RegionMap, RegionMaps,
    Spatial, TemporalBin, MAX_SAMPLE_GAP_SECS,
};
pub use snapshot::SNAPSHOT_HEADER;

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const PSEUDONYM_LEN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum PdsError {
    #[error("location collection has been stopped")]
    TrackingStopped,
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("{0} granularity requested without a lookup map")]
    MissingMap(Spatial),
    #[error("requested granularity is finer than the minimum allowed for {0:?}")]
    GranularityTooFine(Purpose),
    #[error("{0:?} needs a location granularity")]
    MissingGranularity(Purpose),
    #[error("no consent given for {0:?}")]
    ConsentMissing(Purpose),
    #[error("{0:?} is not shared through a payload")]
    UnsupportedPurpose(Purpose),
    #[error(transparent)]
    Aggregation(#[from] SecAggError),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    ContactUpload,
    LocationUpload,
    AggregateParticipation,
}

/// The least detail a purpose may be served with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimumGranularity {
    /// No location may be attached at all.
    NoLocation,
    AtLeast(Granularity),
}

pub fn minimum_granularity(purpose: Purpose) -> MinimumGranularity {
    match purpose {
        Purpose::ContactUpload => MinimumGranularity::NoLocation,
        Purpose::LocationUpload => MinimumGranularity::AtLeast(Granularity::new(
            Spatial::Grid(GridSize::Medium),
            TemporalBin::Hour,
        )),
        Purpose::AggregateParticipation => MinimumGranularity::AtLeast(Granularity::new(
            Spatial::Grid(GridSize::Coarse),
            TemporalBin::Day,
        )),
    }
}

fn check_granularity(purpose: Purpose, g: Option<Granularity>) -> Result<(), PdsError> {
    match (minimum_granularity(purpose), g) {
        (MinimumGranularity::NoLocation, None) => Ok(()),
        (MinimumGranularity::NoLocation, Some(_)) => Err(PdsError::GranularityTooFine(purpose)),
        (MinimumGranularity::AtLeast(_), None) => Err(PdsError::MissingGranularity(purpose)),
        (MinimumGranularity::AtLeast(min), Some(g)) if g.is_finer_than(&min) => {
            Err(PdsError::GranularityTooFine(purpose))
        }
        (MinimumGranularity::AtLeast(_), Some(_)) => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub purpose: Purpose,
    pub granularity: Option<Granularity>,
    pub issued_at: i64,
    pub revoked_at: Option<i64>,
}

impl ConsentRecord {
    pub fn is_active(&self) -> bool {
        self.revoked_at.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pseudonym(pub [u8; PSEUDONYM_LEN]);

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadBody {
    Visits(Vec<CoarsenedVisit>),
    ContactDigests(Vec<ContactDigest>),
}

impl PayloadBody {
    pub fn len(&self) -> usize {
        match self {
            PayloadBody::Visits(v) => v.len(),
            PayloadBody::ContactDigests(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharePayload {
    pub purpose: Purpose,
    pub pseudonym: Pseudonym,
    pub body: PayloadBody,
}

/// Inclusive range of day indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayRange {
    pub first: i64,
    pub last: i64,
}

impl DayRange {
    pub fn new(first: i64, last: i64) -> Self {
        Self { first, last }
    }

    /// An empty range.
    pub fn none() -> Self {
        Self { first: 1, last: 0 }
    }

    fn seconds(&self) -> RangeInclusive<i64> {
        self.first * SECONDS_PER_DAY..=(self.last + 1) * SECONDS_PER_DAY - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EraseScope {
    CollectionOnly,
    Everything,
}

#[derive(Debug, Clone, Default)]
pub struct PersonalDataStore {
    locations: Vec<LocationPoint>,
    contacts: ContactStore,
    consents: BTreeSet<Purpose>,
    ledger: Vec<ConsentRecord>,
    stopped: bool,
    maps: RegionMaps,
}

impl PersonalDataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_maps(maps: RegionMaps) -> Self {
        Self {
            maps,
            ..Self::default()
        }
    }

    /// Stores a point, keeping the history sorted by time.
    pub fn append_location(&mut self, p: LocationPoint) -> Result<(), PdsError> {
        if self.stopped {
            return Err(PdsError::TrackingStopped);
        }
        match self.locations.last() {
            Some(last) if p.t() < last.t() => {
                let at = self.locations.partition_point(|q| q.t() <= p.t());
                self.locations.insert(at, p);
            }
            _ => self.locations.push(p),
        }
        Ok(())
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn is_collecting(&self) -> bool {
        !self.stopped
    }

    /// Drops location points older than day `first_kept_day`.
    pub fn forget_before(&mut self, first_kept_day: i64) {
        let cutoff = first_kept_day * SECONDS_PER_DAY;
        let keep_from = self.locations.partition_point(|p| p.t() < cutoff);
        self.locations.drain(..keep_from);
    }

    pub fn contacts(&self) -> &ContactStore {
        &self.contacts
    }

    pub fn contacts_mut(&mut self) -> &mut ContactStore {
        &mut self.contacts
    }

    pub fn set_consent(&mut self, purpose: Purpose, granted: bool) {
        if granted {
            self.consents.insert(purpose);
        } else {
            self.consents.remove(&purpose);
        }
    }

    pub fn has_consent(&self, purpose: Purpose) -> bool {
        self.consents.contains(&purpose)
    }

    pub fn ledger(&self) -> &[ConsentRecord] {
        &self.ledger
    }

    /// The owner's own history at granularity `g`, for local analytics.
    pub fn history(&self, g: Granularity, window: DayRange) -> Result<Vec<CoarsenedVisit>, PdsError> {
        coarsen(self.window_points(window), g, &self.maps)
    }

    fn window_points(&self, window: DayRange) -> &[LocationPoint] {
        let secs = window.seconds();
        let lo = self.locations.partition_point(|p| p.t() < *secs.start());
        let hi = self.locations.partition_point(|p| p.t() <= *secs.end());
        &self.locations[lo..hi.max(lo)]
    }

    fn authorize(&self, purpose: Purpose, g: Option<Granularity>) -> Result<(), PdsError> {
        check_granularity(purpose, g)?;
        if !self.has_consent(purpose) {
            return Err(PdsError::ConsentMissing(purpose));
        }
        Ok(())
    }

    fn log_consent(&mut self, purpose: Purpose, g: Option<Granularity>, now: i64) -> ConsentRecord {
        let record = ConsentRecord {
            purpose,
            granularity: g,
            issued_at: now,
            revoked_at: None,
        };
        self.ledger.push(record.clone());
        record
    }

    /// Builds a direct-transfer payload for `purpose`.
    ///
    /// `LocationUpload` carries visits coarsened to `g` within `window`;
    /// `ContactUpload` carries digests of identifiers observed in `window` and
    /// takes no granularity.
    pub fn build_share_payload<R: Rng + ?Sized>(
        &mut self,
        purpose: Purpose,
        g: Option<Granularity>,
        window: DayRange,
        now: i64,
        rng: &mut R,
    ) -> Result<(SharePayload, ConsentRecord), PdsError> {
        self.authorize(purpose, g)?;
        let body = match purpose {
            Purpose::LocationUpload => {
                let g = g.expect("checked by authorize");
                PayloadBody::Visits(coarsen(self.window_points(window), g, &self.maps)?)
            }
            Purpose::ContactUpload => {
                if window.first > window.last || window.last < 0 {
                    PayloadBody::ContactDigests(Vec::new())
                } else {
                    PayloadBody::ContactDigests(
                        self.contacts
                            .digests_in_window(window.first.max(0) as u64, window.last as u64),
                    )
                }
            }
            Purpose::AggregateParticipation => return Err(PdsError::UnsupportedPurpose(purpose)),
        };
        let mut pseudonym = [0u8; PSEUDONYM_LEN];
        rng.fill_bytes(&mut pseudonym);
        let consent = self.log_consent(purpose, g, now);
        Ok((
            SharePayload {
                purpose,
                pseudonym: Pseudonym(pseudonym),
                body,
            },
            consent,
        ))
    }

    /// Builds this citizen's count vector for a secure aggregation round.
    ///
    /// Visits at granularity `g` are counted into `space`; visits outside the
    /// space are not counted.
    pub fn build_contribution(
        &mut self,
        space: &CellIndexSpace,
        g: Granularity,
        window: DayRange,
        now: i64,
    ) -> Result<(ContributionVector, ConsentRecord), PdsError> {
        let purpose = Purpose::AggregateParticipation;
        self.authorize(purpose, Some(g))?;
        self.contribution_unchecked(space, g, window, now)
    }

    fn contribution_unchecked(
        &mut self,
        space: &CellIndexSpace,
        g: Granularity,
        window: DayRange,
        now: i64,
    ) -> Result<(ContributionVector, ConsentRecord), PdsError> {
        let visits = coarsen(self.window_points(window), g, &self.maps)?;
        let mut counts = vec![0u32; space.dimension()];
        for v in &visits {
            if let Some(idx) = space.index_of(&v.cell, v.bin_start) {
                counts[idx] = counts[idx].saturating_add(1);
            }
        }
        let vector = ContributionVector::new(space, counts)?;
        let consent = self.log_consent(Purpose::AggregateParticipation, Some(g), now);
        Ok((vector, consent))
    }

    /// Stops collection, and with [`EraseScope::Everything`] also wipes the
    /// location history and contact log and revokes every active consent.
    pub fn stop_tracking_and_erase(&mut self, scope: EraseScope, now: i64) {
        self.stopped = true;
        if scope == EraseScope::Everything {
            self.locations.clear();
            self.contacts.clear();
            self.consents.clear();
            for record in self.ledger.iter_mut().filter(|r| r.is_active()) {
                record.revoked_at = Some(now.max(record.issued_at));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact_store::EncounterRecord;
    use crate::crypto_ids::EphemeralId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const LOC_MIN: Granularity = Granularity::new(Spatial::Grid(GridSize::Medium), TemporalBin::Hour);

    fn pt(lat: f64, lon: f64, t: i64) -> LocationPoint {
        LocationPoint::new(lat, lon, t).unwrap()
    }

    fn consenting_store() -> PersonalDataStore {
        let mut pds = PersonalDataStore::new();
        for purpose in [
            Purpose::ContactUpload,
            Purpose::LocationUpload,
            Purpose::AggregateParticipation,
        ] {
            pds.set_consent(purpose, true);
        }
        pds
    }

    #[test]
    fn append_sorts_and_respects_stop() {
        let mut pds = PersonalDataStore::new();
        pds.append_location(pt(1.0, 1.0, 100)).unwrap();
        assert_eq!(pds.location_count(), 1);
        pds.append_location(pt(1.0, 1.0, 50)).unwrap();
        pds.append_location(pt(1.0, 1.0, 75)).unwrap();
        let times: Vec<i64> = pds.locations.iter().map(LocationPoint::t).collect();
        assert_eq!(times, vec![50, 75, 100]);

        pds.stop_tracking_and_erase(EraseScope::CollectionOnly, 200);
        assert_eq!(pds.append_location(pt(1.0, 1.0, 300)), Err(PdsError::TrackingStopped));
        assert_eq!(pds.location_count(), 3);
    }

    #[test]
    fn policy_table() {
        assert_eq!(
            minimum_granularity(Purpose::ContactUpload),
            MinimumGranularity::NoLocation
        );
        assert_eq!(
            minimum_granularity(Purpose::LocationUpload),
            MinimumGranularity::AtLeast(LOC_MIN)
        );
        assert_eq!(
            minimum_granularity(Purpose::AggregateParticipation),
            MinimumGranularity::AtLeast(Granularity::new(
                Spatial::Grid(GridSize::Coarse),
                TemporalBin::Day
            ))
        );
    }

    #[test]
    fn payload_policy_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pds = consenting_store();
        let exact = Granularity::new(Spatial::ExactPoint, TemporalBin::Hour);
        let err = pds
            .build_share_payload(Purpose::LocationUpload, Some(exact), DayRange::new(0, 1), 0, &mut rng)
            .unwrap_err();
        assert_eq!(err, PdsError::GranularityTooFine(Purpose::LocationUpload));
        let err = pds
            .build_share_payload(Purpose::ContactUpload, Some(LOC_MIN), DayRange::new(0, 1), 0, &mut rng)
            .unwrap_err();
        assert_eq!(err, PdsError::GranularityTooFine(Purpose::ContactUpload));

        pds.set_consent(Purpose::LocationUpload, false);
        let err = pds
            .build_share_payload(Purpose::LocationUpload, Some(LOC_MIN), DayRange::new(0, 1), 0, &mut rng)
            .unwrap_err();
        assert_eq!(err, PdsError::ConsentMissing(Purpose::LocationUpload));
        assert!(pds.ledger().is_empty());
    }

    #[test]
    fn empty_window_payload_is_still_consented() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pds = consenting_store();
        pds.append_location(pt(43.72, 10.40, 5 * SECONDS_PER_DAY)).unwrap();
        let (payload, consent) = pds
            .build_share_payload(Purpose::LocationUpload, Some(LOC_MIN), DayRange::new(0, 2), 9, &mut rng)
            .unwrap();
        assert!(payload.body.is_empty());
        assert_eq!(consent.issued_at, 9);
        assert_eq!(pds.ledger(), &[consent]);
    }

    #[test]
    fn location_payload_restricted_to_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pds = consenting_store();
        for day in 0..4 {
            pds.append_location(pt(43.72, 10.40, day * SECONDS_PER_DAY + 3600)).unwrap();
        }
        let (payload, _) = pds
            .build_share_payload(Purpose::LocationUpload, Some(LOC_MIN), DayRange::new(1, 2), 0, &mut rng)
            .unwrap();
        let PayloadBody::Visits(visits) = payload.body else {
            panic!("expected visits")
        };
        let bins: Vec<i64> = visits.iter().map(|v| v.bin_start).collect();
        assert_eq!(bins, vec![SECONDS_PER_DAY + 3600, 2 * SECONDS_PER_DAY + 3600]);
    }

    #[test]
    fn contact_payload_carries_digests() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pds = consenting_store();
        let seen = EphemeralId([5; 16]);
        pds.contacts_mut()
            .record_encounter(EncounterRecord::new(seen, 2, 0, 15, 30).unwrap());
        pds.contacts_mut()
            .record_encounter(EncounterRecord::new(seen, 2, 1, 15, 30).unwrap());
        let (payload, _) = pds
            .build_share_payload(Purpose::ContactUpload, None, DayRange::new(0, 5), 0, &mut rng)
            .unwrap();
        assert_eq!(payload.body, PayloadBody::ContactDigests(vec![seen.digest()]));
    }

    #[test]
    fn pseudonyms_are_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pds = consenting_store();
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let (payload, _) = pds
                .build_share_payload(Purpose::LocationUpload, Some(LOC_MIN), DayRange::none(), 0, &mut rng)
                .unwrap();
            assert!(seen.insert(payload.pseudonym));
        }
        assert_eq!(pds.ledger().len(), 1000);
    }

    #[test]
    fn erase_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pds = consenting_store();
        pds.append_location(pt(1.0, 1.0, 10)).unwrap();
        pds.contacts_mut()
            .record_encounter(EncounterRecord::new(EphemeralId([1; 16]), 0, 0, 15, 30).unwrap());
        pds.build_share_payload(Purpose::LocationUpload, Some(LOC_MIN), DayRange::new(0, 0), 5, &mut rng)
            .unwrap();
        pds.build_share_payload(Purpose::ContactUpload, None, DayRange::new(0, 0), 6, &mut rng)
            .unwrap();
        pds.stop_tracking_and_erase(EraseScope::Everything, 100);
        assert_eq!(pds.location_count(), 0);
        assert!(pds.contacts().is_empty());
        assert!(pds.ledger().iter().all(|r| r.revoked_at == Some(100)));
        assert_eq!(
            pds.build_share_payload(Purpose::ContactUpload, None, DayRange::new(0, 0), 7, &mut rng),
            Err(PdsError::ConsentMissing(Purpose::ContactUpload))
        );
    }

    #[test]
    fn aggregate_participation_policy() {
        let mut pds = consenting_store();
        pds.append_location(pt(43.72, 10.40, 3600)).unwrap();
        pds.append_location(pt(43.72, 10.40, 3600 + 900)).unwrap();
        let coarse = Granularity::new(Spatial::Grid(GridSize::Coarse), TemporalBin::Day);
        let space = CellIndexSpace::new(vec![CellId::Grid(437, 104)], vec![0], SECONDS_PER_DAY).unwrap();
        let (v, _) = pds
            .build_contribution(&space, coarse, DayRange::new(0, 0), 0)
            .unwrap();
        assert_eq!(v.counts(), &[1]);
        assert_eq!(
            pds.build_contribution(&space, LOC_MIN, DayRange::new(0, 0), 0).unwrap_err(),
            PdsError::GranularityTooFine(Purpose::AggregateParticipation)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            pds.build_share_payload(Purpose::AggregateParticipation, Some(coarse), DayRange::new(0, 0), 0, &mut rng)
                .unwrap_err(),
            PdsError::UnsupportedPurpose(Purpose::AggregateParticipation)
        );
    }

    #[test]
    fn forget_before_drops_old_points() {
        let mut pds = PersonalDataStore::new();
        for day in 0..5 {
            pds.append_location(pt(0.0, 0.0, day * SECONDS_PER_DAY)).unwrap();
        }
        pds.forget_before(3);
        assert_eq!(pds.location_count(), 2);
    }
}
