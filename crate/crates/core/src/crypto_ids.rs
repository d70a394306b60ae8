//! Seed chains and ephemeral identifiers.
//!
//! A device holds one [`DailySeed`] per day. Each seed is the SHA-256 of the
//! previous day's seed, so publishing the seeds of an infectious window lets
//! anyone re-derive the identifiers broadcast during that window, while older
//! seeds stay hidden. Each day is split into [`EPOCHS_PER_DAY`] epochs of 15
//! minutes, and the device broadcasts a different [`EphemeralId`] per epoch.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_concat;

pub const EPOCHS_PER_DAY: usize = 96;
pub const EPOCH_MINUTES: u32 = 15;
pub const SEED_LEN: usize = 32;
pub const EPHID_LEN: usize = 16;

const EPHID_DOMAIN: &[u8] = b"EPHID";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdError {
    #[error("exposure report needs at least one seed")]
    EmptyReport,
    #[error("seed days are not contiguous: day {found} follows day {previous}")]
    NonContiguousDays { previous: u64, found: u64 },
    #[error("registrant {registrant} already escrowed a seed for day {day}")]
    DuplicateRegistration { registrant: RegistrantToken, day: u64 },
    #[error("escrow is only available in centralized mode")]
    CentralizedModeDisabled,
    #[error("malformed exposure report encoding: {0}")]
    Malformed(&'static str),
}

/// One day's secret in a device's seed chain.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DailySeed {
    day: u64,
    secret: [u8; SEED_LEN],
}

impl fmt::Debug for DailySeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Never print secrets.
        f.debug_struct("DailySeed").field("day", &self.day).finish_non_exhaustive()
    }
}

impl DailySeed {
    pub fn new(day: u64, secret: [u8; SEED_LEN]) -> Self {
        Self { day, secret }
    }

    /// Draws a fresh random seed for `day`.
    pub fn random<R: rand::Rng + ?Sized>(day: u64, rng: &mut R) -> Self {
        let mut secret = [0u8; SEED_LEN];
        rng.fill_bytes(&mut secret);
        Self { day, secret }
    }

    pub fn day(&self) -> u64 {
        self.day
    }

    pub fn secret(&self) -> &[u8; SEED_LEN] {
        &self.secret
    }

    /// The seed for the following day: `SHA-256(secret)`.
    pub fn next(&self) -> DailySeed {
        derive_next_seed(self)
    }

    /// Identifier broadcast during `epoch` of this seed's day.
    pub fn ephemeral_id(&self, epoch: usize) -> EphemeralId {
        debug_assert!(epoch < EPOCHS_PER_DAY);
        let digest = sha256_concat(&[&self.secret, EPHID_DOMAIN, &(epoch as u32).to_be_bytes()]);
        let mut bytes = [0u8; EPHID_LEN];
        bytes.copy_from_slice(&digest[..EPHID_LEN]);
        EphemeralId(bytes)
    }
}

pub fn derive_next_seed(seed: &DailySeed) -> DailySeed {
    DailySeed {
        day: seed.day + 1,
        secret: sha256_concat(&[&seed.secret]),
    }
}

/// A 16-byte anonymous broadcast identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EphemeralId(pub [u8; EPHID_LEN]);

impl EphemeralId {
    pub fn as_bytes(&self) -> &[u8; EPHID_LEN] {
        &self.0
    }

    /// SHA-256 of the identifier, as uploaded in centralized mode.
    pub fn digest(&self) -> ContactDigest {
        ContactDigest(sha256_concat(&[&self.0]))
    }
}

impl fmt::Debug for EphemeralId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EphemeralId({})", hex::encode(self.0))
    }
}

impl fmt::Display for EphemeralId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// SHA-256 digest of an observed [`EphemeralId`]. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContactDigest(pub [u8; 32]);

impl fmt::Debug for ContactDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContactDigest({})", hex::encode(self.0))
    }
}

impl fmt::Display for ContactDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl std::str::FromStr for ContactDigest {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ContactDigest(out))
    }
}

impl Serialize for ContactDigest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for ContactDigest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The identifiers of one day, in epoch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdSchedule {
    day: u64,
    ids: Vec<EphemeralId>,
}

impl IdSchedule {
    pub fn day(&self) -> u64 {
        self.day
    }

    pub fn ids(&self) -> &[EphemeralId] {
        &self.ids
    }

    pub fn get(&self, epoch: usize) -> Option<EphemeralId> {
        self.ids.get(epoch).copied()
    }
}

/// `ids[j] = SHA-256(secret || "EPHID" || j_be32)[..16]` for every epoch `j`.
pub fn expand_epoch_ids(seed: &DailySeed) -> IdSchedule {
    IdSchedule {
        day: seed.day,
        ids: (0..EPOCHS_PER_DAY).map(|epoch| seed.ephemeral_id(epoch)).collect(),
    }
}

/// Seeds of a contiguous day range, published for a positive user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureReport {
    first_day: u64,
    secrets: Vec<[u8; SEED_LEN]>,
}

impl ExposureReport {
    pub fn from_seeds(seeds: &[DailySeed]) -> Result<Self, IdError> {
        report_from_seeds(seeds)
    }

    pub fn first_day(&self) -> u64 {
        self.first_day
    }

    pub fn last_day(&self) -> u64 {
        self.first_day + self.secrets.len() as u64 - 1
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    pub fn seeds(&self) -> impl Iterator<Item = DailySeed> + '_ {
        self.secrets
            .iter()
            .enumerate()
            .map(|(offset, secret)| DailySeed::new(self.first_day + offset as u64, *secret))
    }

    /// Re-derives every identifier the reporting device broadcast in the window.
    pub fn derive_ids(&self) -> Vec<EphemeralId> {
        self.seeds()
            .flat_map(|seed| expand_epoch_ids(&seed).ids)
            .collect()
    }

    pub fn derive_id_set(&self) -> HashSet<EphemeralId> {
        self.derive_ids().into_iter().collect()
    }

    /// `first_day` (u64 BE) || `count` (u32 BE) || secrets.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + SEED_LEN * self.secrets.len());
        out.extend_from_slice(&self.first_day.to_be_bytes());
        out.extend_from_slice(&(self.secrets.len() as u32).to_be_bytes());
        for secret in &self.secrets {
            out.extend_from_slice(secret);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdError> {
        if bytes.len() < 12 {
            return Err(IdError::Malformed("truncated header"));
        }
        let first_day = u64::from_be_bytes(bytes[..8].try_into().unwrap());
        let count = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if count == 0 {
            return Err(IdError::EmptyReport);
        }
        if body.len() != count * SEED_LEN {
            return Err(IdError::Malformed("body length does not match seed count"));
        }
        let secrets = body
            .chunks_exact(SEED_LEN)
            .map(|chunk| chunk.try_into().unwrap())
            .collect();
        Ok(Self { first_day, secrets })
    }
}

pub fn report_from_seeds(seeds: &[DailySeed]) -> Result<ExposureReport, IdError> {
    let first = seeds.first().ok_or(IdError::EmptyReport)?;
    for pair in seeds.windows(2) {
        if pair[1].day != pair[0].day + 1 {
            return Err(IdError::NonContiguousDays {
                previous: pair[0].day,
                found: pair[1].day,
            });
        }
    }
    Ok(ExposureReport {
        first_day: first.day,
        secrets: seeds.iter().map(|s| s.secret).collect(),
    })
}

/// A device's seed chain, holding the seeds of the last `retain` days.
///
/// Only forward derivation is possible; dropped seeds cannot be recovered.
#[derive(Debug, Clone)]
pub struct SeedChain {
    seeds: Vec<DailySeed>,
    retain: usize,
}

impl SeedChain {
    pub fn new(initial: DailySeed, retain: usize) -> Self {
        Self {
            seeds: vec![initial],
            retain: retain.max(1),
        }
    }

    pub fn current(&self) -> &DailySeed {
        self.seeds.last().expect("chain is never empty")
    }

    pub fn advance(&mut self) -> &DailySeed {
        let next = self.current().next();
        self.seeds.push(next);
        if self.seeds.len() > self.retain {
            let excess = self.seeds.len() - self.retain;
            self.seeds.drain(..excess);
        }
        self.current()
    }

    /// Seeds currently retained, oldest first.
    pub fn retained(&self) -> &[DailySeed] {
        &self.seeds
    }

    pub fn report(&self) -> ExposureReport {
        report_from_seeds(&self.seeds).expect("chain days are contiguous")
    }
}

/// Opaque handle the authority uses to reach a registered phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegistrantToken(pub u64);

impl fmt::Display for RegistrantToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EscrowEntry {
    pub registrant: RegistrantToken,
    pub day: u64,
}

/// Authority-side table resolving escrowed identifiers back to registrants.
///
/// Holds no location data. Mutation requires `&mut self`; wrap in a lock to
/// share across threads.
#[derive(Debug, Default, Clone)]
pub struct SeedEscrow {
    by_id: HashMap<EphemeralId, RegistrantToken>,
    by_digest: HashMap<ContactDigest, RegistrantToken>,
    registered: HashSet<(RegistrantToken, u64)>,
}

impl SeedEscrow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        seed: &DailySeed,
        registrant: RegistrantToken,
    ) -> Result<EscrowEntry, IdError> {
        if !self.registered.insert((registrant, seed.day)) {
            return Err(IdError::DuplicateRegistration {
                registrant,
                day: seed.day,
            });
        }
        for id in expand_epoch_ids(seed).ids {
            self.by_id.insert(id, registrant);
            self.by_digest.insert(id.digest(), registrant);
        }
        Ok(EscrowEntry {
            registrant,
            day: seed.day,
        })
    }

    pub fn resolve(&self, id: &EphemeralId) -> Option<RegistrantToken> {
        self.by_id.get(id).copied()
    }

    pub fn resolve_digest(&self, digest: &ContactDigest) -> Option<RegistrantToken> {
        self.by_digest.get(digest).copied()
    }

    /// Registrants owning any of `digests`, each at most once.
    pub fn resolve_all<'a>(
        &self,
        digests: impl IntoIterator<Item = &'a ContactDigest>,
    ) -> BTreeSet<RegistrantToken> {
        digests
            .into_iter()
            .filter_map(|d| self.resolve_digest(d))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.registered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registered.is_empty()
    }
}

pub fn escrow_register(
    escrow: &mut SeedEscrow,
    seed: &DailySeed,
    registrant: RegistrantToken,
) -> Result<EscrowEntry, IdError> {
    escrow.register(seed, registrant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Pinned with Python's hashlib.
    const SHA256_ZERO32: &str = "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925";
    const EPHID_ZERO_E0: &str = "f7cd6badac08d13384a129510cd51830";
    const EPHID_ZERO_E95: &str = "5f39ee09cece4158104916ce424e3e43";
    const EPHID_DAY1_E0: &str = "99d9f748a27fe93d24ae6b6fd608be8b";

    fn zero_seed(day: u64) -> DailySeed {
        DailySeed::new(day, [0u8; 32])
    }

    #[test]
    fn next_seed_matches_reference_vector() {
        let next = derive_next_seed(&zero_seed(0));
        assert_eq!(hex::encode(next.secret()), SHA256_ZERO32);
        assert_eq!(next.day(), 1);
    }

    #[test]
    fn next_seed_is_deterministic_and_leaves_input() {
        let seed = zero_seed(41);
        let a = derive_next_seed(&seed);
        let b = derive_next_seed(&seed);
        assert_eq!(a, b);
        assert_eq!(seed, zero_seed(41));
        assert_eq!(a.day(), 42);
    }

    #[test]
    fn epoch_ids_match_reference_vectors() {
        let schedule = expand_epoch_ids(&zero_seed(0));
        assert_eq!(schedule.ids().len(), EPOCHS_PER_DAY);
        assert_eq!(schedule.ids()[0].to_string(), EPHID_ZERO_E0);
        assert_eq!(schedule.ids()[95].to_string(), EPHID_ZERO_E95);
        let day1 = expand_epoch_ids(&zero_seed(0).next());
        assert_eq!(day1.ids()[0].to_string(), EPHID_DAY1_E0);
    }

    #[test]
    fn epoch_ids_pairwise_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let seed = DailySeed::random(0, &mut rng);
            let ids: HashSet<_> = expand_epoch_ids(&seed).ids().iter().copied().collect();
            assert_eq!(ids.len(), EPOCHS_PER_DAY);
        }
    }

    #[test]
    fn report_requires_contiguous_days() {
        let s3 = zero_seed(3);
        let s5 = zero_seed(5);
        assert_eq!(
            report_from_seeds(&[s3, s5]),
            Err(IdError::NonContiguousDays { previous: 3, found: 5 })
        );
        assert_eq!(report_from_seeds(&[]), Err(IdError::EmptyReport));
    }

    #[test]
    fn report_spans_window() {
        let mut chain = SeedChain::new(zero_seed(10), 14);
        for _ in 0..20 {
            chain.advance();
        }
        let report = chain.report();
        assert_eq!(report.len(), 14);
        assert_eq!(report.first_day(), 17);
        assert_eq!(report.last_day(), 30);
        assert_eq!(report.derive_id_set().len(), 14 * EPOCHS_PER_DAY);

        let single = report_from_seeds(&[zero_seed(2)]).unwrap();
        assert_eq!(single.derive_ids().len(), EPOCHS_PER_DAY);
    }

    #[test]
    fn report_wire_format_is_bit_exact() {
        let seed = zero_seed(7);
        let report = report_from_seeds(&[seed.clone(), seed.next()]).unwrap();
        let expected = format!("0000000000000007{:08x}{}{}", 2, "00".repeat(32), SHA256_ZERO32);
        assert_eq!(hex::encode(report.to_bytes()), expected);
        assert_eq!(ExposureReport::from_bytes(&report.to_bytes()).unwrap(), report);
        assert!(ExposureReport::from_bytes(&report.to_bytes()[..40]).is_err());
    }

    #[test]
    fn escrow_resolves_registered_ids_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut escrow = SeedEscrow::new();
        let a = DailySeed::random(4, &mut rng);
        let b = DailySeed::random(4, &mut rng);
        let stranger = DailySeed::random(4, &mut rng);
        escrow.register(&a, RegistrantToken(1)).unwrap();
        escrow.register(&b, RegistrantToken(2)).unwrap();

        for id in expand_epoch_ids(&a).ids() {
            assert_eq!(escrow.resolve(id), Some(RegistrantToken(1)));
        }
        for id in expand_epoch_ids(&b).ids() {
            assert_eq!(escrow.resolve(id), Some(RegistrantToken(2)));
            assert_eq!(escrow.resolve_digest(&id.digest()), Some(RegistrantToken(2)));
        }
        for id in expand_epoch_ids(&stranger).ids() {
            assert_eq!(escrow.resolve(id), None);
        }
        assert_eq!(
            escrow.register(&a, RegistrantToken(1)),
            Err(IdError::DuplicateRegistration { registrant: RegistrantToken(1), day: 4 })
        );
    }

    #[test]
    fn digest_matches_reference_vector() {
        let id = zero_seed(0).ephemeral_id(0);
        assert_eq!(
            id.digest().to_string(),
            "b287744686ac1ab2caf282e76ec2f38d454d7fe848e7ee9eacb7e6c0ba75c2b2"
        );
        let parsed: ContactDigest = id.digest().to_string().parse().unwrap();
        assert_eq!(parsed, id.digest());
    }

    #[test]
    fn chain_drops_old_seeds() {
        let mut chain = SeedChain::new(zero_seed(0), 3);
        for _ in 0..5 {
            chain.advance();
        }
        let days: Vec<u64> = chain.retained().iter().map(DailySeed::day).collect();
        assert_eq!(days, vec![3, 4, 5]);
    }
}
