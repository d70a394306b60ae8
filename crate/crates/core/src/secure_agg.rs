//! Secure aggregation of count vectors by pairwise additive masking.
//!
//! Every unordered pair of participants `(i, j)`, `i < j`, shares a secret
//! seed. Participant `i` adds the pair's mask and `j` subtracts it, all modulo
//! 2^32, so each share looks uniformly random on its own while the masks
//! cancel in the sum. The aggregator learns the total and nothing else.
//!
//! The round has no dropout recovery: any missing or malformed share aborts it.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use thiserror::Error;

use crate::hashing::sha256_concat;
use crate::par::prelude::*;
use crate::pds::CellId;

/// Exclusive upper bound on a single contribution entry.
pub const MAX_COUNT: u32 = 1 << 16;
/// Largest participant count for which sums are guaranteed exact.
pub const MAX_PARTICIPANTS: usize = 1 << 16;

const MASK_DOMAIN: &[u8] = b"MASK";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecAggError {
    #[error("duplicate cell {0} in index space")]
    DuplicateCell(CellId),
    #[error("bins must be strictly increasing and at least one bin width apart")]
    OverlappingBins,
    #[error("bin width must be positive")]
    InvalidBinWidth,
    #[error("vector has {found} entries, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry {index} = {value} exceeds the per-entry bound")]
    CountTooLarge { index: usize, value: u32 },
    #[error("participant {me} is missing the seed shared with {other}")]
    MissingSeed { me: usize, other: usize },
    #[error("participant index {index} out of range for {n} participants")]
    ParticipantOutOfRange { index: usize, n: usize },
    #[error("expected {expected} shares, received {found}")]
    WrongShareCount { expected: usize, found: usize },
    #[error("participant {0} submitted more than one share")]
    DuplicateParticipant(usize),
    #[error("participant count {0} outside 1..=65536")]
    InvalidParticipantCount(usize),
    #[error("malformed share encoding: {0}")]
    Malformed(&'static str),
}

/// Coordinate system of an aggregate: cells × time bins.
///
/// Bins are start times of width `bin_seconds`; a timestamp falls in bin `b`
/// when `b <= t < b + bin_seconds`. Vector index is `cell_idx * |bins| + bin_idx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellIndexSpace {
    cells: Vec<CellId>,
    bins: Vec<i64>,
    bin_seconds: i64,
    cell_index: HashMap<CellId, usize>,
}

impl CellIndexSpace {
    pub fn new(cells: Vec<CellId>, bins: Vec<i64>, bin_seconds: i64) -> Result<Self, SecAggError> {
        if bin_seconds <= 0 {
            return Err(SecAggError::InvalidBinWidth);
        }
        if bins.windows(2).any(|w| w[1] - w[0] < bin_seconds) {
            return Err(SecAggError::OverlappingBins);
        }
        let mut cell_index = HashMap::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            if cell_index.insert(*cell, i).is_some() {
                return Err(SecAggError::DuplicateCell(*cell));
            }
        }
        Ok(Self {
            cells,
            bins,
            bin_seconds,
            cell_index,
        })
    }

    /// Contiguous bins `start, start + width, ...` covering `count` bins.
    pub fn contiguous(
        cells: Vec<CellId>,
        start: i64,
        bin_seconds: i64,
        count: usize,
    ) -> Result<Self, SecAggError> {
        let bins = (0..count as i64).map(|k| start + k * bin_seconds).collect();
        Self::new(cells, bins, bin_seconds)
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn bins(&self) -> &[i64] {
        &self.bins
    }

    pub fn bin_seconds(&self) -> i64 {
        self.bin_seconds
    }

    pub fn dimension(&self) -> usize {
        self.cells.len() * self.bins.len()
    }

    pub fn bin_index(&self, t: i64) -> Option<usize> {
        let pos = self.bins.partition_point(|&b| b <= t);
        let idx = pos.checked_sub(1)?;
        (t < self.bins[idx] + self.bin_seconds).then_some(idx)
    }

    pub fn index_of(&self, cell: &CellId, t: i64) -> Option<usize> {
        let c = *self.cell_index.get(cell)?;
        let b = self.bin_index(t)?;
        Some(c * self.bins.len() + b)
    }

    pub fn coordinates(&self, index: usize) -> (CellId, i64) {
        let nb = self.bins.len();
        (self.cells[index / nb], self.bins[index % nb])
    }
}

/// One participant's plaintext counts over a [`CellIndexSpace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionVector {
    counts: Vec<u32>,
}

impl ContributionVector {
    pub fn new(space: &CellIndexSpace, counts: Vec<u32>) -> Result<Self, SecAggError> {
        Self::with_dimension(space.dimension(), counts)
    }

    pub fn with_dimension(dimension: usize, counts: Vec<u32>) -> Result<Self, SecAggError> {
        if counts.len() != dimension {
            return Err(SecAggError::DimensionMismatch {
                expected: dimension,
                found: counts.len(),
            });
        }
        if let Some((index, &value)) = counts.iter().enumerate().find(|(_, &c)| c >= MAX_COUNT) {
            return Err(SecAggError::CountTooLarge { index, value });
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn dimension(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PairwiseSeed {
    i: usize,
    j: usize,
    secret: [u8; 32],
}

impl std::fmt::Debug for PairwiseSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairwiseSeed")
            .field("i", &self.i)
            .field("j", &self.j)
            .finish_non_exhaustive()
    }
}

impl PairwiseSeed {
    /// Orders the pair so that `i < j`.
    pub fn new(a: usize, b: usize, secret: [u8; 32]) -> Self {
        assert_ne!(a, b, "a pairwise seed needs two distinct participants");
        Self {
            i: a.min(b),
            j: a.max(b),
            secret,
        }
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.i, self.j)
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }
}

/// `mask[k] = BE32(SHA-256(secret || "MASK" || BE32(k))[..4])`.
pub fn pairwise_mask(seed: &PairwiseSeed, dimension: usize) -> Vec<u32> {
    mask_from_secret(&seed.secret, dimension)
}

pub(crate) fn mask_from_secret(secret: &[u8; 32], dimension: usize) -> Vec<u32> {
    (0..dimension as u32)
        .map(|k| {
            let digest = sha256_concat(&[secret, MASK_DOMAIN, &k.to_be_bytes()]);
            u32::from_be_bytes(digest[..4].try_into().unwrap())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedShare {
    pub participant: usize,
    pub values: Vec<u32>,
}

impl MaskedShare {
    /// `participant` (BE32) || `D` (BE32) || `D` values (BE32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&(self.participant as u32).to_be_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_be_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SecAggError> {
        if bytes.len() < 8 {
            return Err(SecAggError::Malformed("truncated header"));
        }
        let participant = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        let d = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != d * 4 {
            return Err(SecAggError::Malformed("body length does not match dimension"));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { participant, values })
    }
}

/// Masks participant `me`'s vector with every pairwise seed it holds.
///
/// `share[k] = v[k] + Σ_{j > me} mask(me, j)[k] − Σ_{j < me} mask(j, me)[k]  (mod 2^32)`
pub fn mask_contribution(
    v: &ContributionVector,
    me: usize,
    seeds: &[PairwiseSeed],
    n: usize,
) -> Result<MaskedShare, SecAggError> {
    if me >= n {
        return Err(SecAggError::ParticipantOutOfRange { index: me, n });
    }
    let mut by_peer: HashMap<usize, &PairwiseSeed> = HashMap::with_capacity(n.saturating_sub(1));
    for seed in seeds {
        match seed.pair() {
            (i, j) if i == me => by_peer.insert(j, seed),
            (i, j) if j == me => by_peer.insert(i, seed),
            _ => None,
        };
    }
    let mut values = v.counts.clone();
    for other in (0..n).filter(|&o| o != me) {
        let seed = by_peer
            .get(&other)
            .ok_or(SecAggError::MissingSeed { me, other })?;
        let mask = pairwise_mask(seed, values.len());
        if me < other {
            for (value, m) in values.iter_mut().zip(mask) {
                *value = value.wrapping_add(m);
            }
        } else {
            for (value, m) in values.iter_mut().zip(mask) {
                *value = value.wrapping_sub(m);
            }
        }
    }
    Ok(MaskedShare {
        participant: me,
        values,
    })
}

/// Sums all `n` shares modulo 2^32, recovering the plaintext total.
///
/// Any deviation from exactly one share per participant, each of dimension
/// `dimension`, aborts before any partial sum is computed.
pub fn aggregate(shares: &[MaskedShare], n: usize, dimension: usize) -> Result<Vec<u32>, SecAggError> {
    if shares.len() != n {
        return Err(SecAggError::WrongShareCount {
            expected: n,
            found: shares.len(),
        });
    }
    let mut seen = HashSet::with_capacity(n);
    for share in shares {
        if share.participant >= n {
            return Err(SecAggError::ParticipantOutOfRange {
                index: share.participant,
                n,
            });
        }
        if !seen.insert(share.participant) {
            return Err(SecAggError::DuplicateParticipant(share.participant));
        }
        if share.values.len() != dimension {
            return Err(SecAggError::DimensionMismatch {
                expected: dimension,
                found: share.values.len(),
            });
        }
    }
    let mut sum = vec![0u32; dimension];
    for share in shares {
        for (acc, v) in sum.iter_mut().zip(&share.values) {
            *acc = acc.wrapping_add(*v);
        }
    }
    Ok(sum)
}

/// Trusted-setup dealer: one random seed per unordered pair.
#[derive(Debug, Clone)]
pub struct SeedBook {
    n: usize,
    seeds: Vec<PairwiseSeed>,
}

impl SeedBook {
    pub fn deal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut seeds = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let mut secret = [0u8; 32];
                rng.fill_bytes(&mut secret);
                seeds.push(PairwiseSeed::new(i, j, secret));
            }
        }
        Self { n, seeds }
    }

    pub fn participants(&self) -> usize {
        self.n
    }

    pub fn all(&self) -> &[PairwiseSeed] {
        &self.seeds
    }

    /// Seeds involving participant `me`.
    pub fn seeds_for(&self, me: usize) -> Vec<PairwiseSeed> {
        self.seeds
            .iter()
            .filter(|s| s.i == me || s.j == me)
            .cloned()
            .collect()
    }
}

/// Runs one full round: deal seeds, mask every contribution (in parallel when
/// enabled), and aggregate.
pub fn run_round<R: Rng + ?Sized>(
    contributions: &[ContributionVector],
    dimension: usize,
    rng: &mut R,
) -> Result<Vec<u32>, SecAggError> {
    let n = contributions.len();
    if n == 0 || n > MAX_PARTICIPANTS {
        return Err(SecAggError::InvalidParticipantCount(n));
    }
    if let Some(bad) = contributions.iter().find(|c| c.dimension() != dimension) {
        return Err(SecAggError::DimensionMismatch {
            expected: dimension,
            found: bad.dimension(),
        });
    }
    let book = SeedBook::deal(n, rng);
    let shares = mask_all(contributions, &book)?;
    aggregate(&shares, n, dimension)
}

/// Masks every participant's contribution against `book`.
pub fn mask_all(
    contributions: &[ContributionVector],
    book: &SeedBook,
) -> Result<Vec<MaskedShare>, SecAggError> {
    let n = contributions.len();
    contributions
        .par_iter()
        .enumerate()
        .map(|(me, v)| mask_contribution(v, me, &book.seeds_for(me), n))
        .collect()
}
