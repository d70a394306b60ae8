//! Decentralized epidemic tracing toolkit.
//!
//! The crate is organised around the actors of a privacy-preserving tracing
//! deployment:
//!
//! * [`crypto_ids`]: daily seed chains and the rotating ephemeral identifiers a
//!   phone broadcasts, plus the seed escrow used by the centralized variant.
//! * [`contact_store`]: the device-local log of observed identifiers and local
//!   exposure matching against published reports.
//! * [`pds`]: the citizen's personal data store holding location history,
//!   coarsening, consent, and construction of sharing payloads.
//! * [`secure_agg`]: pairwise additive masking so an aggregator only learns the
//!   sum of per-citizen count vectors.
//! * [`authority`]: the health-authority backend (exposure board, density maps,
//!   hotspots, risk maps).
//! * [`awareness`]: citizen-side analytics joining the public risk map with the
//!   private trajectory.
//! * [`sim`]: a deterministic agent-based epidemic simulator wiring all of the
//!   above together.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results are identical in both builds.

pub mod authority;
pub mod awareness;
pub mod contact_store;
pub mod crypto_ids;
pub mod par;
pub mod pds;
pub mod secure_agg;
pub mod sim;

pub(crate) mod hashing;
