use std::fmt;

use serde::Serialize;

use crate::contact_store::{ContactStore, RETENTION_DAYS};
use crate::crypto_ids::{DailySeed, EphemeralId, SeedChain};
use crate::pds::PersonalDataStore;

/// Underlying disease state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Disease {
    S,
    E,
    I,
    R,
}

/// Reported state: quarantined or isolating agents show as `Q` whatever their
/// disease state, so the five counts always sum to the population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Compartment {
    S,
    E,
    I,
    R,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InfectionRoute {
    Contact,
    Fomite,
}

impl fmt::Display for InfectionRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfectionRoute::Contact => "contact",
            InfectionRoute::Fomite => "fomite",
        })
    }
}

/// The app side of an agent: seed chain and personal data store.
#[derive(Debug, Clone)]
pub struct Phone {
    pub(crate) chain: SeedChain,
    pub(crate) pds: PersonalDataStore,
    id_cache: Option<(u64, EphemeralId)>,
}

impl Phone {
    pub(crate) fn new(initial: DailySeed) -> Self {
        Self {
            chain: SeedChain::new(initial, RETENTION_DAYS as usize),
            pds: PersonalDataStore::new(),
            id_cache: None,
        }
    }

    /// Identifier broadcast during global epoch `t`.
    pub(crate) fn broadcast_id(&mut self, t: u64, epoch_in_day: usize) -> EphemeralId {
        match self.id_cache {
            Some((cached, id)) if cached == t => id,
            _ => {
                let id = self.chain.current().ephemeral_id(epoch_in_day);
                self.id_cache = Some((t, id));
                id
            }
        }
    }

    pub fn contacts(&self) -> &ContactStore {
        self.pds.contacts()
    }

    pub fn pds(&self) -> &PersonalDataStore {
        &self.pds
    }

    pub fn seeds(&self) -> &[DailySeed] {
        self.chain.retained()
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub(crate) id: usize,
    pub(crate) home: usize,
    pub(crate) work: usize,
    pub(crate) location_consent: bool,
    pub(crate) disease: Disease,
    pub(crate) next_transition: u64,
    pub(crate) infected_at: Option<u64>,
    pub(crate) infectious_at: Option<u64>,
    pub(crate) test_at: Option<u64>,
    pub(crate) tested: bool,
    pub(crate) isolated: bool,
    pub(crate) quarantine_until: u64,
    pub(crate) generation: Option<u32>,
    pub(crate) source: Option<usize>,
    pub(crate) route: Option<InfectionRoute>,
    pub(crate) secondary: u32,
    pub(crate) traced: bool,
    pub(crate) phone: Option<Phone>,
}

impl Agent {
    pub(crate) fn new(id: usize, home: usize, work: usize) -> Self {
        Self {
            id,
            home,
            work,
            location_consent: false,
            disease: Disease::S,
            next_transition: u64::MAX,
            infected_at: None,
            infectious_at: None,
            test_at: None,
            tested: false,
            isolated: false,
            quarantine_until: 0,
            generation: None,
            source: None,
            route: None,
            secondary: 0,
            traced: false,
            phone: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Home cell as a row-major index into the grid.
    pub fn home(&self) -> usize {
        self.home
    }

    pub fn work(&self) -> usize {
        self.work
    }

    pub fn has_app(&self) -> bool {
        self.phone.is_some()
    }

    pub fn phone(&self) -> Option<&Phone> {
        self.phone.as_ref()
    }

    pub fn disease(&self) -> Disease {
        self.disease
    }

    /// Removed from mixing at epoch `t`.
    pub fn is_confined(&self, t: u64) -> bool {
        self.isolated || self.quarantine_until > t
    }

    pub fn compartment(&self, t: u64) -> Compartment {
        if self.is_confined(t) {
            return Compartment::Q;
        }
        match self.disease {
            Disease::S => Compartment::S,
            Disease::E => Compartment::E,
            Disease::I => Compartment::I,
            Disease::R => Compartment::R,
        }
    }

    pub fn generation(&self) -> Option<u32> {
        self.generation
    }

    /// Agent credited with this agent's infection, if any.
    pub fn source(&self) -> Option<usize> {
        self.source
    }

    pub fn route(&self) -> Option<InfectionRoute> {
        self.route
    }

    pub fn infected_at(&self) -> Option<u64> {
        self.infected_at
    }

    pub fn infectious_at(&self) -> Option<u64> {
        self.infectious_at
    }

    pub fn secondary_infections(&self) -> u32 {
        self.secondary
    }

    pub fn was_tested(&self) -> bool {
        self.tested
    }

    /// Notified by its infector's report before becoming infectious.
    pub fn was_traced(&self) -> bool {
        self.traced
    }
}
