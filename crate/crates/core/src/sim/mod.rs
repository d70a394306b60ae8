//! Deterministic agent-based epidemic simulator.
//!
//! Agents live on a `width × height` grid of 0.01° cells. Each day they stay
//! home overnight, go to work, run one short errand to a shared space and
//! return home. Every 15-minute epoch runs, in order: movement, contact
//! transmission, fomite deposit and pickup, contamination decay, encounter
//! logging, disease progression, then testing and tracing.
//!
//! All randomness comes from two ChaCha8 streams seeded from the config: one
//! for the epidemic and one for key material and pseudonyms, so runs that
//! differ only in intervention share the same epidemic draws until the
//! intervention changes what happens.

mod agent;
mod config;
mod output;
mod sweep;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::authority::{detect_hotspots, Authority, HotspotPolicy, TracingMode};
use crate::contact_store::{EncounterRecord, ExposurePolicy, RETENTION_DAYS};
use crate::crypto_ids::{DailySeed, EphemeralId, ExposureReport, EPOCHS_PER_DAY};
use crate::par::prelude::*;
use crate::pds::{
    minimum_granularity, CellId, DayRange, GridSize, LocationPoint, MinimumGranularity, Pseudonym,
    Purpose, SECONDS_PER_DAY,
};
use crate::secure_agg::CellIndexSpace;

pub use agent::{Agent, Compartment, Disease, InfectionRoute, Phone};
pub use config::{ConfigError, Intervention, ScenarioConfig};
pub use output::{DayRow, SimEvent, SimMetrics, SimOutput};
pub use sweep::{sweep, sweep_csv, SweepError, SweepRow, SweepSpec};

pub const BASE_LAT: f64 = 43.0;
pub const BASE_LON: f64 = 10.0;
/// Grid the world cells are drawn on.
pub const WORLD_GRID: GridSize = GridSize::Medium;

const EPOCHS: u64 = EPOCHS_PER_DAY as u64;
const EPOCH_SECS: i64 = 900;
const WORK_START: u32 = 32;
const WORK_END: u32 = 68;
const ERRAND_LATEST_START: u32 = 80;
/// Contact records always use a full epoch at close range.
const RECORD_MINUTES: u32 = 15;
const RECORD_ATTENUATION: u32 = 30;
const QUIESCENT_HAZARD: f64 = 1e-12;

/// Centre of world cell `(x, y)`.
pub fn cell_center(x: usize, y: usize) -> (f64, f64) {
    let deg = WORLD_GRID.cell_deg();
    (BASE_LAT + (x as f64 + 0.5) * deg, BASE_LON + (y as f64 + 0.5) * deg)
}

/// The grid cell a coarsened upload reports for world cell `(x, y)`.
pub fn world_cell_id(x: usize, y: usize) -> CellId {
    let (lat, lon) = cell_center(x, y);
    let (a, b) = WORLD_GRID.cell_of(lat, lon);
    CellId::Grid(a, b)
}

struct DayIndex {
    day: u64,
    // Which phones heard each identifier broadcast on `day`.
    heard_by: HashMap<EphemeralId, Vec<u32>>,
}

#[derive(Debug, Default, Clone)]
struct Counters {
    contact_infections: u64,
    fomite_infections: u64,
    traced: u64,
    tests: u64,
    notifications: u64,
    location_uploads: u64,
    quarantine_epochs: u64,
    contact_pair_epochs: u64,
    detectable_pair_epochs: u64,
    peak_infectious: usize,
    day_new_infections: u64,
    cumulative_infections: u64,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    agents: Vec<Agent>,
    epoch: u64,
    rng: ChaCha8Rng,
    crypto_rng: ChaCha8Rng,
    policy: ExposurePolicy,
    shared: Vec<usize>,
    contamination: Vec<f64>,
    last_depositor: Vec<Option<usize>>,
    decay: f64,
    positions: Vec<usize>,
    errands: Vec<(usize, u32)>,
    // Agents grouped by cell: members of cell c are order[cell_start[c]..cell_start[c + 1]].
    order: Vec<usize>,
    cell_start: Vec<usize>,
    authority: Authority,
    heard: VecDeque<DayIndex>,
    n_exposed: usize,
    n_infectious: usize,
    events: Vec<SimEvent>,
    days: Vec<DayRow>,
    published: Vec<(usize, ExposureReport)>,
    pseudonyms: Vec<(usize, Pseudonym)>,
    fomite_sites: BTreeMap<usize, u64>,
    counters: Counters,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut crypto_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        crypto_rng.set_stream(1);

        let n_cells = cfg.width * cfg.height;
        let mut shared: Vec<usize> = cfg
            .shared_space_cells
            .iter()
            .map(|&[x, y]| x * cfg.height + y)
            .collect();
        shared.sort_unstable();
        let free: Vec<usize> = (0..n_cells).filter(|c| shared.binary_search(c).is_err()).collect();

        let mut homes = Vec::with_capacity(cfg.n_agents);
        while homes.len() < cfg.n_agents {
            let size = rng.random_range(1..=4usize);
            let home = free[rng.random_range(0..free.len())];
            for _ in 0..size.min(cfg.n_agents - homes.len()) {
                homes.push(home);
            }
        }
        let workplaces: Vec<usize> = sample(&mut rng, free.len(), cfg.workplaces)
            .into_iter()
            .map(|i| free[i])
            .collect();
        let mut agents: Vec<Agent> = homes
            .iter()
            .enumerate()
            .map(|(id, &home)| {
                let work = workplaces[rng.random_range(0..workplaces.len())];
                Agent::new(id, home, work)
            })
            .collect();
        for agent in &mut agents {
            let has_app = rng.random::<f64>() < cfg.adoption;
            let consent = rng.random::<f64>() < cfg.location_consent;
            if has_app {
                let mut phone = Phone::new(DailySeed::random(0, &mut crypto_rng));
                if consent {
                    phone.pds.set_consent(Purpose::LocationUpload, true);
                }
                agent.phone = Some(phone);
                agent.location_consent = consent;
            }
        }
        let mut index: Vec<usize> = sample(&mut rng, cfg.n_agents, cfg.index_cases).into_vec();
        index.sort_unstable();

        let decay = 0.5f64.powf(1.0 / (cfg.decay_half_life_days * EPOCHS as f64));
        let mut sim = Self {
            policy: ExposurePolicy::default(),
            positions: homes,
            errands: vec![(0, 0); cfg.n_agents],
            order: vec![0; cfg.n_agents],
            cell_start: vec![0; n_cells + 1],
            contamination: vec![0.0; n_cells],
            last_depositor: vec![None; n_cells],
            decay,
            shared,
            agents,
            epoch: 0,
            rng,
            crypto_rng,
            authority: Authority::new(TracingMode::Decentralized),
            heard: VecDeque::new(),
            n_exposed: 0,
            n_infectious: 0,
            events: Vec::new(),
            days: Vec::new(),
            published: Vec::new(),
            pseudonyms: Vec::new(),
            fomite_sites: BTreeMap::new(),
            counters: Counters::default(),
            cfg,
        };
        for id in index {
            let infectious_for = sim.draw_epochs(sim.cfg.infectious_mean_days);
            let test_after = sim.test_offset();
            let agent = &mut sim.agents[id];
            agent.disease = Disease::I;
            agent.generation = Some(0);
            agent.infected_at = Some(0);
            agent.infectious_at = Some(0);
            agent.next_transition = infectious_for;
            agent.test_at = Some(test_after);
            sim.n_infectious += 1;
        }
        Ok(sim)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// The next epoch to be simulated.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn authority(&self) -> &Authority {
        &self.authority
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn days(&self) -> &[DayRow] {
        &self.days
    }

    /// Row-major index of the cell each agent occupied in the last epoch.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn cell_xy(&self, cell: usize) -> (usize, usize) {
        (cell / self.cfg.height, cell % self.cfg.height)
    }

    pub fn contamination(&self, x: usize, y: usize) -> f64 {
        self.contamination[x * self.cfg.height + y]
    }

    pub fn set_contamination(&mut self, x: usize, y: usize, value: f64) {
        self.contamination[x * self.cfg.height + y] = value;
    }

    /// Reports published so far with their publishers, in publication order.
    pub fn published_reports(&self) -> &[(usize, ExposureReport)] {
        &self.published
    }

    /// Pseudonyms seen by the authority on location uploads, with uploaders.
    pub fn location_pseudonyms(&self) -> &[(usize, Pseudonym)] {
        &self.pseudonyms
    }

    /// Current counts in S, E, I, R, Q order.
    pub fn compartment_counts(&self) -> [usize; 5] {
        let mut counts = [0usize; 5];
        for agent in &self.agents {
            counts[agent.compartment(self.epoch) as usize] += 1;
        }
        counts
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.horizon_days * EPOCHS
    }

    /// Simulates one epoch and returns the events it produced.
    pub fn step(&mut self) -> &[SimEvent] {
        let first_event = self.events.len();
        let t = self.epoch;
        let day = t / EPOCHS;
        let e = (t % EPOCHS) as u32;
        if e == 0 {
            self.start_day(day);
        }
        self.move_agents(t, e);
        self.group_by_cell();
        let active = self.is_active();
        if active {
            self.transmit_by_contact(t);
        }
        self.fomite_step(t);
        if active && self.cfg.intervention.traces_contacts() {
            self.log_encounters(t, day, e);
        }
        if active && self.cfg.intervention.uploads_locations() {
            self.record_locations(t);
        }
        self.progress(t);
        self.test_and_trace(t, day);
        self.counters.quarantine_epochs += self.agents.iter().filter(|a| a.is_confined(t + 1)).count() as u64;
        self.counters.peak_infectious = self.counters.peak_infectious.max(self.n_infectious);
        if e as u64 == EPOCHS - 1 {
            self.end_day(day);
        }
        self.epoch += 1;
        &self.events[first_event..]
    }

    /// Steps to the end of the horizon and computes the run's outputs.
    pub fn run(mut self) -> SimOutput {
        while !self.is_finished() {
            self.step();
        }
        self.finish()
    }

    fn draw_epochs(&mut self, mean_days: f64) -> u64 {
        let days: f64 = self.rng.sample::<f64, _>(Exp1) * mean_days;
        ((days * EPOCHS as f64).round() as u64).max(1)
    }

    fn test_offset(&self) -> u64 {
        ((self.cfg.presymptomatic_days + self.cfg.test_delay_days) * EPOCHS as f64).round() as u64
    }

    fn is_active(&self) -> bool {
        if self.n_exposed + self.n_infectious > 0 {
            return true;
        }
        let worst = self.shared.iter().map(|&c| self.contamination[c]).fold(0.0, f64::max);
        self.cfg.beta_fomite * worst > QUIESCENT_HAZARD
    }

    fn start_day(&mut self, day: u64) {
        if day > 0 {
            let keep_from = (day + 1).saturating_sub(RETENTION_DAYS);
            for phone in self.agents.iter_mut().filter_map(|a| a.phone.as_mut()) {
                phone.chain.advance();
                phone.pds.contacts_mut().prune(day, RETENTION_DAYS);
                phone.pds.forget_before(keep_from as i64);
            }
            while self.heard.front().is_some_and(|d| d.day < keep_from) {
                self.heard.pop_front();
            }
            self.authority.locations_mut().close_upload_window();
        }
        if self.cfg.intervention.traces_contacts() {
            self.heard.push_back(DayIndex {
                day,
                heard_by: HashMap::new(),
            });
        }
        let span = ERRAND_LATEST_START - WORK_END;
        for i in 0..self.agents.len() {
            let cell = self.shared.get(self.rng.random_range(0..self.shared.len().max(1))).copied();
            let start = WORK_END + self.rng.random_range(0..span);
            self.errands[i] = (cell.unwrap_or(self.agents[i].home), start);
        }
    }

    fn move_agents(&mut self, t: u64, e: u32) {
        let errand_len = self.cfg.errand_epochs;
        for (i, agent) in self.agents.iter().enumerate() {
            let (errand_cell, errand_start) = self.errands[i];
            self.positions[i] = if agent.is_confined(t) {
                agent.home
            } else if (WORK_START..WORK_END).contains(&e) {
                agent.work
            } else if !self.shared.is_empty() && (errand_start..errand_start + errand_len).contains(&e) {
                errand_cell
            } else {
                agent.home
            };
        }
    }

    fn group_by_cell(&mut self) {
        self.cell_start.iter_mut().for_each(|c| *c = 0);
        for &cell in &self.positions {
            self.cell_start[cell + 1] += 1;
        }
        for c in 1..self.cell_start.len() {
            self.cell_start[c] += self.cell_start[c - 1];
        }
        let mut fill = self.cell_start.clone();
        for (i, &cell) in self.positions.iter().enumerate() {
            self.order[fill[cell]] = i;
            fill[cell] += 1;
        }
    }

    fn members(&self, cell: usize) -> &[usize] {
        &self.order[self.cell_start[cell]..self.cell_start[cell + 1]]
    }

    fn transmit_by_contact(&mut self, t: u64) {
        let beta = self.cfg.beta_contact;
        let mut infections = Vec::new();
        for cell in 0..self.contamination.len() {
            let members = self.members(cell);
            if members.len() < 2 {
                continue;
            }
            let mixing: Vec<usize> = members.iter().copied().filter(|&i| !self.agents[i].is_confined(t)).collect();
            let k = mixing.len() as u64;
            let a = mixing.iter().filter(|&&i| self.agents[i].has_app()).count() as u64;
            self.counters.contact_pair_epochs += k * k.saturating_sub(1) / 2;
            self.counters.detectable_pair_epochs += a * a.saturating_sub(1) / 2;
            if beta <= 0.0 {
                continue;
            }
            let infectious: Vec<usize> = mixing.iter().copied().filter(|&i| self.agents[i].disease == Disease::I).collect();
            if infectious.is_empty() {
                continue;
            }
            let susceptible: Vec<usize> = mixing.iter().copied().filter(|&i| self.agents[i].disease == Disease::S).collect();
            let mut caught = vec![false; susceptible.len()];
            for &src in &infectious {
                for (j, &dst) in susceptible.iter().enumerate() {
                    if !caught[j] && self.rng.random::<f64>() < beta {
                        caught[j] = true;
                        infections.push((dst, src, cell));
                    }
                }
            }
        }
        for (dst, src, cell) in infections {
            self.infect(dst, Some(src), InfectionRoute::Contact, cell, t);
        }
    }

    fn fomite_step(&mut self, t: u64) {
        let beta = self.cfg.beta_fomite;
        for s in 0..self.shared.len() {
            let cell = self.shared[s];
            let members: Vec<usize> = self.members(cell).iter().copied().filter(|&i| !self.agents[i].is_confined(t)).collect();
            for &i in &members {
                if self.agents[i].disease == Disease::I {
                    self.contamination[cell] += self.cfg.deposit_rate;
                    self.last_depositor[cell] = Some(i);
                }
            }
            let p = (beta * self.contamination[cell]).min(1.0);
            if p > 0.0 {
                for &i in &members {
                    if self.agents[i].disease == Disease::S && self.rng.random::<f64>() < p {
                        let source = self.last_depositor[cell];
                        self.infect(i, source, InfectionRoute::Fomite, cell, t);
                    }
                }
            }
            self.contamination[cell] *= self.decay;
        }
    }

    fn infect(&mut self, target: usize, source: Option<usize>, route: InfectionRoute, cell: usize, t: u64) {
        let latent = self.draw_epochs(self.cfg.exposed_mean_days);
        let generation = source.and_then(|s| self.agents[s].generation).map_or(1, |g| g + 1);
        if let Some(s) = source {
            self.agents[s].secondary += 1;
        }
        let agent = &mut self.agents[target];
        agent.disease = Disease::E;
        agent.infected_at = Some(t);
        agent.next_transition = t + latent;
        agent.generation = Some(generation);
        agent.source = source;
        agent.route = Some(route);
        self.n_exposed += 1;
        self.counters.day_new_infections += 1;
        self.counters.cumulative_infections += 1;
        match route {
            InfectionRoute::Contact => self.counters.contact_infections += 1,
            InfectionRoute::Fomite => {
                self.counters.fomite_infections += 1;
                *self.fomite_sites.entry(cell).or_default() += 1;
            }
        }
        let (x, y) = self.cell_xy(cell);
        self.events.push(SimEvent::Infection {
            epoch: t,
            infectee: target,
            route,
            source,
            cell: [x, y],
            generation,
        });
    }

    fn log_encounters(&mut self, t: u64, day: u64, e: u32) {
        let today = self.heard.back_mut().expect("index opened at day start");
        debug_assert_eq!(today.day, day);
        for cell in 0..self.contamination.len() {
            let (lo, hi) = (self.cell_start[cell], self.cell_start[cell + 1]);
            if hi - lo < 2 {
                continue;
            }
            let mut present: Vec<(usize, EphemeralId)> = Vec::new();
            for &i in &self.order[lo..hi] {
                let agent = &mut self.agents[i];
                if agent.is_confined(t) {
                    continue;
                }
                if let Some(phone) = agent.phone.as_mut() {
                    present.push((i, phone.broadcast_id(t, e as usize)));
                }
            }
            if present.len() < 2 {
                continue;
            }
            for &(listener, _) in &present {
                let store = self.agents[listener].phone.as_mut().unwrap().pds.contacts_mut();
                for &(speaker, id) in &present {
                    if speaker == listener {
                        continue;
                    }
                    let rec = EncounterRecord::new(id, day, e, RECORD_MINUTES, RECORD_ATTENUATION)
                        .expect("simulated record is in range");
                    store.record_encounter(rec);
                    today.heard_by.entry(id).or_default().push(listener as u32);
                }
            }
        }
    }

    fn record_locations(&mut self, t: u64) {
        let now = t as i64 * EPOCH_SECS;
        let height = self.cfg.height;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if let Some(phone) = agent.phone.as_mut() {
                let cell = self.positions[i];
                let (lat, lon) = cell_center(cell / height, cell % height);
                let point = LocationPoint::new(lat, lon, now).expect("world lies on the globe");
                phone.pds.append_location(point).expect("collection is never stopped here");
            }
        }
    }

    fn progress(&mut self, t: u64) {
        let next = t + 1;
        let test_after = self.test_offset();
        for i in 0..self.agents.len() {
            let agent = &self.agents[i];
            if agent.next_transition > next {
                continue;
            }
            match agent.disease {
                Disease::E => {
                    let infectious_for = self.draw_epochs(self.cfg.infectious_mean_days);
                    let agent = &mut self.agents[i];
                    agent.disease = Disease::I;
                    agent.infectious_at = Some(next);
                    agent.next_transition = next + infectious_for;
                    agent.test_at = Some(next + test_after);
                    self.n_exposed -= 1;
                    self.n_infectious += 1;
                }
                Disease::I => {
                    let agent = &mut self.agents[i];
                    agent.disease = Disease::R;
                    agent.next_transition = u64::MAX;
                    agent.isolated = false;
                    self.n_infectious -= 1;
                }
                Disease::S | Disease::R => {}
            }
        }
    }

    fn test_and_trace(&mut self, t: u64, day: u64) {
        let next = t + 1;
        let positives: Vec<usize> = self
            .agents
            .iter()
            .filter(|a| a.disease == Disease::I && !a.tested && a.test_at.is_some_and(|at| at <= next))
            .map(|a| a.id)
            .collect();
        let mut fresh = Vec::new();
        for &i in &positives {
            let agent = &mut self.agents[i];
            agent.tested = true;
            agent.isolated = true;
            self.counters.tests += 1;
            self.events.push(SimEvent::PositiveTest { epoch: t, agent: i });
            let Some(phone) = agent.phone.as_mut() else {
                continue;
            };
            if self.cfg.intervention.traces_contacts() {
                let report = phone.chain.report();
                let seq = self.authority.board().total_published();
                self.authority.publish_report(report.clone(), day);
                self.events.push(SimEvent::ReportPublished {
                    epoch: t,
                    agent: i,
                    seq,
                    first_day: report.first_day(),
                    days: report.len(),
                });
                self.published.push((i, report.clone()));
                fresh.push((i, seq, report));
            }
            if self.cfg.intervention.uploads_locations() && agent.location_consent {
                let MinimumGranularity::AtLeast(g) = minimum_granularity(Purpose::LocationUpload) else {
                    unreachable!("location uploads carry locations")
                };
                let window = DayRange::new(day as i64 + 1 - RETENTION_DAYS as i64, day as i64);
                let now = t as i64 * EPOCH_SECS;
                let (payload, _consent) = phone
                    .pds
                    .build_share_payload(Purpose::LocationUpload, Some(g), window, now, &mut self.crypto_rng)
                    .expect("consent and granularity are in order");
                self.authority
                    .ingest_location_payload(&payload)
                    .expect("payload purpose matches");
                self.counters.location_uploads += 1;
                self.pseudonyms.push((i, payload.pseudonym));
                self.events.push(SimEvent::LocationUpload {
                    epoch: t,
                    agent: i,
                    visits: payload.body.len(),
                });
            }
        }
        for (reporter, seq, report) in fresh {
            self.trace(reporter, seq, &report, t);
        }
    }

    /// Matches one published report on every phone that could hold a hit.
    ///
    /// Only phones that heard at least one of the report's identifiers are
    /// checked; every other store would return no events.
    fn trace(&mut self, reporter: usize, seq: usize, report: &ExposureReport, t: u64) {
        let ids: HashSet<EphemeralId> = report.derive_id_set();
        let mut candidates = BTreeSet::new();
        for index in &self.heard {
            for id in &ids {
                if let Some(listeners) = index.heard_by.get(id) {
                    candidates.extend(listeners.iter().map(|&l| l as usize));
                }
            }
        }
        let candidates: Vec<usize> = candidates.into_iter().collect();
        let agents = &self.agents;
        let policy = self.policy;
        let hits: Vec<(usize, Vec<u64>)> = candidates
            .par_iter()
            .filter_map(|&c| {
                let phone = agents[c].phone.as_ref()?;
                let events = phone.contacts().check_against(&ids, &policy);
                (!events.is_empty()).then(|| (c, events.iter().map(|ev| ev.day).collect()))
            })
            .collect();
        let until = t + 1 + self.cfg.quarantine_days * EPOCHS;
        for (c, exposure_days) in hits {
            let agent = &mut self.agents[c];
            if agent.isolated || c == reporter {
                continue;
            }
            agent.quarantine_until = agent.quarantine_until.max(until);
            if agent.source == Some(reporter)
                && agent.route == Some(InfectionRoute::Contact)
                && agent.disease == Disease::E
                && !agent.traced
            {
                agent.traced = true;
                self.counters.traced += 1;
            }
            self.counters.notifications += 1;
            self.events.push(SimEvent::Notified {
                epoch: t,
                agent: c,
                reporter,
                seq,
                exposure_days,
            });
        }
    }

    fn end_day(&mut self, day: u64) {
        let [s, e, i, r, q] = self.compartment_counts_at(self.epoch + 1);
        self.days.push(DayRow {
            day,
            s,
            e,
            i,
            r,
            q,
            new_infections: self.counters.day_new_infections,
            cumulative_infections: self.counters.cumulative_infections,
            case_r: None,
        });
        self.counters.day_new_infections = 0;
    }

    fn compartment_counts_at(&self, t: u64) -> [usize; 5] {
        let mut counts = [0usize; 5];
        for agent in &self.agents {
            counts[agent.compartment(t) as usize] += 1;
        }
        counts
    }

    /// Space the authority's density map covers: every world cell over the
    /// horizon in `hotspot_bin_days` bins.
    pub fn hotspot_space(&self) -> CellIndexSpace {
        let cfg = &self.cfg;
        let cells = (0..cfg.width)
            .flat_map(|x| (0..cfg.height).map(move |y| world_cell_id(x, y)))
            .collect();
        let width = cfg.hotspot_bin_days as i64 * SECONDS_PER_DAY;
        let bins = (0..cfg.horizon_days.div_ceil(cfg.hotspot_bin_days))
            .map(|b| b as i64 * width)
            .collect();
        CellIndexSpace::new(cells, bins, width).expect("world space is well formed")
    }

    /// Computes metrics and outputs from the current state.
    pub fn finish(mut self) -> SimOutput {
        let space = self.hotspot_space();
        let map = self.authority.build_density_map(&space);
        let hotspots = detect_hotspots(&map, &HotspotPolicy::default());

        let world: HashMap<CellId, usize> = (0..self.contamination.len())
            .map(|c| {
                let (x, y) = self.cell_xy(c);
                (world_cell_id(x, y), c)
            })
            .collect();
        let detected: BTreeSet<usize> = hotspots.iter().filter_map(|h| world.get(&h.cell).copied()).collect();
        let truth: BTreeSet<usize> = self.fomite_sites.keys().copied().collect();
        let hits = detected.intersection(&truth).count() as f64;
        let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };

        let mut generation_sizes = Vec::new();
        let mut generation_secondaries = Vec::new();
        let mut by_day: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        for agent in &self.agents {
            if let Some(g) = agent.generation {
                let g = g as usize;
                if generation_sizes.len() <= g {
                    generation_sizes.resize(g + 1, 0);
                    generation_secondaries.resize(g + 1, 0);
                }
                generation_sizes[g] += 1;
                generation_secondaries[g] += agent.secondary as u64;
            }
            if let Some(at) = agent.infected_at {
                let entry = by_day.entry(at / EPOCHS).or_default();
                entry.0 += 1;
                entry.1 += agent.secondary as u64;
            }
        }
        for row in &mut self.days {
            row.case_r = by_day.get(&row.day).map(|&(n, sec)| sec as f64 / n as f64);
        }
        let r_eff_by_generation = generation_sizes
            .iter()
            .zip(&generation_secondaries)
            .map(|(&n, &sec)| ratio(sec as f64, n as usize))
            .collect();

        let ever_infected = self.agents.iter().filter(|a| a.generation.is_some()).count();
        let infections = self.counters.contact_infections + self.counters.fomite_infections;
        let c = &self.counters;
        let metrics = SimMetrics {
            attack_rate: ratio(ever_infected as f64, self.agents.len()),
            infections,
            contact_infections: c.contact_infections,
            fomite_infections: c.fomite_infections,
            generation_sizes,
            generation_secondaries,
            r_eff_by_generation,
            traced_infections: c.traced,
            traced_fraction: ratio(c.traced as f64, infections as usize),
            fomite_sites: truth.len(),
            hotspot_cells: detected.len(),
            hotspot_recall: ratio(hits, truth.len()),
            hotspot_precision: ratio(hits, detected.len()),
            quarantine_person_days: c.quarantine_epochs as f64 / EPOCHS as f64,
            peak_infectious: c.peak_infectious,
            tests: c.tests,
            reports_published: self.published.len() as u64,
            location_uploads: c.location_uploads,
            notifications: c.notifications,
            contact_pair_epochs: c.contact_pair_epochs,
            detectable_pair_epochs: c.detectable_pair_epochs,
            channel_overlap: self.channel_overlap(),
        };
        SimOutput {
            config: self.cfg,
            metrics,
            days: self.days,
            events: self.events,
            hotspots,
        }
    }

    /// Number of location pseudonyms that equal an identifier, a seed prefix
    /// or a digest prefix derivable from the published reports.
    pub fn channel_overlap(&self) -> usize {
        if self.pseudonyms.is_empty() {
            return 0;
        }
        let pseudonyms: HashSet<[u8; 16]> = self.pseudonyms.iter().map(|(_, p)| p.0).collect();
        let prefix = |bytes: &[u8]| -> [u8; 16] { bytes[..16].try_into().unwrap() };
        let mut hits = HashSet::new();
        for (_, report) in &self.published {
            for seed in report.seeds() {
                let candidate = prefix(seed.secret());
                if pseudonyms.contains(&candidate) {
                    hits.insert(candidate);
                }
            }
            for id in report.derive_ids() {
                for candidate in [id.0, prefix(&id.digest().0)] {
                    if pseudonyms.contains(&candidate) {
                        hits.insert(candidate);
                    }
                }
            }
        }
        hits.len()
    }
}

/// Runs one scenario to its horizon.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<SimOutput, ConfigError> {
    Ok(Simulation::new(cfg)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_agents: n,
            width: 6,
            height: 6,
            shared_space_cells: vec![[2, 2]],
            workplaces: 4,
            index_cases: 1,
            horizon_days: 3,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn world_cells_map_to_medium_grid() {
        assert_eq!(world_cell_id(0, 0), CellId::Grid(4300, 1000));
        assert_eq!(world_cell_id(19, 7), CellId::Grid(4319, 1007));
    }

    #[test]
    fn zero_beta_never_infects() {
        let cfg = ScenarioConfig {
            beta_contact: 0.0,
            beta_fomite: 0.0,
            horizon_days: 10,
            n_agents: 100,
            ..ScenarioConfig::default()
        };
        let out = run_scenario(cfg).unwrap();
        assert_eq!(out.metrics.infections, 0);
        assert!(out.days.iter().all(|d| d.new_infections == 0));
    }

    #[test]
    fn lone_agent_has_no_contacts() {
        let out = run_scenario(ScenarioConfig {
            beta_contact: 1.0,
            adoption: 1.0,
            ..small(1)
        })
        .unwrap();
        assert_eq!(out.metrics.contact_pair_epochs, 0);
        assert_eq!(out.metrics.contact_infections, 0);
    }

    #[test]
    fn contamination_halves_per_half_life() {
        let mut sim = Simulation::new(ScenarioConfig {
            beta_fomite: 0.0,
            ..small(2)
        })
        .unwrap();
        // Nobody is infectious, so nothing new is deposited.
        for a in &mut sim.agents {
            a.disease = Disease::S;
        }
        sim.n_infectious = 0;
        sim.set_contamination(2, 2, 8.0);
        for _ in 0..EPOCHS {
            sim.step();
        }
        assert!((sim.contamination(2, 2) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn compartments_conserve_population() {
        let mut sim = Simulation::new(ScenarioConfig {
            beta_contact: 0.05,
            adoption: 1.0,
            test_delay_days: 0.0,
            ..small(40)
        })
        .unwrap();
        while !sim.is_finished() {
            sim.step();
            assert_eq!(sim.compartment_counts().iter().sum::<usize>(), 40);
        }
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let cfg = ScenarioConfig {
            beta_contact: 0.02,
            ..small(30)
        };
        let a = run_scenario(cfg.clone()).unwrap();
        let b = run_scenario(cfg).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.metrics, b.metrics);
    }
}
