use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::agent::InfectionRoute;
use super::config::ScenarioConfig;
use crate::authority::{hotspots_json, Hotspot};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Infection {
        epoch: u64,
        infectee: usize,
        route: InfectionRoute,
        /// Infector, or for fomite infections the last agent to contaminate
        /// the surface.
        source: Option<usize>,
        cell: [usize; 2],
        generation: u32,
    },
    PositiveTest {
        epoch: u64,
        agent: usize,
    },
    ReportPublished {
        epoch: u64,
        agent: usize,
        seq: usize,
        first_day: u64,
        days: usize,
    },
    Notified {
        epoch: u64,
        agent: usize,
        reporter: usize,
        seq: usize,
        exposure_days: Vec<u64>,
    },
    LocationUpload {
        epoch: u64,
        agent: usize,
        visits: usize,
    },
}

impl SimEvent {
    pub fn epoch(&self) -> u64 {
        match self {
            SimEvent::Infection { epoch, .. }
            | SimEvent::PositiveTest { epoch, .. }
            | SimEvent::ReportPublished { epoch, .. }
            | SimEvent::Notified { epoch, .. }
            | SimEvent::LocationUpload { epoch, .. } => *epoch,
        }
    }
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimEvent::Infection {
                epoch,
                infectee,
                route,
                source,
                cell,
                generation,
            } => {
                write!(f, "epoch={epoch} kind=infection route={route} infectee={infectee} source=")?;
                match source {
                    Some(s) => write!(f, "{s}")?,
                    None => f.write_str("-")?,
                }
                write!(f, " cell={},{} generation={generation}", cell[0], cell[1])
            }
            SimEvent::PositiveTest { epoch, agent } => {
                write!(f, "epoch={epoch} kind=positive_test agent={agent}")
            }
            SimEvent::ReportPublished {
                epoch,
                agent,
                seq,
                first_day,
                days,
            } => write!(
                f,
                "epoch={epoch} kind=report agent={agent} seq={seq} first_day={first_day} days={days}"
            ),
            SimEvent::Notified {
                epoch,
                agent,
                reporter,
                seq,
                exposure_days,
            } => {
                let days: Vec<String> = exposure_days.iter().map(u64::to_string).collect();
                write!(
                    f,
                    "epoch={epoch} kind=notified agent={agent} reporter={reporter} seq={seq} days={}",
                    days.join(";")
                )
            }
            SimEvent::LocationUpload {
                epoch,
                agent,
                visits,
            } => write!(f, "epoch={epoch} kind=location_upload agent={agent} visits={visits}"),
        }
    }
}

/// Compartment counts at the end of a day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayRow {
    pub day: u64,
    pub s: usize,
    pub e: usize,
    pub i: usize,
    pub r: usize,
    pub q: usize,
    pub new_infections: u64,
    pub cumulative_infections: u64,
    /// Mean secondary infections of agents infected on this day.
    pub case_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    /// Share of agents ever infected, index cases included.
    pub attack_rate: f64,
    /// Infections after the index cases.
    pub infections: u64,
    pub contact_infections: u64,
    pub fomite_infections: u64,
    pub generation_sizes: Vec<u64>,
    pub generation_secondaries: Vec<u64>,
    pub r_eff_by_generation: Vec<f64>,
    pub traced_infections: u64,
    pub traced_fraction: f64,
    pub fomite_sites: usize,
    pub hotspot_cells: usize,
    pub hotspot_recall: f64,
    pub hotspot_precision: f64,
    pub quarantine_person_days: f64,
    pub peak_infectious: usize,
    pub tests: u64,
    pub reports_published: u64,
    pub location_uploads: u64,
    pub notifications: u64,
    /// Co-located agent pairs summed over epochs.
    pub contact_pair_epochs: u64,
    /// The subset where both agents carry the app.
    pub detectable_pair_epochs: u64,
    /// Location pseudonyms equal to any identifier derivable from a published report.
    pub channel_overlap: usize,
}

impl SimMetrics {
    pub fn detectable_pair_fraction(&self) -> f64 {
        if self.contact_pair_epochs == 0 {
            0.0
        } else {
            self.detectable_pair_epochs as f64 / self.contact_pair_epochs as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub config: ScenarioConfig,
    pub metrics: SimMetrics,
    pub days: Vec<DayRow>,
    pub events: Vec<SimEvent>,
    pub hotspots: Vec<Hotspot>,
}

impl SimOutput {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("day,S,E,I,R,Q,new_infections,cumulative_infections,case_r\n");
        for row in &self.days {
            let case_r = row.case_r.map(|r| format!("{r:.4}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.day,
                row.s,
                row.e,
                row.i,
                row.r,
                row.q,
                row.new_infections,
                row.cumulative_infections,
                case_r
            )
            .unwrap();
        }
        out
    }

    pub fn events_log(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            writeln!(out, "{event}").unwrap();
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a ScenarioConfig,
            metrics: &'a SimMetrics,
        }
        serde_json::to_string_pretty(&Summary {
            config: &self.config,
            metrics: &self.metrics,
        })
        .expect("summary serializes")
    }

    /// Writes `metrics.csv`, `hotspots.json`, `events.log` and `summary.json`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        fs::write(dir.join("hotspots.json"), hotspots_json(&self.hotspots))?;
        fs::write(dir.join("events.log"), self.events_log())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}
