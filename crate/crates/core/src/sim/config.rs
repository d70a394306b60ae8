use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Intervention {
    /// Testing and isolation of cases only.
    #[serde(rename = "none")]
    None,
    /// Plus app-based proximity tracing.
    #[serde(rename = "contact")]
    ContactTracing,
    /// Plus location uploads by positive users.
    #[serde(rename = "contact+location")]
    ContactTracingLocation,
}

impl Intervention {
    pub fn traces_contacts(self) -> bool {
        self >= Intervention::ContactTracing
    }

    pub fn uploads_locations(self) -> bool {
        self == Intervention::ContactTracingLocation
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intervention::None => "none",
            Intervention::ContactTracing => "contact",
            Intervention::ContactTracingLocation => "contact+location",
        })
    }
}

impl std::str::FromStr for Intervention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Intervention::None),
            "contact" => Ok(Intervention::ContactTracing),
            "contact+location" => Ok(Intervention::ContactTracingLocation),
            other => Err(format!(
                "unknown mode {other:?} (expected none, contact or contact+location)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Everything that defines a simulation run. Unset fields take the defaults
/// below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of agents carrying the app.
    pub adoption: f64,
    /// Fraction of app users consenting to location uploads.
    pub location_consent: f64,
    /// Per-epoch infection probability for each co-located I→S pair.
    pub beta_contact: f64,
    /// Pickup probability per unit of surface contamination per epoch.
    pub beta_fomite: f64,
    /// Contamination an infectious agent leaves per epoch in a shared space.
    pub deposit_rate: f64,
    pub decay_half_life_days: f64,
    pub exposed_mean_days: f64,
    pub infectious_mean_days: f64,
    /// Infectious days before symptoms; testing is timed from symptom onset.
    pub presymptomatic_days: f64,
    pub test_delay_days: f64,
    pub quarantine_days: u64,
    pub intervention: Intervention,
    pub shared_space_cells: Vec<[usize; 2]>,
    pub workplaces: usize,
    /// Epochs spent on the daily errand.
    pub errand_epochs: u32,
    pub index_cases: usize,
    pub horizon_days: u64,
    /// Width of the authority's density-map bins.
    pub hotspot_bin_days: u64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_agents: 500,
            width: 20,
            height: 20,
            adoption: 0.6,
            location_consent: 1.0,
            beta_contact: 0.0016,
            beta_fomite: 0.001,
            deposit_rate: 1.0,
            decay_half_life_days: 1.0,
            exposed_mean_days: 3.0,
            infectious_mean_days: 5.0,
            presymptomatic_days: 0.0,
            test_delay_days: 2.0,
            quarantine_days: 14,
            intervention: Intervention::ContactTracing,
            shared_space_cells: vec![[4, 4], [4, 15], [15, 4], [15, 15]],
            workplaces: 80,
            errand_epochs: 2,
            index_cases: 5,
            horizon_days: 120,
            hotspot_bin_days: 7,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probability = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} is not a probability in [0, 1]")))
            }
        };
        let non_negative = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} must be finite and non-negative")))
            }
        };
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} must be positive")))
            }
        };
        probability("adoption", self.adoption)?;
        probability("location_consent", self.location_consent)?;
        probability("beta_contact", self.beta_contact)?;
        non_negative("beta_fomite", self.beta_fomite)?;
        non_negative("deposit_rate", self.deposit_rate)?;
        positive("decay_half_life_days", self.decay_half_life_days)?;
        positive("exposed_mean_days", self.exposed_mean_days)?;
        positive("infectious_mean_days", self.infectious_mean_days)?;
        non_negative("presymptomatic_days", self.presymptomatic_days)?;
        non_negative("test_delay_days", self.test_delay_days)?;
        if self.n_agents == 0 {
            return Err(invalid("n_agents", "need at least one agent"));
        }
        if self.n_agents > u32::MAX as usize {
            return Err(invalid("n_agents", "too many agents"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width", "grid must be at least 1x1"));
        }
        if self.index_cases == 0 || self.index_cases > self.n_agents {
            return Err(invalid("index_cases", "must be between 1 and n_agents"));
        }
        if self.workplaces == 0 {
            return Err(invalid("workplaces", "need at least one workplace"));
        }
        if self.horizon_days == 0 {
            return Err(invalid("horizon_days", "must be positive"));
        }
        if self.hotspot_bin_days == 0 {
            return Err(invalid("hotspot_bin_days", "must be positive"));
        }
        if self.errand_epochs == 0 || self.errand_epochs > 12 {
            return Err(invalid("errand_epochs", "must be between 1 and 12"));
        }
        for cell in &self.shared_space_cells {
            if cell[0] >= self.width || cell[1] >= self.height {
                return Err(invalid(
                    "shared_space_cells",
                    format!("{cell:?} outside the {}x{} grid", self.width, self.height),
                ));
            }
        }
        let mut sorted = self.shared_space_cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.shared_space_cells.len() {
            return Err(invalid("shared_space_cells", "duplicate cell"));
        }
        let free = self.width * self.height - self.shared_space_cells.len();
        if free == 0 {
            return Err(invalid("shared_space_cells", "no cells left for homes"));
        }
        if self.workplaces > free {
            return Err(invalid("workplaces", format!("at most {free} on this grid")));
        }
        Ok(())
    }
}
