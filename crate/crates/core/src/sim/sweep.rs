use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, Intervention, ScenarioConfig};
use super::output::SimMetrics;
use super::run_scenario;
use crate::par::prelude::*;

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Cartesian product of parameter values over a base scenario. An empty list
/// keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub adoption: Vec<f64>,
    pub interventions: Vec<Intervention>,
    pub test_delay_days: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.base.validate()?;
        for cfg in spec.points() {
            cfg.validate()?;
        }
        Ok(spec)
    }

    /// Every configuration in the sweep, adoption-major.
    pub fn points(&self) -> Vec<ScenarioConfig> {
        fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for p in or_base(&self.adoption, self.base.adoption) {
            for mode in or_base(&self.interventions, self.base.intervention) {
                for delay in or_base(&self.test_delay_days, self.base.test_delay_days) {
                    for seed in or_base(&self.seeds, self.base.seed) {
                        out.push(ScenarioConfig {
                            adoption: p,
                            intervention: mode,
                            test_delay_days: delay,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub adoption: f64,
    pub intervention: Intervention,
    pub test_delay_days: f64,
    pub seed: u64,
    pub metrics: SimMetrics,
}

/// Runs every point of the sweep, in parallel when enabled. Rows come back in
/// the order of [`SweepSpec::points`].
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    let points = spec.points();
    for cfg in &points {
        cfg.validate()?;
    }
    let rows = points
        .into_par_iter()
        .map(|cfg| {
            let row = (cfg.adoption, cfg.intervention, cfg.test_delay_days, cfg.seed);
            let out = run_scenario(cfg).expect("validated above");
            SweepRow {
                adoption: row.0,
                intervention: row.1,
                test_delay_days: row.2,
                seed: row.3,
                metrics: out.metrics,
            }
        })
        .collect();
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "adoption,intervention,test_delay_days,seed,attack_rate,infections,traced_fraction,\
         hotspot_recall,hotspot_precision,quarantine_person_days,peak_infectious,r_eff_gen0,r_eff_gen1\n",
    );
    for row in rows {
        let m = &row.metrics;
        let r = |g: usize| m.r_eff_by_generation.get(g).map(|r| format!("{r:.4}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:.4},{},{:.4},{:.4},{:.4},{:.2},{},{},{}",
            row.adoption,
            row.intervention,
            row.test_delay_days,
            row.seed,
            m.attack_rate,
            m.infections,
            m.traced_fraction,
            m.hotspot_recall,
            m.hotspot_precision,
            m.quarantine_person_days,
            m.peak_infectious,
            r(0),
            r(1)
        )
        .unwrap();
    }
    out
}
