//! TOML configuration shared by every subcommand. Each section is optional;
//! missing keys take the defaults below and command-line flags override
//! file values.
//!
//! ```toml
//! [grid]
//! obs_per_day = 390
//! session_minutes = 390.0
//!
//! [heston]
//! kappa = 5.0
//! theta = 0.0225
//!
//! [detector]
//! xi = 4.0
//! window_min = 30.0      # inf for the unbounded rule
//! min_span_min = 5.0
//!
//! [contamination]
//! kind = "pn"
//! theta_pn = 0.35
//! jump_size = 0.02
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, RegionRule, DEFAULT_VARPI};
use crate::error::{Error, Result};
use crate::ingest::{default_blocks, AnalyzeConfig, Block, LoadOptions, RescaleMode};
use crate::montecarlo::{Contamination, DEFAULT_MAX_DAYS, DEFAULT_PROXY_NOISE};
use crate::sim::{DbConfig, GridSnap, HestonConfig, PnConfig};
use crate::theory::{NuMode, TheoryConstants, SIEGMUND_RHO};

/// Scan start used when no warmup is configured and the window is unbounded.
pub const DEFAULT_SCAN_START_MIN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub obs_per_day: usize,
    pub session_minutes: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            obs_per_day: 390,
            session_minutes: 390.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub xi: f64,
    /// Maximum window in minutes; infinite selects the unbounded rule.
    pub window_min: f64,
    pub min_span_min: f64,
    pub varpi: f64,
    /// Alarms start after this many minutes; when absent each subcommand
    /// picks its own default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_min: Option<f64>,
    pub reset_on_alarm: bool,
    pub region_rule: RegionRule,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            xi: 4.0,
            window_min: 30.0,
            min_span_min: 0.0,
            varpi: DEFAULT_VARPI,
            warmup_min: None,
            reset_on_alarm: false,
            region_rule: RegionRule::Union,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationKind {
    #[default]
    None,
    Db,
    Pn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateUnits {
    /// Divided by `heston.days_per_year` like the other annualized inputs.
    #[default]
    Annual,
    Daily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationSection {
    pub kind: ContaminationKind,
    pub tau: f64,
    pub tau_bar: f64,
    pub c: f64,
    pub c_units: RateUnits,
    pub theta_db: f64,
    pub theta_pn: f64,
    pub eta: f64,
    pub jump_size: f64,
    pub snap: GridSnap,
}

impl Default for ContaminationSection {
    fn default() -> Self {
        Self {
            kind: ContaminationKind::None,
            tau: 0.25,
            tau_bar: 0.4,
            c: 3.0,
            c_units: RateUnits::Annual,
            theta_db: 0.75,
            theta_pn: 0.35,
            eta: -1.0,
            jump_size: 0.02,
            snap: GridSnap::Ceil,
        }
    }
}

impl ContaminationSection {
    pub fn build(&self, heston: &HestonConfig) -> Result<Contamination> {
        let out = match self.kind {
            ContaminationKind::None => Contamination::None,
            ContaminationKind::Db => {
                let c = match self.c_units {
                    RateUnits::Annual => self.c / heston.days_per_year,
                    RateUnits::Daily => self.c,
                };
                let db = DbConfig {
                    c,
                    tau: self.tau,
                    tau_bar: self.tau_bar,
                    theta_db: self.theta_db,
                };
                db.validate()?;
                Contamination::Db(db)
            }
            ContaminationKind::Pn => {
                let pn = PnConfig {
                    tau: self.tau,
                    tau_bar: self.tau_bar,
                    theta_pn: self.theta_pn,
                    eta: self.eta,
                    jump_size: self.jump_size,
                    snap: self.snap,
                };
                pn.validate()?;
                Contamination::Pn(pn)
            }
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub days: usize,
    pub seed: u64,
    /// Initial annualized variance; defaults to `heston.theta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    pub proxy_noise: f64,
    /// Label days with consecutive weekdays from this date.
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "date_or_string")]
    pub start_date: Option<NaiveDate>,
}

/// Accepts both a bare TOML date and a quoted ISO string.
fn date_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<NaiveDate>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Toml(t) => t.to_string(),
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d")
        .map(Some)
        .map_err(|e| serde::de::Error::custom(format!("bad date '{text}': {e}")))
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            days: 1,
            seed: 1,
            v0: None,
            proxy_noise: DEFAULT_PROXY_NOISE,
            start_date: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub reps: usize,
    pub max_days_per_rep: usize,
    /// Observations per FDR trial.
    pub ell: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            reps: 1000,
            max_days_per_rep: DEFAULT_MAX_DAYS,
            ell: 390,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub nu: NuMode,
    pub rho: f64,
    pub series_tol: f64,
    pub quad_tol: f64,
    pub ell: usize,
    /// Post-change drift for the delay formula; omitted when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        let c = TheoryConstants::default();
        Self {
            nu: NuMode::Exact,
            rho: SIEGMUND_RHO,
            series_tol: c.series_tol,
            quad_tol: c.quad_tol,
            ell: 390,
            mu: None,
        }
    }
}

impl TheorySection {
    pub fn constants(&self) -> TheoryConstants {
        TheoryConstants {
            rho: self.rho,
            series_tol: self.series_tol,
            quad_tol: self.quad_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub tv_window_min: f64,
    pub horizon_min: f64,
    pub bin_width_min: f64,
    pub rescale: RescaleMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minutes_filter: Option<usize>,
    pub allow_missing_sv: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclusion_file: Option<PathBuf>,
    pub blocks: Vec<Block>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            tv_window_min: 30.0,
            horizon_min: 60.0,
            bin_width_min: 5.0,
            rescale: RescaleMode::Mean,
            minutes_filter: None,
            allow_missing_sv: false,
            exclusion_file: None,
            blocks: default_blocks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub heston: HestonConfig,
    pub detector: DetectorSection,
    pub contamination: ContaminationSection,
    pub simulation: SimulationSection,
    pub montecarlo: MonteCarloSection,
    pub theory: TheorySection,
    pub ingest: IngestSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("unserializable config: {e}"))
    }

    /// Window in minutes, `None` for the unbounded rule.
    pub fn window_min(&self) -> Option<f64> {
        let w = self.detector.window_min;
        (w.is_finite()).then_some(w)
    }

    /// Warmup in minutes: the configured value, else `fallback`.
    pub fn warmup_min_or(&self, fallback: f64) -> f64 {
        self.detector.warmup_min.unwrap_or(fallback)
    }

    /// The first full window, or the default scan start for unbounded rules.
    pub fn window_warmup_min(&self) -> f64 {
        self.window_min().unwrap_or(DEFAULT_SCAN_START_MIN)
    }

    /// Detector settings for `obs_per_day` increments; `zeta` is a placeholder
    /// for callers that set it per day.
    pub fn detector_config(&self, obs_per_day: usize, warmup_min: f64, zeta: f64) -> Result<DetectorConfig> {
        let d = &self.detector;
        if d.window_min.is_nan() || d.window_min <= 0.0 {
            return Err(Error::config("window_min must be positive (inf for unbounded)"));
        }
        let mut cfg = DetectorConfig::from_minutes(
            d.xi,
            self.window_min(),
            d.min_span_min,
            obs_per_day,
            self.grid.session_minutes,
            zeta,
        )?;
        cfg.varpi = d.varpi;
        cfg.reset_on_alarm = d.reset_on_alarm;
        if !(warmup_min.is_finite() && warmup_min >= 0.0) {
            return Err(Error::config("warmup must be a non-negative number of minutes"));
        }
        cfg.warmup = (warmup_min * obs_per_day as f64 / self.grid.session_minutes).round() as usize;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            minutes_filter: self.ingest.minutes_filter,
            allow_missing_sv: self.ingest.allow_missing_sv,
            session_minutes: self.grid.session_minutes,
        }
    }

    pub fn analyze_config(&self, obs_per_day: usize) -> Result<AnalyzeConfig> {
        let detector = self.detector_config(obs_per_day, self.warmup_min_or(self.window_warmup_min()), 1.0)?;
        Ok(AnalyzeConfig {
            detector,
            region_rule: self.detector.region_rule,
            tv_window_min: self.ingest.tv_window_min,
            horizon_min: self.ingest.horizon_min,
            bin_width_min: self.ingest.bin_width_min,
            rescale: self.ingest.rescale,
            blocks: self.ingest.blocks.clone(),
            session_minutes: self.grid.session_minutes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.detector.window_min = f64::INFINITY;
        c.simulation.start_date = NaiveDate::from_ymd_opt(2019, 8, 30);
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let bare = Config::from_toml("[simulation]\nstart_date = 2019-08-30").unwrap();
        assert_eq!(bare.simulation.start_date, c.simulation.start_date);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::from_toml("[detector]\nthreshold = 4"), Err(Error::Config(_))));
    }

    #[test]
    fn detector_from_minutes() {
        let mut c = Config::from_toml("[detector]\nxi = 3.5\nwindow_min = 30\nmin_span_min = 5").unwrap();
        let d = c.detector_config(780, c.window_warmup_min(), 1.0).unwrap();
        assert_eq!((d.w_n, d.r_n, d.warmup), (Some(60), 10, 60));
        c.detector.window_min = f64::INFINITY;
        let d = c.detector_config(390, c.window_warmup_min(), 1.0).unwrap();
        assert_eq!((d.w_n, d.warmup), (None, 30));
        c.detector.window_min = -1.0;
        assert!(c.detector_config(390, 0.0, 1.0).is_err());
    }

    #[test]
    fn contamination_units() {
        let mut s = ContaminationSection {
            kind: ContaminationKind::Db,
            ..Default::default()
        };
        let h = HestonConfig::default();
        match s.build(&h).unwrap() {
            Contamination::Db(db) => assert_eq!(db.c, 3.0 / 252.0),
            other => panic!("{other:?}"),
        }
        s.c_units = RateUnits::Daily;
        match s.build(&h).unwrap() {
            Contamination::Db(db) => assert_eq!(db.c, 3.0),
            other => panic!("{other:?}"),
        }
        s.theta_db = 0.4;
        assert!(s.build(&h).is_err());
    }
}
