//! Pipeline configuration: a flat key/value TOML file whose every key can be
//! overridden by a command-line flag of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use drivenorm_core::features::FeatureParams;
use drivenorm_core::mapmatch::MatchParams;
use drivenorm_core::norms::{DayBinning, FlagParams, NormParams};
use drivenorm_core::signal::{FilterChoice, FrameOptions};
use drivenorm_core::synth::Archetype;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Str,
    Int,
    Float,
    Bool,
}

/// Every config key, its value kind and a one-line description. The flag
/// table is built from this list.
pub const KEYS: &[(&str, Kind, &str)] = &[
    ("corpus", Kind::Str, "corpus directory holding rides/<ride_id>/"),
    ("network", Kind::Str, "road network GeoJSON"),
    ("cache", Kind::Str, "match cache file; empty keeps the cache in memory"),
    ("out", Kind::Str, "output directory for stage artifacts"),
    ("filter", Kind::Str, "moving_average, l1_trend or tv"),
    ("filter_window", Kind::Float, "moving-average window in seconds"),
    ("filter_lambda", Kind::Float, "l1_trend / tv penalty; 0 uses the filter's default"),
    ("matcher", Kind::Str, "offline or fixture"),
    ("matcher_fixture", Kind::Str, "recorded request/response pairs for the fixture matcher"),
    ("fallback_offline", Kind::Bool, "use the offline matcher when the fixture has no answer"),
    ("match_radius_m", Kind::Float, "candidate search radius"),
    ("match_sigma_m", Kind::Float, "GPS error sigma for emission scores"),
    ("match_kappa", Kind::Float, "segment change cost"),
    ("match_rho", Kind::Float, "cost per metre of route/great-circle disagreement"),
    ("min_trips", Kind::Int, "distinct rides needed for a valid norm cell"),
    ("z_threshold", Kind::Float, "deviation flag threshold"),
    ("min_run", Kind::Int, "seconds a deviation must last to be flagged"),
    ("day_binning", Kind::Str, "weekday_weekend or seven_day"),
    ("hard_accel", Kind::Float, "hard acceleration threshold, m/s2"),
    ("hard_brake", Kind::Float, "hard braking threshold, m/s2 (negative)"),
    ("sharp_turn", Kind::Float, "sharp turn threshold on |lateral|, m/s2"),
    ("min_km", Kind::Float, "drivers with less matched distance are skipped"),
    ("k_min", Kind::Int, "smallest k on the elbow curve"),
    ("k_max", Kind::Int, "largest k on the elbow curve"),
    ("restarts", Kind::Int, "k-means restarts"),
    ("seed", Kind::Int, "seed for every random choice in the pipeline"),
    ("k", Kind::Int, "manual number of driver clusters; 0 selects from the elbow"),
    ("segment_k", Kind::Int, "number of segment clusters in the map report"),
    ("labels", Kind::Str, "driver_id,archetype CSV for purity stats; empty uses <corpus>/labels.csv if present"),
    ("report_rides", Kind::Str, "comma-separated ride ids for ride_accel.geojson; empty takes the first ride"),
    ("synth_grid", Kind::Int, "synthetic grid size in blocks"),
    ("synth_highway", Kind::Bool, "add a perimeter highway to the synthetic grid"),
    ("synth_archetypes", Kind::Str, "comma-separated archetype presets"),
    ("synth_drivers", Kind::Int, "drivers per archetype"),
    ("synth_rides", Kind::Int, "rides per driver"),
    ("synth_min_duration", Kind::Float, "shortest synthetic ride, seconds"),
    ("synth_max_duration", Kind::Float, "longest synthetic ride, seconds"),
    ("jobs", Kind::Int, "worker threads; 0 uses every core"),
];

pub fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, kind, _)| *kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: String,
    pub network: String,
    pub cache: String,
    pub out: String,
    pub filter: String,
    pub filter_window: f64,
    pub filter_lambda: f64,
    pub matcher: String,
    pub matcher_fixture: String,
    pub fallback_offline: bool,
    pub match_radius_m: f64,
    pub match_sigma_m: f64,
    pub match_kappa: f64,
    pub match_rho: f64,
    pub min_trips: i64,
    pub z_threshold: f64,
    pub min_run: i64,
    pub day_binning: String,
    pub hard_accel: f64,
    pub hard_brake: f64,
    pub sharp_turn: f64,
    pub min_km: f64,
    pub k_min: i64,
    pub k_max: i64,
    pub restarts: i64,
    pub seed: i64,
    pub k: i64,
    pub segment_k: i64,
    pub labels: String,
    pub report_rides: String,
    pub synth_grid: i64,
    pub synth_highway: bool,
    pub synth_archetypes: String,
    pub synth_drivers: i64,
    pub synth_rides: i64,
    pub synth_min_duration: f64,
    pub synth_max_duration: f64,
    pub jobs: i64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let m = MatchParams::default();
        let f = FeatureParams::default();
        Self {
            corpus: "corpus".into(),
            network: "network.geojson".into(),
            cache: String::new(),
            out: "out".into(),
            filter: "moving_average".into(),
            filter_window: drivenorm_core::signal::DEFAULT_WINDOW_S,
            filter_lambda: 0.0,
            matcher: "offline".into(),
            matcher_fixture: String::new(),
            fallback_offline: false,
            match_radius_m: m.radius_m,
            match_sigma_m: m.sigma_m,
            match_kappa: m.kappa,
            match_rho: m.rho,
            min_trips: drivenorm_core::norms::DEFAULT_MIN_TRIPS as i64,
            z_threshold: drivenorm_core::norms::DEFAULT_Z_THRESHOLD,
            min_run: drivenorm_core::norms::DEFAULT_MIN_RUN_S as i64,
            day_binning: "weekday_weekend".into(),
            hard_accel: f.hard_accel_mps2,
            hard_brake: f.hard_brake_mps2,
            sharp_turn: f.sharp_turn_mps2,
            min_km: f.min_km,
            k_min: 1,
            k_max: 10,
            restarts: drivenorm_core::cluster::DEFAULT_RESTARTS as i64,
            seed: 7,
            k: 0,
            segment_k: 2,
            labels: String::new(),
            report_rides: String::new(),
            synth_grid: 8,
            synth_highway: true,
            synth_archetypes: "conformer,slow_cautious,aggressive,sharp_turner,mild_fast".into(),
            synth_drivers: 20,
            synth_rides: 3,
            synth_min_duration: 600.0,
            synth_max_duration: 900.0,
            jobs: 0,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Converts a flag value to the TOML value its key expects.
pub fn parse_flag(key: &str, text: &str) -> Result<toml::Value, CliError> {
    let kind = kind_of(key).ok_or_else(|| invalid(key, "unknown key"))?;
    Ok(match kind {
        Kind::Str => toml::Value::String(text.to_string()),
        Kind::Int => toml::Value::Integer(text.parse().map_err(|_| invalid(key, format!("expected an integer, got {text:?}")))?),
        Kind::Float => toml::Value::Float(text.parse().map_err(|_| invalid(key, format!("expected a number, got {text:?}")))?),
        Kind::Bool => toml::Value::Boolean(text.parse().map_err(|_| invalid(key, format!("expected true or false, got {text:?}")))?),
    })
}

impl PipelineConfig {
    /// Reads `path` (if any), applies `overrides` and checks every range.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid("config", format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| invalid("config", format!("{}: {}", p.display(), e.message())))?
            }
        };
        Self::load_table(table, overrides)
    }

    fn load_table(mut table: toml::Table, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        // integers are accepted where a number is expected
        let ints_as_floats: Vec<(String, f64)> = table
            .iter()
            .filter(|(k, _)| kind_of(k) == Some(Kind::Float))
            .filter_map(|(k, v)| v.as_integer().map(|i| (k.clone(), i as f64)))
            .collect();
        for (k, f) in ints_as_floats {
            table.insert(k, toml::Value::Float(f));
        }
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        for (k, v) in &table {
            let kind = kind_of(k).ok_or_else(|| invalid(k, "unknown key"))?;
            let ok = matches!(
                (kind, v),
                (Kind::Str, toml::Value::String(_))
                    | (Kind::Int, toml::Value::Integer(_))
                    | (Kind::Float, toml::Value::Float(_))
                    | (Kind::Bool, toml::Value::Boolean(_))
            );
            if !ok {
                return Err(invalid(k, format!("expected {:?}, got {}", kind, v.type_str())));
            }
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |k: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(k, format!("must be positive, got {v}")))
            }
        };
        let at_least = |k: &str, v: i64, min: i64| {
            if v >= min {
                Ok(())
            } else {
                Err(invalid(k, format!("must be at least {min}, got {v}")))
            }
        };
        for (k, v) in [("corpus", &self.corpus), ("network", &self.network), ("out", &self.out)] {
            if v.is_empty() {
                return Err(invalid(k, "must not be empty"));
            }
        }
        self.filter_choice()?;
        self.binning()?;
        match self.matcher.as_str() {
            "offline" => {}
            "fixture" => {
                if self.matcher_fixture.is_empty() {
                    return Err(invalid("matcher_fixture", "required when matcher = \"fixture\""));
                }
            }
            other => return Err(invalid("matcher", format!("expected offline or fixture, got {other:?}"))),
        }
        positive("filter_window", self.filter_window)?;
        if !(self.filter_lambda.is_finite() && self.filter_lambda >= 0.0) {
            return Err(invalid("filter_lambda", "must be zero or positive"));
        }
        positive("match_radius_m", self.match_radius_m)?;
        positive("match_sigma_m", self.match_sigma_m)?;
        for (k, v) in [("match_kappa", self.match_kappa), ("match_rho", self.match_rho), ("min_km", self.min_km)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(k, format!("must be zero or positive, got {v}")));
            }
        }
        at_least("min_trips", self.min_trips, 1)?;
        positive("z_threshold", self.z_threshold)?;
        at_least("min_run", self.min_run, 1)?;
        positive("hard_accel", self.hard_accel)?;
        positive("-hard_brake", -self.hard_brake).map_err(|_| invalid("hard_brake", "must be negative"))?;
        positive("sharp_turn", self.sharp_turn)?;
        at_least("k_min", self.k_min, 1)?;
        at_least("k_max", self.k_max, self.k_min)?;
        at_least("restarts", self.restarts, 1)?;
        at_least("seed", self.seed, 0)?;
        at_least("k", self.k, 0)?;
        at_least("segment_k", self.segment_k, 1)?;
        at_least("synth_grid", self.synth_grid, 2)?;
        at_least("synth_drivers", self.synth_drivers, 1)?;
        at_least("synth_rides", self.synth_rides, 1)?;
        positive("synth_min_duration", self.synth_min_duration)?;
        if self.synth_max_duration < self.synth_min_duration {
            return Err(invalid("synth_max_duration", "must not be below synth_min_duration"));
        }
        self.archetypes()?;
        at_least("jobs", self.jobs, 0)?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn filter_choice(&self) -> Result<FilterChoice, CliError> {
        let lambda = |default: f64| if self.filter_lambda > 0.0 { self.filter_lambda } else { default };
        match self.filter.as_str() {
            "moving_average" => Ok(FilterChoice::MovingAverage {
                window: self.filter_window,
            }),
            "l1_trend" => Ok(FilterChoice::L1Trend {
                lambda: lambda(FilterChoice::DEFAULT_L1_LAMBDA),
            }),
            "tv" => Ok(FilterChoice::TotalVariation {
                lambda: lambda(FilterChoice::DEFAULT_TV_LAMBDA),
            }),
            other => Err(invalid("filter", format!("expected moving_average, l1_trend or tv, got {other:?}"))),
        }
    }

    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions {
            filter: self.filter_choice().expect("validated"),
        }
    }

    pub fn binning(&self) -> Result<DayBinning, CliError> {
        match self.day_binning.as_str() {
            "weekday_weekend" => Ok(DayBinning::WeekdayWeekend),
            "seven_day" => Ok(DayBinning::SevenDay),
            other => Err(invalid("day_binning", format!("expected weekday_weekend or seven_day, got {other:?}"))),
        }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            radius_m: self.match_radius_m,
            sigma_m: self.match_sigma_m,
            kappa: self.match_kappa,
            rho: self.match_rho,
            ..MatchParams::default()
        }
    }

    pub fn norm_params(&self) -> NormParams {
        NormParams {
            min_trips: self.min_trips as usize,
            binning: self.binning().expect("validated"),
        }
    }

    pub fn flag_params(&self) -> FlagParams {
        FlagParams {
            z_threshold: self.z_threshold,
            min_run_s: self.min_run as usize,
        }
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            hard_accel_mps2: self.hard_accel,
            hard_brake_mps2: self.hard_brake,
            sharp_turn_mps2: self.sharp_turn,
            min_km: self.min_km,
        }
    }

    pub fn archetypes(&self) -> Result<Vec<Archetype>, CliError> {
        let names: Vec<&str> = self.synth_archetypes.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(invalid("synth_archetypes", "must name at least one preset"));
        }
        names
            .into_iter()
            .map(|n| Archetype::preset(n).ok_or_else(|| invalid("synth_archetypes", format!("unknown preset {n:?}"))))
            .collect()
    }

    pub fn ride_list(&self) -> Vec<String> {
        self.report_rides.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }

    /// The values of `keys` as a JSON object, for stage manifests.
    pub fn subset(&self, keys: &[&str]) -> serde_json::Value {
        let all = serde_json::to_value(self).expect("config serializes");
        let mut out = serde_json::Map::new();
        for k in keys {
            out.insert(k.to_string(), all[*k].clone());
        }
        serde_json::Value::Object(out)
    }
}
