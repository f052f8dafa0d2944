//! Per-driver behavioral feature vectors and their standardization.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::column_stats;
use crate::ingest::DriverId;
use crate::norms::{MatchedKinematics, NormsTable, Quantity, STD_EPS};
use crate::stats::quantile;

pub const FEATURE_NAMES: [&str; 10] = [
    "mean_speed_ratio",
    "p95_speed_ratio",
    "hard_accel_rate",
    "hard_brake_rate",
    "sharp_turn_rate",
    "mean_abs_lat_accel",
    "mean_abs_lon_accel",
    "mean_abs_jerk",
    "brake_z_p95",
    "distance_km",
];

/// Columns whose std falls below this are dropped by [`standardize`].
pub const CONSTANT_STD: f64 = 1e-12;
/// Cells slower than this on average are left out of the speed ratios.
pub const MIN_CELL_SPEED_MPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub hard_accel_mps2: f64,
    pub hard_brake_mps2: f64,
    pub sharp_turn_mps2: f64,
    pub min_km: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            hard_accel_mps2: 2.5,
            hard_brake_mps2: -3.0,
            sharp_turn_mps2: 3.0,
            min_km: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverFeatures {
    pub driver_id: DriverId,
    /// In [`FEATURE_NAMES`] order.
    pub values: [f64; 10],
}

impl DriverFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDriver {
    pub driver_id: DriverId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSet {
    pub features: Vec<DriverFeatures>,
    pub skipped: Vec<SkippedDriver>,
}

impl FeatureSet {
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["driver_id"];
        header.extend(FEATURE_NAMES);
        w.write_record(&header)?;
        for f in &self.features {
            let mut rec = vec![f.driver_id.as_str().to_string()];
            rec.extend(f.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_skipped_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["driver_id", "reason"])?;
        for s in &self.skipped {
            w.write_record([s.driver_id.as_str(), s.reason.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the features CSV written by [`FeatureSet::write_csv`].
pub fn read_features_csv(input: impl std::io::Read) -> Result<Vec<DriverFeatures>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let expected: Vec<&str> = std::iter::once("driver_id").chain(FEATURE_NAMES).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(format!("unexpected header {:?}", header));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let driver_id = DriverId::new(&rec[0]).map_err(|e| e.to_string())?;
        let mut values = [0.0; 10];
        for (j, v) in values.iter_mut().enumerate() {
            *v = rec[j + 1]
                .parse()
                .map_err(|e| format!("row {}: {}: {e}", i + 2, FEATURE_NAMES[j]))?;
        }
        out.push(DriverFeatures { driver_id, values });
    }
    Ok(out)
}

#[derive(Default)]
struct Acc {
    metres: f64,
    seconds: usize,
    ratios: Vec<f64>,
    hard_accel: usize,
    hard_brake: usize,
    sharp_turn: usize,
    abs_lat: f64,
    abs_lon: f64,
    jerk_sum: f64,
    jerk_n: usize,
    brake_z: Vec<f64>,
}

impl Acc {
    fn ride(&mut self, r: &MatchedKinematics, norms: &NormsTable, p: &FeatureParams) {
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..r.len() {
            let Some(seg) = r.usable_segment(i) else {
                prev = None;
                continue;
            };
            let (v, lon, lat) = (r.speed[i], r.lon_accel[i], r.lat_accel[i]);
            self.metres += v;
            self.seconds += 1;
            self.abs_lat += lat.abs();
            self.abs_lon += lon.abs();
            self.hard_accel += usize::from(lon > p.hard_accel_mps2);
            self.hard_brake += usize::from(lon < p.hard_brake_mps2);
            self.sharp_turn += usize::from(lat.abs() > p.sharp_turn_mps2);
            if let Some((t0, a0)) = prev {
                if (r.t[i] - t0 - 1.0).abs() < 1e-9 {
                    self.jerk_sum += (lon - a0).abs();
                    self.jerk_n += 1;
                }
            }
            prev = Some((r.t[i], lon));
            if let Some(cell) = norms.valid_cell(seg, r.bin_at(i, norms.params.binning)) {
                let sp = cell.get(Quantity::Speed);
                if sp.mean > MIN_CELL_SPEED_MPS {
                    self.ratios.push(v / sp.mean);
                }
                let la = cell.get(Quantity::LonAccel);
                if lon < 0.0 && la.std > STD_EPS {
                    self.brake_z.push(-(lon - la.mean) / la.std);
                }
            }
        }
    }

    fn finish(self) -> [f64; 10] {
        let km = self.metres / 1000.0;
        let per100 = |n: usize| if km > 0.0 { n as f64 * 100.0 / km } else { 0.0 };
        let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { 0.0 };
        let (ratio_mean, ratio_p95) = if self.ratios.is_empty() {
            (0.0, 0.0)
        } else {
            (
                self.ratios.iter().sum::<f64>() / self.ratios.len() as f64,
                quantile(&self.ratios, 0.95),
            )
        };
        let brake = if self.brake_z.is_empty() {
            0.0
        } else {
            quantile(&self.brake_z, 0.95)
        };
        [
            ratio_mean,
            ratio_p95,
            per100(self.hard_accel),
            per100(self.hard_brake),
            per100(self.sharp_turn),
            mean(self.abs_lat, self.seconds),
            mean(self.abs_lon, self.seconds),
            mean(self.jerk_sum, self.jerk_n),
            brake,
            km,
        ]
    }
}

/// Features per driver over matched, non-gap seconds. Event rates count the
/// seconds spent beyond each threshold, per 100 km. `brake_z_p95` is the 95th
/// percentile of `−z` over braking seconds, so harder-than-norm braking is
/// positive. Drivers below `min_km` are skipped.
pub fn extract_driver_features(
    rides: &[(DriverId, Vec<MatchedKinematics>)],
    norms: &NormsTable,
    params: &FeatureParams,
) -> FeatureSet {
    let results: Vec<Result<DriverFeatures, SkippedDriver>> = rides
        .par_iter()
        .map(|(driver_id, list)| {
            let mut ordered: Vec<&MatchedKinematics> = list.iter().collect();
            ordered.sort_by(|a, b| a.ride_id.cmp(&b.ride_id));
            let mut acc = Acc::default();
            for r in ordered {
                acc.ride(r, norms, params);
            }
            let values = acc.finish();
            let km = values[9];
            if km < params.min_km {
                Err(SkippedDriver {
                    driver_id: driver_id.clone(),
                    reason: format!("matched distance {km:.3} km below {} km", params.min_km),
                })
            } else {
                Ok(DriverFeatures {
                    driver_id: driver_id.clone(),
                    values,
                })
            }
        })
        .collect();
    let mut set = FeatureSet::default();
    for r in results {
        match r {
            Ok(f) => set.features.push(f),
            Err(s) => set.skipped.push(s),
        }
    }
    set
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("standardizing needs at least 2 drivers, got {0}")]
    TooFewDrivers(usize),
    #[error("every feature column is constant")]
    EmptyAfterStandardize,
}

/// Raw features plus their z-scored, non-constant columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub driver_ids: Vec<DriverId>,
    pub raw_names: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Standardized surviving columns, one row per driver.
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_raw(driver_ids: Vec<DriverId>, names: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self, FeatureError> {
        if raw.len() < 2 {
            return Err(FeatureError::TooFewDrivers(raw.len()));
        }
        let stats = column_stats(&raw);
        let keep: Vec<usize> = (0..names.len()).filter(|&j| stats[j].1 >= CONSTANT_STD).collect();
        if keep.is_empty() {
            return Err(FeatureError::EmptyAfterStandardize);
        }
        let rows = raw
            .iter()
            .map(|r| keep.iter().map(|&j| (r[j] - stats[j].0) / stats[j].1).collect())
            .collect();
        Ok(Self {
            column_names: keep.iter().map(|&j| names[j].clone()).collect(),
            dropped_columns: (0..names.len())
                .filter(|j| !keep.contains(j))
                .map(|j| names[j].clone())
                .collect(),
            means: keep.iter().map(|&j| stats[j].0).collect(),
            stds: keep.iter().map(|&j| stats[j].1).collect(),
            driver_ids,
            raw_names: names,
            raw,
            rows,
        })
    }
}

/// Z-scores every feature column over the drivers, dropping constant ones.
pub fn standardize(features: &[DriverFeatures]) -> Result<FeatureMatrix, FeatureError> {
    FeatureMatrix::from_raw(
        features.iter().map(|f| f.driver_id.clone()).collect(),
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        features.iter().map(|f| f.values.to_vec()).collect(),
    )
}
