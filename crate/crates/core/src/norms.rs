//! Per-segment, per-time-bin distributions of speed and acceleration, and
//! flags for ride seconds that stray far from them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{DateTime, Datelike, Duration, FixedOffset, Timelike, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{kmeans, standardize_columns, ClusterError, ClusterModel, KMeansOptions};
use crate::geo::LatLon;
use crate::ingest::{DriverId, RideId};
use crate::mapmatch::MatchedTrajectory;
use crate::network::SegmentId;
use crate::signal::VehicleKinematics;
use crate::stats::{quantile_sorted, RunningStats};

pub const DEFAULT_MIN_TRIPS: usize = 40;
pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;
pub const DEFAULT_MIN_RUN_S: usize = 3;
/// Cells whose std falls at or below this (native units) are never flagged.
pub const STD_EPS: f64 = 0.1;
pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayKind {
    Weekday,
    Weekend,
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl DayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DayKind::Weekday => "weekday",
            DayKind::Weekend => "weekend",
            DayKind::Mon => "mon",
            DayKind::Tue => "tue",
            DayKind::Wed => "wed",
            DayKind::Thu => "thu",
            DayKind::Fri => "fri",
            DayKind::Sat => "sat",
            DayKind::Sun => "sun",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayBinning {
    #[default]
    WeekdayWeekend,
    SevenDay,
}

/// A 30-minute slot of local civil time on a kind of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeBin {
    pub day_kind: DayKind,
    pub slot: u8,
}

impl TimeBin {
    pub const SLOTS: u8 = 48;

    pub fn new(day_kind: DayKind, slot: u8) -> Option<Self> {
        (slot < Self::SLOTS).then_some(Self { day_kind, slot })
    }

    /// The bin of a local timestamp; the offset carried by `at` defines "local".
    pub fn of(at: DateTime<FixedOffset>, binning: DayBinning) -> Self {
        let wd = at.weekday();
        let day_kind = match binning {
            DayBinning::WeekdayWeekend => match wd {
                Weekday::Sat | Weekday::Sun => DayKind::Weekend,
                _ => DayKind::Weekday,
            },
            DayBinning::SevenDay => match wd {
                Weekday::Mon => DayKind::Mon,
                Weekday::Tue => DayKind::Tue,
                Weekday::Wed => DayKind::Wed,
                Weekday::Thu => DayKind::Thu,
                Weekday::Fri => DayKind::Fri,
                Weekday::Sat => DayKind::Sat,
                Weekday::Sun => DayKind::Sun,
            },
        };
        let slot = (at.hour() * 2 + at.minute() / 30) as u8;
        Self { day_kind, slot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Speed,
    LonAccel,
    LatAccel,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Speed, Quantity::LonAccel, Quantity::LatAccel];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Speed => "speed",
            Quantity::LonAccel => "lon_accel",
            Quantity::LatAccel => "lat_accel",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// One ride on the 1 Hz grid with the segment under each second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedKinematics {
    pub ride_id: RideId,
    pub driver_id: DriverId,
    pub start_time: DateTime<FixedOffset>,
    pub t: Vec<f64>,
    pub segment: Vec<Option<SegmentId>>,
    /// Snapped position for matched seconds.
    pub pos: Vec<Option<LatLon>>,
    pub speed: Vec<f64>,
    pub lon_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
    pub yaw_rate: Option<Vec<f64>>,
    pub gap: Vec<bool>,
}

impl MatchedKinematics {
    /// Attaches to each kinematic second the match of the GPS fix nearest in
    /// time, if one lies within half a second.
    pub fn align(
        kin: &VehicleKinematics,
        traj: &MatchedTrajectory,
        driver_id: DriverId,
        start_time: DateTime<FixedOffset>,
    ) -> Self {
        let mut segment = Vec::with_capacity(kin.len());
        let mut pos = Vec::with_capacity(kin.len());
        let mut j = 0;
        for &t in &kin.t {
            while j + 1 < traj.points.len() && traj.points[j + 1].t <= t {
                j += 1;
            }
            let best = [j, j + 1]
                .into_iter()
                .filter(|&i| i < traj.points.len())
                .filter(|&i| (traj.points[i].t - t).abs() <= 0.5)
                .min_by(|&a, &b| {
                    (traj.points[a].t - t)
                        .abs()
                        .total_cmp(&(traj.points[b].t - t).abs())
                        .then(a.cmp(&b))
                });
            let m = best.and_then(|i| traj.matched[i]);
            segment.push(m.map(|m| m.segment_id));
            pos.push(m.map(|m| m.snapped));
        }
        Self {
            ride_id: kin.ride_id.clone(),
            driver_id,
            start_time,
            t: kin.t.clone(),
            segment,
            pos,
            speed: kin.speed.clone(),
            lon_accel: kin.lon_accel.clone(),
            lat_accel: kin.lat_accel.clone(),
            yaw_rate: kin.yaw_rate.clone(),
            gap: kin.gap.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn value(&self, q: Quantity, i: usize) -> f64 {
        match q {
            Quantity::Speed => self.speed[i],
            Quantity::LonAccel => self.lon_accel[i],
            Quantity::LatAccel => self.lat_accel[i],
        }
    }

    /// Segment of second `i` if it is matched and not a gap.
    pub fn usable_segment(&self, i: usize) -> Option<SegmentId> {
        if self.gap[i] {
            None
        } else {
            self.segment[i]
        }
    }

    pub fn bin_at(&self, i: usize, binning: DayBinning) -> TimeBin {
        let at = self.start_time + Duration::milliseconds((self.t[i] * 1000.0).round() as i64);
        TimeBin::of(at, binning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub mean: f64,
    pub std: f64,
    /// At [`QUANTILES`].
    pub quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentNorm {
    pub segment_id: SegmentId,
    pub bin: TimeBin,
    pub trip_count: usize,
    pub sample_count: usize,
    pub valid: bool,
    /// Indexed like [`Quantity::ALL`].
    pub stats: [QuantityStats; 3],
}

impl SegmentNorm {
    pub fn get(&self, q: Quantity) -> &QuantityStats {
        &self.stats[q.index()]
    }
}

/// All-bins summary of a segment over its valid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    pub segment_id: SegmentId,
    pub sample_count: usize,
    pub median_speed: f64,
    pub p95_speed: f64,
    pub median_abs_lon_accel: f64,
    pub median_abs_lat_accel: f64,
}

impl SegmentProfile {
    pub const FEATURES: [&'static str; 4] = [
        "median_speed",
        "p95_speed",
        "median_abs_lon_accel",
        "median_abs_lat_accel",
    ];

    pub fn vector(&self) -> Vec<f64> {
        vec![
            self.median_speed,
            self.p95_speed,
            self.median_abs_lon_accel,
            self.median_abs_lat_accel,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min_trips: usize,
    pub binning: DayBinning,
}

impl Default for NormParams {
    fn default() -> Self {
        Self {
            min_trips: DEFAULT_MIN_TRIPS,
            binning: DayBinning::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormsTable {
    pub params: NormParams,
    /// Sorted by `(segment_id, bin)`.
    pub cells: Vec<SegmentNorm>,
    /// Sorted by segment id; only segments with at least one valid cell.
    pub profiles: Vec<SegmentProfile>,
}

impl NormsTable {
    pub fn cell(&self, segment: SegmentId, bin: TimeBin) -> Option<&SegmentNorm> {
        self.cells
            .binary_search_by(|c| (c.segment_id, c.bin).cmp(&(segment, bin)))
            .ok()
            .map(|i| &self.cells[i])
    }

    pub fn valid_cell(&self, segment: SegmentId, bin: TimeBin) -> Option<&SegmentNorm> {
        self.cell(segment, bin).filter(|c| c.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "segment_id", "day_kind", "slot", "quantity", "trip_count", "sample_count", "mean", "std",
            "q05", "q25", "q50", "q75", "q95", "valid",
        ])?;
        for c in &self.cells {
            for q in Quantity::ALL {
                let s = c.get(q);
                let mut rec = vec![
                    c.segment_id.0.to_string(),
                    c.bin.day_kind.as_str().to_string(),
                    c.bin.slot.to_string(),
                    q.as_str().to_string(),
                    c.trip_count.to_string(),
                    c.sample_count.to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                ];
                rec.extend(s.quantiles.iter().map(|x| x.to_string()));
                rec.push(c.valid.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
struct CellAcc {
    rides: BTreeSet<RideId>,
    samples: [Vec<f64>; 3],
}

type Cells = BTreeMap<(SegmentId, TimeBin), CellAcc>;

fn accumulate(traj: &MatchedKinematics, binning: DayBinning) -> Cells {
    let mut cells = Cells::new();
    for i in 0..traj.len() {
        let Some(seg) = traj.usable_segment(i) else { continue };
        let acc = cells.entry((seg, traj.bin_at(i, binning))).or_default();
        acc.rides.insert(traj.ride_id.clone());
        for q in Quantity::ALL {
            acc.samples[q.index()].push(traj.value(q, i));
        }
    }
    cells
}

fn merge(mut a: Cells, b: Cells) -> Cells {
    for (k, v) in b {
        let e = a.entry(k).or_default();
        e.rides.extend(v.rides);
        for (dst, src) in e.samples.iter_mut().zip(v.samples) {
            dst.extend(src);
        }
    }
    a
}

fn describe(sorted: &[f64]) -> QuantityStats {
    let mut rs = RunningStats::new();
    for &x in sorted {
        rs.push(x);
    }
    QuantityStats {
        mean: rs.mean(),
        std: rs.std(),
        quantiles: QUANTILES.map(|q| quantile_sorted(sorted, q)),
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Groups matched seconds by segment and time bin. A cell is valid when at
/// least `min_trips` distinct rides contribute to it. Statistics are taken
/// over sorted samples, so the table does not depend on input order.
pub fn build_norms(trajectories: &[MatchedKinematics], params: &NormParams) -> NormsTable {
    let cells = trajectories
        .par_iter()
        .map(|t| accumulate(t, params.binning))
        .reduce(Cells::new, merge);

    let mut pooled: BTreeMap<SegmentId, [Vec<f64>; 3]> = BTreeMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for ((segment_id, bin), acc) in cells {
        let valid = acc.rides.len() >= params.min_trips;
        let samples = acc.samples.map(sorted);
        if valid {
            let p = pooled.entry(segment_id).or_default();
            p[0].extend_from_slice(&samples[0]);
            p[1].extend(samples[1].iter().map(|x| x.abs()));
            p[2].extend(samples[2].iter().map(|x| x.abs()));
        }
        out.push(SegmentNorm {
            segment_id,
            bin,
            trip_count: acc.rides.len(),
            sample_count: samples[0].len(),
            valid,
            stats: [describe(&samples[0]), describe(&samples[1]), describe(&samples[2])],
        });
    }
    let profiles = pooled
        .into_iter()
        .map(|(segment_id, p)| {
            let [speed, lon, lat] = p.map(sorted);
            SegmentProfile {
                segment_id,
                sample_count: speed.len(),
                median_speed: quantile_sorted(&speed, 0.5),
                p95_speed: quantile_sorted(&speed, 0.95),
                median_abs_lon_accel: quantile_sorted(&lon, 0.5),
                median_abs_lat_accel: quantile_sorted(&lat, 0.5),
            }
        })
        .collect();
    NormsTable {
        params: *params,
        cells: out,
        profiles,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Above => "above",
            Direction::Below => "below",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationFlag {
    pub ride_id: RideId,
    pub segment_id: SegmentId,
    pub bin: TimeBin,
    pub quantity: Quantity,
    pub t_start: f64,
    pub t_end: f64,
    /// Observed value at the run's largest |z|.
    pub value: f64,
    pub z_score: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagParams {
    pub z_threshold: f64,
    pub min_run_s: usize,
}

impl Default for FlagParams {
    fn default() -> Self {
        Self {
            z_threshold: DEFAULT_Z_THRESHOLD,
            min_run_s: DEFAULT_MIN_RUN_S,
        }
    }
}

struct Run {
    segment: SegmentId,
    bin: TimeBin,
    t_start: f64,
    t_end: f64,
    len: usize,
    value: f64,
    z: f64,
}

/// Emits one flag per maximal run of at least `min_run_s` consecutive seconds
/// on the same cell with `|z| >= z_threshold`. Seconds on invalid cells, on
/// cells with std at or below [`STD_EPS`], or in gaps end any open run.
pub fn flag_deviations(traj: &MatchedKinematics, norms: &NormsTable, params: &FlagParams) -> Vec<DeviationFlag> {
    let mut flags = Vec::new();
    for q in Quantity::ALL {
        let mut run: Option<Run> = None;
        let close = |run: &mut Option<Run>, flags: &mut Vec<DeviationFlag>| {
            if let Some(r) = run.take() {
                if r.len >= params.min_run_s {
                    flags.push(DeviationFlag {
                        ride_id: traj.ride_id.clone(),
                        segment_id: r.segment,
                        bin: r.bin,
                        quantity: q,
                        t_start: r.t_start,
                        t_end: r.t_end,
                        value: r.value,
                        z_score: r.z,
                        direction: if r.z > 0.0 { Direction::Above } else { Direction::Below },
                    });
                }
            }
        };
        for i in 0..traj.len() {
            let hit = traj.usable_segment(i).and_then(|seg| {
                let bin = traj.bin_at(i, norms.params.binning);
                let cell = norms.valid_cell(seg, bin)?;
                let s = cell.get(q);
                if s.std <= STD_EPS {
                    return None;
                }
                let v = traj.value(q, i);
                let z = (v - s.mean) / s.std;
                (z.abs() >= params.z_threshold).then_some((seg, bin, v, z))
            });
            match hit {
                Some((seg, bin, v, z)) => {
                    let extends = run
                        .as_ref()
                        .is_some_and(|r| r.segment == seg && r.bin == bin && traj.t[i] - r.t_end <= 1.0 + 1e-9);
                    if !extends {
                        close(&mut run, &mut flags);
                        run = Some(Run {
                            segment: seg,
                            bin,
                            t_start: traj.t[i],
                            t_end: traj.t[i],
                            len: 1,
                            value: v,
                            z,
                        });
                    } else if let Some(r) = run.as_mut() {
                        r.t_end = traj.t[i];
                        r.len += 1;
                        if z.abs() > r.z.abs() {
                            r.z = z;
                            r.value = v;
                        }
                    }
                }
                None => close(&mut run, &mut flags),
            }
        }
        close(&mut run, &mut flags);
    }
    flags.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.quantity.cmp(&b.quantity))
    });
    flags
}

pub fn write_flags_csv(flags: &[DeviationFlag], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "ride_id", "segment_id", "day_kind", "slot", "quantity", "t_start", "t_end", "extreme_value",
        "z_score", "direction",
    ])?;
    for f in flags {
        w.write_record([
            f.ride_id.as_str().to_string(),
            f.segment_id.0.to_string(),
            f.bin.day_kind.as_str().to_string(),
            f.bin.slot.to_string(),
            f.quantity.as_str().to_string(),
            f.t_start.to_string(),
            f.t_end.to_string(),
            f.value.to_string(),
            f.z_score.to_string(),
            f.direction.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum NormsError {
    #[error("need at least {needed} valid segments, have {have}")]
    TooFewSegments { needed: usize, have: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentClusterModel {
    pub segment_ids: Vec<SegmentId>,
    /// Cluster index per entry of `segment_ids`.
    pub labels: Vec<usize>,
    pub model: ClusterModel,
}

impl SegmentClusterModel {
    pub fn label_of(&self, id: SegmentId) -> Option<usize> {
        self.segment_ids.binary_search(&id).ok().map(|i| self.labels[i])
    }
}

/// k-means over standardized segment profiles.
pub fn cluster_segments(norms: &NormsTable, k: usize, opts: &KMeansOptions) -> Result<SegmentClusterModel, NormsError> {
    if norms.profiles.len() < k.max(1) {
        return Err(NormsError::TooFewSegments {
            needed: k.max(1),
            have: norms.profiles.len(),
        });
    }
    let rows: Vec<Vec<f64>> = norms.profiles.iter().map(|p| p.vector()).collect();
    let (z, _) = standardize_columns(&rows);
    let model = kmeans(&z, k, opts)?;
    Ok(SegmentClusterModel {
        segment_ids: norms.profiles.iter().map(|p| p.segment_id).collect(),
        labels: model.assignments.clone(),
        model,
    })
}
