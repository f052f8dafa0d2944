//! Phone-frame to vehicle-frame conversion.
//!
//! The phone's mounting is unknown. Gravity shows up as the accelerometer axis
//! with the largest median; of the two remaining axes, the one that best tracks
//! the GPS speed derivative is longitudinal. Lateral is whichever other axis
//! varies most inside turn windows. Sign conventions:
//! positive longitudinal is forward acceleration, positive lateral is leftward.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    l1_trend_filter, moving_average, resample_to_1hz, tv_denoise, FilterChoice, GridSeries,
    Series, SignalError, DEFAULT_WINDOW_S,
};
use crate::ingest::{Channel, Ride, RideId};
use crate::stats::{median, pearson};

pub const STANDARD_GRAVITY: f64 = 9.80665;
const MIN_TURN_WINDOWS: usize = 3;
/// Below this many samples outside turn windows the whole ride is used.
const MIN_STRAIGHT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhoneAxis {
    X,
    Y,
    Z,
}

impl PhoneAxis {
    pub const ALL: [PhoneAxis; 3] = [PhoneAxis::X, PhoneAxis::Y, PhoneAxis::Z];

    pub fn index(self) -> usize {
        match self {
            PhoneAxis::X => 0,
            PhoneAxis::Y => 1,
            PhoneAxis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedAxis {
    pub axis: PhoneAxis,
    /// +1 or -1.
    pub sign: i8,
}

impl SignedAxis {
    pub const fn new(axis: PhoneAxis, sign: i8) -> Self {
        Self { axis, sign }
    }
}

impl fmt::Display for SignedAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign < 0 { '-' } else { '+' };
        write!(f, "{s}{:?}", self.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingSource {
    Inferred,
    LandscapeDefault,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMapping {
    pub longitudinal: SignedAxis,
    pub lateral: SignedAxis,
    pub confidence: f64,
    pub source: MappingSource,
}

impl AxisMapping {
    /// Phone in landscape on the dashboard, camera to the windshield.
    pub fn landscape_default() -> Self {
        Self {
            longitudinal: SignedAxis::new(PhoneAxis::Z, 1),
            lateral: SignedAxis::new(PhoneAxis::Y, 1),
            confidence: 0.0,
            source: MappingSource::LandscapeDefault,
        }
    }
}

/// A stretch of the ride around a turn, from map-matched headings.
/// `heading_change_deg` is signed: negative for left turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnWindow {
    pub start: f64,
    pub end: f64,
    pub heading_change_deg: f64,
}

impl TurnWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// 1 Hz vehicle-frame kinematics. All vectors share `t`; `gap[i]` marks
/// seconds without data, whose values are placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleKinematics {
    pub ride_id: RideId,
    pub t: Vec<f64>,
    pub speed: Vec<f64>,
    pub lon_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
    pub yaw_rate: Option<Vec<f64>>,
    pub gap: Vec<bool>,
}

impl VehicleKinematics {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameOptions {
    pub filter: FilterChoice,
}

fn vec3_series(ride: &Ride, channel: Channel, axis: usize, scale: f64) -> Option<Series> {
    let s = ride.stream(channel)?;
    let v = s.axis(axis).into_iter().map(|x| x * scale).collect();
    Some(Series { t: s.times(), v })
}

fn variance(v: &[f64]) -> f64 {
    crate::stats::mean_std(v).1.powi(2)
}

/// Accelerometer axes in m/s² with their ride-long medians, and the index of
/// the gravity axis.
fn accel_axes(ride: &Ride) -> Result<([Series; 3], [f64; 3], usize), SignalError> {
    let get = |i| vec3_series(ride, Channel::Accel, i, STANDARD_GRAVITY).ok_or(SignalError::MissingStream("ACCEL"));
    let axes = [get(0)?, get(1)?, get(2)?];
    if axes[0].is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let medians = [median(&axes[0].v), median(&axes[1].v), median(&axes[2].v)];
    let gravity = (0..3)
        .max_by(|&a, &b| medians[a].abs().total_cmp(&medians[b].abs()).then(b.cmp(&a)))
        .unwrap();
    Ok((axes, medians, gravity))
}

fn centered(s: &Series, m: f64) -> Series {
    Series {
        t: s.t.clone(),
        v: s.v.iter().map(|x| x - m).collect(),
    }
}

/// Infers which phone axes carry longitudinal and lateral acceleration.
///
/// Needs at least three turn windows; with fewer it returns the landscape
/// default (Z longitudinal, Y lateral) with zero confidence.
pub fn infer_axis_mapping(ride: &Ride, turn_windows: &[TurnWindow]) -> Result<AxisMapping, SignalError> {
    let (axes, medians, gravity) = accel_axes(ride)?;
    if turn_windows.len() < MIN_TURN_WINDOWS {
        return Ok(AxisMapping::landscape_default());
    }
    let smooth: Vec<Series> = axes
        .iter()
        .zip(medians)
        .map(|(s, m)| moving_average(&centered(s, m), DEFAULT_WINDOW_S))
        .collect::<Result<_, _>>()?;

    let horizontal: Vec<usize> = (0..3).filter(|&i| i != gravity).collect();
    // longitudinal: the horizontal axis that tracks the GPS speed derivative.
    // Variance alone misleads for drivers who corner hard, since lateral force
    // leaks past the edges of the detected turn windows.
    let gps = ride.gps();
    let mut dv = Vec::new();
    let mut paired: [Vec<f64>; 3] = Default::default();
    let grids: Vec<GridSeries> = smooth.iter().map(resample_to_1hz).collect::<Result<_, _>>()?;
    for w in gps.windows(3) {
        let second = w[1].t.round() as i64;
        let vals: Vec<Option<f64>> = horizontal.iter().map(|&i| grids[i].value_at(second)).collect();
        if vals.iter().all(|v| v.is_some()) {
            dv.push((w[2].speed - w[0].speed) / (w[2].t - w[0].t));
            for (&i, v) in horizontal.iter().zip(vals) {
                paired[i].push(v.unwrap());
            }
        }
    }
    let corr: Vec<f64> = (0..3)
        .map(|i| if paired[i].len() >= 3 { pearson(&paired[i], &dv) } else { 0.0 })
        .map(|c| if c.is_finite() { c } else { 0.0 })
        .collect();
    let (a, b) = (horizontal[0], horizontal[1]);
    let lon = if corr[a].abs() != corr[b].abs() {
        if corr[a].abs() > corr[b].abs() {
            a
        } else {
            b
        }
    } else {
        // no usable GPS speed: fall back to variance away from turns
        let straight_var = |i: usize| -> f64 {
            let v: Vec<f64> = smooth[i]
                .t
                .iter()
                .zip(&smooth[i].v)
                .filter(|(t, _)| !turn_windows.iter().any(|w| w.contains(**t)))
                .map(|(_, v)| *v)
                .collect();
            if v.len() >= MIN_STRAIGHT_SAMPLES {
                variance(&v)
            } else {
                variance(&smooth[i].v)
            }
        };
        if straight_var(a) >= straight_var(b) {
            a
        } else {
            b
        }
    };

    let in_turns = |i: usize| -> Vec<f64> {
        smooth[i]
            .t
            .iter()
            .zip(&smooth[i].v)
            .filter(|(t, _)| turn_windows.iter().any(|w| w.contains(**t)))
            .map(|(_, v)| *v)
            .collect()
    };
    let turn_var: Vec<f64> = (0..3).map(|i| variance(&in_turns(i))).collect();
    // lateral: the second most dominant signal inside turn windows
    let rest: Vec<usize> = (0..3).filter(|&i| i != lon).collect();
    let (lat, other) = if turn_var[rest[0]] >= turn_var[rest[1]] {
        (rest[0], rest[1])
    } else {
        (rest[1], rest[0])
    };
    let confidence = if turn_var[lat] > 0.0 {
        (1.0 - turn_var[other] / turn_var[lat]).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let lon_score = corr[lon];

    // lateral sign: positive during left turns
    let mut lat_score = 0.0;
    for w in turn_windows {
        let vals: Vec<f64> = smooth[lat]
            .t
            .iter()
            .zip(&smooth[lat].v)
            .filter(|(t, _)| w.contains(**t))
            .map(|(_, v)| *v)
            .collect();
        if !vals.is_empty() {
            let left = -w.heading_change_deg.signum();
            lat_score += left * vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }

    let sign = |s: f64| if s >= 0.0 { 1 } else { -1 };
    Ok(AxisMapping {
        longitudinal: SignedAxis::new(PhoneAxis::from_index(lon), sign(lon_score)),
        lateral: SignedAxis::new(PhoneAxis::from_index(lat), sign(lat_score)),
        confidence,
        source: MappingSource::Inferred,
    })
}

fn smooth_to_grid(s: &Series, filter: FilterChoice) -> Result<GridSeries, SignalError> {
    match filter {
        FilterChoice::MovingAverage { window } => resample_to_1hz(&moving_average(s, window)?),
        FilterChoice::L1Trend { lambda } => filter_runs(resample_to_1hz(s)?, |x| l1_trend_filter(x, lambda)),
        FilterChoice::TotalVariation { lambda } => filter_runs(resample_to_1hz(s)?, |x| tv_denoise(x, lambda)),
    }
}

/// Applies an optimisation filter to each contiguous non-gap run of a grid series.
fn filter_runs(
    mut g: GridSeries,
    f: impl Fn(&Series) -> Result<Series, SignalError>,
) -> Result<GridSeries, SignalError> {
    let n = g.t.len();
    let mut i = 0;
    while i < n {
        if g.gap[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < n && !g.gap[j] {
            j += 1;
        }
        if j - i >= 3 {
            let run = Series {
                t: g.t[i..j].to_vec(),
                v: g.v[i..j].to_vec(),
            };
            let out = f(&run)?;
            g.v[i..j].copy_from_slice(&out.v);
        }
        i = j;
    }
    Ok(g)
}

/// Produces 1 Hz vehicle-frame kinematics on the GPS second grid.
pub fn to_vehicle_frame(
    ride: &Ride,
    mapping: &AxisMapping,
    options: &FrameOptions,
) -> Result<VehicleKinematics, SignalError> {
    let gps = ride.gps();
    if gps.is_empty() {
        return Err(SignalError::MissingStream("GPS"));
    }
    let (axes, medians, gravity) = accel_axes(ride)?;

    let speed_series = Series::new(
        gps.iter().map(|g| g.t).collect(),
        gps.iter().map(|g| g.speed).collect(),
    )?;
    let speed = resample_to_1hz(&moving_average(&speed_series, DEFAULT_WINDOW_S)?)?;

    let vehicle_axis = |sa: SignedAxis| -> Result<GridSeries, SignalError> {
        let i = sa.axis.index();
        let mut s = centered(&axes[i], medians[i]);
        let sign = f64::from(sa.sign);
        s.v.iter_mut().for_each(|x| *x *= sign);
        smooth_to_grid(&s, options.filter)
    };
    let lon = vehicle_axis(mapping.longitudinal)?;
    let lat = vehicle_axis(mapping.lateral)?;

    let yaw = match vec3_series(ride, Channel::Gyro, gravity, 1.0) {
        Some(g) if !g.is_empty() => {
            let up = medians[gravity].signum();
            let g = Series {
                t: g.t,
                v: g.v.into_iter().map(|x| x * up).collect(),
            };
            Some(resample_to_1hz(&moving_average(&g, DEFAULT_WINDOW_S)?)?)
        }
        _ => None,
    };

    let mut out = VehicleKinematics {
        ride_id: ride.ride_id.clone(),
        t: Vec::with_capacity(speed.t.len()),
        speed: Vec::with_capacity(speed.t.len()),
        lon_accel: Vec::with_capacity(speed.t.len()),
        lat_accel: Vec::with_capacity(speed.t.len()),
        yaw_rate: yaw.as_ref().map(|_| Vec::with_capacity(speed.t.len())),
        gap: Vec::with_capacity(speed.t.len()),
    };
    for (i, &t) in speed.t.iter().enumerate() {
        let k = t as i64;
        let sp = (!speed.gap[i]).then_some(speed.v[i]);
        let lo = lon.value_at(k);
        let la = lat.value_at(k);
        let yw = yaw.as_ref().map(|y| y.value_at(k));
        let gap = sp.is_none() || lo.is_none() || la.is_none() || matches!(yw, Some(None));
        out.t.push(t);
        out.speed.push(sp.unwrap_or(0.0).max(0.0));
        out.lon_accel.push(lo.unwrap_or(0.0));
        out.lat_accel.push(la.unwrap_or(0.0));
        if let (Some(v), Some(y)) = (out.yaw_rate.as_mut(), yw) {
            v.push(y.unwrap_or(0.0));
        }
        out.gap.push(gap);
    }
    Ok(out)
}
