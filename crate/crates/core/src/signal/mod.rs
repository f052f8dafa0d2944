//! Denoising, resampling and vehicle-frame inference for raw sensor streams.

mod frame;
mod optim;

pub use frame::{
    infer_axis_mapping, to_vehicle_frame, AxisMapping, FrameOptions, MappingSource, PhoneAxis,
    SignedAxis, TurnWindow, VehicleKinematics, STANDARD_GRAVITY,
};
pub use optim::{l1_trend_filter, objective, tv_denoise, DifferenceOrder, SolverOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundary slack used when deciding whether a timestamp falls in a window.
const TIME_EPS: f64 = 1e-9;

/// The moving-average window used throughout the pipeline, in seconds.
pub const DEFAULT_WINDOW_S: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("series is empty")]
    EmptySeries,
    #[error("series needs at least {0} samples")]
    TooShort(usize),
    #[error("timestamps are not uniformly spaced")]
    NonUniformSpacing,
    #[error("solver hit its iteration cap ({0}) before converging")]
    NonConvergence(usize),
    #[error("invalid series: {0}")]
    Invalid(String),
    #[error("required stream {0} missing")]
    MissingStream(&'static str),
}

/// A timestamped scalar signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Series {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Result<Self, SignalError> {
        if t.len() != v.len() {
            return Err(SignalError::Invalid(format!(
                "{} timestamps vs {} values",
                t.len(),
                v.len()
            )));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::Invalid("timestamps not strictly increasing".into()));
        }
        if v.iter().chain(&t).any(|x| !x.is_finite()) {
            return Err(SignalError::Invalid("non-finite value".into()));
        }
        Ok(Self { t, v })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub(crate) fn is_uniform(&self) -> bool {
        if self.t.len() < 3 {
            return true;
        }
        let dt = self.t[1] - self.t[0];
        self.t
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0))
    }
}

/// Centered moving average: each output is the mean of the input samples with
/// `t` in `[t_i - window/2, t_i + window/2]`, truncated at the series ends.
pub fn moving_average(s: &Series, window: f64) -> Result<Series, SignalError> {
    if s.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    if !(window > 0.0) {
        return Err(SignalError::Invalid(format!("window must be positive, got {window}")));
    }
    let half = window / 2.0;
    let n = s.len();
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let (a, b) = (s.t[i] - half - TIME_EPS, s.t[i] + half + TIME_EPS);
        while s.t[lo] < a {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < n && s.t[hi] <= b {
            hi += 1;
        }
        let win = &s.v[lo..hi];
        out.push(win.iter().sum::<f64>() / win.len() as f64);
    }
    Ok(Series {
        t: s.t.clone(),
        v: out,
    })
}

/// A series on the integer-second grid. Seconds without input samples are
/// marked in `gap` and carry a placeholder value of 0.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub gap: Vec<bool>,
}

impl GridSeries {
    pub fn first_second(&self) -> Option<i64> {
        self.t.first().map(|t| *t as i64)
    }

    pub fn value_at(&self, second: i64) -> Option<f64> {
        let k0 = self.first_second()?;
        let idx = usize::try_from(second - k0).ok()?;
        match (self.v.get(idx), self.gap.get(idx)) {
            (Some(v), Some(false)) => Some(*v),
            _ => None,
        }
    }
}

/// Bin-mean resampling to 1 Hz. Output seconds are the integers inside
/// `[t_first, t_last]`; second `k` averages the samples in `[k - 0.5, k + 0.5)`.
pub fn resample_to_1hz(s: &Series) -> Result<GridSeries, SignalError> {
    if s.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let k0 = s.t[0].ceil() as i64;
    let k1 = s.t[s.len() - 1].floor() as i64;
    if k1 < k0 {
        return Ok(GridSeries {
            t: vec![],
            v: vec![],
            gap: vec![],
        });
    }
    let len = (k1 - k0 + 1) as usize;
    let mut sum = vec![0.0; len];
    let mut cnt = vec![0usize; len];
    for (t, v) in s.t.iter().zip(&s.v) {
        let k = (t + 0.5).floor() as i64;
        if (k0..=k1).contains(&k) {
            let i = (k - k0) as usize;
            sum[i] += v;
            cnt[i] += 1;
        }
    }
    let mut out = GridSeries {
        t: (k0..=k1).map(|k| k as f64).collect(),
        v: Vec::with_capacity(len),
        gap: Vec::with_capacity(len),
    };
    for (s, c) in sum.into_iter().zip(cnt) {
        if c == 0 {
            out.v.push(0.0);
            out.gap.push(true);
        } else {
            out.v.push(s / c as f64);
            out.gap.push(false);
        }
    }
    Ok(out)
}

/// Which smoother `to_vehicle_frame` applies to the acceleration channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterChoice {
    MovingAverage { window: f64 },
    L1Trend { lambda: f64 },
    TotalVariation { lambda: f64 },
}

impl Default for FilterChoice {
    fn default() -> Self {
        FilterChoice::MovingAverage {
            window: DEFAULT_WINDOW_S,
        }
    }
}

impl FilterChoice {
    pub const DEFAULT_L1_LAMBDA: f64 = 50.0;
    pub const DEFAULT_TV_LAMBDA: f64 = 5.0;
}
