//! Per-ride sensor log parsing, validation and serialization.
//!
//! A ride lives in its own directory: a `ride.meta` key=value file plus one
//! CSV per sensor channel. GPS and ACCEL are mandatory; GYRO, MOTION and MAG
//! are optional.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of rows that may be dropped as duplicate timestamps before the
/// file is treated as corrupt.
const MAX_DUPLICATE_FRACTION: f64 = 0.01;
/// Rides with less GPS coverage than this cannot contribute to norms.
pub const MIN_USABLE_GPS_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RideId(String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DriverId(String);

macro_rules! opaque_id {
    ($t:ident) => {
        impl $t {
            pub fn new(s: impl Into<String>) -> Result<Self, IngestError> {
                let s = s.into();
                if s.trim().is_empty() {
                    return Err(IngestError::Meta(format!("empty {}", stringify!($t))));
                }
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

opaque_id!(RideId);
opaque_id!(DriverId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Gps,
    Accel,
    Gyro,
    Mag,
    Motion,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Gps,
        Channel::Accel,
        Channel::Gyro,
        Channel::Mag,
        Channel::Motion,
    ];

    pub fn nominal_hz(self) -> f64 {
        match self {
            Channel::Gps | Channel::Mag => 1.0,
            Channel::Accel | Channel::Gyro | Channel::Motion => 10.0,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Channel::Gps => "gps.csv",
            Channel::Accel => "accel.csv",
            Channel::Gyro => "gyro.csv",
            Channel::Mag => "mag.csv",
            Channel::Motion => "motion.csv",
        }
    }

    fn header(self) -> &'static [&'static str] {
        match self {
            Channel::Gps => &["t", "lat", "lon", "speed", "heading"],
            _ => &["t", "x", "y", "z"],
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::Gps => "GPS",
            Channel::Accel => "ACCEL",
            Channel::Gyro => "GYRO",
            Channel::Mag => "MAG",
            Channel::Motion => "MOTION",
        };
        f.write_str(s)
    }
}

/// One GPS fix. `speed` in m/s, `heading` in compass degrees when reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed: f64,
    pub heading: Option<f64>,
}

/// Channel payload. ACCEL is in G-force units, GYRO/MOTION in rad/s, MAG in µT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Gps {
        lat: f64,
        lon: f64,
        speed: f64,
        heading: Option<f64>,
    },
    Vec3([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStream {
    pub channel: Channel,
    pub nominal_hz: f64,
    pub samples: Vec<SensorSample>,
}

impl SensorStream {
    pub fn new(channel: Channel, samples: Vec<SensorSample>) -> Self {
        Self {
            channel,
            nominal_hz: channel.nominal_hz(),
            samples,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Component `axis` (0=x, 1=y, 2=z) of a vector channel.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match s.payload {
                Payload::Vec3(v) => v[axis],
                Payload::Gps { .. } => f64::NAN,
            })
            .collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ride {
    pub ride_id: RideId,
    pub driver_id: DriverId,
    pub start_time: DateTime<FixedOffset>,
    pub streams: BTreeMap<Channel, SensorStream>,
}

impl Ride {
    pub fn stream(&self, channel: Channel) -> Option<&SensorStream> {
        self.streams.get(&channel)
    }

    pub fn gps(&self) -> Vec<GpsFix> {
        self.stream(Channel::Gps)
            .map(|s| {
                s.samples
                    .iter()
                    .filter_map(|x| match x.payload {
                        Payload::Gps {
                            lat,
                            lon,
                            speed,
                            heading,
                        } => Some(GpsFix {
                            t: x.t,
                            lat,
                            lon,
                            speed,
                            heading,
                        }),
                        Payload::Vec3(_) => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("required channel {0} is missing")]
    MissingChannel(Channel),
    #[error("{file}:{line}: {reason}")]
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{file}: {duplicates} of {rows} rows share timestamps")]
    NonMonotoneTime {
        file: String,
        duplicates: usize,
        rows: usize,
    },
    #[error("ride.meta: {0}")]
    Meta(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_meta(path: &Path) -> Result<(RideId, DriverId, DateTime<FixedOffset>), IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| IngestError::Meta(format!("expected key=value, got {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| IngestError::Meta(format!("missing key {k}")))
    };
    let ride_id = RideId::new(get("ride_id")?)?;
    let driver_id = DriverId::new(get("driver_id")?)?;
    let start_time = DateTime::parse_from_rfc3339(&get("start_time")?)
        .map_err(|e| IngestError::Meta(format!("start_time: {e}")))?;
    Ok((ride_id, driver_id, start_time))
}

fn parse_channel(path: &Path, channel: Channel) -> Result<SensorStream, IngestError> {
    let file = channel.file_name().to_string();
    let malformed = |line: u64, reason: String| IngestError::MalformedRow {
        file: file.clone(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => IngestError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => malformed(1, format!("{other:?}")),
        })?;
    let header = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let expected = channel.header();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(1, format!("expected header {}", expected.join(","))));
    }

    let mut rows: Vec<SensorSample> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != expected.len() {
            return Err(malformed(
                line,
                format!("expected {} fields, got {}", expected.len(), rec.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, IngestError> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| malformed(line, format!("{}: not a number: {:?}", expected[i], &rec[i])))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("{}: non-finite", expected[i])));
            }
            Ok(v)
        };
        let t = num(0)?;
        if t < 0.0 {
            return Err(malformed(line, "t: negative".into()));
        }
        let payload = match channel {
            Channel::Gps => {
                let (lat, lon, speed) = (num(1)?, num(2)?, num(3)?);
                if !(-90.0..=90.0).contains(&lat) {
                    return Err(malformed(line, format!("lat out of range: {lat}")));
                }
                if !(-180.0..=180.0).contains(&lon) {
                    return Err(malformed(line, format!("lon out of range: {lon}")));
                }
                if speed < 0.0 {
                    return Err(malformed(line, format!("negative speed: {speed}")));
                }
                let heading = if rec[4].is_empty() { None } else { Some(num(4)?) };
                Payload::Gps {
                    lat,
                    lon,
                    speed,
                    heading,
                }
            }
            _ => Payload::Vec3([num(1)?, num(2)?, num(3)?]),
        };
        rows.push(SensorSample { t, payload });
    }

    let n = rows.len();
    // stable sort keeps file order among equal timestamps, so `last` wins below
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut samples: Vec<SensorSample> = Vec::with_capacity(n);
    for s in rows {
        match samples.last_mut() {
            Some(prev) if prev.t == s.t => *prev = s,
            _ => samples.push(s),
        }
    }
    let duplicates = n - samples.len();
    if n > 0 && duplicates as f64 > MAX_DUPLICATE_FRACTION * n as f64 {
        return Err(IngestError::NonMonotoneTime {
            file,
            duplicates,
            rows: n,
        });
    }
    Ok(SensorStream::new(channel, samples))
}

/// Parses a ride directory. Streams come back time-sorted with duplicate
/// timestamps collapsed to their last occurrence.
pub fn parse_ride(dir: impl AsRef<Path>) -> Result<Ride, IngestError> {
    let dir = dir.as_ref();
    let (ride_id, driver_id, start_time) = parse_meta(&dir.join("ride.meta"))?;
    let mut streams = BTreeMap::new();
    for ch in Channel::ALL {
        let path = dir.join(ch.file_name());
        if !path.exists() {
            if matches!(ch, Channel::Gps | Channel::Accel) {
                return Err(IngestError::MissingChannel(ch));
            }
            continue;
        }
        streams.insert(ch, parse_channel(&path, ch)?);
    }
    Ok(Ride {
        ride_id,
        driver_id,
        start_time,
        streams,
    })
}

/// Writes a ride in the on-disk layout `parse_ride` reads. Floats use the
/// shortest round-trip representation, so parse(write(r)) == r bitwise.
pub fn write_ride(ride: &Ride, dir: impl AsRef<Path>) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = dir.join("ride.meta");
    fs::write(
        &meta,
        format!(
            "ride_id={}\ndriver_id={}\nstart_time={}\n",
            ride.ride_id,
            ride.driver_id,
            ride.start_time.to_rfc3339()
        ),
    )
    .map_err(io_err(&meta))?;
    for (ch, stream) in &ride.streams {
        let path = dir.join(ch.file_name());
        let mut out = String::with_capacity(stream.samples.len() * 48);
        out.push_str(&ch.header().join(","));
        out.push('\n');
        for s in &stream.samples {
            match s.payload {
                Payload::Gps {
                    lat,
                    lon,
                    speed,
                    heading,
                } => {
                    out.push_str(&format!("{},{},{},{},", s.t, lat, lon, speed));
                    if let Some(h) = heading {
                        out.push_str(&h.to_string());
                    }
                }
                Payload::Vec3([x, y, z]) => out.push_str(&format!("{},{},{},{}", s.t, x, y, z)),
            }
            out.push('\n');
        }
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(out.as_bytes()).map_err(io_err(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: Channel,
    pub samples: usize,
    pub observed_hz: f64,
    pub gap_count: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ride_id: RideId,
    pub channels: Vec<ChannelReport>,
    pub usable: bool,
}

/// Per-channel rate, gap and duration summary. A gap is an inter-sample
/// interval longer than three nominal periods.
pub fn validate_ride(ride: &Ride) -> ValidationReport {
    let channels: Vec<ChannelReport> = ride
        .streams
        .values()
        .map(|s| {
            let duration = s.duration();
            let period = 1.0 / s.nominal_hz;
            let gap_count = s
                .samples
                .windows(2)
                .filter(|w| w[1].t - w[0].t > 3.0 * period)
                .count();
            let observed_hz = if duration > 0.0 {
                (s.samples.len() - 1) as f64 / duration
            } else {
                0.0
            };
            ChannelReport {
                channel: s.channel,
                samples: s.samples.len(),
                observed_hz,
                gap_count,
                duration,
            }
        })
        .collect();
    let gps_duration = ride.stream(Channel::Gps).map_or(0.0, SensorStream::duration);
    ValidationReport {
        ride_id: ride.ride_id.clone(),
        channels,
        usable: gps_duration >= MIN_USABLE_GPS_SECONDS,
    }
}
