//! Labelled synthetic networks, rides and fleets with planted driver archetypes.

mod drive;
mod fleet;
mod grid;

pub use drive::{
    integrate_profile, simulate_drive, DriveTrace, EventKind, KinematicState, PlantedEvent, RoutePlan,
    DEFAULT_TURN_RADIUS_M, SIM_DT,
};
pub use fleet::{
    generate_fleet, read_labels, write_fleet, Fleet, FleetOptions, FleetRide, MixEntry,
    LABELS_FILE, RIDES_DIR,
};
pub use grid::{
    generate_network, GridSpec, BASE_ORIGIN, DEFAULT_BLOCK_M, HIGHWAY_LIMIT_MPS, LOCAL_LIMIT_MPS,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, FixedOffset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::LocalFrame;
use crate::ingest::{Channel, DriverId, Payload, Ride, RideId, SensorSample, SensorStream};
use crate::mapmatch::GpsErrorModel;
use crate::network::{RoadNetwork, SegmentId};
use crate::signal::{PhoneAxis, SignedAxis, STANDARD_GRAVITY};

/// A planted driving style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// Cruise speed as a fraction of the segment speed limit.
    pub target_speed_ratio: f64,
    pub hard_accel_per_100km: f64,
    pub hard_brake_per_100km: f64,
    /// Probability of taking a given turn at `sharp_turn_speed`.
    pub sharp_turn_prob: f64,
    /// Per-axis white accelerometer noise, m/s².
    pub accel_noise_sigma: f64,
    pub speed_cap: Option<f64>,
    /// Normal acceleration and braking rates, m/s².
    pub accel: f64,
    pub decel: f64,
    pub turn_speed: f64,
    pub sharp_turn_speed: f64,
    /// Probability of a full stop at a straight-through intersection.
    pub stop_prob: f64,
}

impl Archetype {
    pub fn validate(&self) -> Result<(), String> {
        let rates = [
            self.target_speed_ratio,
            self.hard_accel_per_100km,
            self.hard_brake_per_100km,
            self.accel_noise_sigma,
            self.accel,
            self.decel,
            self.turn_speed,
            self.sharp_turn_speed,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(format!("{}: rates must be finite and non-negative", self.name));
        }
        for p in [self.sharp_turn_prob, self.stop_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{}: probability {p} outside [0, 1]", self.name));
            }
        }
        if self.speed_cap.is_some_and(|c| !(c > 0.0)) {
            return Err(format!("{}: speed cap must be positive", self.name));
        }
        if self.decel <= 0.0 {
            return Err(format!("{}: braking rate must be positive", self.name));
        }
        Ok(())
    }

    /// Drives at about the norm.
    pub fn conformer() -> Self {
        Self {
            name: "conformer".into(),
            target_speed_ratio: 0.90,
            hard_accel_per_100km: 0.0,
            hard_brake_per_100km: 0.0,
            sharp_turn_prob: 0.0,
            accel_noise_sigma: 0.15,
            speed_cap: None,
            accel: 1.4,
            decel: 1.6,
            turn_speed: 5.0,
            sharp_turn_speed: 8.5,
            stop_prob: 0.3,
        }
    }

    /// Slow and stops often, but brakes late and hard.
    pub fn slow_cautious() -> Self {
        Self {
            name: "slow_cautious".into(),
            target_speed_ratio: 0.65,
            hard_brake_per_100km: 40.0,
            accel: 0.8,
            decel: 2.5,
            turn_speed: 4.0,
            stop_prob: 0.5,
            ..Self::conformer()
        }
    }

    /// Conformer speeds and normal rates, plus frequent hard accelerations and brakes.
    pub fn aggressive() -> Self {
        Self {
            name: "aggressive".into(),
            hard_accel_per_100km: 50.0,
            hard_brake_per_100km: 60.0,
            ..Self::conformer()
        }
    }

    /// Takes most turns fast, with a low top speed.
    pub fn sharp_turner() -> Self {
        Self {
            name: "sharp_turner".into(),
            target_speed_ratio: 0.95,
            sharp_turn_prob: 0.8,
            speed_cap: Some(9.8),
            ..Self::conformer()
        }
    }

    /// A smooth driver who cruises above the limit and rarely stops.
    pub fn mild_fast() -> Self {
        Self {
            name: "mild_fast".into(),
            target_speed_ratio: 1.4,
            accel: 1.5,
            decel: 1.7,
            turn_speed: 5.5,
            stop_prob: 0.05,
            ..Self::conformer()
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![
            Self::conformer(),
            Self::slow_cautious(),
            Self::aggressive(),
            Self::sharp_turner(),
            Self::mild_fast(),
        ]
    }

    pub fn preset(name: &str) -> Option<Self> {
        Self::presets().into_iter().find(|a| a.name == name)
    }
}

/// Orientation of the phone in the vehicle as a signed permutation matrix:
/// `phone = m · vehicle`, vehicle axes (forward, left, up).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneMount {
    pub phone_from_vehicle: [[i8; 3]; 3],
}

impl PhoneMount {
    /// Landscape on the dashboard: Z forward, Y left, X down.
    pub const LANDSCAPE: PhoneMount = PhoneMount {
        phone_from_vehicle: [[0, 0, -1], [0, 1, 0], [1, 0, 0]],
    };

    /// All 24 proper (determinant +1) signed permutations.
    pub fn all() -> Vec<PhoneMount> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::new();
        for p in perms {
            for signs in 0..8u8 {
                let mut m = [[0i8; 3]; 3];
                for r in 0..3 {
                    m[r][p[r]] = if signs >> r & 1 == 1 { -1 } else { 1 };
                }
                if det(&m) == 1 {
                    out.push(PhoneMount {
                        phone_from_vehicle: m,
                    });
                }
            }
        }
        out
    }

    pub fn random(rng: &mut impl Rng) -> PhoneMount {
        let all = Self::all();
        all[rng.random_range(0..all.len())]
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.phone_from_vehicle;
        std::array::from_fn(|r| (0..3).map(|c| m[r][c] as f64 * v[c]).sum())
    }

    fn axis_of(&self, col: usize) -> SignedAxis {
        let m = &self.phone_from_vehicle;
        let r = (0..3).find(|&r| m[r][col] != 0).expect("permutation matrix");
        SignedAxis::new(PhoneAxis::from_index(r), m[r][col])
    }

    /// Phone axis carrying forward acceleration.
    pub fn longitudinal(&self) -> SignedAxis {
        self.axis_of(0)
    }

    /// Phone axis carrying leftward acceleration.
    pub fn lateral(&self) -> SignedAxis {
        self.axis_of(1)
    }
}

fn det(m: &[[i8; 3]; 3]) -> i32 {
    let m = m.map(|r| r.map(i32::from));
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Sensor rendering settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorOptions {
    pub gps: GpsErrorModel,
    /// Std of the GPS speed error, m/s.
    pub speed_sigma: f64,
    /// When false, accelerometer and gyro carry no noise.
    pub imu_noise: bool,
    pub gyro_sigma: f64,
    pub mount: PhoneMount,
}

impl SensorOptions {
    pub fn noiseless(mount: PhoneMount) -> Self {
        Self {
            gps: GpsErrorModel::noiseless(),
            speed_sigma: 0.0,
            imu_noise: false,
            gyro_sigma: 0.0,
            mount,
        }
    }
}

/// Per-second truth, taken at the integer-second simulation ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSecond {
    pub t: f64,
    pub segment_id: Option<SegmentId>,
    pub lat: f64,
    pub lon: f64,
    pub speed: f64,
    pub lon_accel: f64,
    pub lat_accel: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ride_id: RideId,
    pub driver_id: DriverId,
    pub archetype: String,
    pub gps_sigma_m: f64,
    pub mount: PhoneMount,
    pub route: Vec<SegmentId>,
    pub distance_m: f64,
    pub events: Vec<PlantedEvent>,
    pub seconds: Vec<TruthSecond>,
}

/// Lines of a `ground_truth.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TruthLine {
    Ride {
        ride_id: RideId,
        driver_id: DriverId,
        archetype: String,
        gps_sigma_m: f64,
        mount: PhoneMount,
        route: Vec<SegmentId>,
        distance_m: f64,
    },
    Event(PlantedEvent),
    Second(TruthSecond),
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

impl GroundTruth {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let mut line = |l: &TruthLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        line(&TruthLine::Ride {
            ride_id: self.ride_id.clone(),
            driver_id: self.driver_id.clone(),
            archetype: self.archetype.clone(),
            gps_sigma_m: self.gps_sigma_m,
            mount: self.mount,
            route: self.route.clone(),
            distance_m: self.distance_m,
        })?;
        for e in &self.events {
            line(&TruthLine::Event(*e))?;
        }
        for s in &self.seconds {
            line(&TruthLine::Second(*s))?;
        }
        drop(line);
        out.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let bad = |e: String| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let mut head = None;
        let (mut events, mut seconds) = (Vec::new(), Vec::new());
        for l in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<TruthLine>(l).map_err(|e| bad(e.to_string()))? {
                r @ TruthLine::Ride { .. } => head = Some(r),
                TruthLine::Event(e) => events.push(e),
                TruthLine::Second(s) => seconds.push(s),
            }
        }
        match head {
            Some(TruthLine::Ride {
                ride_id,
                driver_id,
                archetype,
                gps_sigma_m,
                mount,
                route,
                distance_m,
            }) => Ok(Self {
                ride_id,
                driver_id,
                archetype,
                gps_sigma_m,
                mount,
                route,
                distance_m,
                events,
                seconds,
            }),
            _ => Err(bad("missing ride header line".into())),
        }
    }
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// Turns simulated kinematics into phone sensor streams: ACCEL (G, gravity
/// included) and GYRO at the simulation rate, GPS at whole seconds.
pub fn render_ride(
    trace: &DriveTrace,
    ride_id: RideId,
    driver_id: DriverId,
    start_time: DateTime<FixedOffset>,
    accel_noise_sigma: f64,
    opts: &SensorOptions,
    rng: &mut impl Rng,
) -> Ride {
    let normal = |s: f64| Normal::new(0.0, s).expect("non-negative std");
    let acc_n = normal(if opts.imu_noise { accel_noise_sigma } else { 0.0 });
    let gyro_n = normal(if opts.imu_noise { opts.gyro_sigma } else { 0.0 });
    let pos_n = normal(opts.gps.sigma());
    let spd_n = normal(opts.speed_sigma);
    let ticks_per_s = (1.0 / SIM_DT).round() as usize;

    let (mut accel, mut gyro, mut gps) = (Vec::new(), Vec::new(), Vec::new());
    for (i, st) in trace.states.iter().enumerate() {
        let f = opts.mount.apply([st.lon_accel, st.lat_accel, STANDARD_GRAVITY]);
        let w = opts.mount.apply([0.0, 0.0, st.yaw_rate]);
        let a: [f64; 3] = std::array::from_fn(|j| {
            round_to((f[j] + acc_n.sample(rng)) / STANDARD_GRAVITY, 1e-6)
        });
        let g: [f64; 3] = std::array::from_fn(|j| round_to(w[j] + gyro_n.sample(rng), 1e-6));
        accel.push(SensorSample {
            t: st.t,
            payload: Payload::Vec3(a),
        });
        gyro.push(SensorSample {
            t: st.t,
            payload: Payload::Vec3(g),
        });
        if i % ticks_per_s == 0 {
            let pos = if opts.gps.sigma() > 0.0 {
                let frame = LocalFrame::new(st.pos);
                frame.unproject([pos_n.sample(rng), pos_n.sample(rng)])
            } else {
                st.pos
            };
            let speed = if opts.speed_sigma > 0.0 {
                round_to((st.speed + spd_n.sample(rng)).max(0.0), 1e-3)
            } else {
                st.speed
            };
            gps.push(SensorSample {
                t: (i / ticks_per_s) as f64,
                payload: Payload::Gps {
                    lat: pos.lat,
                    lon: pos.lon,
                    speed,
                    heading: Some(round_to(st.heading_deg, 1e-2) % 360.0),
                },
            });
        }
    }
    let mut streams = BTreeMap::new();
    streams.insert(Channel::Gps, SensorStream::new(Channel::Gps, gps));
    streams.insert(Channel::Accel, SensorStream::new(Channel::Accel, accel));
    streams.insert(Channel::Gyro, SensorStream::new(Channel::Gyro, gyro));
    Ride {
        ride_id,
        driver_id,
        start_time,
        streams,
    }
}

/// Per-second truth from a trace.
pub fn truth_seconds(trace: &DriveTrace) -> Vec<TruthSecond> {
    let ticks = (1.0 / SIM_DT).round() as usize;
    trace
        .states
        .iter()
        .step_by(ticks)
        .enumerate()
        .map(|(k, st)| TruthSecond {
            t: k as f64,
            segment_id: st.segment,
            lat: st.pos.lat,
            lon: st.pos.lon,
            speed: st.speed,
            lon_accel: st.lon_accel,
            lat_accel: st.lat_accel,
            heading_deg: st.heading_deg,
        })
        .collect()
}

/// Everything needed to generate one ride.
#[derive(Debug, Clone, PartialEq)]
pub struct RideSpec {
    pub ride_id: RideId,
    pub driver_id: DriverId,
    pub archetype: Archetype,
    pub duration_s: f64,
    pub start_time: DateTime<FixedOffset>,
    pub route: RoutePlan,
    /// `None` draws sigma uniformly from the allowed GPS error range.
    pub gps: Option<GpsErrorModel>,
    /// `None` draws a random mount from the 24 axis-aligned orientations.
    pub mount: Option<PhoneMount>,
    pub turn_radius_m: f64,
    pub imu_noise: bool,
    pub speed_sigma: f64,
}

impl RideSpec {
    pub fn new(ride_id: &str, driver_id: &str, archetype: Archetype, duration_s: f64) -> Self {
        Self {
            ride_id: RideId::new(ride_id).expect("non-empty ride id"),
            driver_id: DriverId::new(driver_id).expect("non-empty driver id"),
            archetype,
            duration_s,
            start_time: default_start(),
            route: RoutePlan::Random,
            gps: None,
            mount: Some(PhoneMount::LANDSCAPE),
            turn_radius_m: DEFAULT_TURN_RADIUS_M,
            imu_noise: true,
            speed_sigma: 0.3,
        }
    }
}

/// Tuesday 2016-06-07 08:00 local (UTC-7).
pub fn default_start() -> DateTime<FixedOffset> {
    DateTime::parse_from_rfc3339("2016-06-07T08:00:00-07:00").expect("valid timestamp")
}

/// Simulates and renders one ride. Deterministic in `seed`.
pub fn generate_ride(net: &RoadNetwork, spec: &RideSpec, seed: u64) -> (Ride, GroundTruth) {
    assert!(spec.duration_s >= 60.0, "rides must last at least 60 s");
    spec.archetype.validate().expect("valid archetype");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gps = spec.gps.unwrap_or_else(|| {
        GpsErrorModel::new(rng.random_range(GpsErrorModel::MIN_SIGMA_M..=GpsErrorModel::MAX_SIGMA_M))
            .expect("sigma drawn inside range")
    });
    let mount = spec.mount.unwrap_or_else(|| PhoneMount::random(&mut rng));
    let trace = simulate_drive(
        net,
        &spec.archetype,
        &spec.route,
        spec.duration_s,
        spec.turn_radius_m,
        &mut rng,
    );
    let opts = SensorOptions {
        gps,
        speed_sigma: spec.speed_sigma,
        imu_noise: spec.imu_noise,
        gyro_sigma: 0.005,
        mount,
    };
    let ride = render_ride(
        &trace,
        spec.ride_id.clone(),
        spec.driver_id.clone(),
        spec.start_time,
        spec.archetype.accel_noise_sigma,
        &opts,
        &mut rng,
    );
    let truth = GroundTruth {
        ride_id: spec.ride_id.clone(),
        driver_id: spec.driver_id.clone(),
        archetype: spec.archetype.name.clone(),
        gps_sigma_m: gps.sigma(),
        mount,
        route: trace.route.clone(),
        distance_m: trace.distance_m,
        events: trace.events.clone(),
        seconds: truth_seconds(&trace),
    };
    (ride, truth)
}
