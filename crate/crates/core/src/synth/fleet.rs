//! Fleets of drivers drawn from an archetype mix, and their on-disk corpus.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_start, generate_ride, Archetype, GroundTruth, PhoneMount, RideSpec, GROUND_TRUTH_FILE};
use crate::ingest::{write_ride, DriverId, IngestError, Ride};
use crate::mapmatch::GpsErrorModel;
use crate::network::RoadNetwork;

pub const RIDES_DIR: &str = "rides";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub archetype: Archetype,
    pub n_drivers: usize,
    pub rides_each: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetOptions {
    pub seed: u64,
    /// Ride durations are drawn uniformly from this range, whole seconds.
    pub duration_s: (f64, f64),
    /// Ride start times are spread uniformly over this many seconds after
    /// the common start.
    pub start_window_s: u32,
    pub random_mounts: bool,
    /// `None` draws each ride's GPS sigma from the allowed range.
    pub gps: Option<GpsErrorModel>,
    /// Relative spread of per-driver parameters around the archetype.
    pub driver_jitter: f64,
}

impl Default for FleetOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            duration_s: (600.0, 900.0),
            start_window_s: 600,
            random_mounts: true,
            gps: None,
            driver_jitter: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetRide {
    pub ride: Ride,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub rides: Vec<FleetRide>,
    /// `(driver_id, archetype name)` in driver order.
    pub labels: Vec<(DriverId, String)>,
}

/// Seed for an independent substream of `seed`.
fn substream(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

fn jittered(a: &Archetype, jitter: f64, rng: &mut impl Rng) -> Archetype {
    let mut f = |x: f64| x * (1.0 + rng.random_range(-jitter..=jitter));
    Archetype {
        target_speed_ratio: f(a.target_speed_ratio),
        accel: f(a.accel),
        decel: f(a.decel),
        turn_speed: f(a.turn_speed),
        sharp_turn_speed: f(a.sharp_turn_speed),
        ..a.clone()
    }
}

struct Job {
    index: usize,
    driver: usize,
    ride_no: usize,
    archetype: Archetype,
}

/// Generates the fleet in memory. Ride `i` uses its own random substream, so
/// the result does not depend on generation order or thread count.
pub fn generate_fleet(
    net: &RoadNetwork,
    mix: &[MixEntry],
    opts: &FleetOptions,
) -> Result<Fleet, String> {
    let drivers: usize = mix.iter().map(|m| m.n_drivers).sum();
    if drivers < 10 {
        return Err(format!("a fleet needs at least 10 drivers, got {drivers}"));
    }
    for m in mix {
        m.archetype.validate()?;
    }
    let (lo, hi) = opts.duration_s;
    if !(lo >= 60.0 && hi >= lo) {
        return Err(format!("bad duration range [{lo}, {hi}]"));
    }

    let mut labels = Vec::new();
    let mut jobs = Vec::new();
    let mut driver = 0usize;
    for m in mix {
        for _ in 0..m.n_drivers {
            let mut drng = ChaCha8Rng::seed_from_u64(substream(opts.seed, (1 << 40) + driver as u64));
            let arch = jittered(&m.archetype, opts.driver_jitter, &mut drng);
            labels.push((driver_id(driver), m.archetype.name.clone()));
            for ride_no in 0..m.rides_each {
                jobs.push(Job {
                    index: jobs.len(),
                    driver,
                    ride_no,
                    archetype: arch.clone(),
                });
            }
            driver += 1;
        }
    }

    let rides = jobs
        .par_iter()
        .map(|job| {
            let seed = substream(opts.seed, job.index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let duration = rng.random_range(lo..=hi).round();
            let offset = rng.random_range(0..=opts.start_window_s);
            let mount = if opts.random_mounts {
                PhoneMount::random(&mut rng)
            } else {
                PhoneMount::LANDSCAPE
            };
            let did = driver_id(job.driver);
            let mut spec = RideSpec::new(
                &format!("{did}-r{}", job.ride_no + 1),
                did.as_str(),
                job.archetype.clone(),
                duration,
            );
            spec.start_time = default_start() + chrono::Duration::seconds(offset as i64);
            spec.mount = Some(mount);
            spec.gps = opts.gps;
            let (ride, truth) = generate_ride(net, &spec, rng.next_u64());
            FleetRide { ride, truth }
        })
        .collect();
    Ok(Fleet { rides, labels })
}

fn driver_id(i: usize) -> DriverId {
    DriverId::new(format!("drv{:03}", i + 1)).expect("non-empty")
}

/// Writes `rides/<ride_id>/` directories in the ingest layout, each with its
/// `ground_truth.jsonl`, plus `labels.csv` at the corpus root.
pub fn write_fleet(fleet: &Fleet, dir: impl AsRef<Path>) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    fleet.rides.par_iter().try_for_each(|r| {
        let rd = dir.join(RIDES_DIR).join(r.ride.ride_id.as_str());
        write_ride(&r.ride, &rd)?;
        let gt = rd.join(GROUND_TRUTH_FILE);
        r.truth.write(&gt).map_err(io(&gt))
    })?;
    let path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| IngestError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    let res = (|| -> csv::Result<()> {
        w.write_record(["driver_id", "archetype"])?;
        for (d, a) in &fleet.labels {
            w.write_record([d.as_str(), a.as_str()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| IngestError::Io {
        path,
        source: e.into(),
    })
}

/// Reads `labels.csv` as `(driver_id, archetype)` pairs.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(DriverId, String)>, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let bad = |reason: String| IngestError::MalformedRow {
            file: path.display().to_string(),
            line: i as u64 + 2,
            reason,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", rec.len())));
        }
        out.push((DriverId::new(&rec[0])?, rec[1].to_string()));
    }
    Ok(out)
}
