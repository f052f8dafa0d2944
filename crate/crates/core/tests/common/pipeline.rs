//! Shared fixtures: synthetic rides pushed through matching and the vehicle
//! frame, and hand-built matched rides on a fixed time base.

#![allow(dead_code)]

use drivenorm_core::ingest::{DriverId, Ride, RideId};
use drivenorm_core::mapmatch::*;
use drivenorm_core::network::{RoadNetwork, SegmentId};
use drivenorm_core::norms::MatchedKinematics;
use drivenorm_core::signal::*;
use drivenorm_core::synth::default_start;

/// Matches, orients and aligns every ride.
pub fn process(net: &RoadNetwork, rides: &[&Ride]) -> Vec<MatchedKinematics> {
    let params = MatchParams::default();
    let matcher = OfflineMatcher::new(net, params);
    let pts: Vec<_> = rides.iter().map(|r| (r.ride_id.clone(), gps_points(r))).collect();
    let matched = match_rides(&pts, net, &matcher, &mut MatchCache::in_memory(), &params);
    rides
        .iter()
        .zip(matched)
        .map(|(r, m)| {
            let m = m.unwrap();
            let map = infer_axis_mapping(r, &m.turn_windows).unwrap();
            let kin = to_vehicle_frame(r, &map, &FrameOptions::default()).unwrap();
            MatchedKinematics::align(&kin, &m, r.driver_id.clone(), r.start_time)
        })
        .collect()
}

/// A matched ride whose every second sits on `seg`, starting at the default
/// start time. Each closure receives the second index.
pub fn on_segment(
    ride: &str,
    driver: &str,
    seg: u64,
    secs: usize,
    speed: impl Fn(usize) -> f64,
    lon: impl Fn(usize) -> f64,
    lat: impl Fn(usize) -> f64,
) -> MatchedKinematics {
    MatchedKinematics {
        ride_id: RideId::new(ride).unwrap(),
        driver_id: DriverId::new(driver).unwrap(),
        start_time: default_start(),
        t: (0..secs).map(|i| i as f64).collect(),
        segment: vec![Some(SegmentId(seg)); secs],
        pos: vec![None; secs],
        speed: (0..secs).map(&speed).collect(),
        lon_accel: (0..secs).map(&lon).collect(),
        lat_accel: (0..secs).map(&lat).collect(),
        yaw_rate: None,
        gap: vec![false; secs],
    }
}

/// Groups matched rides by driver, in driver id order.
pub fn by_driver(rides: Vec<MatchedKinematics>) -> Vec<(DriverId, Vec<MatchedKinematics>)> {
    let mut out: std::collections::BTreeMap<DriverId, Vec<MatchedKinematics>> = Default::default();
    for r in rides {
        out.entry(r.driver_id.clone()).or_default().push(r);
    }
    out.into_iter().collect()
}
