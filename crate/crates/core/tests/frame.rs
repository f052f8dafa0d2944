use drivenorm_core::geo::LatLon;
use drivenorm_core::ingest::{DriverId, Ride, RideId};
use drivenorm_core::mapmatch::*;
use drivenorm_core::network::RoadNetwork;
use drivenorm_core::signal::*;
use drivenorm_core::synth::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matched_windows(net: &RoadNetwork, ride: &Ride) -> Vec<TurnWindow> {
    let params = MatchParams::default();
    let m = OfflineMatcher::new(net, params);
    match_ride(&ride.ride_id, &gps_points(ride), net, &m, &mut MatchCache::in_memory(), &params)
        .unwrap()
        .turn_windows
}

fn scripted(profile: &[(f64, f64)], v0: f64, mount: PhoneMount, noisy: bool, seed: u64) -> Ride {
    let trace = integrate_profile(LatLon::new(37.77, -122.42), 0.0, v0, profile);
    let mut opts = SensorOptions::noiseless(mount);
    if noisy {
        opts = SensorOptions {
            gps: GpsErrorModel::new(4.0).unwrap(),
            speed_sigma: 0.3,
            imu_noise: true,
            gyro_sigma: 0.005,
            mount,
        };
    }
    render_ride(
        &trace,
        RideId::new("scripted").unwrap(),
        DriverId::new("d").unwrap(),
        default_start(),
        0.15,
        &opts,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

#[test]
fn landscape_ride_maps_z_forward_y_left() {
    let net = generate_network(&GridSpec::new(8, false, 1));
    let spec = RideSpec::new("r", "d", Archetype::conformer(), 600.0);
    let (ride, _) = generate_ride(&net, &spec, 5);
    let windows = matched_windows(&net, &ride);
    assert!(windows.len() >= 3);
    let m = infer_axis_mapping(&ride, &windows).unwrap();
    assert_eq!(m.source, MappingSource::Inferred);
    assert_eq!(m.longitudinal, SignedAxis::new(PhoneAxis::Z, 1));
    assert_eq!(m.lateral, SignedAxis::new(PhoneAxis::Y, 1));
    assert!(m.confidence > 0.5 && m.confidence <= 1.0);
}

#[test]
fn permuted_mounts_are_recovered() {
    let net = generate_network(&GridSpec::new(8, true, 2));
    for (i, mount) in PhoneMount::all().into_iter().enumerate() {
        let mut spec = RideSpec::new("r", "d", Archetype::aggressive(), 600.0);
        spec.mount = Some(mount);
        let (ride, truth) = generate_ride(&net, &spec, 100 + i as u64);
        let m = infer_axis_mapping(&ride, &matched_windows(&net, &ride)).unwrap();
        assert_eq!(
            (m.longitudinal, m.lateral),
            (truth.mount.longitudinal(), truth.mount.lateral()),
            "mount {mount:?}"
        );
    }
}

#[test]
fn too_few_turns_fall_back_to_landscape() {
    let net = generate_network(&GridSpec::new(4, false, 1));
    let mut spec = RideSpec::new("r", "d", Archetype::conformer(), 120.0);
    spec.mount = Some(PhoneMount::all()[7]);
    let (ride, _) = generate_ride(&net, &spec, 1);
    let two = [
        TurnWindow { start: 10.0, end: 15.0, heading_change_deg: 90.0 },
        TurnWindow { start: 40.0, end: 45.0, heading_change_deg: -90.0 },
    ];
    for w in [&[][..], &two[..]] {
        let m = infer_axis_mapping(&ride, w).unwrap();
        assert_eq!(m, AxisMapping::landscape_default());
        assert_eq!(m.confidence, 0.0);
    }
}

#[test]
fn stationary_ride_is_at_rest() {
    let idle = vec![(0.0, 0.0); 1200];
    let ride = scripted(&idle, 0.0, PhoneMount::LANDSCAPE, false, 1);
    let k = to_vehicle_frame(&ride, &AxisMapping::landscape_default(), &FrameOptions::default()).unwrap();
    assert_eq!(k.len(), 120);
    assert!(k.lon_accel.iter().all(|a| a.abs() < 0.05));
    assert!(k.speed.iter().all(|&v| v == 0.0));

    // with sensor noise the smoothed signal still averages out
    let noisy = scripted(&idle, 0.0, PhoneMount::LANDSCAPE, true, 2);
    let k = to_vehicle_frame(&noisy, &AxisMapping::landscape_default(), &FrameOptions::default()).unwrap();
    let mean = k.lon_accel.iter().sum::<f64>() / k.len() as f64;
    assert!(mean.abs() < 0.05, "mean {mean}");
    let mean_speed = k.speed.iter().sum::<f64>() / k.len() as f64;
    assert!(mean_speed < 0.3, "mean speed {mean_speed}");
}

#[test]
fn constant_acceleration_is_recovered() {
    // idle long enough that the ride median of the forward axis is zero
    let mut profile = vec![(0.0, 0.0); 600];
    profile.extend(vec![(1.0, 0.0); 200]);
    profile.extend(vec![(0.0, 0.0); 300]);
    let ride = scripted(&profile, 0.0, PhoneMount::LANDSCAPE, true, 3);
    let k = to_vehicle_frame(&ride, &AxisMapping::landscape_default(), &FrameOptions::default()).unwrap();
    let phase: Vec<f64> = (0..k.len()).filter(|&i| k.t[i] >= 61.0 && k.t[i] <= 79.0).map(|i| k.lon_accel[i]).collect();
    let mean = phase.iter().sum::<f64>() / phase.len() as f64;
    assert!((0.9..=1.1).contains(&mean), "mean lon accel {mean}");
}

#[test]
fn left_turn_gives_positive_lateral_accel() {
    // 10 m/s, radius 20 m: yaw 0.5 rad/s for a quarter circle
    let (v, r) = (10.0, 20.0);
    let turn_ticks = ((std::f64::consts::FRAC_PI_2 * r / v) / SIM_DT).round() as usize;
    let mut profile = vec![(0.0, 0.0); 300];
    profile.extend(vec![(0.0, v / r); turn_ticks]);
    profile.extend(vec![(0.0, 0.0); 300]);
    for mount in [PhoneMount::LANDSCAPE, PhoneMount::all()[11]] {
        let ride = scripted(&profile, v, mount, true, 4);
        let mapping = AxisMapping {
            longitudinal: mount.longitudinal(),
            lateral: mount.lateral(),
            confidence: 1.0,
            source: MappingSource::Inferred,
        };
        let k = to_vehicle_frame(&ride, &mapping, &FrameOptions::default()).unwrap();
        let peak = k.lat_accel.iter().copied().fold(f64::MIN, f64::max);
        let trough = k.lat_accel.iter().copied().fold(f64::MAX, f64::min);
        let expected = v * v / r;
        assert!(peak > 0.0 && peak.abs() > trough.abs());
        assert!((peak - expected).abs() <= 0.25 * expected, "peak {peak}");
        let yaw = k.yaw_rate.as_ref().unwrap();
        assert!(yaw.iter().copied().fold(f64::MIN, f64::max) > 0.4);
    }
}

#[test]
fn kinematics_sit_on_the_one_hertz_grid() {
    let net = generate_network(&GridSpec::new(6, false, 3));
    let (ride, _) = generate_ride(&net, &RideSpec::new("r", "d", Archetype::aggressive(), 300.0), 9);
    for filter in [
        FilterChoice::default(),
        FilterChoice::L1Trend { lambda: FilterChoice::DEFAULT_L1_LAMBDA },
        FilterChoice::TotalVariation { lambda: FilterChoice::DEFAULT_TV_LAMBDA },
    ] {
        let k = to_vehicle_frame(&ride, &AxisMapping::landscape_default(), &FrameOptions { filter }).unwrap();
        assert_eq!(k.len(), 300);
        assert!(k.t.iter().enumerate().all(|(i, &t)| t == i as f64));
        for v in [&k.speed, &k.lon_accel, &k.lat_accel, k.yaw_rate.as_ref().unwrap()] {
            assert_eq!(v.len(), k.len());
            assert!(v.iter().all(|x| x.is_finite()));
        }
        assert!(k.speed.iter().all(|&s| s >= 0.0));
        assert!(k.gap.iter().all(|g| !g));
    }
}

#[test]
fn dropped_samples_become_gaps() {
    let net = generate_network(&GridSpec::new(6, false, 3));
    let (mut ride, _) = generate_ride(&net, &RideSpec::new("r", "d", Archetype::conformer(), 120.0), 2);
    let acc = ride.streams.get_mut(&drivenorm_core::ingest::Channel::Accel).unwrap();
    acc.samples.retain(|s| !(50.45..52.45).contains(&s.t));
    let k = to_vehicle_frame(&ride, &AxisMapping::landscape_default(), &FrameOptions::default()).unwrap();
    let gaps: Vec<f64> = k.t.iter().zip(&k.gap).filter(|(_, g)| **g).map(|(t, _)| *t).collect();
    assert_eq!(gaps, vec![51.0, 52.0]);
}
