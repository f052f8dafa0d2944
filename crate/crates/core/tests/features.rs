mod common {
    pub mod pipeline;
}

use std::collections::BTreeMap;
use std::sync::OnceLock;

use common::pipeline::{by_driver, on_segment, process};
use drivenorm_core::features::*;
use drivenorm_core::ingest::DriverId;
use drivenorm_core::norms::*;
use drivenorm_core::synth::*;
use proptest::prelude::*;

struct Fleet {
    labels: BTreeMap<DriverId, String>,
    features: FeatureSet,
}

/// Five archetypes, 20 drivers each, 3 rides per driver.
fn fleet() -> &'static Fleet {
    static F: OnceLock<Fleet> = OnceLock::new();
    F.get_or_init(|| {
        let net = generate_network(&GridSpec::new(8, true, 1));
        let mix: Vec<MixEntry> = Archetype::presets()
            .into_iter()
            .map(|archetype| MixEntry {
                archetype,
                n_drivers: 20,
                rides_each: 3,
            })
            .collect();
        let fleet = generate_fleet(&net, &mix, &FleetOptions::default()).unwrap();
        let mk = process(&net, &fleet.rides.iter().map(|r| &r.ride).collect::<Vec<_>>());
        let norms = build_norms(&mk, &NormParams::default());
        Fleet {
            labels: fleet.labels.iter().cloned().collect(),
            features: extract_driver_features(&by_driver(mk), &norms, &FeatureParams::default()),
        }
    })
}

fn archetype_mean(f: &Fleet, archetype: &str, name: &str) -> f64 {
    let v: Vec<f64> = f
        .features
        .features
        .iter()
        .filter(|d| f.labels[&d.driver_id] == archetype)
        .map(|d| d.get(name).unwrap())
        .collect();
    assert!(!v.is_empty());
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn aggressive_event_rates_triple_the_conformer() {
    let f = fleet();
    assert!(f.features.skipped.is_empty(), "{:?}", f.features.skipped);
    for name in ["hard_accel_rate", "hard_brake_rate"] {
        let a = archetype_mean(f, "aggressive", name);
        let c = archetype_mean(f, "conformer", name);
        assert!(a > 0.0 && a >= 3.0 * c, "{name}: aggressive {a}, conformer {c}");
    }
}

#[test]
fn conformers_drive_at_the_norm() {
    let f = fleet();
    for d in f.features.features.iter().filter(|d| f.labels[&d.driver_id] == "conformer") {
        let r = d.get("mean_speed_ratio").unwrap();
        assert!((0.95..=1.05).contains(&r), "{} ratio {r}", d.driver_id.as_str());
    }
}

#[test]
fn sharp_turners_turn_hardest() {
    let f = fleet();
    let s = archetype_mean(f, "sharp_turner", "sharp_turn_rate");
    for other in ["conformer", "aggressive", "slow_cautious", "mild_fast"] {
        assert!(s > 3.0 * archetype_mean(f, other, "sharp_turn_rate"), "{other}");
    }
}

fn norms_for(rides: &[MatchedKinematics]) -> NormsTable {
    build_norms(
        rides,
        &NormParams {
            min_trips: 2,
            ..Default::default()
        },
    )
}

/// Rides on segment 1 with a slowly varying speed and braking pattern.
fn pattern_rides(n: usize, secs: usize) -> Vec<MatchedKinematics> {
    (0..n)
        .map(|r| {
            let phase = r as f64 * 0.7;
            on_segment(
                &format!("r{r:02}"),
                if r % 2 == 0 { "even" } else { "odd" },
                1,
                secs,
                move |i| 12.0 + 3.0 * ((i as f64) * 0.05 + phase).sin(),
                move |i| 2.8 * ((i as f64) * 0.21 + phase).sin(),
                move |i| 1.5 * ((i as f64) * 0.13 + phase).cos(),
            )
        })
        .collect()
}

#[test]
fn one_kilometre_driver_is_skipped() {
    let mut rides = pattern_rides(6, 600);
    // 100 s at 10 m/s
    rides.push(on_segment("short", "tiny", 1, 100, |_| 10.0, |_| 0.1, |_| 0.0));
    let norms = norms_for(&rides);
    let set = extract_driver_features(&by_driver(rides), &norms, &FeatureParams::default());
    assert_eq!(set.features.len(), 2);
    assert_eq!(set.skipped.len(), 1);
    assert_eq!(set.skipped[0].driver_id.as_str(), "tiny");
    let mut buf = Vec::new();
    set.write_skipped_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("driver_id,reason\ntiny,"), "{text}");
}

#[test]
fn empty_input_gives_empty_set() {
    let norms = norms_for(&pattern_rides(3, 60));
    let set = extract_driver_features(&[], &norms, &FeatureParams::default());
    assert!(set.features.is_empty() && set.skipped.is_empty());
}

#[test]
fn features_follow_hand_computed_values() {
    // one driver, one ride, 1000 s at 10 m/s on a segment with a known norm
    let mut rides = pattern_rides(4, 1000);
    let lon = |i: usize| if i % 10 == 0 { 3.0 } else if i % 10 == 5 { -4.0 } else { 0.0 };
    let lat = |i: usize| if i % 20 == 0 { 3.5 } else { -0.5 };
    rides.push(on_segment("solo", "solo", 1, 1000, |_| 10.0, lon, lat));
    let norms = norms_for(&rides);
    let set = extract_driver_features(&by_driver(rides), &norms, &FeatureParams::default());
    let d = set.features.iter().find(|d| d.driver_id.as_str() == "solo").unwrap();
    assert!((d.get("distance_km").unwrap() - 10.0).abs() < 1e-9);
    // 100 seconds above +2.5 and 100 below -3.0 over 10 km
    assert!((d.get("hard_accel_rate").unwrap() - 1000.0).abs() < 1e-9);
    assert!((d.get("hard_brake_rate").unwrap() - 1000.0).abs() < 1e-9);
    assert!((d.get("sharp_turn_rate").unwrap() - 500.0).abs() < 1e-9);
    assert!((d.get("mean_abs_lon_accel").unwrap() - 0.7).abs() < 1e-9);
    assert!((d.get("mean_abs_lat_accel").unwrap() - (50.0 * 3.5 + 950.0 * 0.5) / 1000.0).abs() < 1e-9);
    // jumps of 3 (twice) and 4 (twice) every 10 s, less the one at t = 0, over 999 differences
    let jerk = (100.0 * 6.0 + 100.0 * 8.0 - 3.0) / 999.0;
    assert!((d.get("mean_abs_jerk").unwrap() - jerk).abs() < 1e-9, "{}", d.get("mean_abs_jerk").unwrap());
}

#[test]
fn norm_ride_does_not_brake_harder_than_norm() {
    let rides = pattern_rides(8, 300);
    let norms = norms_for(&rides);
    // a ride that sits exactly on each cell mean
    let mut mean_ride = rides[0].clone();
    mean_ride.ride_id = drivenorm_core::ingest::RideId::new("mean").unwrap();
    mean_ride.driver_id = DriverId::new("mean").unwrap();
    for i in 0..mean_ride.len() {
        let cell = norms.valid_cell(mean_ride.segment[i].unwrap(), mean_ride.bin_at(i, norms.params.binning)).unwrap();
        mean_ride.speed[i] = cell.get(Quantity::Speed).mean;
        mean_ride.lon_accel[i] = cell.get(Quantity::LonAccel).mean;
        mean_ride.lat_accel[i] = cell.get(Quantity::LatAccel).mean;
    }
    let set = extract_driver_features(
        &[(mean_ride.driver_id.clone(), vec![mean_ride])],
        &norms,
        &FeatureParams { min_km: 0.0, ..Default::default() },
    );
    assert!(set.features[0].get("brake_z_p95").unwrap() <= 0.0);
}

#[test]
fn random_matrix_standardizes_to_zero_mean_unit_std() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
    let feats: Vec<DriverFeatures> = (0..50)
        .map(|i| {
            let mut values = [0.0; 10];
            for (j, v) in values.iter_mut().enumerate() {
                *v = rng.random_range(-5.0..5.0) * (j + 1) as f64 + j as f64 * 100.0;
            }
            DriverFeatures {
                driver_id: DriverId::new(&format!("d{i}")).unwrap(),
                values,
            }
        })
        .collect();
    let m = standardize(&feats).unwrap();
    assert_eq!(m.column_names.len(), 10);
    for j in 0..10 {
        let col: Vec<f64> = m.rows.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "column {j} var {var}");
        // recompute the z-score directly from the raw values
        let raw: Vec<f64> = feats.iter().map(|f| f.values[j]).collect();
        let rm = raw.iter().sum::<f64>() / 50.0;
        let rs = (raw.iter().map(|x| (x - rm).powi(2)).sum::<f64>() / 50.0).sqrt();
        for (z, x) in col.iter().zip(&raw) {
            assert!((z - (x - rm) / rs).abs() < 1e-9);
        }
    }
}

#[test]
fn features_csv_header() {
    let mut buf = Vec::new();
    FeatureSet::default().write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        "driver_id,mean_speed_ratio,p95_speed_ratio,hard_accel_rate,hard_brake_rate,sharp_turn_rate,\
         mean_abs_lat_accel,mean_abs_lon_accel,mean_abs_jerk,brake_z_p95,distance_km"
    );
}

fn matrix(rows: &[Vec<f64>]) -> Result<FeatureMatrix, FeatureError> {
    FeatureMatrix::from_raw(
        (0..rows.len()).map(|i| DriverId::new(&format!("d{i}")).unwrap()).collect(),
        (0..rows[0].len()).map(|j| format!("f{j}")).collect(),
        rows.to_vec(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ride_order_does_not_matter(seed in 0u64..1000, swap in 0usize..6) {
        let mut rides = pattern_rides(6, 200);
        for r in rides.iter_mut() {
            for v in r.lon_accel.iter_mut() {
                *v += (seed as f64 * 0.37).sin();
            }
        }
        let norms = norms_for(&rides);
        let p = FeatureParams { min_km: 0.0, ..Default::default() };
        let a = extract_driver_features(&by_driver(rides.clone()), &norms, &p);
        let mut grouped = by_driver(rides);
        for (_, list) in grouped.iter_mut() {
            let n = list.len();
            list.rotate_left(swap % n);
            list.reverse();
        }
        let b = extract_driver_features(&grouped, &norms, &p);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_braking_and_acceleration(c in 1.01f64..4.0, amp in 0.5f64..4.0) {
        let rides = pattern_rides(6, 300);
        let norms = norms_for(&rides);
        let p = FeatureParams { min_km: 0.0, ..Default::default() };
        let base = on_segment("x", "x", 1, 300, |_| 11.0, move |i| amp * (i as f64 * 0.3).sin(), |_| 0.2);
        let mut scaled = base.clone();
        for v in scaled.lon_accel.iter_mut() {
            *v *= c;
        }
        let f0 = &extract_driver_features(&[(base.driver_id.clone(), vec![base])], &norms, &p).features[0];
        let f1 = &extract_driver_features(&[(scaled.driver_id.clone(), vec![scaled])], &norms, &p).features[0];
        prop_assert!(f1.get("mean_abs_lon_accel").unwrap() > f0.get("mean_abs_lon_accel").unwrap());
        prop_assert!(f1.get("hard_accel_rate").unwrap() >= f0.get("hard_accel_rate").unwrap());
    }

    #[test]
    fn standardize_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..30)) {
        let Ok(once) = matrix(&rows) else { return Ok(()); };
        let twice = matrix(&once.rows).unwrap();
        prop_assert_eq!(twice.rows.len(), once.rows.len());
        for (a, b) in once.rows.iter().zip(&twice.rows) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn two_drivers_are_plus_minus_one(a in prop::collection::vec(-50f64..50.0, 10), b in prop::collection::vec(-50f64..50.0, 10)) {
        match matrix(&[a.clone(), b.clone()]) {
            Ok(m) => {
                prop_assert_eq!(m.column_names.len() + m.dropped_columns.len(), 10);
                for j in 0..m.column_names.len() {
                    prop_assert!((m.rows[0][j].abs() - 1.0).abs() < 1e-9);
                    prop_assert!((m.rows[0][j] + m.rows[1][j]).abs() < 1e-9);
                }
            }
            Err(e) => prop_assert_eq!(e, FeatureError::EmptyAfterStandardize),
        }
    }
}

#[test]
fn identical_drivers_leave_nothing() {
    assert_eq!(matrix(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap_err(), FeatureError::EmptyAfterStandardize);
    assert_eq!(matrix(&[vec![1.0, 2.0]]).unwrap_err(), FeatureError::TooFewDrivers(1));
}
