//! Regenerates the frozen corpus under `tests/fixtures/frozen`: a small
//! synthetic fleet, its road network and the recorded matcher exchanges.
//!
//! cargo run -p drivenorm --example freeze_fixture

use std::fs;
use std::path::Path;

use drivenorm_core::mapmatch::{gps_points, match_rides, MatchCache, MatchParams, OfflineMatcher, RecordingMatcher};
use drivenorm_core::synth::{
    generate_fleet, generate_network, write_fleet, Archetype, FleetOptions, GridSpec, MixEntry, GROUND_TRUTH_FILE,
    RIDES_DIR,
};

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/frozen");
    let corpus = root.join("corpus");
    let _ = fs::remove_dir_all(&corpus);
    fs::create_dir_all(&corpus).unwrap();

    let net = generate_network(&GridSpec::new(4, true, 11));
    net.save(root.join("network.geojson")).unwrap();
    let mix: Vec<MixEntry> = [Archetype::conformer(), Archetype::aggressive()]
        .into_iter()
        .map(|archetype| MixEntry {
            archetype,
            n_drivers: 5,
            rides_each: 1,
        })
        .collect();
    let opts = FleetOptions {
        seed: 11,
        duration_s: (150.0, 200.0),
        ..FleetOptions::default()
    };
    let fleet = generate_fleet(&net, &mix, &opts).unwrap();
    write_fleet(&fleet, &corpus).unwrap();
    // the pipeline never reads ground truth; keep the fixture small
    for r in &fleet.rides {
        fs::remove_file(corpus.join(RIDES_DIR).join(r.ride.ride_id.as_str()).join(GROUND_TRUTH_FILE)).unwrap();
    }

    let params = MatchParams::default();
    let rec = RecordingMatcher::new(OfflineMatcher::new(&net, params));
    let pts: Vec<_> = fleet.rides.iter().map(|r| (r.ride.ride_id.clone(), gps_points(&r.ride))).collect();
    for m in match_rides(&pts, &net, &rec, &mut MatchCache::in_memory(), &params) {
        m.unwrap();
    }
    rec.save(root.join("matcher.json")).unwrap();
    println!("wrote {} rides to {}", fleet.rides.len(), root.display());
}
