//! Synthetic street grids with an optional perimeter highway.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{equidistant_apex, LatLon, EARTH_RADIUS_M};
use crate::network::{RoadClass, RoadNetwork, RoadSegment, SegmentId};

pub const LOCAL_LIMIT_MPS: f64 = 11.2;
pub const HIGHWAY_LIMIT_MPS: f64 = 29.0;
pub const DEFAULT_BLOCK_M: f64 = 120.0;

/// South-west corner of the layout before the per-seed offset.
pub const BASE_ORIGIN: LatLon = LatLon::new(37.7749, -122.4194);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub grid_n: usize,
    pub block_m: f64,
    pub highway: bool,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(grid_n: usize, highway: bool, seed: u64) -> Self {
        Self {
            grid_n,
            block_m: DEFAULT_BLOCK_M,
            highway,
            seed,
        }
    }
}

/// Lattice of nodes where every east-west and north-south edge has geodesic
/// length `d`. Row 0 runs east along a parallel, column 0 north along a
/// meridian; every other node closes a rhombus on its south and west neighbours.
fn lattice(origin: LatLon, size: usize, d: f64) -> Vec<Vec<LatLon>> {
    let ang = d / EARTH_RADIUS_M;
    let mut rows = vec![vec![origin; size]; size];
    let phi0 = origin.lat.to_radians();
    let dlon = (2.0 * ((ang / 2.0).sin() / phi0.cos()).asin()).to_degrees();
    for c in 1..size {
        rows[0][c] = LatLon::new(origin.lat, origin.lon + dlon * c as f64);
    }
    for r in 1..size {
        rows[r][0] = LatLon::new(origin.lat + ang.to_degrees() * r as f64, origin.lon);
        for c in 1..size {
            rows[r][c] = equidistant_apex(rows[r - 1][c], rows[r][c - 1], d, rows[r - 1][c - 1]);
        }
    }
    rows
}

/// Builds the network. Segment ids are assigned in a fixed order: grid
/// east-west edges, grid north-south edges, highway ring, ramps. The seed only
/// shifts the layout's origin by up to about a kilometre.
pub fn generate_network(spec: &GridSpec) -> RoadNetwork {
    assert!(spec.grid_n >= 2, "grid_n must be at least 2");
    assert!(spec.block_m > 0.0, "block_m must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let origin = LatLon::new(
        BASE_ORIGIN.lat + rng.random_range(-0.01..0.01),
        BASE_ORIGIN.lon + rng.random_range(-0.01..0.01),
    );
    let n = spec.grid_n;
    let (size, off) = if spec.highway { (n + 2, 1) } else { (n, 0) };
    let nodes = lattice(origin, size, spec.block_m);

    let mut segs = Vec::new();
    let mut push = |a: LatLon, b: LatLon, class: RoadClass, limit: f64| {
        segs.push(RoadSegment {
            segment_id: SegmentId(segs.len() as u64 + 1),
            polyline: vec![a, b],
            road_class: class,
            speed_limit: Some(limit),
        });
    };
    let local = |push: &mut dyn FnMut(LatLon, LatLon, RoadClass, f64), a, b| {
        push(a, b, RoadClass::Local, LOCAL_LIMIT_MPS)
    };
    for r in off..off + n {
        for c in off..off + n - 1 {
            local(&mut push, nodes[r][c], nodes[r][c + 1]);
        }
    }
    for c in off..off + n {
        for r in off..off + n - 1 {
            local(&mut push, nodes[r][c], nodes[r + 1][c]);
        }
    }
    if spec.highway {
        let last = size - 1;
        let hw = |push: &mut dyn FnMut(LatLon, LatLon, RoadClass, f64), a, b| {
            push(a, b, RoadClass::Highway, HIGHWAY_LIMIT_MPS)
        };
        for c in 0..last {
            hw(&mut push, nodes[0][c], nodes[0][c + 1]);
        }
        for r in 0..last {
            hw(&mut push, nodes[r][last], nodes[r + 1][last]);
        }
        for c in (1..=last).rev() {
            hw(&mut push, nodes[last][c], nodes[last][c - 1]);
        }
        for r in (1..=last).rev() {
            hw(&mut push, nodes[r][0], nodes[r - 1][0]);
        }
        let (lo, hi) = (off, off + n - 1);
        local(&mut push, nodes[lo][lo], nodes[0][lo]);
        local(&mut push, nodes[lo][hi], nodes[lo][last]);
        local(&mut push, nodes[hi][hi], nodes[last][hi]);
        local(&mut push, nodes[hi][lo], nodes[hi][0]);
    }
    RoadNetwork::new(segs).expect("generated network is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_m;

    #[test]
    fn segment_counts() {
        assert_eq!(generate_network(&GridSpec::new(3, false, 1)).len(), 12);
        assert_eq!(generate_network(&GridSpec::new(10, false, 1)).len(), 180);
        // ring on a 12x12 lattice: 44 edges, plus 4 ramps
        assert_eq!(generate_network(&GridSpec::new(10, true, 1)).len(), 180 + 44 + 4);
    }

    #[test]
    fn grid_edges_have_block_length() {
        let net = generate_network(&GridSpec::new(8, true, 3));
        for s in net.segments() {
            let len = haversine_m(s.polyline[0], s.polyline[1]);
            assert!((len - 120.0).abs() < 1e-6, "segment {} is {len} m", s.segment_id);
        }
    }

    #[test]
    fn highway_ring_is_connected_to_grid() {
        let net = generate_network(&GridSpec::new(4, true, 9));
        let hw: Vec<usize> = (0..net.len())
            .filter(|&i| net.segment(i).road_class == RoadClass::Highway)
            .collect();
        assert_eq!(hw.len(), 20);
        assert!(hw.iter().all(|&i| net.segment(i).speed_limit == Some(HIGHWAY_LIMIT_MPS)));
        // every node has degree >= 2, so random walks never dead-end
        assert!((0..net.node_count()).all(|n| net.incident(n).len() >= 2));
    }
}
