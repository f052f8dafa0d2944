//! Road network: segments, topology and a spatial index for candidate search.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{closest_on_polyline, haversine_m, LatLon, LocalFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u64);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Highway,
    Arterial,
    Local,
}

impl RoadClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadClass::Highway => "highway",
            RoadClass::Arterial => "arterial",
            RoadClass::Local => "local",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "highway" => Some(RoadClass::Highway),
            "arterial" => Some(RoadClass::Arterial),
            "local" => Some(RoadClass::Local),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub segment_id: SegmentId,
    pub polyline: Vec<LatLon>,
    pub road_class: RoadClass,
    pub speed_limit: Option<f64>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("duplicate segment id {0}")]
    DuplicateId(SegmentId),
    #[error("segment {0}: {1}")]
    BadSegment(SegmentId, String),
    #[error("network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Snap of a point onto one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    pub snapped: LatLon,
    pub along: f64,
    pub distance: f64,
}

type IndexedBox = GeomWithData<Rectangle<[f64; 2]>, usize>;

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    lengths: Vec<Vec<f64>>,
    totals: Vec<f64>,
    by_id: HashMap<SegmentId, usize>,
    /// Node index of each segment's first and last vertex.
    ends: Vec<(usize, usize)>,
    nodes: Vec<LatLon>,
    adjacency: Vec<Vec<(usize, usize)>>,
    frame: LocalFrame,
    index: RTree<IndexedBox>,
}

fn node_key(p: LatLon) -> (u64, u64) {
    (p.lat.to_bits(), p.lon.to_bits())
}

impl RoadNetwork {
    pub fn new(mut segments: Vec<RoadSegment>) -> Result<Self, NetworkError> {
        segments.sort_by_key(|s| s.segment_id);
        let mut by_id = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            if by_id.insert(s.segment_id, i).is_some() {
                return Err(NetworkError::DuplicateId(s.segment_id));
            }
            if s.polyline.len() < 2 {
                return Err(NetworkError::BadSegment(s.segment_id, "fewer than 2 vertices".into()));
            }
            if s.polyline.windows(2).any(|w| w[0] == w[1]) {
                return Err(NetworkError::BadSegment(s.segment_id, "repeated vertex".into()));
            }
        }
        let lengths: Vec<Vec<f64>> = segments
            .iter()
            .map(|s| s.polyline.windows(2).map(|w| haversine_m(w[0], w[1])).collect())
            .collect();
        let totals = lengths.iter().map(|l| l.iter().sum()).collect();

        let mut node_ids: HashMap<(u64, u64), usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut intern = |p: LatLon| {
            *node_ids.entry(node_key(p)).or_insert_with(|| {
                nodes.push(p);
                nodes.len() - 1
            })
        };
        let ends: Vec<(usize, usize)> = segments
            .iter()
            .map(|s| (intern(s.polyline[0]), intern(*s.polyline.last().unwrap())))
            .collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, &(a, b)) in ends.iter().enumerate() {
            adjacency[a].push((i, b));
            adjacency[b].push((i, a));
        }

        let origin = segments.first().map_or(LatLon::new(0.0, 0.0), |s| s.polyline[0]);
        let frame = LocalFrame::new(origin);
        let boxes = segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let pts: Vec<[f64; 2]> = s.polyline.iter().map(|p| frame.project(*p)).collect();
                let lo = pts.iter().fold([f64::MAX; 2], |a, p| [a[0].min(p[0]), a[1].min(p[1])]);
                let hi = pts.iter().fold([f64::MIN; 2], |a, p| [a[0].max(p[0]), a[1].max(p[1])]);
                GeomWithData::new(Rectangle::from_corners(lo, hi), i)
            })
            .collect();
        Ok(Self {
            segments,
            lengths,
            totals,
            by_id,
            ends,
            nodes,
            adjacency,
            frame,
            index: RTree::bulk_load(boxes),
        })
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn index_of(&self, id: SegmentId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn segment(&self, idx: usize) -> &RoadSegment {
        &self.segments[idx]
    }

    pub fn length_m(&self, idx: usize) -> f64 {
        self.totals[idx]
    }

    pub fn ends(&self, idx: usize) -> (usize, usize) {
        self.ends[idx]
    }

    pub fn node(&self, n: usize) -> LatLon {
        self.nodes[n]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Segments incident to node `n`, with the node at their other end.
    pub fn incident(&self, n: usize) -> &[(usize, usize)] {
        &self.adjacency[n]
    }

    pub fn project(&self, p: LatLon, idx: usize) -> Projection {
        let (snapped, along, distance) =
            closest_on_polyline(p, &self.segments[idx].polyline, &self.lengths[idx]);
        Projection {
            segment: idx,
            snapped,
            along,
            distance,
        }
    }

    /// All segments within `radius_m` of `p`, ordered by segment id.
    pub fn candidates(&self, p: LatLon, radius_m: f64) -> Vec<Projection> {
        let xy = self.frame.project(p);
        // generous slack for the planar approximation of the envelope
        let r = radius_m * 1.05 + 1.0;
        let env = AABB::from_corners([xy[0] - r, xy[1] - r], [xy[0] + r, xy[1] + r]);
        let mut idx: Vec<usize> = self
            .index
            .locate_in_envelope_intersecting(&env)
            .map(|g| g.data)
            .collect();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| self.project(p, i))
            .filter(|c| c.distance <= radius_m)
            .collect()
    }

    /// Distance along the network between two on-segment positions, bounded
    /// by `cutoff_m`; `None` when no path shorter than the cutoff exists.
    pub fn network_distance(&self, a: (usize, f64), b: (usize, f64), cutoff_m: f64) -> Option<f64> {
        self.network_distances(a, &[b], cutoff_m)[0]
    }

    /// [`RoadNetwork::network_distance`] from one source to many targets.
    pub fn network_distances(
        &self,
        a: (usize, f64),
        targets: &[(usize, f64)],
        cutoff_m: f64,
    ) -> Vec<Option<f64>> {
        let (sa, fa) = a;
        let la = self.totals[sa];
        let (a0, a1) = self.ends[sa];
        let mut dist = None;
        targets
            .iter()
            .map(|&(sb, fb)| {
                let lb = self.totals[sb];
                let via_nodes = {
                    let dist = dist.get_or_insert_with(|| {
                        self.dijkstra(&[(a0, fa * la), (a1, (1.0 - fa) * la)], cutoff_m)
                    });
                    let (b0, b1) = self.ends[sb];
                    [(b0, fb * lb), (b1, (1.0 - fb) * lb)]
                        .iter()
                        .filter_map(|&(n, tail)| dist.get(&n).map(|d| d + tail))
                        .filter(|d| *d <= cutoff_m)
                        .min_by(f64::total_cmp)
                };
                if sb == sa {
                    let direct = (fb - fa).abs() * la;
                    Some(via_nodes.map_or(direct, |v| v.min(direct))).filter(|d| *d <= cutoff_m)
                } else {
                    via_nodes
                }
            })
            .collect()
    }

    fn dijkstra(&self, starts: &[(usize, f64)], cutoff: f64) -> BTreeMap<usize, f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        for &(n, d) in starts {
            if best.get(&n).is_none_or(|&b| d < b) {
                best.insert(n, d);
                heap.push(Item(d, n));
            }
        }
        while let Some(Item(d, n)) = heap.pop() {
            if d > best[&n] || d > cutoff {
                continue;
            }
            for &(seg, m) in &self.adjacency[n] {
                let nd = d + self.totals[seg];
                if nd <= cutoff && best.get(&m).is_none_or(|&b| nd < b) {
                    best.insert(m, nd);
                    heap.push(Item(nd, m));
                }
            }
        }
        best
    }

    /// Compass bearing of the segment at fraction `along`, in its digitised direction.
    pub fn bearing_at(&self, idx: usize, along: f64) -> f64 {
        let poly = &self.segments[idx].polyline;
        let lens = &self.lengths[idx];
        let target = along.clamp(0.0, 1.0) * self.totals[idx];
        let mut acc = 0.0;
        for (i, l) in lens.iter().enumerate() {
            if acc + l >= target || i == lens.len() - 1 {
                return crate::geo::bearing_deg(poly[i], poly[i + 1]);
            }
            acc += l;
        }
        crate::geo::bearing_deg(poly[0], poly[1])
    }

    /// Position at fraction `along` of segment `idx`.
    pub fn point_at(&self, idx: usize, along: f64) -> LatLon {
        let poly = &self.segments[idx].polyline;
        let lens = &self.lengths[idx];
        let target = along.clamp(0.0, 1.0) * self.totals[idx];
        let mut acc = 0.0;
        for (i, l) in lens.iter().enumerate() {
            if acc + l >= target || i == lens.len() - 1 {
                let f = if *l > 0.0 { ((target - acc) / l).clamp(0.0, 1.0) } else { 0.0 };
                return crate::geo::interpolate(poly[i], poly[i + 1], f);
            }
            acc += l;
        }
        *poly.last().unwrap()
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .segments
            .iter()
            .map(|s| {
                let coords: Vec<[f64; 2]> = s.polyline.iter().map(|p| [p.lon, p.lat]).collect();
                let mut props = json!({
                    "segment_id": s.segment_id.0,
                    "road_class": s.road_class.as_str(),
                });
                if let Some(l) = s.speed_limit {
                    props["speed_limit_mps"] = json!(l);
                }
                json!({
                    "type": "Feature",
                    "geometry": {"type": "LineString", "coordinates": coords},
                    "properties": props,
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }

    pub fn from_geojson(v: &Value) -> Result<Self, NetworkError> {
        let fmt = |m: &str| NetworkError::Format(m.to_string());
        if v["type"] != "FeatureCollection" {
            return Err(fmt("expected a FeatureCollection"));
        }
        let features = v["features"].as_array().ok_or_else(|| fmt("missing features"))?;
        let mut segments = Vec::with_capacity(features.len());
        for f in features {
            let props = &f["properties"];
            let id = props["segment_id"]
                .as_u64()
                .ok_or_else(|| fmt("segment_id must be a non-negative integer"))?;
            let road_class = props["road_class"]
                .as_str()
                .and_then(RoadClass::parse)
                .ok_or_else(|| fmt("road_class must be highway, arterial or local"))?;
            let speed_limit = props.get("speed_limit_mps").and_then(Value::as_f64);
            if f["geometry"]["type"] != "LineString" {
                return Err(fmt("only LineString geometries are supported"));
            }
            let coords = f["geometry"]["coordinates"]
                .as_array()
                .ok_or_else(|| fmt("missing coordinates"))?;
            let polyline = coords
                .iter()
                .map(|c| match (c[0].as_f64(), c[1].as_f64()) {
                    (Some(lon), Some(lat)) => Ok(LatLon::new(lat, lon)),
                    _ => Err(fmt("coordinate must be [lon, lat]")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            segments.push(RoadSegment {
                segment_id: SegmentId(id),
                polyline,
                road_class,
                speed_limit,
            });
        }
        Self::new(segments)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| NetworkError::Format(e.to_string()))?;
        Self::from_geojson(&v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        let text = serde_json::to_string_pretty(&self.to_geojson()).map_err(|e| NetworkError::Format(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
