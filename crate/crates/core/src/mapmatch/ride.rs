use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BatchMatch, CacheEntry, CacheKey, GpsPoint, MatchCache, MatchError, MatchParams, MatchedPoint, Matcher};
use crate::geo::bearing_delta_deg;
use crate::ingest::RideId;
use crate::network::RoadNetwork;
use crate::signal::TurnWindow;

/// A ride's fixes with their matches (`None` where no segment was in range)
/// and the turn windows derived from the matched headings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedTrajectory {
    pub ride_id: RideId,
    pub points: Vec<GpsPoint>,
    pub matched: Vec<Option<MatchedPoint>>,
    pub turn_windows: Vec<TurnWindow>,
}

impl MatchedTrajectory {
    pub fn matched_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.matched.iter().filter(|m| m.is_some()).count() as f64 / self.points.len() as f64
    }
}

/// Consecutive batches of at most `size` points, each starting `overlap`
/// points before the previous one ended.
pub fn chunk_ranges(n: usize, size: usize, overlap: usize) -> Vec<Range<usize>> {
    assert!(size > overlap, "batch size must exceed overlap");
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push(start..end);
        if end == n {
            break;
        }
        start = end - overlap;
    }
    out
}

/// Matcher output per point; `None` where every covering batch was fully
/// cached and the matcher was not asked.
type Proposal = Vec<Option<Option<MatchedPoint>>>;

fn propose(
    points: &[GpsPoint],
    matcher: &dyn Matcher,
    cache: &MatchCache,
    params: &MatchParams,
) -> Result<Proposal, MatchError> {
    let mut out: Proposal = vec![None; points.len()];
    for r in chunk_ranges(points.len(), params.batch_size, params.overlap) {
        let batch = &points[r.clone()];
        if batch.iter().all(|p| cache.contains(&CacheKey::of(p.pos()))) {
            continue;
        }
        let res: BatchMatch = matcher.snap_batch(batch)?;
        if res.len() != batch.len() {
            return Err(MatchError::MalformedResponse(format!(
                "{} results for {} points",
                res.len(),
                batch.len()
            )));
        }
        // later batches overwrite the overlap
        for (i, m) in r.zip(res) {
            out[i] = Some(m);
        }
    }
    Ok(out)
}

/// Settles each point against the cache: a cached key fixes the segment,
/// otherwise the proposal is used and recorded. Every match is re-projected
/// onto its segment so that cold and warm runs agree exactly.
fn resolve(
    points: &[GpsPoint],
    proposal: Proposal,
    network: &RoadNetwork,
    cache: &mut MatchCache,
) -> Result<Vec<Option<MatchedPoint>>, MatchError> {
    let mut out = Vec::with_capacity(points.len());
    for (p, prop) in points.iter().zip(proposal) {
        let key = CacheKey::of(p.pos());
        let cached = cache.get(&key).and_then(|e| network.index_of(e.segment_id));
        let seg = match (cached, prop) {
            (Some(idx), _) => Some(idx),
            (None, Some(Some(m))) => Some(network.index_of(m.segment_id).ok_or_else(|| {
                MatchError::MalformedResponse(format!("unknown segment {}", m.segment_id))
            })?),
            (None, Some(None)) => None,
            (None, None) => unreachable!("batches are only skipped when every key is cached"),
        };
        out.push(seg.map(|idx| {
            let pr = network.project(p.pos(), idx);
            let m = MatchedPoint {
                original: *p,
                segment_id: network.segment(idx).segment_id,
                snapped: pr.snapped,
                along: pr.along,
                snap_distance: pr.distance,
            };
            cache.insert(
                key,
                CacheEntry {
                    segment_id: m.segment_id,
                    snapped: m.snapped,
                    along: m.along,
                },
            );
            m
        }));
    }
    Ok(out)
}

/// Matches one ride: batches of `params.batch_size` with `params.overlap`
/// points of overlap, the later batch winning, then cache resolution and
/// turn-window detection.
pub fn match_ride(
    ride_id: &RideId,
    points: &[GpsPoint],
    network: &RoadNetwork,
    matcher: &dyn Matcher,
    cache: &mut MatchCache,
    params: &MatchParams,
) -> Result<MatchedTrajectory, MatchError> {
    if points.len() < 2 {
        return Err(MatchError::TooFewPoints(points.len()));
    }
    let proposal = propose(points, matcher, cache, params)?;
    let matched = resolve(points, proposal, network, cache)?;
    Ok(MatchedTrajectory {
        ride_id: ride_id.clone(),
        points: points.to_vec(),
        turn_windows: turn_windows(network, &matched, params),
        matched,
    })
}

/// Matches many rides. Matcher calls run in parallel against the cache as it
/// was on entry; cache resolution then runs in ride-id order, so the result
/// does not depend on the thread count. Results are in input order.
pub fn match_rides(
    rides: &[(RideId, Vec<GpsPoint>)],
    network: &RoadNetwork,
    matcher: &dyn Matcher,
    cache: &mut MatchCache,
    params: &MatchParams,
) -> Vec<Result<MatchedTrajectory, MatchError>> {
    let snapshot: &MatchCache = cache;
    let proposals: Vec<Result<Proposal, MatchError>> = rides
        .par_iter()
        .map(|(_, pts)| {
            if pts.len() < 2 {
                Err(MatchError::TooFewPoints(pts.len()))
            } else {
                propose(pts, matcher, snapshot, params)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..rides.len()).collect();
    order.sort_by(|&a, &b| rides[a].0.cmp(&rides[b].0));
    let mut slots: Vec<Option<Result<Proposal, MatchError>>> = proposals.into_iter().map(Some).collect();
    let mut out: Vec<Option<Result<MatchedTrajectory, MatchError>>> = (0..rides.len()).map(|_| None).collect();
    for i in order {
        let (id, pts) = &rides[i];
        let res = slots[i].take().expect("each ride resolved once").and_then(|prop| {
            let matched = resolve(pts, prop, network, cache)?;
            Ok(MatchedTrajectory {
                ride_id: id.clone(),
                points: pts.clone(),
                turn_windows: turn_windows(network, &matched, params),
                matched,
            })
        });
        out[i] = Some(res);
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// Travel heading at each matched point: the segment bearing, reversed when
/// the vehicle drives against the digitised direction. Direction comes from
/// how the run of points on a segment connects to its neighbouring runs, or
/// failing that from the trend of `along` within the run.
fn headings(network: &RoadNetwork, matched: &[Option<MatchedPoint>]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, usize, f64)> = matched
        .iter()
        .flatten()
        .filter_map(|m| network.index_of(m.segment_id).map(|i| (m.original.t, i, m.along)))
        .collect();
    let mut runs: Vec<Range<usize>> = Vec::new();
    for i in 0..pts.len() {
        match runs.last_mut() {
            Some(r) if pts[r.start].1 == pts[i].1 => r.end = i + 1,
            _ => runs.push(i..i + 1),
        }
    }
    let shared = |a: usize, b: usize| -> Option<usize> {
        let (a0, a1) = network.ends(a);
        let (b0, b1) = network.ends(b);
        let common: Vec<usize> = [a0, a1].into_iter().filter(|n| *n == b0 || *n == b1).collect();
        (common.len() == 1).then(|| common[0])
    };
    let mut out = Vec::with_capacity(pts.len());
    for (k, r) in runs.iter().enumerate() {
        let seg = pts[r.start].1;
        let (start_node, end_node) = network.ends(seg);
        let mut forward = None;
        if k > 0 {
            match shared(pts[runs[k - 1].start].1, seg) {
                Some(n) if n == start_node => forward = Some(true),
                Some(n) if n == end_node => forward = Some(false),
                _ => {}
            }
        }
        if forward.is_none() && k + 1 < runs.len() {
            match shared(pts[runs[k + 1].start].1, seg) {
                Some(n) if n == end_node => forward = Some(true),
                Some(n) if n == start_node => forward = Some(false),
                _ => {}
            }
        }
        if forward.is_none() {
            let trend = pts[r.end - 1].2 - pts[r.start].2;
            if trend.abs() > 1e-9 {
                forward = Some(trend > 0.0);
            }
        }
        let Some(fwd) = forward else { continue };
        for &(t, s, along) in &pts[r.clone()] {
            let h = network.bearing_at(s, along);
            out.push((t, if fwd { h } else { (h + 180.0).rem_euclid(360.0) }));
        }
    }
    out
}

/// Intervals in which the matched heading changes by more than
/// `params.turn_threshold_deg` within `params.turn_span_s` seconds.
/// Overlapping intervals are merged; each window carries the signed heading
/// change from its first to its last point (negative = left).
pub fn turn_windows(
    network: &RoadNetwork,
    matched: &[Option<MatchedPoint>],
    params: &MatchParams,
) -> Vec<TurnWindow> {
    let hs = headings(network, matched);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for i in 0..hs.len() {
        for j in i + 1..hs.len() {
            if hs[j].0 - hs[i].0 > params.turn_span_s + 1e-9 {
                break;
            }
            if bearing_delta_deg(hs[i].1, hs[j].1).abs() > params.turn_threshold_deg {
                match spans.last_mut() {
                    Some(last) if i <= last.1 => last.1 = last.1.max(j),
                    _ => spans.push((i, j)),
                }
            }
        }
    }
    spans
        .into_iter()
        .map(|(i, j)| TurnWindow {
            start: hs[i].0,
            end: hs[j].0,
            heading_change_deg: bearing_delta_deg(hs[i].1, hs[j].1),
        })
        .collect()
}

/// The ride's GPS fixes in matcher form.
pub fn gps_points(ride: &crate::ingest::Ride) -> Vec<GpsPoint> {
    ride.gps()
        .iter()
        .map(|f| GpsPoint {
            t: f.t,
            lat: f.lat,
            lon: f.lon,
        })
        .collect()
}
