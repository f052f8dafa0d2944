use super::{check_batch, BatchMatch, GpsPoint, MatchError, MatchParams, MatchedPoint, Matcher};
use crate::geo::haversine_m;
use crate::network::{Projection, RoadNetwork};

/// Costs closer than this are treated as equal and resolved by segment id.
const COST_TIE: f64 = 1e-9;
/// Network paths longer than the straight gap plus this are not searched.
const DETOUR_SLACK_M: f64 = 300.0;

/// Hidden-Markov matcher over the local network.
#[derive(Debug, Clone)]
pub struct OfflineMatcher<'a> {
    pub network: &'a RoadNetwork,
    pub params: MatchParams,
}

impl<'a> OfflineMatcher<'a> {
    pub fn new(network: &'a RoadNetwork, params: MatchParams) -> Self {
        Self { network, params }
    }

    fn emission(&self, c: &Projection) -> f64 {
        c.distance * c.distance / (2.0 * self.params.sigma_m * self.params.sigma_m)
    }

    /// Transition costs from every candidate in `prev` to every one in `cur`.
    fn transitions(&self, gap: f64, prev: &[Projection], cur: &[Projection]) -> Vec<Vec<f64>> {
        let p = &self.params;
        if p.kappa == 0.0 && p.rho == 0.0 {
            return vec![vec![0.0; cur.len()]; prev.len()];
        }
        let cutoff = gap + DETOUR_SLACK_M;
        let targets: Vec<(usize, f64)> = cur.iter().map(|c| (c.segment, c.along)).collect();
        prev.iter()
            .map(|a| {
                let d = if p.rho == 0.0 {
                    vec![Some(0.0); cur.len()]
                } else {
                    self.network.network_distances((a.segment, a.along), &targets, cutoff)
                };
                cur.iter()
                    .zip(d)
                    .map(|(b, d)| {
                        let change = if a.segment == b.segment { 0.0 } else { p.kappa };
                        let route = d.unwrap_or(cutoff);
                        change + p.rho * (gap - route).abs()
                    })
                    .collect()
            })
            .collect()
    }

    /// Viterbi over a run of points that all have candidates.
    fn decode(&self, pts: &[GpsPoint], cands: &[Vec<Projection>]) -> Vec<usize> {
        let mut cost: Vec<f64> = cands[0].iter().map(|c| self.emission(c)).collect();
        let mut back: Vec<Vec<usize>> = vec![vec![]];
        for i in 1..pts.len() {
            let gap = haversine_m(pts[i - 1].pos(), pts[i].pos());
            let tr = self.transitions(gap, &cands[i - 1], &cands[i]);
            let mut next = Vec::with_capacity(cands[i].len());
            let mut ptr = Vec::with_capacity(cands[i].len());
            for (j, c) in cands[i].iter().enumerate() {
                // candidates are in segment-id order, so the first within
                // tolerance of the minimum has the smallest id
                let totals: Vec<f64> = (0..cost.len()).map(|k| cost[k] + tr[k][j]).collect();
                let k = argmin_tie(&totals);
                next.push(totals[k] + self.emission(c));
                ptr.push(k);
            }
            cost = next;
            back.push(ptr);
        }
        let mut path = vec![0; pts.len()];
        path[pts.len() - 1] = argmin_tie(&cost);
        for i in (1..pts.len()).rev() {
            path[i - 1] = back[i][path[i]];
        }
        path
    }
}

fn argmin_tie(v: &[f64]) -> usize {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    v.iter().position(|&x| x <= min + COST_TIE).expect("non-empty")
}

impl Matcher for OfflineMatcher<'_> {
    fn snap_batch(&self, points: &[GpsPoint]) -> Result<BatchMatch, MatchError> {
        check_batch(points)?;
        let cands: Vec<Vec<Projection>> = points
            .iter()
            .map(|p| self.network.candidates(p.pos(), self.params.radius_m))
            .collect();
        let mut out = vec![None; points.len()];
        let mut i = 0;
        while i < points.len() {
            if cands[i].is_empty() {
                i += 1;
                continue;
            }
            let j = (i..points.len()).find(|&j| cands[j].is_empty()).unwrap_or(points.len());
            let path = self.decode(&points[i..j], &cands[i..j]);
            for (k, &c) in path.iter().enumerate() {
                let p = &cands[i + k][c];
                out[i + k] = Some(MatchedPoint {
                    original: points[i + k],
                    segment_id: self.network.segment(p.segment).segment_id,
                    snapped: p.snapped,
                    along: p.along,
                    snap_distance: p.distance,
                });
            }
            i = j;
        }
        Ok(out)
    }
}
