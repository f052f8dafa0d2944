//! Map matching of GPS traces onto the road network.
//!
//! [`OfflineMatcher`] decodes the most likely segment sequence of a batch of
//! at most 100 fixes with a hidden Markov model. [`match_ride`] splits a ride
//! into overlapping batches, consults the [`MatchCache`], and derives the turn
//! windows used for phone-axis inference.

mod adapters;
mod cache;
mod error_model;
mod ride;
mod viterbi;

pub use adapters::{FallbackMatcher, FixtureMatcher, FixturePair, RecordingMatcher};
pub use cache::{CacheEntry, CacheKey, MatchCache};
pub use error_model::GpsErrorModel;
pub use ride::{chunk_ranges, gps_points, match_ride, match_rides, turn_windows, MatchedTrajectory};
pub use viterbi::OfflineMatcher;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LatLon;
use crate::network::SegmentId;

/// Largest batch the matcher accepts.
pub const MAX_BATCH: usize = 100;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("batch of {0} points exceeds the limit of {MAX_BATCH}")]
    BatchTooLarge(usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("ride has {0} GPS points, at least 2 are needed")]
    TooFewPoints(usize),
    #[error("remote matcher unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("malformed matcher response: {0}")]
    MalformedResponse(String),
    #[error("match cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

/// A GPS fix as sent to the matcher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
}

impl GpsPoint {
    pub fn pos(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPoint {
    pub original: GpsPoint,
    pub segment_id: SegmentId,
    pub snapped: LatLon,
    /// Fraction of the segment length from its first vertex, in [0, 1].
    pub along: f64,
    pub snap_distance: f64,
}

/// One entry per input point; `None` marks a point with no segment in range.
pub type BatchMatch = Vec<Option<MatchedPoint>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub radius_m: f64,
    pub sigma_m: f64,
    /// Cost of changing segment between consecutive points.
    pub kappa: f64,
    /// Cost per metre of disagreement between great-circle and network gaps.
    pub rho: f64,
    pub batch_size: usize,
    pub overlap: usize,
    pub turn_threshold_deg: f64,
    pub turn_span_s: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            radius_m: 50.0,
            sigma_m: 5.0,
            kappa: 6.0,
            rho: 0.1,
            batch_size: MAX_BATCH,
            overlap: 5,
            turn_threshold_deg: 40.0,
            turn_span_s: 5.0,
        }
    }
}

/// Anything that can snap a batch of fixes: the offline matcher, a replayed
/// fixture, or wrappers around them.
pub trait Matcher: Send + Sync {
    fn snap_batch(&self, points: &[GpsPoint]) -> Result<BatchMatch, MatchError>;
}

pub(crate) fn check_batch(points: &[GpsPoint]) -> Result<(), MatchError> {
    if points.is_empty() {
        return Err(MatchError::EmptyBatch);
    }
    if points.len() > MAX_BATCH {
        return Err(MatchError::BatchTooLarge(points.len()));
    }
    Ok(())
}
