use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_batch, BatchMatch, GpsPoint, MatchError, Matcher};

/// A recorded matcher exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixturePair {
    pub request: Vec<GpsPoint>,
    pub response: BatchMatch,
}

type RequestKey = Vec<[u64; 3]>;

fn request_key(points: &[GpsPoint]) -> RequestKey {
    points
        .iter()
        .map(|p| [p.t.to_bits(), p.lat.to_bits(), p.lon.to_bits()])
        .collect()
}

#[derive(Debug)]
enum FixtureState {
    Ready(HashMap<RequestKey, BatchMatch>),
    Unavailable(String),
    Malformed(String),
}

/// Replays recorded request/response pairs in place of a remote endpoint.
/// Unknown requests, like an unreadable file, look like an unreachable
/// endpoint.
#[derive(Debug)]
pub struct FixtureMatcher {
    state: FixtureState,
}

impl FixtureMatcher {
    pub fn open(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        let state = match fs::read_to_string(path) {
            Err(e) => FixtureState::Unavailable(format!("{}: {e}", path.display())),
            Ok(text) => match serde_json::from_str::<Vec<FixturePair>>(&text) {
                Err(e) => FixtureState::Malformed(format!("{}: {e}", path.display())),
                Ok(pairs) => Self::from_pairs(pairs).state,
            },
        };
        Self { state }
    }

    pub fn from_pairs(pairs: Vec<FixturePair>) -> Self {
        let mut map = HashMap::new();
        for p in pairs {
            if p.request.len() != p.response.len() {
                return Self {
                    state: FixtureState::Malformed(format!(
                        "response has {} entries for {} points",
                        p.response.len(),
                        p.request.len()
                    )),
                };
            }
            map.insert(request_key(&p.request), p.response);
        }
        Self {
            state: FixtureState::Ready(map),
        }
    }
}

impl Matcher for FixtureMatcher {
    fn snap_batch(&self, points: &[GpsPoint]) -> Result<BatchMatch, MatchError> {
        check_batch(points)?;
        match &self.state {
            FixtureState::Unavailable(m) => Err(MatchError::RemoteUnavailable(m.clone())),
            FixtureState::Malformed(m) => Err(MatchError::MalformedResponse(m.clone())),
            FixtureState::Ready(map) => map
                .get(&request_key(points))
                .cloned()
                .ok_or_else(|| MatchError::RemoteUnavailable("no recorded response for request".into())),
        }
    }
}

/// Uses `fallback` whenever `primary` reports itself unavailable.
pub struct FallbackMatcher<'a> {
    pub primary: Box<dyn Matcher + 'a>,
    pub fallback: Box<dyn Matcher + 'a>,
}

impl Matcher for FallbackMatcher<'_> {
    fn snap_batch(&self, points: &[GpsPoint]) -> Result<BatchMatch, MatchError> {
        match self.primary.snap_batch(points) {
            Err(MatchError::RemoteUnavailable(_)) => self.fallback.snap_batch(points),
            other => other,
        }
    }
}

/// Passes calls through and records every exchange, for building fixtures.
pub struct RecordingMatcher<M> {
    inner: M,
    log: Mutex<BTreeMap<String, FixturePair>>,
}

impl<M: Matcher> RecordingMatcher<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        }
    }

    /// Recorded pairs, ordered by request so the output is deterministic.
    pub fn pairs(&self) -> Vec<FixturePair> {
        self.log.lock().expect("log lock").values().cloned().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.pairs())?;
        fs::write(path, text)
    }
}

impl<M: Matcher> Matcher for RecordingMatcher<M> {
    fn snap_batch(&self, points: &[GpsPoint]) -> Result<BatchMatch, MatchError> {
        let response = self.inner.snap_batch(points)?;
        let key = serde_json::to_string(points).expect("points serialise");
        self.log.lock().expect("log lock").insert(
            key,
            FixturePair {
                request: points.to_vec(),
                response: response.clone(),
            },
        );
        Ok(response)
    }
}
