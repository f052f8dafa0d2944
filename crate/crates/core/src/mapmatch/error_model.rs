use serde::{Deserialize, Serialize};

/// Zero-mean bivariate normal GPS position error with per-axis std `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsErrorModel {
    sigma: f64,
}

impl GpsErrorModel {
    /// Typical augmented-GPS error range, metres.
    pub const MIN_SIGMA_M: f64 = 2.0;
    pub const MAX_SIGMA_M: f64 = 8.0;

    pub fn new(sigma: f64) -> Result<Self, String> {
        if (Self::MIN_SIGMA_M..=Self::MAX_SIGMA_M).contains(&sigma) {
            Ok(Self { sigma })
        } else {
            Err(format!(
                "GPS sigma {sigma} m outside [{}, {}] m",
                Self::MIN_SIGMA_M,
                Self::MAX_SIGMA_M
            ))
        }
    }

    /// Exact positions; for tests that need on-road fixes.
    pub fn noiseless() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}
