//! Structured verification results.

use serde::Serialize;

/// Location of the worst residual of a check.
#[derive(Debug, Clone, Serialize)]
pub struct Location {
    /// Coordinates of the grid point (length = grid dimension).
    pub point: Vec<f64>,
    /// Diffusion time, when the check is tied to one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct SampleCount {
    pub checked: usize,
    pub skipped: usize,
}

/// Per-verification structured result.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_location: Option<Location>,
    pub samples: SampleCount,
}

impl CheckReport {
    /// Build a report; `passed` is derived, never set by hand.
    pub fn evaluate(
        name: impl Into<String>,
        max_residual: f64,
        tolerance: f64,
        worst_location: Option<Location>,
        samples: SampleCount,
    ) -> Self {
        CheckReport {
            name: name.into(),
            max_residual,
            tolerance,
            passed: max_residual <= tolerance,
            worst_location,
            samples,
        }
    }

    /// Apply a tolerance scale factor, recomputing the verdict.
    pub fn rescaled(mut self, factor: f64) -> Self {
        self.tolerance *= factor;
        self.passed = self.max_residual <= self.tolerance;
        self
    }
}
