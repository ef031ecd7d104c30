//! Central finite differences, used as the independent check on tape gradients.

use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_TOLERANCE: f64 = 1e-6;

/// Per-coordinate estimate of one central difference.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub numeric: f64,
    /// Forward and backward one-sided slopes; they disagree sharply when the
    /// probe straddles a non-differentiable point (relu, max, hinge).
    pub forward: f64,
    pub backward: f64,
}

impl Probe {
    pub fn straddles_kink(&self) -> bool {
        let scale = self.forward.abs().max(self.backward.abs()).max(1.0);
        (self.forward - self.backward).abs() > 1e-2 * scale
    }
}

/// Central differences of `f` around `x` for every coordinate.
pub fn central_differences(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    step: f64,
) -> Result<Vec<Probe>> {
    let base = f(x)?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push(Probe {
            numeric: (plus - minus) / (2.0 * step),
            forward: (plus - base) / step,
            backward: (base - minus) / step,
        });
    }
    Ok(out)
}

/// Relative error with an absolute floor for values near zero.
pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_TOLERANCE {
        return true;
    }
    diff / analytic.abs().max(numeric.abs()) <= REL_TOLERANCE
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}
