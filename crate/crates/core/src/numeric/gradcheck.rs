use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::params::sample_coordinates;
use crate::numeric::{Grads, ParamStore};

/// Gradients below this magnitude are compared in absolute rather than relative terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Relative discrepancy between an analytic and a numerical derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub coordinates: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, coordinates: 200, seed: 0 }
    }
}

/// Compares `analytic` against central differences of `loss` on a random
/// subset of coordinates and returns the worst relative error.
///
/// An empty parameter store is vacuously exact.
pub fn grad_check<L>(params: &ParamStore<f64>, analytic: &Grads<f64>, loss: L, cfg: GradCheckConfig) -> Result<f64>
where
    L: Fn(&ParamStore<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords = sample_coordinates(params, cfg.coordinates, &mut rng);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (slot, off) in coords {
        let orig = probe.scalar(slot, off);
        probe.set_scalar(slot, off, orig + cfg.step);
        let up = loss(&probe)?;
        probe.set_scalar(slot, off, orig - cfg.step);
        let down = loss(&probe)?;
        probe.set_scalar(slot, off, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteCheckLoss);
        }
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic.get(slot).data()[off];
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
