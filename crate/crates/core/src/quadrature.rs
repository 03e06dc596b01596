//! Composite Gauss-Legendre integration with panel halving.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature on [{lo}, {hi}] did not reach rel. tol {tol:e} with {panels} panels (last change {last_change:e})")]
pub struct QuadratureError {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub panels: usize,
    pub last_change: f64,
}

/// Composite rule: `order`-point Gauss-Legendre on equal panels.
pub struct CompositeGauss {
    rule: GaussLegendre,
}

impl CompositeGauss {
    pub fn new(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(2)).unwrap();
        Self {
            rule: GaussLegendre::new(order),
        }
    }

    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, panels: usize, mut f: F) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut acc = crate::sum::Neumaier::default();
        for p in 0..panels {
            let a = lo + h * p as f64;
            let b = if p + 1 == panels { hi } else { a + h };
            acc.add(self.rule.integrate(a, b, &mut f));
        }
        acc.total()
    }

    /// Doubles the panel count until two successive results agree to
    /// `rel_tol` (absolute when the integral is ~0).
    pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
        &self,
        lo: f64,
        hi: f64,
        start_panels: usize,
        rel_tol: f64,
        max_panels: usize,
        mut f: F,
    ) -> Result<f64, QuadratureError> {
        let mut panels = start_panels.max(1);
        let mut prev = self.integrate_panels(lo, hi, panels, &mut f);
        loop {
            panels *= 2;
            let next = self.integrate_panels(lo, hi, panels, &mut f);
            let change = (next - prev).abs();
            if change <= rel_tol * next.abs().max(f64::MIN_POSITIVE) || change == 0.0 {
                return Ok(next);
            }
            if panels >= max_panels {
                return Err(QuadratureError {
                    lo,
                    hi,
                    tol: rel_tol,
                    panels,
                    last_change: change / next.abs(),
                });
            }
            prev = next;
        }
    }
}
