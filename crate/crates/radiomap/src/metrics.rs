//! dB/linear power conversion and the linear-domain NMSE metric.

use crate::grid::{check_same_shape, RadioMap};
use crate::{Error, Result};

/// Converts a dB value to linear power `10^(x/10)`.
pub fn db_to_linear(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite {
            context: "dB value".into(),
        });
    }
    Ok(10f64.powf(x / 10.0))
}

/// Converts a positive linear power back to dB.
pub fn linear_to_db(p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "linear power must be positive and finite, got {p}"
        )));
    }
    Ok(10.0 * p.log10())
}

/// Normalized mean squared error between two dB maps, computed in the
/// linear power domain:
///
/// `|| 10^(M/10) - 10^(Z/10) ||_F^2 / || 10^(M/10) ||_F^2`
pub fn nmse(truth: &RadioMap, estimate: &RadioMap) -> Result<f64> {
    check_same_shape(truth.shape(), estimate.shape())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&m, &z) in truth.values().iter().zip(estimate.values()) {
        let pm = 10f64.powf(m / 10.0);
        let pz = 10f64.powf(z / 10.0);
        num += (pm - pz) * (pm - pz);
        den += pm * pm;
    }
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "truth map has zero linear-power norm".into(),
        ));
    }
    Ok(num / den)
}
