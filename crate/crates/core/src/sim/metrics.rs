//! Error metrics computed from stored trajectories.

use crate::error::{DkfError, Result};
use crate::filter::Vector;

/// `√(1/n Σ_t ‖x(t) − x̂(t)‖²)` over the aligned series.
pub fn rmse(x: &[Vector], xhat: &[Vector]) -> Result<f64> {
    check(x, xhat)?;
    let sum: f64 = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / x.len() as f64).sqrt())
}

/// `e(t) = ‖x(t) − x̂(t)‖ / √M` for every step.
pub fn normalized_error(x: &[Vector], xhat: &[Vector], m: usize) -> Result<Vec<f64>> {
    check(x, xhat)?;
    if m == 0 {
        return Err(DkfError::InvalidScenario(
            "normalized error needs M ≥ 1".into(),
        ));
    }
    let scale = (m as f64).sqrt();
    Ok(x.iter()
        .zip(xhat)
        .map(|(a, b)| (a - b).norm() / scale)
        .collect())
}

/// Mean of `series[from..=to]`, clipped to the series length.
pub fn window_mean(series: &[f64], from: usize, to: usize) -> Option<f64> {
    let to = to.min(series.len().checked_sub(1)?);
    if from > to {
        return None;
    }
    let window = &series[from..=to];
    Some(window.iter().sum::<f64>() / window.len() as f64)
}

fn check(x: &[Vector], xhat: &[Vector]) -> Result<()> {
    if x.is_empty() {
        return Err(DkfError::InvalidScenario("empty series".into()));
    }
    if x.len() != xhat.len() || x.iter().zip(xhat).any(|(a, b)| a.len() != b.len()) {
        return Err(DkfError::DimensionMismatch("series are not aligned".into()));
    }
    Ok(())
}
