//! Zero-order-hold discretization of continuous-time subsystem blocks that
//! keeps the coupling sparsity of the continuous model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::network::SubsystemId;
use crate::riccati::Mat;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationMethod {
    /// `A_ij = (∫₀ᵀ exp(A^c_ii s) ds) A^c_ij`.
    #[default]
    IntegratedExponential,
    /// `A_ij = T A^c_ij`.
    ForwardEuler,
}

/// `(exp(A T), ∫₀ᵀ exp(A s) ds)` from one exponential of the augmented
/// matrix `[[A, I], [0, 0]] T`.
pub fn exp_and_integral(a: &Mat, t: f64) -> Result<(Mat, Mat)> {
    if !a.is_square() {
        return Err(DkfError::DimensionMismatch(
            "continuous A_ii must be square".into(),
        ));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(DkfError::InvalidScenario(format!(
            "sampling interval must be positive, got {t}"
        )));
    }
    let n = a.nrows();
    let mut aug = Mat::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(Mat::identity(n, n) * t));
    let e = aug.exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    ))
}

/// Discrete `A_ii` and couplings of one subsystem.
pub fn discretize(
    a_ii: &Mat,
    coupling: &BTreeMap<SubsystemId, Mat>,
    t: f64,
    method: DiscretizationMethod,
) -> Result<(Mat, BTreeMap<SubsystemId, Mat>)> {
    let (ad, integral) = exp_and_integral(a_ii, t)?;
    let mut out = BTreeMap::new();
    for (&j, a_ij) in coupling {
        if a_ij.nrows() != a_ii.nrows() {
            return Err(DkfError::DimensionMismatch(format!(
                "coupling block from {j} has wrong row count"
            )));
        }
        let d = match method {
            DiscretizationMethod::IntegratedExponential => &integral * a_ij,
            DiscretizationMethod::ForwardEuler => a_ij * t,
        };
        out.insert(j, d);
    }
    Ok((ad, out))
}
