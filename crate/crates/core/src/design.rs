//! Offline small-gain design: local observer gains, coordinate changes,
//! envelope constants, the Γ matrix and its global and row-sum tests,
//! covariance initializations and the steady-state inequality verifier.

use std::collections::BTreeMap;

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::error::{DkfError, Result};
use crate::filter::{assemble_gain, dkf_cov_update, Covariances};
use crate::network::{
    assemble_global, check_subsystem, is_detectable, scaled, NetworkModel, SubsystemId,
};
use crate::riccati::{
    eigenvalues, kalman_gain, min_eigenvalue, power_norm_envelope, solve_dare, spectral_norm,
    spectral_radius, Mat, DARE_MAX_ITER, DARE_TOL, ENVELOPE_H_MAX, PSD_TOL,
};

pub const ENVELOPE_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HMode {
    Identity,
    /// `H = V⁻¹` for the eigenvector matrix `V` of `F̄` (real, distinct
    /// eigenvalues only).
    Diagonalize,
}

/// Covariance initialization: zero, local DARE, or scaled local DARE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitializationMode {
    Zero,
    LocalDare,
    #[default]
    ScaledDare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub margin: f64,
    pub h_max: usize,
    /// Multipliers of the scaled Kalman gain tried by the search.
    pub thetas: Vec<f64>,
    pub h_modes: Vec<HMode>,
    pub dare_tol: f64,
    pub dare_max_iter: usize,
    pub max_passes: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            margin: ENVELOPE_MARGIN,
            h_max: ENVELOPE_H_MAX,
            thetas: (0..=30).map(|k| k as f64 * 0.05).collect(),
            h_modes: vec![HMode::Identity, HMode::Diagonalize],
            dare_tol: DARE_TOL,
            dare_max_iter: DARE_MAX_ITER,
            max_passes: 50,
        }
    }
}

impl DesignOptions {
    /// Only the steady-state Kalman gain with `H = I`.
    pub fn kalman_only() -> Self {
        Self {
            thetas: vec![1.0],
            h_modes: vec![HMode::Identity],
            ..Self::default()
        }
    }
}

/// Per-subsystem design data. `gain` multiplies the unscaled `C_i`, so the
/// local error matrix is `F̄_i = √ς_i (A_ii − L̄_i C_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalCertificate {
    pub id: SubsystemId,
    pub varsigma: usize,
    #[serde(with = "crate::io::rows")]
    pub gain: Mat,
    #[serde(with = "crate::io::rows")]
    pub h: Mat,
    pub theta: f64,
    pub h_mode: HMode,
    /// σ(F̂_i) at the current ς.
    pub radius: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Cached `‖Â_ij Â_jj⁻¹‖²` for every neighbor `j ≠ i`.
    pub coupling_norms: BTreeMap<SubsystemId, f64>,
}

impl LocalCertificate {
    pub fn f_bar(&self, a_ii: &Mat, c: &Mat) -> Mat {
        (a_ii - &self.gain * c) * (self.varsigma as f64).sqrt()
    }

    pub fn f_hat(&self, a_ii: &Mat, c: &Mat) -> Result<Mat> {
        let h_inv = invert(&self.h, "H")?;
        Ok(&self.h * self.f_bar(a_ii, c) * h_inv)
    }

    /// `μ² / (1 − λ²)`, infinite when `λ ≥ 1`.
    pub fn gain_factor(&self) -> f64 {
        gain_factor(self.mu, self.lambda)
    }

    pub fn is_schur(&self) -> bool {
        self.radius < 1.0 && self.lambda < 1.0
    }

    /// Same `L̄`, `H` and `μ` under a new successor count; `λ` and `σ(F̂)`
    /// scale with `√(ς⁺/ς)`.
    pub fn rescaled(&self, varsigma: usize) -> Self {
        let s = (varsigma as f64 / self.varsigma as f64).sqrt();
        Self {
            varsigma,
            radius: self.radius * s,
            lambda: self.lambda * s,
            ..self.clone()
        }
    }

    /// `γ_ij` from the cached norm; zero when `j` is not a neighbor.
    pub fn gamma(&self, j: SubsystemId) -> f64 {
        self.coupling_norms
            .get(&j)
            .map_or(0.0, |norm| self.gain_factor() * norm)
    }

    pub fn rho(&self) -> f64 {
        self.coupling_norms
            .values()
            .map(|norm| self.gain_factor() * norm)
            .sum()
    }
}

pub fn gain_factor(mu: f64, lambda: f64) -> f64 {
    if lambda >= 1.0 {
        f64::INFINITY
    } else {
        mu * mu / (1.0 - lambda * lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignCertificate {
    /// Ascending id order; row/column `k` of Γ belongs to `subsystems[k]`.
    pub subsystems: Vec<LocalCertificate>,
    #[serde(with = "crate::io::rows")]
    pub gamma: Mat,
    pub spectral_radius: f64,
    pub rho: Vec<f64>,
    /// σ(Γ) < 1 and every σ(F̂_i) < 1.
    pub global_ok: bool,
    /// Every ρ_i < 1 and every σ(F̂_i) < 1.
    pub distributed_ok: bool,
}

impl DesignCertificate {
    /// Assembles Γ from cached coupling norms.
    pub fn from_locals(locals: Vec<LocalCertificate>) -> Result<Self> {
        let mut locals = locals;
        locals.sort_by_key(|l| l.id);
        let index: BTreeMap<SubsystemId, usize> =
            locals.iter().enumerate().map(|(k, l)| (l.id, k)).collect();
        let m = locals.len();
        let mut gamma = Mat::zeros(m, m);
        for (row, l) in locals.iter().enumerate() {
            for &j in l.coupling_norms.keys() {
                let col = *index.get(&j).ok_or(DkfError::UnknownSubsystem(j))?;
                gamma[(row, col)] = l.gamma(j);
            }
        }
        let rho: Vec<f64> = (0..m).map(|r| gamma.row(r).sum()).collect();
        let schur = locals.iter().all(LocalCertificate::is_schur);
        let radius = if gamma.iter().all(|v| v.is_finite()) {
            spectral_radius(&gamma)?
        } else {
            f64::INFINITY
        };
        Ok(Self {
            distributed_ok: schur && rho.iter().all(|&r| r < 1.0),
            global_ok: schur && radius < 1.0,
            subsystems: locals,
            gamma,
            spectral_radius: radius,
            rho,
        })
    }

    pub fn ids(&self) -> Vec<SubsystemId> {
        self.subsystems.iter().map(|l| l.id).collect()
    }

    pub fn index_of(&self, id: SubsystemId) -> Result<usize> {
        self.subsystems
            .iter()
            .position(|l| l.id == id)
            .ok_or(DkfError::UnknownSubsystem(id))
    }

    pub fn local(&self, id: SubsystemId) -> Result<&LocalCertificate> {
        Ok(&self.subsystems[self.index_of(id)?])
    }

    pub fn gamma_entry(&self, i: SubsystemId, j: SubsystemId) -> Result<f64> {
        Ok(self.gamma[(self.index_of(i)?, self.index_of(j)?)])
    }

    pub fn rho_of(&self, id: SubsystemId) -> Result<f64> {
        Ok(self.rho[self.index_of(id)?])
    }

    pub fn locals(&self) -> BTreeMap<SubsystemId, LocalCertificate> {
        self.subsystems.iter().map(|l| (l.id, l.clone())).collect()
    }

    /// Drops `id` together with every cached norm that refers to it.
    pub fn without(&self, id: SubsystemId) -> Result<Self> {
        self.index_of(id)?;
        let locals = self
            .subsystems
            .iter()
            .filter(|l| l.id != id)
            .map(|l| {
                let mut l = l.clone();
                l.coupling_norms.remove(&id);
                l
            })
            .collect();
        Self::from_locals(locals)
    }
}

fn invert(m: &Mat, name: &str) -> Result<Mat> {
    if crate::network::condition_number(m) >= crate::network::INVERTIBILITY_COND {
        return Err(DkfError::Singular(name.into()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| DkfError::Singular(name.into()))
}

/// `‖H_i A_ij A_jj⁻¹ H_j⁻¹‖²`, evaluated as `H_i A_ij (H_j A_jj)⁻¹`.
pub fn coupling_norm_sq(a_ij: &Mat, a_jj: &Mat, h_i: &Mat, h_j: &Mat) -> Result<f64> {
    let hjajj = h_j * a_jj;
    if crate::network::condition_number(&hjajj) >= crate::network::INVERTIBILITY_COND {
        return Err(DkfError::Singular("H_j A_jj".into()));
    }
    // X (H_j A_jj) = A_ij  ⇔  (H_j A_jj)ᵀ Xᵀ = A_ijᵀ.
    let xt = LU::new(hjajj.transpose())
        .solve(&a_ij.transpose())
        .ok_or_else(|| DkfError::Singular("H_j A_jj".into()))?;
    let norm = spectral_norm(&(h_i * xt.transpose()));
    Ok(norm * norm)
}

/// Steady-state Kalman gain of the scaled local system, expressed against
/// the unscaled `C_i` (so that `F̄_i = √ς_i (A_ii − L̄_i C_i)`).
pub fn scaled_kalman_gain(
    a_ii: &Mat,
    c: &Mat,
    q: &Mat,
    r: &Mat,
    varsigma: usize,
    opts: &DesignOptions,
) -> Result<Mat> {
    let s = varsigma as f64;
    let (at, ct, rt) = (a_ii * s.sqrt(), c * s.sqrt(), r * s);
    let p = solve_dare(&at, &ct, q, &rt, opts.dare_tol, opts.dare_max_iter)?;
    // Ã − L C̃ = √ς (A − L C), so the scaled gain applies to C unchanged.
    kalman_gain(&p, &at, &ct, &rt)
}

/// Default local observer: `L̄_i` from the scaled local DARE. Returns
/// `(L̄_i, F̄_i)`.
pub fn design_local_observer(network: &NetworkModel, i: SubsystemId) -> Result<(Mat, Mat)> {
    let s = network.subsystem(i)?;
    let sc = scaled(network, i)?;
    if !is_detectable(sc.a_ii(i), &sc.c)? {
        return Err(DkfError::Undetectable(i));
    }
    let opts = DesignOptions::default();
    let gain = scaled_kalman_gain(&s.a_ii, &s.c, &s.q, &s.r, sc.varsigma, &opts)?;
    let f = (&s.a_ii - &gain * &s.c) * (sc.varsigma as f64).sqrt();
    let radius = spectral_radius(&f)?;
    if radius >= 1.0 {
        return Err(DkfError::NotSchur {
            id: i,
            spectral_radius: radius,
        });
    }
    Ok((gain, f))
}

/// `λ = min(σ(F̂) + margin, (1 + σ(F̂))/2)` and the matching `μ`.
pub fn compute_envelope(f_hat: &Mat, margin: f64, h_max: usize) -> Result<(f64, f64)> {
    let sigma = spectral_radius(f_hat)?;
    if sigma >= 1.0 {
        return Err(DkfError::EnvelopeUndefined {
            spectral_radius: sigma,
            lambda: 1.0,
        });
    }
    let lambda = (sigma + margin).min((1.0 + sigma) / 2.0);
    Ok((power_norm_envelope(f_hat, lambda, h_max)?, lambda))
}

/// `V⁻¹` with unit-norm eigenvector columns `V`, when `F` has real distinct
/// eigenvalues.
pub fn diagonalizing_transform(f: &Mat) -> Result<Option<Mat>> {
    let n = f.nrows();
    let scale = spectral_norm(f).max(1.0);
    let eig = eigenvalues(f)?;
    if eig.iter().any(|z| z.im.abs() > 1e-10 * scale) {
        return Ok(None);
    }
    let mut values: Vec<f64> = eig.iter().map(|z| z.re).collect();
    values.sort_by(f64::total_cmp);
    if values
        .windows(2)
        .any(|w| (w[1] - w[0]).abs() <= 1e-8 * scale)
    {
        return Ok(None);
    }
    let mut v = Mat::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let shifted = f - Mat::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested right vectors");
        // Right singular vector of the smallest singular value.
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let col = vt.row(idx).transpose();
        v.set_column(k, &(&col / col.norm()));
    }
    match invert(&v, "eigenvector matrix") {
        Ok(h) => Ok(Some(h)),
        Err(_) => Ok(None),
    }
}

/// Builds one candidate local design, or `None` if `F̂` is not Schur or the
/// requested `H` mode does not apply.
#[allow(clippy::too_many_arguments)]
pub fn local_candidate(
    id: SubsystemId,
    a_ii: &Mat,
    c: &Mat,
    varsigma: usize,
    base_gain: &Mat,
    theta: f64,
    h_mode: HMode,
    opts: &DesignOptions,
) -> Result<Option<LocalCertificate>> {
    let gain = base_gain * theta;
    let f = (a_ii - &gain * c) * (varsigma as f64).sqrt();
    let radius = spectral_radius(&f)?;
    if radius >= 1.0 {
        return Ok(None);
    }
    let h = match h_mode {
        HMode::Identity => Mat::identity(a_ii.nrows(), a_ii.nrows()),
        HMode::Diagonalize => match diagonalizing_transform(&f)? {
            Some(h) => h,
            None => return Ok(None),
        },
    };
    let f_hat = &h * &f * invert(&h, "H")?;
    let (mu, lambda) = compute_envelope(&f_hat, opts.margin, opts.h_max)?;
    Ok(Some(LocalCertificate {
        id,
        varsigma,
        gain,
        h,
        theta,
        h_mode,
        radius,
        mu,
        lambda,
        coupling_norms: BTreeMap::new(),
    }))
}

/// Fills `coupling_norms` of every local certificate from the network.
pub fn fill_coupling_norms(
    network: &NetworkModel,
    locals: &mut BTreeMap<SubsystemId, LocalCertificate>,
) -> Result<()> {
    let hs: BTreeMap<SubsystemId, Mat> = locals.iter().map(|(&k, l)| (k, l.h.clone())).collect();
    for (&i, local) in locals.iter_mut() {
        local.coupling_norms.clear();
        for &j in network.neighbors(i)? {
            if j == i {
                continue;
            }
            let a_ij = network.block(i, j)?.expect("neighbor block");
            let a_jj = &network.subsystem(j)?.a_ii;
            let h_j = hs.get(&j).ok_or(DkfError::UnknownSubsystem(j))?;
            local
                .coupling_norms
                .insert(j, coupling_norm_sq(a_ij, a_jj, &local.h, h_j)?);
        }
    }
    Ok(())
}

/// Γ from per-subsystem `H_i`, `μ_i`, `λ_i`, with norms recomputed from the
/// network (rows and columns in ascending id order).
pub fn compute_gamma(
    network: &NetworkModel,
    locals: &BTreeMap<SubsystemId, LocalCertificate>,
) -> Result<Mat> {
    let mut locals = locals.clone();
    fill_coupling_norms(network, &mut locals)?;
    Ok(DesignCertificate::from_locals(locals.into_values().collect())?.gamma)
}

pub fn check_global(gamma: &Mat) -> Result<bool> {
    if gamma.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    Ok(spectral_radius(gamma)? < 1.0)
}

/// Row sum `ρ` of row `row` and whether it is below one.
pub fn check_distributed(gamma: &Mat, row: usize) -> (f64, bool) {
    let rho = gamma.row(row).sum();
    (rho, rho < 1.0)
}

/// Initial covariances for the three initialization modes.
pub fn initialize_covariances(
    network: &NetworkModel,
    mode: InitializationMode,
) -> Result<Covariances> {
    network
        .ids()
        .into_iter()
        .map(|i| Ok((i, initial_covariance(network, i, mode)?)))
        .collect()
}

pub fn initial_covariance(
    network: &NetworkModel,
    i: SubsystemId,
    mode: InitializationMode,
) -> Result<Mat> {
    let s = network.subsystem(i)?;
    match mode {
        InitializationMode::Zero => Ok(Mat::zeros(s.n(), s.n())),
        InitializationMode::LocalDare => {
            let report = check_subsystem(network, i)?;
            if !report.detectable || !report.stabilizable {
                return Err(DkfError::Assumption(format!(
                    "local DARE initialization needs a detectable and stabilizable subsystem {i}"
                )));
            }
            solve_dare(&s.a_ii, &s.c, &s.q, &s.r, DARE_TOL, DARE_MAX_ITER)
        }
        InitializationMode::ScaledDare => {
            let report = check_subsystem(network, i)?;
            if !report.scaled_detectable || !report.scaled_stabilizable {
                return Err(DkfError::Assumption(format!(
                    "scaled DARE initialization needs a detectable and stabilizable scaled subsystem {i}"
                )));
            }
            let sc = scaled(network, i)?;
            solve_dare(sc.a_ii(i), &sc.c, &s.q, &sc.r, DARE_TOL, DARE_MAX_ITER)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbarCheck {
    pub id: SubsystemId,
    /// Smallest eigenvalue of `P̄_i − (Σ_j 𝓡(P̄_j, Ã_ij, C̃_j, 0, R̃_j) + Q_i)`.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbarReport {
    pub subsystems: Vec<PbarCheck>,
    /// σ(A − L̄C) with `L̄_ij = 𝓛(P̄_j, A_ij, C_j, R_j)`.
    pub closed_loop_radius: f64,
    pub passed: bool,
}

pub fn verify_pbar(network: &NetworkModel, pbars: &Covariances, tol: f64) -> Result<PbarReport> {
    let mut subsystems = Vec::new();
    for i in network.ids() {
        let p = pbars.get(&i).ok_or(DkfError::UnknownSubsystem(i))?;
        let n = network.subsystem(i)?.n();
        if p.shape() != (n, n) {
            return Err(DkfError::DimensionMismatch(format!(
                "P̄ of subsystem {i} is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        let rhs = dkf_cov_update(network, i, pbars)?;
        let margin = min_eigenvalue(&(p - rhs));
        let symmetric = (p - p.transpose()).amax() <= tol.max(1e-12) * p.amax().max(1.0);
        subsystems.push(PbarCheck {
            id: i,
            margin,
            passed: symmetric && min_eigenvalue(p) >= -tol && margin >= -tol,
        });
    }
    let global = assemble_global(network);
    let l = assemble_gain(network, &global, pbars)?;
    let closed_loop_radius = spectral_radius(&(&global.a - l * &global.c))?;
    Ok(PbarReport {
        passed: subsystems.iter().all(|s| s.passed),
        subsystems,
        closed_loop_radius,
    })
}

pub fn verify_pbar_default(network: &NetworkModel, pbars: &Covariances) -> Result<PbarReport> {
    verify_pbar(network, pbars, PSD_TOL)
}

fn require_design_assumptions(network: &NetworkModel) -> Result<()> {
    for i in network.ids() {
        let report = check_subsystem(network, i)?;
        if !report.invertible {
            return Err(DkfError::Assumption(format!(
                "A_ii of subsystem {i} is not invertible"
            )));
        }
        if !report.scaled_detectable {
            return Err(DkfError::Undetectable(i));
        }
    }
    Ok(())
}

/// Every admissible `(θ, H mode)` design of subsystem `i` at its current ς.
pub fn local_candidates(
    network: &NetworkModel,
    i: SubsystemId,
    opts: &DesignOptions,
) -> Result<Vec<LocalCertificate>> {
    let s = network.subsystem(i)?;
    let varsigma = network.varsigma(i)?;
    let base = scaled_kalman_gain(&s.a_ii, &s.c, &s.q, &s.r, varsigma, opts)?;
    let mut out = Vec::new();
    for &theta in &opts.thetas {
        for &mode in &opts.h_modes {
            if let Some(c) = local_candidate(i, &s.a_ii, &s.c, varsigma, &base, theta, mode, opts)?
            {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Default certificate: steady-state scaled Kalman gain and `H = I` for
/// every subsystem.
pub fn default_certificate(
    network: &NetworkModel,
    opts: &DesignOptions,
) -> Result<DesignCertificate> {
    require_design_assumptions(network)?;
    let mut locals = BTreeMap::new();
    for i in network.ids() {
        let s = network.subsystem(i)?;
        let varsigma = network.varsigma(i)?;
        let base = scaled_kalman_gain(&s.a_ii, &s.c, &s.q, &s.r, varsigma, opts)?;
        let local = local_candidate(
            i,
            &s.a_ii,
            &s.c,
            varsigma,
            &base,
            1.0,
            HMode::Identity,
            opts,
        )?
        .ok_or(DkfError::NotSchur {
            id: i,
            spectral_radius: f64::NAN,
        })?;
        locals.insert(i, local);
    }
    fill_coupling_norms(network, &mut locals)?;
    DesignCertificate::from_locals(locals.into_values().collect())
}

/// Coordinate search over `(θ, H mode)` per subsystem minimizing σ(Γ),
/// starting from the default certificate. Failing to certify is reported
/// through the certificate flags, not as an error.
pub fn centralized_design_search(
    network: &NetworkModel,
    opts: &DesignOptions,
) -> Result<DesignCertificate> {
    require_design_assumptions(network)?;
    let ids = network.ids();
    let mut candidates = BTreeMap::new();
    for &i in &ids {
        candidates.insert(i, local_candidates(network, i, opts)?);
    }
    let mut current = default_certificate(network, opts)?.locals();
    let score = |locals: &BTreeMap<SubsystemId, LocalCertificate>| -> Result<f64> {
        let mut l = locals.clone();
        fill_coupling_norms(network, &mut l)?;
        let cert = DesignCertificate::from_locals(l.into_values().collect())?;
        Ok(cert.spectral_radius)
    };
    let mut best = score(&current)?;
    for _ in 0..opts.max_passes {
        let mut improved = false;
        for &i in &ids {
            for cand in &candidates[&i] {
                let mut trial = current.clone();
                trial.insert(i, cand.clone());
                let s = score(&trial)?;
                if s < best - 1e-9 {
                    best = s;
                    current = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    fill_coupling_norms(network, &mut current)?;
    DesignCertificate::from_locals(current.into_values().collect())
}
