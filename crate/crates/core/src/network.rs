//! Interconnected-system model: subsystem blocks, neighbor and successor
//! sets, the √ς-scaled matrices and global block assembly.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, Complex, DMatrix, DVector};

use crate::error::{DkfError, Result};
use crate::riccati::{eigenvalues, factor_psd, min_eigenvalue, spectral_norm, symmetrize, Mat};

pub type SubsystemId = usize;

/// Condition number above which `A_ii` is reported as not invertible.
pub const INVERTIBILITY_COND: f64 = 1e12;

/// Relative tolerance of the PBH rank test.
pub const PBH_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemModel {
    pub id: SubsystemId,
    pub a_ii: Mat,
    /// Incoming couplings `A_ij`, keyed by neighbor id `j ≠ i`.
    pub coupling: BTreeMap<SubsystemId, Mat>,
    pub c: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl SubsystemModel {
    pub fn new(id: SubsystemId, a_ii: Mat, c: Mat, q: Mat, r: Mat) -> Self {
        Self {
            id,
            a_ii,
            coupling: BTreeMap::new(),
            c,
            q,
            r,
        }
    }

    pub fn with_coupling(mut self, from: SubsystemId, a_ij: Mat) -> Self {
        self.coupling.insert(from, a_ij);
        self
    }

    pub fn n(&self) -> usize {
        self.a_ii.nrows()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    fn check(&self) -> Result<()> {
        let (n, p, id) = (self.n(), self.p(), self.id);
        let shape = |m: &Mat, r: usize, c: usize, name: &str| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(DkfError::DimensionMismatch(format!(
                    "subsystem {id}: {name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        shape(&self.a_ii, n, n, "A_ii")?;
        shape(&self.c, p, n, "C")?;
        shape(&self.q, n, n, "Q")?;
        shape(&self.r, p, p, "R")?;
        let all_finite = [&self.a_ii, &self.c, &self.q, &self.r]
            .iter()
            .chain(self.coupling.values().collect::<Vec<_>>().iter())
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(DkfError::InvalidScenario(format!(
                "subsystem {id} has non-finite entries"
            )));
        }
        if p > 0 && Cholesky::new(symmetrize(&self.r)).is_none() {
            return Err(DkfError::NotPositiveDefinite(format!(
                "R of subsystem {id}"
            )));
        }
        let q_min = min_eigenvalue(&self.q);
        if q_min < -1e-10 {
            return Err(DkfError::NotPsd {
                min_eigenvalue: q_min,
            });
        }
        if self.coupling.contains_key(&id) {
            return Err(DkfError::InvalidScenario(format!(
                "subsystem {id} lists itself in its coupling map"
            )));
        }
        Ok(())
    }
}

/// Immutable network with derived topology. Subsystems are kept ordered by
/// id; every id is a member of its own neighbor and successor sets.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    subsystems: BTreeMap<SubsystemId, SubsystemModel>,
    neighbors: BTreeMap<SubsystemId, Vec<SubsystemId>>,
    successors: BTreeMap<SubsystemId, Vec<SubsystemId>>,
}

pub fn build_network(subsystems: Vec<SubsystemModel>) -> Result<NetworkModel> {
    let mut map = BTreeMap::new();
    for s in subsystems {
        s.check()?;
        let id = s.id;
        if map.insert(id, s).is_some() {
            return Err(DkfError::DuplicateSubsystem(id));
        }
    }
    let mut neighbors = BTreeMap::new();
    let mut successors: BTreeMap<SubsystemId, BTreeSet<SubsystemId>> =
        map.keys().map(|&i| (i, BTreeSet::from([i]))).collect();
    for (&i, s) in &map {
        let mut set = vec![i];
        for (&j, a_ij) in &s.coupling {
            let Some(sj) = map.get(&j) else {
                return Err(DkfError::DanglingCoupling { from: i, to: j });
            };
            if a_ij.shape() != (s.n(), sj.n()) {
                return Err(DkfError::DimensionMismatch(format!(
                    "A_{i}{j} is {}x{}, expected {}x{}",
                    a_ij.nrows(),
                    a_ij.ncols(),
                    s.n(),
                    sj.n()
                )));
            }
            set.push(j);
            successors.get_mut(&j).expect("validated id").insert(i);
        }
        set.sort_unstable();
        neighbors.insert(i, set);
    }
    Ok(NetworkModel {
        subsystems: map,
        neighbors,
        successors: successors
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect(),
    })
}

impl NetworkModel {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn ids(&self) -> Vec<SubsystemId> {
        self.subsystems.keys().copied().collect()
    }

    pub fn contains(&self, id: SubsystemId) -> bool {
        self.subsystems.contains_key(&id)
    }

    pub fn subsystem(&self, id: SubsystemId) -> Result<&SubsystemModel> {
        self.subsystems
            .get(&id)
            .ok_or(DkfError::UnknownSubsystem(id))
    }

    pub fn subsystems(&self) -> impl Iterator<Item = &SubsystemModel> {
        self.subsystems.values()
    }

    /// 𝓝_i in ascending order, including `i`.
    pub fn neighbors(&self, id: SubsystemId) -> Result<&[SubsystemId]> {
        self.neighbors
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(DkfError::UnknownSubsystem(id))
    }

    /// 𝓢_i in ascending order, including `i`.
    pub fn successors(&self, id: SubsystemId) -> Result<&[SubsystemId]> {
        self.successors
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(DkfError::UnknownSubsystem(id))
    }

    /// ς_i = |𝓢_i|.
    pub fn varsigma(&self, id: SubsystemId) -> Result<usize> {
        Ok(self.successors(id)?.len())
    }

    /// `A_ij`, with `A_ii` for `i == j`; `None` when `j ∉ 𝓝_i`.
    pub fn block(&self, i: SubsystemId, j: SubsystemId) -> Result<Option<&Mat>> {
        let s = self.subsystem(i)?;
        if i == j {
            return Ok(Some(&s.a_ii));
        }
        Ok(s.coupling.get(&j))
    }

    pub fn state_dim(&self) -> usize {
        self.subsystems.values().map(SubsystemModel::n).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.subsystems.values().map(SubsystemModel::p).sum()
    }

    /// Owned copy of the subsystem list, for building modified networks.
    pub fn to_models(&self) -> Vec<SubsystemModel> {
        self.subsystems.values().cloned().collect()
    }

    /// The network with `id` and every coupling to or from it removed.
    pub fn without(&self, id: SubsystemId) -> Result<NetworkModel> {
        self.subsystem(id)?;
        let models = self
            .subsystems
            .values()
            .filter(|s| s.id != id)
            .map(|s| {
                let mut s = s.clone();
                s.coupling.remove(&id);
                s
            })
            .collect();
        build_network(models)
    }

    /// The network with `id` kept as an isolated subsystem.
    pub fn detached(&self, id: SubsystemId) -> Result<NetworkModel> {
        self.subsystem(id)?;
        let models = self
            .subsystems
            .values()
            .map(|s| {
                let mut s = s.clone();
                if s.id == id {
                    s.coupling.clear();
                } else {
                    s.coupling.remove(&id);
                }
                s
            })
            .collect();
        build_network(models)
    }

    /// True when `id` has no neighbors or successors besides itself.
    pub fn is_isolated(&self, id: SubsystemId) -> Result<bool> {
        Ok(self.neighbors(id)?.len() == 1 && self.successors(id)?.len() == 1)
    }

    /// Per-subsystem `(id, state offset, n_i, output offset, p_i)` in global
    /// vectors.
    pub fn layout(&self) -> Vec<BlockLayout> {
        let (mut xo, mut yo) = (0, 0);
        self.subsystems
            .values()
            .map(|s| {
                let l = BlockLayout {
                    id: s.id,
                    x_offset: xo,
                    n: s.n(),
                    y_offset: yo,
                    p: s.p(),
                };
                xo += s.n();
                yo += s.p();
                l
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub id: SubsystemId,
    pub x_offset: usize,
    pub n: usize,
    pub y_offset: usize,
    pub p: usize,
}

/// √ς-scaled matrices of one subsystem.
#[derive(Clone, Debug)]
pub struct ScaledMatrices {
    pub varsigma: usize,
    /// `Ã_ij = √ς_j A_ij` for every `j ∈ 𝓝_i` (including `Ã_ii`).
    pub a: BTreeMap<SubsystemId, Mat>,
    pub c: Mat,
    pub r: Mat,
}

impl ScaledMatrices {
    pub fn a_ii(&self, id: SubsystemId) -> &Mat {
        &self.a[&id]
    }
}

pub fn scaled(network: &NetworkModel, i: SubsystemId) -> Result<ScaledMatrices> {
    let s = network.subsystem(i)?;
    let varsigma = network.varsigma(i)?;
    let mut a = BTreeMap::new();
    for &j in network.neighbors(i)? {
        let block = network.block(i, j)?.expect("neighbor block");
        a.insert(j, block * (network.varsigma(j)? as f64).sqrt());
    }
    let sq = (varsigma as f64).sqrt();
    Ok(ScaledMatrices {
        varsigma,
        a,
        c: &s.c * sq,
        r: &s.r * varsigma as f64,
    })
}

/// Global matrices of the interconnected system.
#[derive(Clone, Debug)]
pub struct GlobalMatrices {
    pub a: Mat,
    pub c: Mat,
    pub q: Mat,
    pub r: Mat,
    pub layout: Vec<BlockLayout>,
}

impl GlobalMatrices {
    fn find(&self, id: SubsystemId) -> Result<&BlockLayout> {
        self.layout
            .iter()
            .find(|l| l.id == id)
            .ok_or(DkfError::UnknownSubsystem(id))
    }

    /// State block `(i, j)` of an `n × n` global matrix.
    pub fn state_block(&self, m: &Mat, i: SubsystemId, j: SubsystemId) -> Result<Mat> {
        let (bi, bj) = (self.find(i)?, self.find(j)?);
        Ok(m.view((bi.x_offset, bj.x_offset), (bi.n, bj.n))
            .into_owned())
    }

    /// Block-diagonal part of an `n × n` global matrix.
    pub fn diagonal_blocks(&self, m: &Mat) -> BTreeMap<SubsystemId, Mat> {
        self.layout
            .iter()
            .map(|b| {
                (
                    b.id,
                    m.view((b.x_offset, b.x_offset), (b.n, b.n)).into_owned(),
                )
            })
            .collect()
    }

    pub fn stack_states(
        &self,
        parts: &BTreeMap<SubsystemId, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.a.nrows());
        for b in &self.layout {
            let v = parts.get(&b.id).ok_or(DkfError::UnknownSubsystem(b.id))?;
            out.rows_mut(b.x_offset, b.n).copy_from(v);
        }
        Ok(out)
    }

    pub fn stack_outputs(
        &self,
        parts: &BTreeMap<SubsystemId, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.c.nrows());
        for b in &self.layout {
            let v = parts.get(&b.id).ok_or(DkfError::UnknownSubsystem(b.id))?;
            out.rows_mut(b.y_offset, b.p).copy_from(v);
        }
        Ok(out)
    }

    pub fn split_states(&self, x: &DVector<f64>) -> BTreeMap<SubsystemId, DVector<f64>> {
        self.layout
            .iter()
            .map(|b| (b.id, x.rows(b.x_offset, b.n).into_owned()))
            .collect()
    }
}

pub fn assemble_global(network: &NetworkModel) -> GlobalMatrices {
    let layout = network.layout();
    let (n, p) = (network.state_dim(), network.output_dim());
    let mut a = Mat::zeros(n, n);
    let mut c = Mat::zeros(p, n);
    let mut q = Mat::zeros(n, n);
    let mut r = Mat::zeros(p, p);
    let offset: BTreeMap<_, _> = layout.iter().map(|b| (b.id, b.x_offset)).collect();
    for b in &layout {
        let s = network.subsystem(b.id).expect("layout id");
        a.view_mut((b.x_offset, b.x_offset), (b.n, b.n))
            .copy_from(&s.a_ii);
        for (j, a_ij) in &s.coupling {
            a.view_mut((b.x_offset, offset[j]), a_ij.shape())
                .copy_from(a_ij);
        }
        c.view_mut((b.y_offset, b.x_offset), (b.p, b.n))
            .copy_from(&s.c);
        q.view_mut((b.x_offset, b.x_offset), (b.n, b.n))
            .copy_from(&s.q);
        r.view_mut((b.y_offset, b.y_offset), (b.p, b.p))
            .copy_from(&s.r);
    }
    GlobalMatrices { a, c, q, r, layout }
}

/// PBH detectability of `(A, C)`: every eigenvalue with `|λ| ≥ 1` must leave
/// `[A − λI; C]` with full column rank.
pub fn is_detectable(a: &Mat, c: &Mat) -> Result<bool> {
    let n = a.nrows();
    let tol = PBH_TOL * spectral_norm(a).max(1.0);
    for lambda in eigenvalues(a)? {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for r in 0..n {
            for k in 0..n {
                m[(r, k)] = Complex::new(a[(r, k)], 0.0);
            }
            m[(r, r)] -= lambda;
        }
        for r in 0..c.nrows() {
            for k in 0..n {
                m[(n + r, k)] = Complex::new(c[(r, k)], 0.0);
            }
        }
        let rank = m.singular_values().iter().filter(|&&s| s > tol).count();
        if rank < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Stabilizability of `(A, G)` by duality with detectability of `(Aᵀ, Gᵀ)`.
pub fn is_stabilizable(a: &Mat, g: &Mat) -> Result<bool> {
    is_detectable(&a.transpose(), &g.transpose())
}

pub fn condition_number(a: &Mat) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemAssumptions {
    pub id: SubsystemId,
    pub condition_number: f64,
    pub invertible: bool,
    pub detectable: bool,
    pub stabilizable: bool,
    pub scaled_detectable: bool,
    pub scaled_stabilizable: bool,
}

impl SubsystemAssumptions {
    pub fn all_pass(&self) -> bool {
        self.invertible
            && self.detectable
            && self.stabilizable
            && self.scaled_detectable
            && self.scaled_stabilizable
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.invertible, "A_ii invertible"),
            (self.detectable, "(A_ii, C_i) detectable"),
            (self.stabilizable, "(A_ii, G_i) stabilizable"),
            (self.scaled_detectable, "scaled (A_ii, C_i) detectable"),
            (self.scaled_stabilizable, "scaled (A_ii, G_i) stabilizable"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| name)
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub subsystems: Vec<SubsystemAssumptions>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.subsystems.iter().all(SubsystemAssumptions::all_pass)
    }
}

pub fn check_subsystem(network: &NetworkModel, id: SubsystemId) -> Result<SubsystemAssumptions> {
    let s = network.subsystem(id)?;
    let sc = scaled(network, id)?;
    let g = factor_psd(&s.q)?;
    let cond = condition_number(&s.a_ii);
    Ok(SubsystemAssumptions {
        id,
        condition_number: cond,
        invertible: cond < INVERTIBILITY_COND,
        detectable: is_detectable(&s.a_ii, &s.c)?,
        stabilizable: is_stabilizable(&s.a_ii, &g)?,
        scaled_detectable: is_detectable(sc.a_ii(id), &sc.c)?,
        scaled_stabilizable: is_stabilizable(sc.a_ii(id), &g)?,
    })
}

pub fn validate_assumptions(network: &NetworkModel) -> Result<AssumptionReport> {
    let subsystems = network
        .ids()
        .into_iter()
        .map(|id| check_subsystem(network, id))
        .collect::<Result<_>>()?;
    Ok(AssumptionReport { subsystems })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn academic(id: SubsystemId) -> SubsystemModel {
        SubsystemModel::new(
            id,
            Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.1, -0.9]),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
    }

    fn diag(a: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[a, 0.0, 0.0, -a])
    }

    #[test]
    fn mutual_pair_topology() {
        let net = build_network(vec![
            academic(1).with_coupling(2, diag(0.1)),
            academic(2).with_coupling(1, diag(0.1)),
        ])
        .unwrap();
        assert_eq!(net.neighbors(1).unwrap(), &[1, 2]);
        assert_eq!(net.neighbors(2).unwrap(), &[1, 2]);
        assert_eq!(net.varsigma(1).unwrap(), 2);
        assert_eq!(net.varsigma(2).unwrap(), 2);
    }

    #[test]
    fn isolated_and_partial_topologies() {
        let single = build_network(vec![academic(1)]).unwrap();
        assert_eq!(single.neighbors(1).unwrap(), &[1]);
        assert_eq!(single.successors(1).unwrap(), &[1]);
        assert_eq!(single.varsigma(1).unwrap(), 1);

        let net = build_network(vec![
            academic(1).with_coupling(2, diag(0.1)),
            academic(2).with_coupling(1, diag(0.1)),
            academic(3),
        ])
        .unwrap();
        assert_eq!(net.varsigma(3).unwrap(), 1);
        assert_eq!(net.neighbors(3).unwrap(), &[3]);
    }

    #[test]
    fn build_rejects_invalid_input() {
        let dangling = build_network(vec![academic(1).with_coupling(7, diag(0.1))]);
        assert!(matches!(
            dangling,
            Err(DkfError::DanglingCoupling { from: 1, to: 7 })
        ));
        let dup = build_network(vec![academic(1), academic(1)]);
        assert!(matches!(dup, Err(DkfError::DuplicateSubsystem(1))));
        let mut bad_r = academic(1);
        bad_r.r = Mat::from_element(1, 1, -1.0);
        assert!(matches!(
            build_network(vec![bad_r]),
            Err(DkfError::NotPositiveDefinite(_))
        ));
        let bad_shape = build_network(vec![
            academic(1).with_coupling(2, Mat::zeros(2, 3)),
            academic(2),
        ]);
        assert!(matches!(bad_shape, Err(DkfError::DimensionMismatch(_))));
    }

    #[test]
    fn successor_neighbor_duality() {
        let net = build_network(vec![
            academic(1).with_coupling(3, diag(0.2)),
            academic(2).with_coupling(1, diag(0.1)),
            academic(3)
                .with_coupling(2, diag(0.3))
                .with_coupling(1, diag(0.1)),
        ])
        .unwrap();
        for i in net.ids() {
            for j in net.ids() {
                let in_succ = net.successors(j).unwrap().contains(&i);
                let in_nbr = net.neighbors(i).unwrap().contains(&j);
                assert_eq!(in_succ, in_nbr, "i={i} j={j}");
            }
        }
        assert_eq!(net.successors(1).unwrap(), &[1, 2, 3]);
        assert_eq!(net.varsigma(1).unwrap(), 3);
    }

    #[test]
    fn scaling_rules() {
        let net = build_network(vec![
            academic(1).with_coupling(2, diag(0.1)),
            academic(2).with_coupling(1, diag(0.1)),
            academic(3).with_coupling(2, diag(0.1)),
        ])
        .unwrap();
        let s3 = scaled(&net, 3).unwrap();
        assert_eq!(s3.varsigma, 1);
        assert_eq!(s3.a[&3], academic(3).a_ii);
        // ς_2 = 3: successors 1, 2, 3.
        assert_abs_diff_eq!(s3.a[&2], diag(0.1) * 3f64.sqrt(), epsilon = 1e-15);
        let s2 = scaled(&net, 2).unwrap();
        assert_abs_diff_eq!(s2.r, Mat::from_element(1, 1, 3.0));
        assert_abs_diff_eq!(s2.c, academic(2).c * 3f64.sqrt(), epsilon = 1e-15);
        let s1 = scaled(&net, 1).unwrap();
        assert_abs_diff_eq!(s1.a[&1], academic(1).a_ii * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn removing_and_detaching() {
        let net = build_network(vec![
            academic(1).with_coupling(2, diag(0.1)),
            academic(2)
                .with_coupling(1, diag(0.1))
                .with_coupling(3, diag(0.1)),
            academic(3).with_coupling(2, diag(0.1)),
        ])
        .unwrap();
        let minus = net.without(1).unwrap();
        assert_eq!(minus.ids(), vec![2, 3]);
        assert_eq!(minus.neighbors(2).unwrap(), &[2, 3]);
        assert_eq!(minus.varsigma(2).unwrap(), 2);
        let det = net.detached(1).unwrap();
        assert_eq!(det.ids(), vec![1, 2, 3]);
        assert!(det.is_isolated(1).unwrap());
        assert!(!det.is_isolated(2).unwrap());
        assert!(matches!(net.without(9), Err(DkfError::UnknownSubsystem(9))));
    }

    #[test]
    fn single_subsystem_global_is_local() {
        let net = build_network(vec![academic(4)]).unwrap();
        let g = assemble_global(&net);
        assert_eq!(g.a, academic(4).a_ii);
        assert_eq!(g.c, academic(4).c);
    }

    #[test]
    fn global_block_layout_and_roundtrip() {
        let a12 = Mat::from_row_slice(2, 1, &[0.3, -0.2]);
        let s1 = academic(1).with_coupling(2, a12.clone());
        let s2 = SubsystemModel::new(
            2,
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 2.0),
            Mat::from_element(1, 1, 0.7),
            Mat::from_element(1, 1, 0.4),
        );
        let net = build_network(vec![s1.clone(), s2.clone()]).unwrap();
        let g = assemble_global(&net);
        let mut manual = Mat::zeros(3, 3);
        manual.view_mut((0, 0), (2, 2)).copy_from(&s1.a_ii);
        manual.view_mut((0, 2), (2, 1)).copy_from(&a12);
        manual[(2, 2)] = 0.5;
        assert_eq!(g.a, manual);
        assert_eq!(g.c[(0, 2)], 0.0);
        assert_eq!(g.c[(1, 0)], 0.0);
        assert_eq!(g.c[(1, 1)], 0.0);
        assert_eq!(g.c[(1, 2)], 2.0);
        assert_eq!(g.state_block(&g.a, 1, 2).unwrap(), a12);
        assert_eq!(g.state_block(&g.a, 2, 1).unwrap(), Mat::zeros(1, 2));
        assert_eq!(g.state_block(&g.a, 1, 1).unwrap(), s1.a_ii);
    }

    #[test]
    fn pbh_examples() {
        let a = Mat::identity(2, 2) * 0.9;
        assert!(is_detectable(&a, &Mat::identity(2, 2)).unwrap());
        let unstable = Mat::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.5]);
        assert!(!is_detectable(&unstable, &Mat::zeros(1, 2)).unwrap());
        assert!(is_detectable(&unstable, &Mat::from_row_slice(1, 2, &[1.0, 0.0])).unwrap());
        assert!(!is_detectable(&unstable, &Mat::from_row_slice(1, 2, &[0.0, 1.0])).unwrap());
        // Complex unstable pair observed through one coordinate.
        let rot = Mat::from_row_slice(2, 2, &[0.0, -1.2, 1.2, 0.0]);
        assert!(is_detectable(&rot, &Mat::from_row_slice(1, 2, &[1.0, 0.0])).unwrap());
        assert!(!is_detectable(&rot, &Mat::zeros(1, 2)).unwrap());
    }

    #[test]
    fn academic_example_passes_all_assumptions() {
        let net = build_network(vec![
            academic(1).with_coupling(2, diag(0.1)),
            academic(2).with_coupling(1, diag(0.1)),
        ])
        .unwrap();
        let report = validate_assumptions(&net).unwrap();
        assert!(report.all_pass(), "{report:?}");
        // The scaled block √2·A_ii has eigenvalues ±√2·√0.82 outside the unit
        // disk; C = [1 1] is not orthogonal to either eigenvector.
        let scaled_a = academic(1).a_ii * 2f64.sqrt();
        assert!(spectral_norm(&scaled_a) > 1.0);
    }

    #[test]
    fn singular_block_is_reported() {
        let mut s = academic(1);
        s.a_ii = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let net = build_network(vec![s]).unwrap();
        let report = validate_assumptions(&net).unwrap();
        assert!(!report.subsystems[0].invertible);
        assert!(report.subsystems[0].failures().contains(&"A_ii invertible"));
    }
}
