//! Pairwise and block duals, conversions between them, reparametrization
//! and local decoding.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lp_solver::{solve_lp_with, LpOptions};
use crate::model::{membership, normalize_subset, restrict_unchecked, Cost, PottsInstance, RestrictedInstance};
use crate::numeric::Scalar;

/// Messages `eta_uv(i)` on both orientations of every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution<S = f64> {
    num_labels: usize,
    // (u, v) canonical per edge index
    edges: Vec<(usize, usize)>,
    // eta_uv for u the smaller endpoint
    forward: Vec<Vec<S>>,
    // eta_vu
    backward: Vec<Vec<S>>,
}

impl<S: Scalar> DualSolution<S> {
    pub fn zeros(inst: &PottsInstance<S>) -> Self {
        let k = inst.num_labels();
        let m = inst.num_edges();
        DualSolution {
            num_labels: k,
            edges: inst.edges().iter().map(|e| (e.u, e.v)).collect(),
            forward: vec![vec![S::zero(); k]; m],
            backward: vec![vec![S::zero(); k]; m],
        }
    }

    /// `value(u, v, i)` is called for both orientations of every edge.
    pub fn from_fn(inst: &PottsInstance<S>, mut value: impl FnMut(usize, usize, usize) -> S) -> Self {
        let k = inst.num_labels();
        let mut d = Self::zeros(inst);
        for (idx, e) in inst.edges().iter().enumerate() {
            for i in 0..k {
                d.forward[idx][i] = value(e.u, e.v, i);
                d.backward[idx][i] = value(e.v, e.u, i);
            }
        }
        d
    }

    /// Assembles a dual from per-edge `(eta_uv, eta_vu)` rows in edge order.
    pub fn from_rows(inst: &PottsInstance<S>, rows: Vec<(Vec<S>, Vec<S>)>) -> Result<Self> {
        let k = inst.num_labels();
        if rows.len() != inst.num_edges() || rows.iter().any(|(a, b)| a.len() != k || b.len() != k) {
            return Err(Error::InvalidDual(format!(
                "expected {} edges with {k} labels per orientation",
                inst.num_edges()
            )));
        }
        let (forward, backward) = rows.into_iter().unzip();
        Ok(DualSolution {
            num_labels: k,
            edges: inst.edges().iter().map(|e| (e.u, e.v)).collect(),
            forward,
            backward,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of `(ordered pair, label)` entries, `2 |E| k`.
    pub fn num_entries(&self) -> usize {
        2 * self.edges.len() * self.num_labels
    }

    /// `eta_uv` for the ordered pair `(u, v)` of edge `idx`.
    pub fn by_edge(&self, idx: usize, from: usize) -> &[S] {
        let (u, _) = self.edges[idx];
        if from == u {
            &self.forward[idx]
        } else {
            &self.backward[idx]
        }
    }

    pub fn get(&self, inst: &PottsInstance<S>, u: usize, v: usize) -> Option<&[S]> {
        let idx = inst.edge_index(u, v)?;
        Some(self.by_edge(idx, u))
    }

    fn check_shape(&self, inst: &PottsInstance<S>) -> Result<()> {
        let same = self.num_labels == inst.num_labels()
            && self.edges.len() == inst.num_edges()
            && inst.edges().iter().zip(&self.edges).all(|(e, &(u, v))| e.u == u && e.v == v);
        if same {
            Ok(())
        } else {
            Err(Error::InvalidDual("dual is not keyed on the instance's edges".into()))
        }
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> DualSolution<T> {
        let conv = |rows: &Vec<Vec<S>>| -> Vec<Vec<T>> {
            rows.iter().map(|r| r.iter().map(&f).collect()).collect()
        };
        DualSolution {
            num_labels: self.num_labels,
            edges: self.edges.clone(),
            forward: conv(&self.forward),
            backward: conv(&self.backward),
        }
    }

    pub fn to_f64(&self) -> DualSolution<f64> {
        self.map_scalar(|v| v.to_f64())
    }

    /// `(u, v, eta_uv)` for both orientations of every edge, in edge order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[S])> + '_ {
        self.edges.iter().enumerate().flat_map(move |(idx, &(u, v))| {
            [
                (u, v, self.forward[idx].as_slice()),
                (v, u, self.backward[idx].as_slice()),
            ]
        })
    }
}

/// Block dual variables `delta_uv(i)`, keyed by ordered pairs of boundary edges.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDualSolution<S = f64> {
    num_labels: usize,
    values: BTreeMap<(usize, usize), Vec<S>>,
}

impl<S: Scalar> BlockDualSolution<S> {
    /// Zero duals on both orientations of the given edges.
    pub fn zeros(inst: &PottsInstance<S>, edge_indices: &[usize]) -> Self {
        let k = inst.num_labels();
        let mut values = BTreeMap::new();
        for &idx in edge_indices {
            let e = inst.edge(idx);
            values.insert((e.u, e.v), vec![S::zero(); k]);
            values.insert((e.v, e.u), vec![S::zero(); k]);
        }
        BlockDualSolution { num_labels: k, values }
    }

    /// Builds from ordered-pair rows; every key must be an edge of `inst`
    /// and both orientations must be present.
    pub fn from_map(inst: &PottsInstance<S>, values: BTreeMap<(usize, usize), Vec<S>>) -> Result<Self> {
        let k = inst.num_labels();
        for (&(u, v), row) in &values {
            if inst.edge_index(u, v).is_none() {
                return Err(Error::InvalidDual(format!("({u},{v}) is not an edge")));
            }
            if row.len() != k {
                return Err(Error::InvalidDual(format!(
                    "row ({u},{v}) has {} entries, expected {k}",
                    row.len()
                )));
            }
            if !values.contains_key(&(v, u)) {
                return Err(Error::InvalidDual(format!("missing orientation ({v},{u})")));
            }
        }
        Ok(BlockDualSolution { num_labels: k, values })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_entries(&self) -> usize {
        self.values.len() * self.num_labels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<&Vec<S>> {
        self.values.get(&(u, v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<S>)> {
        self.values.iter()
    }

    /// Canonical `(min, max)` pairs of the keyed edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.values.keys().filter(|(u, v)| u < v).copied().collect()
    }

    /// Errors unless the keys are exactly both orientations of `edge_indices`.
    pub fn check_keys(&self, inst: &PottsInstance<S>, edge_indices: &[usize]) -> Result<()> {
        let mut expect: Vec<(usize, usize)> = Vec::with_capacity(2 * edge_indices.len());
        for &idx in edge_indices {
            let e = inst.edge(idx);
            expect.push((e.u, e.v));
            expect.push((e.v, e.u));
        }
        expect.sort_unstable();
        expect.dedup();
        let have: Vec<(usize, usize)> = self.values.keys().copied().collect();
        if have != expect {
            return Err(Error::InvalidDual(format!(
                "block dual keyed on {} ordered pairs, expected the {} boundary pairs",
                have.len(),
                expect.len()
            )));
        }
        if self.values.values().any(|r| r.len() != inst.num_labels()) {
            return Err(Error::InvalidDual("label count mismatch".into()));
        }
        Ok(())
    }

    /// Sub-dual on the boundary edges of `nodes`. Fails when one of them is
    /// not keyed here.
    pub fn for_block(&self, inst: &PottsInstance<S>, nodes: &[usize]) -> Result<Self> {
        let (_, bedges) = crate::model::boundary(inst, nodes)?;
        let mut values = BTreeMap::new();
        for idx in bedges {
            let e = inst.edge(idx);
            for key in [(e.u, e.v), (e.v, e.u)] {
                let row = self.values.get(&key).ok_or_else(|| {
                    Error::InvalidDual(format!("no dual on boundary pair {key:?}"))
                })?;
                values.insert(key, row.clone());
            }
        }
        Ok(BlockDualSolution {
            num_labels: self.num_labels,
            values,
        })
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> BlockDualSolution<T> {
        BlockDualSolution {
            num_labels: self.num_labels,
            values: self
                .values
                .iter()
                .map(|(k, r)| (*k, r.iter().map(&f).collect()))
                .collect(),
        }
    }

    pub fn to_f64(&self) -> BlockDualSolution<f64> {
        self.map_scalar(|v| v.to_f64())
    }

    pub fn to_exact(&self) -> BlockDualSolution<crate::numeric::Rational> {
        self.map_scalar(|v| crate::numeric::Rational::from_f64(v.to_f64()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockStatus {
    Untested,
    Stable,
    Unstable,
}

impl BlockStatus {
    pub fn code(self) -> char {
        match self {
            BlockStatus::Stable => 'S',
            BlockStatus::Unstable => 'U',
            BlockStatus::Untested => '?',
        }
    }
}

/// Partition of the nodes into blocks `S_1..S_B` and a boundary block `S_*`.
///
/// Block ids `0..B` name the ordinary blocks, id `B` the boundary block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDecomposition {
    num_nodes: usize,
    blocks: Vec<Vec<usize>>,
    status: Vec<BlockStatus>,
}

impl BlockDecomposition {
    /// Validates that `blocks` and `boundary` partition `0..num_nodes`.
    /// Node lists are sorted; empty ordinary blocks are kept.
    pub fn new(num_nodes: usize, blocks: Vec<Vec<usize>>, boundary: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; num_nodes];
        let mut all: Vec<Vec<usize>> = blocks;
        all.push(boundary);
        for b in all.iter_mut() {
            b.sort_unstable();
            for &u in b.iter() {
                if u >= num_nodes {
                    return Err(Error::InvalidDecomposition(format!("node {u} out of range")));
                }
                if seen[u] {
                    return Err(Error::InvalidDecomposition(format!("node {u} in two blocks")));
                }
                seen[u] = true;
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDecomposition(format!("node {u} in no block")));
        }
        let status = vec![BlockStatus::Untested; all.len()];
        Ok(BlockDecomposition {
            num_nodes,
            blocks: all,
            status,
        })
    }

    /// Everything in one ordinary block, empty boundary block.
    pub fn single(num_nodes: usize) -> Self {
        Self::new(num_nodes, vec![(0..num_nodes).collect()], Vec::new()).expect("trivial partition")
    }

    /// One ordinary block per node.
    pub fn singletons(num_nodes: usize) -> Self {
        Self::new(num_nodes, (0..num_nodes).map(|u| vec![u]).collect(), Vec::new())
            .expect("singleton partition")
    }

    /// Builds from a block id per node; ids must be `< num_blocks`, with
    /// `num_blocks - 1` the boundary block.
    pub fn from_assignment(assignment: &[usize], num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::InvalidDecomposition("need the boundary block".into()));
        }
        let mut blocks = vec![Vec::new(); num_blocks];
        for (u, &b) in assignment.iter().enumerate() {
            if b >= num_blocks {
                return Err(Error::InvalidDecomposition(format!("block id {b} out of range")));
            }
            blocks[b].push(u);
        }
        let boundary = blocks.pop().expect("nonempty");
        Self::new(assignment.len(), blocks, boundary)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of blocks including the boundary block.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn boundary_id(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn boundary_block(&self) -> &[usize] {
        &self.blocks[self.boundary_id()]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn status(&self, b: usize) -> BlockStatus {
        self.status[b]
    }

    pub fn set_status(&mut self, b: usize, s: BlockStatus) {
        self.status[b] = s;
    }

    /// Block id of every node.
    pub fn assignment(&self) -> Vec<usize> {
        let mut a = vec![0; self.num_nodes];
        for (b, nodes) in self.blocks.iter().enumerate() {
            for &u in nodes {
                a[u] = b;
            }
        }
        a
    }

    /// Edges whose endpoints lie in different blocks.
    pub fn boundary_edges<S: Scalar>(&self, inst: &PottsInstance<S>) -> Vec<usize> {
        let a = self.assignment();
        inst.edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| a[e.u] != a[e.v])
            .map(|(i, _)| i)
            .collect()
    }

    /// Drops empty ordinary blocks, keeping order and statuses.
    pub fn without_empty(&self) -> Self {
        let mut blocks = Vec::new();
        let mut status = Vec::new();
        let last = self.boundary_id();
        for (b, nodes) in self.blocks.iter().enumerate() {
            if b == last || !nodes.is_empty() {
                blocks.push(nodes.clone());
                status.push(self.status[b]);
            }
        }
        BlockDecomposition {
            num_nodes: self.num_nodes,
            blocks,
            status,
        }
    }

    fn check_instance<S: Scalar>(&self, inst: &PottsInstance<S>) -> Result<()> {
        if self.num_nodes != inst.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "decomposition over {} nodes, instance has {}",
                self.num_nodes,
                inst.num_nodes()
            )));
        }
        Ok(())
    }
}

/// Minimum of the Potts edge term `w [i != j] - a(i) - b(j)` over label pairs.
pub(crate) fn edge_term_min<S: Scalar>(w: &S, a: &[S], b: &[S]) -> S {
    let k = a.len();
    let mut best: Option<S> = None;
    for i in 0..k {
        for j in 0..k {
            let mut v = -a[i].clone() - b[j].clone();
            if i != j {
                v += w.clone();
            }
            best = Some(match best {
                None => v,
                Some(cur) => S::min_of(cur, v),
            });
        }
    }
    best.unwrap_or_else(S::zero)
}

/// Reparametrized cost `theta_u(i) + sum_v eta_uv(i)`.
pub(crate) fn reparam_cost<S: Scalar>(inst: &PottsInstance<S>, eta: &DualSolution<S>, u: usize, i: usize) -> Cost<S> {
    let mut shift = S::zero();
    for &(_, idx) in inst.neighbors(u) {
        shift += eta.by_edge(idx, u)[i].clone();
    }
    inst.cost(u, i).add(&shift)
}

/// `P(eta) = sum_u min_i (theta_u(i) + sum_v eta_uv(i))
///         + sum_uv min_ij (w [i != j] - eta_uv(i) - eta_vu(j))`.
///
/// Forbidden labels never attain a node minimum.
pub fn pairwise_dual_value<S: Scalar>(inst: &PottsInstance<S>, eta: &DualSolution<S>) -> Result<S> {
    eta.check_shape(inst)?;
    let k = inst.num_labels();
    let mut total = S::zero();
    for u in 0..inst.num_nodes() {
        let mut best: Option<S> = None;
        for i in 0..k {
            if let Cost::Finite(v) = reparam_cost(inst, eta, u, i) {
                best = Some(match best {
                    None => v,
                    Some(b) => S::min_of(b, v),
                });
            }
        }
        total += best.expect("every node has an admissible label");
    }
    for (idx, e) in inst.edges().iter().enumerate() {
        total += edge_term_min(&e.weight, &eta.forward[idx], &eta.backward[idx]);
    }
    Ok(total)
}

/// Restricted instance and pairwise LP solution of one block.
#[derive(Clone, Debug)]
pub struct BlockSubproblem<S = f64> {
    pub restricted: RestrictedInstance<S>,
    pub value: S,
    pub dual: DualSolution<S>,
}

/// Solves the reparametrized LP of every block (boundary block last).
pub fn block_subproblems<S: Scalar>(
    inst: &PottsInstance<S>,
    decomp: &BlockDecomposition,
    delta: &BlockDualSolution<S>,
) -> Result<Vec<BlockSubproblem<S>>> {
    decomp.check_instance(inst)?;
    delta.check_keys(inst, &decomp.boundary_edges(inst))?;
    let assignment = decomp.assignment();
    decomp
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, nodes)| {
            let restricted = restrict_with(inst, nodes, &assignment, b, delta);
            let (value, dual) = if restricted.instance.num_nodes() == 0 {
                (S::zero(), DualSolution::zeros(&restricted.instance))
            } else {
                let (primal, dual) = solve_lp_with(&restricted.instance, &LpOptions::default())?;
                (primal.objective, dual)
            };
            Ok(BlockSubproblem {
                restricted,
                value,
                dual,
            })
        })
        .collect()
}

fn restrict_with<S: Scalar>(
    inst: &PottsInstance<S>,
    nodes: &[usize],
    assignment: &[usize],
    b: usize,
    delta: &BlockDualSolution<S>,
) -> RestrictedInstance<S> {
    let inside: Vec<bool> = assignment.iter().map(|&a| a == b).collect();
    restrict_unchecked(inst, nodes, &inside, |u, i| {
        let mut shift = S::zero();
        for &(v, _) in inst.neighbors(u) {
            if assignment[v] != b {
                shift += delta.get(u, v).expect("checked keys")[i].clone();
            }
        }
        shift
    })
}

/// `B(delta)`: sum of block LP values on the reparametrized restrictions
/// plus `min_ij (w [i != j] - delta_uv(i) - delta_vu(j))` per boundary edge.
pub fn block_dual_value<S: Scalar>(
    inst: &PottsInstance<S>,
    decomp: &BlockDecomposition,
    delta: &BlockDualSolution<S>,
) -> Result<S> {
    let subs = block_subproblems(inst, decomp, delta)?;
    let mut total = S::zero();
    for s in &subs {
        total += s.value.clone();
    }
    Ok(total + boundary_terms(inst, decomp, delta))
}

fn boundary_terms<S: Scalar>(inst: &PottsInstance<S>, decomp: &BlockDecomposition, delta: &BlockDualSolution<S>) -> S {
    let mut total = S::zero();
    for idx in decomp.boundary_edges(inst) {
        let e = inst.edge(idx);
        let a = delta.get(e.u, e.v).expect("checked keys");
        let b = delta.get(e.v, e.u).expect("checked keys");
        total += edge_term_min(&e.weight, a, b);
    }
    total
}

/// Restriction of an optimal pairwise dual to the boundary edges of `decomp`.
///
/// `lp_objective` is the optimal LP value; the dual is rejected unless
/// `|P(eta) - lp_objective| <= tol`.
pub fn restrict_dual<S: Scalar>(
    inst: &PottsInstance<S>,
    eta: &DualSolution<S>,
    decomp: &BlockDecomposition,
    lp_objective: &S,
    tol: &S,
) -> Result<BlockDualSolution<S>> {
    decomp.check_instance(inst)?;
    let p = pairwise_dual_value(inst, eta)?;
    let gap = (p.clone() - lp_objective.clone()).abs();
    if gap > *tol {
        return Err(Error::InvalidDual(format!(
            "dual value {p} is {gap} away from the LP optimum {lp_objective}"
        )));
    }
    Ok(restrict_dual_unchecked(inst, eta, &decomp.boundary_edges(inst)))
}

pub(crate) fn restrict_dual_unchecked<S: Scalar>(
    inst: &PottsInstance<S>,
    eta: &DualSolution<S>,
    edge_indices: &[usize],
) -> BlockDualSolution<S> {
    let mut values = BTreeMap::new();
    for &idx in edge_indices {
        let e = inst.edge(idx);
        values.insert((e.u, e.v), eta.forward[idx].clone());
        values.insert((e.v, e.u), eta.backward[idx].clone());
    }
    BlockDualSolution {
        num_labels: inst.num_labels(),
        values,
    }
}

/// Stitches block duals into a pairwise dual: `delta` on boundary edges and
/// `block_duals[b]` (keyed on block `b`'s restricted instance) inside blocks.
pub fn extend_dual<S: Scalar>(
    inst: &PottsInstance<S>,
    decomp: &BlockDecomposition,
    delta: &BlockDualSolution<S>,
    block_duals: &[DualSolution<S>],
) -> Result<DualSolution<S>> {
    decomp.check_instance(inst)?;
    delta.check_keys(inst, &decomp.boundary_edges(inst))?;
    if block_duals.len() != decomp.num_blocks() {
        return Err(Error::InvalidDual(format!(
            "{} block duals for {} blocks",
            block_duals.len(),
            decomp.num_blocks()
        )));
    }
    let assignment = decomp.assignment();
    let mut local = vec![0usize; inst.num_nodes()];
    for nodes in decomp.blocks() {
        for (li, &u) in nodes.iter().enumerate() {
            local[u] = li;
        }
    }
    // internal edges of each block in global edge order
    let mut internal: Vec<Vec<usize>> = vec![Vec::new(); decomp.num_blocks()];
    for (idx, e) in inst.edges().iter().enumerate() {
        if assignment[e.u] == assignment[e.v] {
            internal[assignment[e.u]].push(idx);
        }
    }
    let k = inst.num_labels();
    let mut eta = DualSolution::zeros(inst);
    for (b, edges) in internal.iter().enumerate() {
        let bd = &block_duals[b];
        if bd.num_edges() != edges.len() || bd.num_labels() != k {
            return Err(Error::InvalidDual(format!(
                "block {b} dual has {} edges, block has {}",
                bd.num_edges(),
                edges.len()
            )));
        }
        for (t, &idx) in edges.iter().enumerate() {
            let e = inst.edge(idx);
            if bd.edges[t] != (local[e.u], local[e.v]) {
                return Err(Error::InvalidDual(format!("block {b} dual edge {t} mismatched")));
            }
            eta.forward[idx] = bd.forward[t].clone();
            eta.backward[idx] = bd.backward[t].clone();
        }
    }
    for idx in decomp.boundary_edges(inst) {
        let e = inst.edge(idx);
        eta.forward[idx] = delta.get(e.u, e.v).expect("checked").clone();
        eta.backward[idx] = delta.get(e.v, e.u).expect("checked").clone();
    }
    Ok(eta)
}

/// Unique minimizer of the reparametrized cost at `u`, if it beats every
/// other label by more than `tol`.
pub fn local_decode<S: Scalar>(inst: &PottsInstance<S>, eta: &DualSolution<S>, u: usize, tol: &S) -> Option<usize> {
    let k = inst.num_labels();
    let mut best: Option<(usize, S)> = None;
    let mut second: Option<S> = None;
    for i in 0..k {
        let Cost::Finite(v) = reparam_cost(inst, eta, u, i) else {
            continue;
        };
        match &best {
            None => best = Some((i, v)),
            Some((_, b)) if v < *b => {
                second = Some(b.clone());
                best = Some((i, v));
            }
            Some(_) => {
                second = Some(match second {
                    None => v,
                    Some(s) => S::min_of(s, v),
                });
            }
        }
    }
    let (i, b) = best?;
    match second {
        Some(s) if s.clone() - b.clone() <= *tol => None,
        _ => Some(i),
    }
}

/// `eps*_u(i) = sum_v delta_uv(i)` over boundary edges of `nodes`, one row
/// per boundary node.
pub fn epsilon_star<S: Scalar>(
    inst: &PottsInstance<S>,
    delta: &BlockDualSolution<S>,
    nodes: &[usize],
) -> Result<Vec<(usize, Vec<S>)>> {
    let nodes = normalize_subset(inst, nodes)?;
    let (bnodes, bedges) = crate::model::boundary(inst, &nodes)?;
    delta.check_keys(inst, &bedges)?;
    let inside = membership(inst.num_nodes(), &nodes);
    let k = inst.num_labels();
    Ok(bnodes
        .into_iter()
        .map(|u| {
            let mut row = vec![S::zero(); k];
            for &(v, _) in inst.neighbors(u) {
                if !inside[v] {
                    for (i, d) in delta.get(u, v).expect("checked keys").iter().enumerate() {
                        row[i] += d.clone();
                    }
                }
            }
            (u, row)
        })
        .collect())
}

/// Instance `((V, E \ E_d), theta^delta, w|_{E \ E_d})` used by the merged
/// stability check.
pub(crate) fn cut_boundary<S: Scalar>(
    inst: &PottsInstance<S>,
    decomp: &BlockDecomposition,
    delta: &BlockDualSolution<S>,
) -> PottsInstance<S> {
    let assignment = decomp.assignment();
    let k = inst.num_labels();
    let mut costs = Vec::with_capacity(inst.num_nodes() * k);
    for u in 0..inst.num_nodes() {
        for i in 0..k {
            let mut shift = S::zero();
            for &(v, _) in inst.neighbors(u) {
                if assignment[v] != assignment[u] {
                    shift += delta.get(u, v).expect("checked keys")[i].clone();
                }
            }
            costs.push(inst.cost(u, i).add(&shift));
        }
    }
    let edges = inst
        .edges()
        .iter()
        .filter(|e| assignment[e.u] == assignment[e.v])
        .cloned()
        .collect();
    PottsInstance::from_parts(inst.num_nodes(), k, costs, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders;
    use crate::lp_solver::solve_lp;

    fn path3() -> PottsInstance {
        PottsInstance::new(
            2,
            vec![
                vec![Cost::Finite(0.0), Cost::Finite(1.0)],
                vec![Cost::Finite(0.5), Cost::Finite(0.0)],
                vec![Cost::Finite(1.0), Cost::Finite(0.0)],
            ],
            vec![(0, 1, 1.0), (1, 2, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn zero_dual_value_is_sum_of_node_minima() {
        let inst = builders::random_grid(3, 3, 3, (0.0, 5.0), (0.5, 2.0), 4).unwrap();
        let p = pairwise_dual_value(&inst, &DualSolution::zeros(&inst)).unwrap();
        let expect: f64 = (0..9)
            .map(|u| (0..3).map(|i| inst.cost(u, i).to_f64()).fold(f64::INFINITY, f64::min))
            .sum();
        assert!((p - expect).abs() < 1e-12);
    }

    #[test]
    fn dual_has_two_entries_per_edge_label() {
        let inst = builders::random_grid(2, 3, 4, (0.0, 1.0), (1.0, 1.0), 0).unwrap();
        assert_eq!(DualSolution::zeros(&inst).num_entries(), 2 * 7 * 4);
    }

    #[test]
    fn edge_term_of_potts() {
        assert_eq!(edge_term_min(&1.0, &[0.0, 0.0], &[0.0, 0.0]), 0.0);
        // pushing both messages up on label 0 makes the diagonal cheapest
        assert_eq!(edge_term_min(&1.0, &[0.5, 0.0], &[0.25, 0.0]), -0.75);
        assert_eq!(edge_term_min(&1.0, &[3.0, 0.0], &[0.0, 3.0]), -5.0);
    }

    #[test]
    fn decomposition_validation() {
        assert!(BlockDecomposition::new(3, vec![vec![0, 1]], vec![2]).is_ok());
        assert!(BlockDecomposition::new(3, vec![vec![0, 1]], vec![1, 2]).is_err());
        assert!(BlockDecomposition::new(3, vec![vec![0]], vec![2]).is_err());
        assert!(BlockDecomposition::new(3, vec![vec![0, 3]], vec![1, 2]).is_err());
        let d = BlockDecomposition::from_assignment(&[1, 0, 2, 1], 3).unwrap();
        assert_eq!(d.block(0), &[1]);
        assert_eq!(d.block(1), &[0, 3]);
        assert_eq!(d.boundary_block(), &[2]);
        assert_eq!(d.assignment(), vec![1, 0, 2, 1]);
    }

    #[test]
    fn decode_requires_margin() {
        let inst = PottsInstance::new(2, vec![vec![Cost::Finite(0.0), Cost::Finite(1.0)]], vec![]).unwrap();
        let eta = DualSolution::zeros(&inst);
        assert_eq!(local_decode(&inst, &eta, 0, &1e-6), Some(0));
        let tie = PottsInstance::new(2, vec![vec![Cost::Finite(0.5), Cost::Finite(0.5)]], vec![]).unwrap();
        assert_eq!(local_decode(&tie, &DualSolution::zeros(&tie), 0, &1e-6), None);
    }

    #[test]
    fn single_block_dual_equals_lp() {
        let inst = path3();
        let (x, _) = solve_lp(&inst).unwrap();
        let d = BlockDecomposition::single(3);
        let delta = BlockDualSolution::zeros(&inst, &[]);
        let b = block_dual_value(&inst, &d, &delta).unwrap();
        assert!((b - x.objective).abs() < 1e-9);
    }

    #[test]
    fn singleton_block_dual_equals_pairwise() {
        let inst = builders::random_grid(2, 3, 3, (0.0, 4.0), (0.0, 2.0), 9).unwrap();
        let mut seed = 1u64;
        let eta = DualSolution::from_fn(&inst, |_, _, _| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        });
        let d = BlockDecomposition::singletons(6);
        let delta = restrict_dual_unchecked(&inst, &eta, &d.boundary_edges(&inst));
        let b = block_dual_value(&inst, &d, &delta).unwrap();
        let p = pairwise_dual_value(&inst, &eta).unwrap();
        assert!((b - p).abs() < 1e-9, "{b} vs {p}");
    }

    #[test]
    fn restrict_rejects_suboptimal_dual() {
        let inst = path3();
        let (x, _) = solve_lp(&inst).unwrap();
        let d = BlockDecomposition::singletons(3);
        let zero = DualSolution::zeros(&inst);
        let p0 = pairwise_dual_value(&inst, &zero).unwrap();
        assert!(p0 < x.objective - 1e-3);
        assert!(restrict_dual(&inst, &zero, &d, &x.objective, &1e-6).is_err());
    }

    #[test]
    fn round_trip_on_path() {
        let inst = path3();
        let (x, eta) = solve_lp(&inst).unwrap();
        let d = BlockDecomposition::new(3, vec![vec![0, 1]], vec![2]).unwrap();
        let delta = restrict_dual(&inst, &eta, &d, &x.objective, &1e-6).unwrap();
        let subs = block_subproblems(&inst, &d, &delta).unwrap();
        let duals: Vec<_> = subs.iter().map(|s| s.dual.clone()).collect();
        let stitched = extend_dual(&inst, &d, &delta, &duals).unwrap();
        let p = pairwise_dual_value(&inst, &stitched).unwrap();
        assert!((p - x.objective).abs() < 1e-9);
    }

    #[test]
    fn epsilon_star_sums_boundary_rows() {
        let inst = path3();
        let mut map = BTreeMap::new();
        map.insert((1, 0), vec![1.0, 2.0]);
        map.insert((0, 1), vec![0.0, 0.0]);
        map.insert((1, 2), vec![0.5, -1.0]);
        map.insert((2, 1), vec![0.0, 0.0]);
        let delta = BlockDualSolution::from_map(&inst, map).unwrap();
        let eps = epsilon_star(&inst, &delta, &[1]).unwrap();
        assert_eq!(eps, vec![(1, vec![1.5, 1.0])]);
    }

    #[test]
    fn combined_epsilon_star() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let eps = epsilon_star(&ex.instance, &ex.delta, &[0, 1, 2]).unwrap();
        assert_eq!(eps, vec![(0, vec![0.01, 0.0, 0.0]), (2, vec![0.01, 0.0, 0.0])]);
    }
}
