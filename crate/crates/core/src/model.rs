//! Potts instances, labelings, objective evaluation and perturbations.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;


use crate::dual_decomp::BlockDualSolution;
use crate::error::{Error, Result};
use crate::numeric::{Rational, Scalar};

/// A node cost, or the objective value of a labeling: finite, or the
/// `Forbidden` marker which orders above every finite value.
#[derive(Clone, Debug, PartialEq)]
pub enum Cost<S = f64> {
    Finite(S),
    Forbidden,
}

impl<S: Scalar> Cost<S> {
    pub fn is_forbidden(&self) -> bool {
        matches!(self, Cost::Forbidden)
    }

    pub fn finite(&self) -> Option<&S> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Forbidden => None,
        }
    }

    /// The value with `Forbidden` replaced by `big`.
    pub fn or_big(&self, big: &S) -> S {
        match self {
            Cost::Finite(v) => v.clone(),
            Cost::Forbidden => big.clone(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Cost::Finite(v) => v.to_f64(),
            Cost::Forbidden => f64::INFINITY,
        }
    }

    pub fn add(&self, other: &S) -> Cost<S> {
        match self {
            Cost::Finite(v) => Cost::Finite(v.clone() + other.clone()),
            Cost::Forbidden => Cost::Forbidden,
        }
    }
}

impl<S: Scalar> PartialOrd for Cost<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Forbidden) => Some(Ordering::Less),
            (Cost::Forbidden, Cost::Finite(_)) => Some(Ordering::Greater),
            (Cost::Forbidden, Cost::Forbidden) => Some(Ordering::Equal),
        }
    }
}

impl<S: Scalar> fmt::Display for Cost<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{}", v),
            Cost::Forbidden => write!(f, "inf"),
        }
    }
}

/// Undirected edge stored with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge<S = f64> {
    pub u: usize,
    pub v: usize,
    pub weight: S,
}

impl<S> Edge<S> {
    /// The endpoint opposite to `node`.
    pub fn other(&self, node: usize) -> usize {
        if node == self.u {
            self.v
        } else {
            self.u
        }
    }
}

/// A MAP inference instance for a ferromagnetic Potts model.
#[derive(Clone, Debug, PartialEq)]
pub struct PottsInstance<S = f64> {
    num_nodes: usize,
    num_labels: usize,
    costs: Vec<Cost<S>>,
    edges: Vec<Edge<S>>,
    // node -> [(neighbor, edge index)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl<S: Scalar> PottsInstance<S> {
    /// Builds and validates an instance. `costs[u][i]` is the cost of label
    /// `i` at node `u`; edges may be given in either orientation.
    pub fn new(
        num_labels: usize,
        costs: Vec<Vec<Cost<S>>>,
        edges: Vec<(usize, usize, S)>,
    ) -> Result<Self> {
        let num_nodes = costs.len();
        if num_labels == 0 {
            return Err(Error::InvalidInstance("label set must be nonempty".into()));
        }
        let mut flat = Vec::with_capacity(num_nodes * num_labels);
        for (u, row) in costs.into_iter().enumerate() {
            if row.len() != num_labels {
                return Err(Error::InvalidInstance(format!(
                    "node {u} has {} costs, expected {num_labels}",
                    row.len()
                )));
            }
            if row.iter().all(|c| c.is_forbidden()) {
                return Err(Error::InvalidInstance(format!(
                    "node {u} has no admissible label"
                )));
            }
            flat.extend(row);
        }
        let mut seen = BTreeSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for (a, b, w) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidInstance(format!(
                    "edge ({a},{b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidInstance(format!("self loop at node {a}")));
            }
            if w < S::zero() {
                return Err(Error::InvalidInstance(format!(
                    "edge ({a},{b}) has negative weight {w}"
                )));
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((u, v)) {
                return Err(Error::InvalidInstance(format!("duplicate edge ({u},{v})")));
            }
            canon.push(Edge { u, v, weight: w });
        }
        Ok(Self::from_parts(num_nodes, num_labels, flat, canon))
    }

    pub(crate) fn from_parts(
        num_nodes: usize,
        num_labels: usize,
        costs: Vec<Cost<S>>,
        edges: Vec<Edge<S>>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); num_nodes];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.u].push((e.v, idx));
            adjacency[e.v].push((e.u, idx));
        }
        PottsInstance {
            num_nodes,
            num_labels,
            costs,
            edges,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge<S>] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge<S> {
        &self.edges[idx]
    }

    pub fn cost(&self, u: usize, i: usize) -> &Cost<S> {
        &self.costs[u * self.num_labels + i]
    }

    pub fn node_costs(&self, u: usize) -> &[Cost<S>] {
        &self.costs[u * self.num_labels..(u + 1) * self.num_labels]
    }

    /// `(neighbor, edge index)` pairs incident to `u`.
    pub fn neighbors(&self, u: usize) -> &[(usize, usize)] {
        &self.adjacency[u]
    }

    /// Index of the edge joining `a` and `b`, if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|(n, _)| *n == b)
            .map(|&(_, e)| e)
    }

    pub fn has_forbidden(&self) -> bool {
        self.costs.iter().any(|c| c.is_forbidden())
    }

    /// Largest finite magnitude among costs and weights (at least 1).
    pub fn data_scale(&self) -> S {
        let mut scale = S::one();
        for c in &self.costs {
            if let Cost::Finite(v) = c {
                scale = S::max_of(scale, v.abs());
            }
        }
        for e in &self.edges {
            scale = S::max_of(scale, e.weight.abs());
        }
        scale
    }

    /// Default finite stand-in for `Forbidden` costs in LPs and ILPs:
    /// `10^6` times the largest finite cost-plus-weight magnitude, at least
    /// `10^6`.
    pub fn default_big(&self) -> S {
        let mut max_cost = S::zero();
        for c in &self.costs {
            if let Cost::Finite(v) = c {
                max_cost = S::max_of(max_cost, v.abs());
            }
        }
        let mut max_weight = S::zero();
        for e in &self.edges {
            max_weight = S::max_of(max_weight, e.weight.abs());
        }
        let million = S::from_f64(1e6);
        S::max_of(million.clone(), million * (max_cost + max_weight))
    }

    /// Copy with every `Forbidden` cost replaced by `big`.
    pub fn with_forbidden_replaced(&self, big: &S) -> Self {
        let costs = self
            .costs
            .iter()
            .map(|c| Cost::Finite(c.or_big(big)))
            .collect();
        Self::from_parts(self.num_nodes, self.num_labels, costs, self.edges.clone())
    }

    /// Copy with new edge weights (same order as [`Self::edges`]).
    pub fn with_weights(&self, weights: Vec<S>) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} edges",
                weights.len(),
                self.edges.len()
            )));
        }
        if weights.iter().any(|w| *w < S::zero()) {
            return Err(Error::InvalidInstance("negative weight".into()));
        }
        let edges = self
            .edges
            .iter()
            .zip(weights)
            .map(|(e, weight)| Edge {
                u: e.u,
                v: e.v,
                weight,
            })
            .collect();
        Ok(Self::from_parts(
            self.num_nodes,
            self.num_labels,
            self.costs.clone(),
            edges,
        ))
    }

    /// Copy with replaced node costs (row-major, `n * k`).
    pub(crate) fn with_costs(&self, costs: Vec<Cost<S>>) -> Self {
        debug_assert_eq!(costs.len(), self.num_nodes * self.num_labels);
        Self::from_parts(self.num_nodes, self.num_labels, costs, self.edges.clone())
    }

    pub(crate) fn costs_flat(&self) -> &[Cost<S>] {
        &self.costs
    }

    /// Converts every number with `f`.
    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> PottsInstance<T> {
        let costs = self
            .costs
            .iter()
            .map(|c| match c {
                Cost::Finite(v) => Cost::Finite(f(v)),
                Cost::Forbidden => Cost::Forbidden,
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                u: e.u,
                v: e.v,
                weight: f(&e.weight),
            })
            .collect();
        PottsInstance::from_parts(self.num_nodes, self.num_labels, costs, edges)
    }

    /// Exact rational copy (every finite float converts exactly).
    pub fn to_exact(&self) -> PottsInstance<Rational> {
        self.map_scalar(|v| Rational::from_f64(v.to_f64()))
    }

    pub fn to_f64(&self) -> PottsInstance<f64> {
        self.map_scalar(|v| v.to_f64())
    }

    /// Total number of labelings `k^n` as a float (saturating).
    pub fn labeling_count(&self) -> f64 {
        (self.num_labels as f64).powi(self.num_nodes as i32)
    }
}

/// A total assignment of labels (0-indexed) to nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Labeling(pub Vec<usize>);

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Self {
        Labeling(labels)
    }

    /// The labeling assigning `label` everywhere.
    pub fn constant(n: usize, label: usize) -> Self {
        Labeling(vec![label; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, u: usize) -> usize {
        self.0[u]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn validate<S: Scalar>(&self, inst: &PottsInstance<S>) -> Result<()> {
        if self.0.len() != inst.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "labeling has {} entries for {} nodes",
                self.0.len(),
                inst.num_nodes()
            )));
        }
        if let Some((u, &l)) = self
            .0
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= inst.num_labels())
        {
            return Err(Error::DimensionMismatch(format!(
                "node {u} has label {l} outside [0, {})",
                inst.num_labels()
            )));
        }
        Ok(())
    }

    /// Restriction to `nodes`, in the given order.
    pub fn restrict(&self, nodes: &[usize]) -> Labeling {
        Labeling(nodes.iter().map(|&u| self.0[u]).collect())
    }

    /// Number of positions where the labelings disagree.
    pub fn hamming(&self, other: &Labeling) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
    }
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// `Q(f)`: node costs of the chosen labels plus the weights of cut edges.
pub fn objective<S: Scalar>(inst: &PottsInstance<S>, f: &Labeling) -> Result<Cost<S>> {
    f.validate(inst)?;
    Ok(objective_unchecked(inst, f.as_slice()))
}

pub(crate) fn objective_unchecked<S: Scalar>(inst: &PottsInstance<S>, f: &[usize]) -> Cost<S> {
    let mut total = S::zero();
    for (u, &l) in f.iter().enumerate() {
        match inst.cost(u, l) {
            Cost::Finite(v) => total += v.clone(),
            Cost::Forbidden => return Cost::Forbidden,
        }
    }
    for e in inst.edges() {
        if f[e.u] != f[e.v] {
            total += e.weight.clone();
        }
    }
    Cost::Finite(total)
}

/// Stability parameter: a finite factor `>= 1` or infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    Finite(f64),
    Infinite,
}

impl Factor {
    pub fn new(v: f64) -> Result<Self> {
        if v.is_infinite() && v > 0.0 {
            Ok(Factor::Infinite)
        } else if v.is_finite() && v >= 1.0 {
            Ok(Factor::Finite(v))
        } else {
            Err(Error::InvalidParameter(format!(
                "perturbation factor must be >= 1, got {v}"
            )))
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Factor::Finite(v) => *v,
            Factor::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Factor::Infinite)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Finite(v) => write!(f, "{v}"),
            Factor::Infinite => write!(f, "inf"),
        }
    }
}

/// A multiplicative `(beta, gamma)`-perturbation of the edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPerturbation {
    pub beta: f64,
    pub gamma: f64,
    /// One factor per edge, in instance edge order.
    pub factors: Vec<f64>,
}

impl WeightPerturbation {
    pub fn new(beta: f64, gamma: f64, factors: Vec<f64>) -> Result<Self> {
        if !(beta >= 1.0 && gamma >= 1.0) {
            return Err(Error::InvalidPerturbation(format!(
                "beta and gamma must be >= 1 (got {beta}, {gamma})"
            )));
        }
        let lo = 1.0 / beta;
        for (idx, &f) in factors.iter().enumerate() {
            if !(f > 0.0 && f >= lo && f <= gamma) {
                return Err(Error::InvalidPerturbation(format!(
                    "factor {f} on edge {idx} outside [{lo}, {gamma}]"
                )));
            }
        }
        Ok(WeightPerturbation {
            beta,
            gamma,
            factors,
        })
    }

    pub fn identity(num_edges: usize) -> Self {
        WeightPerturbation {
            beta: 1.0,
            gamma: 1.0,
            factors: vec![1.0; num_edges],
        }
    }

    /// Applying `self` then `other` equals applying the product; the result
    /// is a `(beta*beta', gamma*gamma')`-perturbation.
    pub fn compose(&self, other: &WeightPerturbation) -> Result<Self> {
        if self.factors.len() != other.factors.len() {
            return Err(Error::DimensionMismatch("perturbation lengths differ".into()));
        }
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| a * b)
            .collect();
        Ok(WeightPerturbation {
            beta: self.beta * other.beta,
            gamma: self.gamma * other.gamma,
            factors,
        })
    }
}

/// `w'(u,v) = factor(u,v) * w(u,v)`; costs unchanged.
pub fn apply_weight_perturbation<S: Scalar>(
    inst: &PottsInstance<S>,
    p: &WeightPerturbation,
) -> Result<PottsInstance<S>> {
    if p.factors.len() != inst.num_edges() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for {} edges",
            p.factors.len(),
            inst.num_edges()
        )));
    }
    // Re-validate in case the fields were edited after construction.
    WeightPerturbation::new(p.beta, p.gamma, p.factors.clone())?;
    let weights = inst
        .edges()
        .iter()
        .zip(&p.factors)
        .map(|(e, f)| e.weight.clone() * S::from_f64(*f))
        .collect();
    inst.with_weights(weights)
}

/// An additive perturbation `psi` of the node costs on the boundary of a
/// block, bounded entrywise by `|epsilon|`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostPerturbation<S = f64> {
    pub block: Vec<usize>,
    /// `(node, psi row)` for boundary nodes of `block`.
    pub psi: Vec<(usize, Vec<S>)>,
    /// `(node, epsilon row)` bounds, same keys as `psi`.
    pub epsilon: Vec<(usize, Vec<S>)>,
}

/// `theta'_u(i) = theta_u(i) + psi_u(i)` on the boundary of the block,
/// unchanged elsewhere.
pub fn apply_cost_perturbation<S: Scalar>(
    inst: &PottsInstance<S>,
    cp: &CostPerturbation<S>,
) -> Result<PottsInstance<S>> {
    let k = inst.num_labels();
    let (boundary_nodes, _) = boundary(inst, &cp.block)?;
    let on_boundary: BTreeSet<usize> = boundary_nodes.iter().copied().collect();
    let mut costs = inst.costs_flat().to_vec();
    for (u, psi) in &cp.psi {
        if psi.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "psi row for node {u} has {} entries",
                psi.len()
            )));
        }
        let all_zero = psi.iter().all(|v| v.is_zero());
        if !on_boundary.contains(u) {
            if all_zero {
                continue;
            }
            return Err(Error::InvalidPerturbation(format!(
                "node {u} is not on the boundary of the block"
            )));
        }
        let eps = cp
            .epsilon
            .iter()
            .find(|(v, _)| v == u)
            .map(|(_, row)| row)
            .ok_or_else(|| Error::InvalidPerturbation(format!("no bound for node {u}")))?;
        if eps.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "epsilon row for node {u} has {} entries",
                eps.len()
            )));
        }
        for i in 0..k {
            if psi[i].abs() > eps[i].abs() {
                return Err(Error::InvalidPerturbation(format!(
                    "|psi_{u}({i})| = {} exceeds bound {}",
                    psi[i].abs(),
                    eps[i].abs()
                )));
            }
            costs[u * k + i] = costs[u * k + i].add(&psi[i]);
        }
    }
    Ok(inst.with_costs(costs))
}

/// Sorted, deduplicated node subset; errors on out-of-range nodes.
pub(crate) fn normalize_subset<S: Scalar>(
    inst: &PottsInstance<S>,
    nodes: &[usize],
) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = nodes.iter().copied().collect();
    if let Some(&bad) = set.iter().find(|&&u| u >= inst.num_nodes()) {
        return Err(Error::DimensionMismatch(format!(
            "node {bad} out of range for {} nodes",
            inst.num_nodes()
        )));
    }
    Ok(set.into_iter().collect())
}

pub(crate) fn membership(n: usize, nodes: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &u in nodes {
        m[u] = true;
    }
    m
}

/// Boundary nodes of `nodes` (members with a neighbor outside) and the
/// indices of edges with exactly one endpoint inside.
pub fn boundary<S: Scalar>(
    inst: &PottsInstance<S>,
    nodes: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let nodes = normalize_subset(inst, nodes)?;
    let inside = membership(inst.num_nodes(), &nodes);
    let mut bnodes = Vec::new();
    for &u in &nodes {
        if inst.neighbors(u).iter().any(|&(v, _)| !inside[v]) {
            bnodes.push(u);
        }
    }
    let bedges = inst
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| inside[e.u] != inside[e.v])
        .map(|(idx, _)| idx)
        .collect();
    Ok((bnodes, bedges))
}

/// Sub-instance induced by a block with reparametrized boundary costs.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedInstance<S = f64> {
    pub instance: PottsInstance<S>,
    /// Global id of each local node (sorted ascending).
    pub nodes: Vec<usize>,
}

impl<S: Scalar> RestrictedInstance<S> {
    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }
}

/// `((S, E_S), theta^delta|_S, w|_{E_S}, L)` where
/// `theta^delta_u(i) = theta_u(i) + sum_v delta_uv(i)` over boundary edges.
///
/// `delta` must be keyed exactly on the ordered pairs of the boundary edges
/// of `nodes`.
pub fn restricted_instance<S: Scalar>(
    inst: &PottsInstance<S>,
    nodes: &[usize],
    delta: &BlockDualSolution<S>,
) -> Result<RestrictedInstance<S>> {
    let nodes = normalize_subset(inst, nodes)?;
    let (_, bedges) = boundary(inst, &nodes)?;
    delta.check_keys(inst, &bedges)?;
    let inside = membership(inst.num_nodes(), &nodes);
    Ok(restrict_unchecked(inst, &nodes, &inside, |u, i| {
        let mut shift = S::zero();
        for &(v, _) in inst.neighbors(u) {
            if !inside[v] {
                if let Some(row) = delta.get(u, v) {
                    shift += row[i].clone();
                }
            }
        }
        shift
    }))
}

/// Builds the induced sub-instance with costs shifted by `shift(u, i)`.
pub(crate) fn restrict_unchecked<S: Scalar>(
    inst: &PottsInstance<S>,
    nodes: &[usize],
    inside: &[bool],
    shift: impl Fn(usize, usize) -> S,
) -> RestrictedInstance<S> {
    let k = inst.num_labels();
    let mut local = vec![usize::MAX; inst.num_nodes()];
    for (idx, &u) in nodes.iter().enumerate() {
        local[u] = idx;
    }
    let mut costs = Vec::with_capacity(nodes.len() * k);
    for &u in nodes {
        let on_boundary = inst.neighbors(u).iter().any(|&(v, _)| !inside[v]);
        for i in 0..k {
            if on_boundary {
                costs.push(inst.cost(u, i).add(&shift(u, i)));
            } else {
                costs.push(inst.cost(u, i).clone());
            }
        }
    }
    let edges = inst
        .edges()
        .iter()
        .filter(|e| inside[e.u] && inside[e.v])
        .map(|e| Edge {
            u: local[e.u],
            v: local[e.v],
            weight: e.weight.clone(),
        })
        .collect();
    RestrictedInstance {
        instance: PottsInstance::from_parts(nodes.len(), k, costs, edges),
        nodes: nodes.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders;

    fn fin(v: f64) -> Cost {
        Cost::Finite(v)
    }

    fn path3() -> PottsInstance {
        PottsInstance::new(
            2,
            vec![
                vec![fin(0.0), fin(1.0)],
                vec![fin(0.5), fin(0.0)],
                vec![fin(2.0), fin(0.0)],
            ],
            vec![(0, 1, 1.0), (2, 1, 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_instances() {
        let c = || vec![fin(0.0), fin(1.0)];
        assert!(PottsInstance::new(2, vec![c(), c()], vec![(0, 1, -1.0)]).is_err());
        assert!(PottsInstance::new(2, vec![c(), c()], vec![(0, 0, 1.0)]).is_err());
        assert!(PottsInstance::new(2, vec![c(), c()], vec![(0, 2, 1.0)]).is_err());
        assert!(
            PottsInstance::new(2, vec![c(), c()], vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err()
        );
        assert!(PottsInstance::<f64>::new(
            2,
            vec![vec![Cost::Forbidden, Cost::Forbidden]],
            vec![]
        )
        .is_err());
        assert!(PottsInstance::new(3, vec![c()], vec![]).is_err());
    }

    #[test]
    fn edges_are_canonical() {
        let inst = path3();
        assert_eq!(inst.edge(1).u, 1);
        assert_eq!(inst.edge(1).v, 2);
        assert_eq!(inst.edge_index(2, 1), Some(1));
        assert_eq!(inst.edge_index(0, 2), None);
    }

    #[test]
    fn objective_counts_costs_and_cut_weights() {
        let inst = path3();
        let q = objective(&inst, &Labeling(vec![0, 1, 1])).unwrap();
        assert_eq!(q, fin(0.0 + 0.0 + 0.0 + 1.0));
        let q = objective(&inst, &Labeling(vec![0, 0, 1])).unwrap();
        assert_eq!(q, fin(0.5 + 3.0));
        assert!(objective(&inst, &Labeling(vec![0, 1])).is_err());
        assert!(objective(&inst, &Labeling(vec![0, 1, 2])).is_err());
    }

    #[test]
    fn objective_single_node_is_its_cost() {
        let inst = PottsInstance::new(3, vec![vec![fin(3.0), fin(1.0), fin(2.0)]], vec![]).unwrap();
        for i in 0..3 {
            assert_eq!(
                objective(&inst, &Labeling(vec![i])).unwrap(),
                inst.cost(0, i).clone()
            );
        }
    }

    #[test]
    fn forbidden_label_makes_objective_forbidden() {
        let inst = PottsInstance::new(2, vec![vec![Cost::Forbidden, fin(1.0)]], vec![]).unwrap();
        let q = objective(&inst, &Labeling(vec![0])).unwrap();
        assert!(q.is_forbidden());
        assert!(q > fin(1e300));
    }

    #[test]
    fn triangle_objective_matches_golden_value() {
        let (inst, g) = builders::counterexample_triangle(0.1).unwrap();
        assert_eq!(objective(&inst, &g).unwrap(), fin(2.0));
    }

    #[test]
    fn combined_objective_matches_golden_value() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let q = objective(&ex.instance, &ex.labeling).unwrap();
        assert!((q.to_f64() - 1.02).abs() < 1e-12);
    }

    #[test]
    fn weight_perturbation_identity_and_halving() {
        let inst = path3();
        let id = WeightPerturbation::identity(2);
        assert_eq!(apply_weight_perturbation(&inst, &id).unwrap(), inst);
        let half = WeightPerturbation::new(2.0, 1.0, vec![0.5, 0.5]).unwrap();
        let p = apply_weight_perturbation(&inst, &half).unwrap();
        assert_eq!(p.edge(0).weight, 0.5);
        assert_eq!(p.edge(1).weight, 1.5);
        assert_eq!(p.node_costs(2), inst.node_costs(2));
    }

    #[test]
    fn weight_perturbation_range_is_enforced() {
        assert!(WeightPerturbation::new(2.0, 1.0, vec![0.4]).is_err());
        assert!(WeightPerturbation::new(2.0, 1.0, vec![1.1]).is_err());
        assert!(WeightPerturbation::new(0.5, 1.0, vec![1.0]).is_err());
        let mut p = WeightPerturbation::identity(2);
        p.factors[0] = 3.0;
        assert!(apply_weight_perturbation(&path3(), &p).is_err());
    }

    #[test]
    fn boundary_of_whole_set_is_empty() {
        let inst = path3();
        let (b, e) = boundary(&inst, &[0, 1, 2]).unwrap();
        assert!(b.is_empty() && e.is_empty());
    }

    #[test]
    fn boundary_of_grid_top_row() {
        let inst = builders::random_grid(3, 3, 2, (0.0, 1.0), (1.0, 1.0), 7).unwrap();
        let (b, e) = boundary(&inst, &[0, 1, 2]).unwrap();
        assert_eq!(b, vec![0, 1, 2]);
        assert_eq!(e.len(), 3);
        for idx in e {
            let edge = inst.edge(idx);
            assert_eq!(edge.v, edge.u + 3);
        }
    }

    #[test]
    fn boundary_of_combined_block() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let (b, e) = boundary(&ex.instance, &[0, 1, 2]).unwrap();
        assert_eq!(b, vec![0, 2]);
        let pairs: Vec<(usize, usize)> = e
            .iter()
            .map(|&i| (ex.instance.edge(i).u, ex.instance.edge(i).v))
            .collect();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.contains(&(0, 3)));
        assert!(pairs.contains(&(2, 4)));
    }

    #[test]
    fn cost_perturbation_zero_and_empty_boundary() {
        let inst = path3();
        let cp = CostPerturbation {
            block: vec![0, 1],
            psi: vec![(1, vec![0.0, 0.0])],
            epsilon: vec![(1, vec![0.0, 0.0])],
        };
        assert_eq!(apply_cost_perturbation(&inst, &cp).unwrap(), inst);
        let cp = CostPerturbation {
            block: vec![0, 1, 2],
            psi: vec![],
            epsilon: vec![],
        };
        assert_eq!(apply_cost_perturbation(&inst, &cp).unwrap(), inst);
    }

    #[test]
    fn cost_perturbation_bounds_and_support() {
        let inst = path3();
        let over = CostPerturbation {
            block: vec![0, 1],
            psi: vec![(1, vec![0.3, 0.0])],
            epsilon: vec![(1, vec![0.2, 0.0])],
        };
        assert!(apply_cost_perturbation(&inst, &over).is_err());
        let interior = CostPerturbation {
            block: vec![0, 1],
            psi: vec![(0, vec![0.1, 0.0])],
            epsilon: vec![(0, vec![1.0, 1.0])],
        };
        assert!(apply_cost_perturbation(&inst, &interior).is_err());
        let ok = CostPerturbation {
            block: vec![0, 1],
            psi: vec![(1, vec![-0.2, 0.1])],
            epsilon: vec![(1, vec![0.2, -0.5])],
        };
        let p = apply_cost_perturbation(&inst, &ok).unwrap();
        assert_eq!(p.node_costs(1), &[fin(0.3), fin(0.1)]);
        assert_eq!(p.node_costs(0), inst.node_costs(0));
    }

    #[test]
    fn combined_cost_perturbation_reproduces_reparametrized_table() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let eps = 0.01;
        let s_side = CostPerturbation {
            block: vec![0, 1, 2],
            psi: vec![(0, vec![eps, 0.0, 0.0]), (2, vec![eps, 0.0, 0.0])],
            epsilon: vec![(0, vec![eps, 0.0, 0.0]), (2, vec![eps, 0.0, 0.0])],
        };
        let t_side = CostPerturbation {
            block: vec![3, 4, 5],
            psi: vec![(3, vec![-eps, 0.0, 0.0]), (4, vec![-eps, 0.0, 0.0])],
            epsilon: vec![(3, vec![eps, 0.0, 0.0]), (4, vec![eps, 0.0, 0.0])],
        };
        let p = apply_cost_perturbation(&ex.instance, &s_side).unwrap();
        let p = apply_cost_perturbation(&p, &t_side).unwrap();
        // Labels 1-2 of the reparametrized table (u, w, x, y).
        let expect = [
            (0, [eps, 0.0]),
            (2, [eps, 0.0]),
            (3, [2.0 - eps, 0.0]),
            (4, [2.0 - eps, 0.0]),
        ];
        for (u, row) in expect {
            for i in 0..2 {
                assert!((p.cost(u, i).to_f64() - row[i]).abs() < 1e-15, "node {u} label {i}");
            }
        }
        assert_eq!(p.node_costs(5), ex.instance.node_costs(5));
    }

    #[test]
    fn restricted_instance_with_zero_delta_on_whole_set() {
        let inst = path3();
        let delta = BlockDualSolution::zeros(&inst, &[]);
        let r = restricted_instance(&inst, &[0, 1, 2], &delta).unwrap();
        assert_eq!(r.instance, inst);
        assert_eq!(r.nodes, vec![0, 1, 2]);
    }

    #[test]
    fn restricted_instance_rejects_wrong_keys() {
        let inst = path3();
        let delta = BlockDualSolution::zeros(&inst, &[]);
        assert!(restricted_instance(&inst, &[0, 1], &delta).is_err());
        let (_, be) = boundary(&inst, &[0]).unwrap();
        let delta = BlockDualSolution::zeros(&inst, &be);
        assert!(restricted_instance(&inst, &[0, 1], &delta).is_err());
        assert!(restricted_instance(&inst, &[0], &delta).is_ok());
    }

    #[test]
    fn combined_restriction_to_block_s() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let r = restricted_instance(&ex.instance, &[0, 1, 2], &ex.delta.for_block(&ex.instance, &[0, 1, 2]).unwrap())
            .unwrap();
        assert_eq!(r.instance.num_nodes(), 3);
        assert_eq!(r.instance.num_edges(), 3);
        let eps = 0.01;
        assert_eq!(r.instance.cost(0, 0), &fin(eps));
        assert_eq!(r.instance.cost(0, 1), &fin(0.0));
        assert_eq!(r.instance.cost(2, 0), &fin(eps));
        assert_eq!(r.instance.node_costs(1), ex.instance.node_costs(1));
    }
}
