//! Pairwise LP relaxation, dual extraction and exact MAP search.
//!
//! Two equivalent relaxations are available. The explicit local polytope
//! has edge marginals `mu_uv(i, j)` and the marginalization rows. The
//! compact form uses the Potts structure: with `d_e(i) >= x_u(i) - x_v(i)`,
//! `w sum_i d_e(i)` equals the optimal edge term `w (1 - sum_i mu(i, i))`.
//! Both give the same optimum; the compact one has `O(k)` instead of
//! `O(k^2)` variables per edge and is the default.

use crate::dual_decomp::DualSolution;
use crate::error::{Error, Result};
use crate::lp::simplex::{self, Basis, LpProblem, LpStatus, SimplexOptions, VarStatus};
use crate::model::{objective_unchecked, Cost, Labeling, PottsInstance};
use crate::numeric::{Scalar, DEFAULT_TOL};

/// Node and edge marginals of an LP optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalSolution<S = f64> {
    num_nodes: usize,
    num_labels: usize,
    node: Vec<S>,
    // k * k per edge, row i for the edge's first endpoint
    edge: Vec<Vec<S>>,
    pub objective: S,
}

impl<S: Scalar> PrimalSolution<S> {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn node_marginal(&self, u: usize, i: usize) -> &S {
        &self.node[u * self.num_labels + i]
    }

    pub fn node_marginals(&self, u: usize) -> &[S] {
        &self.node[u * self.num_labels..(u + 1) * self.num_labels]
    }

    pub fn num_edges(&self) -> usize {
        self.edge.len()
    }

    /// `mu_uv(i, j)` of edge `idx`, `i` labelling the smaller endpoint.
    pub fn edge_marginal(&self, idx: usize, i: usize, j: usize) -> &S {
        &self.edge[idx][i * self.num_labels + j]
    }

    /// Largest-marginal label at every node.
    pub fn rounded(&self) -> Labeling {
        Labeling::new(
            (0..self.num_nodes)
                .map(|u| argmax(self.node_marginals(u)))
                .collect(),
        )
    }

    pub fn is_integral(&self, tol: f64) -> bool {
        (0..self.num_nodes).all(|u| {
            self.node_marginals(u)
                .iter()
                .all(|v| is_01(v, tol))
        })
    }

    pub fn to_f64(&self) -> PrimalSolution<f64> {
        PrimalSolution {
            num_nodes: self.num_nodes,
            num_labels: self.num_labels,
            node: self.node.iter().map(|v| v.to_f64()).collect(),
            edge: self
                .edge
                .iter()
                .map(|r| r.iter().map(|v| v.to_f64()).collect())
                .collect(),
            objective: self.objective.to_f64(),
        }
    }

    /// Builds a solution from explicit marginals (dimensions are checked).
    pub fn from_parts(
        num_nodes: usize,
        num_labels: usize,
        node: Vec<S>,
        edge: Vec<Vec<S>>,
        objective: S,
    ) -> Result<Self> {
        if node.len() != num_nodes * num_labels
            || edge.iter().any(|r| r.len() != num_labels * num_labels)
        {
            return Err(Error::DimensionMismatch("marginal table sizes".into()));
        }
        Ok(PrimalSolution {
            num_nodes,
            num_labels,
            node,
            edge,
            objective,
        })
    }
}

fn is_01<S: Scalar>(v: &S, tol: f64) -> bool {
    if S::EXACT {
        v.is_zero() || v.is_one()
    } else {
        let f = v.to_f64();
        f.abs() <= tol || (f - 1.0).abs() <= tol
    }
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Formulation {
    #[default]
    Compact,
    LocalPolytope,
}

#[derive(Clone, Debug, Default)]
pub struct LpOptions {
    pub formulation: Formulation,
    /// Labeling used to crash the starting basis (compact form only);
    /// iterated conditional modes supplies one when absent.
    pub start: Option<Labeling>,
    pub simplex: Option<SimplexOptions>,
}

/// Solves the pairwise LP with default options.
pub fn solve_lp<S: Scalar>(inst: &PottsInstance<S>) -> Result<(PrimalSolution<S>, DualSolution<S>)> {
    solve_lp_with(inst, &LpOptions::default())
}

/// Solves the pairwise LP. `Forbidden` costs are replaced by
/// [`PottsInstance::default_big`].
pub fn solve_lp_with<S: Scalar>(
    inst: &PottsInstance<S>,
    opts: &LpOptions,
) -> Result<(PrimalSolution<S>, DualSolution<S>)> {
    let simplex_opts = opts.simplex.clone().unwrap_or_default();
    match opts.formulation {
        Formulation::Compact => {
            let model = compact_model(inst);
            let start = match &opts.start {
                Some(f) => {
                    f.validate(inst)?;
                    f.clone()
                }
                None => icm(inst, None),
            };
            let basis = model.crash_basis(inst, start.as_slice());
            let res = simplex::solve(&model.lp, Some(&basis), &simplex_opts).map_err(lp_error)?;
            Ok(model.extract(inst, &res))
        }
        Formulation::LocalPolytope => solve_local_polytope(inst, &inst.default_big(), &simplex_opts),
    }
}

fn lp_error(s: LpStatus) -> Error {
    Error::Lp(match s {
        LpStatus::Infeasible => "LP reported infeasible".into(),
        LpStatus::Unbounded => "LP reported unbounded".into(),
        LpStatus::IterationLimit => "simplex iteration limit reached".into(),
    })
}

/// Compact Potts LP over a subset of edges:
/// rows `sum_i x_u(i) = 1` then `d_e(i) - x_u(i) + x_v(i) >= 0`.
pub(crate) struct CompactLp<S> {
    pub lp: LpProblem<S>,
    pub n: usize,
    pub k: usize,
    pub edges: Vec<usize>,
}

impl<S: Scalar> CompactLp<S> {
    pub fn build(
        inst: &PottsInstance<S>,
        node_obj: impl Fn(usize, usize) -> S,
        edge_obj: impl Fn(usize) -> S,
        edges: &[usize],
    ) -> Self {
        let n = inst.num_nodes();
        let k = inst.num_labels();
        let mut lp = LpProblem::new();
        for u in 0..n {
            for i in 0..k {
                lp.add_col(node_obj(u, i), Some(S::zero()), None);
            }
        }
        for &e in edges {
            let c = edge_obj(e);
            for _ in 0..k {
                lp.add_col(c.clone(), Some(S::zero()), None);
            }
        }
        for u in 0..n {
            let entries: Vec<(usize, S)> = (0..k).map(|i| (u * k + i, S::one())).collect();
            lp.add_row(&entries, Some(S::one()), Some(S::one()));
        }
        for (pos, &e) in edges.iter().enumerate() {
            let edge = inst.edge(e);
            for i in 0..k {
                lp.add_row(
                    &[
                        (n * k + pos * k + i, S::one()),
                        (edge.u * k + i, -S::one()),
                        (edge.v * k + i, S::one()),
                    ],
                    Some(S::zero()),
                    None,
                );
            }
        }
        CompactLp {
            lp,
            n,
            k,
            edges: edges.to_vec(),
        }
    }

    pub fn x_col(&self, u: usize, i: usize) -> usize {
        u * self.k + i
    }

    pub fn d_col(&self, pos: usize, i: usize) -> usize {
        self.n * self.k + pos * self.k + i
    }

    /// Triangular basis whose vertex is the labeling `f`; rows added after
    /// the Potts rows keep their logicals basic.
    pub fn crash_basis(&self, inst: &PottsInstance<S>, f: &[usize]) -> Basis {
        let (n, k) = (self.n, self.k);
        let ncols = self.lp.num_cols();
        let mut status = vec![VarStatus::AtLower; ncols + self.lp.num_rows()];
        for u in 0..n {
            status[self.x_col(u, f[u])] = VarStatus::Basic;
        }
        for (pos, &e) in self.edges.iter().enumerate() {
            let edge = inst.edge(e);
            for i in 0..k {
                let row = n + pos * k + i;
                if f[edge.u] == i && f[edge.v] != i {
                    status[self.d_col(pos, i)] = VarStatus::Basic;
                } else {
                    status[ncols + row] = VarStatus::Basic;
                }
            }
        }
        for row in n + self.edges.len() * k..self.lp.num_rows() {
            status[ncols + row] = VarStatus::Basic;
        }
        Basis { status }
    }

    pub fn labeling_if_integral(&self, x: &[S]) -> Option<Vec<usize>> {
        let mut f = Vec::with_capacity(self.n);
        for u in 0..self.n {
            let row = &x[u * self.k..(u + 1) * self.k];
            if !row.iter().all(|v| is_01(v, DEFAULT_TOL)) {
                return None;
            }
            f.push(argmax(row));
        }
        Some(f)
    }

    fn extract(&self, inst: &PottsInstance<S>, res: &simplex::LpResult<S>) -> (PrimalSolution<S>, DualSolution<S>) {
        let (n, k) = (self.n, self.k);
        let mut node: Vec<S> = res.x[..n * k].to_vec();
        if !S::EXACT {
            for v in node.iter_mut() {
                if v.is_negligible() || *v < S::zero() {
                    *v = S::zero();
                }
            }
        }
        let edge = inst
            .edges()
            .iter()
            .map(|e| edge_marginals(&node[e.u * k..(e.u + 1) * k], &node[e.v * k..(e.v + 1) * k]))
            .collect();
        let primal = PrimalSolution {
            num_nodes: n,
            num_labels: k,
            node,
            edge,
            objective: res.objective.clone(),
        };
        let rows: Vec<(Vec<S>, Vec<S>)> = (0..self.edges.len())
            .map(|pos| {
                let pi: Vec<S> = (0..k).map(|i| res.duals[n + pos * k + i].clone()).collect();
                let neg = pi.iter().map(|v| -v.clone()).collect();
                (pi, neg)
            })
            .collect();
        let dual = DualSolution::from_rows(inst, rows).expect("shape");
        (primal, dual)
    }
}

/// Edge marginals consistent with two node marginals that maximize the
/// diagonal mass: `min(p_i, q_i)` on the diagonal, the remainder spread
/// proportionally off the diagonal.
fn edge_marginals<S: Scalar>(p: &[S], q: &[S]) -> Vec<S> {
    let k = p.len();
    let mut mu = vec![S::zero(); k * k];
    let mut rp = Vec::with_capacity(k);
    let mut rq = Vec::with_capacity(k);
    let mut total = S::zero();
    for i in 0..k {
        let m = S::min_of(p[i].clone(), q[i].clone());
        mu[i * k + i] = m.clone();
        let a = p[i].clone() - m.clone();
        rq.push(q[i].clone() - m);
        total += a.clone();
        rp.push(a);
    }
    if total > S::drop_tol() {
        for i in 0..k {
            if rp[i].is_zero() {
                continue;
            }
            for j in 0..k {
                if i != j && !rq[j].is_zero() {
                    mu[i * k + j] = rp[i].clone() * rq[j].clone() / total.clone();
                }
            }
        }
    }
    mu
}

fn solve_local_polytope<S: Scalar>(
    inst: &PottsInstance<S>,
    big: &S,
    opts: &SimplexOptions,
) -> Result<(PrimalSolution<S>, DualSolution<S>)> {
    let n = inst.num_nodes();
    let k = inst.num_labels();
    let mut lp = LpProblem::new();
    for u in 0..n {
        for i in 0..k {
            lp.add_col(inst.cost(u, i).or_big(big), Some(S::zero()), None);
        }
    }
    let mu0 = n * k;
    for e in inst.edges() {
        for i in 0..k {
            for j in 0..k {
                let c = if i == j { S::zero() } else { e.weight.clone() };
                lp.add_col(c, Some(S::zero()), None);
            }
        }
    }
    for u in 0..n {
        let entries: Vec<(usize, S)> = (0..k).map(|i| (u * k + i, S::one())).collect();
        lp.add_row(&entries, Some(S::one()), Some(S::one()));
    }
    for (idx, e) in inst.edges().iter().enumerate() {
        let base = mu0 + idx * k * k;
        for i in 0..k {
            let mut entries: Vec<(usize, S)> = (0..k).map(|j| (base + i * k + j, S::one())).collect();
            entries.push((e.u * k + i, -S::one()));
            lp.add_row(&entries, Some(S::zero()), Some(S::zero()));
        }
        for j in 0..k {
            let mut entries: Vec<(usize, S)> = (0..k).map(|i| (base + i * k + j, S::one())).collect();
            entries.push((e.v * k + j, -S::one()));
            lp.add_row(&entries, Some(S::zero()), Some(S::zero()));
        }
    }
    let res = simplex::solve(&lp, None, opts).map_err(lp_error)?;
    let node: Vec<S> = res.x[..n * k].to_vec();
    let edge = (0..inst.num_edges())
        .map(|idx| res.x[mu0 + idx * k * k..mu0 + (idx + 1) * k * k].to_vec())
        .collect();
    let rows = (0..inst.num_edges())
        .map(|idx| {
            let r0 = n + idx * 2 * k;
            (
                res.duals[r0..r0 + k].to_vec(),
                res.duals[r0 + k..r0 + 2 * k].to_vec(),
            )
        })
        .collect();
    let primal = PrimalSolution {
        num_nodes: n,
        num_labels: k,
        node,
        edge,
        objective: res.objective,
    };
    Ok((primal, DualSolution::from_rows(inst, rows)?))
}

/// Iterated conditional modes from the per-node cheapest labels (or `init`).
pub fn icm<S: Scalar>(inst: &PottsInstance<S>, init: Option<&Labeling>) -> Labeling {
    let n = inst.num_nodes();
    let k = inst.num_labels();
    let mut f: Vec<usize> = match init {
        Some(l) => l.as_slice().to_vec(),
        None => (0..n)
            .map(|u| {
                let mut best = 0;
                for i in 1..k {
                    if inst.cost(u, i) < inst.cost(u, best) {
                        best = i;
                    }
                }
                best
            })
            .collect(),
    };
    for _ in 0..50 {
        let mut changed = false;
        for u in 0..n {
            let local = |i: usize| -> Cost<S> {
                let mut cut = S::zero();
                for &(v, idx) in inst.neighbors(u) {
                    if f[v] != i {
                        cut += inst.edge(idx).weight.clone();
                    }
                }
                inst.cost(u, i).add(&cut)
            };
            let mut best = f[u];
            let mut best_val = local(best);
            for i in 0..k {
                let v = local(i);
                if v < best_val {
                    best = i;
                    best_val = v;
                }
            }
            if best != f[u] {
                f[u] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Labeling::new(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Persistency {
    IntegralMatch,
    IntegralMismatch,
    Fractional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistencyMask {
    pub flags: Vec<Persistency>,
    /// Share of nodes flagged `IntegralMatch`.
    pub fraction: f64,
}

impl PersistencyMask {
    pub fn fractional_nodes(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f == Persistency::Fractional)
            .map(|(u, _)| u)
            .collect()
    }
}

/// Classifies each node: integral (some `x_u(i) >= 1 - tol`) and agreeing
/// with `g`, integral and disagreeing, or fractional.
pub fn persistency_mask<S: Scalar>(x: &PrimalSolution<S>, g: &Labeling, tol: f64) -> Result<PersistencyMask> {
    if g.len() != x.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "labeling has {} nodes, solution {}",
            g.len(),
            x.num_nodes()
        )));
    }
    let flags: Vec<Persistency> = (0..x.num_nodes())
        .map(|u| {
            let row = x.node_marginals(u);
            let top = argmax(row);
            if row[top].to_f64() >= 1.0 - tol {
                if top == g.get(u) {
                    Persistency::IntegralMatch
                } else {
                    Persistency::IntegralMismatch
                }
            } else {
                Persistency::Fractional
            }
        })
        .collect();
    let matched = flags.iter().filter(|f| **f == Persistency::IntegralMatch).count();
    let fraction = if flags.is_empty() {
        1.0
    } else {
        matched as f64 / flags.len() as f64
    };
    Ok(PersistencyMask { flags, fraction })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Enumeration when `k^n` is at most the enumeration limit, otherwise
    /// branch-and-bound.
    #[default]
    Auto,
    BranchAndBound,
    Exhaustive,
}

#[derive(Clone, Debug)]
pub struct MapOptions {
    pub strategy: SearchStrategy,
    pub enumeration_limit: f64,
    pub node_limit: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            strategy: SearchStrategy::Auto,
            enumeration_limit: 1e6,
            node_limit: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSolution<S = f64> {
    pub labeling: Labeling,
    pub value: S,
    pub exhaustive: bool,
    pub nodes: usize,
}

/// Exact MAP labeling with default options.
pub fn solve_map<S: Scalar>(inst: &PottsInstance<S>) -> Result<Labeling> {
    Ok(solve_map_with(inst, &MapOptions::default())?.labeling)
}

/// Exact MAP labeling. Enumeration returns the lexicographically smallest
/// minimizer; branch-and-bound returns some minimizer.
pub fn solve_map_with<S: Scalar>(inst: &PottsInstance<S>, opts: &MapOptions) -> Result<MapSolution<S>> {
    if use_enumeration(inst, opts)? {
        let (f, value) = enumerate_minimum(inst);
        return Ok(MapSolution {
            labeling: f,
            value,
            exhaustive: true,
            nodes: 0,
        });
    }
    let model = compact_model(inst);
    let start = icm(inst, None);
    let basis = model.crash_basis(inst, start.as_slice());
    map_branch_and_bound(inst, model, basis, Some(start), opts.node_limit)
}

fn use_enumeration<S: Scalar>(inst: &PottsInstance<S>, opts: &MapOptions) -> Result<bool> {
    let count = inst.labeling_count();
    Ok(match opts.strategy {
        SearchStrategy::Exhaustive => {
            if count > opts.enumeration_limit {
                return Err(Error::TooLarge {
                    labelings: count,
                    limit: opts.enumeration_limit,
                });
            }
            true
        }
        SearchStrategy::Auto => count <= opts.enumeration_limit,
        SearchStrategy::BranchAndBound => false,
    })
}

fn compact_model<S: Scalar>(inst: &PottsInstance<S>) -> CompactLp<S> {
    let big = inst.default_big();
    let all: Vec<usize> = (0..inst.num_edges()).collect();
    CompactLp::build(
        inst,
        |u, i| inst.cost(u, i).or_big(&big),
        |e| inst.edge(e).weight.clone(),
        &all,
    )
}

/// The LP relaxation and an exact MAP labeling from a single LP solve. An
/// integral LP optimum is returned as the labeling; otherwise the search
/// starts from the optimal basis. Same results as [`solve_lp`] followed by
/// [`solve_map_with`], up to the choice among tied minimizers.
pub fn solve_lp_and_map<S: Scalar>(
    inst: &PottsInstance<S>,
    opts: &MapOptions,
) -> Result<(PrimalSolution<S>, DualSolution<S>, MapSolution<S>)> {
    if use_enumeration(inst, opts)? {
        let (x, eta) = solve_lp(inst)?;
        return Ok((x, eta, solve_map_with(inst, opts)?));
    }
    let model = compact_model(inst);
    let start = icm(inst, None);
    let basis = model.crash_basis(inst, start.as_slice());
    let res = simplex::solve(&model.lp, Some(&basis), &SimplexOptions::default()).map_err(lp_error)?;
    let (x, eta) = model.extract(inst, &res);
    if let Some(f) = model.labeling_if_integral(&res.x) {
        if let Cost::Finite(value) = objective_unchecked(inst, &f) {
            let map = MapSolution {
                labeling: Labeling::new(f),
                value,
                exhaustive: false,
                nodes: 1,
            };
            return Ok((x, eta, map));
        }
    }
    let map = map_branch_and_bound(inst, model, res.basis, Some(start), opts.node_limit)?;
    Ok((x, eta, map))
}

/// Incremental odometer enumeration, last node fastest. Candidates within a
/// rounding margin of the incumbent are re-evaluated from scratch.
fn enumerate_minimum<S: Scalar>(inst: &PottsInstance<S>) -> (Labeling, S) {
    let n = inst.num_nodes();
    let k = inst.num_labels();
    let mut f = vec![0usize; n];
    let mut forbidden = 0usize;
    let mut sum = S::zero();
    for u in 0..n {
        match inst.cost(u, 0) {
            Cost::Finite(v) => sum += v.clone(),
            Cost::Forbidden => forbidden += 1,
        }
    }
    let margin = if S::EXACT {
        S::zero()
    } else {
        inst.data_scale() * S::from_f64(1e-9 * (n + inst.num_edges() + 1) as f64)
    };
    let mut best: Option<(Vec<usize>, S)> = None;
    loop {
        if forbidden == 0 {
            let better = match &best {
                None => true,
                Some((_, b)) => sum < b.clone() + margin.clone(),
            };
            if better {
                let fresh = match objective_unchecked(inst, &f) {
                    Cost::Finite(v) => v,
                    Cost::Forbidden => unreachable!("no forbidden label chosen"),
                };
                if best.as_ref().map_or(true, |(_, b)| fresh < *b) {
                    best = Some((f.clone(), fresh));
                }
            }
        }
        // advance the odometer
        let mut pos = n;
        loop {
            if pos == 0 {
                let (f, v) = best.expect("some labeling is admissible");
                return (Labeling::new(f), v);
            }
            pos -= 1;
            let old = f[pos];
            let new = if old + 1 == k { 0 } else { old + 1 };
            relabel(inst, &mut f, pos, new, &mut sum, &mut forbidden);
            if new != 0 {
                break;
            }
        }
    }
}

pub(crate) fn relabel<S: Scalar>(
    inst: &PottsInstance<S>,
    f: &mut [usize],
    u: usize,
    new: usize,
    sum: &mut S,
    forbidden: &mut usize,
) {
    let old = f[u];
    match inst.cost(u, old) {
        Cost::Finite(v) => *sum -= v.clone(),
        Cost::Forbidden => *forbidden -= 1,
    }
    match inst.cost(u, new) {
        Cost::Finite(v) => *sum += v.clone(),
        Cost::Forbidden => *forbidden += 1,
    }
    for &(v, idx) in inst.neighbors(u) {
        let was = old != f[v];
        let now = new != f[v];
        if was != now {
            let w = inst.edge(idx).weight.clone();
            if now {
                *sum += w;
            } else {
                *sum -= w;
            }
        }
    }
    f[u] = new;
}

fn map_branch_and_bound<S: Scalar>(
    inst: &PottsInstance<S>,
    mut model: CompactLp<S>,
    basis: Basis,
    start: Option<Labeling>,
    node_limit: usize,
) -> Result<MapSolution<S>> {
    let incumbent = start.and_then(|f| match objective_unchecked(inst, f.as_slice()) {
        Cost::Finite(v) => Some((f.0, v)),
        Cost::Forbidden => None,
    });
    let cfg = crate::bnb::BnbConfig {
        node_limit,
        pivot_limit: usize::MAX,
        integer_objective: false,
    };
    let out = crate::bnb::branch_and_bound(&mut model, Some(basis), incumbent, &cfg, |f| {
        match objective_unchecked(inst, f) {
            Cost::Finite(v) => crate::bnb::Eval::Value(v),
            Cost::Forbidden => crate::bnb::Eval::Reject,
        }
    })?;
    if !out.complete {
        return Err(Error::Lp(format!(
            "branch-and-bound stopped after {} nodes without proving optimality",
            out.nodes
        )));
    }
    let (f, value) = out.best.expect("an admissible labeling exists");
    Ok(MapSolution {
        labeling: Labeling::new(f),
        value,
        exhaustive: false,
        nodes: out.nodes,
    })
}
