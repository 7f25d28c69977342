//! Adversarial weight perturbations and the most-violating-labeling test for
//! `(beta, gamma)`-stability, on whole instances and on reparametrized blocks.

use crate::bnb::{branch_and_bound, BnbConfig, Eval};
use crate::dual_decomp::{edge_term_min, reparam_cost, BlockDecomposition, BlockDualSolution};
use crate::error::{Error, Result};
use crate::lp_solver::{relabel, solve_lp_with, CompactLp, LpOptions, SearchStrategy};
use crate::model::{
    membership, objective_unchecked, restrict_unchecked, restricted_instance, Cost, Factor, Labeling, PottsInstance,
};
use crate::numeric::Scalar;

/// Outcome of a stability check of `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityVerdict<S = f64> {
    pub stable: bool,
    /// A labeling `f != g` with `Q*(f) <= Q*(g)`, as far from `g` as possible.
    pub witness: Option<Labeling>,
    /// Disagreements between the witness and `g` (0 without a witness).
    pub hamming: usize,
    /// `Q*(g) - Q*(witness)`.
    pub margin: Option<S>,
    /// The witness beats `g` on the unperturbed objective, so `g` is not
    /// optimal for the instance.
    pub improves: bool,
    /// The search stopped at a limit without a witness. Reported unstable.
    pub inconclusive: bool,
}

impl<S: Scalar> StabilityVerdict<S> {
    fn certified() -> Self {
        StabilityVerdict {
            stable: true,
            witness: None,
            hamming: 0,
            margin: None,
            improves: false,
            inconclusive: false,
        }
    }

    pub fn to_f64(&self) -> StabilityVerdict<f64> {
        StabilityVerdict {
            stable: self.stable,
            witness: self.witness.clone(),
            hamming: self.hamming,
            margin: self.margin.as_ref().map(|m| m.to_f64()),
            improves: self.improves,
            inconclusive: self.inconclusive,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StabilityOptions {
    pub strategy: SearchStrategy,
    /// Enumerate when `k^n` is at most this (under `Auto`).
    pub enumeration_limit: f64,
    /// Branch-and-bound node budget; exhausting it gives an inconclusive
    /// verdict.
    pub node_limit: usize,
    /// Simplex iterations summed over the branch-and-bound nodes.
    pub pivot_limit: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            strategy: SearchStrategy::Auto,
            enumeration_limit: 1e6,
            node_limit: 500_000,
            pivot_limit: 30_000,
        }
    }
}

/// Worst-case weights for `g`: `gamma * w` on edges cut by `g`, `w / beta`
/// on the others.
///
/// An infinite `gamma` is only accepted when every cut edge has weight zero.
pub fn adversarial_weights<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
) -> Result<Vec<S>> {
    g.validate(inst)?;
    inst.edges()
        .iter()
        .map(|e| {
            let w = e.weight.clone();
            if g.get(e.u) != g.get(e.v) {
                match gamma {
                    Factor::Finite(c) => Ok(w * S::from_f64(c)),
                    Factor::Infinite if w.is_zero() => Ok(w),
                    Factor::Infinite => Err(Error::InvalidParameter(format!(
                        "gamma = inf on cut edge ({},{}) with positive weight",
                        e.u, e.v
                    ))),
                }
            } else {
                match beta {
                    Factor::Finite(b) => Ok(w / S::from_f64(b)),
                    Factor::Infinite => Ok(S::zero()),
                }
            }
        })
        .collect()
}

/// The instance with weights replaced by [`adversarial_weights`].
pub fn adversarial_perturbation<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
) -> Result<PottsInstance<S>> {
    inst.with_weights(adversarial_weights(inst, g, beta, gamma)?)
}

/// Stability check with default options.
pub fn check_stable<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
) -> Result<StabilityVerdict<S>> {
    check_stable_with(inst, g, beta, gamma, &StabilityOptions::default())
}

/// Looks for the labeling farthest from `g` in Hamming distance among those
/// with `Q*(f) <= Q*(g)` under the adversarial perturbation; `g` is stable
/// iff there is none besides `g` itself.
///
/// Float mode admits `Q*(f) <= Q*(g) + 1e-9 * scale`; rational mode is exact.
pub fn check_stable_with<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
    opts: &StabilityOptions,
) -> Result<StabilityVerdict<S>> {
    let star = adversarial_perturbation(inst, g, beta, gamma)?;
    let n = inst.num_nodes();
    if n == 0 {
        return Ok(StabilityVerdict::certified());
    }
    let gs = g.as_slice();
    let qg = finite(objective_unchecked(&star, gs))
        .ok_or_else(|| Error::InvalidParameter("g uses a forbidden label".into()))?;
    let slack = ilp_slack(&star, &qg);
    let count = inst.labeling_count();
    let enumerate = match opts.strategy {
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
    };
    let (witness, complete) = if enumerate {
        (enumerate_violation(&star, gs, &qg, &slack), true)
    } else {
        let groups = [(0..n).collect::<Vec<_>>()];
        max_disagreement(&star, gs, &groups, &slack, opts)?
    };
    Ok(verdict(inst, &star, gs, &qg, &slack, witness, complete))
}

/// Per-block verdict with the witness over the block's nodes (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVerdict<S = f64> {
    pub block: usize,
    pub nodes: Vec<usize>,
    pub verdict: StabilityVerdict<S>,
}

impl<S: Scalar> BlockVerdict<S> {
    /// Certifies the block for persistency: stable with solution `g|_S`.
    pub fn certified(&self) -> bool {
        self.verdict.stable
    }

    /// Global ids where the witness disagrees with `g`.
    pub fn disagreements(&self, g: &Labeling) -> Vec<usize> {
        match &self.verdict.witness {
            None => Vec::new(),
            Some(f) => self
                .nodes
                .iter()
                .zip(f.as_slice())
                .filter(|&(&u, &l)| g.get(u) != l)
                .map(|(&u, _)| u)
                .collect(),
        }
    }
}

/// Checks block `b` of `decomp` on its restricted instance with node costs
/// shifted by `delta` (keyed on at least the block's boundary edges),
/// against `g|_S`.
///
/// When `g|_S` is not optimal for the restricted instance the verdict is
/// unstable and flags `improves` if the witness found beats it.
#[allow(clippy::too_many_arguments)]
pub fn check_block_stable<S: Scalar>(
    inst: &PottsInstance<S>,
    decomp: &BlockDecomposition,
    b: usize,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
    delta: &BlockDualSolution<S>,
    opts: &StabilityOptions,
) -> Result<BlockVerdict<S>> {
    if b >= decomp.num_blocks() {
        return Err(Error::InvalidDecomposition(format!("no block {b}")));
    }
    g.validate(inst)?;
    let nodes = decomp.block(b).to_vec();
    let local = delta.for_block(inst, &nodes)?;
    let r = restricted_instance(inst, &nodes, &local)?;
    let verdict = check_stable_with(&r.instance, &g.restrict(&nodes), beta, gamma, opts)?;
    Ok(BlockVerdict {
        block: b,
        nodes,
        verdict,
    })
}

/// Exhaustive ground truth; see [`crate::oracle::enumerate_stability`].
pub fn brute_force_stable<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
) -> Result<StabilityVerdict<S>> {
    crate::oracle::enumerate_stability(inst, g, beta, gamma)
}

/// Verdict for `g` on `inst` given a witness found elsewhere.
pub(crate) fn assess<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
    witness: Option<Vec<usize>>,
    complete: bool,
) -> Result<StabilityVerdict<S>> {
    let star = adversarial_perturbation(inst, g, beta, gamma)?;
    if inst.num_nodes() == 0 {
        return Ok(StabilityVerdict::certified());
    }
    let qg = finite(objective_unchecked(&star, g.as_slice()))
        .ok_or_else(|| Error::InvalidParameter("g uses a forbidden label".into()))?;
    let slack = ilp_slack(&star, &qg);
    Ok(verdict(inst, &star, g.as_slice(), &qg, &slack, witness, complete))
}

/// Verdict of a check that could not run.
pub(crate) fn inconclusive<S: Scalar>() -> StabilityVerdict<S> {
    StabilityVerdict {
        stable: false,
        inconclusive: true,
        ..StabilityVerdict::certified()
    }
}

fn finite<S: Scalar>(c: Cost<S>) -> Option<S> {
    match c {
        Cost::Finite(v) => Some(v),
        Cost::Forbidden => None,
    }
}

/// Allowance on the objective constraint.
pub(crate) fn ilp_slack<S: Scalar>(inst: &PottsInstance<S>, reference: &S) -> S {
    if S::EXACT {
        S::zero()
    } else {
        S::max_of(inst.data_scale(), reference.abs()) * S::from_f64(1e-9)
    }
}

fn verdict<S: Scalar>(
    inst: &PottsInstance<S>,
    star: &PottsInstance<S>,
    g: &[usize],
    qg: &S,
    slack: &S,
    witness: Option<Vec<usize>>,
    complete: bool,
) -> StabilityVerdict<S> {
    let Some(f) = witness else {
        let mut v = StabilityVerdict::certified();
        if !complete {
            v.stable = false;
            v.inconclusive = true;
        }
        return v;
    };
    let hamming = f.iter().zip(g).filter(|(a, b)| a != b).count();
    let qf = finite(objective_unchecked(star, &f)).expect("witness avoids forbidden labels");
    let improves = match (
        finite(objective_unchecked(inst, &f)),
        finite(objective_unchecked(inst, g)),
    ) {
        (Some(a), Some(b)) => a < b - slack.clone(),
        _ => false,
    };
    StabilityVerdict {
        stable: false,
        witness: Some(Labeling::new(f)),
        hamming,
        margin: Some(qg.clone() - qf),
        improves,
        inconclusive: false,
    }
}

/// Odometer over all labelings, tracking `Q*` and agreement with `g`
/// incrementally. Ties in agreement keep the lexicographically first.
fn enumerate_violation<S: Scalar>(star: &PottsInstance<S>, g: &[usize], qg: &S, slack: &S) -> Option<Vec<usize>> {
    let n = star.num_nodes();
    let k = star.num_labels();
    let mut f = vec![0usize; n];
    let mut sum = S::zero();
    let mut forbidden = 0usize;
    for u in 0..n {
        match star.cost(u, 0) {
            Cost::Finite(v) => sum += v.clone(),
            Cost::Forbidden => forbidden += 1,
        }
    }
    let mut agree = g.iter().filter(|&&l| l == 0).count();
    let limit = qg.clone() + slack.clone();
    let margin = if S::EXACT {
        S::zero()
    } else {
        star.data_scale() * S::from_f64(1e-9 * (n + star.num_edges() + 1) as f64)
    };
    let mut best: Option<(Vec<usize>, usize)> = None;
    loop {
        if forbidden == 0
            && agree < n
            && best.as_ref().map_or(true, |(_, a)| agree < *a)
            && sum <= limit.clone() + margin.clone()
        {
            if let Some(exact) = finite(objective_unchecked(star, &f)) {
                if exact <= limit {
                    best = Some((f.clone(), agree));
                }
            }
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                return best.map(|(f, _)| f);
            }
            pos -= 1;
            let old = f[pos];
            let new = if old + 1 == k { 0 } else { old + 1 };
            if old == g[pos] {
                agree -= 1;
            }
            if new == g[pos] {
                agree += 1;
            }
            relabel(star, &mut f, pos, new, &mut sum, &mut forbidden);
            if new != 0 {
                break;
            }
        }
    }
}

/// Branch-and-bound over the ILP
/// `min sum_u x_u(g(u))` subject to one objective constraint per group,
/// `Q*_group(x) <= Q*_group(g) + slack`. Every edge must lie inside a group.
///
/// Groups settled by an LP dual certificate are fixed to `g` and left out of
/// the search.
///
/// Returns the best labeling other than `g` (if any) and whether the search
/// completed.
pub(crate) fn max_disagreement<S: Scalar>(
    star: &PottsInstance<S>,
    g: &[usize],
    groups: &[Vec<usize>],
    slack: &S,
    opts: &StabilityOptions,
) -> Result<(Option<Vec<usize>>, bool)> {
    let n = star.num_nodes();
    let mut group_of = vec![usize::MAX; n];
    for (gi, nodes) in groups.iter().enumerate() {
        for &u in nodes {
            group_of[u] = gi;
        }
    }
    if group_of.iter().any(|&gi| gi == usize::MAX) {
        return Err(Error::InvalidDecomposition("groups do not cover the nodes".into()));
    }
    if star.edges().iter().any(|e| group_of[e.u] != group_of[e.v]) {
        return Err(Error::InvalidDecomposition("edge between two groups".into()));
    }
    let bounds: Vec<S> = group_values(star, g, &group_of, groups.len())
        .ok_or_else(|| Error::InvalidParameter("g uses a forbidden label".into()))?
        .into_iter()
        .map(|v| v + slack.clone())
        .collect();

    let certified = dual_certified(star, g, &group_of, &bounds);
    if certified.iter().all(|&c| c) {
        return Ok((None, true));
    }
    if certified.iter().any(|&c| c) {
        let rest: Vec<usize> = (0..n).filter(|&u| !certified[group_of[u]]).collect();
        let inside = membership(n, &rest);
        let sub = restrict_unchecked(star, &rest, &inside, |_, _| S::zero());
        let local_g: Vec<usize> = rest.iter().map(|&u| g[u]).collect();
        let mut local = vec![usize::MAX; n];
        for (i, &u) in rest.iter().enumerate() {
            local[u] = i;
        }
        let sub_groups: Vec<Vec<usize>> = groups
            .iter()
            .enumerate()
            .filter(|&(gi, _)| !certified[gi])
            .map(|(_, nodes)| nodes.iter().map(|&u| local[u]).collect())
            .collect();
        let (witness, complete) = search(&sub.instance, &local_g, &sub_groups, slack, opts)?;
        let witness = witness.map(|w| {
            let mut f = g.to_vec();
            for (i, &u) in rest.iter().enumerate() {
                f[u] = w[i];
            }
            f
        });
        return Ok((witness, complete));
    }
    search(star, g, groups, slack, opts)
}

/// Groups on which an LP dual `eta` of `star` proves `g` to be the only
/// admissible labeling within the bound.
///
/// For every labeling `f`,
/// `Q*_group(f) >= P_group(eta) + sum_u (theta^eta_u(f(u)) - min_i theta^eta_u(i))`,
/// so if each `g(u)` is the strict minimizer of `theta^eta_u` and the bound
/// stays below `P_group(eta)` plus the smallest gap, nothing else fits.
fn dual_certified<S: Scalar>(star: &PottsInstance<S>, g: &[usize], group_of: &[usize], bounds: &[S]) -> Vec<bool> {
    let groups = bounds.len();
    let lp = LpOptions {
        start: Some(Labeling::new(g.to_vec())),
        ..LpOptions::default()
    };
    let Ok((_, eta)) = solve_lp_with(star, &lp) else {
        return vec![false; groups];
    };
    let k = star.num_labels();
    let mut lower = vec![S::zero(); groups];
    let mut gap: Vec<Option<S>> = vec![None; groups];
    let mut ok = vec![true; groups];
    for (u, &gu) in g.iter().enumerate() {
        let gi = group_of[u];
        let Cost::Finite(own) = reparam_cost(star, &eta, u, gu) else {
            ok[gi] = false;
            continue;
        };
        let other = (0..k)
            .filter(|&i| i != gu)
            .filter_map(|i| reparam_cost(star, &eta, u, i).finite().cloned())
            .reduce(S::min_of);
        match other {
            Some(o) if o <= own => {
                ok[gi] = false;
                lower[gi] += o;
            }
            Some(o) => {
                let d = o - own.clone();
                gap[gi] = Some(match gap[gi].take() {
                    None => d,
                    Some(c) => S::min_of(c, d),
                });
                lower[gi] += own;
            }
            None => lower[gi] += own,
        }
    }
    for (idx, e) in star.edges().iter().enumerate() {
        lower[group_of[e.u]] += edge_term_min(&e.weight, eta.by_edge(idx, e.u), eta.by_edge(idx, e.v));
    }
    let safety = if S::EXACT {
        S::zero()
    } else {
        star.data_scale() * S::from_f64(1e-9 * (star.num_nodes() + star.num_edges() + 1) as f64)
    };
    (0..groups)
        .map(|gi| {
            ok[gi]
                && match &gap[gi] {
                    // no node has a second admissible label
                    None => true,
                    Some(d) => lower[gi].clone() + d.clone() > bounds[gi].clone() + safety.clone(),
                }
        })
        .collect()
}

fn search<S: Scalar>(
    star: &PottsInstance<S>,
    g: &[usize],
    groups: &[Vec<usize>],
    slack: &S,
    opts: &StabilityOptions,
) -> Result<(Option<Vec<usize>>, bool)> {
    let n = star.num_nodes();
    let k = star.num_labels();
    let mut group_of = vec![usize::MAX; n];
    for (gi, nodes) in groups.iter().enumerate() {
        for &u in nodes {
            group_of[u] = gi;
        }
    }
    let bounds: Vec<S> = group_values(star, g, &group_of, groups.len())
        .ok_or_else(|| Error::InvalidParameter("g uses a forbidden label".into()))?
        .into_iter()
        .map(|v| v + slack.clone())
        .collect();

    // Forbidden labels get a cost that no admissible completion can offset.
    let mut node_min = vec![S::zero(); n];
    let mut spread = S::zero();
    for u in 0..n {
        let m = (0..k)
            .filter_map(|i| star.cost(u, i).finite().cloned())
            .reduce(S::min_of)
            .ok_or_else(|| Error::InvalidInstance(format!("node {u} has no admissible label")))?;
        spread = S::max_of(spread, m.abs());
        node_min[u] = m;
    }
    let mut lower = vec![S::zero(); groups.len()];
    for u in 0..n {
        lower[group_of[u]] += node_min[u].clone();
    }
    let mut big = S::zero();
    for (b, lo) in bounds.iter().zip(&lower) {
        big = S::max_of(big, b.clone() - lo.clone());
    }
    big += spread + S::one();

    let active: Vec<usize> = (0..star.num_edges())
        .filter(|&e| star.edge(e).weight > S::zero())
        .collect();
    let mut model = CompactLp::build(
        star,
        |u, i| if g[u] == i { S::one() } else { S::zero() },
        |_| S::zero(),
        &active,
    );
    let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); groups.len()];
    for u in 0..n {
        for i in 0..k {
            rows[group_of[u]].push((model.x_col(u, i), star.cost(u, i).or_big(&big)));
        }
    }
    for (pos, &e) in active.iter().enumerate() {
        let edge = star.edge(e);
        for i in 0..k {
            rows[group_of[edge.u]].push((model.d_col(pos, i), edge.weight.clone()));
        }
    }
    for (row, bound) in rows.iter().zip(&bounds) {
        model.lp.add_row(row, None, Some(bound.clone()));
    }
    let basis = model.crash_basis(star, g);
    let cfg = BnbConfig {
        node_limit: opts.node_limit,
        pivot_limit: opts.pivot_limit,
        integer_objective: true,
    };
    let incumbent = Some((g.to_vec(), S::from_f64(n as f64)));
    let out = branch_and_bound(&mut model, Some(basis), incumbent, &cfg, |f| {
        let Some(values) = group_values(star, f, &group_of, groups.len()) else {
            return Eval::Reject;
        };
        if values.iter().zip(&bounds).any(|(v, b)| v > b) {
            // admitted by the LP tolerances but not by exact evaluation
            return Eval::Unsure;
        }
        let agree = f.iter().zip(g).filter(|(a, b)| a == b).count();
        Eval::Value(S::from_f64(agree as f64))
    })?;
    let witness = out.best.map(|(f, _)| f).filter(|f| f != g);
    Ok((witness, out.complete))
}

/// `Q*` of `f` on each group, or `None` if `f` uses a forbidden label.
fn group_values<S: Scalar>(star: &PottsInstance<S>, f: &[usize], group_of: &[usize], groups: usize) -> Option<Vec<S>> {
    let mut values = vec![S::zero(); groups];
    for (u, &l) in f.iter().enumerate() {
        values[group_of[u]] += star.cost(u, l).finite()?.clone();
    }
    for e in star.edges() {
        if f[e.u] != f[e.v] {
            values[group_of[e.u]] += e.weight.clone();
        }
    }
    Some(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{self, combined_nodes::*};
    use crate::dual_decomp::restrict_dual;
    use crate::lp_solver::solve_lp;
    use crate::numeric::Rational;

    fn fin(v: f64) -> Cost {
        Cost::Finite(v)
    }

    fn two() -> Factor {
        Factor::Finite(2.0)
    }

    fn one() -> Factor {
        Factor::Finite(1.0)
    }

    fn bnb() -> StabilityOptions {
        StabilityOptions {
            strategy: SearchStrategy::BranchAndBound,
            ..Default::default()
        }
    }

    #[test]
    fn identity_perturbation() {
        let inst = builders::random_grid(3, 3, 3, (0.0, 5.0), (0.5, 2.0), 1).unwrap();
        let g = Labeling::new(vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        assert_eq!(adversarial_perturbation(&inst, &g, one(), one()).unwrap(), inst);
    }

    #[test]
    fn constant_labeling_halves_everything() {
        let inst = builders::random_grid(2, 3, 2, (0.0, 5.0), (0.5, 2.0), 2).unwrap();
        let star = adversarial_perturbation(&inst, &Labeling::constant(6, 1), two(), one()).unwrap();
        for (a, b) in inst.edges().iter().zip(star.edges()) {
            assert_eq!(a.weight / 2.0, b.weight);
        }
    }

    #[test]
    fn combined_example_perturbation() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let star = adversarial_perturbation(&ex.instance, &ex.labeling, two(), one()).unwrap();
        for (a, b) in ex.instance.edges().iter().zip(star.edges()) {
            let cut = ex.labeling.get(a.u) != ex.labeling.get(a.v);
            let expect = if cut { a.weight } else { a.weight / 2.0 };
            assert_eq!(b.weight, expect, "edge ({},{})", a.u, a.v);
        }
        let ux = ex.instance.edge_index(U, X).unwrap();
        let wy = ex.instance.edge_index(W, Y).unwrap();
        assert_eq!(star.edge(ux).weight, 0.01);
        assert_eq!(star.edge(wy).weight, 0.01);
    }

    #[test]
    fn infinite_gamma_needs_uncut_or_weightless_edges() {
        let inst = PottsInstance::new(2, vec![vec![fin(0.0), fin(1.0)], vec![fin(1.0), fin(0.0)]], vec![(0, 1, 1.0)])
            .unwrap();
        let g = Labeling::new(vec![0, 1]);
        assert!(adversarial_perturbation(&inst, &g, one(), Factor::Infinite).is_err());
        let star = adversarial_perturbation(&inst, &Labeling::new(vec![0, 0]), Factor::Infinite, Factor::Infinite).unwrap();
        assert_eq!(star.edge(0).weight, 0.0);
    }

    #[test]
    fn single_node_with_unique_minimum_is_stable() {
        let inst = PottsInstance::new(3, vec![vec![fin(3.0), fin(1.0), fin(2.0)]], vec![]).unwrap();
        let g = Labeling::new(vec![1]);
        for opts in [StabilityOptions::default(), bnb()] {
            let v = check_stable_with(&inst, &g, Factor::Infinite, Factor::Infinite, &opts).unwrap();
            assert!(v.stable && v.witness.is_none());
        }
        let tie = PottsInstance::new(2, vec![vec![fin(1.0), fin(1.0)]], vec![]).unwrap();
        let v = check_stable(&tie, &Labeling::new(vec![0]), one(), one()).unwrap();
        assert!(!v.stable);
        assert_eq!(v.witness, Some(Labeling::new(vec![1])));
        assert_eq!(v.margin, Some(0.0));
    }

    #[test]
    fn two_node_examples() {
        let make = |a: f64| {
            PottsInstance::new(2, vec![vec![fin(0.0), fin(a)], vec![fin(0.0), fin(10.0)]], vec![(0, 1, 1.0)]).unwrap()
        };
        let g = Labeling::new(vec![0, 0]);
        let v = check_stable(&make(10.0), &g, two(), one()).unwrap();
        assert!(v.stable);
        // flipping u costs 0.1 + 0.5 under w*, which still exceeds Q*(g) = 0
        let v = check_stable(&make(0.1), &g, two(), one()).unwrap();
        assert!(v.stable);
        // g stays optimal (Q(1,0) = 0.5) but Q*(1,0) = -0.5 + 0.5 ties Q*(g)
        let v = check_stable(&make(-0.5), &g, two(), one()).unwrap();
        assert!(!v.stable);
        assert_eq!(v.witness, Some(Labeling::new(vec![1, 0])));
        assert!(!v.improves);
    }

    #[test]
    fn combined_instance_is_not_stable() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        for opts in [StabilityOptions::default(), bnb()] {
            let v = check_stable_with(&ex.instance, &ex.labeling, two(), one(), &opts).unwrap();
            assert!(!v.stable);
            let f = v.witness.unwrap();
            assert_ne!(f.get(Z), ex.labeling.get(Z), "{opts:?}");
            assert!(v.margin.unwrap() >= -1e-12);
        }
    }

    #[test]
    fn combined_block_s_is_stable() {
        let ex = builders::combined_example(0.01, 0.1).unwrap();
        let decomp = BlockDecomposition::new(6, vec![ex.block_s.clone()], ex.block_t.clone()).unwrap();
        for opts in [StabilityOptions::default(), bnb()] {
            let v = check_block_stable(&ex.instance, &decomp, 0, &ex.labeling, two(), one(), &ex.delta, &opts).unwrap();
            assert!(v.certified(), "{opts:?}: {v:?}");
            let t = check_block_stable(&ex.instance, &decomp, 1, &ex.labeling, two(), one(), &ex.delta, &opts).unwrap();
            assert!(!t.certified());
        }
    }

    #[test]
    fn triangle_singletons_need_the_dual() {
        let (inst, g) = builders::counterexample_triangle(0.1).unwrap();
        let decomp = BlockDecomposition::singletons(3);
        let zero = BlockDualSolution::zeros(&inst, &decomp.boundary_edges(&inst));
        let (x, eta) = solve_lp(&inst).unwrap();
        let delta = restrict_dual(&inst, &eta, &decomp, &x.objective, &1e-6).unwrap();
        let inf = Factor::Infinite;
        for b in 0..3 {
            let naive = check_block_stable(&inst, &decomp, b, &g, inf, inf, &zero, &Default::default()).unwrap();
            assert!(naive.certified());
            let v = check_block_stable(&inst, &decomp, b, &g, inf, inf, &delta, &Default::default()).unwrap();
            assert!(!v.certified(), "node {b}");
        }
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        for seed in 0..25 {
            let inst = builders::random_grid_int(3, 3, 3, 4, 3, seed).unwrap();
            let g = crate::lp_solver::solve_map(&inst).unwrap();
            let a = check_stable(&inst, &g, two(), one()).unwrap();
            let b = check_stable_with(&inst, &g, two(), one(), &bnb()).unwrap();
            assert_eq!(a.stable, b.stable, "seed {seed}");
            assert_eq!(a.hamming, b.hamming, "seed {seed}");
        }
    }

    #[test]
    fn rational_mode_agrees() {
        for seed in 0..5 {
            let inst = builders::random_grid_int(2, 3, 3, 4, 3, seed).unwrap();
            let g = crate::lp_solver::solve_map(&inst).unwrap();
            let exact = inst.to_exact();
            let a = check_stable(&inst, &g, two(), one()).unwrap();
            let b: StabilityVerdict<Rational> = check_stable_with(&exact, &g, two(), one(), &bnb()).unwrap();
            assert_eq!(a.stable, b.stable, "seed {seed}");
            assert_eq!(a.hamming, b.hamming, "seed {seed}");
        }
    }
}
