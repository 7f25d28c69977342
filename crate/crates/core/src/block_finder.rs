//! Iterative search for stable blocks: test every block of a decomposition
//! on its reparametrized restriction, evict the nodes a witness disagrees
//! on, and reclaim same-label components from the boundary block.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;

use crate::dual_decomp::{
    cut_boundary, pairwise_dual_value, restrict_dual, BlockDecomposition, BlockDualSolution, BlockStatus, DualSolution,
};
use crate::error::{Error, Result};
use crate::lp_solver::{solve_lp, PrimalSolution};
use crate::model::{Factor, Labeling, PottsInstance};
use crate::numeric::{Scalar, DEFAULT_TOL};
use crate::stability::{
    adversarial_perturbation, assess, check_block_stable, ilp_slack, inconclusive, max_disagreement, BlockVerdict,
    StabilityOptions,
};

#[derive(Clone, Debug)]
pub struct FinderOptions {
    pub beta: Factor,
    pub gamma: Factor,
    /// Number of iterations `M`, at least 1.
    pub iterations: usize,
    /// One merged check per iteration on the instance with boundary edges
    /// removed, instead of one check per block.
    pub optimized: bool,
    /// Threads for per-block checks; 1 runs them in order on the caller.
    pub jobs: usize,
    /// Allowed gap between the dual value and the LP optimum.
    pub tol: f64,
    pub stability: StabilityOptions,
    /// Starting decomposition; the label-interior split of `g` when absent.
    pub seed: Option<BlockDecomposition>,
}

impl Default for FinderOptions {
    fn default() -> Self {
        FinderOptions {
            beta: Factor::Finite(2.0),
            gamma: Factor::Finite(1.0),
            iterations: 5,
            optimized: false,
            jobs: 1,
            tol: DEFAULT_TOL,
            stability: StabilityOptions::default(),
            seed: None,
        }
    }
}

/// One tested decomposition.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    /// The decomposition tested in this iteration, with its statuses.
    pub decomposition: BlockDecomposition,
    pub certified_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct FinderReport<S = f64> {
    pub labeling: Labeling,
    pub lp: PrimalSolution<S>,
    pub iterations: Vec<IterationRecord>,
    /// Verdicts of the last iteration, by block.
    pub verdicts: Vec<BlockVerdict<S>>,
    pub certified: Vec<bool>,
    /// Blocks whose check failed with an error, with the message.
    pub failures: Vec<(usize, String)>,
    /// Iterations where the merged check hit its node limit and the blocks
    /// were checked one by one instead.
    pub merged_fallbacks: usize,
}

impl<S: Scalar> FinderReport<S> {
    /// The decomposition tested last, with its statuses.
    pub fn decomposition(&self) -> &BlockDecomposition {
        &self.iterations.last().expect("at least one iteration").decomposition
    }

    pub fn certified_fraction(&self) -> f64 {
        fraction(&self.certified)
    }

    /// `(block size, blocks, stable blocks)` over the nonempty blocks of the
    /// final decomposition, by ascending size.
    pub fn histogram(&self) -> Vec<(usize, usize, usize)> {
        let d = self.decomposition();
        let mut h: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (b, nodes) in d.blocks().iter().enumerate() {
            if nodes.is_empty() {
                continue;
            }
            let entry = h.entry(nodes.len()).or_default();
            entry.0 += 1;
            if d.status(b) == BlockStatus::Stable {
                entry.1 += 1;
            }
        }
        h.into_iter().map(|(s, (a, b))| (s, a, b)).collect()
    }

    /// Certified nodes whose LP marginal on `g(u)` is below `1 - tol`.
    /// Empty whenever the certificate is sound.
    pub fn persistency_violations(&self, tol: f64) -> Vec<usize> {
        (0..self.certified.len())
            .filter(|&u| self.certified[u] && self.lp.node_marginal(u, self.labeling.get(u)).to_f64() < 1.0 - tol)
            .collect()
    }
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 1.0;
    }
    flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
}

/// `|L|` label-interior blocks (nodes whose neighbors all share their label,
/// possibly empty) followed by the boundary block of the remaining nodes.
pub fn initial_decomposition<S: Scalar>(inst: &PottsInstance<S>, g: &Labeling) -> Result<BlockDecomposition> {
    g.validate(inst)?;
    let k = inst.num_labels();
    let mut blocks = vec![Vec::new(); k];
    let mut boundary = Vec::new();
    for u in 0..inst.num_nodes() {
        let l = g.get(u);
        if inst.neighbors(u).iter().all(|&(v, _)| g.get(v) == l) {
            blocks[l].push(u);
        } else {
            boundary.push(u);
        }
    }
    BlockDecomposition::new(inst.num_nodes(), blocks, boundary)
}

/// Connected components of the subgraph induced by `region` that use a
/// single label of `g`, ordered by their smallest node.
pub fn reclaim<S: Scalar>(inst: &PottsInstance<S>, g: &Labeling, region: &[usize]) -> Vec<Vec<usize>> {
    let n = inst.num_nodes();
    let mut inside = vec![false; n];
    for &u in region {
        inside[u] = true;
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if !inside[start] || seen[start] {
            continue;
        }
        let label = g.get(start);
        let mut comp = vec![start];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in inst.neighbors(u) {
                if inside[v] && !seen[v] && g.get(v) == label {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Per-block search with `M` iterations at the given `(beta, gamma)`.
pub fn run<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
    iterations: usize,
) -> Result<FinderReport<S>> {
    run_with(
        inst,
        g,
        &FinderOptions {
            beta,
            gamma,
            iterations,
            ..Default::default()
        },
    )
}

/// Same search with one merged check per iteration.
pub fn run_optimized<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
    iterations: usize,
) -> Result<FinderReport<S>> {
    run_with(
        inst,
        g,
        &FinderOptions {
            beta,
            gamma,
            iterations,
            optimized: true,
            ..Default::default()
        },
    )
}

/// Solves the LP once, then for each iteration restricts its dual to the
/// current boundary edges, checks every block (boundary block last) and
/// builds the next decomposition.
pub fn run_with<S: Scalar>(inst: &PottsInstance<S>, g: &Labeling, opts: &FinderOptions) -> Result<FinderReport<S>> {
    if opts.iterations == 0 {
        return Err(Error::InvalidParameter("need at least one iteration".into()));
    }
    if opts.jobs == 0 {
        return Err(Error::InvalidParameter("jobs must be positive".into()));
    }
    g.validate(inst)?;
    let (x, eta) = solve_lp(inst)?;
    run_with_lp(inst, g, x, eta, opts)
}

/// [`run_with`] on an already solved LP relaxation `(x, eta)` of `inst`.
pub fn run_with_lp<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    x: PrimalSolution<S>,
    eta: DualSolution<S>,
    opts: &FinderOptions,
) -> Result<FinderReport<S>> {
    if opts.iterations == 0 {
        return Err(Error::InvalidParameter("need at least one iteration".into()));
    }
    if opts.jobs == 0 {
        return Err(Error::InvalidParameter("jobs must be positive".into()));
    }
    g.validate(inst)?;
    let n = inst.num_nodes();
    if x.num_nodes() != n || eta.num_edges() != inst.num_edges() {
        return Err(Error::DimensionMismatch("LP solution does not fit the instance".into()));
    }
    let tol = S::from_f64(opts.tol);
    let p = pairwise_dual_value(inst, &eta)?;
    if (p.clone() - x.objective.clone()).abs() > tol {
        return Err(Error::InvalidDual(format!(
            "LP dual value {p} does not match the optimum {}",
            x.objective
        )));
    }
    let mut decomp = match &opts.seed {
        Some(d) => {
            if d.num_nodes() != n {
                return Err(Error::DimensionMismatch("seed decomposition size".into()));
            }
            d.clone()
        }
        None => initial_decomposition(inst, g)?,
    }
    .without_empty();

    let pool = if opts.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };

    let mut records = Vec::with_capacity(opts.iterations);
    let mut merged_fallbacks = 0;
    let mut last = None;
    for t in 1..=opts.iterations {
        let delta = restrict_dual(inst, &eta, &decomp, &x.objective, &tol)?;
        let merged = if opts.optimized {
            let m = merged_check(inst, g, &decomp, &delta, opts)?;
            if m.is_none() {
                merged_fallbacks += 1;
            }
            m
        } else {
            None
        };
        let checked = match merged {
            Some(v) => v,
            None => {
                let check = |b: usize| {
                    let res = check_block_stable(inst, &decomp, b, g, opts.beta, opts.gamma, &delta, &opts.stability);
                    match res {
                        Ok(v) => (v, None),
                        Err(e) => (
                            BlockVerdict {
                                block: b,
                                nodes: decomp.block(b).to_vec(),
                                verdict: inconclusive(),
                            },
                            Some(e.to_string()),
                        ),
                    }
                };
                let blocks = 0..decomp.num_blocks();
                match &pool {
                    Some(p) => p.install(|| blocks.into_par_iter().map(check).collect()),
                    None => blocks.map(check).collect(),
                }
            }
        };
        let mut failures = Vec::new();
        let mut verdicts = Vec::with_capacity(checked.len());
        for (v, err) in checked {
            if let Some(msg) = err {
                failures.push((v.block, msg));
            }
            verdicts.push(v);
        }
        let mut tested = decomp.clone();
        let mut certified = vec![false; n];
        for v in &verdicts {
            let status = if v.certified() {
                for &u in &v.nodes {
                    certified[u] = true;
                }
                BlockStatus::Stable
            } else {
                BlockStatus::Unstable
            };
            tested.set_status(v.block, status);
        }
        records.push(IterationRecord {
            iteration: t,
            decomposition: tested,
            certified_fraction: fraction(&certified),
        });
        if t < opts.iterations {
            decomp = next_decomposition(inst, g, &decomp, &verdicts)?;
        }
        last = Some((verdicts, certified, failures));
    }
    let (verdicts, certified, failures) = last.expect("at least one iteration");
    Ok(FinderReport {
        labeling: g.clone(),
        lp: x,
        iterations: records,
        verdicts,
        certified,
        failures,
        merged_fallbacks,
    })
}

/// Evicts witness disagreements into the new boundary block and splits the
/// rest of the old boundary block into same-label components.
fn next_decomposition<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    decomp: &BlockDecomposition,
    verdicts: &[BlockVerdict<S>],
) -> Result<BlockDecomposition> {
    let star = decomp.boundary_id();
    let mut blocks = Vec::with_capacity(decomp.num_blocks());
    let mut boundary = Vec::new();
    for v in verdicts {
        let evicted = v.disagreements(g);
        let mut gone = vec![false; inst.num_nodes()];
        for &u in &evicted {
            gone[u] = true;
        }
        let rest: Vec<usize> = v.nodes.iter().copied().filter(|&u| !gone[u]).collect();
        boundary.extend(evicted);
        if v.block == star {
            blocks.extend(reclaim(inst, g, &rest));
        } else {
            blocks.push(rest);
        }
    }
    Ok(BlockDecomposition::new(inst.num_nodes(), blocks, boundary)?.without_empty())
}

/// All blocks in one ILP on the instance without boundary edges, one
/// objective constraint per block. `None` when the search hit its limit.
fn merged_check<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    decomp: &BlockDecomposition,
    delta: &BlockDualSolution<S>,
    opts: &FinderOptions,
) -> Result<Option<Vec<(BlockVerdict<S>, Option<String>)>>> {
    let cut = cut_boundary(inst, decomp, delta);
    let star = adversarial_perturbation(&cut, g, opts.beta, opts.gamma)?;
    let groups: Vec<Vec<usize>> = decomp.blocks().iter().filter(|b| !b.is_empty()).cloned().collect();
    let qg = match crate::model::objective_unchecked(&star, g.as_slice()) {
        crate::model::Cost::Finite(v) => v,
        crate::model::Cost::Forbidden => {
            return Err(Error::InvalidParameter("g uses a forbidden label".into()))
        }
    };
    let slack = ilp_slack(&star, &qg);
    let (witness, complete) = max_disagreement(&star, g.as_slice(), &groups, &slack, &opts.stability)?;
    if !complete {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(decomp.num_blocks());
    for b in 0..decomp.num_blocks() {
        let nodes = decomp.block(b).to_vec();
        let local_g = g.restrict(&nodes);
        let local_w = witness
            .as_ref()
            .map(|f| nodes.iter().map(|&u| f[u]).collect::<Vec<_>>())
            .filter(|w| w.as_slice() != local_g.as_slice());
        let local = delta.for_block(inst, &nodes)?;
        let r = crate::model::restricted_instance(inst, &nodes, &local)?;
        let verdict = assess(&r.instance, &local_g, opts.beta, opts.gamma, local_w, true)?;
        out.push((BlockVerdict { block: b, nodes, verdict }, None));
    }
    Ok(Some(out))
}
