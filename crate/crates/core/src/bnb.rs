//! Depth-first branch-and-bound over the node-label indicators of a compact
//! Potts LP.

use crate::error::{Error, Result};
use crate::lp::simplex::{self, Basis, LpStatus, SimplexOptions};
use crate::lp_solver::CompactLp;
use crate::numeric::Scalar;

pub(crate) struct BnbConfig {
    pub node_limit: usize,
    /// Simplex iterations summed over all nodes.
    pub pivot_limit: usize,
    /// Objective takes integer values on integer points.
    pub integer_objective: bool,
}

/// Exact evaluation of an integral LP vertex.
pub(crate) enum Eval<S> {
    Value(S),
    /// Provably useless (for example it uses a forbidden label).
    Reject,
    /// Could not be confirmed; the search is then incomplete.
    Unsure,
}

pub(crate) struct BnbOutcome<S> {
    pub best: Option<(Vec<usize>, S)>,
    /// The search space was exhausted without hitting limits.
    pub complete: bool,
    pub nodes: usize,
}

struct Node {
    // (column, fixed to one) in branching order
    fixings: Vec<(usize, bool)>,
    basis: Option<Basis>,
}

/// Minimizes the LP objective over labelings (binary `x_u(i)`).
pub(crate) fn branch_and_bound<S: Scalar>(
    model: &mut CompactLp<S>,
    root_basis: Option<Basis>,
    incumbent: Option<(Vec<usize>, S)>,
    cfg: &BnbConfig,
    mut evaluate: impl FnMut(&[usize]) -> Eval<S>,
) -> Result<BnbOutcome<S>> {
    let mut opts = SimplexOptions::default();
    let mut pivots = 0usize;
    let mut best = incumbent;
    let mut complete = true;
    let mut nodes = 0usize;
    let mut stack = vec![Node {
        fixings: Vec::new(),
        basis: root_basis,
    }];
    let k = model.k;
    let n = model.n;

    while let Some(node) = stack.pop() {
        if nodes >= cfg.node_limit || pivots >= cfg.pivot_limit {
            complete = false;
            break;
        }
        nodes += 1;
        for &(col, one) in &node.fixings {
            if one {
                model.lp.set_col_bounds(col, Some(S::one()), Some(S::one()));
            } else {
                model.lp.set_col_bounds(col, Some(S::zero()), Some(S::zero()));
            }
        }
        opts.max_iterations = cfg.pivot_limit - pivots;
        let res = simplex::solve(&model.lp, node.basis.as_ref(), &opts);
        for &(col, _) in &node.fixings {
            model.lp.set_col_bounds(col, Some(S::zero()), None);
        }
        let res = match res {
            Ok(r) => {
                pivots += r.iterations;
                r
            }
            Err(LpStatus::Infeasible) => continue,
            Err(LpStatus::IterationLimit) => {
                pivots = cfg.pivot_limit;
                complete = false;
                continue;
            }
            Err(LpStatus::Unbounded) => {
                return Err(Error::Lp("unbounded relaxation in branch-and-bound".into()))
            }
        };
        if let Some((_, b)) = &best {
            if prunable(&res.objective, b, cfg.integer_objective) {
                continue;
            }
        }
        if let Some(f) = model.labeling_if_integral(&res.x) {
            match evaluate(&f) {
                Eval::Value(v) => {
                    if best.as_ref().map_or(true, |(_, b)| v < *b) {
                        best = Some((f, v));
                    }
                }
                Eval::Reject => {}
                Eval::Unsure => complete = false,
            }
            continue;
        }
        // rounding to the largest marginals often finds an incumbent early
        let rounded: Vec<usize> = (0..n)
            .map(|u| {
                let row = &res.x[u * k..(u + 1) * k];
                (1..k).fold(0, |top, i| if row[i] > row[top] { i } else { top })
            })
            .collect();
        if let Eval::Value(v) = evaluate(&rounded) {
            if best.as_ref().map_or(true, |(_, b)| v < *b) {
                best = Some((rounded, v));
            }
        }
        // most fractional node, branch on its largest marginal
        let mut pick: Option<(usize, usize, S)> = None;
        for u in 0..n {
            let row = &res.x[u * k..(u + 1) * k];
            let mut top = 0;
            for i in 1..k {
                if row[i] > row[top] {
                    top = i;
                }
            }
            let frac = S::one() - row[top].clone();
            if frac > S::from_f64(1e-6) && pick.as_ref().map_or(true, |(_, _, f)| frac > *f) {
                pick = Some((u, top, frac));
            }
        }
        let Some((u, i, _)) = pick else {
            // fractional only below the integrality tolerance
            complete = false;
            continue;
        };
        let col = model.x_col(u, i);
        let mut zero = node.fixings.clone();
        zero.push((col, false));
        let mut one = node.fixings;
        one.push((col, true));
        stack.push(Node {
            fixings: zero,
            basis: Some(res.basis.clone()),
        });
        stack.push(Node {
            fixings: one,
            basis: Some(res.basis),
        });
    }
    if !stack.is_empty() {
        complete = false;
    }
    Ok(BnbOutcome {
        best,
        complete,
        nodes,
    })
}

fn prunable<S: Scalar>(bound: &S, best: &S, integer: bool) -> bool {
    if integer {
        let b = if S::EXACT {
            bound.ceil()
        } else {
            S::from_f64((bound.to_f64() - 1e-6).ceil())
        };
        b >= *best
    } else if S::EXACT {
        *bound >= *best
    } else {
        let tol = 1e-9 * best.to_f64().abs().max(1.0);
        bound.to_f64() >= best.to_f64() - tol
    }
}
