//! Brute-force reference implementations. Nothing here shares search or
//! pruning code with the solvers it is used to check.

use crate::error::{Error, Result};
use crate::lp_solver::PrimalSolution;
use crate::dual_decomp::DualSolution;
use crate::model::{Cost, Factor, Labeling, PottsInstance};
use crate::numeric::Scalar;
use crate::stability::StabilityVerdict;

/// Largest `k^n` the enumerators accept.
pub const ENUMERATION_LIMIT: f64 = 1e6;

fn check_size<S: Scalar>(inst: &PottsInstance<S>) -> Result<()> {
    let count = inst.labeling_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            labelings: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// All labelings in row-major order: node 0 slowest, last node fastest.
fn for_each_labeling(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut f = vec![0usize; n];
    loop {
        visit(&f);
        let mut pos = n;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            f[pos] += 1;
            if f[pos] < k {
                break;
            }
            f[pos] = 0;
        }
    }
}

/// Energy with explicit weights, recomputed from scratch.
fn energy<S: Scalar>(inst: &PottsInstance<S>, weights: &[S], f: &[usize]) -> Option<S> {
    let mut total = S::zero();
    for (u, &l) in f.iter().enumerate() {
        match inst.cost(u, l) {
            Cost::Finite(v) => total += v.clone(),
            Cost::Forbidden => return None,
        }
    }
    for (e, w) in inst.edges().iter().zip(weights) {
        if f[e.u] != f[e.v] {
            total += w.clone();
        }
    }
    Some(total)
}

/// Global minimum of the objective with the lexicographically smallest
/// minimizer.
pub fn enumerate_map<S: Scalar>(inst: &PottsInstance<S>) -> Result<(Labeling, S)> {
    check_size(inst)?;
    let weights: Vec<S> = inst.edges().iter().map(|e| e.weight.clone()).collect();
    let mut best: Option<(Vec<usize>, S)> = None;
    for_each_labeling(inst.num_nodes(), inst.num_labels(), |f| {
        if let Some(v) = energy(inst, &weights, f) {
            if best.as_ref().map_or(true, |(_, b)| v < *b) {
                best = Some((f.to_vec(), v));
            }
        }
    });
    let (f, v) = best.ok_or_else(|| Error::InvalidInstance("no admissible labeling".into()))?;
    Ok((Labeling::new(f), v))
}

/// Exhaustive stability verdict under the adversarial perturbation.
///
/// The witness is the lexicographically first labeling at maximum Hamming
/// distance with `Q*(f) <= Q*(g)` (plus `1e-9 * scale` in float mode).
pub fn enumerate_stability<S: Scalar>(
    inst: &PottsInstance<S>,
    g: &Labeling,
    beta: Factor,
    gamma: Factor,
) -> Result<StabilityVerdict<S>> {
    check_size(inst)?;
    g.validate(inst)?;
    let gs = g.as_slice();
    let mut weights = Vec::with_capacity(inst.num_edges());
    for e in inst.edges() {
        let cut = gs[e.u] != gs[e.v];
        let factor = if cut { gamma } else { beta };
        let w = match factor {
            Factor::Finite(c) if cut => e.weight.clone() * S::from_f64(c),
            Factor::Finite(c) => e.weight.clone() / S::from_f64(c),
            Factor::Infinite if !cut || e.weight.is_zero() => S::zero(),
            Factor::Infinite => {
                return Err(Error::InvalidParameter("infinite gamma on a weighted cut edge".into()))
            }
        };
        weights.push(w);
    }
    let qg = energy(inst, &weights, gs)
        .ok_or_else(|| Error::InvalidParameter("g uses a forbidden label".into()))?;
    let mut scale = qg.abs();
    for u in 0..inst.num_nodes() {
        for c in inst.node_costs(u) {
            if let Cost::Finite(v) = c {
                scale = S::max_of(scale, v.abs());
            }
        }
    }
    for w in &weights {
        scale = S::max_of(scale, w.abs());
    }
    let slack = if S::EXACT {
        S::zero()
    } else {
        S::max_of(scale, S::one()) * S::from_f64(1e-9)
    };
    let limit = qg.clone() + slack.clone();

    let mut best: Option<(Vec<usize>, usize, S)> = None;
    for_each_labeling(inst.num_nodes(), inst.num_labels(), |f| {
        let hamming = f.iter().zip(gs).filter(|(a, b)| a != b).count();
        if hamming == 0 || best.as_ref().map_or(false, |(_, h, _)| hamming <= *h) {
            return;
        }
        if let Some(v) = energy(inst, &weights, f) {
            if v <= limit {
                best = Some((f.to_vec(), hamming, v));
            }
        }
    });
    Ok(match best {
        None => StabilityVerdict {
            stable: true,
            witness: None,
            hamming: 0,
            margin: None,
            improves: false,
            inconclusive: false,
        },
        Some((f, hamming, v)) => {
            let orig: Vec<S> = inst.edges().iter().map(|e| e.weight.clone()).collect();
            let improves = match (energy(inst, &orig, &f), energy(inst, &orig, gs)) {
                (Some(a), Some(b)) => a < b - slack,
                _ => false,
            };
            StabilityVerdict {
                stable: false,
                witness: Some(Labeling::new(f)),
                hamming,
                margin: Some(qg - v),
                improves,
                inconclusive: false,
            }
        }
    })
}

/// Residuals of an LP primal/dual pair. All fields are absolute values.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateReport {
    /// Largest `|sum_i x_u(i) - 1|`.
    pub normalization: f64,
    /// Largest marginalization residual over edges, labels and sides.
    pub marginalization: f64,
    /// Most negative entry (0 when none is negative).
    pub negativity: f64,
    /// `|recomputed primal objective - reported objective|`.
    pub objective_mismatch: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    /// `|primal value - dual value|`.
    pub gap: f64,
    /// `(node, decoded label)` where the dual decodes uniquely but
    /// `x_u(label) < 1 - tol`.
    pub slackness_violations: Vec<(usize, usize)>,
    pub tol: f64,
}

impl CertificateReport {
    pub fn ok(&self) -> bool {
        self.normalization <= self.tol
            && self.marginalization <= self.tol
            && self.negativity <= self.tol
            && self.objective_mismatch <= self.tol
            && self.gap <= self.tol
            && self.slackness_violations.is_empty()
    }

    /// One line per failed check; empty when [`Self::ok`].
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64| {
            if v > self.tol {
                out.push(format!("{name} residual {v:e} exceeds {:e}", self.tol));
            }
        };
        check("normalization", self.normalization);
        check("marginalization", self.marginalization);
        check("negativity", self.negativity);
        check("objective", self.objective_mismatch);
        check("duality gap", self.gap);
        for (u, i) in &self.slackness_violations {
            out.push(format!("dual decodes node {u} to label {i} but x_u({i}) < 1"));
        }
        out
    }
}

/// Checks feasibility of `x`, the duality gap against `eta`, and that `x`
/// puts full mass on every label `eta` decodes to with margin above `tol`.
/// Forbidden costs are priced at [`PottsInstance::default_big`].
pub fn verify_lp_certificate<S: Scalar>(
    inst: &PottsInstance<S>,
    x: &PrimalSolution<S>,
    eta: &DualSolution<S>,
    tol: f64,
) -> Result<CertificateReport> {
    let n = inst.num_nodes();
    let k = inst.num_labels();
    let m = inst.num_edges();
    if x.num_nodes() != n || x.num_labels() != k || x.num_edges() != m {
        return Err(Error::DimensionMismatch("primal solution does not fit the instance".into()));
    }
    if eta.num_edges() != m || eta.num_labels() != k {
        return Err(Error::DimensionMismatch("dual solution does not fit the instance".into()));
    }
    let big = inst.default_big().to_f64();
    let xv = |u: usize, i: usize| x.node_marginal(u, i).to_f64();
    let mv = |e: usize, i: usize, j: usize| x.edge_marginal(e, i, j).to_f64();

    let mut normalization: f64 = 0.0;
    let mut negativity: f64 = 0.0;
    let mut primal = 0.0;
    for u in 0..n {
        let mut s = 0.0;
        for i in 0..k {
            let v = xv(u, i);
            s += v;
            negativity = negativity.max(-v);
            let c = match inst.cost(u, i) {
                Cost::Finite(c) => c.to_f64(),
                Cost::Forbidden => big,
            };
            primal += c * v;
        }
        normalization = normalization.max((s - 1.0).abs());
    }
    let mut marginalization: f64 = 0.0;
    for (idx, e) in inst.edges().iter().enumerate() {
        let w = e.weight.to_f64();
        for i in 0..k {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..k {
                let a = mv(idx, i, j);
                negativity = negativity.max(-a);
                if i != j {
                    primal += w * a;
                }
                row += a;
                col += mv(idx, j, i);
            }
            marginalization = marginalization.max((row - xv(e.u, i)).abs());
            marginalization = marginalization.max((col - xv(e.v, i)).abs());
        }
    }

    // P(eta), written out independently of the dual module
    let mut shift = vec![vec![0.0; k]; n];
    let mut dual = 0.0;
    for (idx, e) in inst.edges().iter().enumerate() {
        let a: Vec<f64> = eta.by_edge(idx, e.u).iter().map(|v| v.to_f64()).collect();
        let b: Vec<f64> = eta.by_edge(idx, e.v).iter().map(|v| v.to_f64()).collect();
        let w = e.weight.to_f64();
        let mut best = f64::INFINITY;
        for i in 0..k {
            shift[e.u][i] += a[i];
            shift[e.v][i] += b[i];
            for j in 0..k {
                let pot = if i == j { 0.0 } else { w };
                best = best.min(pot - a[i] - b[j]);
            }
        }
        dual += best;
    }
    let mut slackness_violations = Vec::new();
    for u in 0..n {
        let mut vals: Vec<(f64, usize)> = (0..k)
            .filter_map(|i| match inst.cost(u, i) {
                Cost::Finite(c) => Some((c.to_f64() + shift[u][i], i)),
                Cost::Forbidden => None,
            })
            .collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        dual += vals[0].0;
        let unique = vals.len() == 1 || vals[1].0 - vals[0].0 > tol;
        if unique && xv(u, vals[0].1) < 1.0 - tol {
            slackness_violations.push((u, vals[0].1));
        }
    }
    let reported = x.objective.to_f64();
    Ok(CertificateReport {
        normalization,
        marginalization,
        negativity,
        objective_mismatch: (primal - reported).abs(),
        primal_value: primal,
        dual_value: dual,
        gap: (primal - dual).abs(),
        slackness_violations,
        tol,
    })
}
