//! Bounded revised simplex method over sparse rows.
//!
//! Rows are `lo <= a_i x <= hi`. Each row gets a logical variable `r_i` and
//! the system becomes `A x - r = 0`, so the all-logical basis always exists.
//! Phase 1 minimizes the sum of bound violations of basic variables starting
//! from any basis, which makes warm starts and crash bases straightforward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numeric::Scalar;

use super::lu::{factorize, LuFactors};

#[derive(Clone, Debug)]
pub struct LpProblem<S> {
    obj: Vec<S>,
    col_lo: Vec<Option<S>>,
    col_hi: Vec<Option<S>>,
    cols: Vec<Vec<(usize, S)>>,
    row_lo: Vec<Option<S>>,
    row_hi: Vec<Option<S>>,
}

impl<S: Scalar> Default for LpProblem<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> LpProblem<S> {
    pub fn new() -> Self {
        LpProblem {
            obj: Vec::new(),
            col_lo: Vec::new(),
            col_hi: Vec::new(),
            cols: Vec::new(),
            row_lo: Vec::new(),
            row_hi: Vec::new(),
        }
    }

    pub fn num_cols(&self) -> usize {
        self.obj.len()
    }

    pub fn num_rows(&self) -> usize {
        self.row_lo.len()
    }

    pub fn add_col(&mut self, obj: S, lo: Option<S>, hi: Option<S>) -> usize {
        self.obj.push(obj);
        self.col_lo.push(lo);
        self.col_hi.push(hi);
        self.cols.push(Vec::new());
        self.obj.len() - 1
    }

    /// Adds `lo <= sum coef * x_col <= hi`. Duplicate columns are summed.
    pub fn add_row(&mut self, entries: &[(usize, S)], lo: Option<S>, hi: Option<S>) -> usize {
        let r = self.row_lo.len();
        self.row_lo.push(lo);
        self.row_hi.push(hi);
        for (c, v) in entries {
            if v.is_zero() {
                continue;
            }
            let col = &mut self.cols[*c];
            match col.last_mut() {
                Some((row, acc)) if *row == r => *acc += v.clone(),
                _ => col.push((r, v.clone())),
            }
        }
        r
    }

    pub fn objective_coef(&self, col: usize) -> &S {
        &self.obj[col]
    }

    pub fn set_col_bounds(&mut self, col: usize, lo: Option<S>, hi: Option<S>) {
        self.col_lo[col] = lo;
        self.col_hi[col] = hi;
    }

    pub fn col_bounds(&self, col: usize) -> (Option<&S>, Option<&S>) {
        (self.col_lo[col].as_ref(), self.col_hi[col].as_ref())
    }

    pub fn set_row_bounds(&mut self, row: usize, lo: Option<S>, hi: Option<S>) {
        self.row_lo[row] = lo;
        self.row_hi[row] = hi;
    }

    pub fn column(&self, col: usize) -> &[(usize, S)] {
        &self.cols[col]
    }

    /// Row activities `A x`.
    pub fn activities(&self, x: &[S]) -> Vec<S> {
        let mut act = vec![S::zero(); self.num_rows()];
        for (j, col) in self.cols.iter().enumerate() {
            if x[j].is_zero() {
                continue;
            }
            for (r, v) in col {
                act[*r] += v.clone() * x[j].clone();
            }
        }
        act
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// Basis over structural columns followed by one logical per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    pub status: Vec<VarStatus>,
}

impl Basis {
    /// All logicals basic, structurals at a finite bound (or free at zero).
    pub fn slack<S: Scalar>(lp: &LpProblem<S>) -> Self {
        let n = lp.num_cols();
        let mut status = Vec::with_capacity(n + lp.num_rows());
        for j in 0..n {
            status.push(default_nonbasic(lp.col_lo[j].as_ref(), lp.col_hi[j].as_ref()));
        }
        status.extend(std::iter::repeat(VarStatus::Basic).take(lp.num_rows()));
        Basis { status }
    }
}

fn default_nonbasic<S>(lo: Option<&S>, hi: Option<&S>) -> VarStatus {
    match (lo, hi) {
        (Some(_), _) => VarStatus::AtLower,
        (None, Some(_)) => VarStatus::AtUpper,
        (None, None) => VarStatus::Free,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpResult<S> {
    pub x: Vec<S>,
    /// Dual value of every row (`y >= 0` on a binding lower bound when minimizing).
    pub duals: Vec<S>,
    pub objective: S,
    pub basis: Basis,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 1_000_000,
            refactor_every: 80,
            bland_after: 60,
        }
    }
}

/// Relative bound widening of the first float pass.
const PERTURBATION: f64 = 1e-7;
/// Perturbed passes before a float solve falls back to Bland's rule.
const PERTURBATION_ROUNDS: u64 = 4;
/// Consecutive degenerate pivots that end an unprotected float pass.
const STALL_PIVOTS: usize = 500;

struct Eta<S> {
    pos: usize,
    pivot: S,
    col: Vec<(usize, S)>,
}

struct Solver<'a, S: Scalar> {
    lp: &'a LpProblem<S>,
    n: usize,
    m: usize,
    lo: Vec<Option<S>>,
    hi: Vec<Option<S>>,
    status: Vec<VarStatus>,
    head: Vec<usize>,
    value: Vec<S>,
    lu: Option<LuFactors<S>>,
    etas: Vec<Eta<S>>,
    opts: SimplexOptions,
    iterations: usize,
    ftol: S,
    /// Devex reference weights (float solves only).
    weights: Vec<f64>,
    /// Row-wise copy of the structural columns.
    rows: Vec<Vec<(usize, S)>>,
    /// Variables with equal finite bounds; they never enter.
    fixed: Vec<bool>,
}

/// Scatter buffer for one row of `B^-1 A` over the structural columns.
struct PivotRow<S> {
    acc: Vec<S>,
    mark: Vec<bool>,
    touched: Vec<usize>,
}

impl<S: Scalar> PivotRow<S> {
    fn new(n: usize) -> Self {
        PivotRow {
            acc: vec![S::zero(); n],
            mark: vec![false; n],
            touched: Vec::new(),
        }
    }

    fn compute(&mut self, rows: &[Vec<(usize, S)>], rho: &[S]) {
        for (i, r) in rho.iter().enumerate() {
            if r.is_negligible() {
                continue;
            }
            for (j, a) in &rows[i] {
                if !self.mark[*j] {
                    self.mark[*j] = true;
                    self.touched.push(*j);
                }
                self.acc[*j] += r.clone() * a.clone();
            }
        }
    }

    fn clear(&mut self) {
        for &j in &self.touched {
            self.acc[j] = S::zero();
            self.mark[j] = false;
        }
        self.touched.clear();
    }
}

/// Solves `min c x` subject to the row and column bounds of `lp`.
pub fn solve<S: Scalar>(
    lp: &LpProblem<S>,
    warm: Option<&Basis>,
    opts: &SimplexOptions,
) -> Result<LpResult<S>, LpStatus> {
    let mut s = Solver::new(lp, warm, opts.clone());
    s.run()?;
    Ok(s.finish())
}

impl<'a, S: Scalar> Solver<'a, S> {
    fn new(lp: &'a LpProblem<S>, warm: Option<&Basis>, opts: SimplexOptions) -> Self {
        let n = lp.num_cols();
        let m = lp.num_rows();
        let mut lo = lp.col_lo.clone();
        lo.extend(lp.row_lo.iter().cloned());
        let mut hi = lp.col_hi.clone();
        hi.extend(lp.row_hi.iter().cloned());

        let mut status = match warm {
            Some(b) if b.status.len() == n + m => b.status.clone(),
            _ => Basis::slack(lp).status,
        };
        // Repair statuses against the current bounds.
        let mut basic: Vec<usize> = Vec::with_capacity(m);
        for j in 0..n + m {
            match status[j] {
                VarStatus::Basic => basic.push(j),
                VarStatus::AtLower if lo[j].is_none() => {
                    status[j] = default_nonbasic(lo[j].as_ref(), hi[j].as_ref())
                }
                VarStatus::AtUpper if hi[j].is_none() => {
                    status[j] = default_nonbasic(lo[j].as_ref(), hi[j].as_ref())
                }
                VarStatus::Free if lo[j].is_some() || hi[j].is_some() => {
                    status[j] = default_nonbasic(lo[j].as_ref(), hi[j].as_ref())
                }
                _ => {}
            }
        }
        if basic.len() != m {
            status = Basis::slack(lp).status;
            basic = (n..n + m).collect();
        }
        let ftol = S::feas_tol();
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); m];
        for (j, col) in lp.cols.iter().enumerate() {
            for (r, v) in col {
                rows[*r].push((j, v.clone()));
            }
        }
        let fixed = (0..n + m)
            .map(|j| matches!((&lo[j], &hi[j]), (Some(l), Some(h)) if l == h))
            .collect();
        let mut solver = Solver {
            lp,
            n,
            m,
            lo,
            hi,
            status,
            head: basic,
            value: vec![S::zero(); n + m],
            lu: None,
            etas: Vec::new(),
            opts,
            iterations: 0,
            ftol,
            weights: Vec::new(),
            rows,
            fixed,
        };
        for j in 0..n + m {
            if solver.status[j] != VarStatus::Basic {
                solver.value[j] = solver.nonbasic_value(j);
            }
        }
        solver
    }

    fn nonbasic_value(&self, j: usize) -> S {
        match self.status[j] {
            VarStatus::AtLower => self.lo[j].clone().unwrap_or_else(S::zero),
            VarStatus::AtUpper => self.hi[j].clone().unwrap_or_else(S::zero),
            _ => S::zero(),
        }
    }

    fn column(&self, j: usize) -> Vec<(usize, S)> {
        if j < self.n {
            self.lp.cols[j].clone()
        } else {
            vec![(j - self.n, -S::one())]
        }
    }

    fn cost(&self, j: usize) -> S {
        if j < self.n {
            self.lp.obj[j].clone()
        } else {
            S::zero()
        }
    }

    /// Factorizes the basis, swapping in logicals for dependent columns.
    fn refactor(&mut self) {
        loop {
            let cols: Vec<Vec<(usize, S)>> = self.head.iter().map(|&j| self.column(j)).collect();
            match factorize(self.m, &cols) {
                Ok(lu) => {
                    self.lu = Some(lu);
                    self.etas.clear();
                    break;
                }
                Err(sing) => {
                    for (&p, &r) in sing.positions.iter().zip(&sing.rows) {
                        let out = self.head[p];
                        let logical = self.n + r;
                        self.status[out] = default_nonbasic(self.lo[out].as_ref(), self.hi[out].as_ref());
                        self.value[out] = self.nonbasic_value(out);
                        self.status[logical] = VarStatus::Basic;
                        self.head[p] = logical;
                    }
                }
            }
        }
        self.recompute_basics();
    }

    fn recompute_basics(&mut self) {
        let mut rhs = vec![S::zero(); self.m];
        for j in 0..self.n + self.m {
            if self.status[j] == VarStatus::Basic || self.value[j].is_zero() {
                continue;
            }
            if j < self.n {
                for (r, v) in &self.lp.cols[j] {
                    rhs[*r] -= v.clone() * self.value[j].clone();
                }
            } else {
                rhs[j - self.n] += self.value[j].clone();
            }
        }
        let z = self.ftran(rhs);
        for (p, &j) in self.head.iter().enumerate() {
            self.value[j] = z[p].clone();
        }
    }

    fn ftran(&self, rhs: Vec<S>) -> Vec<S> {
        let mut z = self.lu.as_ref().expect("factorized").solve(rhs);
        for eta in &self.etas {
            let zr = std::mem::replace(&mut z[eta.pos], S::zero());
            if zr.is_zero() {
                continue;
            }
            let zr = zr / eta.pivot.clone();
            for (p, a) in &eta.col {
                z[*p] -= a.clone() * zr.clone();
            }
            z[eta.pos] = zr;
        }
        z
    }

    fn btran(&self, mut c: Vec<S>) -> Vec<S> {
        for eta in self.etas.iter().rev() {
            let mut v = c[eta.pos].clone();
            for (p, a) in &eta.col {
                if !c[*p].is_zero() {
                    v -= a.clone() * c[*p].clone();
                }
            }
            c[eta.pos] = v / eta.pivot.clone();
        }
        self.lu.as_ref().expect("factorized").solve_transpose(c)
    }

    fn infeasibility(&self, j: usize) -> i8 {
        let v = &self.value[j];
        if let Some(l) = &self.lo[j] {
            if *v < l.clone() - self.ftol.clone() {
                return -1;
            }
        }
        if let Some(h) = &self.hi[j] {
            if *v > h.clone() + self.ftol.clone() {
                return 1;
            }
        }
        0
    }

    fn run(&mut self) -> Result<(), LpStatus> {
        if S::EXACT {
            self.refactor();
            return self.optimize(true).map(drop);
        }
        // Float solves first widen the bounds of the starting basics by small
        // random amounts: Potts vertices are massively degenerate and the
        // pivots stall otherwise. Widening only basics keeps a feasible start
        // feasible. The true bounds are restored for a cleanup pass, which
        // perturbs again from its own basis if it stalls in turn; Bland's
        // rule is the last resort since tolerances void its guarantee.
        for round in 0..PERTURBATION_ROUNDS {
            let (lo, hi) = self.perturb_bounds(round);
            self.refactor();
            let perturbed = self.optimize(false);
            self.lo = lo;
            self.hi = hi;
            perturbed?;
            for j in 0..self.n + self.m {
                if self.status[j] != VarStatus::Basic {
                    self.value[j] = self.nonbasic_value(j);
                }
            }
            self.refactor();
            if self.optimize(false)? {
                return Ok(());
            }
        }
        self.optimize(true).map(drop)
    }

    /// Widens the finite bounds of the basic, non-fixed variables by small
    /// random amounts and returns the original bounds.
    fn perturb_bounds(&mut self, round: u64) -> (Vec<Option<S>>, Vec<Option<S>>) {
        let saved = (self.lo.clone(), self.hi.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 + round);
        for j in 0..self.n + self.m {
            if self.fixed[j] || self.status[j] != VarStatus::Basic {
                continue;
            }
            if let Some(l) = &mut self.lo[j] {
                let xi = PERTURBATION * rng.gen_range(0.5..1.0) * (1.0 + l.to_f64().abs());
                *l -= S::from_f64(xi);
            }
            if let Some(h) = &mut self.hi[j] {
                let xi = PERTURBATION * rng.gen_range(0.5..1.0) * (1.0 + h.to_f64().abs());
                *h += S::from_f64(xi);
            }
        }
        saved
    }

    /// Primal simplex from the current basis until no variable prices out.
    /// Float solves keep reduced costs up to date from the pivot row and
    /// price with Devex weights; exact solves recompute them every iteration
    /// and price by the largest reduced cost.
    ///
    /// Without `bland`, a run of degenerate pivots ends the pass early with
    /// `Ok(false)` instead of switching rules.
    fn optimize(&mut self, bland: bool) -> Result<bool, LpStatus> {
        let mut degenerate = 0usize;
        let mut verified = false;
        let incremental = !S::EXACT;
        if incremental {
            self.weights = vec![1.0; self.n + self.m];
        }
        let mut d: Vec<S> = Vec::new();
        let mut d_valid = false;
        let mut row = PivotRow::new(self.n);
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(LpStatus::IterationLimit);
            }
            if self.etas.len() >= self.opts.refactor_every {
                self.refactor();
                d_valid = false;
            }
            let phase1 = self.head.iter().any(|&j| self.infeasibility(j) != 0);
            if phase1 || !d_valid {
                // Phase costs on basic variables.
                let cb: Vec<S> = self
                    .head
                    .iter()
                    .map(|&j| match self.infeasibility(j) {
                        -1 => -S::one(),
                        1 => S::one(),
                        _ if phase1 => S::zero(),
                        _ => self.cost(j),
                    })
                    .collect();
                let y = self.btran(cb);
                d = self.reduced_costs(&y, phase1);
                d_valid = incremental && !phase1;
            }
            if !bland && degenerate >= STALL_PIVOTS {
                return Ok(false);
            }
            let bland = bland && degenerate >= self.opts.bland_after;
            let Some(q) = self.price(&d, phase1, bland) else {
                if !verified && !self.etas.is_empty() {
                    self.refactor();
                    verified = true;
                    d_valid = false;
                    continue;
                }
                if phase1 {
                    return Err(LpStatus::Infeasible);
                }
                return Ok(true);
            };
            verified = false;
            let dir_up = d[q] < S::zero();

            let mut rhs = vec![S::zero(); self.m];
            for (r, v) in self.column(q) {
                rhs[r] = v;
            }
            let alpha = self.ftran(rhs);
            let step = self.ratio_test(q, dir_up, &alpha, phase1, bland);
            let (theta, leave) = match step {
                Some(s) => s,
                None => {
                    if phase1 {
                        // cannot happen for a descent direction of a bounded objective
                        return Err(LpStatus::Infeasible);
                    }
                    return Err(LpStatus::Unbounded);
                }
            };
            self.iterations += 1;
            if theta.abs() <= self.ftol {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            // Move along the edge.
            let signed = if dir_up { theta.clone() } else { -theta.clone() };
            if !signed.is_zero() {
                for (p, &j) in self.head.iter().enumerate() {
                    if !alpha[p].is_zero() {
                        self.value[j] -= alpha[p].clone() * signed.clone();
                    }
                }
                self.value[q] += signed;
            }
            match leave {
                Leave::Flip => {
                    self.status[q] = if dir_up { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.value[q] = self.nonbasic_value(q);
                }
                Leave::Pivot { pos, to_upper } => {
                    if incremental {
                        self.pivot_update(q, pos, &alpha[pos], &mut d, d_valid, &mut row);
                    }
                    let out = self.head[pos];
                    self.status[out] = if to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.value[out] = self.nonbasic_value(out);
                    self.status[q] = VarStatus::Basic;
                    self.head[pos] = q;
                    let col: Vec<(usize, S)> = alpha
                        .iter()
                        .enumerate()
                        .filter(|(p, a)| *p != pos && !a.is_negligible())
                        .map(|(p, a)| (p, a.clone()))
                        .collect();
                    self.etas.push(Eta {
                        pos,
                        pivot: alpha[pos].clone(),
                        col,
                    });
                }
            }
        }
    }

    /// Reduced costs of the nonbasic variables (zero for basic ones).
    fn reduced_costs(&self, y: &[S], phase1: bool) -> Vec<S> {
        (0..self.n + self.m)
            .map(|j| {
                if self.status[j] == VarStatus::Basic {
                    return S::zero();
                }
                let c = if phase1 { S::zero() } else { self.cost(j) };
                if j < self.n {
                    let mut d = c;
                    for (r, v) in &self.lp.cols[j] {
                        d -= v.clone() * y[*r].clone();
                    }
                    d
                } else {
                    c + y[j - self.n].clone()
                }
            })
            .collect()
    }

    /// Updates reduced costs (when `d_valid`) and Devex weights for `q`
    /// entering at basis position `pos`, from the pivot row of the basis
    /// before the change.
    fn pivot_update(&mut self, q: usize, pos: usize, alpha_q: &S, d: &mut [S], d_valid: bool, row: &mut PivotRow<S>) {
        let mut e = vec![S::zero(); self.m];
        e[pos] = S::one();
        let rho = self.btran(e);
        row.compute(&self.rows, &rho);
        let theta = d[q].clone() / alpha_q.clone();
        let aq = alpha_q.to_f64();
        let wq = self.weights[q];
        let mut max_w: f64 = 1.0;
        let n = self.n;
        let mut visit = |j: usize, a: &S, status: &[VarStatus], weights: &mut [f64]| {
            if j == q || status[j] == VarStatus::Basic {
                return;
            }
            if d_valid {
                d[j] -= theta.clone() * a.clone();
            }
            let r = a.to_f64() / aq;
            let w = r * r * wq;
            if w > weights[j] {
                weights[j] = w;
                max_w = max_w.max(w);
            }
        };
        for &j in &row.touched {
            visit(j, &row.acc[j], &self.status, &mut self.weights);
        }
        for (i, r) in rho.iter().enumerate() {
            if !r.is_negligible() {
                visit(n + i, &-r.clone(), &self.status, &mut self.weights);
            }
        }
        row.clear();
        let out = self.head[pos];
        if d_valid {
            d[out] = -theta;
        }
        d[q] = S::zero();
        self.weights[out] = (wq / (aq * aq)).max(1.0);
        if max_w > 1e8 {
            self.weights.iter_mut().for_each(|w| *w = 1.0);
        }
    }

    /// Chooses an entering variable from the reduced costs `d`.
    fn price(&self, d: &[S], phase1: bool, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_exact: Option<(usize, S)> = None;
        for j in 0..self.n + self.m {
            let st = self.status[j];
            if st == VarStatus::Basic || self.fixed[j] {
                continue;
            }
            let dj = &d[j];
            let tol = if phase1 || j >= self.n {
                S::opt_tol()
            } else {
                S::opt_tol() * (S::one() + self.lp.obj[j].abs())
            };
            let eligible = match st {
                VarStatus::AtLower => *dj < -tol.clone(),
                VarStatus::AtUpper => *dj > tol,
                VarStatus::Free => dj.abs() > tol,
                VarStatus::Basic => false,
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some(j);
            }
            if S::EXACT {
                let score = dj.abs();
                if best_exact.as_ref().map_or(true, |(_, s)| score > *s) {
                    best_exact = Some((j, score));
                }
            } else {
                let v = dj.to_f64();
                let score = v * v / self.weights[j];
                if best.map_or(true, |(_, s)| score > s) {
                    best = Some((j, score));
                }
            }
        }
        best.map(|b| b.0).or(best_exact.map(|b| b.0))
    }

    fn ratio_test(
        &self,
        q: usize,
        dir_up: bool,
        alpha: &[S],
        phase1: bool,
        bland: bool,
    ) -> Option<(S, Leave)> {
        let ptol = S::pivot_tol();
        // rate of change of basic p per unit step: -alpha_p * dir
        let mut cands: Vec<(usize, S, S, bool, S)> = Vec::new(); // pos, ratio, relaxed, to_upper, |rate|
        for (p, &j) in self.head.iter().enumerate() {
            let a = &alpha[p];
            if a.abs() <= ptol {
                continue;
            }
            let rate = if dir_up { -a.clone() } else { a.clone() };
            let v = &self.value[j];
            let inf = self.infeasibility(j);
            let target: Option<(S, bool)> = if rate < S::zero() {
                if inf == 1 {
                    self.hi[j].clone().map(|h| (h, true))
                } else if inf == 0 {
                    self.lo[j].clone().map(|l| (l, false))
                } else {
                    None
                }
            } else if inf == -1 {
                self.lo[j].clone().map(|l| (l, false))
            } else if inf == 0 {
                self.hi[j].clone().map(|h| (h, true))
            } else {
                None
            };
            let Some((bound, to_upper)) = target else {
                continue;
            };
            let _ = phase1;
            let ratio = (bound.clone() - v.clone()) / rate.clone();
            let ratio = S::max_of(ratio, S::zero());
            let relaxed = if rate < S::zero() {
                (bound - self.ftol.clone() - v.clone()) / rate.clone()
            } else {
                (bound + self.ftol.clone() - v.clone()) / rate.clone()
            };
            cands.push((p, ratio, relaxed, to_upper, rate.abs()));
        }
        let flip = match (&self.lo[q], &self.hi[q]) {
            (Some(l), Some(h)) => Some(h.clone() - l.clone()),
            _ => None,
        };

        if cands.is_empty() {
            return flip.map(|f| (f, Leave::Flip));
        }
        let pick = if S::EXACT || bland {
            let min = cands
                .iter()
                .map(|c| c.1.clone())
                .fold(None, |acc: Option<S>, r| Some(acc.map_or(r.clone(), |a| S::min_of(a, r))))
                .unwrap();
            let tie = if S::EXACT { S::zero() } else { self.ftol.clone() };
            let ties = cands.iter().filter(|c| c.1 <= min.clone() + tie.clone());
            if bland {
                ties.min_by_key(|c| self.head[c.0]).unwrap()
            } else {
                ties.max_by(|a, b| a.4.partial_cmp(&b.4).unwrap()).unwrap()
            }
        } else {
            let bound = cands
                .iter()
                .map(|c| c.2.clone())
                .fold(None, |acc: Option<S>, r| Some(acc.map_or(r.clone(), |a| S::min_of(a, r))))
                .unwrap();
            cands
                .iter()
                .filter(|c| c.1 <= bound)
                .max_by(|a, b| a.4.partial_cmp(&b.4).unwrap())
                .unwrap_or_else(|| {
                    cands
                        .iter()
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .unwrap()
                })
        };
        if let Some(f) = flip {
            if f <= pick.1 {
                return Some((f, Leave::Flip));
            }
        }
        Some((
            pick.1.clone(),
            Leave::Pivot {
                pos: pick.0,
                to_upper: pick.3,
            },
        ))
    }

    fn finish(mut self) -> LpResult<S> {
        if !self.etas.is_empty() {
            self.refactor();
        }
        let cb: Vec<S> = self.head.iter().map(|&j| self.cost(j)).collect();
        let duals = self.btran(cb);
        let x: Vec<S> = self.value[..self.n].to_vec();
        let mut objective = S::zero();
        for (j, v) in x.iter().enumerate() {
            if !v.is_zero() {
                objective += self.lp.obj[j].clone() * v.clone();
            }
        }
        LpResult {
            x,
            duals,
            objective,
            basis: Basis {
                status: self.status,
            },
            iterations: self.iterations,
        }
    }
}

enum Leave {
    Flip,
    Pivot { pos: usize, to_upper: bool },
}
