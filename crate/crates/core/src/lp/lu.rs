//! Sparse LU factorization of simplex basis matrices.
//!
//! Right-looking Gaussian elimination with Markowitz pivot selection and
//! threshold partial pivoting. Basis matrices of the Potts formulations are
//! mostly triangular, so singleton pivots dominate and fill stays small.

use std::collections::BTreeSet;

use crate::numeric::Scalar;

/// One elimination step: pivot on `(row, pos)`.
#[derive(Clone, Debug)]
struct Step<S> {
    row: usize,
    pos: usize,
    pivot: S,
    // multipliers l_i for rows eliminated later
    lower: Vec<(usize, S)>,
    // entries of the pivot row in positions eliminated later
    upper: Vec<(usize, S)>,
}

#[derive(Clone, Debug)]
pub struct LuFactors<S> {
    m: usize,
    steps: Vec<Step<S>>,
}

/// Positions and rows left without a pivot.
#[derive(Clone, Debug, PartialEq)]
pub struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

const THRESHOLD: f64 = 0.01;
const MARKOWITZ_CANDIDATES: usize = 4;

/// Factorizes the `m x m` matrix whose column `p` is `columns[p]`
/// (sparse `(row, value)` lists).
pub fn factorize<S: Scalar>(
    m: usize,
    columns: &[Vec<(usize, S)>],
) -> Result<LuFactors<S>, Singular> {
    assert_eq!(columns.len(), m);
    let tiny = if S::EXACT { S::zero() } else { S::from_f64(1e-11) };

    let mut colv: Vec<Vec<(usize, S)>> = columns
        .iter()
        .map(|c| {
            c.iter()
                .filter(|(_, v)| v.abs() > tiny)
                .cloned()
                .collect()
        })
        .collect();
    let mut rowp: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (p, col) in colv.iter().enumerate() {
        for (r, _) in col {
            rowp[*r].push(p);
        }
    }
    let mut col_set: BTreeSet<(usize, usize)> =
        colv.iter().enumerate().map(|(p, c)| (c.len(), p)).collect();
    let mut row_set: BTreeSet<(usize, usize)> =
        rowp.iter().enumerate().map(|(r, c)| (c.len(), r)).collect();
    let mut row_active = vec![true; m];
    let mut col_active = vec![true; m];
    let mut steps: Vec<Step<S>> = Vec::with_capacity(m);
    let mut scratch: Vec<usize> = vec![usize::MAX; m];
    let mut failed_cols: Vec<usize> = Vec::new();

    loop {
        let Some(&(ccount, cmin)) = col_set.iter().next() else {
            break;
        };
        if ccount == 0 {
            col_set.remove(&(0, cmin));
            col_active[cmin] = false;
            failed_cols.push(cmin);
            continue;
        }
        let (r, c) = match choose_pivot(&colv, &rowp, &col_set, &row_set, ccount, cmin, &tiny) {
            Some(rc) => rc,
            None => {
                // every remaining column is numerically empty
                let rest: Vec<usize> = col_set.iter().map(|&(_, p)| p).collect();
                for p in rest {
                    col_set.remove(&(colv[p].len(), p));
                    col_active[p] = false;
                    failed_cols.push(p);
                }
                break;
            }
        };

        let pivot = colv[c]
            .iter()
            .find(|(i, _)| *i == r)
            .map(|(_, v)| v.clone())
            .expect("pivot entry");

        // U row: entries of row r in other active columns; drop them from the columns.
        let mut upper: Vec<(usize, S)> = Vec::with_capacity(rowp[r].len());
        let row_positions = std::mem::take(&mut rowp[r]);
        for &j in &row_positions {
            if j == c {
                continue;
            }
            let col = &mut colv[j];
            let idx = col.iter().position(|(i, _)| *i == r).expect("row entry");
            col_set.remove(&(col.len(), j));
            let (_, v) = col.swap_remove(idx);
            col_set.insert((col.len(), j));
            upper.push((j, v));
        }
        row_set.remove(&(row_positions.len(), r));
        row_active[r] = false;

        // L column: multipliers for the other rows of column c.
        let pivot_col = std::mem::take(&mut colv[c]);
        col_set.remove(&(pivot_col.len(), c));
        col_active[c] = false;
        let mut lower: Vec<(usize, S)> = Vec::with_capacity(pivot_col.len());
        for (i, v) in pivot_col {
            if i == r {
                continue;
            }
            let rp = &mut rowp[i];
            let idx = rp.iter().position(|&p| p == c).expect("col entry");
            row_set.remove(&(rp.len(), i));
            rp.swap_remove(idx);
            row_set.insert((rp.len(), i));
            lower.push((i, v / pivot.clone()));
        }

        // Schur complement update.
        if !lower.is_empty() {
            for (j, urj) in &upper {
                let col = &mut colv[*j];
                let old_len = col.len();
                for (idx, (i, _)) in col.iter().enumerate() {
                    scratch[*i] = idx;
                }
                let mut removed = false;
                for (i, li) in &lower {
                    let delta = li.clone() * urj.clone();
                    if scratch[*i] != usize::MAX {
                        let e = &mut col[scratch[*i]].1;
                        *e -= delta;
                        if e.abs() <= tiny {
                            removed = true;
                        }
                    } else {
                        let v = -delta;
                        if v.abs() > tiny {
                            scratch[*i] = col.len();
                            col.push((*i, v));
                            let rp = &mut rowp[*i];
                            row_set.remove(&(rp.len(), *i));
                            rp.push(*j);
                            row_set.insert((rp.len(), *i));
                        }
                    }
                }
                for (i, _) in col.iter() {
                    scratch[*i] = usize::MAX;
                }
                if removed {
                    let mut keep = Vec::with_capacity(col.len());
                    for (i, v) in col.drain(..) {
                        if v.abs() <= tiny {
                            let rp = &mut rowp[i];
                            let idx = rp.iter().position(|&p| p == *j).expect("fill entry");
                            row_set.remove(&(rp.len(), i));
                            rp.swap_remove(idx);
                            row_set.insert((rp.len(), i));
                        } else {
                            keep.push((i, v));
                        }
                    }
                    *col = keep;
                }
                if col.len() != old_len {
                    col_set.remove(&(old_len, *j));
                    col_set.insert((col.len(), *j));
                }
            }
        }

        steps.push(Step {
            row: r,
            pos: c,
            pivot,
            lower,
            upper,
        });
    }

    if steps.len() < m {
        let rows = (0..m).filter(|&r| row_active[r]).collect();
        let mut positions: Vec<usize> = failed_cols;
        positions.extend((0..m).filter(|&p| col_active[p]));
        positions.sort_unstable();
        positions.dedup();
        return Err(Singular { positions, rows });
    }
    Ok(LuFactors { m, steps })
}

fn choose_pivot<S: Scalar>(
    colv: &[Vec<(usize, S)>],
    rowp: &[Vec<usize>],
    col_set: &BTreeSet<(usize, usize)>,
    row_set: &BTreeSet<(usize, usize)>,
    ccount: usize,
    cmin: usize,
    tiny: &S,
) -> Option<(usize, usize)> {
    // Column singleton: no fill, no multipliers.
    if ccount == 1 {
        let (r, v) = &colv[cmin][0];
        if v.abs() > *tiny {
            return Some((*r, cmin));
        }
    }
    // Row singleton: no fill.
    if let Some(&(1, r)) = row_set.iter().next() {
        let c = rowp[r][0];
        let col = &colv[c];
        let colmax = col.iter().fold(S::zero(), |m, (_, v)| S::max_of(m, v.abs()));
        let v = col.iter().find(|(i, _)| *i == r).map(|(_, v)| v.abs())?;
        if v > *tiny && (S::EXACT || v >= colmax * S::from_f64(THRESHOLD)) {
            return Some((r, c));
        }
    }
    // Markowitz search over the sparsest columns.
    let mut best: Option<(usize, S, usize, usize)> = None;
    for &(count, c) in col_set.iter().take(MARKOWITZ_CANDIDATES) {
        if count == 0 {
            continue;
        }
        let col = &colv[c];
        let colmax = col.iter().fold(S::zero(), |m, (_, v)| S::max_of(m, v.abs()));
        if colmax <= *tiny {
            continue;
        }
        let thresh = if S::EXACT {
            S::zero()
        } else {
            colmax * S::from_f64(THRESHOLD)
        };
        for (r, v) in col {
            let a = v.abs();
            if a <= *tiny || a < thresh {
                continue;
            }
            let cost = (rowp[*r].len() - 1) * (count - 1);
            let better = match &best {
                None => true,
                Some((bc, bv, _, _)) => cost < *bc || (cost == *bc && a > *bv),
            };
            if better {
                best = Some((cost, a, *r, c));
            }
        }
    }
    if let Some((_, _, r, c)) = best {
        return Some((r, c));
    }
    // Fall back to any acceptable entry.
    for &(_, c) in col_set.iter() {
        let col = &colv[c];
        if let Some((r, _)) = col
            .iter()
            .filter(|(_, v)| v.abs() > *tiny)
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        {
            return Some((*r, c));
        }
    }
    None
}

impl<S: Scalar> LuFactors<S> {
    pub fn dim(&self) -> usize {
        self.m
    }

    /// Solves `B z = rhs`; `rhs` is indexed by row, the result by position.
    pub fn solve(&self, mut v: Vec<S>) -> Vec<S> {
        for step in &self.steps {
            let vr = v[step.row].clone();
            if vr.is_zero() {
                continue;
            }
            for (i, l) in &step.lower {
                v[*i] -= l.clone() * vr.clone();
            }
        }
        let mut z = vec![S::zero(); self.m];
        for step in self.steps.iter().rev() {
            let mut val = std::mem::replace(&mut v[step.row], S::zero());
            for (j, u) in &step.upper {
                if !z[*j].is_zero() {
                    val -= u.clone() * z[*j].clone();
                }
            }
            if !val.is_zero() {
                z[step.pos] = val / step.pivot.clone();
            }
        }
        z
    }

    /// Solves `B^T y = c`; `c` is indexed by position, the result by row.
    pub fn solve_transpose(&self, mut work: Vec<S>) -> Vec<S> {
        let mut t = vec![S::zero(); self.m];
        for step in &self.steps {
            let w = std::mem::replace(&mut work[step.pos], S::zero());
            if w.is_zero() {
                continue;
            }
            let tr = w / step.pivot.clone();
            for (j, u) in &step.upper {
                work[*j] -= u.clone() * tr.clone();
            }
            t[step.row] = tr;
        }
        for step in self.steps.iter().rev() {
            let mut s = S::zero();
            for (i, l) in &step.lower {
                if !t[*i].is_zero() {
                    s += l.clone() * t[*i].clone();
                }
            }
            if !s.is_zero() {
                t[step.row] -= s;
            }
        }
        t
    }

    /// Number of stored off-diagonal entries.
    pub fn nnz(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.lower.len() + s.upper.len() + 1)
            .sum()
    }
}
