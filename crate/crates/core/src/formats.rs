//! Text formats: instances, labelings, LP and dual dumps, stability verdicts,
//! finder reports, and the decomposition map image.

use std::fmt::Write as _;
use std::path::Path;

use crate::block_finder::FinderReport;
use crate::dual_decomp::{BlockDualSolution, BlockStatus, DualSolution};
use crate::error::{Error, Result};
use crate::lp_solver::PrimalSolution;
use crate::model::{Cost, Labeling, PottsInstance};
use crate::numeric::{format_g17, Scalar};
use crate::pnm;
use crate::stability::StabilityVerdict;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Non-empty lines with `#` comments stripped, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

/// Decimal number; exact in rational mode, which also accepts `p/q`.
pub fn parse_number<S: Scalar>(tok: &str) -> Option<S> {
    if !S::EXACT {
        let v: f64 = tok.parse().ok()?;
        return v.is_finite().then(|| S::from_f64(v));
    }
    if let Some((p, q)) = tok.split_once('/') {
        let p: i64 = p.parse().ok()?;
        let q: i64 = q.parse().ok()?;
        return (q != 0).then(|| S::from_ratio(p, q));
    }
    let (mantissa, exp) = match tok.find(['e', 'E']) {
        Some(pos) => (&tok[..pos], tok[pos + 1..].parse::<i32>().ok()?),
        None => (tok, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let mut value = S::zero();
    let ten = S::from_ratio(10, 1);
    for c in int.chars().chain(frac.chars()) {
        let d = c.to_digit(10)?;
        value = value * ten.clone() + S::from_ratio(d as i64, 1);
    }
    let shift = exp - frac.len() as i32;
    for _ in 0..shift.unsigned_abs() {
        if shift > 0 {
            value *= ten.clone();
        } else {
            value /= ten.clone();
        }
    }
    Some(if neg { -value } else { value })
}

fn number<S: Scalar>(tok: &str, line: usize) -> Result<S> {
    parse_number(tok).ok_or_else(|| parse_err(line, format!("bad number {tok:?}")))
}

fn index(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| parse_err(line, format!("bad index {tok:?}")))
}

fn cost<S: Scalar>(tok: &str, line: usize) -> Result<Cost<S>> {
    if tok.eq_ignore_ascii_case("inf") || tok.eq_ignore_ascii_case("+inf") {
        Ok(Cost::Forbidden)
    } else {
        number(tok, line).map(Cost::Finite)
    }
}

fn fmt_num<S: Scalar>(v: &S) -> String {
    format_g17(v.to_f64())
}

/// `POTTS n k m`, then `n` rows of `k` costs (`inf` for forbidden), then
/// `m` rows `u v w`. Values carry 17 significant digits.
pub fn format_instance<S: Scalar>(inst: &PottsInstance<S>) -> String {
    let mut s = format!("POTTS {} {} {}\n", inst.num_nodes(), inst.num_labels(), inst.num_edges());
    for u in 0..inst.num_nodes() {
        let row: Vec<String> = inst
            .node_costs(u)
            .iter()
            .map(|c| match c {
                Cost::Finite(v) => fmt_num(v),
                Cost::Forbidden => "inf".to_string(),
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    for e in inst.edges() {
        let _ = writeln!(s, "{} {} {}", e.u, e.v, fmt_num(&e.weight));
    }
    s
}

pub fn parse_instance<S: Scalar>(text: &str) -> Result<PottsInstance<S>> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty instance file"))?;
    if header.len() != 4 || header[0] != "POTTS" {
        return Err(parse_err(hl, "expected `POTTS <nodes> <labels> <edges>`"));
    }
    let n = index(header[1], hl)?;
    let k = index(header[2], hl)?;
    let m = index(header[3], hl)?;
    let mut costs = Vec::with_capacity(n);
    for u in 0..n {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(hl, format!("missing cost row for node {u}")))?;
        if toks.len() != k {
            return Err(parse_err(ln, format!("expected {k} costs, found {}", toks.len())));
        }
        costs.push(toks.iter().map(|t| cost(t, ln)).collect::<Result<Vec<_>>>()?);
    }
    let mut edges = Vec::with_capacity(m);
    for e in 0..m {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(hl, format!("missing edge row {e}")))?;
        if toks.len() != 3 {
            return Err(parse_err(ln, "expected `<u> <v> <weight>`"));
        }
        edges.push((index(toks[0], ln)?, index(toks[1], ln)?, number(toks[2], ln)?));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing data after the last edge"));
    }
    PottsInstance::new(k, costs, edges)
}

pub fn read_instance<S: Scalar>(path: impl AsRef<Path>) -> Result<PottsInstance<S>> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn write_instance<S: Scalar>(inst: &PottsInstance<S>, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, format_instance(inst))?)
}

/// Node cost rows, either a bare block of `k` tokens per line or a whole
/// instance file (whose costs are taken).
pub fn parse_cost_block<S: Scalar>(text: &str) -> Result<Vec<Vec<Cost<S>>>> {
    let first = content_lines(text).next();
    if first.as_ref().map_or(false, |(_, t)| t[0] == "POTTS") {
        let inst: PottsInstance<S> = parse_instance(text)?;
        return Ok((0..inst.num_nodes()).map(|u| inst.node_costs(u).to_vec()).collect());
    }
    let mut rows = Vec::new();
    let mut width = None;
    for (ln, toks) in content_lines(text) {
        if *width.get_or_insert(toks.len()) != toks.len() {
            return Err(parse_err(ln, "rows have different lengths"));
        }
        rows.push(toks.iter().map(|t| cost(t, ln)).collect::<Result<Vec<_>>>()?);
    }
    Ok(rows)
}

/// Labels separated by whitespace; a leading `labeling` keyword is allowed.
pub fn parse_labeling(text: &str) -> Result<Labeling> {
    let mut labels = Vec::new();
    for (ln, toks) in content_lines(text) {
        for (i, t) in toks.iter().enumerate() {
            if i == 0 && (*t == "labeling" || *t == "witness") {
                continue;
            }
            labels.push(index(t, ln)?);
        }
    }
    Ok(Labeling::new(labels))
}

pub fn format_labeling(f: &Labeling) -> String {
    format!("{f}\n")
}

/// `x u i value`, `mu u v i j value` and `objective value` lines.
pub fn format_primal<S: Scalar>(inst: &PottsInstance<S>, x: &PrimalSolution<S>) -> String {
    let k = x.num_labels();
    let mut s = String::new();
    for u in 0..x.num_nodes() {
        for i in 0..k {
            let _ = writeln!(s, "x {u} {i} {}", fmt_num(x.node_marginal(u, i)));
        }
    }
    for (idx, e) in inst.edges().iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                let _ = writeln!(s, "mu {} {} {i} {j} {}", e.u, e.v, fmt_num(x.edge_marginal(idx, i, j)));
            }
        }
    }
    let _ = writeln!(s, "objective {}", fmt_num(&x.objective));
    s
}

pub fn parse_primal<S: Scalar>(inst: &PottsInstance<S>, text: &str) -> Result<PrimalSolution<S>> {
    let n = inst.num_nodes();
    let k = inst.num_labels();
    let mut node = vec![S::zero(); n * k];
    let mut edge = vec![vec![S::zero(); k * k]; inst.num_edges()];
    let mut objective = None;
    for (ln, t) in content_lines(text) {
        match (t[0], t.len()) {
            ("x", 4) => {
                let (u, i) = (index(t[1], ln)?, index(t[2], ln)?);
                if u >= n || i >= k {
                    return Err(parse_err(ln, "x entry out of range"));
                }
                node[u * k + i] = number(t[3], ln)?;
            }
            ("mu", 6) => {
                let (u, v) = (index(t[1], ln)?, index(t[2], ln)?);
                let (i, j) = (index(t[3], ln)?, index(t[4], ln)?);
                let idx = inst.edge_index(u, v).ok_or_else(|| parse_err(ln, format!("({u},{v}) is not an edge")))?;
                if i >= k || j >= k {
                    return Err(parse_err(ln, "mu labels out of range"));
                }
                // stored for the canonical orientation
                let (i, j) = if u < v { (i, j) } else { (j, i) };
                edge[idx][i * k + j] = number(t[5], ln)?;
            }
            ("objective", 2) => objective = Some(number(t[1], ln)?),
            _ => return Err(parse_err(ln, format!("unexpected line `{}`", t.join(" ")))),
        }
    }
    let objective = objective.ok_or_else(|| parse_err(0, "missing objective line"))?;
    PrimalSolution::from_parts(n, k, node, edge, objective)
}

/// `eta u v i value` for both orientations of every edge.
pub fn format_dual<S: Scalar>(eta: &DualSolution<S>) -> String {
    let mut s = String::new();
    for (u, v, row) in eta.iter() {
        for (i, val) in row.iter().enumerate() {
            let _ = writeln!(s, "eta {u} {v} {i} {}", fmt_num(val));
        }
    }
    s
}

pub fn parse_dual<S: Scalar>(inst: &PottsInstance<S>, text: &str) -> Result<DualSolution<S>> {
    let k = inst.num_labels();
    let mut rows: Vec<(Vec<S>, Vec<S>)> = vec![(vec![S::zero(); k], vec![S::zero(); k]); inst.num_edges()];
    for (ln, t) in content_lines(text) {
        if t[0] != "eta" || t.len() != 5 {
            return Err(parse_err(ln, "expected `eta <u> <v> <i> <value>`"));
        }
        let (u, v, i) = (index(t[1], ln)?, index(t[2], ln)?, index(t[3], ln)?);
        let idx = inst.edge_index(u, v).ok_or_else(|| parse_err(ln, format!("({u},{v}) is not an edge")))?;
        if i >= k {
            return Err(parse_err(ln, "label out of range"));
        }
        let val = number(t[4], ln)?;
        if u < v {
            rows[idx].0[i] = val;
        } else {
            rows[idx].1[i] = val;
        }
    }
    DualSolution::from_rows(inst, rows)
}

/// `delta u v i value` for every keyed ordered pair.
pub fn format_block_dual<S: Scalar>(delta: &BlockDualSolution<S>) -> String {
    let mut s = String::new();
    for (&(u, v), row) in delta.iter() {
        for (i, val) in row.iter().enumerate() {
            let _ = writeln!(s, "delta {u} {v} {i} {}", fmt_num(val));
        }
    }
    s
}

pub fn parse_block_dual<S: Scalar>(inst: &PottsInstance<S>, text: &str) -> Result<BlockDualSolution<S>> {
    let k = inst.num_labels();
    let mut map = std::collections::BTreeMap::new();
    for (ln, t) in content_lines(text) {
        if t[0] != "delta" || t.len() != 5 {
            return Err(parse_err(ln, "expected `delta <u> <v> <i> <value>`"));
        }
        let (u, v, i) = (index(t[1], ln)?, index(t[2], ln)?, index(t[3], ln)?);
        if i >= k {
            return Err(parse_err(ln, "label out of range"));
        }
        let row = map.entry((u, v)).or_insert_with(|| vec![S::zero(); k]);
        row[i] = number(t[4], ln)?;
    }
    BlockDualSolution::from_map(inst, map)
}

/// `stable 0|1`, `hamming n` and, with a witness, `witness <labels>`.
pub fn format_verdict<S: Scalar>(v: &StabilityVerdict<S>) -> String {
    let mut s = format!("stable {}\nhamming {}\n", u8::from(v.stable), v.hamming);
    if let Some(f) = &v.witness {
        let _ = writeln!(s, "witness {f}");
    }
    s
}

/// One parsed `node` line of a finder report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportNode {
    pub block: usize,
    pub stable: bool,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedReport {
    pub nodes: Vec<ReportNode>,
    /// `(iteration, certified fraction)`.
    pub iterations: Vec<(usize, f64)>,
}

/// `node <id> block <b> status <S|U> label <l>` per node, then
/// `iteration <t> certified_fraction <f>` per iteration.
pub fn format_report<S: Scalar>(r: &FinderReport<S>) -> String {
    let d = r.decomposition();
    let assign = d.assignment();
    let mut s = String::new();
    for (u, &b) in assign.iter().enumerate() {
        let status = if d.status(b) == BlockStatus::Stable { 'S' } else { 'U' };
        let _ = writeln!(s, "node {u} block {b} status {status} label {}", r.labeling.get(u));
    }
    for rec in &r.iterations {
        let _ = writeln!(
            s,
            "iteration {} certified_fraction {}",
            rec.iteration,
            format_g17(rec.certified_fraction)
        );
    }
    s
}

pub fn parse_report(text: &str) -> Result<ParsedReport> {
    let mut nodes: Vec<Option<ReportNode>> = Vec::new();
    let mut iterations = Vec::new();
    for (ln, t) in content_lines(text) {
        match t[0] {
            "node" => {
                if t.len() != 8 || t[2] != "block" || t[4] != "status" || t[6] != "label" {
                    return Err(parse_err(ln, "expected `node <id> block <b> status <S|U> label <l>`"));
                }
                let u = index(t[1], ln)?;
                let stable = match t[5] {
                    "S" => true,
                    "U" => false,
                    other => return Err(parse_err(ln, format!("bad status {other:?}"))),
                };
                if nodes.len() <= u {
                    nodes.resize(u + 1, None);
                }
                nodes[u] = Some(ReportNode {
                    block: index(t[3], ln)?,
                    stable,
                    label: index(t[7], ln)?,
                });
            }
            "iteration" => {
                if t.len() != 4 || t[2] != "certified_fraction" {
                    return Err(parse_err(ln, "expected `iteration <t> certified_fraction <f>`"));
                }
                iterations.push((index(t[1], ln)?, number::<f64>(t[3], ln)?));
            }
            other => return Err(parse_err(ln, format!("unexpected record {other:?}"))),
        }
    }
    let nodes = nodes
        .into_iter()
        .enumerate()
        .map(|(u, n)| n.ok_or_else(|| parse_err(0, format!("node {u} missing from report"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParsedReport { nodes, iterations })
}

/// Decomposition map of a `rows x cols` grid (row-major nodes): red for
/// uncertified nodes, green where a 4-neighbor lies in another block, gray
/// `round(255 * label / (k - 1))` otherwise. ASCII PPM.
pub fn render_report(report: &ParsedReport, rows: usize, cols: usize, num_labels: usize) -> Result<String> {
    if rows * cols != report.nodes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} report nodes for a {rows}x{cols} grid",
            report.nodes.len()
        )));
    }
    let node = |r: usize, c: usize| &report.nodes[r * cols + c];
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let me = node(r, c);
            if me.label >= num_labels {
                return Err(Error::DimensionMismatch(format!("label {} out of range", me.label)));
            }
            let mut seam = false;
            if r > 0 {
                seam |= node(r - 1, c).block != me.block;
            }
            if r + 1 < rows {
                seam |= node(r + 1, c).block != me.block;
            }
            if c > 0 {
                seam |= node(r, c - 1).block != me.block;
            }
            if c + 1 < cols {
                seam |= node(r, c + 1).block != me.block;
            }
            pixels.push(if !me.stable {
                [255, 0, 0]
            } else if seam {
                [0, 255, 0]
            } else {
                let level = if num_labels > 1 {
                    (255.0 * me.label as f64 / (num_labels - 1) as f64).round() as u8
                } else {
                    0
                };
                [level; 3]
            });
        }
    }
    Ok(pnm::format_ppm(cols, rows, &pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders;
    use crate::numeric::Rational;

    #[test]
    fn instance_round_trip() {
        let (tri, _) = builders::counterexample_triangle(0.1).unwrap();
        let text = format_instance(&tri);
        assert!(text.starts_with("POTTS 3 3 3\ninf 0 0.10000000000000001\n"));
        assert_eq!(parse_instance::<f64>(&text).unwrap(), tri);
        let grid = builders::random_grid(3, 4, 3, (-2.0, 5.0), (0.1, 2.0), 42).unwrap();
        assert_eq!(parse_instance::<f64>(&format_instance(&grid)).unwrap(), grid);
    }

    #[test]
    fn rational_parse_is_exact_decimal() {
        let v: Rational = parse_number("0.1").unwrap();
        assert_eq!(v, Rational::new(1.into(), 10.into()));
        let v: Rational = parse_number("-2.5e-3").unwrap();
        assert_eq!(v, Rational::new((-1).into(), 400.into()));
        let v: Rational = parse_number("3/4").unwrap();
        assert_eq!(v, Rational::new(3.into(), 4.into()));
        assert!(parse_number::<Rational>("abc").is_none());
        assert!(parse_number::<f64>("nan").is_none());
    }

    #[test]
    fn malformed_instances_are_rejected() {
        assert!(parse_instance::<f64>("").is_err());
        assert!(parse_instance::<f64>("POTTS 1 2 0\n0\n").is_err());
        assert!(parse_instance::<f64>("POTTS 2 1 1\n0\n0\n0 1 -1\n").is_err());
        assert!(parse_instance::<f64>("POTTS 1 1 0\n0\nextra\n").is_err());
        let err = parse_instance::<f64>("POTTS 1 2 0\n0 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn cost_block_forms() {
        let rows: Vec<Vec<Cost>> = parse_cost_block("1 2\n# c\ninf 0\n").unwrap();
        assert_eq!(rows, vec![vec![Cost::Finite(1.0), Cost::Finite(2.0)], vec![Cost::Forbidden, Cost::Finite(0.0)]]);
        let rows: Vec<Vec<Cost>> = parse_cost_block("POTTS 1 2 0\n3 4\n").unwrap();
        assert_eq!(rows, vec![vec![Cost::Finite(3.0), Cost::Finite(4.0)]]);
        assert!(parse_cost_block::<f64>("1 2\n3\n").is_err());
    }

    #[test]
    fn primal_and_dual_dumps_round_trip() {
        let inst = builders::random_grid(2, 3, 3, (0.0, 5.0), (0.5, 2.0), 3).unwrap();
        let (x, eta) = crate::lp_solver::solve_lp(&inst).unwrap();
        let x2 = parse_primal(&inst, &format_primal(&inst, &x)).unwrap();
        assert_eq!(x2, x);
        let eta2 = parse_dual(&inst, &format_dual(&eta)).unwrap();
        assert_eq!(eta2, eta);
        let d = crate::dual_decomp::BlockDecomposition::new(6, vec![vec![0, 1, 2]], vec![3, 4, 5]).unwrap();
        let delta = crate::dual_decomp::restrict_dual(&inst, &eta, &d, &x.objective, &1e-6).unwrap();
        assert_eq!(parse_block_dual(&inst, &format_block_dual(&delta)).unwrap(), delta);
    }

    #[test]
    fn verdict_lines() {
        let v = StabilityVerdict::<f64> {
            stable: false,
            witness: Some(Labeling::new(vec![0, 2])),
            hamming: 1,
            margin: Some(0.0),
            improves: false,
            inconclusive: false,
        };
        assert_eq!(format_verdict(&v), "stable 0\nhamming 1\nwitness 0 2\n");
    }

    fn report(blocks: &[usize], stable: &[bool], labels: &[usize]) -> ParsedReport {
        ParsedReport {
            nodes: blocks
                .iter()
                .zip(stable)
                .zip(labels)
                .map(|((&block, &stable), &label)| ReportNode { block, stable, label })
                .collect(),
            iterations: vec![(1, 1.0)],
        }
    }

    fn pixels(ppm: &str) -> Vec<[u8; 3]> {
        pnm::parse_ppm(ppm.as_bytes())
            .unwrap()
            .data
            .iter()
            .map(|p| [p[0] as u8, p[1] as u8, p[2] as u8])
            .collect()
    }

    #[test]
    fn render_rules() {
        let single = report(&[0; 6], &[true; 6], &[0, 1, 2, 0, 1, 2]);
        let px = pixels(&render_report(&single, 2, 3, 3).unwrap());
        assert_eq!(px[0], [0, 0, 0]);
        assert_eq!(px[1], [128, 128, 128]);
        assert_eq!(px[2], [255, 255, 255]);

        let red = report(&[0; 6], &[false; 6], &[0; 6]);
        assert!(pixels(&render_report(&red, 2, 3, 3).unwrap()).iter().all(|p| *p == [255, 0, 0]));

        // two blocks split down the middle of a 3x4 grid
        let blocks: Vec<usize> = (0..12).map(|u| usize::from(u % 4 >= 2)).collect();
        let split = report(&blocks, &[true; 12], &[1; 12]);
        let px = pixels(&render_report(&split, 3, 4, 2).unwrap());
        let green = px.iter().filter(|p| **p == [0, 255, 0]).count();
        assert_eq!(green, 6);
        assert!(render_report(&split, 4, 4, 2).is_err());
    }

    #[test]
    fn report_parse_errors() {
        assert!(parse_report("node 0 block 0 status X label 0\n").is_err());
        assert!(parse_report("node 1 block 0 status S label 0\n").is_err());
        assert!(parse_report("bogus\n").is_err());
    }
}
