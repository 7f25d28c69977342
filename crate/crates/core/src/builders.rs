//! Instance construction: golden examples, random generators and vision
//! models built from images.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dual_decomp::BlockDualSolution;
use crate::error::{Error, Result};
use crate::model::{Cost, Labeling, PottsInstance};
use crate::pnm::{GrayImage, RgbImage};

/// Node ids of the combined example.
pub mod combined_nodes {
    pub const U: usize = 0;
    pub const V: usize = 1;
    pub const W: usize = 2;
    pub const X: usize = 3;
    pub const Y: usize = 4;
    pub const Z: usize = 5;
}

/// Triangle `u, v, w` with unit weights and costs
/// `u: (inf, 0, eps)`, `v: (0, inf, eps)`, `w: (eps, 0, inf)`.
/// Returns the instance and its optimum `(1, 0, 1)`.
pub fn counterexample_triangle(eps: f64) -> Result<(PottsInstance, Labeling)> {
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must lie in (0, 1/3), got {eps}"
        )));
    }
    let f = Cost::Finite;
    let x = Cost::Forbidden;
    let inst = PottsInstance::new(
        3,
        vec![
            vec![x.clone(), f(0.0), f(eps)],
            vec![f(0.0), x.clone(), f(eps)],
            vec![f(eps), f(0.0), x],
        ],
        vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)],
    )?;
    Ok((inst, Labeling::new(vec![1, 0, 1])))
}

#[derive(Clone, Debug)]
pub struct CombinedExample {
    pub instance: PottsInstance,
    pub labeling: Labeling,
    /// Block dual on the edges `u-x` and `w-y` between `{u,v,w}` and `{x,y,z}`.
    pub delta: BlockDualSolution,
    pub block_s: Vec<usize>,
    pub block_t: Vec<usize>,
}

/// Six-node instance mixing a stable block `{u,v,w}` with a tree block
/// `{x,y,z}` joined by two `eps` edges.
pub fn combined_example(eps: f64, gamma: f64) -> Result<CombinedExample> {
    use combined_nodes::*;
    if !(eps > 0.0) || !(gamma > 0.0) || gamma >= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "need eps > 0 and 0 < gamma < 2, got eps = {eps}, gamma = {gamma}"
        )));
    }
    let f = Cost::Finite;
    let costs = vec![
        vec![f(0.0), f(0.0), f(2.0)],
        vec![f(0.0), Cost::Forbidden, Cost::Forbidden],
        vec![f(0.0), f(0.0), f(2.0)],
        vec![f(2.0), f(0.0), f(2.0)],
        vec![f(2.0), f(0.0), f(2.0)],
        vec![f(0.0), f(1.0), f(1.0)],
    ];
    let edges = vec![
        (V, W, 2.0),
        (W, Y, eps),
        (X, Y, 2.0),
        (Y, Z, 2.0 - gamma),
        (U, V, 2.0),
        (U, W, 2.0),
        (U, X, eps),
    ];
    let instance = PottsInstance::new(3, costs, edges)?;
    let mut map = BTreeMap::new();
    map.insert((U, X), vec![eps, 0.0, 0.0]);
    map.insert((X, U), vec![-eps, 0.0, 0.0]);
    map.insert((W, Y), vec![eps, 0.0, 0.0]);
    map.insert((Y, W), vec![-eps, 0.0, 0.0]);
    let delta = BlockDualSolution::from_map(&instance, map)?;
    Ok(CombinedExample {
        instance,
        labeling: Labeling::new(vec![0, 0, 0, 1, 1, 1]),
        delta,
        block_s: vec![U, V, W],
        block_t: vec![X, Y, Z],
    })
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

fn check_range(name: &str, range: (f64, f64)) -> Result<()> {
    if !(range.0.is_finite() && range.1.is_finite() && range.0 <= range.1) {
        return Err(Error::InvalidParameter(format!("bad {name} range {range:?}")));
    }
    Ok(())
}

/// 4-connected edges of a `rows x cols` grid, node `r * cols + c`.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                e.push((u, u + 1));
            }
            if r + 1 < rows {
                e.push((u, u + cols));
            }
        }
    }
    e
}

/// Grid with costs and weights drawn uniformly from the given ranges.
pub fn random_grid(
    rows: usize,
    cols: usize,
    k: usize,
    cost_range: (f64, f64),
    weight_range: (f64, f64),
    seed: u64,
) -> Result<PottsInstance> {
    if rows * cols == 0 {
        return Err(Error::InvalidParameter("grid must have at least one node".into()));
    }
    check_range("cost", cost_range)?;
    check_range("weight", weight_range)?;
    if weight_range.0 < 0.0 {
        return Err(Error::InvalidParameter("weights must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..rows * cols)
        .map(|_| (0..k).map(|_| Cost::Finite(uniform(&mut rng, cost_range))).collect())
        .collect();
    let edges = grid_edges(rows, cols)
        .into_iter()
        .map(|(u, v)| (u, v, uniform(&mut rng, weight_range)))
        .collect();
    PottsInstance::new(k, costs, edges)
}

/// Grid with integer costs in `0..=max_cost` and weights in `1..=max_weight`.
/// Exact ties are common, which exercises the tie semantics of stability.
pub fn random_grid_int(
    rows: usize,
    cols: usize,
    k: usize,
    max_cost: u32,
    max_weight: u32,
    seed: u64,
) -> Result<PottsInstance> {
    if rows * cols == 0 || max_weight == 0 {
        return Err(Error::InvalidParameter("empty grid or zero weight bound".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..rows * cols)
        .map(|_| {
            (0..k)
                .map(|_| Cost::Finite(rng.gen_range(0..=max_cost) as f64))
                .collect()
        })
        .collect();
    let edges = grid_edges(rows, cols)
        .into_iter()
        .map(|(u, v)| (u, v, rng.gen_range(1..=max_weight) as f64))
        .collect();
    PottsInstance::new(k, costs, edges)
}

/// Random tree: node `i > 0` attaches to a uniform earlier node.
pub fn random_tree(
    n: usize,
    k: usize,
    cost_range: (f64, f64),
    weight_range: (f64, f64),
    seed: u64,
) -> Result<PottsInstance> {
    if n == 0 {
        return Err(Error::InvalidParameter("tree must have at least one node".into()));
    }
    check_range("cost", cost_range)?;
    check_range("weight", weight_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..n)
        .map(|_| (0..k).map(|_| Cost::Finite(uniform(&mut rng, cost_range))).collect())
        .collect();
    let edges = (1..n)
        .map(|i| {
            let p = rng.gen_range(0..i);
            (p, i, uniform(&mut rng, weight_range))
        })
        .collect();
    PottsInstance::new(k, costs, edges)
}

#[derive(Clone, Debug)]
pub struct StereoParams {
    /// Number of disparities.
    pub k: usize,
    pub s: f64,
    pub p: f64,
    pub t: f64,
    /// Birchfield-Tomasi sampling-insensitive dissimilarity.
    pub bt_correction: bool,
}

impl Default for StereoParams {
    fn default() -> Self {
        StereoParams {
            k: 8,
            s: 50.0,
            p: 2.0,
            t: 4.0,
            bt_correction: true,
        }
    }
}

/// Interval spanned by the half-pixel interpolations around `x`.
fn half_pixel_range(row: &[f64], x: usize) -> (f64, f64) {
    let c = row[x];
    let left = if x > 0 { 0.5 * (c + row[x - 1]) } else { c };
    let right = if x + 1 < row.len() { 0.5 * (c + row[x + 1]) } else { c };
    (c.min(left).min(right), c.max(left).max(right))
}

fn bt_dissimilarity(left: &[f64], right: &[f64], xl: usize, xr: usize) -> f64 {
    let (rmin, rmax) = half_pixel_range(right, xr);
    let d1 = (left[xl] - rmax).max(rmin - left[xl]).max(0.0);
    let (lmin, lmax) = half_pixel_range(left, xl);
    let d2 = (right[xr] - lmax).max(lmin - right[xr]).max(0.0);
    d1.min(d2)
}

/// Stereo MRF: node per left-image pixel, label `i` matches the right
/// pixel `i` columns to the left. Shifts leaving the image are forbidden.
pub fn build_stereo(left: &GrayImage, right: &GrayImage, params: &StereoParams) -> Result<PottsInstance> {
    if left.width != right.width || left.height != right.height {
        return Err(Error::DimensionMismatch(format!(
            "left image is {}x{}, right image {}x{}",
            left.width, left.height, right.width, right.height
        )));
    }
    let (h, w) = (left.height, left.width);
    if params.k == 0 || params.k > w {
        return Err(Error::InvalidParameter(format!(
            "disparity count {} must lie in 1..={w}",
            params.k
        )));
    }
    let mut costs = Vec::with_capacity(h * w);
    for r in 0..h {
        let lrow = &left.data[r * w..(r + 1) * w];
        let rrow = &right.data[r * w..(r + 1) * w];
        for c in 0..w {
            let row = (0..params.k)
                .map(|i| {
                    if i > c {
                        Cost::Forbidden
                    } else {
                        let d = if params.bt_correction {
                            bt_dissimilarity(lrow, rrow, c, c - i)
                        } else {
                            lrow[c] - rrow[c - i]
                        };
                        Cost::Finite(d * d)
                    }
                })
                .collect();
            costs.push(row);
        }
    }
    let edges = grid_edges(h, w)
        .into_iter()
        .map(|(u, v)| {
            let diff = (left.data[u] - left.data[v]).abs();
            let wt = if diff < params.t { params.p * params.s } else { params.s };
            (u, v, wt)
        })
        .collect();
    PottsInstance::new(params.k, costs, edges)
}

#[derive(Clone, Debug)]
pub struct SegmentationParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            lambda1: 5.0,
            lambda2: 100.0,
            sigma: 5.0,
        }
    }
}

/// `lambda1 + lambda2 exp(-g^2 / (2 sigma^2)) / dist`.
pub fn segmentation_weight(g: f64, dist: f64, p: &SegmentationParams) -> f64 {
    p.lambda1 + p.lambda2 * (-(g * g) / (2.0 * p.sigma * p.sigma)).exp() / dist
}

/// Segmentation MRF on the 4-connected pixel grid; node costs come from
/// outside (one row per pixel, row-major).
pub fn build_segmentation(
    image: &RgbImage,
    node_costs: Vec<Vec<Cost>>,
    params: &SegmentationParams,
) -> Result<PottsInstance> {
    let n = image.width * image.height;
    if node_costs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} cost rows for {n} pixels",
            node_costs.len()
        )));
    }
    let k = node_costs.first().map_or(0, |r| r.len());
    let edges = grid_edges(image.height, image.width)
        .into_iter()
        .map(|(u, v)| {
            let (a, b) = (image.data[u], image.data[v]);
            let g = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            (u, v, segmentation_weight(g, 1.0, params))
        })
        .collect();
    PottsInstance::new(k, node_costs, edges)
}

/// Synthetic rectified stereo pair: a blocky random texture seen at
/// disparity `background_shift`, with a central rectangle at `square_shift`.
pub fn synthetic_stereo_pair(
    width: usize,
    height: usize,
    background_shift: usize,
    square_shift: usize,
    seed: u64,
) -> (GrayImage, GrayImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = square_shift.max(background_shift);
    let cells_x = (width + pad) / 2 + 1;
    let cells_y = height / 2 + 1;
    let texture: Vec<f64> = (0..cells_x * cells_y)
        .map(|_| rng.gen_range(20..236) as f64)
        .collect();
    // texture at right-image column x, shifted by pad so x may be negative
    let tex = |r: usize, x: isize| -> f64 {
        let xs = (x + pad as isize) as usize;
        texture[(r / 2) * cells_x + xs / 2]
    };
    let (top, bottom) = (height / 4, height - height / 4);
    let (lo, hi) = (width / 3, width - width / 4);
    let mut left = Vec::with_capacity(width * height);
    let mut right = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let d = if r >= top && r < bottom && c >= lo && c < hi {
                square_shift
            } else {
                background_shift
            };
            left.push(tex(r, c as isize - d as isize));
        }
        for c in 0..width {
            right.push(tex(r, c as isize));
        }
    }
    (
        GrayImage::new(width, height, left).expect("sized"),
        GrayImage::new(width, height, right).expect("sized"),
    )
}
