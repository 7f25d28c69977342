//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use blockstab::block_finder::{self, FinderOptions};
use blockstab::builders::{self, SegmentationParams, StereoParams};
use blockstab::dual_decomp::{
    block_dual_value, block_subproblems, extend_dual, pairwise_dual_value, restrict_dual, BlockDecomposition,
    BlockDualSolution,
};
use blockstab::formats::{parse_primal, parse_report};
use blockstab::lp_solver::{
    persistency_mask, solve_lp, solve_lp_with, solve_map_with, Formulation, LpOptions, MapOptions, SearchStrategy,
};
use blockstab::model::objective;
use blockstab::oracle::{enumerate_map, enumerate_stability};
use blockstab::pnm::{parse_ppm, GrayImage};
use blockstab::stability::{check_block_stable, check_stable, check_stable_with, StabilityOptions};
use blockstab::{Cost, Factor, Labeling, PottsInstance, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn factor(v: f64) -> Factor {
    Factor::new(v).unwrap()
}

fn value<S: blockstab::Scalar>(inst: &PottsInstance<S>, f: &Labeling) -> S {
    match objective(inst, f).unwrap() {
        Cost::Finite(v) => v,
        Cost::Forbidden => panic!("forbidden label"),
    }
}

/// 3x3 and 4x4 grids with k = 3, half with small integer data so that ties
/// occur.
fn suite() -> Vec<PottsInstance> {
    (0..200u64)
        .map(|seed| {
            let side = if seed % 2 == 0 { 3 } else { 4 };
            if seed % 4 < 2 {
                builders::random_grid(side, side, 3, (0.0, 10.0), (0.0, 5.0), seed).unwrap()
            } else {
                builders::random_grid_int(side, side, 3, 6, 4, seed).unwrap()
            }
        })
        .collect()
}

/// 200 enumerable 3x3 grids, k = 3.
fn small_suite() -> Vec<PottsInstance> {
    (0..200u64)
        .map(|seed| {
            if seed % 2 == 0 {
                builders::random_grid(3, 3, 3, (0.0, 10.0), (0.0, 5.0), 1000 + seed).unwrap()
            } else {
                builders::random_grid_int(3, 3, 3, 6, 4, 1000 + seed).unwrap()
            }
        })
        .collect()
}

fn random_decomposition(n: usize, rng: &mut ChaCha8Rng) -> BlockDecomposition {
    let parts = rng.gen_range(2..=4usize);
    let assignment: Vec<usize> = (0..n).map(|_| rng.gen_range(0..parts)).collect();
    BlockDecomposition::from_assignment(&assignment, parts).unwrap()
}

fn golden_triangle() -> Outcome {
    let (inst, _) = builders::counterexample_triangle(0.1).map_err(err)?;
    let exact = inst.to_exact();
    let map = solve_map_with(&exact, &MapOptions::default()).map_err(err)?;
    ensure(map.value == Rational::from_integer(2.into()), || format!("MAP value {}", map.value))?;

    let (x, eta) = solve_lp(&inst).map_err(err)?;
    ensure((x.objective - 1.65).abs() <= TOL, || format!("LP value {}", x.objective))?;
    let mask = persistency_mask(&x, &map.labeling.clone(), TOL).map_err(err)?;
    ensure(mask.fraction == 0.0, || format!("persistent fraction {}", mask.fraction))?;
    ensure(mask.fractional_nodes() == [0, 1, 2], || "LP not fractional at every node".into())?;

    // every singleton passes the naive test without a dual
    let singles = BlockDecomposition::singletons(3);
    let zero = BlockDualSolution::zeros(&inst, &singles.boundary_edges(&inst));
    for b in 0..3 {
        let v = check_block_stable(
            &inst,
            &singles,
            b,
            &map.labeling,
            Factor::Infinite,
            Factor::Infinite,
            &zero,
            &StabilityOptions::default(),
        )
        .map_err(err)?;
        ensure(v.certified(), || format!("singleton {b} not stable"))?;
    }
    let _ = eta;
    Ok("MAP 2, LP 1.65 fractional everywhere, singletons naively stable".into())
}

fn golden_combined() -> Outcome {
    let c = builders::combined_example(0.01, 0.1).map_err(err)?;
    let inst = &c.instance;
    let (x, _) = solve_lp(inst).map_err(err)?;
    let mask = persistency_mask(&x, &c.labeling, TOL).map_err(err)?;
    ensure(mask.fraction == 1.0, || format!("persistent fraction {}", mask.fraction))?;

    let d = BlockDecomposition::new(6, vec![c.block_s.clone(), c.block_t.clone()], vec![]).map_err(err)?;
    let b = block_dual_value(inst, &d, &c.delta).map_err(err)?;
    let q = value(inst, &c.labeling);
    ensure((b - 1.02).abs() <= TOL && (q - 1.02).abs() <= TOL, || format!("B = {b}, Q(g) = {q}"))?;
    let subs = block_subproblems(inst, &d, &c.delta).map_err(err)?;
    ensure((subs[0].value - 0.02).abs() <= TOL, || format!("block S value {}", subs[0].value))?;
    ensure((subs[1].value - 1.0).abs() <= TOL, || format!("block T value {}", subs[1].value))?;

    let opts = StabilityOptions::default();
    let s = check_block_stable(inst, &d, 0, &c.labeling, factor(2.0), factor(1.0), &c.delta, &opts).map_err(err)?;
    ensure(s.certified(), || "block S not stable".into())?;
    let whole = check_stable(inst, &c.labeling, factor(2.0), factor(1.0)).map_err(err)?;
    ensure(!whole.stable, || "whole instance reported stable".into())?;
    Ok("B = Q(g) = 1.02, blocks 0.02 and 1.0, S stable, whole unstable".into())
}

fn soundness() -> Outcome {
    let mut blocks = 0usize;
    let mut certified = 0usize;
    for (idx, inst) in suite().iter().enumerate() {
        let g = solve_map_with(inst, &MapOptions::default()).map_err(err)?.labeling;
        let (lp2, _) = solve_lp_with(
            inst,
            &LpOptions {
                formulation: Formulation::LocalPolytope,
                ..LpOptions::default()
            },
        )
        .map_err(err)?;
        for optimized in [false, true] {
            let opts = FinderOptions {
                optimized,
                iterations: 5,
                ..FinderOptions::default()
            };
            let report = block_finder::run_with(inst, &g, &opts).map_err(err)?;
            let d = report.decomposition();
            blocks += d.blocks().iter().filter(|b| !b.is_empty()).count();
            for u in 0..inst.num_nodes() {
                if !report.certified[u] {
                    continue;
                }
                certified += 1;
                for (name, x) in [("compact", &report.lp), ("local polytope", &lp2)] {
                    let m = *x.node_marginal(u, g.get(u));
                    ensure(m >= 1.0 - TOL, || {
                        format!("instance {idx} optimized {optimized}: node {u} has {name} x = {m}")
                    })?;
                }
            }
        }
    }
    Ok(format!("{certified} certified nodes over {blocks} blocks, no violations"))
}

fn oracle_equivalence() -> Outcome {
    let forced = StabilityOptions {
        strategy: SearchStrategy::BranchAndBound,
        ..StabilityOptions::default()
    };
    let bnb_map = MapOptions {
        strategy: SearchStrategy::BranchAndBound,
        ..MapOptions::default()
    };
    let mut checks = 0;
    for (idx, inst) in small_suite().iter().enumerate() {
        let exact = inst.to_exact();
        let (g, q) = enumerate_map(&exact).map_err(err)?;
        for map in [
            solve_map_with(&exact, &MapOptions::default()).map_err(err)?,
            solve_map_with(&exact, &bnb_map).map_err(err)?,
        ] {
            ensure(map.value == q, || format!("instance {idx}: MAP {} vs oracle {q}", map.value))?;
        }
        for (b, c) in [(2.0, 1.0), (1.5, 1.5)] {
            let fast = check_stable_with::<Rational>(&exact, &g, factor(b), factor(c), &forced).map_err(err)?;
            let slow = enumerate_stability(&exact, &g, factor(b), factor(c)).map_err(err)?;
            ensure(fast.stable == slow.stable && fast.hamming == slow.hamming, || {
                format!(
                    "instance {idx} ({b},{c}): stable {} hamming {} vs oracle {} {}",
                    fast.stable, fast.hamming, slow.stable, slow.hamming
                )
            })?;
            checks += 1;
        }
    }
    Ok(format!("{checks} stability verdicts and 400 MAP values agree"))
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for (idx, inst) in suite().iter().enumerate() {
        let (x, eta) = solve_lp(inst).map_err(err)?;
        let p = pairwise_dual_value(inst, &eta).map_err(err)?;
        worst = worst.max((p - x.objective).abs());
        ensure((p - x.objective).abs() <= TOL, || format!("instance {idx}: P = {p}, LP = {}", x.objective))?;
        for _ in 0..3 {
            let d = random_decomposition(inst.num_nodes(), &mut rng);
            let delta = restrict_dual(inst, &eta, &d, &x.objective, &TOL).map_err(err)?;
            let b = block_dual_value(inst, &d, &delta).map_err(err)?;
            worst = worst.max((b - x.objective).abs());
            ensure((b - x.objective).abs() <= TOL, || format!("instance {idx}: B = {b}, LP = {}", x.objective))?;
            let duals: Vec<_> = block_subproblems(inst, &d, &delta)
                .map_err(err)?
                .into_iter()
                .map(|s| s.dual)
                .collect();
            let joined = extend_dual(inst, &d, &delta, &duals).map_err(err)?;
            let pj = pairwise_dual_value(inst, &joined).map_err(err)?;
            worst = worst.max((pj - x.objective).abs());
            ensure((pj - x.objective).abs() <= TOL, || {
                format!("instance {idx}: extended P = {pj}, LP = {}", x.objective)
            })?;
        }
    }
    Ok(format!("largest deviation {worst:e}"))
}

fn trees() -> Outcome {
    let mut unique = 0;
    for seed in 0..50u64 {
        let n = 1 + (seed as usize % 12);
        let inst = builders::random_tree(n, 3, (0.0, 10.0), (0.0, 5.0), seed).map_err(err)?;
        let (g, q) = enumerate_map(&inst).map_err(err)?;
        let ties = count_within(&inst, q + 1e-9);
        if ties != 1 {
            continue;
        }
        unique += 1;
        let (x, _) = solve_lp(&inst).map_err(err)?;
        let mask = persistency_mask(&x, &g, TOL).map_err(err)?;
        ensure(mask.fraction == 1.0, || format!("tree {seed}: persistent fraction {}", mask.fraction))?;
    }
    Ok(format!("{unique} of 50 trees with a unique MAP, all fully persistent"))
}

/// Labelings with `Q <= bound`, by plain enumeration.
fn count_within(inst: &PottsInstance, bound: f64) -> usize {
    let (n, k) = (inst.num_nodes(), inst.num_labels());
    let mut f = vec![0usize; n];
    let mut count = 0;
    loop {
        if value(inst, &Labeling::new(f.clone())) <= bound {
            count += 1;
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                return count;
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

fn blockstab(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_blockstab"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn stereo_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    blockstab(d, &["build", "stereo-pair", "--width", "40", "--height", "40", "--left", "l.pgm", "--right", "r.pgm"])?;
    blockstab(
        d,
        &["build", "stereo", "--left", "l.pgm", "--right", "r.pgm", "--k", "8", "--s", "50", "--P", "2", "--T", "4", "-o", "s.potts"],
    )?;
    let lp = blockstab(d, &["lp", "s.potts", "--solution", "x.txt"])?;
    let fb = blockstab(d, &["find-blocks", "s.potts", "--iters", "3", "-o", "rep.txt"])?;
    blockstab(
        d,
        &["render", "--report", "rep.txt", "--instance", "s.potts", "--rows", "40", "--cols", "40", "-o", "map.ppm"],
    )?;
    let img = parse_ppm(&fs::read(d.join("map.ppm")).map_err(err)?).map_err(err)?;
    ensure((img.width, img.height) == (40, 40), || "map has the wrong size".into())?;

    let inst: PottsInstance = blockstab::formats::read_instance(d.join("s.potts")).map_err(err)?;
    let x = parse_primal(&inst, &fs::read_to_string(d.join("x.txt")).map_err(err)?).map_err(err)?;
    let report = parse_report(&fs::read_to_string(d.join("rep.txt")).map_err(err)?).map_err(err)?;
    let mut certified = 0;
    for (u, node) in report.nodes.iter().enumerate() {
        if node.stable {
            certified += 1;
            let m = *x.node_marginal(u, node.label);
            ensure(m >= 1.0 - TOL, || format!("certified node {u} has x = {m}"))?;
        }
    }
    let field = |text: &str, key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .map(|r| r.trim().to_string())
            .unwrap_or_default()
    };
    Ok(format!(
        "persistent fraction {}, certified fraction {}, {certified} certified nodes sound",
        field(&lp, "persistent_fraction "),
        field(&fb, "certified_fraction ")
    ))
}

fn vision_constants() -> Outcome {
    let w = builders::segmentation_weight(0.0, 1.0, &SegmentationParams::default());
    ensure(w == 105.0, || format!("segmentation weight {w}"))?;
    let flat = GrayImage::new(10, 2, vec![77.0; 20]).map_err(err)?;
    let inst = builders::build_stereo(&flat, &flat, &StereoParams::default()).map_err(err)?;
    ensure(inst.edges().iter().all(|e| e.weight == 100.0), || "stereo weight on a uniform image".into())?;
    Ok("segmentation 105, stereo 100".into())
}

fn main() {
    let criteria: [(usize, &str, Duration, fn() -> Outcome); 8] = [
        (1, "golden counterexample", Duration::from_secs(1), golden_triangle),
        (2, "golden combined example", Duration::from_secs(1), golden_combined),
        (3, "certification soundness on 200 grids", Duration::from_secs(600), soundness),
        (4, "oracle equivalence", Duration::from_secs(600), oracle_equivalence),
        (5, "duality identities", Duration::from_secs(600), duality),
        (6, "tree tightness", Duration::from_secs(600), trees),
        (7, "40x40 stereo pipeline", Duration::from_secs(1800), stereo_pipeline),
        (8, "vision formula constants", Duration::from_secs(1), vision_constants),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took > limit {
                Err(format!("took {took:.1?}, limit {limit:?}"))
            } else {
                Ok(msg)
            }
        });
        match outcome {
            Ok(msg) => println!("criterion {id} PASS {name} ({took:.2?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} FAIL {name} ({took:.2?}): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
