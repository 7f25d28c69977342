use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use blockstab::block_finder::{self, FinderOptions};
use blockstab::dual_decomp::{pairwise_dual_value, DualSolution, restrict_dual, BlockDecomposition, BlockStatus};
use blockstab::formats;
use blockstab::lp_solver::{
    persistency_mask, solve_lp, solve_lp_and_map, solve_map_with, MapOptions, PrimalSolution, SearchStrategy,
};
use blockstab::numeric::{format_short, DEFAULT_TOL};
use blockstab::stability::{check_block_stable, check_stable_with, StabilityOptions};
use blockstab::{builders, pnm, Cost, Factor, Labeling, PottsInstance, Rational, Scalar};

// Stdout writes that surface a closed pipe as an error instead of a panic.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(io::stdout().lock(), $($t)*)?
    };
}

#[derive(Parser)]
#[command(name = "blockstab", version, about = "Potts MAP inference, LP relaxation and block stability")]
struct Cli {
    /// Tolerance for integrality, duality-gap and decoding tests.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Exact rational arithmetic for solve, lp, check-stable and find-blocks.
    #[arg(long, global = true)]
    rational: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instance file.
    #[command(subcommand)]
    Build(Build),
    /// Exact MAP labeling.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Strategy::Auto)]
        strategy: Strategy,
        /// Write the labeling here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Pairwise LP relaxation.
    Lp {
        instance: PathBuf,
        /// Reference labeling for the persistent fraction (MAP if absent).
        #[arg(long)]
        labeling: Option<PathBuf>,
        /// Write `x`/`mu`/`objective` lines here.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Write `eta` lines here.
        #[arg(long)]
        dual: Option<PathBuf>,
    },
    /// Stability of the MAP labeling, or of one block after reparametrization.
    CheckStable {
        instance: PathBuf,
        #[command(flatten)]
        params: Perturbation,
        /// Labeling to test (MAP if absent).
        #[arg(long)]
        labeling: Option<PathBuf>,
        /// Node ids of a block; tested on its restriction with LP-dual costs.
        #[arg(long)]
        block: Option<PathBuf>,
        /// Write the witness labeling here when unstable.
        #[arg(long)]
        witness: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Strategy::Auto)]
        strategy: Strategy,
    },
    /// Search for stable blocks.
    FindBlocks {
        instance: PathBuf,
        #[command(flatten)]
        params: Perturbation,
        /// Number of iterations.
        #[arg(long, default_value_t = 5)]
        iters: usize,
        /// One merged check per iteration.
        #[arg(long)]
        optimized: bool,
        /// Threads for per-block checks.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Labeling to certify (MAP if absent).
        #[arg(long)]
        labeling: Option<PathBuf>,
        /// Starting decomposition: `block <ids>` lines and one `boundary <ids>` line.
        #[arg(long)]
        seed_blocks: Option<PathBuf>,
        /// Write the report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw a finder report on a grid as a PPM image.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum Build {
    /// Worked examples.
    Golden {
        #[arg(value_enum)]
        which: Golden,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Random 4-connected grid.
    Grid {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integer costs in 0..=cost-max and weights in 1..=weight-max.
        #[arg(long)]
        integer: bool,
        #[arg(long, default_value_t = 0.0)]
        cost_min: f64,
        #[arg(long, default_value_t = 5.0)]
        cost_max: f64,
        #[arg(long, default_value_t = 0.5)]
        weight_min: f64,
        #[arg(long, default_value_t = 2.0)]
        weight_max: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Random tree.
    Tree {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Stereo MRF from a rectified grayscale pair.
    Stereo {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 50.0)]
        s: f64,
        #[arg(long = "P", default_value_t = 2.0)]
        p: f64,
        #[arg(long = "T", default_value_t = 4.0)]
        t: f64,
        /// Plain squared differences instead of the sampling-insensitive ones.
        #[arg(long)]
        no_bt: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Segmentation MRF from an RGB image and a node-cost file.
    Segmentation {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        costs: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 100.0)]
        lambda2: f64,
        #[arg(long, default_value_t = 5.0)]
        sigma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Synthetic stereo pair written as two PGM files.
    StereoPair {
        #[arg(long, default_value_t = 40)]
        width: usize,
        #[arg(long, default_value_t = 40)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        background: usize,
        #[arg(long, default_value_t = 4)]
        square: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Golden {
    Triangle,
    Combined,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Auto,
    Bnb,
    Exhaustive,
}

impl From<Strategy> for SearchStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Auto => SearchStrategy::Auto,
            Strategy::Bnb => SearchStrategy::BranchAndBound,
            Strategy::Exhaustive => SearchStrategy::Exhaustive,
        }
    }
}

#[derive(Args, Clone)]
struct Perturbation {
    /// Weight shrink factor (>= 1 or `inf`).
    #[arg(long, default_value = "2", value_parser = parse_factor)]
    beta: Factor,
    /// Weight growth factor (>= 1 or `inf`).
    #[arg(long, default_value = "1", value_parser = parse_factor)]
    gamma: Factor,
}

fn parse_factor(s: &str) -> std::result::Result<Factor, String> {
    let v: f64 = if s.eq_ignore_ascii_case("inf") {
        f64::INFINITY
    } else {
        s.parse().map_err(|_| format!("not a number: {s}"))?
    };
    Factor::new(v).map_err(|e| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Build(b) => build(b),
        Command::Render {
            report,
            instance,
            rows,
            cols,
            output,
        } => {
            let inst: PottsInstance = read_instance(instance)?;
            if inst.num_nodes() != rows * cols {
                bail!("instance has {} nodes, not {rows}x{cols}", inst.num_nodes());
            }
            let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
            let parsed = formats::parse_report(&text)?;
            write(output, &formats::render_report(&parsed, *rows, *cols, inst.num_labels())?)
        }
        _ if cli.rational => analyze::<Rational>(cli),
        _ => analyze::<f64>(cli),
    }
}

fn read_instance<S: Scalar>(path: &Path) -> Result<PottsInstance<S>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    formats::parse_instance(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn build(b: &Build) -> Result<()> {
    let (inst, output) = match b {
        Build::Golden {
            which,
            eps,
            gamma,
            output,
        } => {
            let inst = match which {
                Golden::Triangle => builders::counterexample_triangle(*eps)?.0,
                Golden::Combined => builders::combined_example(*eps, *gamma)?.instance,
            };
            (inst, output)
        }
        Build::Grid {
            rows,
            cols,
            k,
            seed,
            integer,
            cost_min,
            cost_max,
            weight_min,
            weight_max,
            output,
        } => {
            let inst = if *integer {
                builders::random_grid_int(*rows, *cols, *k, *cost_max as u32, *weight_max as u32, *seed)?
            } else {
                builders::random_grid(*rows, *cols, *k, (*cost_min, *cost_max), (*weight_min, *weight_max), *seed)?
            };
            (inst, output)
        }
        Build::Tree { nodes, k, seed, output } => {
            (builders::random_tree(*nodes, *k, (0.0, 5.0), (0.5, 2.0), *seed)?, output)
        }
        Build::Stereo {
            left,
            right,
            k,
            s,
            p,
            t,
            no_bt,
            output,
        } => {
            let params = builders::StereoParams {
                k: *k,
                s: *s,
                p: *p,
                t: *t,
                bt_correction: !no_bt,
            };
            let l = pnm::read_pgm(left).with_context(|| format!("reading {}", left.display()))?;
            let r = pnm::read_pgm(right).with_context(|| format!("reading {}", right.display()))?;
            (builders::build_stereo(&l, &r, &params)?, output)
        }
        Build::Segmentation {
            image,
            costs,
            lambda1,
            lambda2,
            sigma,
            output,
        } => {
            let img = pnm::read_ppm(image).with_context(|| format!("reading {}", image.display()))?;
            let text = fs::read_to_string(costs).with_context(|| format!("reading {}", costs.display()))?;
            let rows: Vec<Vec<Cost>> = formats::parse_cost_block(&text)?;
            let params = builders::SegmentationParams {
                lambda1: *lambda1,
                lambda2: *lambda2,
                sigma: *sigma,
            };
            (builders::build_segmentation(&img, rows, &params)?, output)
        }
        Build::StereoPair {
            width,
            height,
            background,
            square,
            seed,
            left,
            right,
        } => {
            let (l, r) = builders::synthetic_stereo_pair(*width, *height, *background, *square, *seed);
            write(left, &pnm::format_pgm(&l))?;
            return write(right, &pnm::format_pgm(&r));
        }
    };
    write(output, &formats::format_instance(&inst))
}

fn read_labeling<S: Scalar>(inst: &PottsInstance<S>, path: &Option<PathBuf>) -> Result<Labeling> {
    let g = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            formats::parse_labeling(&text)?
        }
        None => solve_map_with(inst, &MapOptions::default())?.labeling,
    };
    g.validate(inst)?;
    Ok(g)
}

/// LP solution and the labeling to analyze, sharing the LP solve with the
/// MAP search when no labeling is given.
fn lp_and_labeling<S: Scalar>(
    inst: &PottsInstance<S>,
    path: &Option<PathBuf>,
) -> Result<(PrimalSolution<S>, DualSolution<S>, Labeling)> {
    if path.is_some() {
        let g = read_labeling(inst, path)?;
        let (x, eta) = solve_lp(inst)?;
        return Ok((x, eta, g));
    }
    let (x, eta, map) = solve_lp_and_map(inst, &MapOptions::default())?;
    Ok((x, eta, map.labeling))
}

fn print_value<S: Scalar>(name: &str, v: &S) -> Result<()> {
    out!("{name} {}", format_short(v.to_f64()));
    if S::EXACT {
        out!("{name}_exact {v}");
    }
    Ok(())
}

fn analyze<S: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve {
            instance,
            strategy,
            output,
        } => {
            let inst: PottsInstance<S> = read_instance(instance)?;
            let opts = MapOptions {
                strategy: (*strategy).into(),
                ..Default::default()
            };
            let sol = solve_map_with(&inst, &opts)?;
            out!("labeling {}", sol.labeling);
            print_value("objective", &sol.value)?;
            if let Some(p) = output {
                write(p, &formats::format_labeling(&sol.labeling))?;
            }
        }
        Command::Lp {
            instance,
            labeling,
            solution,
            dual,
        } => {
            let inst: PottsInstance<S> = read_instance(instance)?;
            let (x, eta, g) = lp_and_labeling(&inst, labeling)?;
            let mask = persistency_mask(&x, &g, cli.tol)?;
            print_value("objective", &x.objective)?;
            print_value("dual_objective", &pairwise_dual_value(&inst, &eta)?)?;
            out!("persistent_fraction {:?}", mask.fraction);
            let frac: Vec<String> = mask.fractional_nodes().iter().map(|u| u.to_string()).collect();
            out!("fractional_nodes {}", frac.join(" "));
            if let Some(p) = solution {
                write(p, &formats::format_primal(&inst, &x))?;
            }
            if let Some(p) = dual {
                write(p, &formats::format_dual(&eta))?;
            }
        }
        Command::CheckStable {
            instance,
            params,
            labeling,
            block,
            witness,
            strategy,
        } => {
            let inst: PottsInstance<S> = read_instance(instance)?;
            let g = read_labeling(&inst, labeling)?;
            let opts = StabilityOptions {
                strategy: (*strategy).into(),
                ..Default::default()
            };
            let verdict = match block {
                None => check_stable_with(&inst, &g, params.beta, params.gamma, &opts)?,
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    let nodes = formats::parse_labeling(&text)?.0;
                    let mut inside = vec![false; inst.num_nodes()];
                    for &u in &nodes {
                        if u >= inst.num_nodes() {
                            bail!("block node {u} out of range");
                        }
                        inside[u] = true;
                    }
                    let rest = (0..inst.num_nodes()).filter(|&u| !inside[u]).collect();
                    let decomp = BlockDecomposition::new(inst.num_nodes(), vec![nodes], rest)?;
                    let (x, eta) = solve_lp(&inst)?;
                    let delta = restrict_dual(&inst, &eta, &decomp, &x.objective, &S::from_f64(cli.tol))?;
                    let v = check_block_stable(&inst, &decomp, 0, &g, params.beta, params.gamma, &delta, &opts)?;
                    v.verdict
                }
            };
            write!(io::stdout().lock(), "{}", formats::format_verdict(&verdict))?;
            if let Some(m) = &verdict.margin {
                print_value("margin", m)?;
            }
            if verdict.improves {
                out!("improves 1");
            }
            if verdict.inconclusive {
                out!("inconclusive 1");
            }
            if let (Some(p), Some(f)) = (witness, &verdict.witness) {
                write(p, &formats::format_labeling(f))?;
            }
        }
        Command::FindBlocks {
            instance,
            params,
            iters,
            optimized,
            jobs,
            labeling,
            seed_blocks,
            output,
        } => {
            let inst: PottsInstance<S> = read_instance(instance)?;
            let (x, eta, g) = lp_and_labeling(&inst, labeling)?;
            let seed = match seed_blocks {
                Some(p) => Some(parse_seed(p, inst.num_nodes())?),
                None => None,
            };
            let opts = FinderOptions {
                beta: params.beta,
                gamma: params.gamma,
                iterations: *iters,
                optimized: *optimized,
                jobs: *jobs,
                tol: cli.tol,
                seed,
                ..Default::default()
            };
            let report = block_finder::run_with_lp(&inst, &g, x, eta, &opts)?;
            for rec in &report.iterations {
                out!("iteration {} certified_fraction {:?}", rec.iteration, rec.certified_fraction);
            }
            out!("certified_fraction {:?}", report.certified_fraction());
            let d = report.decomposition();
            let stable = (0..d.num_blocks())
                .filter(|&b| d.status(b) == BlockStatus::Stable)
                .count();
            out!("blocks {} stable {}", d.blocks().iter().filter(|b| !b.is_empty()).count(), stable);
            for (size, count, st) in report.histogram() {
                out!("histogram size {size} blocks {count} stable {st}");
            }
            for (b, msg) in &report.failures {
                eprintln!("block {b} check failed: {msg}");
            }
            if let Some(p) = output {
                write(p, &formats::format_report(&report))?;
            }
        }
        Command::Build(_) | Command::Render { .. } => unreachable!("handled without arithmetic choice"),
    }
    Ok(())
}

fn parse_seed(path: &Path, n: usize) -> Result<BlockDecomposition> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut blocks = Vec::new();
    let mut boundary = None;
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split('#').next().unwrap_or("").split_whitespace();
        let Some(kind) = toks.next() else { continue };
        let ids = toks
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: bad node id", ln + 1))?;
        match kind {
            "block" => blocks.push(ids),
            "boundary" if boundary.is_none() => boundary = Some(ids),
            "boundary" => bail!("line {}: second boundary line", ln + 1),
            other => bail!("line {}: unknown record {other:?}", ln + 1),
        }
    }
    Ok(BlockDecomposition::new(n, blocks, boundary.unwrap_or_default())?)
}
