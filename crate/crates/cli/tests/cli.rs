use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blockstab::formats::parse_report;
use blockstab::pnm::parse_ppm;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockstab"))
}

fn run_ok(args: &[&str], dir: &Path) -> String {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{out}"))
}

fn num(out: &str, key: &str) -> f64 {
    field(out, key).trim().parse().unwrap()
}

#[test]
fn triangle_solve_and_lp() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "golden", "triangle", "--eps", "0.1", "-o", "tri.potts"], d);

    let out = run_ok(&["--rational", "solve", "tri.potts"], d);
    assert_eq!(field(&out, "labeling"), "1 0 1");
    assert_eq!(field(&out, "objective_exact"), "2");

    let out = run_ok(&["lp", "tri.potts", "--solution", "x.txt", "--dual", "eta.txt"], d);
    assert!((num(&out, "objective") - 1.65).abs() <= 1e-6);
    assert_eq!(field(&out, "persistent_fraction"), "0.0");
    assert_eq!(field(&out, "fractional_nodes"), "0 1 2");
    assert!(fs::read_to_string(d.join("x.txt")).unwrap().contains("objective"));
    assert!(fs::read_to_string(d.join("eta.txt")).unwrap().starts_with("eta"));
}

#[test]
fn combined_check_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "golden", "combined", "--eps", "0.01", "--gamma", "0.1", "-o", "c.potts"], d);

    let out = run_ok(&["solve", "c.potts", "-o", "g.txt"], d);
    assert_eq!(field(&out, "labeling"), "0 0 0 1 1 1");

    let out = run_ok(
        &["check-stable", "c.potts", "--beta", "2", "--gamma", "1", "--labeling", "g.txt", "--witness", "w.txt"],
        d,
    );
    assert_eq!(field(&out, "stable"), "0");
    let w: Vec<usize> = field(&out, "witness").split(' ').map(|t| t.parse().unwrap()).collect();
    assert_ne!(w[5], 1, "witness must move z");
    assert!(d.join("w.txt").exists());

    let out = run_ok(&["check-stable", "c.potts", "--beta", "1", "--gamma", "1"], d);
    assert_eq!(field(&out, "stable"), "1");

    fs::write(d.join("s.txt"), "0 1 2\n").unwrap();
    let out = run_ok(&["check-stable", "c.potts", "--block", "s.txt"], d);
    assert_eq!(field(&out, "stable"), "1");

    let out = run_ok(&["--rational", "check-stable", "c.potts", "--beta", "inf", "--gamma", "1"], d);
    assert_eq!(field(&out, "stable"), "0");
}

#[test]
fn combined_find_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "golden", "combined", "-o", "c.potts"], d);
    fs::write(d.join("seed.txt"), "block 0 1 2\nblock 3 4 5\nboundary\n").unwrap();

    for extra in [&[][..], &["--optimized"][..], &["--jobs", "2"][..]] {
        let mut args = vec!["find-blocks", "c.potts", "--iters", "5", "--seed-blocks", "seed.txt", "-o", "r.txt"];
        args.extend_from_slice(extra);
        let out = run_ok(&args, d);
        assert!(out.contains("histogram size"));
        let report = parse_report(&fs::read_to_string(d.join("r.txt")).unwrap()).unwrap();
        let stable: Vec<bool> = report.nodes.iter().map(|n| n.stable).collect();
        // T fails as a whole; once z is evicted the pair {x,y} certifies.
        assert_eq!(report.iterations[0].1, 0.5, "{extra:?}");
        assert_eq!(stable, [true, true, true, true, true, false], "{extra:?}");
        assert_eq!(report.iterations.len(), 5);
    }

    // The label-interior seeding keeps v alone, so S never forms as one
    // block; v and the pair {x,y} are certified.
    let out = run_ok(&["find-blocks", "c.potts", "--iters", "5", "-o", "r.txt"], d);
    assert_eq!(num(&out, "certified_fraction"), 0.5);
    let report = parse_report(&fs::read_to_string(d.join("r.txt")).unwrap()).unwrap();
    let stable: Vec<bool> = report.nodes.iter().map(|n| n.stable).collect();
    assert_eq!(stable, [false, true, false, true, true, false]);
}

#[test]
fn zero_iterations_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "golden", "combined", "-o", "c.potts"], d);
    let out = run(&["find-blocks", "c.potts", "--iters", "0"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(!run(&["solve", "missing.potts"], d).status.success());
    fs::write(d.join("bad.potts"), "POTTS 2 2 1\n0 1\n").unwrap();
    assert!(!run(&["solve", "bad.potts"], d).status.success());
    run_ok(&["build", "golden", "triangle", "-o", "t.potts"], d);
    assert!(!run(&["check-stable", "t.potts", "--beta", "0.5"], d).status.success());
}

#[test]
fn grid_find_blocks_variants_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for seed in 0..4 {
        let s = seed.to_string();
        run_ok(&["build", "grid", "--rows", "3", "--cols", "3", "--k", "3", "--seed", &s, "-o", "g.potts"], d);
        run_ok(&["find-blocks", "g.potts", "--iters", "5", "-o", "a.txt"], d);
        run_ok(&["find-blocks", "g.potts", "--iters", "5", "--optimized", "-o", "b.txt"], d);
        let a = parse_report(&fs::read_to_string(d.join("a.txt")).unwrap()).unwrap();
        let b = parse_report(&fs::read_to_string(d.join("b.txt")).unwrap()).unwrap();
        let fa: Vec<bool> = a.nodes.iter().map(|n| n.stable).collect();
        let fb: Vec<bool> = b.nodes.iter().map(|n| n.stable).collect();
        assert_eq!(fa, fb, "seed {seed}");
    }
}

#[test]
fn render_two_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "grid", "--rows", "2", "--cols", "4", "--k", "2", "-o", "g.potts"], d);
    let mut report = String::new();
    for u in 0..8 {
        let block = usize::from(u % 4 >= 2);
        let label = usize::from(u == 0);
        report.push_str(&format!("node {u} block {block} status S label {label}\n"));
    }
    fs::write(d.join("r.txt"), report).unwrap();
    run_ok(
        &["render", "--report", "r.txt", "--instance", "g.potts", "--rows", "2", "--cols", "4", "-o", "m.ppm"],
        d,
    );
    let img = parse_ppm(&fs::read(d.join("m.ppm")).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (4, 2));
    let green = img.data.iter().filter(|p| **p == [0.0, 255.0, 0.0]).count();
    let red = img.data.iter().filter(|p| p[0] == 255.0 && p[1] == 0.0).count();
    assert_eq!((green, red), (4, 0));
    assert_eq!(img.at(0, 0), [255.0; 3]);
    assert_eq!(img.at(1, 0), [0.0; 3]);

    let out = run(
        &["render", "--report", "r.txt", "--instance", "g.potts", "--rows", "3", "--cols", "4", "-o", "m.ppm"],
        d,
    );
    assert!(!out.status.success());
}

#[test]
fn stereo_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["build", "stereo-pair", "--width", "12", "--height", "10", "--left", "l.pgm", "--right", "r.pgm"], d);
    run_ok(&["build", "stereo", "--left", "l.pgm", "--right", "r.pgm", "--k", "5", "-o", "s.potts"], d);
    let text = fs::read_to_string(d.join("s.potts")).unwrap();
    assert!(text.starts_with("POTTS 120 5 "));
    let out = run_ok(&["lp", "s.potts"], d);
    assert!(num(&out, "persistent_fraction") >= 0.0);
    run_ok(&["find-blocks", "s.potts", "--iters", "2", "-o", "rep.txt"], d);
    run_ok(
        &["render", "--report", "rep.txt", "--instance", "s.potts", "--rows", "10", "--cols", "12", "-o", "m.ppm"],
        d,
    );
    assert!(fs::read_to_string(d.join("m.ppm")).unwrap().starts_with("P3"));
}

#[test]
fn segmentation_build() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("img.ppm"), "P3\n2 1\n255\n10 10 10 10 10 10\n").unwrap();
    fs::write(d.join("costs.txt"), "0 1\n1 0\n").unwrap();
    run_ok(&["build", "segmentation", "--image", "img.ppm", "--costs", "costs.txt", "-o", "s.potts"], d);
    let text = fs::read_to_string(d.join("s.potts")).unwrap();
    let edge = text.lines().last().unwrap();
    assert_eq!(edge, "0 1 105");
}
