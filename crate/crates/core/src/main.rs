use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use treecode::bench::{emit_csv, run_experiment, write_csv, Experiment, MeshSpec, ProblemSpec, RunReport, RunSpec};
use treecode::interaction::{InteractionLists, ListOptions};
use treecode::mesh::CubeSplit;
use treecode::solver::{calibrate_pmax, calibration_pair, Mode};
use treecode::Point3;

#[derive(Parser)]
#[command(name = "treecode", version, about = "p-adaptive treecode for the free-space Poisson potential")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and report errors and timings.
    Solve(SolveArgs),
    /// Run a grid of meshes and solver settings.
    Sweep(SweepArgs),
    /// Measure the expansion order at which far-field evaluation becomes
    /// slower than direct quadrature.
    Calibrate(CalibrateArgs),
    /// Print mesh, tree and interaction-list statistics.
    MeshInfo(MeshInfoArgs),
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// Box as `lo..hi` (same bounds on every axis) or `x0,y0,z0..x1,y1,z1`.
    #[arg(long, default_value = "-2..2", allow_hyphen_values = true)]
    domain: String,
    /// Sub-cubes per axis of the base mesh.
    #[arg(long, default_value_t = 1)]
    cells: usize,
    /// Tetrahedra per sub-cube: kuhn6 or centroid24.
    #[arg(long, default_value = "kuhn6")]
    split: CubeSplit,
    /// Base mesh file; overrides --cells and --split.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Far-field nodes with r_K at or above this are demoted.
    #[arg(long, default_value_t = ListOptions::default().demote_at)]
    demote_at: f64,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// gaussian, or file (sum of Gaussians from --problem-file).
    #[arg(long, default_value = "gaussian")]
    problem: String,
    #[arg(long)]
    problem_file: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 2)]
    refine: usize,
    #[arg(long, default_value = "tc1")]
    mode: Mode,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    p_max: usize,
    /// Fixed expansion order (disables adaptive selection).
    #[arg(long)]
    uniform_p: Option<usize>,
    /// Worker threads; 1 gives reproducible timings.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Largest N for which the direct oracle runs.
    #[arg(long, default_value_t = 20_000)]
    direct_cap: usize,
    /// CSV report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated refinement depths.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    refine: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "tc1")]
    mode: Vec<Mode>,
    #[arg(long, value_delimiter = ',', default_value = "1e-3")]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    p_max: Vec<usize>,
    /// Extra uniform-order Treecode 1 runs, one per listed order.
    #[arg(long, value_delimiter = ',')]
    uniform_p: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 20_000)]
    direct_cap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 2)]
    refine: usize,
    /// Orders to time, as `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0..40")]
    orders: String,
}

#[derive(Args)]
struct MeshInfoArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// Write the refined leaf mesh to this file.
    #[arg(long)]
    save: Option<PathBuf>,
}

fn parse_domain(s: &str) -> Result<(Point3, Point3)> {
    let (lo, hi) = s
        .split_once("..")
        .with_context(|| format!("domain `{s}` is not of the form lo..hi"))?;
    let point = |t: &str| -> Result<Point3> {
        let v = t
            .split(',')
            .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad coordinate `{c}`")))
            .collect::<Result<Vec<_>>>()?;
        match v[..] {
            [a] => Ok(Point3::new(a, a, a)),
            [a, b, c] => Ok(Point3::new(a, b, c)),
            _ => bail!("expected 1 or 3 coordinates in `{t}`"),
        }
    };
    Ok((point(lo)?, point(hi)?))
}

fn parse_orders(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty order range `{s}`");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().with_context(|| format!("bad order `{t}`")))
        .collect()
}

fn problem(mesh: &MeshArgs, args: &ProblemArgs) -> Result<ProblemSpec> {
    let (lo, hi) = parse_domain(&mesh.domain)?;
    let mut spec = match args.problem.as_str() {
        "gaussian" => ProblemSpec::gaussian(),
        "file" => {
            let path = args
                .problem_file
                .as_ref()
                .context("--problem file requires --problem-file")?;
            ProblemSpec::from_file(path, lo, hi)?
        }
        other => bail!("unknown problem `{other}` (expected gaussian or file)"),
    };
    spec.lo = lo;
    spec.hi = hi;
    Ok(spec)
}

fn mesh_spec(mesh: &MeshArgs, refine: usize) -> MeshSpec {
    MeshSpec {
        cells: mesh.cells,
        split: mesh.split,
        refine,
        file: mesh.mesh.clone(),
    }
}

fn list_options(mesh: &MeshArgs) -> ListOptions {
    ListOptions {
        demote_at: mesh.demote_at,
        ..ListOptions::default()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"))
}

fn summarize(reports: &[RunReport]) {
    for r in reports {
        let p = r
            .order_histogram
            .iter()
            .rposition(|&c| c > 0)
            .map_or_else(|| "-".to_string(), |p| p.to_string());
        eprintln!(
            "N={} {} eps={:e} p_max={} E1={} E2={} E2(unclamped)={} E_DT={} prep={:.3}s eval={:.3}s clamped={} fallback={} max_p={}",
            r.n,
            r.mode,
            r.epsilon,
            r.p_max,
            fmt_opt(r.e1),
            fmt_opt(r.e2),
            fmt_opt(r.e2_unclamped),
            fmt_opt(r.e_dt),
            r.prep_s,
            r.eval_s,
            r.clamped_count,
            r.fallback_count,
            p,
        );
    }
}

fn output(reports: &[RunReport], out: &Option<PathBuf>) -> Result<()> {
    summarize(reports);
    match out {
        Some(path) => emit_csv(reports, path).with_context(|| format!("writing {}", path.display()))?,
        None => write_csv(reports, std::io::stdout().lock())?,
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let p_max = args.p_max.max(args.uniform_p.unwrap_or(0));
    let exp = Experiment {
        problem: problem(&args.mesh, &args.problem)?,
        meshes: vec![mesh_spec(&args.mesh, args.refine)],
        runs: vec![RunSpec {
            mode: args.mode,
            epsilon: args.epsilon,
            p_max,
            uniform_p: args.uniform_p,
        }],
        threads: args.threads,
        direct_cap: args.direct_cap,
        list_options: list_options(&args.mesh),
    };
    let reports = run_experiment(&exp)?;
    output(&reports, &args.out)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut runs = Vec::new();
    for &mode in &args.mode {
        for &epsilon in &args.epsilon {
            for &p_max in &args.p_max {
                runs.push(RunSpec {
                    mode,
                    epsilon,
                    p_max,
                    uniform_p: None,
                });
            }
        }
    }
    for &p in &args.uniform_p {
        runs.push(RunSpec {
            mode: Mode::Treecode1,
            epsilon: args.epsilon[0],
            p_max: p,
            uniform_p: Some(p),
        });
    }
    let exp = Experiment {
        problem: problem(&args.mesh, &args.problem)?,
        meshes: args.refine.iter().map(|&r| mesh_spec(&args.mesh, r)).collect(),
        runs,
        threads: args.threads,
        direct_cap: args.direct_cap,
        list_options: list_options(&args.mesh),
    };
    let reports = run_experiment(&exp)?;
    output(&reports, &args.out)
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let orders = parse_orders(&args.orders)?;
    let spec = problem(&args.mesh, &args.problem)?;
    let tree = mesh_spec(&args.mesh, args.refine).build(&spec)?;
    let lists = InteractionLists::build_with(&tree, list_options(&args.mesh))?;

    let Some((target, source, ratio)) = calibration_pair(&tree, &lists) else {
        bail!("mesh has no leaf-level far-field pair to time");
    };
    let x = tree.leaf_node(target).barycenter;
    let cal = calibrate_pmax(&tree, source, x, &orders, &|p| spec.source(p))?;
    println!("sample pair: target leaf {target}, source leaf {source}, r_K = {ratio:.4}");
    println!("direct quadrature: {:.3e} s", cal.direct_seconds);
    println!("p,seconds");
    for (p, t) in &cal.table {
        println!("{p},{t:.6e}");
    }
    match cal.crossover {
        Some(p) => println!("crossover order: {p}"),
        None => println!("crossover order: none up to {}", orders.iter().max().unwrap_or(&0)),
    }
    Ok(())
}

fn mesh_info(args: MeshInfoArgs) -> Result<()> {
    let spec = problem(
        &args.mesh,
        &ProblemArgs {
            problem: "gaussian".into(),
            problem_file: None,
        },
    )?;
    let tree = mesh_spec(&args.mesh, args.refine).build(&spec)?;
    let lists = InteractionLists::build_with(&tree, list_options(&args.mesh))?;
    let n = tree.num_leaves() as f64;
    println!("leaves: {}", tree.num_leaves());
    println!("nodes: {}", tree.nodes().len());
    println!("vertices: {}", tree.vertices().len());
    println!("depth: {}", tree.depth());
    println!("volume: {}", tree.total_volume());
    println!("mac_max: {}", lists.mac_max());
    println!("demoted: {}", lists.demoted());
    println!("near per leaf: {:.2}", lists.total_near() as f64 / n);
    println!("far per leaf: {:.2}", lists.total_far() as f64 / n);
    if let Some(path) = &args.save {
        tree.leaf_mesh()
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // clap appends usage hints; keep the diagnostic to one line
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Calibrate(a) => calibrate(a),
        Command::MeshInfo(a) => mesh_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
