//! Test problems, error metrics, experiment grids and CSV reports.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::interaction::{InteractionLists, ListOptions};
use crate::mesh::{build_box_mesh, CubeSplit, Mesh};
use crate::quadrature::LeafQuadrature;
use crate::solver::{direct_solve, estimate_f_bound, Mode, Solution, SolverConfig, Treecode};
use crate::tree::HierarchyTree;

/// `A exp(-π (a1 x1² + a2 x2² + a3 x3²))`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub a: [f64; 3],
}

impl GaussianTerm {
    pub fn eval(&self, p: Point3) -> f64 {
        self.amplitude * (-PI * (self.a[0] * p.x * p.x + self.a[1] * p.y * p.y + self.a[2] * p.z * p.z)).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// `u = 2 exp(-π (x1² + 2 x2² + 3 x3²))` and `f = -Δu`.
    Gaussian,
    /// Sum of Gaussians with no known potential.
    GaussianSum(Vec<GaussianTerm>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub lo: Point3,
    pub hi: Point3,
    pub source: Source,
    /// Analytic bound F on |f|, if known.
    pub f_bound: Option<f64>,
}

const GAUSSIAN_U: GaussianTerm = GaussianTerm {
    amplitude: 2.0,
    a: [1.0, 2.0, 3.0],
};

impl ProblemSpec {
    /// The Gaussian test problem on `[-2, 2]³`, with `F = 24π` at the origin.
    pub fn gaussian() -> Self {
        Self {
            lo: Point3::new(-2.0, -2.0, -2.0),
            hi: Point3::new(2.0, 2.0, 2.0),
            source: Source::Gaussian,
            f_bound: Some(24.0 * PI),
        }
    }

    /// A sum of Gaussians read from `path`, one `A a1 a2 a3` line per term
    /// (`#` starts a comment). Exponents must be non-negative, so `Σ|A|`
    /// bounds |f|.
    pub fn from_file(path: &Path, lo: Point3, hi: Point3) -> Result<Self> {
        let file = File::open(path)?;
        let mut terms = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let nums = content
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("`{t}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let [amplitude, a1, a2, a3] = nums[..] else {
                return Err(err(format!("expected 4 numbers, found {}", nums.len())));
            };
            if !nums.iter().all(|v| v.is_finite()) || a1 < 0.0 || a2 < 0.0 || a3 < 0.0 {
                return Err(err("exponents must be finite and non-negative".into()));
            }
            terms.push(GaussianTerm {
                amplitude,
                a: [a1, a2, a3],
            });
        }
        if terms.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "no source terms".into(),
            });
        }
        let bound = terms.iter().map(|t| t.amplitude.abs()).sum();
        Ok(Self {
            lo,
            hi,
            source: Source::GaussianSum(terms),
            f_bound: Some(bound),
        })
    }

    pub fn source(&self, p: Point3) -> f64 {
        match &self.source {
            Source::Gaussian => {
                let (x2, y2, z2) = (p.x * p.x, p.y * p.y, p.z * p.z);
                -(4.0 * PI * PI * x2 + 16.0 * PI * PI * y2 + 36.0 * PI * PI * z2 - 12.0 * PI)
                    * GAUSSIAN_U.eval(p)
            }
            Source::GaussianSum(terms) => terms.iter().map(|t| t.eval(p)).sum(),
        }
    }

    pub fn exact(&self, p: Point3) -> Option<f64> {
        match self.source {
            Source::Gaussian => Some(GAUSSIAN_U.eval(p)),
            Source::GaussianSum(_) => None,
        }
    }

    pub fn has_exact(&self) -> bool {
        matches!(self.source, Source::Gaussian)
    }
}

/// `(Σ_i |a_i - b_i|² |τ_i|)^{1/2}` over the leaves of `tree`.
pub fn discrete_l2(a: &[f64], b: &[f64], tree: &HierarchyTree) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() != tree.num_leaves() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: tree.num_leaves(),
        });
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| (x - y) * (x - y) * tree.leaf_node(i).volume)
        .sum();
    Ok(sum.sqrt())
}

/// Max |u| over samples of the leaf faces on the boundary of the problem box:
/// face vertices, edge midpoints, centroid and three interior points.
pub fn truncation_error(problem: &ProblemSpec, tree: &HierarchyTree) -> Option<f64> {
    let (lo, hi) = (problem.lo.to_array(), problem.hi.to_array());
    let tol: Vec<f64> = (0..3).map(|i| 1e-12 * (hi[i] - lo[i])).collect();
    let on_plane = |p: Point3, axis: usize, v: f64| (p[axis] - v).abs() <= tol[axis];
    let mut max: Option<f64> = None;
    for id in tree.leaves() {
        let c = tree.corners(id);
        for skip in 0..4 {
            let face: Vec<Point3> = (0..4).filter(|&k| k != skip).map(|k| c[k]).collect();
            let on_boundary = (0..3).any(|axis| {
                [lo[axis], hi[axis]]
                    .iter()
                    .any(|&v| face.iter().all(|&p| on_plane(p, axis, v)))
            });
            if !on_boundary {
                continue;
            }
            const BARY: [[f64; 3]; 10] = [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.5, 0.5, 0.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5],
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
            ];
            for b in BARY {
                let p = face[0] * b[0] + face[1] * b[1] + face[2] * b[2];
                let u = problem.exact(p)?.abs();
                max = Some(max.map_or(u, |m: f64| m.max(u)));
            }
        }
    }
    max
}

/// How to obtain the leaf mesh of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSpec {
    pub cells: usize,
    pub split: CubeSplit,
    pub refine: usize,
    /// Base mesh read from a file instead of a box.
    pub file: Option<PathBuf>,
}

impl MeshSpec {
    pub fn build(&self, problem: &ProblemSpec) -> Result<HierarchyTree> {
        let base = match &self.file {
            Some(path) => Mesh::load(path)?,
            None => build_box_mesh(problem.lo, problem.hi, self.cells, self.split)?,
        };
        Ok(HierarchyTree::from_mesh(base)?.refined(self.refine))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub mode: Mode,
    pub epsilon: f64,
    pub p_max: usize,
    pub uniform_p: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub problem: ProblemSpec,
    pub meshes: Vec<MeshSpec>,
    pub runs: Vec<RunSpec>,
    pub threads: usize,
    /// Largest N for which the direct oracle runs.
    pub direct_cap: usize,
    pub list_options: ListOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub n: usize,
    pub mode: Mode,
    pub epsilon: f64,
    pub p_max: usize,
    pub uniform_p: Option<usize>,
    pub e1: Option<f64>,
    /// Against the direct oracle, all targets.
    pub e2: Option<f64>,
    /// Against the direct oracle, only targets with no clamped evaluation.
    pub e2_unclamped: Option<f64>,
    pub e_dt: Option<f64>,
    pub prep_s: f64,
    pub eval_s: f64,
    pub mac_max: Option<f64>,
    pub clamped_count: u64,
    pub fallback_count: u64,
    pub order_histogram: Vec<u64>,
}

/// E2 over the targets that `keep` selects.
fn l2_masked(a: &[f64], b: &[f64], tree: &HierarchyTree, keep: &[bool]) -> f64 {
    (0..a.len())
        .filter(|&i| keep[i])
        .map(|i| (a[i] - b[i]).powi(2) * tree.leaf_node(i).volume)
        .sum::<f64>()
        .sqrt()
}

/// Runs every (mesh, run) pair of the grid; runs sharing a mesh reuse its
/// tree, quadrature, lists and direct oracle.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<RunReport>> {
    let problem = &exp.problem;
    let mut reports = Vec::new();
    for mesh in &exp.meshes {
        let t0 = Instant::now();
        let tree = mesh.build(problem)?;
        let quad = LeafQuadrature::build(&tree, |p| problem.source(p))?;
        let base_prep = t0.elapsed().as_secs_f64();
        let n = tree.num_leaves();
        info!("mesh: N = {n}, depth {}", tree.depth());

        let f_bound = problem.f_bound.unwrap_or_else(|| estimate_f_bound(&quad));
        let exact: Option<Vec<f64>> = problem.has_exact().then(|| {
            (0..n)
                .map(|i| problem.exact(tree.leaf_node(i).barycenter).unwrap_or(0.0))
                .collect()
        });
        let e_dt = truncation_error(problem, &tree);

        let oracle: Option<Solution> = if n <= exp.direct_cap {
            info!("direct oracle, N = {n}");
            Some(direct_solve(&tree, &quad, exp.threads)?)
        } else {
            if exp.runs.iter().any(|r| r.mode != Mode::Direct) {
                warn!("N = {n} exceeds the direct cap {}; E2 omitted", exp.direct_cap);
            }
            None
        };

        let report = |run: &RunSpec, sol: &Solution, prep_s: f64, mac_max: Option<f64>| -> Result<RunReport> {
            let e1 = exact.as_ref().map(|u| discrete_l2(&sol.values, u, &tree)).transpose()?;
            let (e2, e2_unclamped) = match &oracle {
                Some(o) => {
                    let keep: Vec<bool> = sol.clamped_targets.iter().map(|&c| c == 0).collect();
                    let keep = if keep.is_empty() { vec![true; n] } else { keep };
                    (
                        Some(discrete_l2(&sol.values, &o.values, &tree)?),
                        keep.iter().any(|&k| k).then(|| l2_masked(&sol.values, &o.values, &tree, &keep)),
                    )
                }
                None => (None, None),
            };
            Ok(RunReport {
                n,
                mode: run.mode,
                epsilon: run.epsilon,
                p_max: run.p_max,
                uniform_p: run.uniform_p,
                e1,
                e2,
                e2_unclamped,
                e_dt,
                prep_s,
                eval_s: sol.eval_seconds,
                mac_max,
                clamped_count: sol.clamped_count,
                fallback_count: sol.fallback_count,
                order_histogram: sol.order_histogram.clone(),
            })
        };

        for run in exp.runs.iter().filter(|r| r.mode == Mode::Direct) {
            match &oracle {
                Some(o) => reports.push(report(run, o, base_prep, None)?),
                None => warn!("skipping direct run at N = {n} above the direct cap"),
            }
        }

        let mut tree_runs: Vec<&RunSpec> = exp.runs.iter().filter(|r| r.mode != Mode::Direct).collect();
        if tree_runs.is_empty() {
            continue;
        }
        let t1 = Instant::now();
        let lists = InteractionLists::build_with(&tree, exp.list_options)?;
        let list_prep = t1.elapsed().as_secs_f64();
        let mac_max = lists.mac_max();
        tree_runs.sort_by_key(|r| r.p_max);
        let mut p_values: Vec<usize> = tree_runs.iter().map(|r| r.p_max).collect();
        p_values.dedup();
        let mut lists = Some(lists);
        for p_max in p_values {
            let t2 = Instant::now();
            let tc = Treecode::new(&tree, &quad, lists.take().expect("lists"), p_max, exp.threads)?;
            let prep_s = base_prep + list_prep + t2.elapsed().as_secs_f64();
            for run in tree_runs.iter().filter(|r| r.p_max == p_max) {
                let mut cfg = SolverConfig::new(run.mode, run.epsilon, run.p_max, f_bound)?
                    .with_threads(exp.threads);
                cfg.uniform_p = run.uniform_p;
                info!("{} eps={:e} p_max={} uniform={:?} N={n}", run.mode, run.epsilon, run.p_max, run.uniform_p);
                let sol = tc.solve(&cfg)?;
                reports.push(report(run, &sol, prep_s, Some(mac_max))?);
            }
            lists = Some(tc.into_lists());
        }
    }
    Ok(reports)
}

pub const CSV_HEADER: [&str; 12] = [
    "N",
    "mode",
    "epsilon",
    "p_max",
    "uniform_p",
    "E1",
    "E2",
    "E_DT",
    "prep_s",
    "eval_s",
    "mac_max",
    "clamped_count",
];

fn fmt_f64(v: f64) -> String {
    format!("{v:.15e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv(reports: &[RunReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.write_record([
            r.n.to_string(),
            r.mode.to_string(),
            fmt_f64(r.epsilon),
            r.p_max.to_string(),
            r.uniform_p.map(|p| p.to_string()).unwrap_or_default(),
            fmt_opt(r.e1),
            fmt_opt(r.e2),
            fmt_opt(r.e_dt),
            fmt_f64(r.prep_s),
            fmt_f64(r.eval_s),
            fmt_opt(r.mac_max),
            r.clamped_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(reports: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    write_csv(reports, File::create(path)?)
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub n: usize,
    pub mode: Mode,
    pub epsilon: f64,
    pub p_max: usize,
    pub uniform_p: Option<usize>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e_dt: Option<f64>,
    pub prep_s: f64,
    pub eval_s: f64,
    pub mac_max: Option<f64>,
    pub clamped_count: u64,
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|e| err(format!("column {}: {e}", CSV_HEADER[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<u64> {
            rec[k].parse().map_err(|e| err(format!("column {}: {e}", CSV_HEADER[k])))
        };
        rows.push(CsvRow {
            n: int(0)? as usize,
            mode: rec[1].parse()?,
            epsilon: num(2)?,
            p_max: int(3)? as usize,
            uniform_p: if rec[4].is_empty() { None } else { Some(int(4)? as usize) },
            e1: opt(5)?,
            e2: opt(6)?,
            e_dt: opt(7)?,
            prep_s: num(8)?,
            eval_s: num(9)?,
            mac_max: opt(10)?,
            clamped_count: int(11)?,
        });
    }
    Ok(rows)
}
