//! Direct summation and the two treecode evaluators.

use std::f64::consts::PI;
use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::expansion::{compute_moments, num_terms, Evaluator, IndexTable, TreeMoments};
use crate::geometry::Point3;
use crate::interaction::{mac_geometry, InteractionLists, LeafLists, MacGeometry};
use crate::quadrature::{LeafQuadrature, POINTS_PER_ELEMENT};
use crate::tree::HierarchyTree;

const INV_4PI: f64 = 0.25 / PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Direct,
    Treecode1,
    Treecode2,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Direct => "direct",
            Mode::Treecode1 => "tc1",
            Mode::Treecode2 => "tc2",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" | "ds" => Ok(Mode::Direct),
            "tc1" | "treecode1" => Ok(Mode::Treecode1),
            "tc2" | "treecode2" => Ok(Mode::Treecode2),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode `{s}` (expected direct, tc1 or tc2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub p_max: usize,
    /// Bound F on |f| over the domain.
    pub f_bound: f64,
    pub mode: Mode,
    /// Fixed expansion order for every far-field node instead of adaptive
    /// selection.
    pub uniform_p: Option<usize>,
    pub threads: usize,
}

impl SolverConfig {
    pub fn new(mode: Mode, epsilon: f64, p_max: usize, f_bound: f64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            p_max,
            f_bound,
            mode,
            uniform_p: None,
            threads: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_uniform_p(mut self, p: usize) -> Self {
        self.uniform_p = Some(p);
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    /// `C = F / 4π`
    pub fn c_const(&self) -> f64 {
        self.f_bound.abs() * INV_4PI
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !self.f_bound.is_finite() {
            return Err(Error::InvalidArgument("source bound F must be finite".into()));
        }
        if let Some(p) = self.uniform_p {
            if p > self.p_max {
                return Err(Error::OrderMismatch {
                    requested: p,
                    available: self.p_max,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderChoice {
    Order(usize),
    /// No order up to `P_max` meets the criterion.
    Fallback,
}

/// Smallest `p` with `r^{p+1} |Ω_K| / (R (1 - r)) < ε / (8^s n C M)`.
pub fn select_order(
    geom: &MacGeometry,
    volume: f64,
    cfg: &SolverConfig,
    n: usize,
    m: usize,
    s: u32,
) -> Result<OrderChoice> {
    if !(geom.ratio < 1.0) {
        return Err(Error::MacViolation { ratio: geom.ratio });
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "far-field count n and tree depth M must be positive".into(),
        ));
    }
    let c = cfg.c_const();
    let rhs = if c == 0.0 {
        f64::INFINITY
    } else {
        cfg.epsilon / (8f64.powi(s as i32) * n as f64 * c * m as f64)
    };
    let mut term = geom.ratio * volume / (geom.big_r * (1.0 - geom.ratio));
    for p in 0..=cfg.p_max {
        if term < rhs {
            return Ok(OrderChoice::Order(p));
        }
        term *= geom.ratio;
    }
    Ok(OrderChoice::Fallback)
}

/// Truncation bound `C r^{p+1} |Ω_K| / (R (1 - r))` of one far-field term.
pub fn term_bound(geom: &MacGeometry, volume: f64, p: usize, c: f64) -> f64 {
    c * geom.ratio.powi(p as i32 + 1) * volume / (geom.big_r * (1.0 - geom.ratio))
}

/// `Σ_l G(x, y_l) f(y_l) ω_l` over one leaf's quadrature points.
#[inline]
pub fn leaf_direct_sum(x: Point3, quad: &LeafQuadrature, leaf: usize) -> f64 {
    let r = LeafQuadrature::range(leaf);
    let mut s = 0.0;
    for ((y, v), w) in quad.points[r.clone()]
        .iter()
        .zip(&quad.values[r.clone()])
        .zip(&quad.weights[r])
    {
        s += v * w / (x - *y).norm();
    }
    s * INV_4PI
}

/// `max |f(y_l)|` over all cached quadrature points.
pub fn estimate_f_bound(quad: &LeafQuadrature) -> f64 {
    quad.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Solution {
    /// u at each leaf barycenter, in leaf order.
    pub values: Vec<f64>,
    /// Per-target truncation bound evaluated with the orders actually used
    /// (zero for direct summation).
    pub bounds: Vec<f64>,
    /// Far-field evaluations per expansion order.
    pub order_histogram: Vec<u64>,
    /// Treecode 2 leaves summed directly because no order met the criterion.
    pub fallback_count: u64,
    /// Treecode 1 evaluations clamped to `P_max` in violation of the criterion.
    pub clamped_count: u64,
    /// Clamped evaluations per target (empty for direct summation).
    pub clamped_targets: Vec<u32>,
    pub eval_seconds: f64,
}

impl Solution {
    pub fn far_evaluations(&self) -> u64 {
        self.order_histogram.iter().sum()
    }

    /// Largest order used, if any far-field evaluation happened.
    pub fn max_order_used(&self) -> Option<usize> {
        self.order_histogram.iter().rposition(|&c| c > 0)
    }
}

#[derive(Clone, Debug, Default)]
struct Stats {
    histogram: Vec<u64>,
    fallback: u64,
    clamped: u64,
}

impl Stats {
    fn merge(mut self, other: Stats) -> Stats {
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
        self.fallback += other.fallback;
        self.clamped += other.clamped;
        self
    }
}

/// Runs `eval(leaf, stats, scratch) -> (value, bound)` over all targets.
fn run_targets<S, I, F>(n: usize, threads: usize, init: I, eval: F) -> (Vec<f64>, Vec<f64>, Stats, Vec<u32>)
where
    S: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(usize, &mut Stats, &mut S) -> (f64, f64) + Sync + Send,
{
    if threads <= 1 {
        let mut stats = Stats::default();
        let mut scratch = init();
        let mut clamped = Vec::with_capacity(n);
        let (values, bounds) = (0..n)
            .map(|i| {
                let before = stats.clamped;
                let r = eval(i, &mut stats, &mut scratch);
                clamped.push((stats.clamped - before) as u32);
                r
            })
            .unzip();
        return (values, bounds, stats, clamped);
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| {
        let chunk = 64;
        let parts: Vec<(Vec<f64>, Vec<f64>, Stats, Vec<u32>)> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut stats = Stats::default();
                let mut scratch = init();
                let mut clamped = Vec::with_capacity(chunk);
                let (v, b) = (c * chunk..((c + 1) * chunk).min(n))
                    .map(|i| {
                        let before = stats.clamped;
                        let r = eval(i, &mut stats, &mut scratch);
                        clamped.push((stats.clamped - before) as u32);
                        r
                    })
                    .unzip();
                (v, b, stats, clamped)
            })
            .collect();
        let mut values = Vec::with_capacity(n);
        let mut bounds = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        let mut stats = Stats::default();
        for (v, b, s, c) in parts {
            values.extend(v);
            bounds.extend(b);
            clamped.extend(c);
            stats = stats.merge(s);
        }
        (values, bounds, stats, clamped)
    })
}

/// u(x_i) = Σ over all leaves of the degree-6 quadrature of G(x_i, ·) f.
pub fn direct_solve(tree: &HierarchyTree, quad: &LeafQuadrature, threads: usize) -> Result<Solution> {
    if quad.num_leaves() != tree.num_leaves() {
        return Err(Error::LengthMismatch {
            left: quad.num_leaves(),
            right: tree.num_leaves(),
        });
    }
    let start = Instant::now();
    let n = tree.num_leaves();
    let (values, bounds, _, _) = run_targets(
        n,
        threads,
        || (),
        |i, _, _| {
            let x = tree.leaf_node(i).barycenter;
            let mut u = 0.0;
            for leaf in 0..n {
                u += leaf_direct_sum(x, quad, leaf);
            }
            (u, 0.0)
        },
    );
    Ok(Solution {
        values,
        bounds,
        eval_seconds: start.elapsed().as_secs_f64(),
        ..Solution::default()
    })
}

/// Everything the treecodes precompute: interaction lists and moments.
#[derive(Debug)]
pub struct Treecode<'a> {
    tree: &'a HierarchyTree,
    quad: &'a LeafQuadrature,
    lists: InteractionLists,
    moments: TreeMoments,
    table: IndexTable,
}

struct Scratch<'t> {
    lists: LeafLists,
    eval: Evaluator<'t>,
}

impl<'a> Treecode<'a> {
    /// Builds moments to `p_max` over prebuilt lists.
    pub fn new(
        tree: &'a HierarchyTree,
        quad: &'a LeafQuadrature,
        lists: InteractionLists,
        p_max: usize,
        threads: usize,
    ) -> Result<Self> {
        let table = IndexTable::new(p_max);
        let moments = compute_moments(tree, quad, p_max, &table, threads > 1)?;
        Ok(Self {
            tree,
            quad,
            lists,
            moments,
            table,
        })
    }

    /// Reassembles a solver from [`Treecode::into_parts`] output.
    pub fn from_parts(
        tree: &'a HierarchyTree,
        quad: &'a LeafQuadrature,
        lists: InteractionLists,
        moments: TreeMoments,
    ) -> Result<Self> {
        if moments.num_nodes() != tree.nodes().len() || quad.num_leaves() != tree.num_leaves() {
            return Err(Error::InvalidArgument("moments or quadrature belong to a different tree".into()));
        }
        Ok(Self {
            tree,
            quad,
            lists,
            table: IndexTable::new(moments.max_order()),
            moments,
        })
    }

    pub fn into_parts(self) -> (InteractionLists, TreeMoments) {
        (self.lists, self.moments)
    }

    pub fn tree(&self) -> &HierarchyTree {
        self.tree
    }

    pub fn lists(&self) -> &InteractionLists {
        &self.lists
    }

    pub fn into_lists(self) -> InteractionLists {
        self.lists
    }

    pub fn moments(&self) -> &TreeMoments {
        &self.moments
    }

    pub fn p_max(&self) -> usize {
        self.moments.max_order()
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<Solution> {
        cfg.validate()?;
        if cfg.p_max > self.p_max() {
            return Err(Error::OrderMismatch {
                requested: cfg.p_max,
                available: self.p_max(),
            });
        }
        let start = Instant::now();
        let (values, bounds, stats, clamped_targets) = run_targets(
            self.tree.num_leaves(),
            cfg.threads,
            || Scratch {
                lists: LeafLists::default(),
                eval: Evaluator::new(&self.table),
            },
            |leaf, stats, scratch| self.eval_target(leaf, cfg, stats, scratch),
        );
        let mut histogram = stats.histogram;
        histogram.resize(cfg.p_max + 1, 0);
        Ok(Solution {
            values,
            bounds,
            order_histogram: histogram,
            fallback_count: stats.fallback,
            clamped_count: stats.clamped,
            clamped_targets,
            eval_seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn eval_target(
        &self,
        leaf: usize,
        cfg: &SolverConfig,
        stats: &mut Stats,
        scratch: &mut Scratch<'_>,
    ) -> (f64, f64) {
        if stats.histogram.len() <= cfg.p_max {
            stats.histogram.resize(cfg.p_max + 1, 0);
        }
        let tree = self.tree;
        let x = tree.leaf_node(leaf).barycenter;
        self.lists.lists_for(tree, leaf, &mut scratch.lists);
        let lists = &scratch.lists;

        let mut u = 0.0;
        for &k in &lists.near {
            let l = tree.leaf_index(k as usize).expect("near-field entries are leaves");
            u += leaf_direct_sum(x, self.quad, l);
        }
        let m = tree.depth();
        let c = cfg.c_const();
        let mut bound = 0.0;
        for &k in &lists.far {
            let node = tree.node(k as usize);
            let n = lists.level_counts[node.level as usize] as usize;
            let geom = mac_geometry(x, node).expect("far-field node is away from the target");
            match cfg.mode {
                Mode::Treecode2 if cfg.uniform_p.is_none() => {
                    let (v, b) = self.tc2_node(x, k as usize, cfg, n, m, 0, stats, &mut scratch.eval);
                    u += v;
                    bound += b;
                }
                _ => {
                    let p = match cfg.uniform_p {
                        Some(p) => p,
                        None => match select_order(&geom, node.volume, cfg, n, m, 0)
                            .expect("far-field nodes satisfy the MAC")
                        {
                            OrderChoice::Order(p) => p,
                            OrderChoice::Fallback => {
                                stats.clamped += 1;
                                cfg.p_max
                            }
                        },
                    };
                    stats.histogram[p] += 1;
                    u += scratch.eval.eval(x, node.barycenter, self.moments.node(k as usize), p);
                    bound += term_bound(&geom, node.volume, p, c);
                }
            }
        }
        (u, bound)
    }

    /// Far-field contribution of `id` under the Treecode 2 rule, with its
    /// truncation bound.
    #[allow(clippy::too_many_arguments)]
    fn tc2_node(
        &self,
        x: Point3,
        id: usize,
        cfg: &SolverConfig,
        n: usize,
        m: usize,
        s: u32,
        stats: &mut Stats,
        eval: &mut Evaluator<'_>,
    ) -> (f64, f64) {
        let node = self.tree.node(id);
        let geom = mac_geometry(x, node).expect("far-field node is away from the target");
        let choice = if geom.ratio < 1.0 {
            select_order(&geom, node.volume, cfg, n, m, s).expect("ratio checked")
        } else {
            OrderChoice::Fallback
        };
        match (choice, node.children()) {
            (OrderChoice::Order(p), _) => {
                stats.histogram[p] += 1;
                let v = eval.eval(x, node.barycenter, self.moments.node(id), p);
                (v, term_bound(&geom, node.volume, p, cfg.c_const()))
            }
            (OrderChoice::Fallback, None) => {
                stats.fallback += 1;
                let leaf = self.tree.leaf_index(id).expect("childless node is a leaf");
                (leaf_direct_sum(x, self.quad, leaf), 0.0)
            }
            (OrderChoice::Fallback, Some(children)) => {
                let mut v = 0.0;
                let mut b = 0.0;
                for child in children {
                    let (cv, cb) = self.tc2_node(x, child, cfg, n, m, s + 1, stats, eval);
                    v += cv;
                    b += cb;
                }
                (v, b)
            }
        }
    }
}

/// A target leaf and a leaf-level far-field source for [`calibrate_pmax`]:
/// among every sixteenth target, the pair whose expansion ratio is closest
/// to 0.5. Returns `(target, source, ratio)`.
pub fn calibration_pair(tree: &HierarchyTree, lists: &InteractionLists) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    let mut l = LeafLists::default();
    for target in (0..tree.num_leaves()).step_by((tree.num_leaves() / 16).max(1)) {
        lists.lists_for(tree, target, &mut l);
        let x = tree.leaf_node(target).barycenter;
        for &k in &l.far {
            let Some(source) = tree.leaf_index(k as usize) else {
                continue;
            };
            let Ok(geom) = mac_geometry(x, tree.node(k as usize)) else {
                continue;
            };
            if best.map_or(true, |(_, _, r)| (geom.ratio - 0.5).abs() < (r - 0.5).abs()) {
                best = Some((target, source, geom.ratio));
            }
        }
    }
    best
}

/// Timings of one calibration run.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// Smallest order whose far-field evaluation is slower than the direct
    /// sum, if any order in the sweep is.
    pub crossover: Option<usize>,
    /// Seconds per direct quadrature of the sample leaf.
    pub direct_seconds: f64,
    /// `(p, seconds per far-field evaluation at order p)`.
    pub table: Vec<(usize, f64)>,
}

/// Median over `reps` batches of the per-call time of `op`.
fn time_per_call(mut op: impl FnMut() -> f64, reps: usize) -> f64 {
    let mut batch = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..batch {
            black_box(op());
        }
        if t.elapsed().as_secs_f64() > 2e-3 || batch >= 1 << 24 {
            break;
        }
        batch *= 2;
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..batch {
                black_box(op());
            }
            t.elapsed().as_secs_f64() / batch as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Compares far-field evaluation cost against direct quadrature of the same
/// leaf over cached source values, which is what the fallback path does.
pub fn calibrate_pmax(
    tree: &HierarchyTree,
    leaf: usize,
    target: Point3,
    orders: &[usize],
    f: &dyn Fn(Point3) -> f64,
) -> Result<Calibration> {
    let node_id = tree.leaf_node_id(leaf);
    let node = tree.node(node_id);
    let geom = mac_geometry(target, node)?;
    if geom.ratio >= 1.0 {
        return Err(Error::MacViolation { ratio: geom.ratio });
    }
    let max_p = orders.iter().copied().max().unwrap_or(0);
    let table = IndexTable::new(max_p);
    let quad = LeafQuadrature::build_one(tree, node_id, f)?;

    let mut moments = vec![0.0; num_terms(max_p)];
    let mut mono = vec![0.0; num_terms(max_p)];
    for l in 0..POINTS_PER_ELEMENT {
        table.fill_monomials(quad.points[l] - node.barycenter, max_p, &mut mono);
        let fw = quad.values[l] * quad.weights[l];
        for (m, v) in moments.iter_mut().zip(&mono) {
            *m += fw * v;
        }
    }

    const REPS: usize = 3;
    let direct_seconds = time_per_call(|| leaf_direct_sum(black_box(target), &quad, 0), REPS);
    let mut eval = Evaluator::new(&table);
    let mut timings = Vec::with_capacity(orders.len());
    for &p in orders {
        let t = time_per_call(
            || eval.eval(black_box(target), node.barycenter, &moments, p),
            REPS,
        );
        timings.push((p, t));
    }
    let crossover = timings
        .iter()
        .find(|(_, t)| *t > direct_seconds)
        .map(|&(p, _)| p);
    Ok(Calibration {
        crossover,
        direct_seconds,
        table: timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, CubeSplit, Mesh, Tetrahedron};

    fn cfg(eps: f64, p_max: usize, c: f64) -> SolverConfig {
        SolverConfig::new(Mode::Treecode1, eps, p_max, c * 4.0 * PI).unwrap()
    }

    fn geom(r_y: f64, big_r: f64) -> MacGeometry {
        MacGeometry {
            r_y,
            big_r,
            ratio: r_y / big_r,
        }
    }

    #[test]
    fn select_order_worked_example() {
        // ε / (n C M) = 1e-6 with n = M = C = 1
        let g = geom(0.5, 2.0);
        let c = cfg(1e-6, 50, 1.0);
        assert_eq!(select_order(&g, 1.0, &c, 1, 1, 0).unwrap(), OrderChoice::Order(9));
        // p = 8 fails, p = 9 passes
        assert!(0.25f64.powi(9) / 1.5 > 1e-6);
        assert!(0.25f64.powi(10) / 1.5 < 1e-6);
        assert_eq!(
            select_order(&g, 1.0, &cfg(1e-6, 8, 1.0), 1, 1, 0).unwrap(),
            OrderChoice::Fallback
        );
        assert_eq!(
            select_order(&g, 1.0, &cfg(1e300, 8, 1.0), 1, 1, 0).unwrap(),
            OrderChoice::Order(0)
        );
        assert_eq!(
            select_order(&g, 1.0, &cfg(1e-6, 8, 0.0), 1, 1, 0).unwrap(),
            OrderChoice::Order(0)
        );
        assert!(select_order(&geom(1.5, 1.0), 1.0, &c, 1, 1, 0).is_err());
    }

    #[test]
    fn select_order_monotone() {
        let g = geom(0.3, 1.1);
        let mut last = 0;
        for s in 0..4 {
            let OrderChoice::Order(p) = select_order(&g, 0.2, &cfg(1e-4, 200, 1.0), 3, 4, s).unwrap()
            else {
                panic!("cap is generous")
            };
            assert!(p >= last);
            last = p;
        }
        let mut last = 0;
        for e in 1..12 {
            let eps = 10f64.powi(-e);
            let OrderChoice::Order(p) = select_order(&g, 0.2, &cfg(eps, 200, 1.0), 3, 4, 0).unwrap()
            else {
                panic!("cap is generous")
            };
            assert!(p >= last);
            last = p;
            // agrees with the closed form
            let rhs = eps / (3.0 * 4.0);
            let closed = ((rhs * g.big_r * (1.0 - g.ratio) / 0.2).ln() / g.ratio.ln()).ceil() - 1.0;
            assert!((p as f64 - closed.max(0.0)).abs() <= 1.0);
        }
    }

    fn single_tet() -> (HierarchyTree, LeafQuadrature) {
        let mesh = Mesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            tets: vec![Tetrahedron::new([0, 1, 2, 3])],
        };
        let tree = HierarchyTree::from_mesh(mesh).unwrap();
        let quad = LeafQuadrature::build(&tree, |_| 1.0).unwrap();
        (tree, quad)
    }

    #[test]
    fn direct_single_tet_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let (tree, quad) = single_tet();
        let x = tree.node(0).barycenter;
        let one_element = direct_solve(&tree, &quad, 1).unwrap().values[0];

        // Monte Carlo of ∫_K dy / (4π |x_c - y|) with uniform samples in K
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples = 4_000_000;
        let mut sum = 0.0;
        let mut count = 0;
        while count < samples {
            let y = Point3::new(rng.gen(), rng.gen(), rng.gen());
            if y.x + y.y + y.z > 1.0 {
                continue;
            }
            sum += 1.0 / (4.0 * PI * x.distance(y));
            count += 1;
        }
        let mc = sum / samples as f64 / 6.0;

        // The same degree-6 sums over a refined copy of K converge to the
        // integral; the unrefined rule sees a singular integrand and is only
        // accurate to about 10%.
        let fine = tree.clone().refined(4);
        let fine_quad = LeafQuadrature::build(&fine, |_| 1.0).unwrap();
        let refined: f64 = (0..fine.num_leaves()).map(|l| leaf_direct_sum(x, &fine_quad, l)).sum();
        assert!((refined - mc).abs() < 1e-3 * mc, "{refined} vs {mc}");
        assert!((one_element - mc).abs() < 0.15 * mc, "{one_element} vs {mc}");
    }

    fn cube(refine: usize) -> HierarchyTree {
        let lo = Point3::new(-2.0, -2.0, -2.0);
        let hi = Point3::new(2.0, 2.0, 2.0);
        HierarchyTree::from_mesh(build_box_mesh(lo, hi, 1, CubeSplit::Kuhn6).unwrap())
            .unwrap()
            .refined(refine)
    }

    fn smooth(p: Point3) -> f64 {
        (-(p.x * p.x + 0.5 * p.y * p.y + 2.0 * p.z * p.z)).exp() * (1.0 + 0.3 * p.x)
    }

    #[test]
    fn zero_source_gives_zero() {
        let tree = cube(1);
        let quad = LeafQuadrature::build(&tree, |_| 0.0).unwrap();
        assert!(direct_solve(&tree, &quad, 1).unwrap().values.iter().all(|&v| v == 0.0));
        let tc = Treecode::new(&tree, &quad, InteractionLists::build(&tree).unwrap(), 4, 1).unwrap();
        let c = SolverConfig::new(Mode::Treecode1, 1e-3, 4, 0.0).unwrap();
        assert!(tc.solve(&c).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solvers_are_linear() {
        let tree = cube(2);
        let f1 = |p: Point3| smooth(p);
        let f2 = |p: Point3| (p.x - p.y * p.z).cos();
        let q1 = LeafQuadrature::build(&tree, f1).unwrap();
        let q2 = q1.with_source(f2).unwrap();
        let q12 = q1.with_source(|p| f1(p) + f2(p)).unwrap();
        let d1 = direct_solve(&tree, &q1, 1).unwrap().values;
        let d2 = direct_solve(&tree, &q2, 1).unwrap().values;
        let d12 = direct_solve(&tree, &q12, 1).unwrap().values;
        for i in 0..d1.len() {
            assert!((d12[i] - d1[i] - d2[i]).abs() <= 1e-13 * (d1[i].abs() + d2[i].abs()));
        }
        for mode in [Mode::Treecode1, Mode::Treecode2] {
            let solve = |q: &LeafQuadrature| {
                let lists = InteractionLists::build(&tree).unwrap();
                let tc = Treecode::new(&tree, q, lists, 6, 1).unwrap();
                tc.solve(&SolverConfig::new(mode, 1e-3, 6, 10.0).unwrap().with_uniform_p(5))
                    .unwrap()
                    .values
            };
            let (t1, t2, t12) = (solve(&q1), solve(&q2), solve(&q12));
            for i in 0..t1.len() {
                assert!((t12[i] - t1[i] - t2[i]).abs() <= 1e-12 * (t1[i].abs() + t2[i].abs()));
            }
        }
    }

    #[test]
    fn empty_far_field_reproduces_direct() {
        let tree = cube(0);
        let quad = LeafQuadrature::build(&tree, smooth).unwrap();
        let direct = direct_solve(&tree, &quad, 1).unwrap();
        let tc = Treecode::new(&tree, &quad, InteractionLists::build(&tree).unwrap(), 3, 1).unwrap();
        let sol = tc.solve(&cfg(1e-3, 3, 1.0)).unwrap();
        assert_eq!(sol.values, direct.values);
        assert_eq!(sol.far_evaluations(), 0);
    }

    #[test]
    fn per_target_bound_holds() {
        let tree = cube(2);
        let quad = LeafQuadrature::build(&tree, smooth).unwrap();
        let f = estimate_f_bound(&quad);
        let direct = direct_solve(&tree, &quad, 1).unwrap();
        let tc = Treecode::new(&tree, &quad, InteractionLists::build(&tree).unwrap(), 12, 1).unwrap();
        for (eps, uniform) in [(1e-1, None), (1e-4, None), (1.0, Some(0)), (1.0, Some(3))] {
            let mut c = SolverConfig::new(Mode::Treecode1, eps, 12, f).unwrap();
            c.uniform_p = uniform;
            // the bound uses the orders actually evaluated, so it also
            // covers clamped evaluations
            let sol = tc.solve(&c).unwrap();
            for i in 0..sol.values.len() {
                let err = (sol.values[i] - direct.values[i]).abs();
                assert!(err <= sol.bounds[i], "target {i}: {err} > {}", sol.bounds[i]);
            }
        }
    }

    #[test]
    fn treecode2_agrees_with_treecode1_when_orders_fit() {
        let tree = cube(2);
        let quad = LeafQuadrature::build(&tree, smooth).unwrap();
        let f = estimate_f_bound(&quad);
        let tc = Treecode::new(&tree, &quad, InteractionLists::build(&tree).unwrap(), 30, 1).unwrap();
        let one = tc.solve(&SolverConfig::new(Mode::Treecode1, 1e-2, 30, f).unwrap()).unwrap();
        let two = tc.solve(&SolverConfig::new(Mode::Treecode2, 1e-2, 30, f).unwrap()).unwrap();
        assert_eq!(one.clamped_count, 0);
        assert_eq!(two.fallback_count, 0);
        assert_eq!(one.values, two.values);
        assert_eq!(one.order_histogram, two.order_histogram);
    }

    #[test]
    fn treecode2_falls_back_within_bound() {
        let tree = cube(3);
        let quad = LeafQuadrature::build(&tree, smooth).unwrap();
        let f = estimate_f_bound(&quad);
        let direct = direct_solve(&tree, &quad, 1).unwrap();
        let tc = Treecode::new(&tree, &quad, InteractionLists::build(&tree).unwrap(), 3, 1).unwrap();
        let sol = tc.solve(&SolverConfig::new(Mode::Treecode2, 1e-7, 3, f).unwrap()).unwrap();
        assert!(sol.fallback_count > 0);
        for i in 0..sol.values.len() {
            let err = (sol.values[i] - direct.values[i]).abs();
            // summation order differs from the oracle; allow rounding
            assert!(err <= sol.bounds[i] + 1e-13 * direct.values[i].abs(), "{i}: {err:e} > {:e}", sol.bounds[i]);
            assert!(sol.bounds[i] <= 1e-7);
        }
    }

    #[test]
    fn f_bound_estimate() {
        let tree = cube(1);
        let quad = LeafQuadrature::build(&tree, |_| -2.5).unwrap();
        assert_eq!(estimate_f_bound(&quad), 2.5);
    }

    #[test]
    fn calibration_reports_all_orders() {
        let tree = cube(2);
        let leaf = 0;
        let far = tree.leaf_node(tree.num_leaves() - 1).barycenter;
        let cal = calibrate_pmax(&tree, leaf, far, &[0, 2, 4, 8, 16, 32], &smooth).unwrap();
        assert_eq!(cal.table.len(), 6);
        assert!(cal.direct_seconds > 0.0);
        if let Some(p) = cal.crossover {
            assert!(p >= 1);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("tc1".parse::<Mode>().unwrap(), Mode::Treecode1);
        assert_eq!("direct".parse::<Mode>().unwrap(), Mode::Direct);
        assert!("fmm".parse::<Mode>().is_err());
        assert_eq!(Mode::Treecode2.to_string(), "tc2");
    }
}
