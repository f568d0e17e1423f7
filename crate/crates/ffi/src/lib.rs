//! C interface to the treecode solver.
//!
//! Fallible functions return a [`TcStatus`]. After a failure,
//! [`tc_last_error_message`] describes it on the calling thread. Handles are
//! opaque; each `*_new` has a matching `*_free`.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the access the function
//! documents. Null handles and null required outputs are reported as
//! [`TcStatus::NullPointer`]; dangling pointers are undefined behaviour.
//! Handles may be moved between threads but not used concurrently.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use treecode::bench::ProblemSpec;
use treecode::interaction::{InteractionLists, ListOptions};
use treecode::mesh::{build_box_mesh, CubeSplit, Mesh};
use treecode::quadrature::LeafQuadrature;
use treecode::solver::{direct_solve, estimate_f_bound, Mode, SolverConfig, Treecode};
use treecode::tree::HierarchyTree;
use treecode::{Error, Point3};

pub const TC_SPLIT_KUHN6: u32 = 0;
pub const TC_SPLIT_CENTROID24: u32 = 1;

pub const TC_MODE_DIRECT: u32 = 0;
pub const TC_MODE_TREECODE1: u32 = 1;
pub const TC_MODE_TREECODE2: u32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Non-finite source values or a singular evaluation.
    Numeric = 5,
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Refined mesh hierarchy.
pub struct TcTree {
    tree: Arc<HierarchyTree>,
}

/// Sampled source, interaction lists and moments over one tree.
pub struct TcSolver {
    tree: Arc<HierarchyTree>,
    quad: LeafQuadrature,
    f_bound: f64,
    // taken out for the duration of a solve
    parts: Option<(InteractionLists, treecode::expansion::TreeMoments)>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TcSolveOptions {
    /// One of the `TC_MODE_*` constants.
    pub mode: u32,
    /// Target accuracy for adaptive order selection.
    pub epsilon: f64,
    /// Fixed expansion order, or a negative value for adaptive selection.
    pub uniform_p: i32,
    /// Worker threads; 0 and 1 both run sequentially.
    pub threads: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TcSolveStats {
    pub far_evaluations: u64,
    /// Evaluations whose order was capped at `p_max`.
    pub clamped_count: u64,
    /// Treecode 2 leaves summed directly instead of expanded.
    pub fallback_count: u64,
    pub max_order_used: u32,
    pub eval_seconds: f64,
}

/// Source density callback: `f(user, x, y, z)`.
pub type TcSourceFn = Option<unsafe extern "C" fn(user: *mut c_void, x: f64, y: f64, z: f64) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TcStatus, msg: impl Into<String>) -> TcStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> TcStatus {
    match err {
        Error::Io(_) => TcStatus::Io,
        Error::Parse { .. } | Error::Csv(_) => TcStatus::Parse,
        Error::NonFinite { .. } | Error::SingularEvaluation | Error::MacViolation { .. } => TcStatus::Numeric,
        _ => TcStatus::InvalidArgument,
    }
}

fn from_error(err: Error) -> TcStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `body`, converting panics to [`TcStatus::Panic`].
fn guard(body: impl FnOnce() -> TcStatus) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TcStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(TcStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

fn tree_out(out: *mut *mut TcTree, tree: HierarchyTree) -> TcStatus {
    let handle = Box::new(TcTree { tree: Arc::new(tree) });
    // SAFETY: the caller checked `out` for null and guarantees it is writable.
    unsafe { *out = Box::into_raw(handle) };
    TcStatus::Ok
}

/// Message for the most recent failure on this thread, or null. The string
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds the box `[lo, hi]` split into `cells^3` cubes of `split`
/// tetrahedra each, refined `refine` times.
///
/// # Safety
/// `lo` and `hi` point to three doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_new_box(
    lo: *const f64,
    hi: *const f64,
    cells: usize,
    split: u32,
    refine: usize,
    out: *mut *mut TcTree,
) -> TcStatus {
    guard(|| {
        non_null!(lo, hi, out);
        let split = match split {
            TC_SPLIT_KUHN6 => CubeSplit::Kuhn6,
            TC_SPLIT_CENTROID24 => CubeSplit::Centroid24,
            other => return fail(TcStatus::InvalidArgument, format!("unknown split {other}")),
        };
        let (lo, hi) = unsafe { (std::slice::from_raw_parts(lo, 3), std::slice::from_raw_parts(hi, 3)) };
        let mesh = match build_box_mesh(
            Point3::new(lo[0], lo[1], lo[2]),
            Point3::new(hi[0], hi[1], hi[2]),
            cells,
            split,
        ) {
            Ok(m) => m,
            Err(e) => return from_error(e),
        };
        match HierarchyTree::from_mesh(mesh) {
            Ok(t) => tree_out(out, t.refined(refine)),
            Err(e) => from_error(e),
        }
    })
}

/// Loads a base mesh file and refines it `refine` times.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_load_mesh(path: *const c_char, refine: usize, out: *mut *mut TcTree) -> TcStatus {
    guard(|| {
        non_null!(path, out);
        let Ok(path) = (unsafe { CStr::from_ptr(path) }).to_str() else {
            return fail(TcStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let tree = Mesh::load(Path::new(path)).and_then(HierarchyTree::from_mesh);
        match tree {
            Ok(t) => tree_out(out, t.refined(refine)),
            Err(e) => from_error(e),
        }
    })
}

/// Releases a tree. Solvers built from it stay valid.
///
/// # Safety
/// `tree` is null or came from `tc_tree_new_box`/`tc_tree_load_mesh` and has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_free(tree: *mut TcTree) {
    if !tree.is_null() {
        drop(unsafe { Box::from_raw(tree) });
    }
}

/// Number of leaf elements, or 0 for a null handle.
///
/// # Safety
/// `tree` is null or a live tree handle.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_leaf_count(tree: *const TcTree) -> usize {
    unsafe { tree.as_ref() }.map_or(0, |t| t.tree.num_leaves())
}

/// Number of levels, or 0 for a null handle.
///
/// # Safety
/// `tree` is null or a live tree handle.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_depth(tree: *const TcTree) -> usize {
    unsafe { tree.as_ref() }.map_or(0, |t| t.tree.depth())
}

/// Writes leaf barycenters as `x0 y0 z0 x1 ...` into `out[..3N]`.
///
/// # Safety
/// `tree` is a live tree handle; `out` is writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_tree_barycenters(tree: *const TcTree, out: *mut f64, len: usize) -> TcStatus {
    guard(|| {
        non_null!(tree, out);
        let tree = &unsafe { &*tree }.tree;
        let need = 3 * tree.num_leaves();
        if len < need {
            return fail(TcStatus::BufferTooSmall, format!("need {need} doubles, got {len}"));
        }
        let out = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (leaf, chunk) in out.chunks_exact_mut(3).enumerate() {
            let b = tree.leaf_node(leaf).barycenter;
            chunk.copy_from_slice(&[b.x, b.y, b.z]);
        }
        TcStatus::Ok
    })
}

fn new_solver(
    tree: *const TcTree,
    f: &dyn Fn(Point3) -> f64,
    f_bound: Option<f64>,
    p_max: usize,
    demote_at: f64,
    out: *mut *mut TcSolver,
) -> TcStatus {
    let tree = Arc::clone(&unsafe { &*tree }.tree);
    let opts = ListOptions {
        demote_at: if demote_at < 0.0 { ListOptions::default().demote_at } else { demote_at },
        ..ListOptions::default()
    };
    let built = LeafQuadrature::build(&tree, f).and_then(|quad| {
        let lists = InteractionLists::build_with(&tree, opts)?;
        let parts = Treecode::new(&tree, &quad, lists, p_max, 1)?.into_parts();
        Ok((quad, parts))
    });
    match built {
        Ok((quad, parts)) => {
            let f_bound = f_bound.unwrap_or_else(|| estimate_f_bound(&quad));
            let handle = Box::new(TcSolver {
                tree,
                quad,
                f_bound,
                parts: Some(parts),
            });
            unsafe { *out = Box::into_raw(handle) };
            TcStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Samples `source` at every quadrature point of `tree` (the callback is not
/// retained) and precomputes moments up to `p_max`.
///
/// `f_bound` bounds `|f|` over the domain; pass a value `<= 0` to use the
/// largest sampled `|f|`. `demote_at` is the expansion ratio at or above
/// which far-field nodes are split; pass a negative value for the default.
///
/// # Safety
/// `tree` is a live tree handle, `out` is writable, and `source` is safe to
/// call with `user` during this call.
#[no_mangle]
pub unsafe extern "C" fn tc_solver_new(
    tree: *const TcTree,
    source: TcSourceFn,
    user: *mut c_void,
    f_bound: f64,
    p_max: usize,
    demote_at: f64,
    out: *mut *mut TcSolver,
) -> TcStatus {
    guard(|| {
        non_null!(tree, out);
        let Some(source) = source else {
            return fail(TcStatus::NullPointer, "`source` is null");
        };
        let f = |p: Point3| unsafe { source(user, p.x, p.y, p.z) };
        let bound = (f_bound > 0.0).then_some(f_bound);
        new_solver(tree, &f, bound, p_max, demote_at, out)
    })
}

/// Solver for the built-in Gaussian test problem.
///
/// # Safety
/// `tree` is a live tree handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn tc_solver_new_gaussian(
    tree: *const TcTree,
    p_max: usize,
    demote_at: f64,
    out: *mut *mut TcSolver,
) -> TcStatus {
    guard(|| {
        non_null!(tree, out);
        let problem = ProblemSpec::gaussian();
        let f = |p: Point3| problem.source(p);
        new_solver(tree, &f, problem.f_bound, p_max, demote_at, out)
    })
}

/// # Safety
/// `solver` is null or a live solver handle.
#[no_mangle]
pub unsafe extern "C" fn tc_solver_free(solver: *mut TcSolver) {
    if !solver.is_null() {
        drop(unsafe { Box::from_raw(solver) });
    }
}

/// Potential at every leaf barycenter into `values[..N]`, and the
/// per-target truncation bound into `bounds[..N]` when `bounds` is not null.
///
/// # Safety
/// `solver` is a live solver handle, `options` is readable, `values` (and
/// `bounds` if given) are writable for `len` doubles, and `stats` is null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tc_solve(
    solver: *mut TcSolver,
    options: *const TcSolveOptions,
    values: *mut f64,
    bounds: *mut f64,
    len: usize,
    stats: *mut TcSolveStats,
) -> TcStatus {
    guard(|| {
        non_null!(solver, options, values);
        let solver = unsafe { &mut *solver };
        let opts = unsafe { *options };
        let n = solver.tree.num_leaves();
        if len < n {
            return fail(TcStatus::BufferTooSmall, format!("need {n} values, got {len}"));
        }
        let mode = match opts.mode {
            TC_MODE_DIRECT => Mode::Direct,
            TC_MODE_TREECODE1 => Mode::Treecode1,
            TC_MODE_TREECODE2 => Mode::Treecode2,
            other => return fail(TcStatus::InvalidArgument, format!("unknown mode {other}")),
        };
        let threads = opts.threads.max(1) as usize;

        let solution = if mode == Mode::Direct {
            direct_solve(&solver.tree, &solver.quad, threads)
        } else {
            let Some((lists, moments)) = solver.parts.take() else {
                return fail(TcStatus::InvalidArgument, "solver is in an unusable state");
            };
            let p_max = moments.max_order();
            let tc = match Treecode::from_parts(&solver.tree, &solver.quad, lists, moments) {
                Ok(tc) => tc,
                Err(e) => return from_error(e),
            };
            let cfg = SolverConfig::new(mode, opts.epsilon, p_max, solver.f_bound).map(|c| {
                let c = c.with_threads(threads);
                match usize::try_from(opts.uniform_p) {
                    Ok(p) => c.with_uniform_p(p),
                    Err(_) => c,
                }
            });
            let result = cfg.and_then(|cfg| tc.solve(&cfg));
            solver.parts = Some(tc.into_parts());
            result
        };
        let solution = match solution {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };

        unsafe { std::slice::from_raw_parts_mut(values, n) }.copy_from_slice(&solution.values);
        if !bounds.is_null() {
            let out = unsafe { std::slice::from_raw_parts_mut(bounds, n) };
            if solution.bounds.len() == n {
                out.copy_from_slice(&solution.bounds);
            } else {
                out.fill(0.0);
            }
        }
        if let Some(stats) = unsafe { stats.as_mut() } {
            *stats = TcSolveStats {
                far_evaluations: solution.far_evaluations(),
                clamped_count: solution.clamped_count,
                fallback_count: solution.fallback_count,
                max_order_used: solution.max_order_used().map_or(0, |p| p as u32),
                eval_seconds: solution.eval_seconds,
            };
        }
        TcStatus::Ok
    })
}
