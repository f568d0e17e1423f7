//! Cartesian Taylor expansion of `1/(4π|x - y|)` in the source variable.
//!
//! Multi-indices are ordered by total order, then lexicographically in
//! `(k1, k2, k3)`. Coefficient and moment tables of order `p` are the first
//! [`num_terms`]`(p)` entries of that ordering, so a table built to `P_max`
//! serves every `p <= P_max` by prefix.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::quadrature::LeafQuadrature;
use crate::tree::HierarchyTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    pub k1: u32,
    pub k2: u32,
    pub k3: u32,
}

impl MultiIndex {
    pub const fn new(k1: u32, k2: u32, k3: u32) -> Self {
        Self { k1, k2, k3 }
    }

    pub fn order(self) -> u32 {
        self.k1 + self.k2 + self.k3
    }

    pub fn as_array(self) -> [u32; 3] {
        [self.k1, self.k2, self.k3]
    }

    /// Position in the canonical ordering.
    pub fn position(self) -> usize {
        let n = self.order() as usize;
        let k1 = self.k1 as usize;
        // orders below n, then rows k1' < k1 of lengths n - k1' + 1
        let before_row = k1 * (n + 1) - k1 * (k1.saturating_sub(1)) / 2;
        num_terms_below(n) + before_row + self.k2 as usize
    }

    /// `(y)^k = y1^k1 y2^k2 y3^k3`
    pub fn monomial(self, y: Point3) -> f64 {
        y.x.powi(self.k1 as i32) * y.y.powi(self.k2 as i32) * y.z.powi(self.k3 as i32)
    }

    /// `k1! k2! k3!`
    pub fn factorial(self) -> f64 {
        self.as_array()
            .iter()
            .map(|&k| (1..=k).map(f64::from).product::<f64>())
            .product()
    }
}

/// Number of multi-indices with `‖k‖ <= p`.
pub const fn num_terms(p: usize) -> usize {
    (p + 1) * (p + 2) * (p + 3) / 6
}

const fn num_terms_below(n: usize) -> usize {
    n * (n + 1) * (n + 2) / 6
}

/// Position of `(k1, 0, n - k1)`.
#[inline]
const fn row_offset(n: usize, k1: usize) -> usize {
    num_terms_below(n) + k1 * (n + 1) - k1 * k1.saturating_sub(1) / 2
}

pub fn multi_index_enumerate(p: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(num_terms(p));
    for n in 0..=p as u32 {
        for k1 in 0..=n {
            for k2 in 0..=n - k1 {
                out.push(MultiIndex::new(k1, k2, n - k1 - k2));
            }
        }
    }
    out
}

/// Precomputed neighbor indices for the coefficient recurrence and the
/// monomial build, up to a fixed maximum order.
///
/// Slot indices are shifted by one: slot 0 is a permanent zero that stands in
/// for multi-indices with a negative component.
#[derive(Clone, Debug)]
pub struct IndexTable {
    max_order: usize,
    /// Entry that times `d[axis]` gives this monomial.
    mono_parent: Vec<(u32, u8)>,
}

impl IndexTable {
    pub fn new(max_order: usize) -> Self {
        let indices = multi_index_enumerate(max_order);
        let slot = |k: [i64; 3]| -> u32 {
            if k.iter().any(|&c| c < 0) {
                0
            } else {
                MultiIndex::new(k[0] as u32, k[1] as u32, k[2] as u32).position() as u32 + 1
            }
        };
        let mut mono_parent = Vec::with_capacity(indices.len());
        for k in &indices {
            let a = k.as_array().map(i64::from);
            let shifted = |axis: usize, by: i64| {
                let mut b = a;
                b[axis] -= by;
                slot(b)
            };
            let axis = a.iter().position(|&c| c > 0).unwrap_or(0);
            let parent = if k.order() == 0 { 0 } else { shifted(axis, 1) - 1 };
            mono_parent.push((parent, axis as u8));
        }
        Self {
            max_order,
            mono_parent,
        }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Fills `buf[1..=num_terms(p)]` with `a^k(x, y_c)`; `buf[0] = 0`.
    ///
    /// `d = x - y_c` must be nonzero and `p <= max_order`.
    pub fn fill_coefficients(&self, d: Point3, p: usize, buf: &mut Vec<f64>) {
        debug_assert!(p <= self.max_order);
        buf.clear();
        buf.resize(num_terms(p) + 1, 0.0);
        CoeffPlanes::new(p).sweep(d, p, |start, row| {
            buf[start + 1..start + 1 + row.len()].copy_from_slice(row);
        });
    }

    /// Fills `out[..num_terms(p)]` with `d^k`.
    #[inline]
    pub fn fill_monomials(&self, d: Point3, p: usize, out: &mut [f64]) {
        let len = num_terms(p);
        let dd = [d.x, d.y, d.z];
        out[0] = 1.0;
        for i in 1..len {
            let (parent, axis) = self.mono_parent[i];
            out[i] = out[parent as usize] * dd[axis as usize];
        }
    }
}

/// Taylor coefficients `a^k(x, y_c)` for all `‖k‖ <= max_order`.
#[derive(Clone, Debug)]
pub struct CoeffTable {
    pub target: Point3,
    pub center: Point3,
    pub max_order: usize,
    pub values: Vec<f64>,
}

pub fn taylor_coeffs(x: Point3, y_c: Point3, p: usize) -> Result<CoeffTable> {
    let d = x - y_c;
    if d.norm_squared() == 0.0 {
        return Err(Error::SingularEvaluation);
    }
    let mut buf = Vec::new();
    IndexTable::new(p).fill_coefficients(d, p, &mut buf);
    buf.remove(0);
    Ok(CoeffTable {
        target: x,
        center: y_c,
        max_order: p,
        values: buf,
    })
}

/// Moments `m^k` of one node about its barycenter.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub node: usize,
    pub center: Point3,
    pub max_order: usize,
    pub values: Vec<f64>,
}

/// Moments of every tree node, stored contiguously with a fixed stride.
#[derive(Clone, Debug)]
pub struct TreeMoments {
    max_order: usize,
    stride: usize,
    data: Vec<f64>,
}

impl TreeMoments {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.data[id * self.stride..(id + 1) * self.stride]
    }

    pub fn num_nodes(&self) -> usize {
        self.data.len() / self.stride
    }

    pub fn table(&self, tree: &HierarchyTree, id: usize) -> MomentTable {
        MomentTable {
            node: id,
            center: tree.node(id).barycenter,
            max_order: self.max_order,
            values: self.node(id).to_vec(),
        }
    }

    /// Bytes of moment storage a tree would need at order `p`.
    pub fn storage_bytes(tree: &HierarchyTree, p: usize) -> usize {
        tree.nodes().len() * num_terms(p) * std::mem::size_of::<f64>()
    }
}

/// Moments of every node up to `p_max`, accumulated directly from the
/// quadrature points of its descendant leaves.
pub fn compute_moments(
    tree: &HierarchyTree,
    quad: &LeafQuadrature,
    p_max: usize,
    table: &IndexTable,
    parallel: bool,
) -> Result<TreeMoments> {
    if p_max > table.max_order() {
        return Err(Error::OrderMismatch {
            requested: p_max,
            available: table.max_order(),
        });
    }
    if quad.num_leaves() != tree.num_leaves() {
        return Err(Error::LengthMismatch {
            left: quad.num_leaves(),
            right: tree.num_leaves(),
        });
    }
    let stride = num_terms(p_max);
    let mut data = vec![0.0; tree.nodes().len() * stride];
    let fill = |id: usize, out: &mut [f64]| {
        let node = tree.node(id);
        let range = node.leaf_range();
        let points = range.start * 24..range.end * 24;
        let mut mono = vec![0.0; stride];
        for l in points {
            let fw = quad.values[l] * quad.weights[l];
            table.fill_monomials(quad.points[l] - node.barycenter, p_max, &mut mono);
            for (m, &v) in out.iter_mut().zip(&mono) {
                *m += fw * v;
            }
        }
    };
    if parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(id, out)| fill(id, out));
    } else {
        for (id, out) in data.chunks_mut(stride).enumerate() {
            fill(id, out);
        }
    }
    Ok(TreeMoments {
        max_order: p_max,
        stride,
        data,
    })
}

/// `Σ_{‖k‖ <= p} a^k m^k`
pub fn far_field_eval(coeffs: &CoeffTable, moments: &MomentTable, p: usize) -> Result<f64> {
    let available = coeffs.max_order.min(moments.max_order);
    if p > available {
        return Err(Error::OrderMismatch {
            requested: p,
            available,
        });
    }
    if coeffs.center != moments.center {
        return Err(Error::InvalidArgument(
            "coefficients and moments use different expansion centers".into(),
        ));
    }
    Ok(dot(&coeffs.values[..num_terms(p)], &moments.values[..num_terms(p)]))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // four independent partial sums
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Rolling storage for the coefficient recurrence: one zero-padded
/// `(k1, k2)` plane for each of the last three orders. Row `k1` of order `n`
/// holds `k2 = 0..=n - k1`; two zero rows above and two zero columns on each
/// side let every shifted read be a plain slice.
#[derive(Clone, Debug)]
struct CoeffPlanes {
    width: usize,
    planes: [Vec<f64>; 3],
}

impl CoeffPlanes {
    const PAD: usize = 2;

    fn new(max_order: usize) -> Self {
        let width = max_order + 3 + Self::PAD;
        let plane = vec![0.0; width * width];
        Self {
            width,
            planes: [plane.clone(), plane.clone(), plane],
        }
    }

    /// Runs the recurrence up to order `p`, handing each finished row to
    /// `visit` with the canonical position of its first entry.
    #[inline]
    fn sweep(&mut self, d: Point3, p: usize, mut visit: impl FnMut(usize, &[f64])) {
        let w = self.width;
        let at = |k1: usize, k2: usize| (k1 + Self::PAD) * w + k2 + Self::PAD;
        let r2 = d.norm_squared();
        let inv_r2 = 1.0 / r2;

        let p0 = &mut self.planes[0];
        p0[at(0, 0)] = 1.0 / (4.0 * PI * r2.sqrt());
        p0[at(0, 1)] = 0.0;
        p0[at(0, 2)] = 0.0;
        p0[at(1, 0)] = 0.0;
        p0[at(1, 1)] = 0.0;
        p0[at(2, 0)] = 0.0;
        visit(0, &p0[at(0, 0)..at(0, 1)]);

        for n in 1..=p {
            let [a, b, c] = &mut self.planes;
            let (cur, p1, p2) = match n % 3 {
                0 => (a, &*c, &*b),
                1 => (b, &*a, &*c),
                _ => (c, &*b, &*a),
            };
            let nf = n as f64;
            let c1 = (2.0 * nf - 1.0) / nf * inv_r2;
            let c2 = if n >= 2 { (nf - 1.0) / nf * inv_r2 } else { 0.0 };
            let (e1, e2, e3) = (c1 * d.x, c1 * d.y, c1 * d.z);
            for k1 in 0..=n {
                let len = n - k1 + 1;
                let o = at(k1, 0);
                // k - e1, k - e2, k - e3
                let q1 = &p1[o - w..][..len];
                let q2 = &p1[o - 1..][..len];
                let q3 = &p1[o..][..len];
                // k - 2e1, k - 2e2, k - 2e3
                let s1 = &p2[o - 2 * w..][..len];
                let s2 = &p2[o - 2..][..len];
                let s3 = &p2[o..][..len];
                let (row, pad) = cur[o..o + len + Self::PAD].split_at_mut(len);
                let row = &mut row[..len];
                for j in 0..len {
                    row[j] = e1 * q1[j] + e2 * q2[j] + e3 * q3[j] - c2 * (s1[j] + s2[j] + s3[j]);
                }
                pad.fill(0.0);
                visit(row_offset(n, k1), row);
            }
            cur[at(n + 1, 0)] = 0.0;
            cur[at(n + 1, 1)] = 0.0;
            cur[at(n + 2, 0)] = 0.0;
        }
    }
}

/// Reusable scratch for repeated far-field evaluations.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    table: &'a IndexTable,
    planes: CoeffPlanes,
}

impl<'a> Evaluator<'a> {
    pub fn new(table: &'a IndexTable) -> Self {
        Self {
            table,
            planes: CoeffPlanes::new(table.max_order()),
        }
    }

    /// Far-field value at `x` of a node with center `y_c` and moments
    /// `moments` (at least `num_terms(p)` long).
    #[inline]
    pub fn eval(&mut self, x: Point3, y_c: Point3, moments: &[f64], p: usize) -> f64 {
        debug_assert!(p <= self.table.max_order());
        let moments = &moments[..num_terms(p)];
        let mut u = 0.0;
        self.planes.sweep(x - y_c, p, |start, row| {
            u += dot(row, &moments[start..start + row.len()]);
        });
        u
    }
}

/// Gegenbauer polynomial `C_k^{1/2}(y)`, i.e. the Legendre polynomial `P_k`.
pub fn gegenbauer(k: usize, y: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, y);
    for j in 2..=k {
        let j = j as f64;
        let next = ((2.0 * j - 1.0) * y * cur - (j - 1.0) * prev) / j;
        prev = cur;
        cur = next;
    }
    cur
}

/// `Σ_{‖k‖ = k} 4π a^k(x, y_c) (y - y_c)^k`, the order-`k` term of the
/// expansion of `1/|x - y|` about `y_c`.
pub fn cartesian_term_sum(x: Point3, y: Point3, y_c: Point3, k: usize) -> Result<f64> {
    let big = x.distance(y_c);
    let small = y.distance(y_c);
    if big == 0.0 {
        return Err(Error::SingularEvaluation);
    }
    if small >= big {
        return Err(Error::MacViolation {
            ratio: small / big,
        });
    }
    let coeffs = taylor_coeffs(x, y_c, k)?;
    let d = y - y_c;
    let start = num_terms_below(k);
    Ok(multi_index_enumerate(k)[start..]
        .iter()
        .zip(&coeffs.values[start..])
        .map(|(idx, a)| 4.0 * PI * a * idx.monomial(d))
        .sum())
}

/// The Legendre form of the same term,
/// `|y - y_c|^k / |x - y_c|^{k+1} C_k^{1/2}(cos θ)`.
pub fn gegenbauer_term(x: Point3, y: Point3, y_c: Point3, k: usize) -> f64 {
    let a = y - y_c;
    let b = x - y_c;
    let (ra, rb) = (a.norm(), b.norm());
    let cos = if ra == 0.0 { 1.0 } else { (a.dot(b) / (ra * rb)).clamp(-1.0, 1.0) };
    ra.powi(k as i32) / rb.powi(k as i32 + 1) * gegenbauer(k, cos)
}
