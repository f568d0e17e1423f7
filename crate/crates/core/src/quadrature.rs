//! Degree-6, 24-point symmetric quadrature on tetrahedra and the per-leaf
//! quadrature cache used by every solver.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::mesh::Tetrahedron;
use crate::tree::HierarchyTree;

/// Number of points of [`degree6_rule`].
pub const POINTS_PER_ELEMENT: usize = 24;

/// A quadrature rule on the reference tetrahedron in barycentric form.
///
/// Weights are normalized to sum to one, so the physical weight of point `l`
/// on an element `K` is `weights[l] * |K|`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keast's 24-point rule, exact for polynomials of total degree 6.
///
/// Three orbits of type (a, a, a, 1 - 3a) and one of type (c, c, d, 1 - 2c - d).
/// Abscissae and weights were Newton-polished against the 84 moment equations
/// to 40 digits; none of the points is the barycenter.
pub fn degree6_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| {
        const ORBITS_A: [(f64, f64); 3] = [
            (0.214_602_871_259_152_029_288_8, 0.039_922_750_258_167_492_099_69),
            (0.040_673_958_534_611_353_115_58, 0.010_077_211_055_320_642_948_01),
            (0.322_337_890_142_275_510_344, 0.055_357_181_543_654_722_095_15),
        ];
        const C: f64 = 0.063_661_001_875_017_525_299_24;
        const D: f64 = 0.269_672_331_458_315_808_034_1;
        const W_CD: f64 = 0.048_214_285_714_285_714_285_71;

        let mut points = Vec::with_capacity(POINTS_PER_ELEMENT);
        let mut weights = Vec::with_capacity(POINTS_PER_ELEMENT);
        for (a, w) in ORBITS_A {
            for i in 0..4 {
                let mut p = [a; 4];
                p[i] = 1.0 - 3.0 * a;
                points.push(p);
                weights.push(w);
            }
        }
        let e = 1.0 - 2.0 * C - D;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let mut p = [C; 4];
                    p[i] = D;
                    p[j] = e;
                    points.push(p);
                    weights.push(W_CD);
                }
            }
        }
        QuadratureRule { points, weights }
    })
}

/// Quadrature of one physical element.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementQuadrature {
    pub points: Vec<Point3>,
    /// Reference weight times element volume; sums to the element volume.
    pub weights: Vec<f64>,
}

pub fn map_to_element(rule: &QuadratureRule, corners: &[Point3; 4]) -> ElementQuadrature {
    let [a, b, c, d] = *corners;
    let volume = crate::geometry::signed_volume(a, b, c, d).abs();
    let points = rule
        .points
        .iter()
        .map(|l| a * l[0] + b * l[1] + c * l[2] + d * l[3])
        .collect();
    let weights = rule.weights.iter().map(|w| w * volume).collect();
    ElementQuadrature { points, weights }
}

/// Integrates `f` over the tetrahedron `t` with the degree-6 rule.
pub fn integrate(f: impl Fn(Point3) -> f64, t: &Tetrahedron, coords: &[Point3]) -> Result<f64> {
    let q = map_to_element(degree6_rule(), &t.corners(coords));
    let mut sum = 0.0;
    for (&y, &w) in q.points.iter().zip(&q.weights) {
        let v = checked(f(y), y)?;
        sum += w * v;
    }
    Ok(sum)
}

fn checked(value: f64, at: Point3) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            value,
            x: at.x,
            y: at.y,
            z: at.z,
        })
    }
}

/// Cached quadrature points, weights and source values for every leaf.
///
/// Data of leaf `i` occupies `i * 24 .. (i + 1) * 24` in each array.
#[derive(Clone, Debug)]
pub struct LeafQuadrature {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

impl LeafQuadrature {
    pub fn build(tree: &HierarchyTree, f: impl Fn(Point3) -> f64) -> Result<Self> {
        let rule = degree6_rule();
        let n = tree.num_leaves() * POINTS_PER_ELEMENT;
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for id in tree.leaves() {
            let q = map_to_element(rule, &tree.corners(id));
            for (&y, &w) in q.points.iter().zip(&q.weights) {
                values.push(checked(f(y), y)?);
                points.push(y);
                weights.push(w);
            }
        }
        Ok(Self {
            points,
            weights,
            values,
        })
    }

    /// Quadrature of a single node's element.
    pub fn build_one(tree: &HierarchyTree, node: usize, f: impl Fn(Point3) -> f64) -> Result<Self> {
        let q = map_to_element(degree6_rule(), &tree.corners(node));
        let values = q
            .points
            .iter()
            .map(|&y| checked(f(y), y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points: q.points,
            weights: q.weights,
            values,
        })
    }

    /// Same points and weights, new source values.
    pub fn with_source(&self, f: impl Fn(Point3) -> f64) -> Result<Self> {
        let values = self
            .points
            .iter()
            .map(|&y| checked(f(y), y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points: self.points.clone(),
            weights: self.weights.clone(),
            values,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.points.len() / POINTS_PER_ELEMENT
    }

    pub fn range(leaf: usize) -> std::ops::Range<usize> {
        leaf * POINTS_PER_ELEMENT..(leaf + 1) * POINTS_PER_ELEMENT
    }

    pub fn leaf_points(&self, leaf: usize) -> &[Point3] {
        &self.points[Self::range(leaf)]
    }

    pub fn leaf_weights(&self, leaf: usize) -> &[f64] {
        &self.weights[Self::range(leaf)]
    }

    pub fn leaf_values(&self, leaf: usize) -> &[f64] {
        &self.values[Self::range(leaf)]
    }

    /// Quadrature approximation of ∫ f over leaf `leaf`.
    pub fn leaf_integral(&self, leaf: usize) -> f64 {
        self.leaf_weights(leaf)
            .iter()
            .zip(self.leaf_values(leaf))
            .map(|(w, v)| w * v)
            .sum()
    }
}
