//! The hierarchy geometry tree: an octree of tetrahedra produced by uniform
//! midpoint refinement of a conforming base mesh.
//!
//! Nodes are stored level by level. Every refinement appends the eight
//! children of each leaf in leaf order, so the deepest-level descendants of
//! any node form a contiguous run of leaf indices (`TreeNode::leaf_range`).

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::mesh::{barycenter, max_radius, Mesh, Tetrahedron};

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub tet: Tetrahedron,
    pub level: u32,
    pub parent: Option<usize>,
    /// Id of the first of eight consecutive children, if refined.
    pub first_child: Option<usize>,
    pub barycenter: Point3,
    pub max_radius: f64,
    pub volume: f64,
    leaf_start: u32,
    leaf_end: u32,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.first_child.is_none()
    }

    pub fn children(&self) -> Option<Range<usize>> {
        self.first_child.map(|c| c..c + 8)
    }

    /// Leaf indices of all deepest-level descendants (itself, for a leaf).
    pub fn leaf_range(&self) -> Range<usize> {
        self.leaf_start as usize..self.leaf_end as usize
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyTree {
    vertices: Vec<Point3>,
    nodes: Vec<TreeNode>,
    /// `level_start[l]..level_start[l + 1]` are the node ids of level `l`.
    level_start: Vec<usize>,
}

impl HierarchyTree {
    /// Builds a depth-1 tree whose roots are the elements of `mesh`.
    pub fn from_mesh(mesh: Mesh) -> Result<Self> {
        mesh.validate()?;
        if mesh.tets.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let Mesh { vertices, tets } = mesh;
        let nodes: Vec<TreeNode> = tets
            .into_iter()
            .enumerate()
            .map(|(i, tet)| make_node(&vertices, tet, 0, None, i as u32))
            .collect();
        let n = nodes.len();
        Ok(Self {
            vertices,
            nodes,
            level_start: vec![0, n],
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    /// Number of levels M (roots are level 0).
    pub fn depth(&self) -> usize {
        self.level_start.len() - 1
    }

    pub fn level(&self, level: usize) -> Range<usize> {
        self.level_start[level]..self.level_start[level + 1]
    }

    pub fn roots(&self) -> Range<usize> {
        self.level(0)
    }

    /// Node ids of the leaves, in leaf-index order.
    pub fn leaves(&self) -> Range<usize> {
        self.level(self.depth() - 1)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn leaf_node(&self, leaf: usize) -> &TreeNode {
        &self.nodes[self.level_start[self.depth() - 1] + leaf]
    }

    pub fn leaf_node_id(&self, leaf: usize) -> usize {
        self.level_start[self.depth() - 1] + leaf
    }

    /// Leaf index of a leaf node id.
    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.leaves().contains(&node).then(|| node - self.leaves().start)
    }

    pub fn corners(&self, node: usize) -> [Point3; 4] {
        self.nodes[node].tet.corners(&self.vertices)
    }

    /// The finest level as a standalone mesh.
    pub fn leaf_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            tets: self.leaves().map(|i| self.nodes[i].tet).collect(),
        }
    }

    pub fn total_volume(&self) -> f64 {
        self.roots().map(|i| self.nodes[i].volume).sum()
    }

    /// Ancestor of `node` on `level` (the node itself when levels agree).
    pub fn ancestor_at(&self, mut node: usize, level: u32) -> usize {
        while self.nodes[node].level > level {
            node = self.nodes[node]
                .parent
                .expect("non-root node always has a parent");
        }
        node
    }

    /// Same-level nodes are neighbors iff their elements share a vertex id.
    pub fn shares_vertex(&self, a: usize, b: usize) -> Result<bool> {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        if na.level != nb.level {
            return Err(Error::LevelMismatch {
                a,
                b,
                level_a: na.level,
                level_b: nb.level,
            });
        }
        Ok(tets_share_vertex(&na.tet, &nb.tet))
    }

    /// Refines every leaf `times` times by midpoint subdivision.
    pub fn refine_uniform(&mut self, times: usize) {
        for _ in 0..times {
            self.refine_once();
        }
    }

    pub fn refined(mut self, times: usize) -> Self {
        self.refine_uniform(times);
        self
    }

    fn refine_once(&mut self) {
        let leaves = self.leaves();
        let level = self.nodes[leaves.start].level + 1;
        // A midpoint gets one id per edge; edges of this level are not
        // reused by later refinements, so the map is per pass.
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::with_capacity(leaves.len() * 2);
        let first_new = self.nodes.len();
        self.nodes.reserve(8 * leaves.len());

        for (k, parent) in leaves.clone().enumerate() {
            let tet = ordered_for_refinement(&self.nodes[parent].tet, &self.vertices);
            let [x0, x1, x2, x3] = tet.vertices;
            let mut mid = |a: u32, b: u32| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    let p = self.vertices[a as usize].midpoint(self.vertices[b as usize]);
                    self.vertices.push(p);
                    (self.vertices.len() - 1) as u32
                })
            };
            let x01 = mid(x0, x1);
            let x02 = mid(x0, x2);
            let x03 = mid(x0, x3);
            let x12 = mid(x1, x2);
            let x13 = mid(x1, x3);
            let x23 = mid(x2, x3);
            // four corner tets, then the octahedron cut along x02-x13
            let children = [
                [x0, x01, x02, x03],
                [x01, x1, x12, x13],
                [x02, x12, x2, x23],
                [x03, x13, x23, x3],
                [x01, x02, x03, x13],
                [x01, x02, x12, x13],
                [x02, x03, x13, x23],
                [x02, x12, x13, x23],
            ];
            let first_child = first_new + 8 * k;
            self.nodes[parent].first_child = Some(first_child);
            for (c, verts) in children.into_iter().enumerate() {
                let leaf = (8 * k + c) as u32;
                let node = make_node(&self.vertices, Tetrahedron::new(verts), level, Some(parent), leaf);
                self.nodes.push(node);
            }
        }
        self.level_start.push(self.nodes.len());

        // Descendant leaf ranges of all coarser nodes scale by 8.
        for node in &mut self.nodes[..first_new] {
            node.leaf_start *= 8;
            node.leaf_end *= 8;
        }
    }
}

pub fn tets_share_vertex(a: &Tetrahedron, b: &Tetrahedron) -> bool {
    a.vertices.iter().any(|v| b.vertices.contains(v))
}

fn make_node(
    coords: &[Point3],
    tet: Tetrahedron,
    level: u32,
    parent: Option<usize>,
    leaf: u32,
) -> TreeNode {
    let corners = tet.corners(coords);
    TreeNode {
        tet,
        level,
        parent,
        first_child: None,
        barycenter: barycenter(&corners),
        max_radius: max_radius(&corners),
        volume: tet.volume(coords),
        leaf_start: leaf,
        leaf_end: leaf + 1,
    }
}

/// Relabels the corners so that the interior-octahedron diagonal x02-x13 is a
/// shortest one. Ties keep the current labeling, which preserves the
/// self-similar refinement of Kuhn-type orderings.
fn ordered_for_refinement(tet: &Tetrahedron, coords: &[Point3]) -> Tetrahedron {
    let [v0, v1, v2, v3] = tet.vertices;
    let p = tet.corners(coords);
    let diag = |a: usize, b: usize, c: usize, d: usize| {
        p[a].midpoint(p[b]).distance(p[c].midpoint(p[d]))
    };
    let d_02_13 = diag(0, 2, 1, 3);
    let d_01_23 = diag(0, 1, 2, 3);
    let d_03_12 = diag(0, 3, 1, 2);
    let tol = 1e-12 * d_02_13;
    if d_02_13 <= d_01_23 + tol && d_02_13 <= d_03_12 + tol {
        *tet
    } else if d_01_23 <= d_03_12 {
        Tetrahedron::new([v0, v2, v1, v3])
    } else {
        Tetrahedron::new([v0, v1, v3, v2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, CubeSplit};

    fn box_tree(cells: usize, split: CubeSplit, refine: usize) -> HierarchyTree {
        let lo = Point3::new(-2.0, -2.0, -2.0);
        let hi = Point3::new(2.0, 2.0, 2.0);
        HierarchyTree::from_mesh(build_box_mesh(lo, hi, cells, split).unwrap())
            .unwrap()
            .refined(refine)
    }

    fn unit_tet_tree() -> HierarchyTree {
        let mesh = Mesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            tets: vec![Tetrahedron::new([0, 1, 2, 3])],
        };
        HierarchyTree::from_mesh(mesh).unwrap()
    }

    #[test]
    fn leaf_counts_and_depth() {
        let t = box_tree(1, CubeSplit::Kuhn6, 2);
        assert_eq!(t.num_leaves(), 384);
        assert_eq!(t.depth(), 3);
        let t = box_tree(1, CubeSplit::Centroid24, 2);
        assert_eq!(t.num_leaves(), 1536);
        let max_level = t.nodes().iter().map(|n| n.level).max().unwrap();
        assert_eq!(t.depth(), 1 + max_level as usize);
    }

    #[test]
    fn children_have_an_eighth_of_the_volume() {
        let t = unit_tet_tree().refined(2);
        for node in t.nodes() {
            if let Some(children) = node.children() {
                let sum: f64 = children.clone().map(|c| t.node(c).volume).sum();
                assert!((sum - node.volume).abs() <= 1e-12 * node.volume);
                for c in children {
                    let child = t.node(c);
                    assert!((child.volume - node.volume / 8.0).abs() <= 1e-13 * node.volume);
                    assert_eq!(child.parent.map(|p| t.node(p).first_child), Some(node.first_child));
                }
            }
        }
    }

    #[test]
    fn children_barycenters_lie_inside_parent() {
        let t = box_tree(1, CubeSplit::Kuhn6, 2);
        for (id, node) in t.nodes().iter().enumerate() {
            let Some(children) = node.children() else { continue };
            let [a, b, c, d] = t.corners(id);
            for ch in children {
                let x = t.node(ch).barycenter;
                // barycentric coordinates via signed sub-volumes
                let v = crate::geometry::signed_volume(a, b, c, d);
                let l = [
                    crate::geometry::signed_volume(x, b, c, d) / v,
                    crate::geometry::signed_volume(a, x, c, d) / v,
                    crate::geometry::signed_volume(a, b, x, d) / v,
                    crate::geometry::signed_volume(a, b, c, x) / v,
                ];
                assert!(l.iter().all(|&li| li > 0.0), "{l:?}");
            }
        }
    }

    #[test]
    fn leaves_tile_the_domain() {
        for split in [CubeSplit::Kuhn6, CubeSplit::Centroid24] {
            let mut t = box_tree(2, split, 0);
            for _ in 0..3 {
                let sum: f64 = t.leaves().map(|i| t.node(i).volume).sum();
                assert!((sum - 64.0).abs() <= 1e-10 * 64.0);
                t.refine_uniform(1);
            }
        }
    }

    #[test]
    fn leaf_ranges_are_contiguous_descendants() {
        let t = box_tree(1, CubeSplit::Kuhn6, 3);
        for leaf in 0..t.num_leaves() {
            let id = t.leaf_node_id(leaf);
            assert_eq!(t.node(id).leaf_range(), leaf..leaf + 1);
            let mut node = id;
            while let Some(p) = t.node(node).parent {
                assert!(t.node(p).leaf_range().contains(&leaf));
                node = p;
            }
        }
        for id in t.roots() {
            assert_eq!(t.node(id).leaf_range().len(), 512);
        }
    }

    #[test]
    fn midpoints_are_deduplicated() {
        let t = box_tree(2, CubeSplit::Centroid24, 2);
        let h = t.leaves().map(|i| t.node(i).max_radius).fold(f64::INFINITY, f64::min);
        let mut pts: Vec<_> = t.vertices().iter().map(|p| p.to_array()).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in pts.windows(2) {
            let d = Point3::from_array(w[0]).distance(Point3::from_array(w[1]));
            assert!(d > 1e-12 * h, "duplicate vertex at {:?}", w[0]);
        }
    }

    #[test]
    fn shape_regularity_is_depth_independent() {
        let ratio = |t: &HierarchyTree| {
            t.leaves()
                .map(|i| t.node(i).max_radius / t.node(i).volume.cbrt())
                .fold(0.0, f64::max)
        };
        let kuhn: Vec<f64> = (0..4).map(|r| ratio(&box_tree(1, CubeSplit::Kuhn6, r))).collect();
        for r in &kuhn[1..] {
            assert!((r - kuhn[0]).abs() <= 1e-10 * kuhn[0], "{kuhn:?}");
        }
        let c24: Vec<f64> = (1..4).map(|r| ratio(&box_tree(1, CubeSplit::Centroid24, r))).collect();
        for r in &c24[1..] {
            assert!((r - c24[0]).abs() <= 1e-10 * c24[0], "{c24:?}");
        }
    }

    #[test]
    fn shares_vertex_rules() {
        let t = box_tree(1, CubeSplit::Kuhn6, 0);
        // all six Kuhn tets contain the diagonal endpoints
        for a in t.roots() {
            assert!(t.shares_vertex(a, a).unwrap());
            for b in t.roots() {
                assert!(t.shares_vertex(a, b).unwrap());
            }
        }
        let t = box_tree(4, CubeSplit::Kuhn6, 0);
        let lo = Point3::new(-2.0, -2.0, -2.0);
        let hi = Point3::new(2.0, 2.0, 2.0);
        let nearest = |p: Point3| {
            t.roots()
                .min_by(|&a, &b| {
                    t.node(a).barycenter.distance(p).total_cmp(&t.node(b).barycenter.distance(p))
                })
                .unwrap()
        };
        let (a, b) = (nearest(lo), nearest(hi));
        assert!(!t.shares_vertex(a, b).unwrap());
        assert!(!t.node(a).tet.vertices.iter().any(|v| t.node(b).tet.vertices.contains(v)));

        let t = box_tree(1, CubeSplit::Kuhn6, 1);
        assert!(matches!(t.shares_vertex(0, t.leaves().start), Err(Error::LevelMismatch { .. })));
    }
}
