//! Near/far classification of the tree relative to each leaf target.
//!
//! Two same-level nodes are neighbors when their tetrahedra share a vertex
//! id. For a leaf τ with ancestors `A_0, …, A_L = τ`, the far field at level
//! `j` is `children(nbr(A_{j-1})) \ nbr(A_j)` (roots minus `nbr(A_0)` at level
//! 0), and the near field is `nbr(τ)`, including τ itself.

use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tree::{HierarchyTree, TreeNode};

/// Ratio of a source node's radius to its distance from the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacGeometry {
    pub r_y: f64,
    pub big_r: f64,
    pub ratio: f64,
}

pub fn mac_geometry(target: Point3, node: &TreeNode) -> Result<MacGeometry> {
    let big_r = target.distance(node.barycenter);
    if big_r == 0.0 {
        return Err(Error::SingularEvaluation);
    }
    Ok(MacGeometry {
        r_y: node.max_radius,
        big_r,
        ratio: node.max_radius / big_r,
    })
}

/// Same-level shared-vertex neighbors of every node, in compressed rows.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl NeighborTable {
    pub fn build(tree: &HierarchyTree) -> Self {
        let mut offsets = Vec::with_capacity(tree.nodes().len() + 1);
        offsets.push(0u32);
        let mut ids = Vec::new();
        let nv = tree.vertices().len();
        let mut scratch = Vec::new();
        for level in 0..tree.depth() {
            let range = tree.level(level);
            // vertex -> incident nodes of this level
            let mut count = vec![0u32; nv + 1];
            for id in range.clone() {
                for &v in &tree.node(id).tet.vertices {
                    count[v as usize + 1] += 1;
                }
            }
            for i in 0..nv {
                count[i + 1] += count[i];
            }
            let mut fill = count.clone();
            let mut incident = vec![0u32; count[nv] as usize];
            for id in range.clone() {
                for &v in &tree.node(id).tet.vertices {
                    incident[fill[v as usize] as usize] = id as u32;
                    fill[v as usize] += 1;
                }
            }
            for id in range {
                scratch.clear();
                for &v in &tree.node(id).tet.vertices {
                    let v = v as usize;
                    scratch.extend_from_slice(&incident[count[v] as usize..count[v + 1] as usize]);
                }
                scratch.sort_unstable();
                scratch.dedup();
                ids.extend_from_slice(&scratch);
                offsets.push(ids.len() as u32);
            }
        }
        Self { offsets, ids }
    }

    /// Sorted same-level neighbors of `node`, including itself.
    pub fn of(&self, node: usize) -> &[u32] {
        &self.ids[self.offsets[node] as usize..self.offsets[node + 1] as usize]
    }

    fn contains(&self, node: usize, other: u32) -> bool {
        self.of(node).binary_search(&other).is_ok()
    }
}

/// Per-leaf neighbor lists (leaf node ids), including the leaf itself.
pub fn leaf_neighbors(tree: &HierarchyTree) -> Vec<Vec<usize>> {
    let table = NeighborTable::build(tree);
    tree.leaves()
        .map(|id| table.of(id).iter().map(|&n| n as usize).collect())
        .collect()
}

/// Interaction lists of one target leaf.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LeafLists {
    /// Near-field leaf node ids, ascending.
    pub near: Vec<u32>,
    /// Far-field node ids, ascending (hence grouped by level).
    pub far: Vec<u32>,
    /// Far-field node count per level.
    pub level_counts: Vec<u32>,
}

impl LeafLists {
    pub fn clear(&mut self, depth: usize) {
        self.near.clear();
        self.far.clear();
        self.level_counts.clear();
        self.level_counts.resize(depth, 0);
    }
}

/// Options for list construction.
#[derive(Clone, Copy, Debug)]
pub struct ListOptions {
    /// Far-field nodes with `r_K >= demote_at` are replaced by their children
    /// (leaves move to the near field). 1.0 only enforces convergence of the
    /// expansion; 0.0 demotes every far-field node, turning the treecode into
    /// direct summation.
    ///
    /// The default 0.6 keeps `(1 - r_K)^{-1}` and the selected orders
    /// moderate: on uniformly refined box meshes shared-vertex
    /// classification alone leaves pairs with `r_K` above 0.99.
    pub demote_at: f64,
    /// Store every leaf's lists when the total entry count is at most this;
    /// otherwise they are regenerated per target on demand.
    pub max_stored_entries: usize,
}

impl Default for ListOptions {
    fn default() -> Self {
        Self {
            demote_at: 0.6,
            max_stored_entries: 50_000_000,
        }
    }
}

#[derive(Clone, Debug)]
struct StoredLists {
    near_offsets: Vec<u64>,
    near: Vec<u32>,
    far_offsets: Vec<u64>,
    far: Vec<u32>,
    level_counts: Vec<u32>,
}

/// Interaction lists for every leaf target.
#[derive(Clone, Debug)]
pub struct InteractionLists {
    neighbors: NeighborTable,
    options: ListOptions,
    depth: usize,
    stored: Option<StoredLists>,
    mac_max: f64,
    total_near: usize,
    total_far: usize,
    demoted: usize,
}

impl InteractionLists {
    pub fn build(tree: &HierarchyTree) -> Result<Self> {
        Self::build_with(tree, ListOptions::default())
    }

    pub fn build_with(tree: &HierarchyTree, options: ListOptions) -> Result<Self> {
        if !(options.demote_at >= 0.0 && options.demote_at <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "demotion threshold {} is outside [0, 1]",
                options.demote_at
            )));
        }
        let mut lists = Self {
            neighbors: NeighborTable::build(tree),
            options,
            depth: tree.depth(),
            stored: None,
            mac_max: 0.0,
            total_near: 0,
            total_far: 0,
            demoted: 0,
        };
        let n = tree.num_leaves();
        let mut store = StoredLists {
            near_offsets: vec![0],
            near: Vec::new(),
            far_offsets: vec![0],
            far: Vec::new(),
            level_counts: Vec::new(),
        };
        let mut keep = true;
        let mut scratch = LeafLists::default();
        for leaf in 0..n {
            let demoted = lists.generate(tree, leaf, &mut scratch);
            lists.demoted += demoted;
            check_coverage(tree, leaf, &scratch)?;
            let x = tree.leaf_node(leaf).barycenter;
            for &k in &scratch.far {
                let g = mac_geometry(x, tree.node(k as usize))?;
                lists.mac_max = lists.mac_max.max(g.ratio);
            }
            lists.total_near += scratch.near.len();
            lists.total_far += scratch.far.len();
            if keep && lists.total_near + lists.total_far > options.max_stored_entries {
                keep = false;
                store = StoredLists {
                    near_offsets: Vec::new(),
                    near: Vec::new(),
                    far_offsets: Vec::new(),
                    far: Vec::new(),
                    level_counts: Vec::new(),
                };
            }
            if keep {
                store.near.extend_from_slice(&scratch.near);
                store.near_offsets.push(store.near.len() as u64);
                store.far.extend_from_slice(&scratch.far);
                store.far_offsets.push(store.far.len() as u64);
                store.level_counts.extend_from_slice(&scratch.level_counts);
            }
        }
        if keep {
            lists.stored = Some(store);
        }
        Ok(lists)
    }

    /// Builds the lists of one leaf into `out`; returns the number of
    /// demotions performed.
    fn generate(&self, tree: &HierarchyTree, leaf: usize, out: &mut LeafLists) -> usize {
        let depth = tree.depth();
        out.clear(depth);
        let target = tree.leaf_node_id(leaf);
        let x = tree.node(target).barycenter;
        let mut ancestors = vec![0usize; depth];
        let mut node = target;
        for level in (0..depth).rev() {
            ancestors[level] = node;
            if let Some(p) = tree.node(node).parent {
                node = p;
            }
        }

        let mut candidates: Vec<u32> = Vec::new();
        let mut demoted = 0;
        for level in 0..depth {
            let a = ancestors[level];
            if level == 0 {
                candidates.extend(tree.roots().map(|r| r as u32));
            } else {
                for &nb in self.neighbors.of(ancestors[level - 1]) {
                    let children = tree.node(nb as usize).children().expect("internal node");
                    candidates.extend(children.map(|c| c as u32));
                }
            }
            for &c in &candidates {
                if !self.neighbors.contains(a, c) {
                    demoted += self.accept(tree, x, c as usize, out);
                }
            }
            candidates.clear();
        }
        out.near.extend_from_slice(self.neighbors.of(target));
        out.near.sort_unstable();
        out.far.sort_unstable();
        demoted
    }

    fn accept(&self, tree: &HierarchyTree, x: Point3, id: usize, out: &mut LeafLists) -> usize {
        let node = tree.node(id);
        let ratio = node.max_radius / x.distance(node.barycenter);
        if ratio < self.options.demote_at {
            out.far.push(id as u32);
            out.level_counts[node.level as usize] += 1;
            return 0;
        }
        match node.children() {
            None => {
                out.near.push(id as u32);
                1
            }
            Some(children) => 1 + children.map(|c| self.accept(tree, x, c, out)).sum::<usize>(),
        }
    }

    /// Lists of `leaf`, written into `out`.
    pub fn lists_for(&self, tree: &HierarchyTree, leaf: usize, out: &mut LeafLists) {
        match &self.stored {
            Some(s) => {
                out.clear(self.depth);
                out.near.extend_from_slice(&s.near[range(&s.near_offsets, leaf)]);
                out.far.extend_from_slice(&s.far[range(&s.far_offsets, leaf)]);
                out.level_counts
                    .copy_from_slice(&s.level_counts[leaf * self.depth..(leaf + 1) * self.depth]);
            }
            None => {
                self.generate(tree, leaf, out);
            }
        }
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn is_stored(&self) -> bool {
        self.stored.is_some()
    }

    /// Largest `r_K` over all (target, far-field node) pairs.
    pub fn mac_max(&self) -> f64 {
        self.mac_max
    }

    pub fn total_near(&self) -> usize {
        self.total_near
    }

    pub fn total_far(&self) -> usize {
        self.total_far
    }

    /// Number of far-field candidates replaced by their children or moved
    /// to the near field.
    pub fn demoted(&self) -> usize {
        self.demoted
    }

    pub fn options(&self) -> ListOptions {
        self.options
    }

    /// Text dump: one `leaf <i> near: …` line per leaf followed by one
    /// `  level <l>: …` line per nonempty far-field level.
    pub fn dump(&self, tree: &HierarchyTree) -> String {
        let mut s = String::new();
        let mut lists = LeafLists::default();
        for leaf in 0..tree.num_leaves() {
            self.lists_for(tree, leaf, &mut lists);
            let near: Vec<String> = lists.near.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "leaf {} near: {}", tree.leaf_node_id(leaf), near.join(" "));
            for level in 0..self.depth {
                let ids: Vec<String> = lists
                    .far
                    .iter()
                    .filter(|&&k| tree.node(k as usize).level as usize == level)
                    .map(u32::to_string)
                    .collect();
                if !ids.is_empty() {
                    let _ = writeln!(s, "  level {level}: {}", ids.join(" "));
                }
            }
        }
        s
    }
}

fn range(offsets: &[u64], i: usize) -> Range<usize> {
    offsets[i] as usize..offsets[i + 1] as usize
}

fn check_coverage(tree: &HierarchyTree, leaf: usize, lists: &LeafLists) -> Result<()> {
    let covered: usize = lists.near.len()
        + lists
            .far
            .iter()
            .map(|&k| tree.node(k as usize).leaf_range().len())
            .sum::<usize>();
    if covered != tree.num_leaves() {
        return Err(Error::CoverageFailure {
            leaf,
            detail: format!("{covered} of {} leaves accounted for", tree.num_leaves()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, CubeSplit, Mesh, Tetrahedron};

    fn cube_tree(cells: usize, split: CubeSplit, refine: usize) -> HierarchyTree {
        let lo = Point3::new(-2.0, -2.0, -2.0);
        let hi = Point3::new(2.0, 2.0, 2.0);
        HierarchyTree::from_mesh(build_box_mesh(lo, hi, cells, split).unwrap())
            .unwrap()
            .refined(refine)
    }

    #[test]
    fn mac_examples() {
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
        let mut node = tree.node(0).clone();
        node.max_radius = 0.5;
        let x = node.barycenter + Point3::new(2.0, 0.0, 0.0);
        let g = mac_geometry(x, &node).unwrap();
        assert_eq!((g.r_y, g.big_r, g.ratio), (0.5, 2.0, 0.25));
        node.max_radius = 1.5;
        let g = mac_geometry(node.barycenter + Point3::new(0.0, 1.0, 0.0), &node).unwrap();
        assert_eq!(g.ratio, 1.5);
        assert!(matches!(
            mac_geometry(node.barycenter, &node),
            Err(Error::SingularEvaluation)
        ));

        let lists = InteractionLists::build(&tree).unwrap();
        let mut l = LeafLists::default();
        lists.lists_for(&tree, 0, &mut l);
        assert_eq!(l.near, vec![0]);
        assert!(l.far.is_empty());
    }

    #[test]
    fn neighbors_match_brute_force() {
        let tree = cube_tree(1, CubeSplit::Kuhn6, 2);
        assert_eq!(tree.num_leaves(), 384);
        let nbrs = leaf_neighbors(&tree);
        let leaves: Vec<usize> = tree.leaves().collect();
        let mut interior_max = 0;
        for (i, &a) in leaves.iter().enumerate() {
            let brute: Vec<usize> = leaves
                .iter()
                .copied()
                .filter(|&b| tree.shares_vertex(a, b).unwrap())
                .collect();
            assert_eq!(nbrs[i], brute);
            for &b in &nbrs[i] {
                assert!(nbrs[tree.leaf_index(b).unwrap()].contains(&a));
            }
            interior_max = interior_max.max(nbrs[i].len());
        }
        assert!(interior_max > 5);
    }

    #[test]
    fn depth_one_tree_has_no_far_field() {
        let single = cube_tree(1, CubeSplit::Kuhn6, 0);
        let lists = InteractionLists::build(&single).unwrap();
        let mut l = LeafLists::default();
        for leaf in 0..single.num_leaves() {
            lists.lists_for(&single, leaf, &mut l);
            assert!(l.far.is_empty());
            assert_eq!(l.near, vec![0, 1, 2, 3, 4, 5]);
        }
        let tree = cube_tree(2, CubeSplit::Kuhn6, 0);
        let lists = InteractionLists::build(&tree).unwrap();
        assert_partition(&tree, &lists);
    }

    fn assert_partition(tree: &HierarchyTree, lists: &InteractionLists) {
        let table = NeighborTable::build(tree);
        let mut l = LeafLists::default();
        let omega = tree.total_volume();
        for leaf in 0..tree.num_leaves() {
            lists.lists_for(tree, leaf, &mut l);
            let mut seen = vec![0u8; tree.num_leaves()];
            for &k in &l.near {
                seen[tree.leaf_index(k as usize).unwrap()] += 1;
            }
            let target = tree.leaf_node_id(leaf);
            let mut vol: f64 = l.near.iter().map(|&k| tree.node(k as usize).volume).sum();
            let mut per_level = vec![0u32; tree.depth()];
            for &k in &l.far {
                let node = tree.node(k as usize);
                for i in node.leaf_range() {
                    seen[i] += 1;
                }
                vol += node.volume;
                per_level[node.level as usize] += 1;
                let anc = tree.ancestor_at(target, node.level);
                assert!(!tree.shares_vertex(anc, k as usize).unwrap());
                assert!(!table.of(anc).contains(&k));
            }
            assert!(seen.iter().all(|&c| c == 1), "leaf {leaf} not partitioned");
            assert!((vol - omega).abs() <= 1e-10 * omega);
            assert_eq!(per_level, l.level_counts);
            assert_eq!(l.level_counts.iter().sum::<u32>() as usize, l.far.len());
        }
    }

    #[test]
    fn lists_partition_the_domain() {
        for tree in [
            cube_tree(1, CubeSplit::Kuhn6, 2),
            cube_tree(1, CubeSplit::Centroid24, 2),
            cube_tree(2, CubeSplit::Kuhn6, 2),
        ] {
            let lists = InteractionLists::build(&tree).unwrap();
            assert!(lists.is_stored());
            assert!(lists.mac_max() < lists.options().demote_at);
            assert_partition(&tree, &lists);
            let loose = InteractionLists::build_with(
                &tree,
                ListOptions {
                    demote_at: 1.0,
                    ..ListOptions::default()
                },
            )
            .unwrap();
            assert!(loose.mac_max() < 1.0);
            assert!(loose.demoted() <= lists.demoted());
            assert_partition(&tree, &loose);
        }
    }

    #[test]
    fn on_demand_lists_equal_stored_lists() {
        let tree = cube_tree(1, CubeSplit::Kuhn6, 3);
        let stored = InteractionLists::build(&tree).unwrap();
        let lazy = InteractionLists::build_with(
            &tree,
            ListOptions {
                max_stored_entries: 10,
                ..ListOptions::default()
            },
        )
        .unwrap();
        assert!(!lazy.is_stored());
        assert_eq!(stored.dump(&tree), lazy.dump(&tree));
        assert_eq!(stored.mac_max(), lazy.mac_max());
    }

    #[test]
    fn full_demotion_moves_everything_near() {
        let tree = cube_tree(1, CubeSplit::Kuhn6, 2);
        let lists = InteractionLists::build_with(
            &tree,
            ListOptions {
                demote_at: 0.0,
                ..ListOptions::default()
            },
        )
        .unwrap();
        let all: Vec<u32> = tree.leaves().map(|k| k as u32).collect();
        let mut l = LeafLists::default();
        for leaf in 0..tree.num_leaves() {
            lists.lists_for(&tree, leaf, &mut l);
            assert!(l.far.is_empty());
            assert_eq!(l.near, all);
        }
        assert!(lists.demoted() > 0);
        assert_partition(&tree, &lists);
    }

    #[test]
    fn partial_demotion_keeps_partition() {
        let tree = cube_tree(1, CubeSplit::Centroid24, 2);
        let lists = InteractionLists::build_with(
            &tree,
            ListOptions {
                demote_at: 0.3,
                ..ListOptions::default()
            },
        )
        .unwrap();
        assert!(lists.demoted() > 0);
        assert!(lists.mac_max() < 0.3);
        assert_partition(&tree, &lists);
    }

    #[test]
    fn dump_format() {
        let tree = cube_tree(1, CubeSplit::Kuhn6, 1);
        let lists = InteractionLists::build(&tree).unwrap();
        let dump = lists.dump(&tree);
        assert_eq!(dump.lines().filter(|l| l.starts_with("leaf ")).count(), 48);
        assert!(dump.starts_with("leaf 6 near: "));
    }
}
