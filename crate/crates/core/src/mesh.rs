//! Tetrahedral base meshes: box generation and the plain-text mesh format.
//!
//! File format (ASCII, whitespace separated, 0-based indices):
//!
//! ```text
//! <n_vertices> <n_tets>
//! x y z          (n_vertices lines)
//! i j k l        (n_tets lines)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{signed_volume, Point3};

/// A tetrahedron given by four indices into a vertex array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tetrahedron {
    pub vertices: [u32; 4],
}

impl Tetrahedron {
    pub fn new(vertices: [u32; 4]) -> Self {
        Self { vertices }
    }

    pub fn corners(&self, coords: &[Point3]) -> [Point3; 4] {
        self.vertices.map(|v| coords[v as usize])
    }

    pub fn signed_volume(&self, coords: &[Point3]) -> f64 {
        let [a, b, c, d] = self.corners(coords);
        signed_volume(a, b, c, d)
    }

    pub fn volume(&self, coords: &[Point3]) -> f64 {
        self.signed_volume(coords).abs()
    }

    pub fn barycenter(&self, coords: &[Point3]) -> Point3 {
        barycenter(&self.corners(coords))
    }

    pub fn max_radius(&self, coords: &[Point3]) -> f64 {
        max_radius(&self.corners(coords))
    }

    pub fn has_distinct_vertices(&self) -> bool {
        let v = &self.vertices;
        (0..4).all(|i| (i + 1..4).all(|j| v[i] != v[j]))
    }
}

/// Arithmetic mean of the four corners.
pub fn barycenter(corners: &[Point3; 4]) -> Point3 {
    let [a, b, c, d] = *corners;
    Point3::new(
        0.25 * (a.x + b.x + c.x + d.x),
        0.25 * (a.y + b.y + c.y + d.y),
        0.25 * (a.z + b.z + c.z + d.z),
    )
}

/// Largest corner distance from the barycenter.
pub fn max_radius(corners: &[Point3; 4]) -> f64 {
    let c = barycenter(corners);
    corners
        .iter()
        .map(|v| v.distance(c))
        .fold(0.0, f64::max)
}

/// How each cube cell of a box mesh is split into tetrahedra.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CubeSplit {
    /// Six tetrahedra around the main diagonal (Kuhn/Freudenthal split).
    #[default]
    Kuhn6,
    /// Twenty-four tetrahedra: each face is fanned from its center to the cube center.
    Centroid24,
}

impl CubeSplit {
    pub fn tets_per_cube(self) -> usize {
        match self {
            CubeSplit::Kuhn6 => 6,
            CubeSplit::Centroid24 => 24,
        }
    }
}

impl FromStr for CubeSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kuhn6" | "6" => Ok(CubeSplit::Kuhn6),
            "centroid24" | "24" => Ok(CubeSplit::Centroid24),
            other => Err(Error::InvalidArgument(format!(
                "unknown cube split '{other}' (expected kuhn6 or centroid24)"
            ))),
        }
    }
}

/// A conforming tetrahedral mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub tets: Vec<Tetrahedron>,
}

impl Mesh {
    pub fn total_volume(&self) -> f64 {
        self.tets.iter().map(|t| t.volume(&self.vertices)).sum()
    }

    /// Checks index ranges, distinct corners, non-zero volume, and that no two
    /// vertex ids refer to the same point.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if let Some(i) = self.vertices.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let mut seen: HashMap<[u64; 3], usize> = HashMap::with_capacity(nv);
        for (i, p) in self.vertices.iter().enumerate() {
            // +0.0 and -0.0 are the same point
            let key = [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits);
            if let Some(j) = seen.insert(key, i) {
                return Err(Error::InvalidMesh(format!(
                    "vertices {j} and {i} coincide"
                )));
            }
        }
        for (i, t) in self.tets.iter().enumerate() {
            if let Some(&v) = t.vertices.iter().find(|&&v| v as usize >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "tet {i} references vertex {v}, but there are only {nv}"
                )));
            }
            if !t.has_distinct_vertices() {
                return Err(Error::InvalidMesh(format!("tet {i} repeats a vertex")));
            }
            if t.signed_volume(&self.vertices) == 0.0 {
                return Err(Error::InvalidMesh(format!("tet {i} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.vertices.len(), self.tets.len())?;
        for p in &self.vertices {
            // `{}` on f64 is the shortest exact round-trip representation
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        for t in &self.tets {
            let [a, b, c, d] = t.vertices;
            writeln!(w, "{a} {b} {c} {d}")?;
        }
        Ok(())
    }

    /// Parses the mesh format; `origin` is only used in error messages.
    pub fn read_from(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));

        let mut next_fields = |what: &str| -> Result<(usize, Vec<String>)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l.split_whitespace().map(str::to_owned).collect())),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (n, header) = next_fields("header")?;
        if header.len() != 2 {
            return Err(parse_err(n, "header must be `n_vertices n_tets`".into()));
        }
        let nv: usize = header[0]
            .parse()
            .map_err(|e| parse_err(n, format!("bad vertex count: {e}")))?;
        let nt: usize = header[1]
            .parse()
            .map_err(|e| parse_err(n, format!("bad tet count: {e}")))?;

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (n, f) = next_fields("vertex line")?;
            if f.len() != 3 {
                return Err(parse_err(n, format!("expected 3 coordinates, got {}", f.len())));
            }
            let mut c = [0.0; 3];
            for (k, s) in f.iter().enumerate() {
                c[k] = s
                    .parse()
                    .map_err(|e| parse_err(n, format!("bad coordinate '{s}': {e}")))?;
            }
            vertices.push(Point3::from_array(c));
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (n, f) = next_fields("tet line")?;
            if f.len() != 4 {
                return Err(parse_err(n, format!("expected 4 indices, got {}", f.len())));
            }
            let mut v = [0u32; 4];
            for (k, s) in f.iter().enumerate() {
                v[k] = s
                    .parse()
                    .map_err(|e| parse_err(n, format!("bad index '{s}': {e}")))?;
            }
            tets.push(Tetrahedron::new(v));
        }
        if let Some((n, _)) = lines.next() {
            return Err(parse_err(n, "trailing content after the last tet".into()));
        }
        let mesh = Mesh { vertices, tets };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Partitions the box `[lo, hi]` into `cells^3` cubes, each split per `split`.
pub fn build_box_mesh(lo: Point3, hi: Point3, cells: usize, split: CubeSplit) -> Result<Mesh> {
    for k in 0..3 {
        if !(lo[k] < hi[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
            return Err(Error::InvalidDomain(format!(
                "lo {:?} must be strictly below hi {:?} in every component",
                lo.to_array(),
                hi.to_array()
            )));
        }
    }
    if cells == 0 {
        return Err(Error::InvalidDomain("cells per axis must be at least 1".into()));
    }

    // Vertices live on a lattice of half-cell spacing so that face and cube
    // centers of the 24-split get shared ids across neighboring cubes.
    let n = 2 * cells + 1;
    let mut ids = vec![u32::MAX; n * n * n];
    let mut vertices = Vec::new();
    let mut vertex = |i: usize, j: usize, k: usize| -> u32 {
        let slot = &mut ids[(i * n + j) * n + k];
        if *slot == u32::MAX {
            *slot = vertices.len() as u32;
            let t = |a: f64, b: f64, idx: usize| a + (b - a) * idx as f64 / (2 * cells) as f64;
            vertices.push(Point3::new(
                t(lo.x, hi.x, i),
                t(lo.y, hi.y, j),
                t(lo.z, hi.z, k),
            ));
        }
        *slot
    };

    const AXIS_ORDERS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];

    let mut tets = Vec::with_capacity(cells * cells * cells * split.tets_per_cube());
    for ci in 0..cells {
        for cj in 0..cells {
            for ck in 0..cells {
                let base = [2 * ci, 2 * cj, 2 * ck];
                match split {
                    CubeSplit::Kuhn6 => {
                        for order in AXIS_ORDERS {
                            // path 000 -> e_a -> e_a + e_b -> 111 along the cube edges
                            let mut c = base;
                            let mut v = [0u32; 4];
                            v[0] = vertex(c[0], c[1], c[2]);
                            for (step, &axis) in order.iter().enumerate() {
                                c[axis] += 2;
                                v[step + 1] = vertex(c[0], c[1], c[2]);
                            }
                            tets.push(Tetrahedron::new(v));
                        }
                    }
                    CubeSplit::Centroid24 => {
                        let center = vertex(base[0] + 1, base[1] + 1, base[2] + 1);
                        for axis in 0..3 {
                            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                            for side in [0, 2] {
                                let mut f = [base[0] + 1, base[1] + 1, base[2] + 1];
                                f[axis] = base[axis] + side;
                                let face = vertex(f[0], f[1], f[2]);
                                // face corners in cyclic order
                                let corner = |du: usize, dw: usize| {
                                    let mut c = base;
                                    c[axis] += side;
                                    c[u] += du;
                                    c[w] += dw;
                                    c
                                };
                                let ring = [corner(0, 0), corner(2, 0), corner(2, 2), corner(0, 2)];
                                for e in 0..4 {
                                    let a = ring[e];
                                    let b = ring[(e + 1) % 4];
                                    tets.push(Tetrahedron::new([
                                        center,
                                        face,
                                        vertex(a[0], a[1], a[2]),
                                        vertex(b[0], b[1], b[2]),
                                    ]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Mesh { vertices, tets })
}
