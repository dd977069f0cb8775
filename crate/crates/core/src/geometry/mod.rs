//! Tetrahedral biventricular meshes.
//!
//! A [`Mesh`] is immutable once built: construction validates every invariant and
//! precomputes the node adjacency used by the solvers.

mod io;
mod phantom;

pub use io::{load_mesh, save_mesh, save_mesh_with_comment, write_vtk};
pub use phantom::{build_phantom, build_slab, PhantomSpec, SlabSpec};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cobiveco::CobivecoCoord;
use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Orthonormal fiber / sheet / sheet-normal triad attached to one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub fiber: Vector3<f64>,
    pub sheet: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Frame {
    pub fn axis_aligned() -> Self {
        Self {
            fiber: Vector3::x(),
            sheet: Vector3::y(),
            normal: Vector3::z(),
        }
    }

    /// Largest deviation of the triad from orthonormality.
    pub fn orthonormality_error(&self) -> f64 {
        let f = &self.fiber;
        let s = &self.sheet;
        let n = &self.normal;
        [
            (f.norm_squared() - 1.0).abs(),
            (s.norm_squared() - 1.0).abs(),
            (n.norm_squared() - 1.0).abs(),
            f.dot(s).abs(),
            f.dot(n).abs(),
            s.dot(n).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceTag {
    None,
    LvEndo,
    RvEndo,
    Epi,
}

impl SurfaceTag {
    pub fn is_endo(self) -> bool {
        matches!(self, SurfaceTag::LvEndo | SurfaceTag::RvEndo)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceTag::None => "none",
            SurfaceTag::LvEndo => "lv_endo",
            SurfaceTag::RvEndo => "rv_endo",
            SurfaceTag::Epi => "epi",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SurfaceTag::None => 0,
            SurfaceTag::LvEndo => 1,
            SurfaceTag::RvEndo => 2,
            SurfaceTag::Epi => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SurfaceTag::None,
            1 => SurfaceTag::LvEndo,
            2 => SurfaceTag::RvEndo,
            3 => SurfaceTag::Epi,
            _ => return None,
        })
    }
}

impl std::str::FromStr for SurfaceTag {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "none" => SurfaceTag::None,
            "lv_endo" => SurfaceTag::LvEndo,
            "rv_endo" => SurfaceTag::RvEndo,
            "epi" => SurfaceTag::Epi,
            _ => return Err(()),
        })
    }
}

/// Compressed adjacency lists.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Csr {
    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for l in lists {
            items.extend(l);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    fn get(&self, i: usize) -> &[usize] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    tets: Vec<[usize; 4]>,
    frames: Vec<Frame>,
    cobiveco: Vec<CobivecoCoord>,
    surface_tags: Vec<SurfaceTag>,
    node_tets: Csr,
    node_neighbors: Csr,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.tets == other.tets
            && self.frames == other.frames
            && self.cobiveco == other.cobiveco
            && self.surface_tags == other.surface_tags
    }
}

/// Signed volume of the tetrahedron (a, b, c, d); positive for right-handed ordering.
pub fn signed_volume(a: &Point, b: &Point, c: &Point, d: &Point) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

/// Minimum tet volume accepted by validation, relative to the cube of the mean edge.
const MIN_RELATIVE_VOLUME: f64 = 1e-9;

impl Mesh {
    /// Builds and validates a mesh.
    pub fn new(
        nodes: Vec<Point>,
        tets: Vec<[usize; 4]>,
        frames: Vec<Frame>,
        cobiveco: Vec<CobivecoCoord>,
        surface_tags: Vec<SurfaceTag>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 || tets.is_empty() {
            return Err(Error::InvalidMesh("mesh has no nodes or no tets".into()));
        }
        if frames.len() != tets.len() {
            return Err(Error::LengthMismatch {
                what: "frames per tet",
                expected: tets.len(),
                got: frames.len(),
            });
        }
        if cobiveco.len() != n {
            return Err(Error::LengthMismatch {
                what: "cobiveco per node",
                expected: n,
                got: cobiveco.len(),
            });
        }
        if surface_tags.len() != n {
            return Err(Error::LengthMismatch {
                what: "surface tags per node",
                expected: n,
                got: surface_tags.len(),
            });
        }
        for (i, p) in nodes.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidMesh(format!("node {i} has non-finite position")));
            }
        }
        for (t, tet) in tets.iter().enumerate() {
            for (k, &v) in tet.iter().enumerate() {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "tet {t} references node {v} but mesh has {n} nodes"
                    )));
                }
                if tet[..k].contains(&v) {
                    return Err(Error::InvalidMesh(format!("tet {t} repeats node {v}")));
                }
            }
        }
        let mut edge_sum = 0.0;
        for tet in &tets {
            edge_sum += (nodes[tet[1]] - nodes[tet[0]]).norm();
        }
        let scale = edge_sum / tets.len() as f64;
        let min_vol = MIN_RELATIVE_VOLUME * scale.powi(3);
        for (t, tet) in tets.iter().enumerate() {
            let v = signed_volume(&nodes[tet[0]], &nodes[tet[1]], &nodes[tet[2]], &nodes[tet[3]]);
            if !(v > min_vol) {
                return Err(Error::InvalidMesh(format!(
                    "tet {t} is inverted or flat (signed volume {v:e})"
                )));
            }
        }
        for (t, f) in frames.iter().enumerate() {
            let err = f.orthonormality_error();
            if !(err <= 1e-6) {
                return Err(Error::InvalidMesh(format!(
                    "frame of tet {t} is not orthonormal (error {err:e})"
                )));
            }
        }
        for (i, c) in cobiveco.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::InvalidMesh(format!("node {i}: {e}")))?;
        }

        let mut nt = vec![Vec::new(); n];
        let mut nn = vec![Vec::new(); n];
        for (t, tet) in tets.iter().enumerate() {
            for &a in tet {
                nt[a].push(t);
                for &b in tet {
                    if a != b {
                        nn[a].push(b);
                    }
                }
            }
        }
        for l in &mut nn {
            l.sort_unstable();
            l.dedup();
        }
        let mesh = Self {
            nodes,
            tets,
            frames,
            cobiveco,
            surface_tags,
            node_tets: Csr::from_lists(nt),
            node_neighbors: Csr::from_lists(nn),
        };
        let comps = mesh.component_labels().1;
        if comps != 1 {
            return Err(Error::InvalidMesh(format!(
                "mesh has {comps} connected components, expected 1"
            )));
        }
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn cobiveco(&self) -> &[CobivecoCoord] {
        &self.cobiveco
    }

    pub fn surface_tags(&self) -> &[SurfaceTag] {
        &self.surface_tags
    }

    /// Elements incident to node `i`.
    pub fn node_tets(&self, i: usize) -> &[usize] {
        self.node_tets.get(i)
    }

    /// Nodes sharing at least one element with node `i`, sorted.
    pub fn node_neighbors(&self, i: usize) -> &[usize] {
        self.node_neighbors.get(i)
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        self.tets[t].map(|v| self.nodes[v])
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_points(t);
        signed_volume(&a, &b, &c, &d)
    }

    pub fn tet_centroid(&self, t: usize) -> Point {
        let p = self.tet_points(t);
        (p[0] + p[1] + p[2] + p[3]) / 4.0
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Mean length over all distinct mesh edges.
    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.num_nodes() {
            for &j in self.node_neighbors(i) {
                if j > i {
                    sum += (self.nodes[j] - self.nodes[i]).norm();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// Copy of the mesh shifted rigidly by `offset`.
    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        let mut m = self.clone();
        for p in &mut m.nodes {
            *p += offset;
        }
        m
    }

    /// Per-node component label and the number of components.
    fn component_labels(&self) -> (Vec<usize>, usize) {
        let n = self.num_nodes();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in self.node_neighbors(v) {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Boundary faces (faces owned by exactly one tet) as (sorted node triple, owning tet).
    pub fn boundary_faces(&self) -> Vec<([usize; 3], usize)> {
        let mut faces: Vec<([usize; 3], usize)> = Vec::with_capacity(self.tets.len() * 4);
        for (t, tet) in self.tets.iter().enumerate() {
            for skip in 0..4 {
                let mut f = [0usize; 3];
                let mut k = 0;
                for (j, &v) in tet.iter().enumerate() {
                    if j != skip {
                        f[k] = v;
                        k += 1;
                    }
                }
                f.sort_unstable();
                faces.push((f, t));
            }
        }
        faces.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < faces.len() {
            let mut j = i + 1;
            while j < faces.len() && faces[j].0 == faces[i].0 {
                j += 1;
            }
            if j - i == 1 {
                out.push(faces[i]);
            }
            i = j;
        }
        out
    }
}
