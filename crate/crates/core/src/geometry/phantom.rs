//! Analytic biventricular phantom and box slabs.
//!
//! Both generators voxelise the domain on a regular grid of spacing `h` and split every
//! kept voxel into six tetrahedra sharing the voxel's main diagonal, which yields a
//! conforming mesh with congruent elements. Cobiveco coordinates and fiber frames are
//! evaluated analytically from the ellipsoidal shells.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{signed_volume, Frame, Mesh, Point, SurfaceTag};
use crate::cobiveco::{wrap_rt, CobivecoCoord, SEPTAL_RT};
use crate::error::{Error, Result};

/// Two truncated ellipsoidal shells: a thick LV and a thinner RV wrapped around its
/// septal (-x) side. The long axis is z, the base plane sits at `base_height`, `+y` is
/// anterior and `+x` lateral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// LV epicardial semi-axes (x, y, z), mm.
    pub lv_outer: [f64; 3],
    /// LV endocardial semi-axes, mm.
    pub lv_inner: [f64; 3],
    pub rv_outer: [f64; 3],
    pub rv_inner: [f64; 3],
    /// x position of the RV ellipsoid centre, mm.
    pub rv_center_x: f64,
    pub base_height: f64,
    /// Target edge length (voxel size), mm.
    pub edge_length: f64,
    pub helix_endo_deg: f64,
    pub helix_epi_deg: f64,
    /// Random node displacement as a fraction of `edge_length`; 0 keeps the grid exact.
    pub jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            lv_outer: [45.0, 45.0, 80.0],
            lv_inner: [35.0, 35.0, 70.0],
            rv_outer: [40.0, 45.0, 75.0],
            rv_inner: [35.0, 40.0, 70.0],
            rv_center_x: -25.0,
            base_height: 0.0,
            edge_length: 4.0,
            helix_endo_deg: 60.0,
            helix_epi_deg: -60.0,
            jitter: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .lv_outer
            .iter()
            .chain(&self.lv_inner)
            .chain(&self.rv_outer)
            .chain(&self.rv_inner)
            .chain(std::iter::once(&self.edge_length));
        if all.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::DegenerateGeometry(
                "all semi-axes and the edge length must be positive".into(),
            ));
        }
        let mut min_wall = f64::INFINITY;
        for (outer, inner, name) in [
            (&self.lv_outer, &self.lv_inner, "LV"),
            (&self.rv_outer, &self.rv_inner, "RV"),
        ] {
            for k in 0..3 {
                let wall = outer[k] - inner[k];
                if wall <= 0.0 {
                    return Err(Error::DegenerateGeometry(format!(
                        "{name} inner semi-axis {k} ({}) must be smaller than outer ({})",
                        inner[k], outer[k]
                    )));
                }
                min_wall = min_wall.min(wall);
            }
        }
        if self.edge_length > min_wall {
            return Err(Error::Resolution(format!(
                "edge length {} mm exceeds the thinnest wall ({} mm)",
                self.edge_length, min_wall
            )));
        }
        if !(self.base_height.abs() < self.lv_inner[2] && self.base_height.abs() < self.rv_inner[2]) {
            return Err(Error::DegenerateGeometry(format!(
                "base plane at {} mm does not cut both cavities",
                self.base_height
            )));
        }
        if !(0.0..0.25).contains(&self.jitter) {
            return Err(Error::InvalidInput("jitter must lie in [0, 0.25)".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box `[0, size]`, fiber along `fiber`, sheet along `sheet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub size: [f64; 3],
    pub edge_length: f64,
    pub fiber: [f64; 3],
    pub sheet: [f64; 3],
}

impl Default for SlabSpec {
    fn default() -> Self {
        Self {
            size: [40.0, 40.0, 40.0],
            edge_length: 4.0,
            fiber: [1.0, 0.0, 0.0],
            sheet: [0.0, 1.0, 0.0],
        }
    }
}

/// Confocal-like family of ellipsoids interpolating linearly between an inner and an
/// outer surface; `depth` is the interpolation parameter through a point.
#[derive(Debug, Clone, Copy)]
struct Shell {
    center: Point,
    inner: Vector3<f64>,
    outer: Vector3<f64>,
}

impl Shell {
    fn axes(&self, s: f64) -> Vector3<f64> {
        self.inner + (self.outer - self.inner) * s
    }

    fn level(&self, p: &Point, s: f64) -> f64 {
        let a = self.axes(s);
        let d = p - self.center;
        (d.x / a.x).powi(2) + (d.y / a.y).powi(2) + (d.z / a.z).powi(2)
    }

    fn contains(&self, p: &Point, s: f64) -> bool {
        self.level(p, s) <= 1.0
    }

    /// Depth parameter of `p` (0 on the inner surface, 1 on the outer), not clamped.
    fn depth(&self, p: &Point) -> f64 {
        let lo_limit = (0..3)
            .map(|k| -self.inner[k] / (self.outer[k] - self.inner[k]))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo_limit * 0.999;
        let mut hi = 4.0;
        if self.level(p, hi) > 1.0 {
            return hi;
        }
        if self.level(p, lo) <= 1.0 {
            return lo;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.level(p, mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Outward unit normal of the family member through `p`.
    fn normal(&self, p: &Point, s: f64) -> Vector3<f64> {
        let a = self.axes(s);
        let d = p - self.center;
        let g = Vector3::new(d.x / (a.x * a.x), d.y / (a.y * a.y), d.z / (a.z * a.z));
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vector3::z()
        }
    }

    /// Height of the apex of the family member at depth `s`.
    fn apex_z(&self, s: f64) -> f64 {
        self.center.z - self.axes(s).z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Lv,
    Rv,
}

struct Phantom<'a> {
    spec: &'a PhantomSpec,
    lv: Shell,
    rv: Shell,
}

impl<'a> Phantom<'a> {
    fn new(spec: &'a PhantomSpec) -> Self {
        let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        Self {
            spec,
            lv: Shell {
                center: Point::zeros(),
                inner: v(spec.lv_inner),
                outer: v(spec.lv_outer),
            },
            rv: Shell {
                center: Point::new(spec.rv_center_x, 0.0, 0.0),
                inner: v(spec.rv_inner),
                outer: v(spec.rv_outer),
            },
        }
    }

    fn region_of(&self, p: &Point) -> Option<Region> {
        if p.z >= self.spec.base_height {
            return None;
        }
        let in_lv_outer = self.lv.contains(p, 1.0);
        if in_lv_outer && !self.lv.contains(p, 0.0) {
            return Some(Region::Lv);
        }
        if !in_lv_outer && self.rv.contains(p, 1.0) && !self.rv.contains(p, 0.0) {
            return Some(Region::Rv);
        }
        None
    }

    /// Azimuth on the LV epicardium (at height `z`) where the RV cavity begins on the
    /// anterior side; `None` where the RV does not reach the LV.
    fn septal_junction(&self, z: f64) -> Option<f64> {
        let o = self.lv.outer;
        let r2 = 1.0 - (z / o.z).powi(2);
        if r2 <= 0.0 {
            return None;
        }
        let rho = r2.sqrt();
        let at = |theta: f64| Point::new(o.x * rho * theta.cos(), o.y * rho * theta.sin(), z);
        if !self.rv.contains(&at(PI), 0.0) || self.rv.contains(&at(0.0), 0.0) {
            return None;
        }
        let (mut lo, mut hi) = (0.0, PI);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if self.rv.contains(&at(mid), 0.0) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// LV rotational coordinate from azimuth, piecewise linear between the junctions.
    /// Returns (rt, inside septal arc).
    fn lv_rt(theta: f64, junction: f64) -> (f64, bool) {
        let t = theta.rem_euclid(2.0 * PI);
        if t >= junction && t <= 2.0 * PI - junction {
            let rt = SEPTAL_RT + (t - junction) / (2.0 * PI - 2.0 * junction) * (1.0 - SEPTAL_RT);
            (rt, true)
        } else {
            let signed = if t > PI { t - 2.0 * PI } else { t };
            ((signed + junction) / (2.0 * junction) * SEPTAL_RT, false)
        }
    }

    fn ab(shell: &Shell, z: f64, s: f64, base: f64) -> f64 {
        let apex = shell.apex_z(s);
        ((z - apex) / (base - apex)).clamp(0.0, 1.0)
    }

    /// Coordinates of a node in the given region, before surface tags are applied.
    /// Also reports whether an LV node lies in the septum.
    fn coord(&self, p: &Point, region: Region) -> (CobivecoCoord, bool) {
        let base = self.spec.base_height;
        match region {
            Region::Lv => {
                let s = self.lv.depth(p).clamp(0.0, 1.0);
                let a = self.lv.axes(s);
                let zq = p.z * self.lv.outer.z / a.z;
                let junction = self.septal_junction(zq);
                let (rt, septal_arc) = Self::lv_rt(p.y.atan2(p.x), junction.unwrap_or(2.0 * PI / 3.0));
                let ab = Self::ab(&self.lv, p.z, s, base);
                let septal = septal_arc && junction.is_some();
                let c = if septal && s > 0.5 {
                    CobivecoCoord::new(2.0 * (1.0 - s), ab, septal_rt(rt), 1)
                } else if septal {
                    CobivecoCoord::new(2.0 * s, ab, wrap_rt(rt), 0)
                } else {
                    CobivecoCoord::new(s, ab, wrap_rt(rt), 0)
                };
                (c, septal)
            }
            Region::Rv => {
                let s = self.rv.depth(p).clamp(0.0, 1.0);
                let ab = Self::ab(&self.rv, p.z, s, base);
                let cx = self.rv.center.x;
                let psi = p.y.atan2(cx - p.x);
                let psi_j = self
                    .septal_junction(p.z)
                    .map(|th| {
                        let o = self.lv.outer;
                        let rho = (1.0 - (p.z / o.z).powi(2)).max(0.0).sqrt();
                        let (jx, jy) = (o.x * rho * th.cos(), o.y * rho * th.sin());
                        jy.atan2(cx - jx)
                    })
                    .filter(|v| *v > 1e-3)
                    .unwrap_or(PI / 2.0);
                let rt = ((psi + psi_j) / (2.0 * psi_j) * SEPTAL_RT).clamp(0.0, SEPTAL_RT);
                (CobivecoCoord::new(s, ab, rt, 1), false)
            }
        }
    }

    fn frame(&self, p: &Point, region: Region, tm: f64) -> Frame {
        let shell = match region {
            Region::Lv => &self.lv,
            Region::Rv => &self.rv,
        };
        let s = shell.depth(p).clamp(0.0, 1.0);
        let e_t = shell.normal(p, s);
        let mut e_c = Vector3::z().cross(&e_t);
        if e_c.norm() < 1e-6 {
            e_c = Vector3::x().cross(&e_t);
        }
        let e_c = e_c.normalize();
        let e_l = e_t.cross(&e_c);
        let helix = (self.spec.helix_endo_deg + (self.spec.helix_epi_deg - self.spec.helix_endo_deg) * tm)
            .to_radians();
        let fiber = (e_c * helix.cos() + e_l * helix.sin()).normalize();
        let normal = fiber.cross(&e_t).normalize();
        Frame {
            fiber,
            sheet: e_t,
            normal,
        }
    }
}

fn septal_rt(rt: f64) -> f64 {
    rt.clamp(SEPTAL_RT + 1e-9, 1.0 - 1e-9)
}

/// Six tets of the Kuhn split of the unit cube, as corner offsets (i, j, k).
const KUHN: [[[usize; 3]; 4]; 6] = [
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]],
    [[0, 0, 0], [1, 0, 0], [1, 0, 1], [1, 1, 1]],
    [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 1, 1]],
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 1]],
    [[0, 0, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1]],
    [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 1, 1]],
];

/// Tetrahedralised voxel set on a regular grid.
struct VoxelMesh {
    nodes: Vec<Point>,
    grid_index: Vec<[usize; 3]>,
    tets: Vec<[usize; 4]>,
    tet_voxel: Vec<usize>,
}

fn tetrahedralize(origin: Point, spacing: Vector3<f64>, voxels: &[[usize; 3]]) -> VoxelMesh {
    let mut ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    for v in voxels {
        for corner in KUHN.iter().flatten() {
            let g = [v[0] + corner[0], v[1] + corner[1], v[2] + corner[2]];
            // key in (k, j, i) order so numbering runs x fastest
            ids.entry([g[2], g[1], g[0]]).or_insert(0);
        }
    }
    let mut grid_index = Vec::with_capacity(ids.len());
    for (n, (key, id)) in ids.iter_mut().enumerate() {
        *id = n;
        grid_index.push([key[2], key[1], key[0]]);
    }
    let nodes: Vec<Point> = grid_index
        .iter()
        .map(|g| origin + Vector3::new(g[0] as f64 * spacing.x, g[1] as f64 * spacing.y, g[2] as f64 * spacing.z))
        .collect();
    let mut tets = Vec::with_capacity(voxels.len() * 6);
    let mut tet_voxel = Vec::with_capacity(voxels.len() * 6);
    for (vi, v) in voxels.iter().enumerate() {
        for kt in &KUHN {
            let mut tet = kt.map(|c| ids[&[v[2] + c[2], v[1] + c[1], v[0] + c[0]]]);
            let vol = signed_volume(&nodes[tet[0]], &nodes[tet[1]], &nodes[tet[2]], &nodes[tet[3]]);
            if vol < 0.0 {
                tet.swap(2, 3);
            }
            tets.push(tet);
            tet_voxel.push(vi);
        }
    }
    VoxelMesh {
        nodes,
        grid_index,
        tets,
        tet_voxel,
    }
}

/// Keeps the voxels of the largest node-connected component.
fn largest_component(voxels: Vec<[usize; 3]>) -> Vec<[usize; 3]> {
    let index: BTreeMap<[usize; 3], usize> = voxels.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut label = vec![usize::MAX; voxels.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..voxels.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        label[start] = id;
        stack.push(start);
        while let Some(cur) = stack.pop() {
            size += 1;
            let v = voxels[cur];
            // voxels sharing a corner share mesh nodes
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let n = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                        if n.iter().any(|&c| c < 0) {
                            continue;
                        }
                        let key = [n[0] as usize, n[1] as usize, n[2] as usize];
                        if let Some(&j) = index.get(&key) {
                            if label[j] == usize::MAX {
                                label[j] = id;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    let best = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap_or(0);
    voxels
        .into_iter()
        .zip(label)
        .filter(|(_, l)| *l == best)
        .map(|(v, _)| v)
        .collect()
}

/// Builds the biventricular phantom. Output is a pure function of `(spec, seed)`; the
/// seed only matters when `spec.jitter > 0`.
pub fn build_phantom(spec: &PhantomSpec, seed: u64) -> Result<Mesh> {
    spec.validate()?;
    let ph = Phantom::new(spec);
    let h = spec.edge_length;
    let xmin = (-spec.lv_outer[0]).min(spec.rv_center_x - spec.rv_outer[0]) - h;
    let xmax = spec.lv_outer[0].max(spec.rv_center_x + spec.rv_outer[0]) + h;
    let ymax = spec.lv_outer[1].max(spec.rv_outer[1]) + h;
    let zmin = (-spec.lv_outer[2]).min(-spec.rv_outer[2]) - h;
    let nx = ((xmax - xmin) / h).ceil() as usize;
    let ny = ((2.0 * ymax) / h).ceil() as usize;
    let nz = ((spec.base_height - zmin) / h).ceil() as usize;
    let origin = Point::new(xmin, -(ny as f64) * h / 2.0, spec.base_height - nz as f64 * h);
    let spacing = Vector3::repeat(h);

    let mut voxels = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                if ph.region_of(&c).is_some() {
                    voxels.push([i, j, k]);
                }
            }
        }
    }
    let voxels = largest_component(voxels);
    if voxels.is_empty() {
        return Err(Error::Resolution("no voxel centre falls inside the wall".into()));
    }
    let voxel_region: Vec<Region> = voxels
        .iter()
        .map(|v| {
            let c = origin + Vector3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * h;
            ph.region_of(&c).expect("kept voxels lie in tissue")
        })
        .collect();
    let VoxelMesh {
        mut nodes,
        grid_index,
        tets,
        tet_voxel,
    } = tetrahedralize(origin, spacing, &voxels);

    if spec.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = spec.jitter * h;
        for (p, g) in nodes.iter_mut().zip(&grid_index) {
            let d = Vector3::new(
                rng.gen_range(-amp..=amp),
                rng.gen_range(-amp..=amp),
                rng.gen_range(-amp..=amp),
            );
            *p += d;
            if g[2] == nz {
                p.z = spec.base_height;
            }
        }
    }

    let n = nodes.len();
    let tet_region: Vec<Region> = tet_voxel.iter().map(|&v| voxel_region[v]).collect();
    let mut node_region = vec![Region::Rv; n];
    for (t, tet) in tets.iter().enumerate() {
        if tet_region[t] == Region::Lv {
            for &v in tet {
                node_region[v] = Region::Lv;
            }
        }
    }
    let mut coords = Vec::with_capacity(n);
    let mut septal = Vec::with_capacity(n);
    for (p, r) in nodes.iter().zip(&node_region) {
        let (c, s) = ph.coord(p, *r);
        coords.push(c);
        septal.push(s);
    }

    let tags = tag_surfaces(&ph, &nodes, &tets, &tet_region);
    for i in 0..n {
        let c = &mut coords[i];
        match tags[i] {
            SurfaceTag::LvEndo => {
                c.tm = 0.0;
                c.tv = 0;
            }
            SurfaceTag::RvEndo => {
                c.tm = 0.0;
                if node_region[i] == Region::Lv && septal[i] {
                    c.tv = 1;
                    c.rt = septal_rt(c.rt);
                } else {
                    c.tv = 1;
                }
            }
            SurfaceTag::Epi => c.tm = 1.0,
            SurfaceTag::None => {}
        }
    }

    let frames = tets
        .iter()
        .enumerate()
        .map(|(t, tet)| {
            let centroid = tet.iter().map(|&v| nodes[v]).sum::<Point>() / 4.0;
            let tm = tet.iter().map(|&v| coords[v].tm).sum::<f64>() / 4.0;
            ph.frame(&centroid, tet_region[t], tm)
        })
        .collect();

    Mesh::new(nodes, tets, frames, coords, tags)
}

fn tag_surfaces(ph: &Phantom<'_>, nodes: &[Point], tets: &[[usize; 4]], tet_region: &[Region]) -> Vec<SurfaceTag> {
    let base = ph.spec.base_height;
    let mut faces: Vec<([usize; 3], usize)> = Vec::with_capacity(tets.len() * 4);
    for (t, tet) in tets.iter().enumerate() {
        for skip in 0..4 {
            let mut f = [0; 3];
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
    let priority = |t: SurfaceTag| match t {
        SurfaceTag::None => 0,
        SurfaceTag::Epi => 1,
        SurfaceTag::RvEndo => 2,
        SurfaceTag::LvEndo => 3,
    };
    let mut tags = vec![SurfaceTag::None; nodes.len()];
    let mut i = 0;
    while i < faces.len() {
        let mut j = i + 1;
        while j < faces.len() && faces[j].0 == faces[i].0 {
            j += 1;
        }
        if j - i == 1 {
            let (f, t) = faces[i];
            let on_base = f.iter().all(|&v| nodes[v].z >= base - 1e-9);
            if !on_base {
                let c = (nodes[f[0]] + nodes[f[1]] + nodes[f[2]]) / 3.0;
                let tag = match tet_region[t] {
                    Region::Lv => {
                        if ph.lv.depth(&c) < 0.5 {
                            SurfaceTag::LvEndo
                        } else {
                            let (_, septal) = ph.coord(&c, Region::Lv);
                            if septal {
                                SurfaceTag::RvEndo
                            } else {
                                SurfaceTag::Epi
                            }
                        }
                    }
                    Region::Rv => {
                        if ph.rv.depth(&c) < 0.5 {
                            SurfaceTag::RvEndo
                        } else {
                            SurfaceTag::Epi
                        }
                    }
                };
                for &v in &f {
                    if priority(tag) > priority(tags[v]) {
                        tags[v] = tag;
                    }
                }
            }
        }
        i = j;
    }
    tags
}

/// Builds a box slab `[0, size]` with uniform fiber/sheet directions. Cobiveco values
/// are synthetic (`tm` follows y, `ab` follows z, `rt` follows x); the `y = 0` face is
/// tagged as LV endocardium and `y = size.y` as epicardium.
pub fn build_slab(spec: &SlabSpec) -> Result<Mesh> {
    if spec.size.iter().chain(std::iter::once(&spec.edge_length)).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::DegenerateGeometry("slab size and edge length must be positive".into()));
    }
    let counts: [usize; 3] = spec.size.map(|l| ((l / spec.edge_length).round() as usize).max(1));
    let spacing = Vector3::new(
        spec.size[0] / counts[0] as f64,
        spec.size[1] / counts[1] as f64,
        spec.size[2] / counts[2] as f64,
    );
    let mut voxels = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                voxels.push([i, j, k]);
            }
        }
    }
    let vm = tetrahedralize(Point::zeros(), spacing, &voxels);
    let fiber = Vector3::from(spec.fiber);
    let sheet_raw = Vector3::from(spec.sheet);
    if fiber.norm() == 0.0 {
        return Err(Error::InvalidInput("slab fiber direction is zero".into()));
    }
    let fiber = fiber.normalize();
    let sheet = sheet_raw - fiber * fiber.dot(&sheet_raw);
    if sheet.norm() < 1e-9 {
        return Err(Error::InvalidInput("slab sheet direction is parallel to the fiber".into()));
    }
    let sheet = sheet.normalize();
    let frame = Frame {
        fiber,
        sheet,
        normal: fiber.cross(&sheet),
    };
    let coords = vm
        .grid_index
        .iter()
        .map(|g| {
            let fx = g[0] as f64 / counts[0] as f64;
            let fy = g[1] as f64 / counts[1] as f64;
            let fz = g[2] as f64 / counts[2] as f64;
            CobivecoCoord::new(fy, fz, wrap_rt(0.999 * fx), 0)
        })
        .collect();
    let tags = vm
        .grid_index
        .iter()
        .map(|g| {
            if g[1] == 0 {
                SurfaceTag::LvEndo
            } else if g[1] == counts[1] {
                SurfaceTag::Epi
            } else {
                SurfaceTag::None
            }
        })
        .collect();
    let n_tets = vm.tets.len();
    Mesh::new(vm.nodes, vm.tets, vec![frame; n_tets], coords, tags)
}
