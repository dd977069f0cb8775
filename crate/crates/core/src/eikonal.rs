//! Anisotropic Eikonal activation: a fast iterative method with an exact per-tet
//! local solver, plus a refined-graph Dijkstra used as a reference solution.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cobiveco::{rt_delta, CobivecoCoord};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, SurfaceTag};
use crate::scenario::Speeds;

/// cm/s to mm/ms.
const CM_PER_S: f64 = 0.01;

/// Earliest-activation sites with their Purkinje delays (ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootNodes {
    entries: Vec<(usize, f64)>,
}

impl RootNodes {
    /// Every node must be tagged endocardial.
    pub fn new(mesh: &Mesh, entries: Vec<(usize, f64)>) -> Result<Self> {
        Self::check(mesh, &entries, true)?;
        Ok(Self { entries })
    }

    /// Like [`RootNodes::new`] but accepts any node; used for synthetic test geometries.
    pub fn unchecked_surface(mesh: &Mesh, entries: Vec<(usize, f64)>) -> Result<Self> {
        Self::check(mesh, &entries, false)?;
        Ok(Self { entries })
    }

    fn check(mesh: &Mesh, entries: &[(usize, f64)], endo_only: bool) -> Result<()> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("at least one root node is required".into()));
        }
        for (i, &(n, pk)) in entries.iter().enumerate() {
            if n >= mesh.num_nodes() {
                return Err(Error::InvalidInput(format!("root node {n} out of range")));
            }
            if !(pk.is_finite() && pk >= 0.0) {
                return Err(Error::InvalidInput(format!("root delay {pk} must be finite and >= 0")));
            }
            if endo_only && !mesh.surface_tags()[n].is_endo() {
                return Err(Error::InvalidInput(format!("root node {n} is not endocardial")));
            }
            if entries[..i].iter().any(|&(m, _)| m == n) {
                return Err(Error::InvalidInput(format!("root node {n} listed twice")));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// Boundary times `pk - min(pk)`.
    fn boundary(&self) -> Vec<(usize, f64)> {
        let min = self.entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        self.entries.iter().map(|&(n, pk)| (n, pk - min)).collect()
    }
}

/// Target location of one default root, in Cobiveco coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootTarget {
    pub ab: f64,
    pub rt: f64,
    pub tv: u8,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RootConfig {
    pub targets: Vec<RootTarget>,
}

impl Default for RootConfig {
    fn default() -> Self {
        let t = |ab, rt, tv| RootTarget { ab, rt, tv, delay: 0.0 };
        Self {
            targets: vec![
                // LV: mid-septum, basal anterior paraseptal, two mid posterior
                t(0.5, 5.0 / 6.0, 0),
                t(0.8, 0.62, 0),
                t(0.5, 0.05, 0),
                t(0.5, 0.2, 0),
                // RV: mid-septum, two free-wall sites
                t(0.5, 5.0 / 6.0, 1),
                t(0.6, 0.2, 1),
                t(0.4, 0.45, 1),
            ],
        }
    }
}

/// The endocardial node nearest to each configured target (periodic `rt`); LV targets
/// search the LV endocardium and RV targets the RV endocardium. Ties go to the lowest
/// node index.
pub fn default_roots(mesh: &Mesh) -> Result<RootNodes> {
    roots_from_targets(mesh, &RootConfig::default())
}

pub fn roots_from_targets(mesh: &Mesh, cfg: &RootConfig) -> Result<RootNodes> {
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(cfg.targets.len());
    for target in &cfg.targets {
        let surface = if target.tv == 0 { SurfaceTag::LvEndo } else { SurfaceTag::RvEndo };
        let goal = CobivecoCoord::new(0.0, target.ab, target.rt, target.tv);
        let mut best: Option<(f64, usize)> = None;
        for (i, (c, tag)) in mesh.cobiveco().iter().zip(mesh.surface_tags()).enumerate() {
            if *tag != surface || c.tv != target.tv || entries.iter().any(|e| e.0 == i) {
                continue;
            }
            let d = cobiveco_distance(c, &goal);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, node) = best.ok_or_else(|| {
            Error::InvalidInput(format!("no {} nodes to place a root on", surface.as_str()))
        })?;
        entries.push((node, target.delay));
    }
    RootNodes::new(mesh, entries)
}

fn cobiveco_distance(a: &CobivecoCoord, b: &CobivecoCoord) -> f64 {
    let dr = rt_delta(a.rt, b.rt);
    ((a.tm - b.tm).powi(2) + (a.ab - b.ab).powi(2) + dr * dr).sqrt()
}

/// Per-node activation times in ms; `+inf` marks unreachable nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub times: Vec<f64>,
}

impl ActivationMap {
    pub fn new(times: Vec<f64>) -> Self {
        Self { times }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn unreachable(&self) -> Vec<usize> {
        (0..self.times.len()).filter(|&i| !self.times[i].is_finite()).collect()
    }

    pub fn min_finite(&self) -> Option<f64> {
        self.times.iter().copied().filter(|t| t.is_finite()).reduce(f64::min)
    }

    pub fn max_finite(&self) -> Option<f64> {
        self.times.iter().copied().filter(|t| t.is_finite()).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.times.len() * 16);
        s.push_str("node_index,t_ms\n");
        for (i, t) in self.times.iter().enumerate() {
            let _ = writeln!(s, "{i},{t}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut times = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') || l.starts_with("node_index") {
                continue;
            }
            let (i, t) = l
                .split_once(',')
                .ok_or_else(|| Error::format(path, ln + 1, "expected 'node_index,t_ms'"))?;
            let i: usize = i.trim().parse().map_err(|_| Error::format(path, ln + 1, "bad node index"))?;
            let t: f64 = t.trim().parse().map_err(|_| Error::format(path, ln + 1, "bad time"))?;
            if i != times.len() {
                return Err(Error::format(path, ln + 1, format!("node index {i} out of order")));
            }
            times.push(t);
        }
        Ok(Self { times })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EikonalConfig {
    /// Convergence tolerance on node updates, ms.
    pub tol: f64,
    /// Safety cap on node updates, as a multiple of the node count.
    pub max_updates_per_node: usize,
}

impl Default for EikonalConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_updates_per_node: 1000,
        }
    }
}

/// Inverse speed tensor `F diag(1/v^2) F^T` in (ms/mm)^2.
fn inverse_metric(mesh: &Mesh, speeds: &[Speeds]) -> Result<Vec<Matrix3<f64>>> {
    if speeds.len() != mesh.num_tets() {
        return Err(Error::LengthMismatch {
            what: "speeds per element",
            expected: mesh.num_tets(),
            got: speeds.len(),
        });
    }
    speeds
        .iter()
        .zip(mesh.frames())
        .enumerate()
        .map(|(t, (s, f))| {
            let v = [s.fiber, s.sheet, s.normal];
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidInput(format!("element {t} has non-positive speed {v:?}")));
            }
            let mut m = Matrix3::zeros();
            for (axis, vi) in [f.fiber, f.sheet, f.normal].iter().zip(v) {
                let vi = vi * CM_PER_S;
                m += axis * axis.transpose() / (vi * vi);
            }
            Ok(m)
        })
        .collect()
}

/// Precomputed data for updating local vertex `k` of one tet from the opposite face
/// `(a, b, c)`. With `A = [xa - xc, xb - xc]`, `e = xk - xc` and the inverse metric
/// `W`: `G = A^T W A`, `g = A^T W e`, `c = e^T W e`.
#[derive(Debug, Clone, Copy)]
struct FaceForm {
    g11: f64,
    g22: f64,
    g1: f64,
    g2: f64,
    c: f64,
    /// `G^-1` entries; all zero when the face is degenerate under `W`.
    i11: f64,
    i12: f64,
    i22: f64,
    /// `G^-1 g` and `c - g^T G^-1 g`.
    l1: f64,
    l2: f64,
    d2: f64,
    /// Edge (a, b) seen from base b: squared length, cross term, and `|xk - xb|^2`.
    gab: f64,
    gab_g: f64,
    cab: f64,
    /// `|xk - xa|^2`.
    caa: f64,
    regular: bool,
}

/// One travel-time candidate along an edge `y = x_base + s (x_other - x_base)`.
#[inline]
fn edge_time(gg: f64, g: f64, c: f64, t_base: f64, t_other: f64) -> f64 {
    let at = |s: f64| t_base + (t_other - t_base) * s + (c - 2.0 * g * s + gg * s * s).max(0.0).sqrt();
    let mut best = at(0.0).min(at(1.0));
    let delta = t_other - t_base;
    if gg > 0.0 && delta * delta < gg {
        let d2 = (c - g * g / gg).max(0.0);
        let n = (d2 / (1.0 - delta * delta / gg)).sqrt();
        let s = ((g - n * delta) / gg).clamp(0.0, 1.0);
        best = best.min(at(s));
    }
    best
}

impl FaceForm {
    fn new(w: &Matrix3<f64>, pts: &[nalgebra::Vector3<f64>; 4], k: usize) -> Self {
        let others: [usize; 3] = OTHERS[k];
        let xc = pts[others[2]];
        let a1 = pts[others[0]] - xc;
        let a2 = pts[others[1]] - xc;
        let e = pts[k] - xc;
        let wa1 = w * a1;
        let wa2 = w * a2;
        let (g11, g12, g22) = (a1.dot(&wa1), a1.dot(&wa2), a2.dot(&wa2));
        let (g1, g2, c) = (e.dot(&wa1), e.dot(&wa2), e.dot(&(w * e)));
        let det = g11 * g22 - g12 * g12;
        let regular = det > 1e-12 * g11 * g22;
        let (i11, i12, i22) = if regular { (g22 / det, -g12 / det, g11 / det) } else { (0.0, 0.0, 0.0) };
        let l1 = i11 * g1 + i12 * g2;
        let l2 = i12 * g1 + i22 * g2;
        Self {
            g11,
            g22,
            g1,
            g2,
            c,
            i11,
            i12,
            i22,
            l1,
            l2,
            d2: (c - g1 * l1 - g2 * l2).max(0.0),
            gab: g11 - 2.0 * g12 + g22,
            gab_g: g1 - g2 - g12 + g22,
            cab: c - 2.0 * g2 + g22,
            caa: c - 2.0 * g1 + g11,
            regular,
        }
    }

    /// Minimum arrival time at the free vertex over the opposite face given the
    /// times `ta, tb, tc` (any may be infinite).
    #[inline]
    fn solve(&self, ta: f64, tb: f64, tc: f64) -> f64 {
        match (ta.is_finite(), tb.is_finite(), tc.is_finite()) {
            (true, true, true) => {
                if let Some(t) = self.interior(ta, tb, tc) {
                    return t;
                }
                edge_time(self.g11, self.g1, self.c, tc, ta)
                    .min(edge_time(self.g22, self.g2, self.c, tc, tb))
                    .min(edge_time(self.gab, self.gab_g, self.cab, tb, ta))
            }
            (true, false, true) => edge_time(self.g11, self.g1, self.c, tc, ta),
            (false, true, true) => edge_time(self.g22, self.g2, self.c, tc, tb),
            (true, true, false) => edge_time(self.gab, self.gab_g, self.cab, tb, ta),
            (false, false, true) => tc + self.c.max(0.0).sqrt(),
            (false, true, false) => tb + self.cab.max(0.0).sqrt(),
            (true, false, false) => ta + self.caa.max(0.0).sqrt(),
            (false, false, false) => f64::INFINITY,
        }
    }

    #[inline]
    fn interior(&self, ta: f64, tb: f64, tc: f64) -> Option<f64> {
        if !self.regular {
            return None;
        }
        let (d1, d2) = (ta - tc, tb - tc);
        let h1 = self.i11 * d1 + self.i12 * d2;
        let h2 = self.i12 * d1 + self.i22 * d2;
        let w = d1 * h1 + d2 * h2;
        if w >= 1.0 {
            return None;
        }
        let n = (self.d2 / (1.0 - w)).sqrt();
        let l1 = self.l1 - n * h1;
        let l2 = self.l2 - n * h2;
        if l1 < 0.0 || l2 < 0.0 || l1 + l2 > 1.0 {
            return None;
        }
        Some(tc + d1 * l1 + d2 * l2 + n)
    }
}

const OTHERS: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Incident faces of every node, stored contiguously per node.
struct LocalSolver {
    offsets: Vec<usize>,
    forms: Vec<FaceForm>,
    faces: Vec<[u32; 3]>,
}

impl LocalSolver {
    fn new(mesh: &Mesh, speeds: &[Speeds]) -> Result<Self> {
        let metric = inverse_metric(mesh, speeds)?;
        let n = mesh.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut forms = Vec::with_capacity(mesh.num_tets() * 4);
        let mut faces = Vec::with_capacity(mesh.num_tets() * 4);
        offsets.push(0);
        for node in 0..n {
            for &tet in mesh.node_tets(node) {
                let verts = mesh.tets()[tet];
                let k = verts.iter().position(|&v| v == node).expect("node belongs to tet");
                let o = OTHERS[k];
                forms.push(FaceForm::new(&metric[tet], &mesh.tet_points(tet), k));
                faces.push([verts[o[0]] as u32, verts[o[1]] as u32, verts[o[2]] as u32]);
            }
            offsets.push(forms.len());
        }
        Ok(Self { offsets, forms, faces })
    }

    #[inline]
    fn update(&self, node: usize, t: &[f64]) -> f64 {
        let range = self.offsets[node]..self.offsets[node + 1];
        let mut best = f64::INFINITY;
        for (form, f) in self.forms[range.clone()].iter().zip(&self.faces[range]) {
            let (ta, tb, tc) = (t[f[0] as usize], t[f[1] as usize], t[f[2] as usize]);
            // the face cannot beat the current best if all its vertices are later
            if ta.min(tb).min(tc) >= best {
                continue;
            }
            best = best.min(form.solve(ta, tb, tc));
        }
        best
    }
}

/// Activation times for per-element speeds (cm/s) and root nodes, using the default
/// tolerance.
pub fn solve_activation(mesh: &Mesh, speeds: &[Speeds], roots: &RootNodes) -> Result<ActivationMap> {
    solve_activation_with(mesh, speeds, roots, &EikonalConfig::default())
}

pub fn solve_activation_with(
    mesh: &Mesh,
    speeds: &[Speeds],
    roots: &RootNodes,
    cfg: &EikonalConfig,
) -> Result<ActivationMap> {
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", cfg.tol)));
    }
    let solver = LocalSolver::new(mesh, speeds)?;
    let n = mesh.num_nodes();
    let mut t = vec![f64::INFINITY; n];
    let mut fixed = vec![false; n];
    for (node, t0) in roots.boundary() {
        if node >= n {
            return Err(Error::InvalidInput(format!("root node {node} out of range")));
        }
        t[node] = t0;
        fixed[node] = true;
    }

    let mut in_list = vec![false; n];
    let mut list: Vec<usize> = Vec::new();
    for &(node, _) in roots.entries() {
        for &nb in mesh.node_neighbors(node) {
            if !fixed[nb] && !in_list[nb] {
                in_list[nb] = true;
                list.push(nb);
            }
        }
    }

    let cap = cfg.max_updates_per_node.saturating_mul(n.max(1));
    let mut updates = 0usize;
    let mut next = Vec::new();
    while !list.is_empty() {
        next.clear();
        for &x in &list {
            let p = t[x];
            let q = solver.update(x, &t);
            updates += 1;
            if q < p {
                t[x] = q;
            }
            let converged = !(p - q > cfg.tol) || q == p;
            if converged {
                in_list[x] = false;
                for &nb in mesh.node_neighbors(x) {
                    if fixed[nb] || in_list[nb] {
                        continue;
                    }
                    let qn = solver.update(nb, &t);
                    updates += 1;
                    if qn < t[nb] {
                        t[nb] = qn;
                        in_list[nb] = true;
                        next.push(nb);
                    }
                }
            } else {
                next.push(x);
            }
        }
        std::mem::swap(&mut list, &mut next);
        if updates > cap {
            return Err(Error::Numerical(format!(
                "activation did not converge within {updates} node updates"
            )));
        }
    }
    Ok(ActivationMap { times: t })
}

/// Traversal time of the straight segment `d` (mm) under the inverse metric `w`.
fn segment_time(w: &Matrix3<f64>, d: &nalgebra::Vector3<f64>) -> f64 {
    d.dot(&(w * d)).max(0.0).sqrt()
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest travel time on a graph whose vertices are the order-`refine` barycentric
/// lattice points of every tet and whose edges join every pair of lattice points
/// sharing a tet, weighted by the tet's anisotropic traversal time. Mesh edges are
/// always part of the graph, so the result upper-bounds the continuous solution and
/// shrinks as `refine` grows.
pub fn oracle_activation(mesh: &Mesh, speeds: &[Speeds], roots: &RootNodes, refine: usize) -> Result<ActivationMap> {
    if refine == 0 {
        return Err(Error::InvalidInput("refine must be >= 1".into()));
    }
    let metric = inverse_metric(mesh, speeds)?;
    let r = refine as u32;
    let mut lattice: Vec<[u32; 4]> = Vec::new();
    for a in 0..=r {
        for b in 0..=r - a {
            for c in 0..=r - a - b {
                lattice.push([a, b, c, r - a - b - c]);
            }
        }
    }

    let n_nodes = mesh.num_nodes();
    let mut ids: HashMap<[(u32, u32); 4], usize> = HashMap::new();
    let mut positions: Vec<nalgebra::Vector3<f64>> = mesh.nodes().to_vec();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];

    let mut local = Vec::with_capacity(lattice.len());
    for (tet, verts) in mesh.tets().iter().enumerate() {
        let pts = mesh.tet_points(tet);
        local.clear();
        for k in &lattice {
            if let Some(v) = k.iter().position(|&x| x == r) {
                local.push(verts[v]);
                continue;
            }
            let mut key = [(u32::MAX, 0u32); 4];
            for (slot, (&vi, &ki)) in key.iter_mut().zip(verts.iter().zip(k)) {
                *slot = if ki == 0 { (u32::MAX, 0) } else { (vi as u32, ki) };
            }
            key.sort_unstable();
            let id = *ids.entry(key).or_insert_with(|| {
                let p = (0..4).fold(nalgebra::Vector3::zeros(), |acc, i| acc + pts[i] * k[i] as f64) / r as f64;
                positions.push(p);
                adj.push(Vec::new());
                positions.len() - 1
            });
            local.push(id);
        }
        let w = &metric[tet];
        for i in 0..local.len() {
            for j in i + 1..local.len() {
                let (a, b) = (local[i], local[j]);
                let cost = segment_time(w, &(positions[b] - positions[a]));
                adj[a].push((b, cost));
                adj[b].push((a, cost));
            }
        }
    }

    let mut dist = vec![f64::INFINITY; positions.len()];
    let mut heap = BinaryHeap::new();
    for (node, t0) in roots.boundary() {
        dist[node] = t0;
        heap.push(Entry(t0, node));
    }
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, c) in &adj[u] {
            let nd = d + c;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist.truncate(n_nodes);
    Ok(ActivationMap { times: dist })
}
