//! Pseudo-ECG: electrode placement, a depolarisation-only transmembrane template, the
//! volume integral of `-grad Vm . grad(1/r)` over the tets, and the 8-lead QRS record.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::eikonal::ActivationMap;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Electrode {
    LA,
    RA,
    LL,
    RL,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Electrode {
    pub const ALL: [Electrode; 10] = [
        Electrode::LA,
        Electrode::RA,
        Electrode::LL,
        Electrode::RL,
        Electrode::V1,
        Electrode::V2,
        Electrode::V3,
        Electrode::V4,
        Electrode::V5,
        Electrode::V6,
    ];
    pub const PRECORDIAL: [Electrode; 6] = [
        Electrode::V1,
        Electrode::V2,
        Electrode::V3,
        Electrode::V4,
        Electrode::V5,
        Electrode::V6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Electrode::LA => "LA",
            Electrode::RA => "RA",
            Electrode::LL => "LL",
            Electrode::RL => "RL",
            Electrode::V1 => "V1",
            Electrode::V2 => "V2",
            Electrode::V3 => "V3",
            Electrode::V4 => "V4",
            Electrode::V5 => "V5",
            Electrode::V6 => "V6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Electrode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Electrode::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown electrode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lead {
    I,
    II,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

pub const N_LEADS: usize = 8;

impl Lead {
    pub const ALL: [Lead; N_LEADS] = [Lead::I, Lead::II, Lead::V1, Lead::V2, Lead::V3, Lead::V4, Lead::V5, Lead::V6];

    pub fn name(self) -> &'static str {
        match self {
            Lead::I => "I",
            Lead::II => "II",
            Lead::V1 => "V1",
            Lead::V2 => "V2",
            Lead::V3 => "V3",
            Lead::V4 => "V4",
            Lead::V5 => "V5",
            Lead::V6 => "V6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Electrode positions in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSet {
    positions: [[f64; 3]; 10],
}

impl ElectrodeSet {
    pub fn new(positions: &[(Electrode, Point)]) -> Result<Self> {
        let mut out = [[f64::NAN; 3]; 10];
        for (e, p) in positions {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("electrode {} has non-finite position", e.name())));
            }
            out[e.index()] = [p.x, p.y, p.z];
        }
        if let Some(missing) = Electrode::ALL.iter().find(|e| out[e.index()][0].is_nan()) {
            return Err(Error::InvalidInput(format!("electrode {} has no position", missing.name())));
        }
        Ok(Self { positions: out })
    }

    pub fn position(&self, e: Electrode) -> Point {
        let p = self.positions[e.index()];
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn with_position(mut self, e: Electrode, p: Point) -> Self {
        self.positions[e.index()] = [p.x, p.y, p.z];
        self
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            for (x, o) in p.iter_mut().zip(offset.iter()) {
                *x += o;
            }
        }
        out
    }
}

/// Angles (degrees, from anterior towards the left side) of V1..V6 around the
/// virtual torso.
const PRECORDIAL_DEG: [f64; 6] = [-15.0, 15.0, 37.0, 60.0, 80.0, 100.0];
const TORSO_SCALE: f64 = 3.0;

/// Electrodes on an elliptic cylinder around the heart whose radii are three times
/// the bounding-box half-extents. Precordial leads sit at mid height; arm electrodes
/// three half-heights above, leg electrodes three half-heights below.
pub fn default_electrodes(mesh: &Mesh) -> ElectrodeSet {
    let (lo, hi) = mesh.bbox();
    let c = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let (rx, ry, dz) = (TORSO_SCALE * half.x, TORSO_SCALE * half.y, TORSO_SCALE * half.z);
    let mut pos = vec![
        (Electrode::RA, c + Vector3::new(-rx, 0.0, dz)),
        (Electrode::LA, c + Vector3::new(rx, 0.0, dz)),
        (Electrode::LL, c + Vector3::new(rx / 2.0, 0.0, -dz)),
        (Electrode::RL, c + Vector3::new(-rx / 2.0, 0.0, -dz)),
    ];
    for (e, deg) in Electrode::PRECORDIAL.iter().zip(PRECORDIAL_DEG) {
        let a = deg.to_radians();
        pos.push((*e, c + Vector3::new(rx * a.sin(), ry * a.cos(), 0.0)));
    }
    ElectrodeSet::new(&pos).expect("all electrodes placed")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcgConfig {
    /// Simulation time step, ms.
    pub dt: f64,
    /// Duration of the linear depolarisation ramp, ms.
    pub upstroke: f64,
    pub rest_mv: f64,
    pub plateau_mv: f64,
    /// Lumped constant `a^2 sigma_i / (4 sigma_e)`; scales raw potentials only.
    pub lumped: f64,
    /// Output samples per lead.
    pub l_qrs: usize,
    /// Fraction of the global peak that delimits the QRS window.
    pub crop_threshold: f64,
}

impl Default for EcgConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            upstroke: 2.0,
            rest_mv: -85.0,
            plateau_mv: 25.0,
            lumped: 1.0,
            l_qrs: 512,
            crop_threshold: 0.02,
        }
    }
}

impl EcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.upstroke > 0.0 && self.l_qrs >= 2) {
            return Err(Error::InvalidInput(format!(
                "need dt > 0, upstroke > 0, l_qrs >= 2 (got {}, {}, {})",
                self.dt, self.upstroke, self.l_qrs
            )));
        }
        if !(0.0..1.0).contains(&self.crop_threshold) || !self.lumped.is_finite() || self.lumped == 0.0 {
            return Err(Error::InvalidInput("crop threshold must lie in [0, 1) and lumped constant be nonzero".into()));
        }
        Ok(())
    }

    /// Transmembrane potential of a cell activated at `tau` observed at time `t`.
    #[inline]
    pub fn vm(&self, tau: f64, t: f64) -> f64 {
        let s = ((t - tau) / self.upstroke).clamp(0.0, 1.0);
        self.rest_mv + (self.plateau_mv - self.rest_mv) * s
    }
}

/// Per-node potentials at time `t`; unreachable nodes stay at rest.
pub fn transmembrane_trace(atm: &ActivationMap, t: f64, cfg: &EcgConfig) -> Vec<f64> {
    atm.times.iter().map(|&tau| cfg.vm(tau, t)).collect()
}

/// Gradients of the four linear shape functions of a tet.
pub fn shape_gradients(p: &[Point; 4]) -> Option<[Vector3<f64>; 4]> {
    let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let jinv_t = j.try_inverse()?.transpose();
    let g1 = jinv_t.column(0).into_owned();
    let g2 = jinv_t.column(1).into_owned();
    let g3 = jinv_t.column(2).into_owned();
    Some([-(g1 + g2 + g3), g1, g2, g3])
}

/// `grad(1/r)` at `x` for a source point `e`: `(e - x) / |e - x|^3`.
#[inline]
fn grad_inv_r(x: &Point, e: &Point) -> Vector3<f64> {
    let d = e - x;
    let r = d.norm();
    d / (r * r * r)
}

/// Node-by-electrode weights `K` such that the potential at electrode `e` is
/// `-sum_n Vm_n K[n][e]` (one-point quadrature at the tet centroid).
#[derive(Debug, Clone)]
pub struct LeadField {
    weights: Vec<[f64; 10]>,
}

impl LeadField {
    /// Fails when an electrode comes closer than one mean edge length to a tet centroid.
    pub fn new(mesh: &Mesh, electrodes: &ElectrodeSet) -> Result<Self> {
        let floor = mesh.mean_edge_length();
        let pos: Vec<Point> = Electrode::ALL.iter().map(|&e| electrodes.position(e)).collect();
        let mut weights = vec![[0.0; 10]; mesh.num_nodes()];
        for (t, tet) in mesh.tets().iter().enumerate() {
            let pts = mesh.tet_points(t);
            let grads = shape_gradients(&pts)
                .ok_or_else(|| Error::DegenerateGeometry(format!("tet {t} has a singular Jacobian")))?;
            let vol = mesh.tet_volume(t);
            let c = mesh.tet_centroid(t);
            for (ei, e) in pos.iter().enumerate() {
                if (e - c).norm() < floor {
                    return Err(Error::DegenerateGeometry(format!(
                        "electrode {} lies within {floor:.3} mm of tet {t}",
                        Electrode::ALL[ei].name()
                    )));
                }
                let gr = grad_inv_r(&c, e) * vol;
                for (k, &node) in tet.iter().enumerate() {
                    weights[node][ei] += grads[k].dot(&gr);
                }
            }
        }
        Ok(Self { weights })
    }

    /// Unscaled electrode potentials for one Vm snapshot. Vm is taken relative to the
    /// first node, so a uniform field gives exact zeros.
    pub fn potentials(&self, vm: &[f64]) -> [f64; 10] {
        let mut out = [0.0; 10];
        let Some(&reference) = vm.first() else {
            return out;
        };
        for (v, w) in vm.iter().zip(&self.weights) {
            let dv = v - reference;
            if dv == 0.0 {
                continue;
            }
            for (o, wi) in out.iter_mut().zip(w) {
                *o -= dv * wi;
            }
        }
        out.map(|x| x + 0.0)
    }
}

/// Electrode time series sampled every `cfg.dt` starting at the earliest activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeSignals {
    pub dt: f64,
    /// `series[e][k]`, indexed by [`Electrode::index`].
    pub series: Vec<Vec<f64>>,
}

/// Raw potentials (scaled by the lumped constant) at every electrode.
pub fn electrode_potentials(field: &LeadField, atm: &ActivationMap, cfg: &EcgConfig) -> Result<ElectrodeSignals> {
    let mut s = unscaled_potentials(field, atm, cfg)?;
    for series in &mut s.series {
        for x in series.iter_mut() {
            *x *= cfg.lumped;
        }
    }
    Ok(s)
}

fn unscaled_potentials(field: &LeadField, atm: &ActivationMap, cfg: &EcgConfig) -> Result<ElectrodeSignals> {
    cfg.validate()?;
    if atm.len() != field.weights.len() {
        return Err(Error::LengthMismatch {
            what: "activation times per node",
            expected: field.weights.len(),
            got: atm.len(),
        });
    }
    let (Some(t0), Some(t1)) = (atm.min_finite(), atm.max_finite()) else {
        return Err(Error::InvalidInput("activation map has no finite times".into()));
    };
    let rel = ActivationMap::new(atm.times.iter().map(|t| t - t0).collect());
    let steps = ((t1 - t0 + cfg.upstroke) / cfg.dt).ceil() as usize + 1;
    let mut series = vec![Vec::with_capacity(steps + 1); 10];
    let mut vm = vec![0.0; rel.len()];
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        for (v, &tau) in vm.iter_mut().zip(&rel.times) {
            *v = cfg.vm(tau, t);
        }
        let p = field.potentials(&vm);
        for (s, x) in series.iter_mut().zip(p) {
            s.push(x);
        }
    }
    Ok(ElectrodeSignals { dt: cfg.dt, series })
}

/// Limb leads and precordial leads against the Wilson central terminal. The input is
/// keyed by electrode; RL is ignored.
pub fn derive_leads(potentials: &[(Electrode, Vec<f64>)]) -> Result<[Vec<f64>; N_LEADS]> {
    let get = |e: Electrode| -> Result<&Vec<f64>> {
        potentials
            .iter()
            .find(|(k, _)| *k == e)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::InvalidInput(format!("missing electrode {}", e.name())))
    };
    let la = get(Electrode::LA)?;
    let len = la.len();
    for (_, v) in potentials {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                what: "electrode series length",
                expected: len,
                got: v.len(),
            });
        }
    }
    let (ra, ll) = (get(Electrode::RA)?, get(Electrode::LL)?);
    let wct: Vec<f64> = (0..len).map(|k| (la[k] + ra[k] + ll[k]) / 3.0).collect();
    let mut out: [Vec<f64>; N_LEADS] = Default::default();
    out[Lead::I.index()] = (0..len).map(|k| la[k] - ra[k]).collect();
    out[Lead::II.index()] = (0..len).map(|k| ll[k] - ra[k]).collect();
    for (lead, e) in Lead::ALL[2..].iter().zip(Electrode::PRECORDIAL) {
        let v = get(e)?;
        out[lead.index()] = (0..len).map(|k| v[k] - wct[k]).collect();
    }
    Ok(out)
}

fn leads_from_signals(s: &ElectrodeSignals) -> Result<[Vec<f64>; N_LEADS]> {
    let keyed: Vec<(Electrode, Vec<f64>)> =
        Electrode::ALL.iter().map(|&e| (e, s.series[e.index()].clone())).collect();
    derive_leads(&keyed)
}

/// Eight-lead QRS: cropped to the window where any lead exceeds the crop threshold,
/// resampled to `l_qrs` samples and scaled to unit peak amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub leads: Vec<Vec<f64>>,
    /// ms per output sample.
    pub dt_effective: f64,
    /// First and last sample of the QRS window in the output.
    pub onset: usize,
    pub offset: usize,
    pub name: String,
}

impl EcgRecord {
    /// Builds a record from uniformly sampled raw leads.
    pub fn from_raw(raw: &[Vec<f64>], dt: f64, l_qrs: usize, threshold: f64) -> Result<Self> {
        if raw.len() != N_LEADS {
            return Err(Error::LengthMismatch {
                what: "leads",
                expected: N_LEADS,
                got: raw.len(),
            });
        }
        let len = raw[0].len();
        if len == 0 || raw.iter().any(|l| l.len() != len) {
            return Err(Error::InvalidInput("raw leads must be nonempty and of equal length".into()));
        }
        if l_qrs < 2 {
            return Err(Error::InvalidInput("l_qrs must be at least 2".into()));
        }
        let peak = raw.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if !peak.is_finite() {
            return Err(Error::Numerical("non-finite lead potential".into()));
        }
        if peak == 0.0 {
            return Ok(Self {
                leads: vec![vec![0.0; l_qrs]; N_LEADS],
                dt_effective: 0.0,
                onset: 0,
                offset: 0,
                name: String::new(),
            });
        }
        let above = |k: usize| raw.iter().any(|l| l[k].abs() > threshold * peak);
        let first = (0..len).find(|&k| above(k)).unwrap_or(0);
        let last = (0..len).rev().find(|&k| above(k)).unwrap_or(len - 1);
        let span = (last - first) as f64;
        let mut leads: Vec<Vec<f64>> = raw
            .iter()
            .map(|l| {
                (0..l_qrs)
                    .map(|i| {
                        let x = first as f64 + span * i as f64 / (l_qrs - 1) as f64;
                        let k = (x.floor() as usize).min(last);
                        let frac = x - k as f64;
                        if frac == 0.0 || k == last {
                            l[k]
                        } else {
                            l[k] * (1.0 - frac) + l[k + 1] * frac
                        }
                    })
                    .collect()
            })
            .collect();
        let out_peak = leads.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        for l in &mut leads {
            for x in l.iter_mut() {
                *x = *x / out_peak + 0.0;
            }
        }
        Ok(Self {
            leads,
            dt_effective: span * dt / (l_qrs - 1) as f64,
            onset: 0,
            offset: l_qrs - 1,
            name: String::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn lead(&self, lead: Lead) -> &[f64] {
        &self.leads[lead.index()]
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_zero(&self) -> bool {
        self.leads.iter().flatten().all(|x| *x == 0.0)
    }

    /// CSV with a `sample,I,II,V1..V6` header preceded by one metadata comment line.
    pub fn to_csv(&self, extra: &[(&str, String)]) -> String {
        let mut s = String::with_capacity(self.len() * N_LEADS * 12);
        let _ = write!(
            s,
            "# dt_effective={} onset={} offset={} scenario={}",
            self.dt_effective, self.onset, self.offset, self.name
        );
        for (k, v) in extra {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
        s.push_str("sample");
        for l in Lead::ALL {
            s.push(',');
            s.push_str(l.name());
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{i}");
            for l in &self.leads {
                let _ = write!(s, ",{}", l[i]);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, extra: &[(&str, String)]) -> Result<()> {
        fs::write(path, self.to_csv(extra))?;
        Ok(())
    }

    /// Reads a record and the metadata pairs of its comment line.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Self, Vec<(String, String)>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut meta = Vec::new();
        let mut leads = vec![Vec::new(); N_LEADS];
        let mut header_seen = false;
        for (ln, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        meta.push((k.to_string(), v.to_string()));
                    }
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = l.split(',').map(str::trim).collect();
                let expected: Vec<&str> = std::iter::once("sample").chain(Lead::ALL.iter().map(|l| l.name())).collect();
                if cols != expected {
                    return Err(Error::format(path, ln + 1, format!("expected header {}", expected.join(","))));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != N_LEADS + 1 {
                return Err(Error::format(path, ln + 1, format!("expected {} columns", N_LEADS + 1)));
            }
            for (lead, c) in leads.iter_mut().zip(&cols[1..]) {
                lead.push(
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::format(path, ln + 1, format!("bad value '{c}'")))?,
                );
            }
        }
        if !header_seen || leads[0].is_empty() {
            return Err(Error::format(path, 1, "no samples"));
        }
        let find = |k: &str| meta.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone());
        let num = |k: &str| -> Result<f64> {
            find(k)
                .ok_or_else(|| Error::format(path, 1, format!("missing metadata '{k}'")))?
                .parse()
                .map_err(|_| Error::format(path, 1, format!("bad metadata '{k}'")))
        };
        let rec = Self {
            dt_effective: num("dt_effective")?,
            onset: num("onset")? as usize,
            offset: num("offset")? as usize,
            name: find("scenario").unwrap_or_default(),
            leads,
        };
        Ok((rec, meta))
    }
}

/// Pseudo-ECG of one activation map.
pub fn simulate_qrs(mesh: &Mesh, atm: &ActivationMap, electrodes: &ElectrodeSet, cfg: &EcgConfig) -> Result<EcgRecord> {
    let field = LeadField::new(mesh, electrodes)?;
    simulate_with_field(&field, atm, cfg)
}

/// Same as [`simulate_qrs`] with a precomputed lead field, for repeated simulations
/// on one mesh.
pub fn simulate_with_field(field: &LeadField, atm: &ActivationMap, cfg: &EcgConfig) -> Result<EcgRecord> {
    let signals = unscaled_potentials(field, atm, cfg)?;
    let leads = leads_from_signals(&signals)?;
    EcgRecord::from_raw(&leads, cfg.dt, cfg.l_qrs, cfg.crop_threshold)
}

/// Raw (uncropped, unnormalised) leads scaled by the lumped constant.
pub fn raw_leads(field: &LeadField, atm: &ActivationMap, cfg: &EcgConfig) -> Result<[Vec<f64>; N_LEADS]> {
    leads_from_signals(&electrode_potentials(field, atm, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cobiveco::CobivecoCoord;
    use crate::geometry::{build_phantom, build_slab, Frame, PhantomSpec, SlabSpec, SurfaceTag};

    #[test]
    fn template_shape() {
        let cfg = EcgConfig::default();
        let atm = ActivationMap::new(vec![10.0, 20.0]);
        assert_eq!(transmembrane_trace(&atm, 5.0, &cfg), vec![-85.0, -85.0]);
        assert_eq!(transmembrane_trace(&atm, 30.0, &cfg), vec![25.0, 25.0]);
        assert_eq!(transmembrane_trace(&atm, 11.0, &cfg)[0], -30.0);
    }

    #[test]
    fn lead_arithmetic() {
        let mut p: Vec<(Electrode, Vec<f64>)> = Electrode::ALL.iter().map(|&e| (e, vec![0.0; 4])).collect();
        p[Electrode::LA.index()].1 = vec![1.0; 4];
        p[Electrode::RA.index()].1 = vec![-1.0; 4];
        let leads = derive_leads(&p).unwrap();
        assert_eq!(leads[Lead::I.index()], vec![2.0; 4]);
        assert_eq!(leads[Lead::II.index()], vec![1.0; 4]);

        let same: Vec<(Electrode, Vec<f64>)> = Electrode::ALL.iter().map(|&e| (e, vec![3.5; 4])).collect();
        assert!(derive_leads(&same).unwrap().iter().flatten().all(|x| *x == 0.0));

        // keyed by name, not by position in the input
        let mut shuffled = p.clone();
        shuffled.reverse();
        assert_eq!(derive_leads(&shuffled).unwrap(), leads);

        let mut bad = p.clone();
        bad[3].1.pop();
        assert!(derive_leads(&bad).is_err());
    }

    #[test]
    fn shape_gradients_partition_unity() {
        let p = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(0.5, 0.5, 1.0),
        ];
        let g = shape_gradients(&p).unwrap();
        let sum = g.iter().fold(Vector3::zeros(), |a, b| a + b);
        assert!(sum.norm() < 1e-12);
        // grad N_i . (x_j - x_0) = delta_ij - delta_i0
        for (i, gi) in g.iter().enumerate() {
            for j in 1..4 {
                let expected = if i == j { 1.0 } else if i == 0 { -1.0 } else { 0.0 };
                assert!((gi.dot(&(p[j] - p[0])) - expected).abs() < 1e-12);
            }
        }
    }

    fn phantom() -> Mesh {
        build_phantom(&PhantomSpec::default(), 0).unwrap()
    }

    #[test]
    fn uniform_activation_gives_zero_leads() {
        let mesh = phantom();
        let atm = ActivationMap::new(vec![3.0; mesh.num_nodes()]);
        let rec = simulate_qrs(&mesh, &atm, &default_electrodes(&mesh), &EcgConfig::default()).unwrap();
        assert!(rec.is_zero());
        assert_eq!(rec.len(), 512);
    }

    #[test]
    fn electrodes_clear_the_heart_and_translate() {
        let mesh = phantom();
        let el = default_electrodes(&mesh);
        let (lo, hi) = mesh.bbox();
        for e in Electrode::ALL {
            let p = el.position(e);
            let inside = (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
            assert!(!inside, "{} inside the heart bounding box", e.name());
        }
        assert_eq!(el, default_electrodes(&mesh));
        let off = Vector3::new(50.0, 50.0, 50.0);
        let moved = default_electrodes(&mesh.translated(&off));
        for e in Electrode::ALL {
            assert!((moved.position(e) - el.position(e) - off).norm() < 1e-9);
        }
    }

    #[test]
    fn electrode_inside_is_rejected() {
        let mesh = phantom();
        let c = mesh.tet_centroid(0);
        let el = default_electrodes(&mesh).with_position(Electrode::V3, c);
        assert!(matches!(LeadField::new(&mesh, &el), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn normalised_peak_is_one() {
        let mesh = build_slab(&SlabSpec::default()).unwrap();
        let atm = ActivationMap::new(mesh.nodes().iter().map(|p| p.x / 0.6).collect());
        let el = default_electrodes(&mesh);
        let rec = simulate_qrs(&mesh, &atm, &el, &EcgConfig::default()).unwrap();
        let peak = rec.leads.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        assert_eq!(peak, 1.0);
        assert_eq!(rec.leads.len(), 8);
        assert!(rec.leads.iter().all(|l| l.len() == 512));
    }

    #[test]
    fn lumped_constant_and_time_shift_do_not_change_record() {
        let mesh = build_slab(&SlabSpec::default()).unwrap();
        let atm = ActivationMap::new(mesh.nodes().iter().map(|p| (p.x + 0.5 * p.y) / 0.6).collect());
        let el = default_electrodes(&mesh);
        let cfg = EcgConfig::default();
        let base = simulate_qrs(&mesh, &atm, &el, &cfg).unwrap();
        let scaled = simulate_qrs(&mesh, &atm, &el, &EcgConfig { lumped: 7.5, ..cfg }).unwrap();
        assert_eq!(base, scaled);
        let field = LeadField::new(&mesh, &el).unwrap();
        let r1 = raw_leads(&field, &atm, &cfg).unwrap();
        let r2 = raw_leads(&field, &atm, &EcgConfig { lumped: 7.5, ..cfg }).unwrap();
        for (a, b) in r1.iter().flatten().zip(r2.iter().flatten()) {
            assert!((a * 7.5 - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let shifted = ActivationMap::new(atm.times.iter().map(|t| t + 37.0).collect());
        let rec = simulate_qrs(&mesh, &shifted, &el, &cfg).unwrap();
        assert!((rec.dt_effective - base.dt_effective).abs() < 1e-12);
        for (a, b) in rec.leads.iter().flatten().zip(base.leads.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_tet_polarity_matches_direct_quadrature() {
        // two tets sharing the face (1,2,3); activation sweeps along +x or -x
        let nodes = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(4.0, 0.0, 0.0),
            Vector3::new(4.0, 4.0, 0.0),
            Vector3::new(4.0, 0.0, 4.0),
            Vector3::new(8.0, 2.0, 2.0),
        ];
        let tets = vec![[0, 1, 2, 3], [4, 1, 3, 2]];
        let mesh = Mesh::new(
            nodes,
            tets,
            vec![Frame::axis_aligned(); 2],
            vec![CobivecoCoord::new(0.0, 0.0, 0.0, 0); 5],
            vec![SurfaceTag::LvEndo; 5],
        )
        .unwrap();
        let target = Vector3::new(100.0, 2.0, 2.0);
        let field = LeadField::new(&mesh, &default_electrodes(&mesh).with_position(Electrode::V4, target)).unwrap();
        let forward = ActivationMap::new(mesh.nodes().iter().map(|p| p.x).collect());
        let backward = ActivationMap::new(mesh.nodes().iter().map(|p| 8.0 - p.x).collect());
        let cfg = EcgConfig { dt: 0.25, upstroke: 1.0, ..EcgConfig::default() };

        let direct = |atm: &ActivationMap, t: f64| -> f64 {
            // phi = -sum_tets vol * grad Vm . grad(1/r) at the centroid
            let vm = transmembrane_trace(atm, t, &cfg);
            (0..mesh.num_tets())
                .map(|k| {
                    let pts = mesh.tet_points(k);
                    let g = shape_gradients(&pts).unwrap();
                    let grad_vm = mesh.tets()[k].iter().zip(&g).fold(Vector3::zeros(), |a, (&n, gn)| a + gn * vm[n]);
                    let c = mesh.tet_centroid(k);
                    let d = target - c;
                    -mesh.tet_volume(k) * grad_vm.dot(&(d / d.norm().powi(3)))
                })
                .sum()
        };
        let dominant = |atm: &ActivationMap| -> f64 {
            let s = electrode_potentials(&field, atm, &cfg).unwrap();
            let v4 = &s.series[Electrode::V4.index()];
            for (k, x) in v4.iter().enumerate() {
                let t = k as f64 * cfg.dt;
                let d = direct(atm, t);
                assert!((x - d).abs() <= 1e-9 * d.abs().max(1e-6), "{x} vs {d}");
            }
            *v4.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap()
        };
        let towards = dominant(&forward);
        let away = dominant(&backward);
        assert!(towards > 0.0 && away < 0.0, "{towards} {away}");
    }

    #[test]
    fn csv_round_trip() {
        let mesh = build_slab(&SlabSpec::default()).unwrap();
        let atm = ActivationMap::new(mesh.nodes().iter().map(|p| p.z / 0.5).collect());
        let rec = simulate_qrs(&mesh, &atm, &default_electrodes(&mesh), &EcgConfig::default())
            .unwrap()
            .with_name("demo");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qrs.csv");
        rec.write_csv(&p, &[("config_hash", "abc".into())]).unwrap();
        let (back, meta) = EcgRecord::read_csv(&p).unwrap();
        assert_eq!(back, rec);
        assert!(meta.iter().any(|(k, v)| k == "config_hash" && v == "abc"));
    }
}
