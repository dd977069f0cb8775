//! Infarct scenarios: ellipsoidal scar/border-zone labeling in Cobiveco space, the
//! 17-entry scenario catalogue and the per-element conduction-velocity field.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cobiveco::{in_lv, rt_delta, CobivecoCoord};
use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Ellipsoid in (tm, ab, rt) with a concentric border-zone shell scaled by `bz_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfarctSpec {
    pub tm0: f64,
    pub ab0: f64,
    pub rt0: f64,
    pub r_tm: f64,
    pub r_ab: f64,
    pub r_rt: f64,
    pub bz_scale: f64,
}

impl InfarctSpec {
    /// No infarct at all: every radius zero and no border zone.
    pub fn none() -> Self {
        Self {
            tm0: 0.0,
            ab0: 0.5,
            rt0: 0.0,
            r_tm: 0.0,
            r_ab: 0.0,
            r_rt: 0.0,
            bz_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let radii = [self.r_tm, self.r_ab, self.r_rt];
        if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidInput(format!("infarct radii must be >= 0, got {radii:?}")));
        }
        if !(self.bz_scale.is_finite() && self.bz_scale >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "border-zone scale must be >= 1, got {}",
                self.bz_scale
            )));
        }
        let center = CobivecoCoord::new(self.tm0, self.ab0, self.rt0, 0);
        center.validate()?;
        Ok(())
    }

    /// Left-hand side of the ellipsoid inequality, with every radius multiplied by
    /// `scale`. A zero radius contributes 0 at exact coordinate equality and +inf
    /// otherwise.
    pub fn level(&self, c: &CobivecoCoord, scale: f64) -> f64 {
        term(c.tm - self.tm0, self.r_tm * scale)
            + term(c.ab - self.ab0, self.r_ab * scale)
            + term(rt_delta(self.rt0, c.rt), self.r_rt * scale)
    }
}

fn term(d: f64, r: f64) -> f64 {
    if r > 0.0 {
        (d / r).powi(2)
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tissue {
    Healthy = 0,
    Scar = 1,
    BorderZone = 2,
}

impl Tissue {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Tissue::Healthy),
            1 => Some(Tissue::Scar),
            2 => Some(Tissue::BorderZone),
            _ => None,
        }
    }

    /// Severity for combining node labels into an element label.
    fn severity(self) -> u8 {
        match self {
            Tissue::Healthy => 0,
            Tissue::BorderZone => 1,
            Tissue::Scar => 2,
        }
    }
}

/// Per-node tissue class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TissueLabeling(pub Vec<Tissue>);

impl TissueLabeling {
    pub fn healthy(n: usize) -> Self {
        Self(vec![Tissue::Healthy; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, class: Tissue) -> usize {
        self.0.iter().filter(|t| **t == class).count()
    }

    /// Node indices carrying `class`.
    pub fn indices(&self, class: Tissue) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>, comment: &str) -> Result<()> {
        let mut s = String::with_capacity(self.len() * 2 + 64);
        for line in comment.lines() {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "label");
        for t in &self.0 {
            let _ = writeln!(s, "{}", t.code());
        }
        fs::write(path, s)?;
        Ok(())
    }

    /// Reads a per-node label column (`0` healthy, `1` scar, `2` border zone).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') || l == "label" {
                continue;
            }
            let code: u8 = l
                .parse()
                .map_err(|_| Error::format(path, i + 1, format!("bad label '{l}'")))?;
            out.push(
                Tissue::from_code(code).ok_or_else(|| Error::format(path, i + 1, format!("unknown label {code}")))?,
            );
        }
        Ok(Self(out))
    }
}

/// Labels every node: scar inside the ellipsoid, border zone inside the scaled
/// ellipsoid, healthy elsewhere. Only LV-region nodes can be scar or border zone.
pub fn label_tissue(mesh: &Mesh, infarct: &InfarctSpec) -> TissueLabeling {
    TissueLabeling(mesh.cobiveco().iter().map(|c| classify(c, infarct)).collect())
}

pub fn classify(c: &CobivecoCoord, infarct: &InfarctSpec) -> Tissue {
    if !in_lv(c) {
        return Tissue::Healthy;
    }
    if infarct.level(c, 1.0) <= 1.0 {
        Tissue::Scar
    } else if infarct.bz_scale > 1.0 && infarct.level(c, infarct.bz_scale) <= 1.0 {
        Tissue::BorderZone
    } else {
        Tissue::Healthy
    }
}

/// Conduction velocities in cm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub fiber: f64,
    pub sheet: f64,
    pub normal: f64,
    pub endo_dense: f64,
    pub endo_sparse: f64,
    pub scar_fraction: f64,
    pub bz_fraction: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            fiber: 65.0,
            sheet: 48.0,
            normal: 51.0,
            endo_dense: 150.0,
            endo_sparse: 100.0,
            scar_fraction: 0.10,
            bz_fraction: 0.50,
        }
    }
}

impl CvConfig {
    /// The reduced-velocity variant (5% scar, 25% border zone).
    pub fn slow(self) -> Self {
        Self {
            scar_fraction: 0.05,
            bz_fraction: 0.25,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let speeds = [self.fiber, self.sheet, self.normal, self.endo_dense, self.endo_sparse];
        if speeds.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(format!("conduction velocities must be positive: {speeds:?}")));
        }
        if !(self.scar_fraction > 0.0 && self.scar_fraction <= self.bz_fraction && self.bz_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < scar_fraction ({}) <= bz_fraction ({}) <= 1",
                self.scar_fraction, self.bz_fraction
            )));
        }
        Ok(())
    }
}

/// Conduction speeds along fiber, sheet and sheet-normal of one element, cm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speeds {
    pub fiber: f64,
    pub sheet: f64,
    pub normal: f64,
}

impl Speeds {
    pub fn isotropic(v: f64) -> Self {
        Self {
            fiber: v,
            sheet: v,
            normal: v,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self {
            fiber: self.fiber * k,
            sheet: self.sheet * k,
            normal: self.normal * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub infarct: InfarctSpec,
    pub cv: CvConfig,
}

/// Catalogue location: centre and radii in Cobiveco units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub ab0: f64,
    pub rt0: f64,
    pub r_ab: f64,
    pub r_rt: f64,
}

/// Catalogue parameters. Location centres follow the AHA segments they are named
/// after under the default rotational anchor (anterior wall around rt = 7/12, septum
/// around 5/6, inferior around 1/12, lateral around 1/3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogueConfig {
    pub locations: Vec<Location>,
    /// Location used for the size and velocity variants.
    pub lateral: String,
    pub r_tm_transmural: f64,
    pub r_tm_subendocardial: f64,
    pub bz_scale: f64,
}

impl Default for CatalogueConfig {
    fn default() -> Self {
        let loc = |name: &str, ab0, rt0, r_ab, r_rt| Location {
            name: name.into(),
            ab0,
            rt0,
            r_ab,
            r_rt,
        };
        Self {
            locations: vec![
                loc("septal", 0.5, 0.83, 0.28, 0.09),
                loc("apical", 0.15, 0.6, 0.2, 0.5),
                loc("extensive-anterior", 0.45, 0.58, 0.42, 0.14),
                loc("limited-anterior", 0.8, 0.58, 0.17, 0.07),
                loc("lateral", 0.55, 0.36, 0.3, 0.12),
                loc("inferior", 0.55, 0.07, 0.3, 0.08),
                loc("inferolateral", 0.55, 0.22, 0.3, 0.08),
            ],
            lateral: "lateral".into(),
            r_tm_transmural: 3.0,
            r_tm_subendocardial: 0.5,
            bz_scale: 1.5,
        }
    }
}

pub const TRANSMURAL: &str = "transmural";
pub const SUBENDOCARDIAL: &str = "subendocardial";

/// Builds the 17-scenario catalogue: every location at both transmural extents, a
/// small lateral infarct (halved `r_ab`, `r_rt`) at both extents, and the large
/// transmural lateral infarct with reduced scar/border-zone velocities. The slow-CV
/// entry is always last.
pub fn catalogue(cv_base: &CvConfig) -> Result<Vec<ScenarioSpec>> {
    catalogue_with(cv_base, &CatalogueConfig::default())
}

pub fn catalogue_with(cv_base: &CvConfig, cfg: &CatalogueConfig) -> Result<Vec<ScenarioSpec>> {
    cv_base.validate()?;
    let lateral = cfg
        .locations
        .iter()
        .find(|l| l.name == cfg.lateral)
        .ok_or_else(|| Error::InvalidInput(format!("lateral location '{}' not in catalogue", cfg.lateral)))?;
    let extents = [(TRANSMURAL, cfg.r_tm_transmural), (SUBENDOCARDIAL, cfg.r_tm_subendocardial)];
    let make = |name: String, l: &Location, r_tm: f64, r_ab: f64, r_rt: f64, cv: CvConfig| -> Result<ScenarioSpec> {
        let infarct = InfarctSpec {
            tm0: 0.0,
            ab0: l.ab0,
            rt0: l.rt0,
            r_tm,
            r_ab,
            r_rt,
            bz_scale: cfg.bz_scale,
        };
        infarct.validate()?;
        Ok(ScenarioSpec { name, infarct, cv })
    };

    let mut out = Vec::with_capacity(cfg.locations.len() * 2 + 3);
    for l in &cfg.locations {
        let suffix = if l.name == cfg.lateral { "-large" } else { "" };
        for (extent, r_tm) in extents {
            out.push(make(format!("{}{suffix}-{extent}", l.name), l, r_tm, l.r_ab, l.r_rt, *cv_base)?);
        }
    }
    for (extent, r_tm) in extents {
        out.push(make(
            format!("{}-small-{extent}", lateral.name),
            lateral,
            r_tm,
            lateral.r_ab / 2.0,
            lateral.r_rt / 2.0,
            *cv_base,
        )?);
    }
    out.push(make(
        format!("{}-large-{TRANSMURAL}-slow-cv", lateral.name),
        lateral,
        cfg.r_tm_transmural,
        lateral.r_ab,
        lateral.r_rt,
        cv_base.slow(),
    )?);
    for (i, s) in out.iter().enumerate() {
        if out[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::InvalidInput(format!("duplicate scenario name '{}'", s.name)));
        }
    }
    Ok(out)
}

/// Looks a scenario up by name; unknown names list the catalogue.
pub fn find_scenario<'a>(catalogue: &'a [ScenarioSpec], name: &str) -> Result<&'a ScenarioSpec> {
    catalogue.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownScenario {
        name: name.to_string(),
        known: catalogue.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", "),
    })
}

/// Endocardial-layer threshold on `tm`.
const ENDO_LAYER_TM: f64 = 0.05;

/// Elements with a face on the endocardium (all three face nodes tagged endocardial
/// with `tm <= 0.05`).
pub fn endocardial_layer(mesh: &Mesh) -> Vec<bool> {
    let on_endo: Vec<bool> = mesh
        .surface_tags()
        .iter()
        .zip(mesh.cobiveco())
        .map(|(t, c)| t.is_endo() && c.tm <= ENDO_LAYER_TM)
        .collect();
    mesh.tets()
        .iter()
        .map(|tet| tet.iter().filter(|&&v| on_endo[v]).count() >= 3)
        .collect()
}

/// Per-element speeds. Healthy elements get the myocardial speeds, with the fiber and
/// sheet-normal (tangential) speeds replaced by the dense/sparse endocardial values in
/// the endocardial layer. An element with any scar node runs at `scar_fraction` of the
/// myocardial speeds, otherwise any border-zone node gives `bz_fraction`.
pub fn conduction_field(mesh: &Mesh, labeling: &TissueLabeling, cv: &CvConfig) -> Result<Vec<Speeds>> {
    cv.validate()?;
    if labeling.len() != mesh.num_nodes() {
        return Err(Error::LengthMismatch {
            what: "labeling per node",
            expected: mesh.num_nodes(),
            got: labeling.len(),
        });
    }
    let base = Speeds {
        fiber: cv.fiber,
        sheet: cv.sheet,
        normal: cv.normal,
    };
    let endo = Speeds {
        fiber: cv.endo_dense,
        sheet: cv.sheet,
        normal: cv.endo_sparse,
    };
    let layer = endocardial_layer(mesh);
    Ok(mesh
        .tets()
        .iter()
        .zip(layer)
        .map(|(tet, in_layer)| {
            let worst = tet
                .iter()
                .map(|&v| labeling.0[v])
                .max_by_key(|t| t.severity())
                .unwrap_or(Tissue::Healthy);
            match worst {
                Tissue::Scar => base.scaled(cv.scar_fraction),
                Tissue::BorderZone => base.scaled(cv.bz_fraction),
                Tissue::Healthy if in_layer => endo,
                Tissue::Healthy => base,
            }
        })
        .collect())
}
