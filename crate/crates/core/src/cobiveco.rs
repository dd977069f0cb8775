//! Consistent biventricular coordinates and the LV-only predicates built on them.
//!
//! `tm` runs 0 (endocardium) to 1 (epicardium), `ab` 0 (apex) to 1 (base), `rt` is
//! periodic on [0, 1) and `tv` selects the ventricle (0 = LV, 1 = RV). On the RV side
//! the septal surface occupies `rt > 2/3`, which is why the LV region includes it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotational value where the septum begins on both ventricles (anterior junction).
pub const SEPTAL_RT: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobivecoCoord {
    pub tm: f64,
    pub ab: f64,
    pub rt: f64,
    pub tv: u8,
}

impl CobivecoCoord {
    pub fn new(tm: f64, ab: f64, rt: f64, tv: u8) -> Self {
        Self { tm, ab, rt, tv }
    }

    /// Checks the coordinate ranges. `rt` must already be wrapped into [0, 1).
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.tm)
            && (0.0..=1.0).contains(&self.ab)
            && (0.0..1.0).contains(&self.rt)
            && self.tv <= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "cobiveco coordinate out of range: tm={} ab={} rt={} tv={}",
                self.tm, self.ab, self.rt, self.tv
            )))
        }
    }
}

/// LV region: `tv = 0`, or the RV-side half of the septum (`tv = 1 ∧ rt > 2/3`).
pub fn in_lv(c: &CobivecoCoord) -> bool {
    c.tv == 0 || (c.tv == 1 && c.rt > SEPTAL_RT)
}

/// Wraps any real into [0, 1).
pub fn wrap_rt(rt: f64) -> f64 {
    let w = rt.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Signed minimal circular difference `b - a` on the unit circle, in [-0.5, 0.5].
/// The antipodal case resolves to +0.5.
pub fn rt_delta(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AhaSegmentId(u8);

impl AhaSegmentId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=17).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::InvalidInput(format!("AHA segment id {id} not in 1..=17")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl std::fmt::Display for AhaSegmentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ring thresholds on `ab` and the `rt` anchor of the first sector in each ring.
///
/// Each ring is split into equal-width sectors (6/6/4) starting at `anchor`, which is
/// the anterior-septal junction. Going in increasing `rt` from the anchor the sectors
/// are anteroseptal, inferoseptal, inferior, inferolateral, anterolateral, anterior
/// (basal and mid rings) and septal, inferior, lateral, anterior (apical ring).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AhaConfig {
    pub apex_cap: f64,
    pub apical_upper: f64,
    pub mid_upper: f64,
    pub anchor: f64,
}

impl Default for AhaConfig {
    fn default() -> Self {
        Self {
            apex_cap: 0.1,
            apical_upper: 1.0 / 3.0,
            mid_upper: 2.0 / 3.0,
            anchor: SEPTAL_RT,
        }
    }
}

const BASAL: [u8; 6] = [2, 3, 4, 5, 6, 1];
const MID: [u8; 6] = [8, 9, 10, 11, 12, 7];
const APICAL: [u8; 4] = [14, 15, 16, 13];

impl AhaConfig {
    pub fn segment(&self, c: &CobivecoCoord) -> Result<AhaSegmentId> {
        if !in_lv(c) {
            return Err(Error::NotLv(format!("tv={} rt={}", c.tv, c.rt)));
        }
        let id = if c.ab <= self.apex_cap {
            17
        } else if c.ab <= self.apical_upper {
            APICAL[sector(c.rt, self.anchor, 4)]
        } else if c.ab <= self.mid_upper {
            MID[sector(c.rt, self.anchor, 6)]
        } else {
            BASAL[sector(c.rt, self.anchor, 6)]
        };
        Ok(AhaSegmentId(id))
    }
}

fn sector(rt: f64, anchor: f64, count: usize) -> usize {
    let offset = (rt - anchor).rem_euclid(1.0);
    ((offset * count as f64) as usize).min(count - 1)
}

/// AHA 17-segment id under the default ring/sector table.
pub fn aha_segment(c: &CobivecoCoord) -> Result<AhaSegmentId> {
    AhaConfig::default().segment(c)
}
