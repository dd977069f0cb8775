//! QRS comparison and abnormality screening: duration-penalised DTW, QRS duration,
//! rule-based detectors and the scenario-by-lead sensitivity table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::pseudo_ecg::{EcgRecord, Lead, N_LEADS};
use crate::scenario::{CvConfig, ScenarioSpec};

/// Minimal DTW alignment with absolute-difference ground cost over the full window.
/// Among alignments of minimal total cost the shortest is kept; returns the total
/// cost and the alignment length.
pub fn dtw_alignment(a: &[f64], b: &[f64]) -> Result<(f64, usize)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("DTW needs nonempty series".into()));
    }
    let m = b.len();
    let mut prev: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    let mut cur: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    for (i, &x) in a.iter().enumerate() {
        for j in 0..m {
            let d = (x - b[j]).abs();
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, u32::MAX);
                let mut consider = |c: (f64, u32)| {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = c;
                    }
                };
                if i > 0 {
                    consider(prev[j]);
                    if j > 0 {
                        consider(prev[j - 1]);
                    }
                }
                if j > 0 {
                    consider(cur[j - 1]);
                }
                best
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok((cost, len as usize))
}

/// Alignment cost normalised by alignment length.
pub fn dtw_normalized(a: &[f64], b: &[f64]) -> Result<f64> {
    let (cost, len) = dtw_alignment(a, b)?;
    Ok(cost / len as f64)
}

/// Relative duration mismatch `|da - db| / max(da, db)`; zero when both are zero.
pub fn duration_penalty(dur_a: f64, dur_b: f64) -> Result<f64> {
    if !(dur_a >= 0.0 && dur_b >= 0.0 && dur_a.is_finite() && dur_b.is_finite()) {
        return Err(Error::InvalidInput(format!("durations must be finite and >= 0 ({dur_a}, {dur_b})")));
    }
    let m = dur_a.max(dur_b);
    Ok(if m == 0.0 { 0.0 } else { (dur_a - dur_b).abs() / m })
}

/// Normalised DTW plus `gamma` times the relative QRS-duration mismatch.
pub fn dtw_distance(a: &[f64], dur_a: f64, b: &[f64], dur_b: f64, gamma: f64) -> Result<f64> {
    Ok(dtw_normalized(a, b)? + gamma * duration_penalty(dur_a, dur_b)?)
}

/// Per-lead duration-penalised DTW between two records.
pub fn record_dtw(a: &EcgRecord, b: &EcgRecord, gamma: f64) -> Result<[f64; N_LEADS]> {
    check_leads(a)?;
    check_leads(b)?;
    let da = qrs_duration(a)?;
    let db = qrs_duration(b)?;
    let pen = gamma * duration_penalty(da, db)?;
    let mut out = [0.0; N_LEADS];
    for (k, o) in out.iter_mut().enumerate() {
        *o = dtw_normalized(&a.leads[k], &b.leads[k])? + pen;
    }
    Ok(out)
}

fn check_leads(r: &EcgRecord) -> Result<()> {
    if r.leads.len() != N_LEADS {
        return Err(Error::LengthMismatch {
            what: "leads",
            expected: N_LEADS,
            got: r.leads.len(),
        });
    }
    Ok(())
}

/// QRS duration in ms from the window markers.
pub fn qrs_duration(rec: &EcgRecord) -> Result<f64> {
    if rec.is_zero() {
        return Err(Error::InvalidInput("record is identically zero; no QRS window".into()));
    }
    if rec.offset < rec.onset {
        return Err(Error::InvalidInput("QRS offset precedes onset".into()));
    }
    Ok((rec.offset - rec.onset) as f64 * rec.dt_effective)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbnormalityThresholds {
    /// Prolonged if longer than this multiple of the baseline duration...
    pub prolongation_ratio: f64,
    /// ...or longer than this many ms.
    pub prolongation_ms: f64,
    pub q_width_ms: f64,
    /// Q depth relative to the R amplitude of the same lead.
    pub q_depth_ratio: f64,
    /// Minimum swing (normalised amplitude) that counts as a deflection.
    pub deflection: f64,
    /// Fragmented when a lead has more direction reversals than this.
    pub fqrs_reversals: usize,
}

impl Default for AbnormalityThresholds {
    fn default() -> Self {
        Self {
            prolongation_ratio: 1.2,
            prolongation_ms: 120.0,
            q_width_ms: 40.0,
            q_depth_ratio: 0.25,
            deflection: 0.05,
            fqrs_reversals: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityFlags {
    pub prolongation: bool,
    pub duration_ms: f64,
    pub pathological_q: [bool; N_LEADS],
    pub prwp: bool,
    pub fqrs: [bool; N_LEADS],
}

/// Width (ms) and depth of an initial negative deflection, if the first deflection
/// beyond the noise level is negative.
pub fn initial_q(lead: &[f64], dt: f64, noise: f64) -> Option<(f64, f64)> {
    let start = lead.iter().position(|x| x.abs() > noise)?;
    if lead[start] > 0.0 {
        return None;
    }
    let from = lead[..start].iter().rposition(|&x| x >= 0.0).map_or(0, |k| k + 1);
    let to = lead[start..].iter().position(|&x| x >= 0.0).map_or(lead.len(), |k| start + k);
    let depth = lead[from..to].iter().fold(0.0f64, |m, x| m.max(-x));
    Some(((to - from) as f64 * dt, depth))
}

/// Peak positive amplitude.
pub fn r_amplitude(lead: &[f64]) -> f64 {
    lead.iter().fold(0.0f64, |m, &x| m.max(x))
}

/// Direction reversals whose swing exceeds `min_swing`.
pub fn reversals(lead: &[f64], min_swing: f64) -> usize {
    let Some(&first) = lead.first() else {
        return 0;
    };
    let mut extreme = first;
    let mut dir = 0i8;
    let mut count = 0;
    for &x in &lead[1..] {
        match dir {
            0 => {
                if x > first + min_swing {
                    dir = 1;
                    extreme = x;
                } else if x < first - min_swing {
                    dir = -1;
                    extreme = x;
                }
            }
            1 => {
                if x > extreme {
                    extreme = x;
                } else if x < extreme - min_swing {
                    count += 1;
                    dir = -1;
                    extreme = x;
                }
            }
            _ => {
                if x < extreme {
                    extreme = x;
                } else if x > extreme + min_swing {
                    count += 1;
                    dir = 1;
                    extreme = x;
                }
            }
        }
    }
    count
}

struct Criteria {
    q: [bool; N_LEADS],
    prwp: bool,
    fqrs: [bool; N_LEADS],
}

fn criteria(rec: &EcgRecord, th: &AbnormalityThresholds) -> Criteria {
    let mut q = [false; N_LEADS];
    let mut fqrs = [false; N_LEADS];
    for (k, lead) in rec.leads.iter().enumerate() {
        let r = r_amplitude(lead);
        q[k] = initial_q(lead, rec.dt_effective, th.deflection)
            .is_some_and(|(w, d)| w > th.q_width_ms || d > th.q_depth_ratio * r);
        fqrs[k] = reversals(lead, th.deflection) > th.fqrs_reversals;
    }
    let r = |l: Lead| r_amplitude(rec.lead(l));
    let v = [Lead::V1, Lead::V2, Lead::V3, Lead::V4].map(r);
    let prwp = v.windows(2).any(|w| w[1] < w[0]) || r(Lead::V6) > r(Lead::V5);
    Criteria { q, prwp, fqrs }
}

/// Flags criteria that hold for `rec` but not for `baseline`, so a record compared
/// with itself is never flagged.
pub fn detect_abnormalities(
    rec: &EcgRecord,
    baseline: &EcgRecord,
    th: &AbnormalityThresholds,
) -> Result<AbnormalityFlags> {
    check_leads(rec)?;
    check_leads(baseline)?;
    let d = qrs_duration(rec)?;
    let db = qrs_duration(baseline)?;
    let prolonged = |x: f64| x > db * th.prolongation_ratio || x > th.prolongation_ms;
    let c = criteria(rec, th);
    let cb = criteria(baseline, th);
    Ok(AbnormalityFlags {
        prolongation: prolonged(d) && d > db,
        duration_ms: d,
        pathological_q: std::array::from_fn(|k| c.q[k] && !cb.q[k]),
        prwp: c.prwp && !cb.prwp,
        fqrs: std::array::from_fn(|k| c.fqrs[k] && !cb.fqrs[k]),
    })
}

/// Per-scenario, per-lead dissimilarity to the infarct-free baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwTable {
    pub scenarios: Vec<String>,
    pub per_lead: Vec<[f64; N_LEADS]>,
    pub max: Vec<f64>,
    pub avg: Vec<f64>,
    /// Leads whose DTW lies above the scenario's median.
    pub representative: Vec<[bool; N_LEADS]>,
    pub durations_ms: Vec<f64>,
    pub baseline_duration_ms: f64,
}

impl DtwTable {
    pub fn from_rows(rows: Vec<(String, [f64; N_LEADS], f64)>, baseline_duration_ms: f64) -> Self {
        let mut t = DtwTable {
            scenarios: Vec::new(),
            per_lead: Vec::new(),
            max: Vec::new(),
            avg: Vec::new(),
            representative: Vec::new(),
            durations_ms: Vec::new(),
            baseline_duration_ms,
        };
        for (name, lead, dur) in rows {
            let max = lead.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let avg = lead.iter().sum::<f64>() / N_LEADS as f64;
            let mut sorted = lead;
            sorted.sort_by(f64::total_cmp);
            let median = (sorted[N_LEADS / 2 - 1] + sorted[N_LEADS / 2]) / 2.0;
            t.scenarios.push(name);
            t.per_lead.push(lead);
            t.max.push(max);
            t.avg.push(avg);
            t.representative.push(lead.map(|x| x > median));
            t.durations_ms.push(dur);
        }
        t
    }

    pub fn row(&self, name: &str) -> Option<usize> {
        self.scenarios.iter().position(|s| s == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("scenario");
        for l in Lead::ALL {
            let _ = write!(s, ",{}", l.name());
        }
        s.push_str(",dtw_max,dtw_avg,qrs_ms,representative\n");
        for i in 0..self.scenarios.len() {
            let _ = write!(s, "{}", self.scenarios[i]);
            for v in &self.per_lead[i] {
                let _ = write!(s, ",{v}");
            }
            let rep: Vec<&str> = Lead::ALL
                .iter()
                .zip(self.representative[i])
                .filter(|(_, r)| *r)
                .map(|(l, _)| l.name())
                .collect();
            let _ = writeln!(s, ",{},{},{},{}", self.max[i], self.avg[i], self.durations_ms[i], rep.join(" "));
        }
        s
    }
}

/// Simulates the baseline and every scenario (in parallel) and tabulates the
/// per-lead DTW of each scenario against the baseline.
pub fn sensitivity_sweep(
    model: &ForwardModel<'_>,
    catalogue: &[ScenarioSpec],
    baseline_cv: &CvConfig,
    gamma: f64,
) -> Result<(DtwTable, Vec<EcgRecord>, EcgRecord)> {
    let baseline = model.baseline(baseline_cv)?.record.with_name("baseline");
    let records: Vec<EcgRecord> = catalogue
        .par_iter()
        .map(|s| model.simulate(&s.infarct, &s.cv).map(|o| o.record.with_name(s.name.clone())))
        .collect::<Result<_>>()?;
    let base_dur = qrs_duration(&baseline)?;
    let rows = catalogue
        .iter()
        .zip(&records)
        .map(|(s, r)| Ok((s.name.clone(), record_dtw(r, &baseline, gamma)?, qrs_duration(r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((DtwTable::from_rows(rows, base_dur), records, baseline))
}
