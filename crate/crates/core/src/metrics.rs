//! Segmentation, reconstruction and localisation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cobiveco::{aha_segment, in_lv, AhaSegmentId, SEPTAL_RT};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};
use crate::pseudo_ecg::{EcgRecord, N_LEADS};
use crate::qrs_analysis::{dtw_distance, qrs_duration};
use crate::scenario::{Tissue, TissueLabeling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub pc: f64,
    pub qrs: f64,
    pub kl: f64,
    pub dice: f64,
    pub compact: f64,
    pub size: f64,
    pub spa: f64,
    pub vae: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            pc: 1.0,
            qrs: 1.0,
            kl: 0.01,
            dice: 1.0,
            compact: 1.0,
            size: 1.0,
            spa: 1.0,
            vae: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.pc,
            self.qrs,
            self.kl,
            self.dice,
            self.compact,
            self.size,
            self.spa,
            self.vae,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            alpha: self.alpha * k,
            pc: self.pc * k,
            qrs: self.qrs * k,
            kl: self.kl * k,
            dice: self.dice * k,
            compact: self.compact * k,
            size: self.size * k,
            spa: self.spa * k,
            vae: self.vae * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AhaLocWeights {
    pub center_id: f64,
    pub ids: f64,
    pub center_distance: f64,
}

impl Default for AhaLocWeights {
    fn default() -> Self {
        Self {
            center_id: 0.5,
            ids: 0.2,
            center_distance: 0.3,
        }
    }
}

impl AhaLocWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.center_id, self.ids, self.center_distance];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("AHA-loc weights must be >= 0 and sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// Weighted score from the centre-match indicator, segment-set IoU and
    /// normalised centre distance.
    pub fn combine(&self, center_match: bool, iou: f64, center_distance: f64) -> f64 {
        let delta = if center_match { 1.0 } else { 0.0 };
        self.center_id * delta + self.ids * iou + self.center_distance * (1.0 - center_distance)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { what, expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Set overlap of the nodes carrying `class`. Two empty sets agree perfectly; an
/// undefined ratio with a nonempty other side is 0.
pub fn dice_precision_recall(pred: &TissueLabeling, gd: &TissueLabeling, class: Tissue) -> Result<Overlap> {
    check_len("labeling", gd.len(), pred.len())?;
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.0.iter().zip(&gd.0) {
        let (p, g) = (*p == class, *g == class);
        tp += (p && g) as usize;
        np += p as usize;
        ng += g as usize;
    }
    if np == 0 && ng == 0 {
        return Ok(Overlap {
            dice: 1.0,
            precision: 1.0,
            recall: 1.0,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Overlap {
        dice: ratio(2 * tp, np + ng),
        precision: ratio(tp, np),
        recall: ratio(tp, ng),
    })
}

fn nearest_sq(p: &Point, set: &[Point]) -> f64 {
    set.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

/// Mean squared nearest-neighbour distance from A to B plus from B to A.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs nonempty point sets".into()));
    }
    let ab = a.iter().map(|p| nearest_sq(p, b)).sum::<f64>() / a.len() as f64;
    let ba = b.iter().map(|p| nearest_sq(p, a)).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Coarse and dense point clouds of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassClouds {
    pub coarse: Vec<Point>,
    pub dense: Vec<Point>,
}

/// Sum over classes of coarse chamfer plus `alpha` times dense chamfer.
pub fn reconstruction_loss_pc(input: &[ClassClouds], recon: &[ClassClouds], alpha: f64) -> Result<f64> {
    check_len("classes", input.len(), recon.len())?;
    let mut total = 0.0;
    for (i, r) in input.iter().zip(recon) {
        total += chamfer(&i.coarse, &r.coarse)? + alpha * chamfer(&i.dense, &r.dense)?;
    }
    Ok(total)
}

/// Mean over leads of per-sample MSE plus duration-penalised DTW (penalty weight 1).
pub fn reconstruction_loss_qrs(qrs: &EcgRecord, qrs_hat: &EcgRecord) -> Result<f64> {
    check_len("leads", N_LEADS, qrs.leads.len())?;
    check_len("leads", N_LEADS, qrs_hat.leads.len())?;
    let da = qrs_duration(qrs)?;
    let db = qrs_duration(qrs_hat)?;
    let mut total = 0.0;
    for (a, b) in qrs.leads.iter().zip(&qrs_hat.leads) {
        check_len("lead samples", a.len(), b.len())?;
        let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
        total += mse + dtw_distance(a, da, b, db, 1.0)?;
    }
    Ok(total / N_LEADS as f64)
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_std_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    check_len("sigma", mu.len(), sigma.len())?;
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {s}")));
        }
        total += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    }
    Ok(total)
}

/// Column order of the class probabilities: healthy, scar, border zone.
pub const SEG_CLASSES: [Tissue; 3] = [Tissue::Healthy, Tissue::Scar, Tissue::BorderZone];

/// Mean cross-entropy plus `lambda_dice` times the soft Dice loss averaged over
/// classes. A class absent from both prediction and truth has Dice 1.
pub fn seg_loss(probs: &[[f64; 3]], gd: &TissueLabeling, lambda_dice: f64) -> Result<f64> {
    check_len("probability rows", gd.len(), probs.len())?;
    if probs.is_empty() {
        return Err(Error::InvalidInput("segmentation loss needs at least one node".into()));
    }
    let mut ce = 0.0;
    let mut inter = [0.0; 3];
    let mut sum_p = [0.0; 3];
    let mut sum_g = [0.0; 3];
    for (row, g) in probs.iter().zip(&gd.0) {
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("invalid probability row {row:?}")));
        }
        let k = g.code() as usize;
        ce -= row[k].max(1e-300).ln();
        for c in 0..3 {
            sum_p[c] += row[c];
        }
        inter[k] += row[k];
        sum_g[k] += 1.0;
    }
    ce /= probs.len() as f64;
    let dice: f64 = (0..3)
        .map(|c| {
            let den = sum_p[c] + sum_g[c];
            if den == 0.0 {
                1.0
            } else {
                2.0 * inter[c] / den
            }
        })
        .sum::<f64>()
        / 3.0;
    Ok(ce + lambda_dice * (1.0 - dice))
}

fn centroid(pts: &[Point]) -> Point {
    pts.iter().fold(Point::zeros(), |a, p| a + p) / pts.len() as f64
}

/// Mean over predicted points of the distance to the predicted centre plus the
/// distance to the true centre, relative to the largest true-point radius.
pub fn compactness_loss(pred: &[Point], gd: &[Point]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("compactness of an empty prediction is undefined".into()));
    }
    if gd.is_empty() {
        return Err(Error::InvalidInput("compactness needs a nonempty ground truth".into()));
    }
    let cp = centroid(pred);
    let cg = centroid(gd);
    let dmax = gd.iter().map(|p| (p - cg).norm()).fold(0.0, f64::max);
    if dmax == 0.0 {
        return Err(Error::InvalidInput("ground truth has zero spread; compactness is undefined".into()));
    }
    let sum: f64 = pred.iter().map(|p| (p - cp).norm() + (p - cg).norm()).sum();
    Ok(sum / pred.len() as f64 / dmax)
}

/// Relative size error; negative when the prediction is too small.
pub fn size_loss(n_pred: usize, n_gd: usize) -> Result<f64> {
    if n_gd == 0 {
        return Err(Error::InvalidInput("size loss needs a nonempty ground truth".into()));
    }
    Ok((n_pred as f64 - n_gd as f64) / n_gd as f64)
}

pub fn size_loss_abs(n_pred: usize, n_gd: usize) -> Result<f64> {
    size_loss(n_pred, n_gd).map(f64::abs)
}

/// Fraction of predicted points in the RV.
pub fn spa_loss(n_pred_rv: usize, n_pred: usize) -> Result<f64> {
    if n_pred_rv > n_pred {
        return Err(Error::InvalidInput(format!("{n_pred_rv} RV points out of {n_pred}")));
    }
    Ok(if n_pred == 0 { 0.0 } else { n_pred_rv as f64 / n_pred as f64 })
}

/// Width of the septal band (in rt) that does not count as RV.
pub const SEPTAL_BAND: f64 = 0.02;

/// Predicted nodes of `class` in the RV, outside the septal band, and all predicted nodes.
pub fn rv_counts(mesh: &Mesh, pred: &TissueLabeling, class: Tissue) -> Result<(usize, usize)> {
    check_len("labeling", mesh.num_nodes(), pred.len())?;
    let mut rv = 0;
    let mut all = 0;
    for (c, t) in mesh.cobiveco().iter().zip(&pred.0) {
        if *t != class {
            continue;
        }
        all += 1;
        if !in_lv(c) && !(c.tv == 1 && (c.rt - SEPTAL_RT).abs() <= SEPTAL_BAND) {
            rv += 1;
        }
    }
    Ok((rv, all))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec_pc: f64,
    pub rec_qrs: f64,
    pub kl: f64,
    pub seg: f64,
    pub compact: f64,
    pub size: f64,
    pub spa: f64,
}

/// Returns `(L_vae, L_inf)`.
pub fn total_losses(c: &LossComponents, w: &LossWeights) -> (f64, f64) {
    let vae = w.pc * c.rec_pc + w.qrs * c.rec_qrs + w.kl * c.kl;
    let inf = w.vae * vae + c.seg + w.compact * c.compact + w.size * c.size + w.spa * c.spa;
    (vae, inf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhaLocParts {
    pub pred_center: Option<AhaSegmentId>,
    pub gd_center: Option<AhaSegmentId>,
    pub iou: f64,
    pub center_distance: f64,
    pub score: f64,
}

/// Node of `set` nearest to its mean position.
fn snapped_center(mesh: &Mesh, set: &[usize]) -> usize {
    let pts: Vec<Point> = set.iter().map(|&i| mesh.nodes()[i]).collect();
    let c = centroid(&pts);
    let mut best = (f64::INFINITY, set[0]);
    for (&i, p) in set.iter().zip(&pts) {
        let d = (p - c).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn segment_of(mesh: &Mesh, node: usize) -> Option<AhaSegmentId> {
    aha_segment(&mesh.cobiveco()[node]).ok()
}

fn segment_set(mesh: &Mesh, set: &[usize]) -> BTreeSet<AhaSegmentId> {
    set.iter().filter_map(|&i| segment_of(mesh, i)).collect()
}

/// Localisation score of the scar class with all of its parts. RV nodes carry no
/// segment; a centre in the RV never matches.
pub fn aha_loc_parts(
    pred: &TissueLabeling,
    gd: &TissueLabeling,
    mesh: &Mesh,
    w: &AhaLocWeights,
) -> Result<AhaLocParts> {
    check_len("labeling", mesh.num_nodes(), gd.len())?;
    check_len("labeling", mesh.num_nodes(), pred.len())?;
    let g = gd.indices(Tissue::Scar);
    if g.is_empty() {
        return Err(Error::InvalidInput("ground truth has no scar".into()));
    }
    let gc = snapped_center(mesh, &g);
    let gd_center = segment_of(mesh, gc);
    let p = pred.indices(Tissue::Scar);
    if p.is_empty() {
        return Ok(AhaLocParts {
            pred_center: None,
            gd_center,
            iou: 0.0,
            center_distance: 1.0,
            score: 0.0,
        });
    }
    let pc = snapped_center(mesh, &p);
    let pred_center = segment_of(mesh, pc);
    let gs = segment_set(mesh, &g);
    let ps = segment_set(mesh, &p);
    let union = gs.union(&ps).count();
    let iou = if union == 0 {
        0.0
    } else {
        gs.intersection(&ps).count() as f64 / union as f64
    };
    let diag = mesh.bbox_diagonal();
    let dc = ((mesh.nodes()[pc] - mesh.nodes()[gc]).norm() / diag).clamp(0.0, 1.0);
    let matched = pred_center.is_some() && pred_center == gd_center;
    Ok(AhaLocParts {
        pred_center,
        gd_center,
        iou,
        center_distance: dc,
        score: w.combine(matched, iou, dc),
    })
}

pub fn aha_loc_score(pred: &TissueLabeling, gd: &TissueLabeling, mesh: &Mesh, w: &AhaLocWeights) -> Result<f64> {
    aha_loc_parts(pred, gd, mesh, w).map(|p| p.score)
}

/// One evaluation row: overlap for scar and border zone plus the localisation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub subject: String,
    pub scenario: String,
    pub scar: Overlap,
    pub bz: Overlap,
    pub aha_loc: f64,
}

pub fn evaluate(
    subject: &str,
    scenario: &str,
    pred: &TissueLabeling,
    gd: &TissueLabeling,
    mesh: &Mesh,
    w: &AhaLocWeights,
) -> Result<Evaluation> {
    Ok(Evaluation {
        subject: subject.into(),
        scenario: scenario.into(),
        scar: dice_precision_recall(pred, gd, Tissue::Scar)?,
        bz: dice_precision_recall(pred, gd, Tissue::BorderZone)?,
        aha_loc: aha_loc_score(pred, gd, mesh, w)?,
    })
}

pub const EVALUATION_HEADER: &str =
    "subject,scenario,scar_dice,scar_precision,scar_recall,bz_dice,bz_precision,bz_recall,aha_loc_score";

pub fn evaluation_csv(rows: &[Evaluation]) -> String {
    let mut s = String::from(EVALUATION_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.subject,
            r.scenario,
            r.scar.dice,
            r.scar.precision,
            r.scar.recall,
            r.bz.dice,
            r.bz.precision,
            r.bz.recall,
            r.aha_loc
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lab(v: &[u8]) -> TissueLabeling {
        TissueLabeling(v.iter().map(|&c| Tissue::from_code(c).unwrap()).collect())
    }

    fn p(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    #[test]
    fn overlap_cases() {
        let a = lab(&[1, 1, 0, 0]);
        assert_eq!(
            dice_precision_recall(&a, &a, Tissue::Scar).unwrap(),
            Overlap { dice: 1.0, precision: 1.0, recall: 1.0 }
        );
        let b = lab(&[0, 0, 1, 1]);
        let o = dice_precision_recall(&a, &b, Tissue::Scar).unwrap();
        assert_eq!((o.dice, o.precision, o.recall), (0.0, 0.0, 0.0));
        let c = lab(&[0, 1, 1, 0]);
        let o = dice_precision_recall(&a, &c, Tissue::Scar).unwrap();
        assert_eq!((o.dice, o.precision, o.recall), (0.5, 0.5, 0.5));
        let h = lab(&[0, 0]);
        assert_eq!(dice_precision_recall(&h, &h, Tissue::BorderZone).unwrap().dice, 1.0);
        assert!(dice_precision_recall(&h, &a, Tissue::Scar).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let a = [p(0.0, 0.0, 0.0)];
        let b = [p(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn pc_reconstruction_weighting() {
        let input = [ClassClouds {
            coarse: vec![p(0.0, 0.0, 0.0)],
            dense: vec![p(0.0, 0.0, 0.0)],
        }];
        let recon = [ClassClouds {
            coarse: vec![p(1.0, 0.0, 0.0)],
            dense: vec![p(0.0, 2.0, 0.0)],
        }];
        // coarse chamfer 2, dense chamfer 8
        assert_eq!(reconstruction_loss_pc(&input, &recon, 5.0).unwrap(), 2.0 + 5.0 * 8.0);
        assert_eq!(reconstruction_loss_pc(&input, &input, 5.0).unwrap(), 0.0);
        assert!(
            reconstruction_loss_pc(&input, &recon, 10.0).unwrap() >= reconstruction_loss_pc(&input, &recon, 5.0).unwrap()
        );
        assert!(reconstruction_loss_pc(&input, &[], 5.0).is_err());
    }

    fn rec(leads: Vec<Vec<f64>>) -> EcgRecord {
        let n = leads[0].len();
        EcgRecord {
            leads,
            dt_effective: 0.2,
            onset: 0,
            offset: n - 1,
            name: String::new(),
        }
    }

    #[test]
    fn qrs_reconstruction() {
        let leads: Vec<Vec<f64>> = (0..8).map(|k| (0..64).map(|i| ((i + k) as f64 * 0.2).sin()).collect()).collect();
        let a = rec(leads.clone());
        assert_eq!(reconstruction_loss_qrs(&a, &a).unwrap(), 0.0);
        let mut shifted = leads;
        for x in &mut shifted[3] {
            *x += 0.1;
        }
        let b = rec(shifted);
        let v = reconstruction_loss_qrs(&a, &b).unwrap();
        assert!(v >= 0.01 / 8.0 - 1e-15, "{v}");
        let dtw_part = crate::qrs_analysis::dtw_normalized(&a.leads[3], &b.leads[3]).unwrap() / 8.0;
        assert_relative_eq!(v, 0.01 / 8.0 + dtw_part, max_relative = 1e-12);
        assert_relative_eq!(v, reconstruction_loss_qrs(&b, &a).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_std_normal(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(kl_std_normal(&[1.0], &[1.0]).unwrap(), 0.5);
        assert!(kl_std_normal(&[0.0], &[0.0]).is_err());
        assert!(kl_std_normal(&[0.0], &[]).is_err());
    }

    #[test]
    fn seg_cases() {
        let gd = lab(&[0, 1, 2]);
        let onehot = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(seg_loss(&onehot, &gd, 1.0).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        let u = [[third, third, third]];
        let ce = seg_loss(&u, &lab(&[0]), 0.0).unwrap();
        assert_relative_eq!(ce, 3f64.ln(), max_relative = 1e-12);
        assert!(seg_loss(&u, &lab(&[0]), 1.0).unwrap() > ce);
        assert!(seg_loss(&[[0.5, 0.6, 0.0]], &lab(&[0]), 1.0).is_err());
    }

    #[test]
    fn compactness_cases() {
        let line = [p(-1.0, 0.0, 0.0), p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)];
        assert_eq!(compactness_loss(&line, &line).unwrap(), 4.0 / 3.0);
        let one = [p(2.0, 3.0, 4.0)];
        assert!(compactness_loss(&one, &one).is_err());
        assert!(compactness_loss(&[], &line).is_err());
    }

    #[test]
    fn size_and_spa() {
        assert_eq!(size_loss(150, 100).unwrap(), 0.5);
        assert_eq!(size_loss(100, 100).unwrap(), 0.0);
        assert!(size_loss(50, 100).unwrap() < 0.0);
        assert_eq!(size_loss_abs(50, 100).unwrap(), 0.5);
        assert!(size_loss(1, 0).is_err());
        assert_eq!(spa_loss(0, 10).unwrap(), 0.0);
        assert_eq!(spa_loss(0, 0).unwrap(), 0.0);
        assert_eq!(spa_loss(3, 12).unwrap(), 0.25);
    }

    #[test]
    fn totals() {
        let w = LossWeights::default();
        assert_eq!(total_losses(&LossComponents::default(), &w), (0.0, 0.0));
        let c = LossComponents { kl: 2.0, ..Default::default() };
        assert_relative_eq!(total_losses(&c, &w).0, 0.02, max_relative = 1e-15);
        let c = LossComponents {
            rec_pc: 1.0,
            rec_qrs: 2.0,
            kl: 3.0,
            seg: 4.0,
            compact: 5.0,
            size: 6.0,
            spa: 7.0,
        };
        // seg carries its own weight, so scale it with the rest for linearity
        let c2 = LossComponents { seg: 8.0, ..c };
        let (v1, i1) = total_losses(&c, &w);
        let w2 = w.scaled(2.0);
        let (v2, _) = total_losses(&c, &w2);
        assert_relative_eq!(v2, 2.0 * v1, max_relative = 1e-15);
        let (_, i2) = total_losses(&c2, &LossWeights { vae: 1.0, ..w2 });
        assert_relative_eq!(i2, 2.0 * i1, max_relative = 1e-15);
        assert!(LossWeights { kl: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn aha_weights() {
        let w = AhaLocWeights::default();
        w.validate().unwrap();
        assert_eq!(w.combine(true, 1.0, 0.0), 1.0);
        assert_relative_eq!(w.combine(false, 0.5, 0.2), 0.34, epsilon = 1e-12);
        assert!(AhaLocWeights { ids: 0.3, ..w }.validate().is_err());
    }

    fn phantom() -> Mesh {
        crate::geometry::build_phantom(&crate::geometry::PhantomSpec::default(), 1).unwrap()
    }

    #[test]
    fn aha_loc_on_phantom() {
        let mesh = phantom();
        let spec = crate::scenario::InfarctSpec {
            tm0: 0.0,
            ab0: 0.45,
            rt0: 0.58,
            r_tm: 3.0,
            r_ab: 0.42,
            r_rt: 0.14,
            bz_scale: 1.5,
        };
        let gd = crate::scenario::label_tissue(&mesh, &spec);
        let w = AhaLocWeights::default();
        assert_eq!(aha_loc_score(&gd, &gd, &mesh, &w).unwrap(), 1.0);
        let empty = TissueLabeling::healthy(mesh.num_nodes());
        assert_eq!(aha_loc_score(&empty, &gd, &mesh, &w).unwrap(), 0.0);
        assert!(aha_loc_score(&gd, &empty, &mesh, &w).is_err());
        let moved = crate::scenario::label_tissue(&mesh, &crate::scenario::InfarctSpec { rt0: 0.1, ..spec });
        let s = aha_loc_score(&moved, &gd, &mesh, &w).unwrap();
        assert!((0.0..1.0).contains(&s));

        // permuting node order leaves the score unchanged
        let n = mesh.num_nodes();
        let perm: Vec<usize> = (0..n).rev().collect();
        let nodes: Vec<Point> = perm.iter().map(|&i| mesh.nodes()[i]).collect();
        let inv: Vec<usize> = {
            let mut v = vec![0; n];
            for (new, &old) in perm.iter().enumerate() {
                v[old] = new;
            }
            v
        };
        let tets: Vec<[usize; 4]> = mesh.tets().iter().map(|t| t.map(|i| inv[i])).collect();
        let cob = perm.iter().map(|&i| mesh.cobiveco()[i]).collect();
        let tags = perm.iter().map(|&i| mesh.surface_tags()[i]).collect();
        let pm = Mesh::new(nodes, tets, mesh.frames().to_vec(), cob, tags).unwrap();
        let pl = |l: &TissueLabeling| TissueLabeling(perm.iter().map(|&i| l.0[i]).collect());
        assert_relative_eq!(aha_loc_score(&pl(&moved), &pl(&gd), &pm, &w).unwrap(), s, max_relative = 1e-12);
    }

    #[test]
    fn spa_excludes_septal_band() {
        let mesh = phantom();
        let all = TissueLabeling(vec![Tissue::Scar; mesh.num_nodes()]);
        let (rv, n) = rv_counts(&mesh, &all, Tissue::Scar).unwrap();
        let strict_rv = mesh.cobiveco().iter().filter(|c| !in_lv(c)).count();
        assert_eq!(n, mesh.num_nodes());
        assert!(rv <= strict_rv && rv > 0);
    }

    #[test]
    fn evaluation_rows() {
        let a = lab(&[1, 2, 0]);
        let row = Evaluation {
            subject: "s".into(),
            scenario: "x".into(),
            scar: dice_precision_recall(&a, &a, Tissue::Scar).unwrap(),
            bz: dice_precision_recall(&a, &a, Tissue::BorderZone).unwrap(),
            aha_loc: 1.0,
        };
        let csv = evaluation_csv(&[row]);
        assert!(csv.starts_with(EVALUATION_HEADER));
        assert_eq!(csv.lines().nth(1).unwrap(), "s,x,1,1,1,1,1,1,1");
    }

    proptest! {
        #[test]
        fn dice_is_harmonic_mean(v in prop::collection::vec((0u8..3, 0u8..3), 1..60)) {
            let a = TissueLabeling(v.iter().map(|x| Tissue::from_code(x.0).unwrap()).collect());
            let b = TissueLabeling(v.iter().map(|x| Tissue::from_code(x.1).unwrap()).collect());
            for class in SEG_CLASSES {
                let o = dice_precision_recall(&a, &b, class).unwrap();
                for x in [o.dice, o.precision, o.recall] {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                let h = if o.precision + o.recall == 0.0 { 0.0 } else {
                    2.0 * o.precision * o.recall / (o.precision + o.recall)
                };
                prop_assert!((o.dice - h).abs() <= 1e-12);
            }
        }

        #[test]
        fn chamfer_symmetric_and_order_free(
            a in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..20),
            b in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..20),
        ) {
            let a: Vec<Point> = a.into_iter().map(|(x, y, z)| p(x, y, z)).collect();
            let b: Vec<Point> = b.into_iter().map(|(x, y, z)| p(x, y, z)).collect();
            let c = chamfer(&a, &b).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert!((c - chamfer(&b, &a).unwrap()).abs() <= 1e-12 * c.max(1.0));
            let mut r = a.clone();
            r.reverse();
            prop_assert!((c - chamfer(&r, &b).unwrap()).abs() <= 1e-12 * c.max(1.0));
        }

        #[test]
        fn kl_nonnegative(v in prop::collection::vec((-3.0f64..3.0, 0.05f64..4.0), 1..10)) {
            let mu: Vec<f64> = v.iter().map(|x| x.0).collect();
            let s: Vec<f64> = v.iter().map(|x| x.1).collect();
            prop_assert!(kl_std_normal(&mu, &s).unwrap() >= 0.0);
        }

        #[test]
        fn compactness_translation_invariant(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..15),
            shift in (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0),
        ) {
            let a: Vec<Point> = pts.iter().map(|&(x, y, z)| p(x, y, z)).collect();
            let d = p(shift.0, shift.1, shift.2);
            let b: Vec<Point> = a.iter().map(|q| q + d).collect();
            let pred = &a[..a.len() / 2 + 1];
            let pred_b = &b[..b.len() / 2 + 1];
            if let Ok(x) = compactness_loss(pred, &a) {
                let y = compactness_loss(pred_b, &b).unwrap();
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            }
        }

        #[test]
        fn size_sign(np in 0usize..500, ng in 1usize..500) {
            let s = size_loss(np, ng).unwrap();
            prop_assert_eq!(s < 0.0, np < ng);
        }
    }
}
