//! Infarct recovery from an observed QRS: an exhaustive pass over the candidate
//! scenarios followed by bounded Nelder-Mead refinement of the winner.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cobiveco::wrap_rt;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::metrics::{evaluate, AhaLocWeights, Evaluation};
use crate::pseudo_ecg::{EcgRecord, N_LEADS};
use crate::qrs_analysis::record_dtw;
use crate::scenario::{catalogue, CvConfig, InfarctSpec, ScenarioSpec, TissueLabeling};

/// Number of refined parameters: ab0, rt0, r_tm, r_ab, r_rt.
pub const DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseConfig {
    /// Forward solves allowed during refinement.
    pub budget: usize,
    /// Initial simplex offsets for ab0, rt0, r_tm, r_ab, r_rt.
    pub steps: [f64; DIM],
    /// Refinement stops once the simplex values span less than this.
    pub tol: f64,
    pub seed: u64,
    /// Weight of the duration term in the DTW distance.
    pub gamma: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            budget: 200,
            steps: [0.05, 0.03, 0.5, 0.05, 0.03],
            tol: 1e-4,
            seed: 0,
            gamma: 1.0,
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(format!("simplex steps must be > 0, got {:?}", self.steps)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// The catalogue without its reduced-velocity entry.
pub fn default_candidates(cv: &CvConfig) -> Result<Vec<ScenarioSpec>> {
    Ok(catalogue(cv)?.into_iter().filter(|s| s.cv == *cv).collect())
}

#[derive(Debug, Clone)]
pub struct InverseResult {
    pub theta: InfarctSpec,
    pub cv: CvConfig,
    /// Best candidate of the exhaustive pass.
    pub stage1: String,
    pub stage1_objective: f64,
    pub labeling: TissueLabeling,
    pub objective: f64,
    pub forward_solves: usize,
    /// Best objective seen after each refinement solve.
    pub history: Vec<f64>,
    pub evaluation: Option<Evaluation>,
}

impl InverseResult {
    /// Fills in the overlap and localisation scores against a known labeling.
    pub fn with_truth(mut self, model: &ForwardModel<'_>, truth: &TissueLabeling, subject: &str) -> Result<Self> {
        self.evaluation = Some(evaluate(
            subject,
            &self.stage1,
            &self.labeling,
            truth,
            model.mesh,
            &AhaLocWeights::default(),
        )?);
        Ok(self)
    }

    pub fn report(&self) -> String {
        let t = &self.theta;
        let mut s = String::new();
        let _ = writeln!(s, "stage1_winner = {}", self.stage1);
        let _ = writeln!(s, "stage1_objective = {}", self.stage1_objective);
        let _ = writeln!(s, "objective = {}", self.objective);
        let _ = writeln!(s, "forward_solves = {}", self.forward_solves);
        let _ = writeln!(
            s,
            "theta = tm0 {} ab0 {} rt0 {} r_tm {} r_ab {} r_rt {} bz_scale {}",
            t.tm0, t.ab0, t.rt0, t.r_tm, t.r_ab, t.r_rt, t.bz_scale
        );
        let _ = writeln!(s, "scar_nodes = {}", self.labeling.count(crate::scenario::Tissue::Scar));
        let _ = writeln!(s, "bz_nodes = {}", self.labeling.count(crate::scenario::Tissue::BorderZone));
        if let Some(e) = &self.evaluation {
            let _ = writeln!(s, "scar_dice = {}", e.scar.dice);
            let _ = writeln!(s, "scar_precision = {}", e.scar.precision);
            let _ = writeln!(s, "scar_recall = {}", e.scar.recall);
            let _ = writeln!(s, "bz_dice = {}", e.bz.dice);
            let _ = writeln!(s, "bz_precision = {}", e.bz.precision);
            let _ = writeln!(s, "bz_recall = {}", e.bz.recall);
            let _ = writeln!(s, "aha_loc_score = {}", e.aha_loc);
        }
        s
    }
}

/// Mean over leads of the DTW distance between the observed record and the one
/// simulated under `theta`.
pub fn objective(
    theta: &InfarctSpec,
    cv: &CvConfig,
    observed: &EcgRecord,
    model: &ForwardModel<'_>,
    gamma: f64,
) -> Result<f64> {
    let sim = model.simulate(theta, cv)?;
    record_objective(observed, &sim.record, gamma)
}

fn record_objective(observed: &EcgRecord, sim: &EcgRecord, gamma: f64) -> Result<f64> {
    Ok(record_dtw(observed, sim, gamma)?.iter().sum::<f64>() / N_LEADS as f64)
}

fn quantize(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Maps a simplex vertex to a valid infarct and its cache key.
fn theta_of(x: &[f64; DIM], template: &InfarctSpec) -> (InfarctSpec, [i64; DIM]) {
    let t = InfarctSpec {
        ab0: quantize(x[0].clamp(0.0, 1.0)),
        rt0: wrap_rt(quantize(wrap_rt(x[1]))),
        r_tm: quantize(x[2].max(0.0)),
        r_ab: quantize(x[3].max(0.0)),
        r_rt: quantize(x[4].max(0.0)),
        ..*template
    };
    let key = [t.ab0, t.rt0, t.r_tm, t.r_ab, t.r_rt].map(|v| (v * 1000.0).round() as i64);
    (t, key)
}

struct Refiner<'a, 'm> {
    model: &'a ForwardModel<'m>,
    observed: &'a EcgRecord,
    cv: CvConfig,
    template: InfarctSpec,
    gamma: f64,
    budget: usize,
    solves: usize,
    cache: HashMap<[i64; DIM], f64>,
    best: (f64, InfarctSpec),
    history: Vec<f64>,
}

impl Refiner<'_, '_> {
    /// Objective at `x`, or `None` once the budget is spent.
    fn eval(&mut self, x: &[f64; DIM]) -> Result<Option<f64>> {
        let (theta, key) = theta_of(x, &self.template);
        if let Some(&v) = self.cache.get(&key) {
            return Ok(Some(v));
        }
        if self.solves >= self.budget {
            return Ok(None);
        }
        self.solves += 1;
        let v = match objective(&theta, &self.cv, self.observed, self.model, self.gamma) {
            Ok(v) => v,
            Err(e) if e.is_numerical() => f64::INFINITY,
            Err(e) => return Err(e),
        };
        self.cache.insert(key, v);
        if v < self.best.0 {
            self.best = (v, theta);
        }
        self.history.push(self.best.0);
        Ok(Some(v))
    }

    /// Evaluates several points at once (in parallel), in order, stopping at the
    /// budget. Equivalent to calling `eval` on each point in turn.
    fn eval_many(&mut self, xs: &[[f64; DIM]]) -> Result<Vec<Option<f64>>> {
        let mut todo: Vec<(usize, InfarctSpec, [i64; DIM])> = Vec::new();
        let mut seen: Vec<[i64; DIM]> = Vec::new();
        let mut room = self.budget - self.solves;
        for (i, x) in xs.iter().enumerate() {
            let (theta, key) = theta_of(x, &self.template);
            if self.cache.contains_key(&key) || seen.contains(&key) {
                continue;
            }
            if room == 0 {
                break;
            }
            room -= 1;
            seen.push(key);
            todo.push((i, theta, key));
        }
        let values: Vec<Result<f64>> = todo
            .par_iter()
            .map(|(_, theta, _)| objective(theta, &self.cv, self.observed, self.model, self.gamma))
            .collect();
        for ((_, theta, key), v) in todo.into_iter().zip(values) {
            let v = match v {
                Ok(v) => v,
                Err(e) if e.is_numerical() => f64::INFINITY,
                Err(e) => return Err(e),
            };
            self.solves += 1;
            self.cache.insert(key, v);
            if v < self.best.0 {
                self.best = (v, theta);
            }
            self.history.push(self.best.0);
        }
        Ok(xs
            .iter()
            .map(|x| self.cache.get(&theta_of(x, &self.template).1).copied())
            .collect())
    }

    /// One Nelder-Mead run from `start`. Returns false when the budget ran out.
    fn run(&mut self, start: [f64; DIM], steps: [f64; DIM], tol: f64) -> Result<bool> {
        let mut simplex: Vec<[f64; DIM]> = vec![start];
        for k in 0..DIM {
            let mut v = start;
            v[k] += steps[k];
            simplex.push(v);
        }
        let vals = self.eval_many(&simplex)?;
        if vals.iter().any(Option::is_none) {
            return Ok(false);
        }
        let mut f: Vec<f64> = vals.into_iter().flatten().collect();
        loop {
            let mut order: Vec<usize> = (0..=DIM).collect();
            order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
            simplex = order.iter().map(|&i| simplex[i]).collect();
            f = order.iter().map(|&i| f[i]).collect();
            if !(f[DIM] - f[0] > tol) {
                return Ok(true);
            }
            let mut centroid = [0.0; DIM];
            for v in &simplex[..DIM] {
                for k in 0..DIM {
                    centroid[k] += v[k] / DIM as f64;
                }
            }
            let along = |t: f64| -> [f64; DIM] {
                std::array::from_fn(|k| centroid[k] + t * (simplex[DIM][k] - centroid[k]))
            };
            let xr = along(-1.0);
            let Some(fr) = self.eval(&xr)? else { return Ok(false) };
            if fr < f[0] {
                let xe = along(-2.0);
                let Some(fe) = self.eval(&xe)? else { return Ok(false) };
                if fe < fr {
                    simplex[DIM] = xe;
                    f[DIM] = fe;
                } else {
                    simplex[DIM] = xr;
                    f[DIM] = fr;
                }
                continue;
            }
            if fr < f[DIM - 1] {
                simplex[DIM] = xr;
                f[DIM] = fr;
                continue;
            }
            let (xc, outside) = if fr < f[DIM] { (along(-0.5), true) } else { (along(0.5), false) };
            let Some(fc) = self.eval(&xc)? else { return Ok(false) };
            if (outside && fc <= fr) || (!outside && fc < f[DIM]) {
                simplex[DIM] = xc;
                f[DIM] = fc;
                continue;
            }
            let best = simplex[0];
            let shrunk: Vec<[f64; DIM]> = simplex[1..]
                .iter()
                .map(|v| std::array::from_fn(|k| best[k] + 0.5 * (v[k] - best[k])))
                .collect();
            let vals = self.eval_many(&shrunk)?;
            if vals.iter().any(Option::is_none) {
                return Ok(false);
            }
            // a collapsed simplex maps every vertex to one quantised point
            if shrunk.iter().zip(&simplex[1..]).all(|(a, b)| theta_of(a, &self.template).1 == theta_of(b, &self.template).1) {
                return Ok(true);
            }
            for (k, (v, fv)) in shrunk.into_iter().zip(vals.into_iter().flatten()).enumerate() {
                simplex[k + 1] = v;
                f[k + 1] = fv;
            }
        }
    }
}

fn params(t: &InfarctSpec) -> [f64; DIM] {
    [t.ab0, t.rt0, t.r_tm, t.r_ab, t.r_rt]
}

/// Recovers infarct parameters from `observed`. Every candidate is simulated; the
/// best one (lowest index on ties) seeds the refinement, which restarts once from
/// the best point when the simplex stagnates. Reports the best parameters ever seen.
pub fn invert(
    observed: &EcgRecord,
    model: &ForwardModel<'_>,
    candidates: &[ScenarioSpec],
    cfg: &InverseConfig,
) -> Result<InverseResult> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no stage-1 candidates".into()));
    }
    if observed.is_zero() {
        return Err(Error::InvalidInput("observed record is identically zero".into()));
    }
    let scores: Vec<Result<(f64, TissueLabeling)>> = candidates
        .par_iter()
        .map(|s| {
            let out = model.simulate(&s.infarct, &s.cv)?;
            Ok((record_objective(observed, &out.record, cfg.gamma)?, out.labeling))
        })
        .collect();
    let mut winner: Option<(usize, f64)> = None;
    let mut first_err = None;
    for (i, r) in scores.iter().enumerate() {
        match r {
            Ok((v, _)) => {
                if winner.is_none_or(|(_, b)| *v < b) {
                    winner = Some((i, *v));
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e.to_string());
                }
            }
        }
    }
    let Some((wi, wv)) = winner else {
        return Err(Error::Numerical(format!(
            "no candidate could be simulated: {}",
            first_err.unwrap_or_default()
        )));
    };
    let mut scores = scores;
    let stage1_labeling = match scores.swap_remove(wi) {
        Ok((_, l)) => l,
        Err(_) => unreachable!(),
    };
    let spec = &candidates[wi];
    let stage1_solves = candidates.len();

    let mut r = Refiner {
        model,
        observed,
        cv: spec.cv,
        template: spec.infarct,
        gamma: cfg.gamma,
        budget: cfg.budget,
        solves: 0,
        cache: HashMap::new(),
        best: (wv, spec.infarct),
        history: Vec::new(),
    };
    let (_, key) = theta_of(&params(&spec.infarct), &spec.infarct);
    r.cache.insert(key, wv);

    if cfg.budget > 0 && wv > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut steps = cfg.steps;
        if r.run(params(&spec.infarct), steps, cfg.tol)? {
            for s in &mut steps {
                if rng.gen::<bool>() {
                    *s = -*s;
                }
            }
            r.run(params(&r.best.1), steps, cfg.tol)?;
        }
    }

    let (objective, theta) = r.best;
    let labeling = if theta == spec.infarct {
        stage1_labeling
    } else {
        crate::scenario::label_tissue(model.mesh, &theta)
    };
    Ok(InverseResult {
        theta,
        cv: spec.cv,
        stage1: spec.name.clone(),
        stage1_objective: wv,
        labeling,
        objective,
        forward_solves: stage1_solves + r.solves,
        history: r.history,
        evaluation: None,
    })
}
