use mitwin_core::eikonal::default_roots;
use mitwin_core::forward::{ForwardConfig, ForwardModel};
use mitwin_core::geometry::{build_phantom, load_mesh, save_mesh, write_vtk, PhantomSpec};
use mitwin_core::inverse::{default_candidates, invert, objective, InverseConfig};
use mitwin_core::pseudo_ecg::{default_electrodes, EcgRecord};
use mitwin_core::qrs_analysis::{detect_abnormalities, qrs_duration, AbnormalityThresholds};
use mitwin_core::scenario::{find_scenario, CvConfig, InfarctSpec, Tissue, TissueLabeling};

fn phantom() -> mitwin_core::geometry::Mesh {
    build_phantom(&PhantomSpec::default(), 0).unwrap()
}

#[test]
fn forward_pipeline_is_deterministic() {
    let mesh = phantom();
    let roots = default_roots(&mesh).unwrap();
    let model = ForwardModel::new(&mesh, &roots, &default_electrodes(&mesh), ForwardConfig::default()).unwrap();
    let cv = CvConfig::default();
    let cands = default_candidates(&cv).unwrap();
    let s = find_scenario(&cands, "inferior-transmural").unwrap();
    let a = model.simulate(&s.infarct, &s.cv).unwrap();
    let b = model.simulate(&s.infarct, &s.cv).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.activation, b.activation);
    assert!(a.labeling.count(Tissue::Scar) > 0);
    assert_eq!(a.record.leads.len(), 8);
    assert!(a.record.leads.iter().all(|l| l.len() == 512));
    let peak = a.record.leads.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!((peak - 1.0).abs() < 1e-12);

    let base = model.baseline(&cv).unwrap();
    assert!(qrs_duration(&a.record).unwrap() > qrs_duration(&base.record).unwrap());
    let flags = detect_abnormalities(&base.record, &base.record, &AbnormalityThresholds::default()).unwrap();
    assert!(!flags.prolongation && !flags.prwp);
}

#[test]
fn objective_is_zero_only_at_the_generating_scenario() {
    let mesh = phantom();
    let roots = default_roots(&mesh).unwrap();
    let model = ForwardModel::new(&mesh, &roots, &default_electrodes(&mesh), ForwardConfig::default()).unwrap();
    let cv = CvConfig::default();
    let cands = default_candidates(&cv).unwrap();
    let s = find_scenario(&cands, "extensive-anterior-transmural").unwrap();
    let observed = model.simulate(&s.infarct, &cv).unwrap().record;
    assert!(objective(&s.infarct, &cv, &observed, &model, 1.0).unwrap() < 1e-9);
    let none = objective(&InfarctSpec::none(), &cv, &observed, &model, 1.0).unwrap();
    assert!(none > 0.0);
}

#[test]
fn refinement_respects_budget_and_never_worsens() {
    let mesh = phantom();
    let roots = default_roots(&mesh).unwrap();
    let model = ForwardModel::new(&mesh, &roots, &default_electrodes(&mesh), ForwardConfig::default()).unwrap();
    let cv = CvConfig::default();
    let cands = default_candidates(&cv).unwrap();
    let s = find_scenario(&cands, "lateral-large-subendocardial").unwrap();
    let theta = InfarctSpec {
        ab0: s.infarct.ab0 + 0.03,
        rt0: s.infarct.rt0 - 0.015,
        ..s.infarct
    };
    let observed = model.simulate(&theta, &cv).unwrap().record;

    let zero = invert(&observed, &model, &cands, &InverseConfig { budget: 0, ..Default::default() }).unwrap();
    assert_eq!(zero.theta, s.infarct);
    assert_eq!(zero.forward_solves, cands.len());
    assert!(zero.history.is_empty());

    let cfg = InverseConfig {
        budget: 25,
        ..Default::default()
    };
    let r = invert(&observed, &model, &cands, &cfg).unwrap();
    assert_eq!(r.stage1, zero.stage1);
    assert!(r.forward_solves <= cands.len() + cfg.budget);
    assert_eq!(r.forward_solves - cands.len(), r.history.len());
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.objective <= r.stage1_objective);
    assert_eq!(r.objective, r.history.last().copied().unwrap_or(r.stage1_objective));
    assert_eq!(r.labeling, mitwin_core::scenario::label_tissue(&mesh, &r.theta));

    let again = invert(&observed, &model, &cands, &cfg).unwrap();
    assert_eq!(again.theta, r.theta);
    assert_eq!(again.history, r.history);
}

#[test]
fn zero_record_cannot_be_inverted() {
    let mesh = phantom();
    let roots = default_roots(&mesh).unwrap();
    let model = ForwardModel::new(&mesh, &roots, &default_electrodes(&mesh), ForwardConfig::default()).unwrap();
    let cands = default_candidates(&CvConfig::default()).unwrap();
    let zero = EcgRecord::from_raw(&vec![vec![0.0; 16]; 8], 0.5, 512, 0.02).unwrap();
    assert!(invert(&zero, &model, &cands, &InverseConfig::default()).is_err());
}

#[test]
fn mesh_and_labeling_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = phantom();
    let native = dir.path().join("m.mesh");
    save_mesh(&mesh, &native).unwrap();
    let back = load_mesh(&native).unwrap();
    assert_eq!(back.nodes(), mesh.nodes());
    assert_eq!(back.tets(), mesh.tets());
    assert_eq!(back.cobiveco(), mesh.cobiveco());

    let vtk = dir.path().join("m.vtk");
    let ab: Vec<f64> = mesh.cobiveco().iter().map(|c| c.ab).collect();
    write_vtk(&mesh, &vtk, &[("ab_copy", &ab)]).unwrap();
    let from_vtk = load_mesh(&vtk).unwrap();
    assert_eq!(from_vtk.tets(), mesh.tets());
    assert_eq!(from_vtk.surface_tags(), mesh.surface_tags());

    let labels = mitwin_core::scenario::label_tissue(
        &mesh,
        &find_scenario(&default_candidates(&CvConfig::default()).unwrap(), "septal-transmural")
            .unwrap()
            .infarct,
    );
    let p = dir.path().join("l.csv");
    labels.write(&p, "scenario=septal-transmural").unwrap();
    assert_eq!(TissueLabeling::read(&p).unwrap(), labels);
}
