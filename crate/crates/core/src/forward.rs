//! Scenario to QRS: labeling, conduction field, activation and pseudo-ECG on one mesh.

use serde::{Deserialize, Serialize};

use crate::eikonal::{solve_activation_with, ActivationMap, EikonalConfig, RootNodes};
use crate::error::Result;
use crate::geometry::Mesh;
use crate::pseudo_ecg::{simulate_with_field, EcgConfig, EcgRecord, ElectrodeSet, LeadField};
use crate::scenario::{conduction_field, label_tissue, CvConfig, InfarctSpec, TissueLabeling};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardConfig {
    pub ecg: EcgConfig,
    pub eikonal: EikonalConfig,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub labeling: TissueLabeling,
    pub activation: ActivationMap,
    pub record: EcgRecord,
}

/// Everything that stays fixed across scenarios on one mesh.
pub struct ForwardModel<'a> {
    pub mesh: &'a Mesh,
    pub roots: &'a RootNodes,
    pub config: ForwardConfig,
    field: LeadField,
}

impl<'a> ForwardModel<'a> {
    pub fn new(mesh: &'a Mesh, roots: &'a RootNodes, electrodes: &ElectrodeSet, config: ForwardConfig) -> Result<Self> {
        config.ecg.validate()?;
        let field = LeadField::new(mesh, electrodes)?;
        Ok(Self {
            mesh,
            roots,
            config,
            field,
        })
    }

    pub fn simulate_labeling(&self, labeling: TissueLabeling, cv: &CvConfig) -> Result<ForwardOutput> {
        let speeds = conduction_field(self.mesh, &labeling, cv)?;
        let activation = solve_activation_with(self.mesh, &speeds, self.roots, &self.config.eikonal)?;
        let record = simulate_with_field(&self.field, &activation, &self.config.ecg)?;
        Ok(ForwardOutput {
            labeling,
            activation,
            record,
        })
    }

    pub fn simulate(&self, infarct: &InfarctSpec, cv: &CvConfig) -> Result<ForwardOutput> {
        infarct.validate()?;
        self.simulate_labeling(label_tissue(self.mesh, infarct), cv)
    }

    /// The infarct-free reference.
    pub fn baseline(&self, cv: &CvConfig) -> Result<ForwardOutput> {
        self.simulate_labeling(TissueLabeling::healthy(self.mesh.num_nodes()), cv)
    }
}
