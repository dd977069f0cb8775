use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mitwin_core::eikonal::{roots_from_targets, EikonalConfig, RootConfig, RootNodes};
use mitwin_core::forward::ForwardConfig;
use mitwin_core::geometry::{build_phantom, load_mesh, Mesh, PhantomSpec};
use mitwin_core::inverse::InverseConfig;
use mitwin_core::pseudo_ecg::{default_electrodes, EcgConfig, Electrode, ElectrodeSet};
use mitwin_core::qrs_analysis::AbnormalityThresholds;
use mitwin_core::scenario::{catalogue_with, CatalogueConfig, CvConfig, ScenarioSpec};
use mitwin_core::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Weight of the QRS-duration term in the DTW distance.
    pub gamma: f64,
    pub thresholds: AbnormalityThresholds,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            thresholds: AbnormalityThresholds::default(),
        }
    }
}

/// Everything a run depends on. Every field has a default, so an empty file is a
/// valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Subject label used in evaluation tables.
    pub subject: String,
    /// Mesh file to use instead of the phantom.
    pub mesh: Option<PathBuf>,
    pub phantom: PhantomSpec,
    pub roots: RootConfig,
    pub cv: CvConfig,
    pub catalogue: CatalogueConfig,
    /// Electrode positions (mm) replacing the default layout, keyed by name (`V1`, `LA`, ...).
    pub electrodes: BTreeMap<String, [f64; 3]>,
    pub ecg: EcgConfig,
    pub eikonal: EikonalConfig,
    pub sweep: SweepConfig,
    pub inverse: InverseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subject: "phantom".into(),
            mesh: None,
            phantom: PhantomSpec::default(),
            roots: RootConfig::default(),
            cv: CvConfig::default(),
            catalogue: CatalogueConfig::default(),
            electrodes: BTreeMap::new(),
            ecg: EcgConfig::default(),
            eikonal: EikonalConfig::default(),
            sweep: SweepConfig::default(),
            inverse: InverseConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.inverse.seed = cfg.seed;
        if let Some(m) = &cfg.mesh {
            if !m.is_file() {
                return Err(Error::InvalidInput(format!("mesh file {} does not exist", m.display())).into());
            }
        }
        for name in cfg.electrodes.keys() {
            Electrode::from_str(name).map_err(|_| Error::InvalidInput(format!("unknown electrode '{name}'")))?;
        }
        cfg.cv.validate()?;
        cfg.ecg.validate()?;
        cfg.inverse.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 prefix over the canonical JSON form of the configuration and the
    /// bytes of any referenced mesh file.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self)?);
        if let Some(m) = &self.mesh {
            h.update(fs::read(m)?);
        }
        Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Ok(match &self.mesh {
            Some(p) => load_mesh(p)?,
            None => build_phantom(&self.phantom, self.seed)?,
        })
    }

    pub fn roots(&self, mesh: &Mesh) -> Result<RootNodes> {
        Ok(roots_from_targets(mesh, &self.roots)?)
    }

    pub fn electrodes(&self, mesh: &Mesh) -> Result<ElectrodeSet> {
        let mut set = default_electrodes(mesh);
        for (name, p) in &self.electrodes {
            let e = Electrode::from_str(name).map_err(|_| Error::InvalidInput(format!("unknown electrode '{name}'")))?;
            set = set.with_position(e, (*p).into());
        }
        Ok(set)
    }

    pub fn forward(&self) -> ForwardConfig {
        ForwardConfig {
            ecg: self.ecg,
            eikonal: self.eikonal,
        }
    }

    pub fn catalogue(&self) -> Result<Vec<ScenarioSpec>> {
        Ok(catalogue_with(&self.cv, &self.catalogue)?)
    }
}

/// Extracts the config hash embedded in an artifact, if any.
pub fn embedded_hash(text: &str) -> Option<String> {
    let at = text.find("config_hash")?;
    let rest = text[at + "config_hash".len()..].trim_start_matches([' ', '=', ':']);
    let hash: String = rest.chars().take_while(|c| c.is_ascii_hexdigit()).collect();
    if hash.is_empty() {
        None
    } else {
        Some(hash)
    }
}

pub fn check_hashes<'a>(found: impl IntoIterator<Item = (&'a Path, Option<String>)>) -> Result<String> {
    let mut hash: Option<(String, &Path)> = None;
    for (path, h) in found {
        let Some(h) = h else {
            bail!(Error::InvalidInput(format!("{} carries no config hash", path.display())));
        };
        match &hash {
            None => hash = Some((h, path)),
            Some((first, fp)) if *first != h => {
                bail!(Error::InvalidInput(format!(
                    "artifacts come from different configurations: {} has {first}, {} has {h}",
                    fp.display(),
                    path.display()
                )));
            }
            _ => {}
        }
    }
    match hash {
        Some((h, _)) => Ok(h),
        None => bail!(Error::InvalidInput("no artifacts found".into())),
    }
}
