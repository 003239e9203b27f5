//! Scenario files: TOML, unknown keys rejected, parse errors carry line and
//! column.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filter::FilterConfig;
use crate::gp::{Dataset, KernelConfig};
use crate::learner::{warmup_dataset, LearnerConfig, Reference, Scenario, Variant};
use crate::plants::{AccParams, AccPlant, Plant, VehicleParams, VehiclePlant, VehicleReference};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantName {
    Acc,
    Vehicle4d,
}

/// Source of the prior dataset used by `alg1_prior`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// JSON dataset written by `warmup`; generated on the fly when absent.
    pub path: Option<PathBuf>,
    #[serde(default = "default_prior_size")]
    pub size: usize,
    /// Sampling box around `x0`, as a multiple of `x0_jitter`.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_prior_size() -> usize {
    20
}

fn default_spread() -> f64 {
    1.0
}

/// Grid for `lambda-map`: two state coordinates are swept, the rest are
/// pinned to `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: [usize; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub points: [usize; 2],
    #[serde(default)]
    pub fixed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantName,
    /// Parameter overrides for the nominal model.
    #[serde(default)]
    pub nominal: toml::Table,
    /// Parameter overrides for the simulated plant.
    #[serde(default)]
    pub truth: toml::Table,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub x0_jitter: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: f64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub clf_kernel: Option<KernelConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub reference: Option<VehicleReference>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config together with its source, for hashing and relative paths.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub path: Option<PathBuf>,
    pub hash: String,
}

fn merge<T: Serialize + DeserializeOwned>(base: &T, overrides: &toml::Table, what: &str) -> Result<T, HarnessError> {
    let mut table = toml::Table::try_from(base).map_err(|e| HarnessError::Config(format!("{what}: {e}")))?;
    for (k, v) in overrides {
        if !table.contains_key(k) {
            return Err(HarnessError::Config(format!("{what}: unknown parameter `{k}`")));
        }
        table.insert(k.clone(), v.clone());
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Config(format!("{what}: {}", e.message())))
}

impl LoadedConfig {
    pub fn parse(text: &str, path: Option<PathBuf>) -> Result<Self, HarnessError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let origin = path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<config>".into());
            HarnessError::Config(format!("{origin}: {e}"))
        })?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        let loaded = Self { config, path, hash };
        loaded.check()?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, Some(path.to_path_buf()))
    }

    fn check(&self) -> Result<(), HarnessError> {
        let c = &self.config;
        if c.variants.is_empty() {
            return Err(HarnessError::Usage("config lists no variants".into()));
        }
        if c.seeds.is_empty() {
            return Err(HarnessError::Usage("config lists no seeds".into()));
        }
        let (nominal, _) = self.plants()?;
        if let Some(g) = &c.grid {
            let n = nominal.state_dim();
            if g.axes.iter().any(|&a| a >= n) || g.axes[0] == g.axes[1] {
                return Err(HarnessError::Config("grid axes out of range".into()));
            }
            if !g.fixed.is_empty() && g.fixed.len() != n {
                return Err(HarnessError::Config(format!("grid.fixed needs {n} entries")));
            }
            if g.points.iter().any(|&p| p < 2) {
                return Err(HarnessError::Config("grid needs at least 2 points per axis".into()));
            }
        }
        Ok(())
    }

    /// Resolve a path from the config relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match self.path.as_ref().and_then(|c| c.parent()) {
            Some(dir) => dir.join(p),
            None => p.to_path_buf(),
        }
    }

    /// `(nominal, truth)` plants with overrides applied.
    pub fn plants(&self) -> Result<(Arc<dyn Plant>, Arc<dyn Plant>), HarnessError> {
        let c = &self.config;
        Ok(match c.plant {
            PlantName::Acc => {
                let base = AccParams::default();
                let nominal = merge(&base, &c.nominal, "nominal")?;
                let truth = merge(&base.perturbed(1.25, 1.6), &c.truth, "truth")?;
                nominal.validate().map_err(HarnessError::Config)?;
                truth.validate().map_err(HarnessError::Config)?;
                (Arc::new(AccPlant::new(nominal)), Arc::new(AccPlant::new(truth)))
            }
            PlantName::Vehicle4d => {
                let nominal = merge(&VehicleParams::default(), &c.nominal, "nominal")?;
                let truth = merge(&VehicleParams::true_default(), &c.truth, "truth")?;
                nominal.validate().map_err(HarnessError::Config)?;
                truth.validate().map_err(HarnessError::Config)?;
                (Arc::new(VehiclePlant::new(nominal)), Arc::new(VehiclePlant::new(truth)))
            }
        })
    }

    /// Scenario without the prior dataset.
    pub fn base_scenario(&self) -> Result<Scenario, HarnessError> {
        let c = &self.config;
        let (nominal, truth) = self.plants()?;
        let n = nominal.state_dim();
        let reference = match c.plant {
            PlantName::Acc => {
                if c.reference.is_some() {
                    return Err(HarnessError::Config("acc takes no [reference] section".into()));
                }
                Reference::Zero
            }
            PlantName::Vehicle4d => Reference::Vehicle {
                controller: c.reference.unwrap_or_default(),
                params: merge(&VehicleParams::default(), &c.nominal, "nominal")?,
            },
        };
        let jitter = c.x0_jitter.clone().unwrap_or_else(|| vec![0.0; n]);
        let sc = Scenario {
            name: c.name.clone(),
            true_plant: truth,
            nominal,
            kernel: c.kernel.clone(),
            clf_kernel: c.clf_kernel.clone(),
            filter: c.filter.clone(),
            learner: c.learner.clone(),
            x0: DVector::from_vec(c.x0.clone()),
            x0_jitter: DVector::from_vec(jitter),
            noise: c.noise,
            reference,
            prior: None,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn prior_settings(&self) -> PriorConfig {
        self.config.prior.clone().unwrap_or(PriorConfig {
            path: None,
            size: default_prior_size(),
            spread: default_spread(),
            seed: 0,
        })
    }

    /// Prior dataset from file, or from the seeded warmup when no file is given.
    pub fn prior_dataset(&self, sc: &Scenario) -> Result<Dataset, HarnessError> {
        let p = self.prior_settings();
        match &p.path {
            Some(path) => {
                let path = self.resolve(path);
                let text =
                    std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                Ok(Dataset::from_json(&text)?)
            }
            None => Ok(warmup_dataset(sc, p.size, p.spread, p.seed)?),
        }
    }

    /// Full scenario, with the prior dataset when any variant needs it.
    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        let mut sc = self.base_scenario()?;
        if self.config.variants.contains(&Variant::Alg1Prior) || self.config.prior.is_some() {
            sc.prior = Some(self.prior_dataset(&sc)?);
        }
        Ok(sc)
    }
}
