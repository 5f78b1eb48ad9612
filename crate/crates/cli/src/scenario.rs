//! TOML scenario files: one format drives every subcommand.

use std::path::Path;

use innodyn_core::jump::TssKernel;
use innodyn_core::model::{Configuration, ModelError, MutantPolicy, ScalingRegime, SquareMatrix, TraitCatalog, TraitParams};
use innodyn_core::stochastic::{Discovery, SampleGrid, SimOptions, DEFAULT_POPULATION_CAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub regime: RegimeSpec,
    pub traits: Vec<TraitSpec>,
    pub competition: KernelSpec,
    #[serde(default)]
    pub migration: KernelSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    pub initial: InitialSpec,
    pub run: RunSpec,
}

/// `epsilon` and `sigma` either directly or as exponents of `K`
/// (`epsilon = K^-epsilon_exponent`). Absent scales default to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub k: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraitSpec {
    pub id: String,
    pub birth: f64,
    #[serde(default)]
    pub death: f64,
    #[serde(default)]
    pub mutation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    #[default]
    Zero,
    Uniform {
        value: f64,
    },
    /// `diagonal` on the diagonal, `neighbor` between consecutive traits in
    /// declaration order.
    NearestNeighbor {
        diagonal: f64,
        neighbor: f64,
    },
    Matrix {
        rows: Vec<Vec<f64>>,
    },
}

impl KernelSpec {
    fn build(&self, n: usize, zero_diagonal: bool) -> Result<SquareMatrix, ModelError> {
        let mut m = match self {
            KernelSpec::Zero => SquareMatrix::zeros(n),
            KernelSpec::Uniform { value } => SquareMatrix::uniform(n, *value),
            KernelSpec::NearestNeighbor { diagonal, neighbor } => SquareMatrix::nearest_neighbor(n, *diagonal, *neighbor),
            KernelSpec::Matrix { rows } => SquareMatrix::from_rows(rows)?,
        };
        if zero_diagonal && m.dim() == n {
            for i in 0..n {
                m.set(i, i, 0.0);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    FitterThanAll,
    NextInCatalog,
    /// Trait ids in arrival order.
    ExplicitSequence(Vec<String>),
}

/// Either a full density vector or a single trait (at its equilibrium mass
/// unless `mass` is given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
    #[serde(default, rename = "trait", skip_serializing_if = "Option::is_none")]
    pub trait_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: f64,
    /// Number of evenly spaced samples from 0 to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Explicit sample times; overrides `samples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: u64,
    /// Horizon of the jump chains, in mutation-timescale units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_horizon: Option<f64>,
    /// Starting resident of the jump chains; defaults to the initial support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(default)]
    pub tss_kernel: TssKernel,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_cap: Option<u64>,
    #[serde(default)]
    pub discovery: Discovery,
    /// Include the migration flux in the deterministic system.
    #[serde(default = "yes")]
    pub ode_migration: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

pub const DEFAULT_SAMPLES: usize = 101;

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        let hash = Sha256::digest(&canonical);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.traits.iter().map(|t| t.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, ScenarioError> {
        self.traits
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown trait id {id:?}")))
    }

    pub fn catalog(&self) -> Result<TraitCatalog, ScenarioError> {
        let n = self.traits.len();
        let traits = self
            .traits
            .iter()
            .map(|t| TraitParams::new(t.id.clone(), t.birth, t.death))
            .collect();
        let policy = match &self.policy {
            PolicySpec::FitterThanAll => MutantPolicy::FitterThanAll,
            PolicySpec::NextInCatalog => MutantPolicy::NextInCatalog,
            PolicySpec::ExplicitSequence(ids) => MutantPolicy::ExplicitSequence(
                ids.iter().map(|id| self.index_of(id)).collect::<Result<_, _>>()?,
            ),
        };
        Ok(TraitCatalog::new(
            traits,
            self.competition.build(n, false)?,
            self.migration.build(n, true)?,
            self.traits.iter().map(|t| t.mutation).collect(),
            policy,
        )?)
    }

    pub fn regime(&self) -> Result<ScalingRegime, ScenarioError> {
        let r = &self.regime;
        let k = r.k as f64;
        let pick = |name: &str, direct: Option<f64>, exponent: Option<f64>| match (direct, exponent) {
            (Some(_), Some(_)) => Err(ScenarioError::Invalid(format!(
                "give either {name} or {name}_exponent, not both"
            ))),
            (Some(v), None) => Ok(v),
            (None, Some(a)) => Ok(k.powf(-a)),
            (None, None) => Ok(1.0),
        };
        let eps = pick("epsilon", r.epsilon, r.epsilon_exponent)?;
        let sigma = pick("sigma", r.sigma, r.sigma_exponent)?;
        Ok(ScalingRegime::new(r.k, eps, sigma)?)
    }

    pub fn initial(&self, catalog: &TraitCatalog) -> Result<Configuration, ScenarioError> {
        let i = &self.initial;
        match (&i.density, &i.trait_id) {
            (Some(d), None) => {
                if i.mass.is_some() {
                    return Err(ScenarioError::Invalid("initial.mass only applies with initial.trait".into()));
                }
                if d.len() != catalog.len() {
                    return Err(ScenarioError::Invalid(format!(
                        "initial density has {} entries for {} traits",
                        d.len(),
                        catalog.len()
                    )));
                }
                Ok(Configuration::new(d.clone())?)
            }
            (None, Some(id)) => {
                let x = self.index_of(id)?;
                let mass = match i.mass {
                    Some(m) => m,
                    None => catalog.equilibrium_mass(x)?,
                };
                Ok(Configuration::dirac(catalog.len(), x, mass)?)
            }
            _ => Err(ScenarioError::Invalid(
                "initial needs exactly one of density or trait".into(),
            )),
        }
    }

    pub fn grid(&self) -> SampleGrid {
        match &self.run.times {
            Some(times) => SampleGrid::Explicit { times: times.clone() },
            None => SampleGrid::Uniform {
                count: self.run.samples.unwrap_or(DEFAULT_SAMPLES),
            },
        }
    }

    pub fn sim_options(&self, record_events: bool) -> SimOptions {
        SimOptions {
            population_cap: self.run.population_cap.unwrap_or(DEFAULT_POPULATION_CAP),
            record_events,
            discovery: self.run.discovery,
            burn_in: self.run.burn_in,
        }
    }

    /// Resident the jump chains start from: `run.start`, else the single
    /// trait of the initial support.
    pub fn start_trait(&self, catalog: &TraitCatalog) -> Result<usize, ScenarioError> {
        if let Some(id) = &self.run.start {
            return self.index_of(id);
        }
        let support: Vec<usize> = self.initial(catalog)?.support().collect();
        match support.as_slice() {
            [x] => Ok(*x),
            _ => Err(ScenarioError::Invalid(
                "jump chains need run.start when the initial support is not a single trait".into(),
            )),
        }
    }
}
