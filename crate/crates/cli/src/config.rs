//! TOML run configuration.
//!
//! ```toml
//! [system]
//! preset = "benchmark"
//!
//! [game]
//! gamma = 5.0
//! alpha = 0.1
//! delta = 0.3
//! q = 10.0          # multiple of I, or a full matrix [[..], [..]]
//! r = [1.0]
//!
//! [collection]
//! period = 0.1
//! substeps = 10
//! n_windows = 1000
//! seed = 1
//! x0 = [-1.0, 1.0, 1.0, 0.0]
//! control = [{ amplitude = 10.0, n_sinusoids = 10, freq_range = [0.1, 10.0], noise_amplitude = 2.5 }]
//! disturbance = [{ amplitude = 5.0, n_sinusoids = 10, freq_range = [0.1, 10.0], noise_amplitude = 1.25 }]
//!
//! [evaluation]
//! x0 = [0.0, 1.5]
//! r0 = [0.0, 1.5]
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use hinf_dpi::basis::{BasisSet, MonomialTable};
use hinf_dpi::collection::{BehaviorSignalSpec, CollectionConfig, CollectionMode, DatasetFingerprint};
use hinf_dpi::dynamics::{AugmentedState, Benchmark, ScalarLinear, SimulationGrid, SystemModel};
use hinf_dpi::learner::{EpisodeSpec, RankPolicy, TrainConfig};
use hinf_dpi::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub game: GameSection,
    pub collection: CollectionSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSection {
    Benchmark,
    ScalarLinear {
        #[serde(default = "minus_one")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "one")]
        k: f64,
    },
    /// Placeholder for models supplied through the library API.
    Custom {
        name: String,
    },
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QWeight {
    Scaled(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub gamma: f64,
    pub alpha: f64,
    pub delta: f64,
    pub q: QWeight,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub amplitude: f64,
    pub n_sinusoids: usize,
    pub freq_range: [f64; 2],
    pub noise_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionSection {
    pub period: f64,
    pub substeps: usize,
    pub n_windows: usize,
    pub seed: u64,
    /// Initial augmented state `[e_d; r]`.
    pub x0: Vec<f64>,
    #[serde(default = "single_trajectory")]
    pub mode: CollectionMode,
    pub control: Vec<SignalSection>,
    pub disturbance: Vec<SignalSection>,
}

fn single_trajectory() -> CollectionMode {
    CollectionMode::SingleTrajectory
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSection {
    /// Even degrees {2, 4} for the critic, odd {1, 3} for the actors.
    #[default]
    Polynomial,
    Explicit {
        critic: Vec<Vec<u32>>,
        actor_u: Vec<Vec<u32>>,
        actor_d: Vec<Vec<u32>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    OffPolicy,
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "rcond")]
    pub rcond: f64,
    #[serde(default)]
    pub rank_policy: RankPolicy,
    pub episode: Option<EpisodeSection>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            method: Method::OffPolicy,
            stop_tol: stop_tol(),
            max_iters: max_iters(),
            ridge: 0.0,
            rcond: rcond(),
            rank_policy: RankPolicy::MinimumNorm,
            episode: None,
        }
    }
}

fn stop_tol() -> f64 {
    1e-7
}

fn max_iters() -> usize {
    500
}

fn rcond() -> f64 {
    1e-9
}

/// On-policy data generation; period and substeps come from `[collection]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    #[serde(default = "n_initial_states")]
    pub n_initial_states: usize,
    #[serde(default = "windows_per_state")]
    pub windows_per_state: usize,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

fn n_initial_states() -> usize {
    20
}

fn windows_per_state() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbancePreset {
    /// `1.55 e^{−0.08t} cos(0.3t)` on every channel.
    #[default]
    DecayingCosine,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "t_end")]
    pub t_end: f64,
    #[serde(default = "eval_step")]
    pub step: f64,
    pub x0: Vec<f64>,
    pub r0: Vec<f64>,
    #[serde(default)]
    pub disturbance: DisturbancePreset,
}

fn t_end() -> f64 {
    50.0
}

fn eval_step() -> f64 {
    0.001
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::Parse { path: path.to_owned(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.collection.seed = seed;
        }
        self
    }

    fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let n = model.state_dim();
        let need = |what: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} needs {expected} entries, got {actual}")))
            }
        };
        need("collection.x0", 2 * n, self.collection.x0.len())?;
        need("collection.control", model.control_dim(), self.collection.control.len())?;
        need("collection.disturbance", model.disturbance_dim(), self.collection.disturbance.len())?;
        need("game.r", model.control_dim(), self.game.r.len())?;
        need("evaluation.x0", n, self.evaluation.x0.len())?;
        need("evaluation.r0", n, self.evaluation.r0.len())?;
        if let Some(ep) = &self.training.episode {
            for bound in [&ep.lower, &ep.upper].into_iter().flatten() {
                need("training.episode bounds", 2 * n, bound.len())?;
            }
        }
        let basis = self.basis()?;
        need("basis variables", 2 * n, basis.n_vars())?;
        self.train_config()?.validate()?;
        SimulationGrid::new(0.0, self.evaluation.t_end, self.evaluation.step)?;
        Ok(())
    }

    pub fn model(&self) -> Result<Box<dyn SystemModel>> {
        match &self.system {
            SystemSection::Benchmark => Ok(Box::new(Benchmark)),
            SystemSection::ScalarLinear { a, b, k } => Ok(Box::new(ScalarLinear { a: *a, b: *b, k: *k })),
            SystemSection::Custom { name } => Err(CliError::Config(format!(
                "custom system {name:?} must be supplied through the library SystemModel trait; \
                 the CLI only runs built-in presets"
            ))),
        }
    }

    pub fn state_dim(&self) -> Result<usize> {
        Ok(self.model()?.state_dim())
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.state_dim()?;
        match &self.game.q {
            QWeight::Scaled(s) => Ok(DMatrix::identity(n, n) * *s),
            QWeight::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config(format!("game.q must be {n}×{n}")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    pub fn basis(&self) -> Result<BasisSet> {
        let n_vars = 2 * self.state_dim()?;
        Ok(match &self.basis {
            BasisSection::Polynomial => BasisSet::polynomial(n_vars)?,
            BasisSection::Explicit { critic, actor_u, actor_d } => BasisSet::new(
                MonomialTable::from_exponents(n_vars, critic.clone())?,
                MonomialTable::from_exponents(n_vars, actor_u.clone())?,
                MonomialTable::from_exponents(n_vars, actor_d.clone())?,
            )?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        Ok(TrainConfig {
            stop_tol: t.stop_tol,
            max_iters: t.max_iters,
            ridge: t.ridge,
            rcond: t.rcond,
            rank_policy: t.rank_policy,
            ..TrainConfig::new(self.game.delta, self.game.gamma, self.game.alpha, self.q_matrix()?, self.game.r.clone())
        })
    }

    pub fn collection_config(&self) -> Result<CollectionConfig> {
        let c = &self.collection;
        Ok(CollectionConfig {
            period: c.period,
            substeps: c.substeps,
            alpha: self.game.alpha,
            q_weight: self.q_matrix()?,
            n_windows: c.n_windows,
            mode: c.mode.clone(),
            seed: c.seed,
        })
    }

    /// Behavior specs for the control and disturbance channels, all keyed
    /// by the collection seed.
    pub fn signal_specs(&self) -> (Vec<BehaviorSignalSpec>, Vec<BehaviorSignalSpec>) {
        let seed = self.collection.seed;
        let to_spec = |s: &SignalSection| BehaviorSignalSpec {
            amplitude: s.amplitude,
            n_sinusoids: s.n_sinusoids,
            freq_range: s.freq_range,
            noise_amplitude: s.noise_amplitude,
            seed,
        };
        (
            self.collection.control.iter().map(to_spec).collect(),
            self.collection.disturbance.iter().map(to_spec).collect(),
        )
    }

    pub fn initial_state(&self) -> Result<AugmentedState> {
        Ok(AugmentedState::new(DVector::from_vec(self.collection.x0.clone()))?)
    }

    /// The fingerprint a dataset collected under this config carries.
    pub fn expected_fingerprint(&self) -> Result<DatasetFingerprint> {
        let model = self.model()?;
        let q = self.q_matrix()?;
        Ok(DatasetFingerprint {
            period: self.collection.period,
            substeps: self.collection.substeps,
            alpha: self.game.alpha,
            q_weight: q.transpose().iter().copied().collect(),
            seed: self.collection.seed,
            basis_hash: self.basis()?.ordering_hash(),
            state_dim: model.state_dim(),
            control_dim: model.control_dim(),
            disturbance_dim: model.disturbance_dim(),
            mode: self.collection.mode.clone(),
        })
    }

    pub fn episode(&self) -> Result<EpisodeSpec> {
        let n = self.state_dim()?;
        let mut spec = EpisodeSpec::standard(n, self.collection.period, self.collection.substeps, self.collection.seed);
        if let Some(ep) = &self.training.episode {
            spec.n_initial_states = ep.n_initial_states;
            spec.windows_per_state = ep.windows_per_state;
            if let Some(lower) = &ep.lower {
                spec.lower = lower.clone();
            }
            if let Some(upper) = &ep.upper {
                spec.upper = upper.clone();
            }
        }
        Ok(spec)
    }

    pub fn evaluation_grid(&self) -> Result<SimulationGrid> {
        Ok(SimulationGrid::new(0.0, self.evaluation.t_end, self.evaluation.step)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");
    const SCALAR: &str = include_str!("../../../configs/scalar_lq.toml");

    #[test]
    fn shipped_configs_parse() {
        let cfg = Config::from_toml(BENCHMARK).unwrap();
        assert_eq!(cfg.basis().unwrap().unknowns(1, 1), 93);
        assert_eq!(cfg.q_matrix().unwrap(), DMatrix::identity(2, 2) * 10.0);
        let train = cfg.train_config().unwrap();
        assert_eq!((train.delta, train.gamma, train.alpha), (0.3, 5.0, 0.1));
        assert_eq!(train.stop_tol, 1e-7);
        assert_eq!(cfg.collection.n_windows, 1000);

        let scalar = Config::from_toml(SCALAR).unwrap();
        assert_eq!(scalar.basis().unwrap().unknowns(1, 1), 3);
        assert_eq!(scalar.training.method, Method::OnPolicy);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = BENCHMARK.replace("[game]", "[game]\nbogus = 1");
        assert!(matches!(Config::from_toml(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn dimension_errors() {
        let bad = BENCHMARK.replace("x0 = [-1.0, 1.0, 1.0, 0.0]", "x0 = [-1.0, 1.0]");
        let err = Config::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("collection.x0"), "{err}");
    }

    #[test]
    fn invalid_delta() {
        let bad = BENCHMARK.replace("delta = 0.3", "delta = 1.5");
        assert!(Config::from_toml(&bad).is_err());
    }

    #[test]
    fn custom_system_rejected() {
        let bad = BENCHMARK.replace("preset = \"benchmark\"", "preset = \"custom\"\nname = \"plant\"");
        let err = Config::from_toml(&bad).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::CONFIG);
    }

    #[test]
    fn matrix_q_and_seed_override() {
        let text = BENCHMARK.replace("q = 10.0", "q = [[10.0, 0.0], [0.0, 10.0]]");
        let cfg = Config::from_toml(&text).unwrap().with_seed(Some(99));
        assert_eq!(cfg.q_matrix().unwrap(), DMatrix::identity(2, 2) * 10.0);
        assert_eq!(cfg.expected_fingerprint().unwrap().seed, 99);
        let (u, d) = cfg.signal_specs();
        assert!(u.iter().chain(&d).all(|s| s.seed == 99));
    }
}
