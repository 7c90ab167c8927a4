use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::ActionLattice;
use crate::map::{load_map, MapBundle};
use crate::nn::NetConfig;
use crate::observation::ObservationConfig;
use crate::reward::RewardWeights;
use crate::scenario::{GeneratorParams, PoolOptions, SamplerConfig};
use crate::world::{EnvConfig, WorldConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Dclamp,
}

/// Direction of the prior KL term in the minimized loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlSign {
    /// `+ lambda_kl * KL`: pulls the policy toward the prior.
    Penalty,
    /// `- lambda_kl * KL`: the literal loss-form reading.
    Objective,
}

impl KlSign {
    pub fn factor(self) -> f64 {
        match self {
            KlSign::Penalty => 1.0,
            KlSign::Objective => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub clip_eps: f64,
    pub dclamp_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub kl_coef: f64,
    pub kl_sign: KlSign,
    /// Prior spread (jerk, steering rate).
    pub prior_sigma: [f64; 2],
    /// Start the policy at the action prior instead of uniform.
    pub prior_init: bool,
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub value_coef: f64,
    /// Divide rewards by the running std of discounted returns before GAE.
    pub normalize_returns: bool,
    pub max_grad_norm: f64,
    /// Budget in agent transitions.
    pub total_steps: u64,
    pub worlds: usize,
    /// World steps collected per world per iteration.
    pub rollout_len: usize,
    pub horizon_s: f64,
    /// Curriculum ramp as fractions of `total_steps`.
    pub ramp: [f64; 2],
    /// Rayon threads; 0 uses the global default.
    pub workers: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Dclamp,
            clip_eps: 0.2,
            dclamp_eps: 0.3,
            gamma: 0.99,
            gae_lambda: 0.95,
            kl_coef: 0.01,
            kl_sign: KlSign::Penalty,
            prior_sigma: [3.0, 0.1],
            prior_init: true,
            lr: 3e-4,
            minibatch: 512,
            epochs: 4,
            value_coef: 0.5,
            normalize_returns: true,
            max_grad_norm: 0.5,
            total_steps: 2_000_000,
            worlds: 8,
            rollout_len: 128,
            horizon_s: 20.0,
            ramp: [0.2, 0.8],
            workers: 0,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.clip_eps >= 0.0 && self.dclamp_eps >= 0.0 && self.kl_coef >= 0.0) {
            return bad("clip_eps, dclamp_eps and kl_coef must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.prior_sigma[0] > 0.0 && self.prior_sigma[1] > 0.0) {
            return bad("prior_sigma must be positive");
        }
        if self.minibatch == 0 || self.worlds == 0 || self.rollout_len == 0 {
            return bad("minibatch, worlds and rollout_len must be positive");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        if !(0.0 <= self.ramp[0] && self.ramp[0] <= self.ramp[1]) {
            return bad("ramp must satisfy 0 <= start <= end");
        }
        Ok(())
    }
}

/// Network widths; layout and token count come from the rest of the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    pub width: usize,
    pub encoder_depth: usize,
    pub heads: usize,
    pub head_width: usize,
    pub head_depth: usize,
    pub seed: u64,
}

impl Default for NetSpec {
    fn default() -> Self {
        let d = NetConfig::default();
        NetSpec {
            width: d.width,
            encoder_depth: d.encoder_depth,
            heads: d.heads,
            head_width: d.head_width,
            head_depth: d.head_depth,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraightMap {
    pub lanes: usize,
    pub length: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
}

fn default_lane_width() -> f64 {
    3.7
}

/// One (map, pool) tuple with its pre- and post-curriculum generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straight: Option<StraightMap>,
    #[serde(default)]
    pub pool_seed: u64,
    #[serde(default)]
    pub pool: PoolOptions,
    pub pre: GeneratorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<GeneratorParams>,
}

impl TupleConfig {
    pub fn load_map(&self, base: &Path, index: usize) -> Result<MapBundle> {
        match (&self.map, &self.straight) {
            (Some(p), None) => load_map(base.join(p)),
            (None, Some(s)) => {
                Ok(MapBundle::straight_highway(&format!("straight_{index}"), s.lanes, s.length, s.lane_width))
            }
            _ => Err(Error::Config(format!("tuple {index} needs exactly one of `map` or `straight`"))),
        }
    }

    pub fn post_params(&self) -> GeneratorParams {
        self.post.unwrap_or(self.pre)
    }
}

/// The full training document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFile {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub net: NetSpec,
    #[serde(default)]
    pub observation: ObservationConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub lattice: ActionLattice,
    pub tuples: Vec<TupleConfig>,
}

impl TrainFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            observation: self.observation,
            world: self.world,
            lattice: self.lattice.clone(),
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            layout: self.observation.layout(),
            width: self.net.width,
            encoder_depth: self.net.encoder_depth,
            heads: self.net.heads,
            head_width: self.net.head_width,
            head_depth: self.net.head_depth,
            tokens: self.lattice.len(),
            seed: self.net.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.reward.validate()?;
        self.observation.scales.validate()?;
        self.lattice.validate()?;
        self.world.bounds.validate()?;
        self.net_config().validate()?;
        if self.tuples.is_empty() {
            return Err(Error::Config("at least one (map, pool) tuple is required".into()));
        }
        for t in &self.tuples {
            t.pre.validate()?;
            t.post_params().validate()?;
        }
        Ok(())
    }
}
