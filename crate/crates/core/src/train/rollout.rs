//! Parallel self-play rollout collection.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::ActionLattice;
use crate::nn::{sample_action, ActionMode, ObsBatch, PolicyNet};
use crate::observation::{build_observation, noise_rng, normalize_into, splitmix64, ObservationConfig};
use crate::reward::{step_reward, RewardWeights, ScenarioPhase};
use crate::scenario::{build_pool_with, sample_world, GeneratorParams, SamplerConfig, StartGoalPool};
use crate::world::{step_world, AgentStatus, MapContext, World, WorldConfig};
use crate::Result;

use super::config::TrainFile;
use super::loss::{kl_to_prior, prior_log_probs};

/// Transitions in struct-of-arrays form. Each (world, agent) segment is
/// contiguous and ends with `done` (episode over) or `cut` (bootstrap from
/// `bootstrap`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub dim: usize,
    pub obs: Vec<f64>,
    pub tokens: Vec<usize>,
    pub logp: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub done: Vec<bool>,
    pub cut: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub n_w: Vec<usize>,
    pub world: Vec<usize>,
    pub agent: Vec<usize>,
    /// KL of the behavior policy to the prior, per transition.
    pub kl: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.dim..(i + 1) * self.dim]
    }

    fn append(&mut self, mut other: RolloutBatch) {
        self.obs.append(&mut other.obs);
        self.tokens.append(&mut other.tokens);
        self.logp.append(&mut other.logp);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.done.append(&mut other.done);
        self.cut.append(&mut other.cut);
        self.bootstrap.append(&mut other.bootstrap);
        self.n_w.append(&mut other.n_w);
        self.world.append(&mut other.world);
        self.agent.append(&mut other.agent);
        self.kl.append(&mut other.kl);
    }

    /// Index ranges of the contiguous segments.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut s = 0;
        for i in 0..self.len() {
            if self.done[i] || self.cut[i] {
                out.push(s..i + 1);
                s = i + 1;
            }
        }
        if s < self.len() {
            out.push(s..self.len());
        }
        out
    }
}

/// Final status of one finished agent episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub goal: bool,
    pub at_fault: bool,
    pub collided: bool,
    pub off_road: bool,
    pub early_terminated: bool,
    /// Undiscounted reward summed over the agent's episode.
    pub total_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Collected {
    pub batch: RolloutBatch,
    pub episodes: Vec<EpisodeEnd>,
}

/// Map data and pools for one (map, pool) tuple.
pub struct TupleRuntime {
    pub ctx: Arc<MapContext>,
    pub pre: GeneratorParams,
    pub post: GeneratorParams,
    pub pre_pool: StartGoalPool,
    pub post_pool: StartGoalPool,
}

impl TupleRuntime {
    pub fn build(file: &TrainFile, base: &std::path::Path) -> Result<Vec<TupleRuntime>> {
        file.tuples
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let map = t.load_map(base, k)?;
                let id = map.map_id.clone();
                let ctx = Arc::new(MapContext::new(map, file.observation.road_point_spacing));
                let pre_pool = build_pool_with(&ctx.graph, &id, &t.pre, &t.pool, t.pool_seed)?;
                let post = t.post_params();
                let post_pool = if post == t.pre {
                    pre_pool.clone()
                } else {
                    build_pool_with(&ctx.graph, &id, &post, &t.pool, t.pool_seed)?
                };
                Ok(TupleRuntime {
                    ctx,
                    pre: t.pre,
                    post,
                    pre_pool,
                    post_pool,
                })
            })
            .collect()
    }
}

/// Read-only settings shared by every rollout worker.
pub struct RolloutContext<'a> {
    pub tuples: &'a [TupleRuntime],
    pub observation: ObservationConfig,
    pub reward: RewardWeights,
    pub world: WorldConfig,
    pub sampler: SamplerConfig,
    pub lattice: ActionLattice,
    pub horizon_s: f64,
    pub prior_log_q: Vec<f64>,
}

impl<'a> RolloutContext<'a> {
    pub fn new(file: &TrainFile, tuples: &'a [TupleRuntime]) -> Self {
        RolloutContext {
            tuples,
            observation: file.observation,
            reward: file.reward,
            world: file.world,
            sampler: file.sampler,
            lattice: file.lattice.clone(),
            horizon_s: file.train.horizon_s,
            prior_log_q: prior_log_probs(&file.lattice, file.train.prior_sigma),
        }
    }

    /// Sample a fresh non-empty world for the given phase.
    pub fn sample(&self, rng: &mut ChaCha8Rng, phase: ScenarioPhase, rho: f64) -> Result<World> {
        let mut last_err = None;
        for _ in 0..16 {
            let k = rng.gen_range(0..self.tuples.len());
            let t = &self.tuples[k];
            let (params, pool) = match phase {
                ScenarioPhase::Pre => (&t.pre, &t.pre_pool),
                ScenarioPhase::Post => (&t.post, &t.post_pool),
            };
            let seed = rng.gen::<u64>();
            match sample_world(&t.ctx.graph, pool, params, &self.sampler, &self.world.bounds, self.horizon_s, seed) {
                Ok(spec) if !spec.agents.is_empty() => {
                    let mut w = World::new(t.ctx.clone(), &spec, self.world, self.lattice.clone());
                    w.rho = rho;
                    return Ok(w);
                }
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| crate::Error::EmptyPool("could not place any agent".into())))
    }

    /// Normalized observations of the given agents.
    pub fn observe(&self, world: &World, agents: &[usize]) -> Result<Vec<Vec<f64>>> {
        let layout = self.observation.layout();
        agents
            .iter()
            .map(|&i| {
                let mut rng = noise_rng(world.seed, world.step, i);
                let o = build_observation(world, i, &self.observation, &mut rng)?;
                let mut x = vec![0.0; layout.dim()];
                normalize_into(&o, &layout, &self.observation.scales, &mut x);
                Ok(x)
            })
            .collect()
    }
}

/// One training world and its private random stream.
pub struct WorldSlot {
    pub index: usize,
    pub world: World,
    pub rng: ChaCha8Rng,
    pending: Vec<RolloutBatch>,
    returns: Vec<f64>,
}

impl WorldSlot {
    pub fn new(index: usize, seed: u64, ctx: &RolloutContext, phase: ScenarioPhase, rho: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64 + 1)));
        let world = ctx.sample(&mut rng, phase, rho)?;
        let n = world.len();
        Ok(WorldSlot {
            index,
            world,
            rng,
            pending: vec![RolloutBatch::default(); n],
            returns: vec![0.0; n],
        })
    }

    fn reset(&mut self, ctx: &RolloutContext, phase: ScenarioPhase, rho: f64) -> Result<()> {
        self.world = ctx.sample(&mut self.rng, phase, rho)?;
        self.pending = vec![RolloutBatch::default(); self.world.len()];
        self.returns = vec![0.0; self.world.len()];
        Ok(())
    }

    /// Run `steps` world steps with the shared policy.
    pub fn collect(
        &mut self,
        net: &PolicyNet,
        ctx: &RolloutContext,
        steps: usize,
        phase: ScenarioPhase,
        rho: f64,
    ) -> Result<Collected> {
        let dim = ctx.observation.layout().dim();
        let mut out = Collected {
            batch: RolloutBatch {
                dim,
                ..Default::default()
            },
            episodes: Vec::new(),
        };
        self.world.rho = rho;
        for p in &mut self.pending {
            p.dim = dim;
        }
        for _ in 0..steps {
            let active = self.world.active_indices();
            let rows = ctx.observe(&self.world, &active)?;
            let outputs = net.forward_flat(&rows)?;
            let mut tokens = Vec::with_capacity(active.len());
            let mut logps = Vec::with_capacity(active.len());
            for o in &outputs {
                let (t, lp) = sample_action(&o.logits, &mut self.rng, ActionMode::Sample);
                tokens.push(t);
                logps.push(lp);
            }
            let events = step_world(&mut self.world, &tokens)?;
            let n_w = self.world.len();
            for (k, &i) in active.iter().enumerate() {
                let r = step_reward(&events.agents[i], &self.world.agents[i], &ctx.reward, rho)?;
                let done = !self.world.status[i].is_active();
                let p = &mut self.pending[i];
                p.obs.extend_from_slice(&rows[k]);
                p.tokens.push(tokens[k]);
                p.logp.push(logps[k]);
                p.rewards.push(r.total);
                self.returns[i] += r.total;
                p.values.push(outputs[k].value);
                p.done.push(done);
                p.cut.push(false);
                p.bootstrap.push(0.0);
                p.n_w.push(n_w);
                p.world.push(self.index);
                p.agent.push(i);
                p.kl.push(kl_to_prior(&outputs[k].logits, &ctx.prior_log_q).0);
                if done {
                    out.batch.append(std::mem::take(p));
                    out.episodes.push(episode_end(&self.world, i, self.returns[i]));
                }
            }
            if self.world.is_done() {
                let still = self.world.active_indices();
                self.flush_cut(net, ctx, &still, &mut out.batch)?;
                for &i in &still {
                    out.episodes.push(episode_end(&self.world, i, self.returns[i]));
                }
                self.reset(ctx, phase, rho)?;
                for p in &mut self.pending {
                    p.dim = dim;
                }
            }
        }
        let still = self.world.active_indices();
        self.flush_cut(net, ctx, &still, &mut out.batch)?;
        Ok(out)
    }

    fn flush_cut(
        &mut self,
        net: &PolicyNet,
        ctx: &RolloutContext,
        agents: &[usize],
        out: &mut RolloutBatch,
    ) -> Result<()> {
        let agents: Vec<usize> = agents.iter().copied().filter(|&i| !self.pending[i].is_empty()).collect();
        if agents.is_empty() {
            return Ok(());
        }
        let rows = ctx.observe(&self.world, &agents)?;
        let values = net.forward(&ObsBatch::from_flat(&ctx.observation.layout(), &rows)?);
        for (k, &i) in agents.iter().enumerate() {
            let p = &mut self.pending[i];
            let last = p.len() - 1;
            p.cut[last] = true;
            p.bootstrap[last] = values[k].value;
            out.append(std::mem::take(p));
        }
        Ok(())
    }
}

fn episode_end(world: &World, i: usize, total_reward: f64) -> EpisodeEnd {
    let f = &world.flags[i];
    EpisodeEnd {
        goal: world.status[i] == AgentStatus::GoalReached,
        at_fault: f.at_fault,
        collided: f.collided,
        off_road: world.status[i] == AgentStatus::OffRoad,
        early_terminated: world.status[i] == AgentStatus::EarlyTerminated,
        total_reward,
    }
}

/// Collect from every slot in parallel and concatenate in slot order.
pub fn collect_rollouts(
    net: &PolicyNet,
    slots: &mut [WorldSlot],
    ctx: &RolloutContext,
    steps_per_world: usize,
    phase: ScenarioPhase,
    rho: f64,
) -> Result<Collected> {
    let parts: Vec<Result<Collected>> =
        slots.par_iter_mut().map(|s| s.collect(net, ctx, steps_per_world, phase, rho)).collect();
    let mut out = Collected {
        batch: RolloutBatch {
            dim: ctx.observation.layout().dim(),
            ..Default::default()
        },
        episodes: Vec::new(),
    };
    for p in parts {
        let p = p?;
        out.batch.append(p.batch);
        out.episodes.extend(p.episodes);
    }
    Ok(out)
}
