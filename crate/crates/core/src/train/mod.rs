//! Self-play training loop.

pub mod config;
pub mod loss;
pub mod rollout;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{checkpoint, clip_grad_norm, log_softmax, softmax, Adam, ObsBatch, PolicyNet, Tensor};
use crate::observation::splitmix64;
use crate::reward::{advance_curriculum, CurriculumState};
use crate::{Error, Result};

pub use config::{Algorithm, KlSign, NetSpec, StraightMap, TrainConfig, TrainFile, TupleConfig};
pub use loss::{
    gae, kl_action_regularizer, kl_to_prior, normalize_advantages, policy_loss, prior_log_probs, reweighted_total,
    surrogate, ClipParams, PolicyLoss,
};
pub use rollout::{collect_rollouts, Collected, EpisodeEnd, RolloutBatch, RolloutContext, TupleRuntime, WorldSlot};

pub const METRICS_HEADER: &str =
    "iter,steps,rho,mean_reward,goal_rate,fault_collision_rate,offroad_rate,early_term_rate,kl_prior,policy_loss,value_loss,clip_fraction,grad_norm,episode_return";

/// Advantages and return targets for every transition, segment by segment.
/// GAE over every segment, with rewards multiplied by `reward_scale`.
pub fn compute_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64, reward_scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = Vec::with_capacity(batch.len());
    let mut ret = Vec::with_capacity(batch.len());
    for seg in batch.segments() {
        let last = seg.end - 1;
        let rewards: Vec<f64> = batch.rewards[seg.clone()].iter().map(|r| r * reward_scale).collect();
        let (a, r) = gae(&rewards, &batch.values[seg.clone()], batch.done[last], batch.bootstrap[last], gamma, lambda);
        adv.extend(a);
        ret.extend(r);
    }
    (adv, ret)
}

/// Running spread of discounted returns. Rewards divided by it keep value
/// targets near unit scale whatever the penalty magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReturnScaler {
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnScaler {
    pub fn update(&mut self, batch: &RolloutBatch, gamma: f64) {
        for seg in batch.segments() {
            let mut g = 0.0;
            for &r in &batch.rewards[seg] {
                g = gamma * g + r;
                self.count += 1.0;
                let d = g - self.mean;
                self.mean += d / self.count;
                self.m2 += d * (g - self.mean);
            }
        }
    }

    /// Population standard deviation seen so far, 1 before any data.
    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-4)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationMetrics {
    pub iter: u64,
    pub steps: u64,
    pub rho: f64,
    pub mean_reward: f64,
    pub goal_rate: f64,
    pub fault_collision_rate: f64,
    pub offroad_rate: f64,
    pub early_term_rate: f64,
    pub kl_prior: f64,
    /// Means over the update's minibatches.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Pre-clip gradient norm.
    pub grad_norm: f64,
    /// Mean undiscounted return of episodes that ended this iteration.
    pub episode_return: f64,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.steps,
            self.rho,
            self.mean_reward,
            self.goal_rate,
            self.fault_collision_rate,
            self.offroad_rate,
            self.early_term_rate,
            self.kl_prior,
            self.policy_loss,
            self.value_loss,
            self.clip_fraction,
            self.grad_norm,
            self.episode_return
        )
    }

    fn is_finite(&self) -> bool {
        [
            self.rho,
            self.mean_reward,
            self.goal_rate,
            self.fault_collision_rate,
            self.offroad_rate,
            self.early_term_rate,
            self.kl_prior,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Loss and parameter gradients on one minibatch.
pub fn minibatch_gradients(
    net: &PolicyNet,
    batch: &RolloutBatch,
    adv: &[f64],
    ret: &[f64],
    idx: &[usize],
    cfg: &TrainConfig,
    log_q: &[f64],
) -> Result<(UpdateStats, Vec<Tensor>)> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| batch.row(i)).collect();
    let obs = ObsBatch::from_flat(&net.config.layout, &rows)?;
    let traced = net.trace(&obs);
    let logits = traced.tape.value(traced.logits);
    let values = traced.tape.value(traced.values);
    let m = idx.len();
    let lps: Vec<Vec<f64>> = (0..m).map(|k| log_softmax(logits.row(k))).collect();
    let new_logp: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| lps[k][batch.tokens[i]]).collect();
    let old_logp: Vec<f64> = idx.iter().map(|&i| batch.logp[i]).collect();
    let a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
    let n_w: Vec<usize> = idx.iter().map(|&i| batch.n_w[i]).collect();
    let clip = ClipParams {
        algorithm: cfg.algorithm,
        eps: cfg.clip_eps,
        eps_c: cfg.dclamp_eps,
    };
    let pl = policy_loss(&new_logp, &old_logp, &a, &n_w, &clip)?;
    let weight: f64 = n_w.iter().map(|&k| 1.0 / k.max(1) as f64).sum();
    let kl_scale = cfg.kl_sign.factor() * cfg.kl_coef / m as f64;
    let mut dlogits = Tensor::zeros(m, logits.cols);
    let mut dvalues = Tensor::zeros(m, 1);
    let mut value_loss = 0.0;
    let mut kl_sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let p = softmax(logits.row(k));
        let g = dlogits.row_mut(k);
        for (j, pj) in p.iter().enumerate() {
            let onehot = if j == batch.tokens[i] { 1.0 } else { 0.0 };
            g[j] = pl.grad_logp[k] * (onehot - pj);
        }
        let (kl, dkl) = kl_to_prior(logits.row(k), log_q);
        kl_sum += kl;
        for (gj, d) in g.iter_mut().zip(&dkl) {
            *gj += kl_scale * d;
        }
        let w = 1.0 / n_w[k].max(1) as f64 / weight;
        let err = values.data[k] - ret[i];
        value_loss += 0.5 * w * err * err;
        dvalues.data[k] = cfg.value_coef * w * err;
    }
    let kl = kl_sum / m as f64;
    let loss = pl.loss + cfg.value_coef * value_loss + cfg.kl_sign.factor() * cfg.kl_coef * kl;
    let grads = traced.tape.backward(vec![(traced.logits, dlogits), (traced.values, dvalues)]);
    Ok((
        UpdateStats {
            loss,
            policy_loss: pl.loss,
            value_loss,
            kl,
            clip_fraction: pl.clip_fraction,
            grad_norm: 0.0,
        },
        grads,
    ))
}

pub struct Trainer {
    pub file: TrainFile,
    pub net: PolicyNet,
    pub optimizer: Adam,
    pub curriculum: CurriculumState,
    pub steps: u64,
    pub iter: u64,
    pub returns: ReturnScaler,
    tuples: Vec<TupleRuntime>,
    slots: Vec<WorldSlot>,
    rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// `base` resolves relative map paths in the config.
    pub fn new(file: TrainFile, base: &Path) -> Result<Self> {
        file.validate()?;
        let mut net = PolicyNet::new(file.net_config())?;
        net.env = Some(file.env());
        if file.train.prior_init {
            net.set_policy_bias(&prior_log_probs(&file.lattice, file.train.prior_sigma))?;
        }
        let optimizer = Adam::new(&net.params, file.train.lr);
        let t = &file.train;
        let curriculum = CurriculumState::with_fractions(t.total_steps, t.ramp[0], t.ramp[1]);
        let tuples = TupleRuntime::build(&file, base)?;
        let pool = if t.workers > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t.workers)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };
        let mut trainer = Trainer {
            rng: ChaCha8Rng::seed_from_u64(splitmix64(t.seed)),
            file,
            net,
            optimizer,
            curriculum,
            steps: 0,
            iter: 0,
            returns: ReturnScaler::default(),
            tuples,
            slots: Vec::new(),
            pool,
        };
        let ctx = RolloutContext::new(&trainer.file, &trainer.tuples);
        let slots = (0..trainer.file.train.worlds)
            .map(|k| WorldSlot::new(k, trainer.file.train.seed, &ctx, trainer.curriculum.phase, 0.0))
            .collect::<Result<Vec<_>>>()?;
        trainer.slots = slots;
        Ok(trainer)
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn done(&self) -> bool {
        self.steps >= self.file.train.total_steps
    }

    /// One collect-and-update iteration.
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        self.iter += 1;
        self.curriculum = advance_curriculum(&self.curriculum, self.steps);
        let (phase, rho) = (self.curriculum.phase, self.curriculum.rho);
        let ctx = RolloutContext::new(&self.file, &self.tuples);
        let rollout_len = self.file.train.rollout_len;
        let collected = {
            let net = &self.net;
            let slots = &mut self.slots;
            let ctx = &ctx;
            match &self.pool {
                Some(p) => p.install(|| collect_rollouts(net, slots, ctx, rollout_len, phase, rho)),
                None => collect_rollouts(net, slots, ctx, rollout_len, phase, rho),
            }?
        };
        let batch = &collected.batch;
        self.steps += batch.len() as u64;
        let cfg = self.file.train;
        let reward_scale = if cfg.normalize_returns {
            self.returns.update(batch, cfg.gamma);
            1.0 / self.returns.std()
        } else {
            1.0
        };
        let (mut adv, ret) = compute_advantages(batch, cfg.gamma, cfg.gae_lambda, reward_scale);
        normalize_advantages(&mut adv);
        let log_q = ctx.prior_log_q.clone();
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut acc = [0.0; 4];
        let mut updates = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(cfg.minibatch) {
                let (mut stats, mut grads) =
                    self.run(|| minibatch_gradients(&self.net, batch, &adv, &ret, idx, &cfg, &log_q))?;
                stats.grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
                if !stats.loss.is_finite() || !stats.grad_norm.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        iteration: self.iter as usize,
                        diagnostics: format!("{stats:?}"),
                    });
                }
                self.optimizer.step(&mut self.net.params, &grads);
                for (a, v) in acc.iter_mut().zip([
                    stats.policy_loss,
                    stats.value_loss,
                    stats.clip_fraction,
                    stats.grad_norm,
                ]) {
                    *a += v;
                }
                updates += 1;
            }
        }
        let eps = &collected.episodes;
        let rate = |f: fn(&EpisodeEnd) -> bool| {
            if eps.is_empty() {
                0.0
            } else {
                eps.iter().filter(|e| f(e)).count() as f64 / eps.len() as f64
            }
        };
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let m = IterationMetrics {
            iter: self.iter,
            steps: self.steps,
            rho,
            mean_reward: mean(&batch.rewards),
            goal_rate: rate(|e| e.goal),
            fault_collision_rate: rate(|e| e.at_fault),
            offroad_rate: rate(|e| e.off_road),
            early_term_rate: rate(|e| e.early_terminated),
            kl_prior: mean(&batch.kl),
            policy_loss: acc[0] / updates.max(1) as f64,
            value_loss: acc[1] / updates.max(1) as f64,
            clip_fraction: acc[2] / updates.max(1) as f64,
            grad_norm: acc[3] / updates.max(1) as f64,
            episode_return: mean(&eps.iter().map(|e| e.total_reward).collect::<Vec<_>>()),
        };
        if !m.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iter as usize,
                diagnostics: format!("non-finite metrics {m:?}"),
            });
        }
        Ok(m)
    }
}

pub fn checkpoint_path(out_dir: &Path, iter: u64) -> PathBuf {
    out_dir.join(format!("ckpt_{iter:06}.ckpt"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    pub steps: u64,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last: Option<IterationMetrics>,
}

impl TrainSummary {
    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("at least the initial checkpoint")
    }
}

/// Run training to completion, writing `metrics.csv` and checkpoints into `out_dir`.
pub fn train(file: TrainFile, base: &Path, out_dir: &Path) -> Result<TrainSummary> {
    train_with(file, base, out_dir, |_| {})
}

pub fn train_with(
    file: TrainFile,
    base: &Path,
    out_dir: &Path,
    mut on_iter: impl FnMut(&IterationMetrics),
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::new(file, base)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut csv = String::new();
    writeln!(csv, "{METRICS_HEADER}").unwrap();
    std::fs::write(&metrics_path, &csv).map_err(|e| Error::io(&metrics_path, e))?;
    let mut checkpoints = vec![checkpoint_path(out_dir, 0)];
    checkpoint::save(&trainer.net, &checkpoints[0])?;
    let mut last = None;
    let every = trainer.file.train.checkpoint_every.max(1);
    while !trainer.done() {
        let m = trainer.iterate()?;
        on_iter(&m);
        writeln!(csv, "{}", m.csv_row()).unwrap();
        std::fs::write(&metrics_path, &csv).map_err(|e| Error::io(&metrics_path, e))?;
        if trainer.iter % every == 0 || trainer.done() {
            let p = checkpoint_path(out_dir, trainer.iter);
            checkpoint::save(&trainer.net, &p)?;
            checkpoints.push(p);
        }
        last = Some(m);
    }
    Ok(TrainSummary {
        iterations: trainer.iter,
        steps: trainer.steps,
        metrics_path,
        checkpoints,
        last,
    })
}
