//! Policy/value network: per-set encoders, partner-to-road cross-attention,
//! attention pooling and separate MLP heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, ParamId, ParamStore, Tape};
use super::tensor::Tensor;
use crate::observation::{ObsLayout, COND_DIM, EGO_DIM, NEIGHBOR_DIM, ROAD_DIM};
use crate::world::EnvConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub layout: ObsLayout,
    /// Embedding width shared by encoders and attention.
    pub width: usize,
    pub encoder_depth: usize,
    pub heads: usize,
    pub head_width: usize,
    pub head_depth: usize,
    pub tokens: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            layout: ObsLayout {
                max_neighbors: 16,
                max_road_points: 64,
            },
            width: 128,
            encoder_depth: 2,
            heads: 4,
            head_width: 340,
            head_depth: 2,
            tokens: 49,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.encoder_depth == 0 || self.head_depth == 0 || self.head_width == 0 {
            return Err(Error::Config("depths and head width must be positive".into()));
        }
        if self.tokens == 0 {
            return Err(Error::Config("token count must be positive".into()));
        }
        Ok(())
    }

    fn z_width(&self) -> usize {
        3 * self.width + COND_DIM
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    ego: Vec<Dense>,
    partner: Vec<Dense>,
    road: Vec<Dense>,
    att_q: Dense,
    att_k: Dense,
    att_v: Dense,
    att_o: Dense,
    att_null_k: ParamId,
    att_null_v: ParamId,
    pool_p_query: ParamId,
    pool_p_key: Dense,
    pool_p_null_k: ParamId,
    pool_p_null_v: ParamId,
    pool_r_query: ParamId,
    pool_r_key: Dense,
    pool_r_null_k: ParamId,
    pool_r_null_v: ParamId,
    policy: Vec<Dense>,
    value: Vec<Dense>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Orthogonal(f64),
    Normal(f64),
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let t = match init {
            Init::Orthogonal(gain) => orthogonal(rows, cols, gain, self.rng),
            Init::Normal(std) => Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *self.rng);
                        std * z
                    })
                    .collect(),
            ),
        };
        self.store.add(name, t)
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Dense {
        let w = self.tensor(format!("{name}.w"), fan_in, fan_out, Init::Orthogonal(gain));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Dense { w, b }
    }

    fn mlp(&mut self, name: &str, dims: &[usize], gains: &[f64]) -> Vec<Dense> {
        dims.windows(2)
            .enumerate()
            .map(|(k, d)| self.dense(&format!("{name}.{k}"), d[0], d[1], gains[k]))
            .collect()
    }
}

/// Orthogonal rows or columns (whichever is smaller) scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let (n, m) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut t = Tensor::zeros(rows, cols);
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (j, i) } else { (i, j) };
            t.data[r * cols + c] = gain * x;
        }
    }
    t
}

fn build(cfg: &NetConfig) -> (ParamStore, Ids) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Builder {
        store: ParamStore::default(),
        rng: &mut rng,
    };
    let h = cfg.width;
    let g = 2f64.sqrt();
    let enc = |input: usize| {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(h).take(cfg.encoder_depth));
        dims
    };
    let enc_gains = vec![g; cfg.encoder_depth];
    let ego = b.mlp("ego", &enc(EGO_DIM), &enc_gains);
    let partner = b.mlp("partner", &enc(NEIGHBOR_DIM), &enc_gains);
    let road = b.mlp("road", &enc(ROAD_DIM), &enc_gains);
    let att_q = b.dense("cross.q", h, h, 1.0);
    let att_k = b.dense("cross.k", h, h, 1.0);
    let att_v = b.dense("cross.v", h, h, 1.0);
    let att_o = b.dense("cross.o", h, h, 1.0);
    let att_null_k = b.tensor("cross.null_k".into(), 1, h, Init::Normal(0.1));
    let att_null_v = b.tensor("cross.null_v".into(), 1, h, Init::Normal(0.1));
    let pool_p_query = b.tensor("pool_partner.query".into(), 1, h, Init::Normal(0.1));
    let pool_p_key = b.dense("pool_partner.key", h, h, 1.0);
    let pool_p_null_k = b.tensor("pool_partner.null_k".into(), 1, h, Init::Normal(0.1));
    let pool_p_null_v = b.tensor("pool_partner.null_v".into(), 1, h, Init::Normal(0.1));
    let pool_r_query = b.tensor("pool_road.query".into(), 1, h, Init::Normal(0.1));
    let pool_r_key = b.dense("pool_road.key", h, h, 1.0);
    let pool_r_null_k = b.tensor("pool_road.null_k".into(), 1, h, Init::Normal(0.1));
    let pool_r_null_v = b.tensor("pool_road.null_v".into(), 1, h, Init::Normal(0.1));
    let head_dims = |out: usize| {
        let mut dims = vec![cfg.z_width()];
        dims.extend(std::iter::repeat(cfg.head_width).take(cfg.head_depth));
        dims.push(out);
        dims
    };
    let mut pg = vec![g; cfg.head_depth];
    pg.push(0.01);
    let policy = b.mlp("policy", &head_dims(cfg.tokens), &pg);
    let mut vg = vec![g; cfg.head_depth];
    vg.push(1.0);
    let value = b.mlp("value", &head_dims(1), &vg);
    let ids = Ids {
        ego,
        partner,
        road,
        att_q,
        att_k,
        att_v,
        att_o,
        att_null_k,
        att_null_v,
        pool_p_query,
        pool_p_key,
        pool_p_null_k,
        pool_p_null_v,
        pool_r_query,
        pool_r_key,
        pool_r_null_k,
        pool_r_null_v,
        policy,
        value,
    };
    (b.store, ids)
}

/// Observations split into dense per-agent parts and ragged valid-row sets.
///
/// Valid rows of each set are sorted into a canonical order, so any
/// permutation of the input rows yields identical arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub ego: Tensor,
    pub cond: Tensor,
    pub partners: Tensor,
    pub partner_offsets: Vec<usize>,
    pub road: Tensor,
    pub road_offsets: Vec<usize>,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.ego.rows
    }

    pub fn is_empty(&self) -> bool {
        self.ego.rows == 0
    }

    pub fn from_flat<S: AsRef<[f64]>>(layout: &ObsLayout, rows: &[S]) -> Result<Self> {
        let n = rows.len();
        let mut ego = Vec::with_capacity(n * EGO_DIM);
        let mut cond = Vec::with_capacity(n * COND_DIM);
        let mut partners = Vec::new();
        let mut road = Vec::new();
        let mut partner_offsets = vec![0];
        let mut road_offsets = vec![0];
        for row in rows {
            let x = row.as_ref();
            if x.len() != layout.dim() {
                return Err(Error::LayoutMismatch(format!("expected {} features, got {}", layout.dim(), x.len())));
            }
            ego.extend_from_slice(&x[layout.ego()]);
            cond.extend_from_slice(&x[layout.conditioning()]);
            gather(&x[layout.neighbors()], &x[layout.neighbor_mask()], NEIGHBOR_DIM, &mut partners);
            partner_offsets.push(partners.len() / NEIGHBOR_DIM);
            gather(&x[layout.road()], &x[layout.road_mask()], ROAD_DIM, &mut road);
            road_offsets.push(road.len() / ROAD_DIM);
        }
        Ok(ObsBatch {
            ego: Tensor::from_vec(n, EGO_DIM, ego),
            cond: Tensor::from_vec(n, COND_DIM, cond),
            partners: Tensor::from_vec(partners.len() / NEIGHBOR_DIM, NEIGHBOR_DIM, partners),
            partner_offsets,
            road: Tensor::from_vec(road.len() / ROAD_DIM, ROAD_DIM, road),
            road_offsets,
        })
    }
}

fn gather(rows: &[f64], mask: &[f64], width: usize, out: &mut Vec<f64>) {
    let mut valid: Vec<&[f64]> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.5)
        .map(|(k, _)| &rows[k * width..(k + 1) * width])
        .collect();
    valid.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for r in valid {
        out.extend_from_slice(r);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Forward-pass handles for gradient computation.
pub struct Traced<'p> {
    pub tape: Tape<'p>,
    pub logits: NodeId,
    pub values: NodeId,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub config: NetConfig,
    pub params: ParamStore,
    /// Environment settings the policy was trained with, when known.
    pub env: Option<EnvConfig>,
    ids: Ids,
}

impl PartialEq for PolicyNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.env == other.env
    }
}

impl PolicyNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (params, ids) = build(&config);
        Ok(PolicyNet {
            config,
            params,
            env: None,
            ids,
        })
    }

    /// Replace all parameters; names and shapes must match this config.
    pub fn with_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        let mut net = PolicyNet::new(config)?;
        if params.names != net.params.names {
            return Err(Error::LayoutMismatch("parameter names differ from config".into()));
        }
        for (a, b) in params.tensors.iter().zip(&net.params.tensors) {
            if (a.rows, a.cols) != (b.rows, b.cols) {
                return Err(Error::LayoutMismatch("parameter shape differs from config".into()));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Overwrite the bias of the final policy layer, e.g. to start from a prior.
    pub fn set_policy_bias(&mut self, bias: &[f64]) -> Result<()> {
        let id = self.ids.policy.last().expect("policy head has an output layer").b;
        let t = &mut self.params.tensors[id];
        if bias.len() != t.data.len() {
            return Err(Error::Config(format!("policy bias has {} entries, expected {}", bias.len(), t.data.len())));
        }
        t.data.copy_from_slice(bias);
        Ok(())
    }

    pub fn trace<'p>(&'p self, batch: &ObsBatch) -> Traced<'p> {
        self.trace_with(&self.params, batch)
    }

    /// Record the forward pass against an explicit parameter store of this net's shape.
    pub fn trace_with<'p>(&self, params: &'p ParamStore, batch: &ObsBatch) -> Traced<'p> {
        let ids = &self.ids;
        let mut t = Tape::new(params);
        let n = batch.len();
        let mlp = |t: &mut Tape<'p>, mut x: NodeId, layers: &[Dense], last_linear: bool| {
            for (k, d) in layers.iter().enumerate() {
                x = t.linear(x, d.w, Some(d.b));
                if !(last_linear && k + 1 == layers.len()) {
                    x = t.tanh(x);
                }
            }
            x
        };
        let ego_in = t.input(batch.ego.clone());
        let e = mlp(&mut t, ego_in, &ids.ego, false);
        let p_in = t.input(batch.partners.clone());
        let p = mlp(&mut t, p_in, &ids.partner, false);
        let r_in = t.input(batch.road.clone());
        let r = mlp(&mut t, r_in, &ids.road, false);

        let q = t.linear(p, ids.att_q.w, Some(ids.att_q.b));
        let k = t.linear(r, ids.att_k.w, Some(ids.att_k.b));
        let v = t.linear(r, ids.att_v.w, Some(ids.att_v.b));
        let a = t.attention(
            q,
            k,
            v,
            &batch.partner_offsets,
            &batch.road_offsets,
            ids.att_null_k,
            ids.att_null_v,
            self.config.heads,
        );
        let a = t.linear(a, ids.att_o.w, Some(ids.att_o.b));
        let p2 = t.add(p, a);

        let per_agent: Vec<usize> = (0..=n).collect();
        let qp = t.repeat_param(ids.pool_p_query, n);
        let kp = t.linear(p2, ids.pool_p_key.w, Some(ids.pool_p_key.b));
        let pool_p = t.attention(
            qp,
            kp,
            p2,
            &per_agent,
            &batch.partner_offsets,
            ids.pool_p_null_k,
            ids.pool_p_null_v,
            self.config.heads,
        );
        let qr = t.repeat_param(ids.pool_r_query, n);
        let kr = t.linear(r, ids.pool_r_key.w, Some(ids.pool_r_key.b));
        let pool_r = t.attention(
            qr,
            kr,
            r,
            &per_agent,
            &batch.road_offsets,
            ids.pool_r_null_k,
            ids.pool_r_null_v,
            self.config.heads,
        );
        let c = t.input(batch.cond.clone());
        let z = t.concat(&[e, c, pool_p, pool_r]);
        let logits = mlp(&mut t, z, &ids.policy, true);
        let values = mlp(&mut t, z, &ids.value, true);
        Traced {
            tape: t,
            logits,
            values,
        }
    }

    pub fn forward(&self, batch: &ObsBatch) -> Vec<PolicyOutput> {
        let tr = self.trace(batch);
        let l = tr.tape.value(tr.logits);
        let v = tr.tape.value(tr.values);
        (0..batch.len())
            .map(|i| PolicyOutput {
                logits: l.row(i).to_vec(),
                value: v.data[i],
            })
            .collect()
    }

    pub fn forward_flat<S: AsRef<[f64]>>(&self, rows: &[S]) -> Result<Vec<PolicyOutput>> {
        let batch = ObsBatch::from_flat(&self.config.layout, rows)?;
        Ok(self.forward(&batch))
    }

    /// Gradients of `sum(dlogits * logits) + sum(dvalues * values)`.
    pub fn gradients(&self, batch: &ObsBatch, dlogits: Tensor, dvalues: Tensor) -> Vec<Tensor> {
        let tr = self.trace(batch);
        tr.tape.backward(vec![(tr.logits, dlogits), (tr.values, dvalues)])
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Sample,
    Greedy,
}

impl std::str::FromStr for ActionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(ActionMode::Sample),
            "greedy" => Ok(ActionMode::Greedy),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Pick a token; greedy breaks ties toward the lowest index.
pub fn sample_action(logits: &[f64], rng: &mut impl rand::Rng, mode: ActionMode) -> (usize, f64) {
    let lp = log_softmax(logits);
    let token = match mode {
        ActionMode::Greedy => {
            let mut best = 0;
            for (k, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = k;
                }
            }
            best
        }
        ActionMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = lp.len() - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = k;
                    break;
                }
            }
            pick
        }
    };
    (token, lp[token])
}
