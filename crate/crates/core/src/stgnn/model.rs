use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::panel::WindowSet;
use super::{ModelError, Result};
use crate::autodiff::{AdamW, Checkpoint, Tape, Tensor, TensorError, Var};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub window: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 12,
            hidden: 32,
            embed_dim: 16,
            kernel_size: 3,
            dilations: vec![1, 2],
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Time steps visible to the final output of the TCN stack.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }
}

/// Trainable arrays, stored in a fixed order:
/// `E1, E2, input_proj.{weight,bias}, tcn{i}.{weight,bias}..., graph.weight,
/// output_proj.{weight,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub num_stores: usize,
    pub num_features: usize,
    pub tensors: Vec<Tensor>,
}

/// Tape handles of every parameter, in [`ModelParams`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub e1: Var,
    pub e2: Var,
    pub in_w: Var,
    pub in_b: Var,
    pub tcn: Vec<(Var, Var)>,
    pub graph_w: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl BoundParams {
    pub fn from_slice(vars: &[Var], layers: usize) -> Self {
        assert_eq!(vars.len(), 7 + 2 * layers, "parameter count mismatch");
        let tail = 4 + 2 * layers;
        Self {
            e1: vars[0],
            e2: vars[1],
            in_w: vars[2],
            in_b: vars[3],
            tcn: (0..layers).map(|i| (vars[4 + 2 * i], vars[5 + 2 * i])).collect(),
            graph_w: vars[tail],
            out_w: vars[tail + 1],
            out_b: vars[tail + 2],
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.e1, self.e2, self.in_w, self.in_b];
        for (w, b) in &self.tcn {
            v.push(*w);
            v.push(*b);
        }
        v.extend([self.graph_w, self.out_w, self.out_b]);
        v
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().param()
}

impl ModelParams {
    /// Seeded initialization: weights uniform in `+-1/sqrt(fan_in)`,
    /// embeddings `0.1 * N(0, 1)`, biases zero.
    pub fn init(config: ModelConfig, num_stores: usize, num_features: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c, d, k) = (config.hidden, config.embed_dim, config.kernel_size);
        let mut normal = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(shape.to_vec(), data).unwrap().param()
        };
        let e1 = normal(&[num_stores, d]);
        let e2 = normal(&[num_stores, d]);
        let mut tensors = vec![
            e1,
            e2,
            uniform(&mut rng, &[c, num_features], num_features),
            Tensor::zeros(&[c]).param(),
        ];
        for _ in &config.dilations {
            tensors.push(uniform(&mut rng, &[c, c, k], c * k));
            tensors.push(Tensor::zeros(&[c]).param());
        }
        tensors.push(uniform(&mut rng, &[c, c], c));
        tensors.push(uniform(&mut rng, &[1, c], c));
        tensors.push(Tensor::zeros(&[1]).param());
        Self {
            config,
            num_stores,
            num_features,
            tensors,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["E1", "E2", "input_proj.weight", "input_proj.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.config.dilations.len() {
            v.push(format!("tcn{}.weight", i + 1));
            v.push(format!("tcn{}.bias", i + 1));
        }
        v.extend(["graph.weight", "output_proj.weight", "output_proj.bias"].map(String::from));
        v
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names()
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names().iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t)).collect();
        BoundParams::from_slice(&vars, self.config.dilations.len())
    }

    /// Learned adjacency as a row-major `S x S` matrix.
    pub fn adjacency(&self) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let a = graph_learner(&mut tape, p.e1, p.e2).expect("embedding shapes are consistent");
        tape.value(a).data().to_vec()
    }

    /// Predicted log-differences (`N x S`) for every window, evaluated in
    /// chunks to bound memory.
    pub fn predict_diff(&self, ws: &WindowSet) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(ws.len() * ws.num_stores);
        let mut start = 0;
        while start < ws.len() {
            let end = (start + CHUNK).min(ws.len());
            let mut tape = Tape::new();
            let p = self.bind(&mut tape);
            let x = tape.constant(ws.inputs_tensor(start..end));
            let y = model_forward(&mut tape, x, &p, &self.config)?;
            out.extend_from_slice(tape.value(y).data());
            start = end;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, optimizer: Option<&AdamW>, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut metadata = extra.clone();
        let c = &self.config;
        let dil: Vec<String> = c.dilations.iter().map(usize::to_string).collect();
        for (k, v) in [
            ("window", c.window.to_string()),
            ("hidden", c.hidden.to_string()),
            ("embed_dim", c.embed_dim.to_string()),
            ("kernel_size", c.kernel_size.to_string()),
            ("dilations", dil.join(",")),
            ("seed", c.seed.to_string()),
            ("num_stores", self.num_stores.to_string()),
            ("num_features", self.num_features.to_string()),
        ] {
            metadata.insert(k.to_string(), v);
        }
        Checkpoint {
            metadata,
            tensors: self
                .names()
                .into_iter()
                .zip(&self.tensors)
                .map(|(n, t)| {
                    let mut t = t.clone();
                    t.zero_grad();
                    (n, t)
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ckpt.metadata
                .get(k)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing metadata {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            meta(k)?
                .parse()
                .map_err(|_| ModelError::Checkpoint(format!("bad metadata {k}")))
        };
        let dilations = meta("dilations")?
            .split(',')
            .map(|d| d.parse().map_err(|_| ModelError::Checkpoint("bad dilations".into())))
            .collect::<Result<Vec<usize>>>()?;
        let config = ModelConfig {
            window: num("window")?,
            hidden: num("hidden")?,
            embed_dim: num("embed_dim")?,
            kernel_size: num("kernel_size")?,
            dilations,
            seed: meta("seed")?
                .parse()
                .map_err(|_| ModelError::Checkpoint("bad seed".into()))?,
        };
        let mut params = ModelParams::init(config, num("num_stores")?, num("num_features")?);
        for (name, slot) in params.names().into_iter().zip(params.tensors.iter_mut()) {
            let t = ckpt
                .tensor(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(params)
    }
}

/// `A = softmax_rows(ReLU(E1 E2^T))`.
pub fn graph_learner(tape: &mut Tape, e1: Var, e2: Var) -> std::result::Result<Var, TensorError> {
    let e2t = tape.transpose(e2)?;
    let logits = tape.matmul(e1, e2t)?;
    let logits = tape.relu(logits);
    tape.softmax_rows(logits)
}

/// Input projection followed by the causal dilated conv stack, shared across
/// stores. Returns `(projection, hidden)`, both `[B, C, S, L]`.
pub fn tcn_forward(
    tape: &mut Tape,
    x: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
) -> std::result::Result<(Var, Var), TensorError> {
    let proj = tape.conv1x1(x, p.in_w)?;
    let proj = tape.add_bias(proj, p.in_b, 1)?;
    let mut h = proj;
    for ((w, b), &dilation) in p.tcn.iter().zip(&cfg.dilations) {
        h = tape.causal_conv1d(h, *w, dilation)?;
        h = tape.add_bias(h, *b, 1)?;
        h = tape.relu(h);
    }
    Ok((proj, h))
}

/// Predicted next-step log-difference `[B, S]` for a batch `x: [B, F, S, L]`.
pub fn model_forward(
    tape: &mut Tape,
    x: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
) -> std::result::Result<Var, TensorError> {
    let (proj, h) = tcn_forward(tape, x, p, cfg)?;
    let h_last = tape.last_step(h)?;
    let r_last = tape.last_step(proj)?;
    let a = graph_learner(tape, p.e1, p.e2)?;
    let z = tape.matmul(a, h_last)?;
    let z = tape.matmul(z, p.graph_w)?;
    let combined = tape.add(z, r_last)?;
    let combined = tape.relu(combined);
    let w_out = tape.transpose(p.out_w)?;
    let out = tape.matmul(combined, w_out)?;
    let out = tape.add_bias(out, p.out_b, 2)?;
    let shape = tape.shape(out).to_vec();
    tape.reshape(out, &shape[..2])
}
