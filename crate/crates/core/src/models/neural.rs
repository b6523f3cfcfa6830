//! Two-layer neural node classifiers (dense, GCN, TAGCN, GAT) with a linear
//! sigmoid head, trained full-batch with Adam and early stopping.

use std::sync::Arc;

use dormant_autodiff::{Adam, AdamConfig, ParamCheckpoint, ParamId, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gat_layer, tagcn_layer, Activation, GatHead, HeadCombine};
use super::{mix_seed, node_key, Inputs, ModelKind, ModelSpec, TrainConfig};
use crate::eval::auprc;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Fc,
    Gcn,
    Tagcn { k: usize },
    Gat { heads: usize },
}

impl Architecture {
    pub fn from_spec(spec: ModelSpec, config: &TrainConfig) -> Self {
        match spec.kind {
            ModelKind::Gcn => Architecture::Gcn,
            ModelKind::Tagcn => Architecture::Tagcn { k: spec.k.unwrap_or(3) },
            ModelKind::Gat => Architecture::Gat {
                heads: config.gat_heads,
            },
            _ => Architecture::Fc,
        }
    }

    fn needs_graph(self) -> bool {
        self != Architecture::Fc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss of the dropout-masked forward pass that produced this epoch's update.
    pub loss: f64,
    /// Training-row loss of the updated weights with dropout off.
    pub train_loss: f64,
    /// Validation AUPRC, or negative validation loss when the validation rows hold no positives.
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub architecture: Architecture,
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub best_epoch: usize,
    pub params: ParamCheckpoint,
}

enum Layer {
    Dense { w: ParamId, b: ParamId },
    Tagcn { ws: Vec<ParamId>, b: ParamId },
    Gat { heads: Vec<[ParamId; 3]>, b: ParamId },
}

/// Parameter ids of one network bound to a store.
struct Network {
    architecture: Architecture,
    layers: Vec<Layer>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Parameter names and shapes in registration order.
fn layout(arch: Architecture, in_dim: usize, hidden: &[usize]) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut prev = in_dim;
    let last = hidden.len() - 1;
    for (l, &width) in hidden.iter().enumerate() {
        match arch {
            Architecture::Fc | Architecture::Gcn => out.push((format!("l{l}.w"), (prev, width))),
            Architecture::Tagcn { k } => {
                for j in 0..=k {
                    out.push((format!("l{l}.w{j}"), (prev, width)));
                }
            }
            Architecture::Gat { heads } => {
                let heads = if l == last { 1 } else { heads };
                let per = width / heads;
                for h in 0..heads {
                    out.push((format!("l{l}.h{h}.w"), (prev, per)));
                    out.push((format!("l{l}.h{h}.a_src"), (per, 1)));
                    out.push((format!("l{l}.h{h}.a_dst"), (per, 1)));
                }
            }
        }
        out.push((format!("l{l}.b"), (1, width)));
        prev = width;
    }
    out.push(("out.w".into(), (prev, 1)));
    out.push(("out.b".into(), (1, 1)));
    out
}

fn init_store(arch: Architecture, in_dim: usize, hidden: &[usize], seed: u64) -> Result<ParamStore, Error> {
    let mut store = ParamStore::new();
    for (name, (rows, cols)) in layout(arch, in_dim, hidden) {
        let value = if name.ends_with(".b") {
            Array2::zeros((rows, cols))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[node_key(&name)]));
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
        };
        store.register(name, value)?;
    }
    Ok(store)
}

impl Network {
    fn bind(arch: Architecture, hidden: &[usize], store: &ParamStore) -> Result<Self, Error> {
        let id = |n: String| store.id(&n).map_err(Error::from);
        let last = hidden.len() - 1;
        let mut layers = Vec::with_capacity(hidden.len());
        for l in 0..hidden.len() {
            let b = id(format!("l{l}.b"))?;
            layers.push(match arch {
                Architecture::Fc | Architecture::Gcn => Layer::Dense {
                    w: id(format!("l{l}.w"))?,
                    b,
                },
                Architecture::Tagcn { k } => Layer::Tagcn {
                    ws: (0..=k).map(|j| id(format!("l{l}.w{j}"))).collect::<Result<_, _>>()?,
                    b,
                },
                Architecture::Gat { heads } => {
                    let heads = if l == last { 1 } else { heads };
                    Layer::Gat {
                        heads: (0..heads)
                            .map(|h| {
                                Ok([
                                    id(format!("l{l}.h{h}.w"))?,
                                    id(format!("l{l}.h{h}.a_src"))?,
                                    id(format!("l{l}.h{h}.a_dst"))?,
                                ])
                            })
                            .collect::<Result<_, Error>>()?,
                        b,
                    }
                }
            });
        }
        Ok(Self {
            architecture: arch,
            layers,
            out_w: id("out.w".into())?,
            out_b: id("out.b".into())?,
        })
    }

    /// Fixed first-layer inputs: `X` for dense and attention layers, `ÂX` for
    /// GCN, and `X, AX, …, A^K X` for TAGCN.
    fn precompute(&self, inputs: &Inputs<'_>) -> Result<Vec<Array2<f64>>, Error> {
        let x = inputs.features.clone();
        let graph = inputs.graph;
        Ok(match (self.architecture, graph) {
            (Architecture::Gcn, Some(g)) => vec![g.with_loops.matrix().matmul_dense(x.view())?],
            (Architecture::Tagcn { k }, Some(g)) => {
                let mut powers = vec![x];
                for _ in 0..k {
                    let next = g.without_loops.matrix().matmul_dense(powers.last().expect("nonempty").view())?;
                    powers.push(next);
                }
                powers
            }
            _ => vec![x],
        })
    }

    /// Returns the `n x 1` probability column.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &Inputs<'_>,
        fixed: &[Array2<f64>],
        dropout: f64,
        mask_seed: u64,
    ) -> Result<Var, Error> {
        let keys = inputs.keys;
        let mut h: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = match (layer, h) {
                (Layer::Dense { w, b }, None) => {
                    let x = tape.constant(fixed[0].clone())?;
                    let w = tape.param(store, *w);
                    let z = tape.matmul(x, w)?;
                    let b = tape.param(store, *b);
                    tape.add_bias(z, b)?
                }
                (Layer::Dense { w, b }, Some(prev)) => {
                    let w = tape.param(store, *w);
                    let mut z = tape.matmul(prev, w)?;
                    if self.architecture == Architecture::Gcn {
                        let g = inputs.graph.ok_or_else(|| Error::Misaligned("graph required".into()))?;
                        z = tape.spmm(g.with_loops.matrix(), z)?;
                    }
                    let b = tape.param(store, *b);
                    tape.add_bias(z, b)?
                }
                (Layer::Tagcn { ws, b }, None) => {
                    let mut acc: Option<Var> = None;
                    for (power, w) in fixed.iter().zip(ws) {
                        let c = tape.constant(power.clone())?;
                        let w = tape.param(store, *w);
                        let term = tape.matmul(c, w)?;
                        acc = Some(match acc {
                            Some(a) => tape.add(a, term)?,
                            None => term,
                        });
                    }
                    let b = tape.param(store, *b);
                    tape.add_bias(acc.expect("at least W_0"), b)?
                }
                (Layer::Tagcn { ws, b }, Some(prev)) => {
                    let g = inputs.graph.ok_or_else(|| Error::Misaligned("graph required".into()))?;
                    let ws: Vec<Var> = ws.iter().map(|&w| tape.param(store, w)).collect();
                    let b = tape.param(store, *b);
                    tagcn_layer(tape, prev, &g.without_loops, &ws, Some(b), Activation::Identity)?
                }
                (Layer::Gat { heads, b }, prev) => {
                    let g = inputs.graph.ok_or_else(|| Error::Misaligned("graph required".into()))?;
                    let input = match prev {
                        Some(p) => p,
                        None => tape.constant(fixed[0].clone())?,
                    };
                    let heads: Vec<GatHead> = heads
                        .iter()
                        .map(|[w, s, d]| GatHead {
                            w: tape.param(store, *w),
                            a_src: tape.param(store, *s),
                            a_dst: tape.param(store, *d),
                        })
                        .collect();
                    let b = tape.param(store, *b);
                    gat_layer(tape, input, g, &heads, HeadCombine::Concat, Some(b), Activation::Identity)?.0
                }
            };
            let a = tape.relu(z)?;
            // Dropout ahead of an attention layer makes the softmax over large
            // neighbourhoods chase mask noise, so GAT drops only before the readout.
            let feeds_attention = matches!(self.architecture, Architecture::Gat { .. }) && l + 1 < self.layers.len();
            if feeds_attention {
                h = Some(a);
                continue;
            }
            let layer_seed = mix_seed(mask_seed, &[l as u64]);
            let dropped = tape.dropout(a, dropout, |r, c| {
                let u = (mix_seed(layer_seed, &[keys[r], c as u64]) >> 11) as f64 / (1u64 << 53) as f64;
                u >= dropout
            })?;
            h = Some(dropped);
        }
        let h = h.expect("at least one hidden layer");
        let w = tape.param(store, self.out_w);
        let b = tape.param(store, self.out_b);
        let logit = tape.matmul(h, w)?;
        let logit = tape.add_bias(logit, b)?;
        Ok(tape.sigmoid(logit)?)
    }
}

fn column(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).column(0).to_vec()
}

fn weighted_logloss(p: &[f64], labels: &[bool], rows: &[usize], pos_weight: f64) -> f64 {
    let mut total = 0.0;
    for &r in rows {
        let q = p[r].clamp(1e-12, 1.0 - 1e-12);
        total -= if labels[r] { pos_weight * q.ln() } else { (1.0 - q).ln() };
    }
    total / rows.len().max(1) as f64
}

pub(super) fn train(
    arch: Architecture,
    config: &TrainConfig,
    inputs: &Inputs<'_>,
    labels: &[bool],
    train_rows: &[usize],
    val_rows: &[usize],
    pos_weight: f64,
) -> Result<(NeuralModel, Vec<EpochRecord>), Error> {
    if arch.needs_graph() && inputs.graph.is_none() {
        return Err(Error::Misaligned("graph model called without a graph".into()));
    }
    let in_dim = inputs.features.ncols();
    let mut store = init_store(arch, in_dim, &config.hidden, config.seed)?;
    let net = Network::bind(arch, &config.hidden, &store)?;
    let fixed = net.precompute(inputs)?;
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );

    // Only training rows carry targets.
    let mut targets = vec![0.0; inputs.rows()];
    for &r in train_rows {
        targets[r] = if labels[r] { 1.0 } else { 0.0 };
    }
    let targets = Arc::new(targets);
    let rows = Arc::new(train_rows.to_vec());
    let val_labels: Vec<bool> = val_rows.iter().map(|&r| labels[r]).collect();
    let val_has_positive = val_labels.iter().any(|&l| l);

    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, store.clone());
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        let mask_seed = mix_seed(config.seed, &[0xd0, epoch as u64]);
        let mut tape = Tape::new(true);
        let pred = net.forward(&mut tape, &store, inputs, &fixed, config.dropout, mask_seed)?;
        let loss = tape.weighted_bce(pred, &rows, &targets, pos_weight)?;
        let loss_value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss)?;
        adam.step(&mut store, &grads.param_grads())?;

        let mut eval = Tape::new(false);
        let p = net.forward(&mut eval, &store, inputs, &fixed, 0.0, 0)?;
        let p = column(&eval, p);
        let val_score = if val_rows.is_empty() {
            -weighted_logloss(&p, labels, train_rows, pos_weight)
        } else if val_has_positive {
            let s: Vec<f64> = val_rows.iter().map(|&r| p[r]).collect();
            auprc(&s, &val_labels)?
        } else {
            -weighted_logloss(&p, labels, val_rows, pos_weight)
        };
        history.push(EpochRecord {
            epoch,
            loss: loss_value,
            train_loss: weighted_logloss(&p, labels, train_rows, pos_weight),
            val_score,
        });
        if val_score > best.0 {
            best = (val_score, epoch, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, best_store) = best;
    Ok((
        NeuralModel {
            architecture: arch,
            in_dim,
            hidden: config.hidden.clone(),
            best_epoch,
            params: best_store.to_checkpoint(),
        },
        history,
    ))
}

impl NeuralModel {
    pub fn predict(&self, inputs: &Inputs<'_>) -> Result<Vec<f64>, Error> {
        if inputs.features.ncols() != self.in_dim {
            return Err(Error::Misaligned(format!(
                "model expects {} features, got {}",
                self.in_dim,
                inputs.features.ncols()
            )));
        }
        if self.architecture.needs_graph() && inputs.graph.is_none() {
            return Err(Error::Misaligned("graph model called without a graph".into()));
        }
        let store = ParamStore::from_checkpoint(&self.params)?;
        let net = Network::bind(self.architecture, &self.hidden, &store)?;
        let fixed = net.precompute(inputs)?;
        let mut tape = Tape::new(false);
        let p = net.forward(&mut tape, &store, inputs, &fixed, 0.0, 0)?;
        Ok(column(&tape, p))
    }

    /// Parameter store holding the selected weights.
    pub fn store(&self) -> Result<ParamStore, Error> {
        Ok(ParamStore::from_checkpoint(&self.params)?)
    }
}
