use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{mask_port, outputs_of, ArchGraph, CombineMode, Plan};
use super::spec::BlockSpec;
use super::DslError;
use crate::engine::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::framework::{ports, ModelModule, ModuleSignature, ReaderError, Task, TensorPort};
use crate::textpipe::{keys, random_table, Batch, Vocab, CHAR_BUCKETS};

/// Large negative score given to padding positions.
const MASK_PENALTY: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const NAMES: &'static [&'static str] = &["linear", "relu", "tanh", "sigmoid"];

    pub(crate) fn parse(name: &str) -> Self {
        match name {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => Activation::Linear,
        }
    }

    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Linear => v,
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

/// A compiled architecture with its parameters.
#[derive(Debug, Clone)]
pub struct DslModel {
    graph: ArchGraph,
    params: ParamStore,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_f64(vec![rows, cols], data).expect("sized above")
}

fn param_name(spec: &BlockSpec, name: &str) -> String {
    format!("{:02}.{}.{}", spec.index, spec.block_type, name)
}

/// Matrices and bias vectors of one block, in allocation order.
fn block_params(plan: &Plan) -> Vec<(String, Vec<usize>)> {
    let m = |n: &str, r: usize, c: usize| (n.to_string(), vec![r, c]);
    let v = |n: &str, r: usize| (n.to_string(), vec![r]);
    match *plan {
        Plan::Embed | Plan::Combine { .. } | Plan::Pool { .. } => vec![],
        Plan::CharEmbed { units } => vec![m("chars", CHAR_BUCKETS, units)],
        Plan::Dense { din, units, .. } => vec![m("w", din, units), v("b", units)],
        Plan::Highway { dim } => vec![
            m("w_gate", dim, dim),
            v("b_gate", dim),
            m("w_hidden", dim, dim),
            v("b_hidden", dim),
        ],
        Plan::SeqEncoder {
            din,
            units,
            bidirectional,
            ..
        } => {
            let dirs: &[&str] = if bidirectional {
                &["fw", "bw"]
            } else {
                &["fw"]
            };
            dirs.iter()
                .flat_map(|d| {
                    [
                        m(&format!("{d}.w"), din, 3 * units),
                        m(&format!("{d}.u_zr"), units, 2 * units),
                        m(&format!("{d}.u_n"), units, units),
                        v(&format!("{d}.b"), 3 * units),
                    ]
                })
                .collect()
        }
        Plan::Attention {
            da, db, bilinear, ..
        } => {
            if bilinear {
                vec![m("w", da, db)]
            } else {
                vec![]
            }
        }
        Plan::SpanHead { dim, dq, .. } => vec![
            m("start.w", dq, dim),
            m("start.v", dim, 1),
            m("end.w", dq, dim),
            m("end.v", dim, 1),
        ],
        Plan::Classifier { din, classes } => vec![m("w", din, classes), v("b", classes)],
    }
}

/// Allocates parameters for `graph`: the shared embedding table (copied from
/// `embeddings` when given) and Glorot-uniform matrices with zero biases for
/// every block, all drawn from `seed`.
pub fn instantiate(
    graph: ArchGraph,
    vocab: &Vocab,
    embeddings: Option<&Tensor>,
    seed: u64,
) -> Result<DslModel, DslError> {
    let mut m = DslModel::new(graph);
    m.allocate(vocab.len(), embeddings, seed)?;
    Ok(m)
}

fn mask_values<'b>(batch: &'b Batch, seq: &str) -> Result<&'b [f64], ReaderError> {
    let port = mask_port(seq).ok_or_else(|| ReaderError::Config(format!("no mask for {seq}")))?;
    Ok(batch.port(&port)?.as_f64()?)
}

/// `[rows]` values repeated `inner` times each.
fn repeat_each(values: &[f64], inner: usize) -> Vec<f64> {
    values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, inner))
        .collect()
}

fn constant(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, ReaderError> {
    Ok(tape.constant(&Tensor::from_f64(shape, data)?)?)
}

struct Gru {
    w: Var,
    u_zr: Var,
    u_n: Var,
    b: Var,
    units: usize,
}

impl Gru {
    /// Runs over `x: [B, L, d]`; padded steps carry the previous state.
    fn run(
        &self,
        tape: &mut Tape,
        x: Var,
        mask: &[f64],
        reverse: bool,
    ) -> Result<Var, ReaderError> {
        let (b, l) = (tape.shape(x)[0], tape.shape(x)[1]);
        let u = self.units;
        let xw = tape.matmul(x, self.w)?;
        let xp = tape.add(xw, self.b)?;
        let mut h = constant(tape, vec![b, u], vec![0.0; b * u])?;
        let mut outs: Vec<Option<Var>> = vec![None; l];
        let order: Vec<usize> = if reverse {
            (0..l).rev().collect()
        } else {
            (0..l).collect()
        };
        for t in order {
            let xt = tape.select(xp, 1, t)?;
            let xz = tape.slice(xt, 1, 0, u)?;
            let xr = tape.slice(xt, 1, u, u)?;
            let xn = tape.slice(xt, 1, 2 * u, u)?;
            let hzr = tape.matmul(h, self.u_zr)?;
            let hz = tape.slice(hzr, 1, 0, u)?;
            let hr = tape.slice(hzr, 1, u, u)?;
            let z_in = tape.add(xz, hz)?;
            let z = tape.sigmoid(z_in);
            let r_in = tape.add(xr, hr)?;
            let r = tape.sigmoid(r_in);
            let rh = tape.mul(r, h)?;
            let rhu = tape.matmul(rh, self.u_n)?;
            let n_in = tape.add(xn, rhu)?;
            let n = tape.tanh(n_in);
            let keep = tape.sub(h, n)?;
            let zk = tape.mul(z, keep)?;
            let next = tape.add(n, zk)?;
            let col: Vec<f64> = (0..b).map(|bi| mask[bi * l + t]).collect();
            h = if col.iter().all(|&m| m == 1.0) {
                next
            } else {
                let m = constant(tape, vec![b, u], repeat_each(&col, u))?;
                let delta = tape.sub(next, h)?;
                let md = tape.mul(m, delta)?;
                tape.add(h, md)?
            };
            outs[t] = Some(h);
        }
        let outs: Vec<Var> = outs
            .into_iter()
            .map(|o| o.expect("every step visited"))
            .collect();
        Ok(tape.stack(&outs, 1)?)
    }
}

impl DslModel {
    /// A model without parameters; see [`DslModel::allocate`].
    pub fn new(graph: ArchGraph) -> Self {
        Self {
            graph,
            params: ParamStore::new(),
        }
    }

    pub fn graph(&self) -> &ArchGraph {
        &self.graph
    }

    pub fn allocate(
        &mut self,
        vocab_size: usize,
        embeddings: Option<&Tensor>,
        seed: u64,
    ) -> Result<(), DslError> {
        let mut params = ParamStore::new();
        if self.graph.uses_embeddings() {
            let dim = self.graph.dims.repr_dim_input;
            let table = match embeddings {
                Some(t) => {
                    if t.shape() != [vocab_size, dim] {
                        return Err(crate::engine::EngineError::ShapeMismatch {
                            op: "embeddings",
                            left: t.shape().to_vec(),
                            right: vec![vocab_size, dim],
                        }
                        .into());
                    }
                    t.clone()
                }
                None => random_table(vocab_size, dim, seed),
            };
            params.insert("embeddings", table)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        for (spec, plan) in self.graph.blocks.iter().zip(&self.graph.plans) {
            for (name, shape) in block_params(plan) {
                let t = if shape.len() == 2 {
                    glorot(&mut rng, shape[0], shape[1])
                } else {
                    Tensor::zeros(shape)
                };
                params.insert(param_name(spec, &name), t)?;
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Scalars owned by block `index` (the shared embedding table excluded).
    pub fn block_param_count(&self, index: usize) -> usize {
        let prefix = format!("{index:02}.");
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Values of every key, start keys that were read included.
    pub fn forward_all(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<String, Var>, ReaderError> {
        let mut vals: BTreeMap<String, Var> = BTreeMap::new();
        for (spec, plan) in self.graph.blocks.iter().zip(&self.graph.plans) {
            let p = |name: &str| bound.var(&param_name(spec, name));
            let input = |i: usize| -> Result<Var, ReaderError> {
                vals.get(&spec.inputs[i]).copied().ok_or_else(|| {
                    ReaderError::Config(format!("key {} has no value", spec.inputs[i]))
                })
            };
            let out: Vec<Var> = match plan {
                Plan::Embed => {
                    let ids = batch.port(&spec.inputs[0])?;
                    let table = bound.var("embeddings")?;
                    vec![tape.lookup(table, ids)?]
                }
                Plan::CharEmbed { units } => {
                    let ids = batch.port(&spec.inputs[0])?;
                    let shape = ids.shape().to_vec();
                    let emb = tape.lookup(p("chars")?, ids)?;
                    let mask: Vec<f64> = ids
                        .as_i64()?
                        .iter()
                        .map(|&c| f64::from(u8::from(c != 0)))
                        .collect();
                    let w = shape[2];
                    let counts: Vec<f64> = mask
                        .chunks(w.max(1))
                        .map(|c| 1.0 / c.iter().sum::<f64>().max(1.0))
                        .collect();
                    let mut full = shape.clone();
                    full.push(*units);
                    let m = constant(tape, full, repeat_each(&mask, *units))?;
                    let masked = tape.mul(emb, m)?;
                    let summed = tape.reduce_sum(masked, 2)?;
                    let inv = constant(
                        tape,
                        vec![shape[0], shape[1], *units],
                        repeat_each(&counts, *units),
                    )?;
                    vec![tape.mul(summed, inv)?]
                }
                Plan::Dense {
                    activation,
                    dropout,
                    ..
                } => {
                    let x = input(0)?;
                    let h = tape.matmul(x, p("w")?)?;
                    let h = tape.add(h, p("b")?)?;
                    let h = activation.apply(tape, h);
                    vec![tape.dropout(h, *dropout, training, rng)?]
                }
                Plan::Highway { .. } => {
                    let x = input(0)?;
                    let g = tape.matmul(x, p("w_gate")?)?;
                    let g = tape.add(g, p("b_gate")?)?;
                    let gate = tape.sigmoid(g);
                    let h = tape.matmul(x, p("w_hidden")?)?;
                    let h = tape.add(h, p("b_hidden")?)?;
                    let hidden = tape.relu(h);
                    let delta = tape.sub(hidden, x)?;
                    let gd = tape.mul(gate, delta)?;
                    vec![tape.add(x, gd)?]
                }
                Plan::SeqEncoder {
                    units,
                    bidirectional,
                    seq,
                    ..
                } => {
                    let x = input(0)?;
                    let mask = mask_values(batch, seq)?;
                    let cell = |d: &str| -> Result<Gru, ReaderError> {
                        Ok(Gru {
                            w: p(&format!("{d}.w"))?,
                            u_zr: p(&format!("{d}.u_zr"))?,
                            u_n: p(&format!("{d}.u_n"))?,
                            b: p(&format!("{d}.b"))?,
                            units: *units,
                        })
                    };
                    let fw = cell("fw")?.run(tape, x, mask, false)?;
                    if *bidirectional {
                        let bw = cell("bw")?.run(tape, x, mask, true)?;
                        vec![tape.concat(&[fw, bw], 2)?]
                    } else {
                        vec![fw]
                    }
                }
                Plan::Attention {
                    bilinear, seq_b, ..
                } => {
                    let (a, b) = (input(0)?, input(1)?);
                    let a2 = if *bilinear {
                        tape.matmul(a, p("w")?)?
                    } else {
                        a
                    };
                    let bt = tape.transpose(b)?;
                    let scores = tape.matmul(a2, bt)?;
                    let (bs, la, lb) = (
                        tape.shape(scores)[0],
                        tape.shape(scores)[1],
                        tape.shape(scores)[2],
                    );
                    let mb = mask_values(batch, seq_b)?;
                    let mut mask = Vec::with_capacity(bs * la * lb);
                    for row in mb.chunks(lb.max(1)).take(bs) {
                        for _ in 0..la {
                            mask.extend_from_slice(row);
                        }
                    }
                    let probs = tape.masked_softmax(scores, &mask, 2)?;
                    vec![tape.matmul(probs, b)?]
                }
                Plan::Combine { mode } => {
                    let xs: Vec<Var> = (0..spec.inputs.len())
                        .map(input)
                        .collect::<Result<_, _>>()?;
                    let v = match mode {
                        CombineMode::Concat => {
                            let axis = tape.shape(xs[0]).len() - 1;
                            tape.concat(&xs, axis)?
                        }
                        CombineMode::Mul | CombineMode::Sub => {
                            let mut acc = xs[0];
                            for &x in &xs[1..] {
                                acc = if *mode == CombineMode::Mul {
                                    tape.mul(acc, x)?
                                } else {
                                    tape.sub(acc, x)?
                                };
                            }
                            acc
                        }
                    };
                    vec![v]
                }
                Plan::Pool { max, seq } => {
                    let x = input(0)?;
                    let shape = tape.shape(x).to_vec();
                    let (bs, d) = (shape[0], shape[2]);
                    let mask = mask_values(batch, seq)?;
                    if *max {
                        let pen: Vec<f64> = mask.iter().map(|m| (m - 1.0) * MASK_PENALTY).collect();
                        let pen = constant(tape, shape, repeat_each(&pen, d))?;
                        let shifted = tape.add(x, pen)?;
                        vec![tape.reduce_max(shifted, 1)?]
                    } else {
                        let l = shape[1];
                        let m = constant(tape, shape, repeat_each(mask, d))?;
                        let masked = tape.mul(x, m)?;
                        let summed = tape.reduce_sum(masked, 1)?;
                        let inv: Vec<f64> = mask
                            .chunks(l.max(1))
                            .take(bs)
                            .map(|r| 1.0 / r.iter().sum::<f64>().max(1.0))
                            .collect();
                        let inv = constant(tape, vec![bs, d], repeat_each(&inv, d))?;
                        vec![tape.mul(summed, inv)?]
                    }
                }
                Plan::SpanHead { seq, .. } => {
                    let (states, q) = (input(0)?, input(1)?);
                    let (bs, l) = (tape.shape(states)[0], tape.shape(states)[1]);
                    let mask = mask_values(batch, seq)?.to_vec();
                    let pen: Vec<f64> = mask.iter().map(|m| (m - 1.0) * MASK_PENALTY).collect();
                    let mut outs = Vec::with_capacity(2);
                    for which in ["start", "end"] {
                        let qp = tape.matmul(q, p(&format!("{which}.w"))?)?;
                        let qe = tape.expand(qp, 1, l)?;
                        let prod = tape.mul(states, qe)?;
                        let bil = tape.reduce_sum(prod, 2)?;
                        let lin = tape.matmul(states, p(&format!("{which}.v"))?)?;
                        let lin = tape.reshape(lin, vec![bs, l])?;
                        let raw = tape.add(bil, lin)?;
                        let m = constant(tape, vec![bs, l], mask.clone())?;
                        let masked = tape.mul(raw, m)?;
                        let pv = constant(tape, vec![bs, l], pen.clone())?;
                        outs.push(tape.add(masked, pv)?);
                    }
                    outs
                }
                Plan::Classifier { .. } => {
                    let x = input(0)?;
                    let h = tape.matmul(x, p("w")?)?;
                    vec![tape.add(h, p("b")?)?]
                }
            };
            for (key, v) in outputs_of(spec).into_iter().zip(out) {
                vals.insert(key, v);
            }
        }
        Ok(vals)
    }

    /// Block list as flow mappings, one per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for b in &self.graph.blocks {
            let inputs = if b.inputs.len() == 1 {
                b.inputs[0].clone()
            } else {
                format!("[{}]", b.inputs.join(", "))
            };
            out.push_str(&format!("- {{type: {}, input: {inputs}", b.block_type));
            if b.explicit_output {
                out.push_str(&format!(", output: {}", b.output));
            }
            for (k, v) in &b.hyperparams {
                out.push_str(&format!(", {k}: {v}"));
            }
            out.push_str("}\n");
        }
        out
    }
}

fn labels<'b>(batch: &'b Batch, port: &str) -> Result<&'b [i64], ReaderError> {
    Ok(batch.port(port)?.as_i64()?)
}

impl ModelModule for DslModel {
    fn name(&self) -> &str {
        "dsl model"
    }

    fn signature(&self) -> ModuleSignature {
        let mut input_ports: Vec<TensorPort> = Vec::new();
        for k in self.graph.used_start_keys() {
            let port = match k {
                keys::QUESTION => ports::question(),
                keys::SUPPORT => ports::support(),
                keys::CHAR_QUESTION => ports::char_question(),
                _ => ports::char_support(),
            };
            input_ports.push(port);
        }
        for seq in self.graph.used_masks() {
            input_ports.push(if seq == "q_len" {
                ports::question_mask()
            } else {
                ports::support_mask()
            });
        }
        let (output_ports, training_input_ports) = match self.graph.task {
            Task::Qa => (
                vec![ports::start_scores(), ports::end_scores()],
                vec![ports::answer_start(), ports::answer_end()],
            ),
            _ => (vec![ports::logits()], vec![ports::label()]),
        };
        ModuleSignature {
            input_ports,
            output_ports,
            training_input_ports,
            training_output_ports: vec![ports::loss()],
        }
    }

    fn setup(
        &mut self,
        vocab: &Vocab,
        embeddings: Option<&Tensor>,
        seed: u64,
    ) -> Result<(), ReaderError> {
        Ok(self.allocate(vocab.len(), embeddings, seed)?)
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        batch: &Batch,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<String, Var>, ReaderError> {
        let all = self.forward_all(tape, params, batch, training, rng)?;
        let terminals = super::graph::terminals(self.graph.task)?;
        Ok(terminals
            .into_iter()
            .filter_map(|(k, _)| all.get(k).map(|&v| (k.to_string(), v)))
            .collect())
    }

    fn loss(
        &self,
        tape: &mut Tape,
        outputs: &BTreeMap<String, Var>,
        batch: &Batch,
    ) -> Result<Var, ReaderError> {
        let get = |k: &str| {
            outputs
                .get(k)
                .copied()
                .ok_or_else(|| ReaderError::Config(format!("model produced no {k}")))
        };
        match self.graph.task {
            Task::Qa => {
                let start =
                    tape.cross_entropy(get("start_scores")?, labels(batch, "answer_start")?)?;
                let end = tape.cross_entropy(get("end_scores")?, labels(batch, "answer_end")?)?;
                Ok(tape.add(start, end)?)
            }
            _ => Ok(tape.cross_entropy(get("logits")?, labels(batch, "label")?)?),
        }
    }

    fn arch_text(&self) -> String {
        if self.graph.source.is_empty() {
            self.render()
        } else {
            self.graph.source.clone()
        }
    }
}
