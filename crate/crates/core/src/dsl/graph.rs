use std::fmt;

use indexmap::IndexMap;

use super::model::Activation;
use super::spec::{parse_arch, BlockSpec, BlockType, Scalar};
use super::DslError;
use crate::framework::Task;
use crate::textpipe::keys;

/// A symbolic or fixed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Dim {
    Sym(String),
    Fixed(usize),
}

impl Dim {
    fn sym(s: &str) -> Self {
        Dim::Sym(s.to_string())
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Sym(s) => f.write_str(s),
            Dim::Fixed(n) => write!(f, "{n}"),
        }
    }
}

pub(crate) fn shape_string(shape: &[Dim]) -> String {
    let parts: Vec<String> = shape.iter().map(Dim::to_string).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    TokenIds,
    CharIds,
    Float,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyInfo {
    pub shape: Vec<Dim>,
    pub kind: KeyKind,
    /// Block that wrote the key; `None` for start keys.
    pub producer: Option<usize>,
}

impl KeyInfo {
    fn describe(&self) -> String {
        let what = match self.kind {
            KeyKind::TokenIds => "token ids ",
            KeyKind::CharIds => "character ids ",
            KeyKind::Float => "",
        };
        format!("{what}{}", shape_string(&self.shape))
    }
}

/// Model dimensions the symbolic shapes resolve against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub repr_dim: usize,
    pub repr_dim_input: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            repr_dim: 128,
            repr_dim_input: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CombineMode {
    Concat,
    Mul,
    Sub,
}

/// Concrete sizes and options of one block, fixed at compile time.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Plan {
    Embed,
    CharEmbed {
        units: usize,
    },
    Dense {
        din: usize,
        units: usize,
        activation: Activation,
        dropout: f64,
    },
    Highway {
        dim: usize,
    },
    SeqEncoder {
        din: usize,
        units: usize,
        bidirectional: bool,
        seq: String,
    },
    Attention {
        da: usize,
        db: usize,
        bilinear: bool,
        seq_b: String,
    },
    Combine {
        mode: CombineMode,
    },
    Pool {
        max: bool,
        seq: String,
    },
    SpanHead {
        dim: usize,
        dq: usize,
        seq: String,
    },
    Classifier {
        din: usize,
        classes: usize,
    },
}

/// Validated blocks with the inferred shape of every key.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph {
    pub task: Task,
    pub dims: Dims,
    pub blocks: Vec<BlockSpec>,
    pub keys: IndexMap<String, KeyInfo>,
    pub(crate) plans: Vec<Plan>,
    /// Source text the graph was compiled from.
    pub source: String,
}

impl ArchGraph {
    pub fn shape_of(&self, key: &str) -> Option<&[Dim]> {
        self.keys.get(key).map(|k| k.shape.as_slice())
    }

    /// Start keys some block reads.
    pub fn used_start_keys(&self) -> Vec<&str> {
        self.keys
            .iter()
            .filter(|(k, info)| {
                info.producer.is_none() && self.blocks.iter().any(|b| b.inputs.contains(k))
            })
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Sequence symbols whose padding mask some block consumes.
    pub fn used_masks(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.plans {
            let seq = match p {
                Plan::SeqEncoder { seq, .. }
                | Plan::Pool { seq, .. }
                | Plan::SpanHead { seq, .. } => seq,
                Plan::Attention { seq_b, .. } => seq_b,
                _ => continue,
            };
            if !out.contains(&seq.as_str()) {
                out.push(seq);
            }
        }
        out
    }

    pub fn uses_embeddings(&self) -> bool {
        self.blocks.iter().any(|b| b.block_type == BlockType::Embed)
    }

    /// One `key  shape  producer` line per key.
    pub fn shape_table(&self) -> String {
        let width = self.keys.keys().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (k, info) in &self.keys {
            let producer = match info.producer {
                Some(i) => format!("block {i} ({})", self.blocks[i].block_type),
                None => "start".to_string(),
            };
            out.push_str(&format!(
                "{k:<width$}  {:<40}  {producer}\n",
                info.describe()
            ));
        }
        out
    }
}

/// Sequence symbols with a padding mask, and the batch port holding it.
pub(crate) fn mask_port(seq: &str) -> Option<String> {
    match seq {
        "q_len" => Some(keys::mask(keys::QUESTION)),
        "support_len" => Some(keys::mask(keys::SUPPORT)),
        _ => None,
    }
}

fn start_keys() -> IndexMap<String, KeyInfo> {
    let mk = |dims: &[&str], kind| KeyInfo {
        shape: dims.iter().map(|d| Dim::sym(d)).collect(),
        kind,
        producer: None,
    };
    let mut m = IndexMap::new();
    m.insert(
        keys::QUESTION.to_string(),
        mk(&["batch", "q_len"], KeyKind::TokenIds),
    );
    m.insert(
        keys::SUPPORT.to_string(),
        mk(&["batch", "support_len"], KeyKind::TokenIds),
    );
    m.insert(
        keys::CHAR_QUESTION.to_string(),
        mk(&["batch", "q_len", "word_len"], KeyKind::CharIds),
    );
    m.insert(
        keys::CHAR_SUPPORT.to_string(),
        mk(&["batch", "support_len", "word_len"], KeyKind::CharIds),
    );
    m
}

struct Ctx<'a> {
    spec: &'a BlockSpec,
}

impl Ctx<'_> {
    fn shape_err(&self, expected: impl Into<String>, found: &KeyInfo) -> DslError {
        DslError::ShapeError {
            expected: expected.into(),
            found: format!("{:?} = {}", self.spec.inputs_display(), found.describe()),
            index: self.spec.index,
            line: self.spec.line,
        }
    }

    fn hyper_err(&self, name: &str, message: impl Into<String>) -> DslError {
        DslError::BadHyperparam {
            block: self.spec.block_type,
            name: name.to_string(),
            message: message.into(),
            index: self.spec.index,
            line: self.spec.line,
        }
    }

    fn positive(&self, name: &str, default: usize) -> Result<usize, DslError> {
        match self.spec.hyperparams.get(name) {
            None => Ok(default),
            Some(Scalar::Int(i)) if *i > 0 => Ok(*i as usize),
            Some(other) => {
                Err(self.hyper_err(name, format!("expected a positive integer, found {other}")))
            }
        }
    }

    fn choice(&self, name: &str, options: &[&str], default: &str) -> Result<String, DslError> {
        match self.spec.hyperparams.get(name) {
            None => Ok(default.to_string()),
            Some(Scalar::Str(s)) if options.contains(&s.as_str()) => Ok(s.clone()),
            Some(other) => Err(self.hyper_err(
                name,
                format!("expected one of {}, found {other}", options.join("|")),
            )),
        }
    }

    fn flag(&self, name: &str, default: bool) -> Result<bool, DslError> {
        match self.spec.hyperparams.get(name) {
            None => Ok(default),
            Some(Scalar::Bool(b)) => Ok(*b),
            Some(other) => {
                Err(self.hyper_err(name, format!("expected true or false, found {other}")))
            }
        }
    }

    fn rate(&self, name: &str) -> Result<f64, DslError> {
        let v = match self.spec.hyperparams.get(name) {
            None => return Ok(0.0),
            Some(Scalar::Float(f)) => *f,
            Some(Scalar::Int(i)) => *i as f64,
            Some(other) => {
                return Err(self.hyper_err(name, format!("expected a number, found {other}")))
            }
        };
        if (0.0..1.0).contains(&v) {
            Ok(v)
        } else {
            Err(self.hyper_err(name, format!("{v} is not in [0, 1)")))
        }
    }

    fn float(&self, k: &KeyInfo, min_rank: usize, expected: &str) -> Result<usize, DslError> {
        if k.kind != KeyKind::Float || k.shape.len() < min_rank {
            return Err(self.shape_err(expected, k));
        }
        match k.shape.last() {
            Some(Dim::Fixed(d)) => Ok(*d),
            _ => Err(self.shape_err(expected, k)),
        }
    }

    /// `[batch, seq, d]` where `seq` has a padding mask.
    fn sequence(&self, k: &KeyInfo) -> Result<(String, usize), DslError> {
        let expected = "a masked sequence [batch, q_len|support_len, dim]";
        let d = self.float(k, 3, expected)?;
        if k.shape.len() != 3 {
            return Err(self.shape_err(expected, k));
        }
        match &k.shape[1] {
            Dim::Sym(s) if mask_port(s).is_some() => Ok((s.clone(), d)),
            _ => Err(self.shape_err(expected, k)),
        }
    }

    fn vector(&self, k: &KeyInfo) -> Result<usize, DslError> {
        let expected = "a vector [batch, dim]";
        let d = self.float(k, 2, expected)?;
        if k.shape.len() != 2 {
            return Err(self.shape_err(expected, k));
        }
        Ok(d)
    }
}

impl BlockSpec {
    fn inputs_display(&self) -> String {
        self.inputs.join(", ")
    }
}

fn with_last(shape: &[Dim], d: usize) -> Vec<Dim> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank checked") = Dim::Fixed(d);
    s
}

/// Shape rule of one block: its plan and the shapes of its outputs.
fn infer(spec: &BlockSpec, inputs: &[&KeyInfo], dims: Dims) -> Result<(Plan, Vec<Dim>), DslError> {
    let cx = Ctx { spec };
    let a = inputs[0];
    let batch = Dim::sym("batch");
    Ok(match spec.block_type {
        BlockType::Embed => {
            if a.kind != KeyKind::TokenIds {
                return Err(cx.shape_err("token ids [batch, len]", a));
            }
            (
                Plan::Embed,
                vec![
                    a.shape[0].clone(),
                    a.shape[1].clone(),
                    Dim::Fixed(dims.repr_dim_input),
                ],
            )
        }
        BlockType::CharEmbed => {
            if a.kind != KeyKind::CharIds {
                return Err(cx.shape_err("character ids [batch, len, word_len]", a));
            }
            let units = cx.positive("units", dims.repr_dim_input)?;
            (
                Plan::CharEmbed { units },
                vec![a.shape[0].clone(), a.shape[1].clone(), Dim::Fixed(units)],
            )
        }
        BlockType::Dense => {
            let din = cx.float(a, 2, "features [batch, .., dim]")?;
            let units = cx.positive("units", dims.repr_dim)?;
            let activation =
                Activation::parse(&cx.choice("activation", Activation::NAMES, "linear")?);
            let dropout = cx.rate("dropout")?;
            let plan = Plan::Dense {
                din,
                units,
                activation,
                dropout,
            };
            (plan, with_last(&a.shape, units))
        }
        BlockType::Highway => {
            let dim = cx.float(a, 2, "features [batch, .., dim]")?;
            (Plan::Highway { dim }, a.shape.clone())
        }
        BlockType::SeqEncoder => {
            cx.choice("kind", &["gru"], "gru")?;
            let (seq, din) = cx.sequence(a)?;
            let units = cx.positive("units", dims.repr_dim)?;
            let bidirectional = cx.flag("bidirectional", true)?;
            let width = if bidirectional { 2 * units } else { units };
            let shape = with_last(&a.shape, width);
            let plan = Plan::SeqEncoder {
                din,
                units,
                bidirectional,
                seq,
            };
            (plan, shape)
        }
        BlockType::Attention => {
            let bilinear = cx.choice("kind", &["dot", "bilinear"], "dot")? == "bilinear";
            let expected = "a sequence [batch, len, dim]";
            let da = cx.float(a, 3, expected)?;
            if a.shape.len() != 3 {
                return Err(cx.shape_err(expected, a));
            }
            let b = inputs[1];
            let (seq_b, db) = cx.sequence(b)?;
            if !bilinear && da != db {
                return Err(DslError::ShapeError {
                    expected: format!("equal feature sizes for dot attention, {db}"),
                    found: format!("{} = {}", spec.inputs[0], a.describe()),
                    index: spec.index,
                    line: spec.line,
                });
            }
            let plan = Plan::Attention {
                da,
                db,
                bilinear,
                seq_b,
            };
            (plan, with_last(&a.shape, db))
        }
        BlockType::Combine => {
            let mode = match cx
                .choice("mode", &["concat", "mul", "sub"], "concat")?
                .as_str()
            {
                "concat" => CombineMode::Concat,
                "mul" => CombineMode::Mul,
                _ => CombineMode::Sub,
            };
            let mut total = 0;
            for k in inputs {
                total += cx.float(k, 2, "features [batch, .., dim]")?;
                let same = if mode == CombineMode::Concat {
                    k.shape.len() == a.shape.len()
                        && k.shape[..k.shape.len() - 1] == a.shape[..a.shape.len() - 1]
                } else {
                    k.shape == a.shape
                };
                if !same {
                    return Err(cx.shape_err(
                        format!("shapes compatible with {}", shape_string(&a.shape)),
                        k,
                    ));
                }
            }
            let shape = if mode == CombineMode::Concat {
                with_last(&a.shape, total)
            } else {
                a.shape.clone()
            };
            (Plan::Combine { mode }, shape)
        }
        BlockType::Pool => {
            let max = cx.choice("mode", &["max", "mean"], "max")? == "max";
            let (seq, d) = cx.sequence(a)?;
            (Plan::Pool { max, seq }, vec![batch, Dim::Fixed(d)])
        }
        BlockType::SpanHead => {
            let (seq, dim) = cx.sequence(a)?;
            let dq = cx.vector(inputs[1])?;
            (
                Plan::SpanHead {
                    dim,
                    dq,
                    seq: seq.clone(),
                },
                vec![batch, Dim::Sym(seq)],
            )
        }
        BlockType::Classifier => {
            let din = cx.vector(a)?;
            let classes = cx.positive("classes", 3)?;
            (
                Plan::Classifier { din, classes },
                vec![batch, Dim::Fixed(classes)],
            )
        }
    })
}

/// Output keys written by a block.
pub(crate) fn outputs_of(spec: &BlockSpec) -> Vec<String> {
    if spec.block_type == BlockType::SpanHead {
        vec!["start_scores".into(), "end_scores".into()]
    } else {
        vec![spec.output.clone()]
    }
}

/// Terminal keys a task must produce, with their shapes.
pub fn terminals(task: Task) -> Result<Vec<(&'static str, Vec<Dim>)>, DslError> {
    let b = Dim::sym("batch");
    match task {
        Task::Qa => Ok(vec![
            ("start_scores", vec![b.clone(), Dim::sym("support_len")]),
            ("end_scores", vec![b, Dim::sym("support_len")]),
        ]),
        Task::Nli => Ok(vec![("logits", vec![b, Dim::Fixed(3)])]),
        Task::Lp => Err(DslError::UnsupportedTask(task.to_string())),
    }
}

/// Resolves keys in file order, infers every shape and checks the task's
/// terminal keys. Returns the first error found.
pub fn build_graph(specs: Vec<BlockSpec>, task: Task, dims: Dims) -> Result<ArchGraph, DslError> {
    let required = terminals(task)?;
    let mut keys = start_keys();
    let mut plans = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut inputs = Vec::with_capacity(spec.inputs.len());
        for k in &spec.inputs {
            let info = keys.get(k).ok_or_else(|| DslError::UndefinedKey {
                key: k.clone(),
                index: spec.index,
                line: spec.line,
            })?;
            inputs.push(info);
        }
        let (plan, shape) = infer(spec, &inputs, dims)?;
        for out in outputs_of(spec) {
            if let Some(prev) = keys.get(&out) {
                let previous = match prev.producer {
                    Some(i) => format!("block {i}"),
                    None => "the start keys".to_string(),
                };
                return Err(DslError::KeyRedefinition {
                    key: out,
                    previous,
                    index: spec.index,
                    line: spec.line,
                });
            }
            keys.insert(
                out,
                KeyInfo {
                    shape: shape.clone(),
                    kind: KeyKind::Float,
                    producer: Some(spec.index),
                },
            );
        }
        plans.push(plan);
    }
    for (key, shape) in required {
        let Some(info) = keys.get(key) else {
            return Err(DslError::MissingTerminal {
                key: key.to_string(),
                expected: shape_string(&shape),
            });
        };
        if info.shape != shape || info.kind != KeyKind::Float {
            let producer = info.producer.map(|i| &specs[i]);
            return Err(DslError::ShapeError {
                expected: format!("{key} {}", shape_string(&shape)),
                found: format!("{key} {}", info.describe()),
                index: producer.map_or(0, |s| s.index),
                line: producer.map_or(0, |s| s.line),
            });
        }
    }
    Ok(ArchGraph {
        task,
        dims,
        blocks: specs,
        keys,
        plans,
        source: String::new(),
    })
}

/// [`parse_arch`] followed by [`build_graph`].
pub fn compile(text: &str, task: Task, dims: Dims) -> Result<ArchGraph, DslError> {
    let mut g = build_graph(parse_arch(text)?, task, dims)?;
    g.source = text.to_string();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: Dims = Dims {
        repr_dim: 8,
        repr_dim_input: 6,
    };

    fn nli(text: &str) -> Result<ArchGraph, DslError> {
        compile(text, Task::Nli, DIMS)
    }

    const CHAIN: &str = "\
- {type: embed, input: question, output: q}
- {type: embed, input: support, output: s}
- {type: seq_encoder, input: s, output: s_enc, units: 4}
- {type: attention, input: [q, s_enc], output: att, kind: bilinear}
- {type: pool, input: att, output: v}
- {type: classifier, input: v, output: logits, classes: 3}
";

    #[test]
    fn embed_shape_rule() {
        let g = nli(CHAIN).unwrap();
        assert_eq!(
            shape_string(g.shape_of("s").unwrap()),
            "[batch, support_len, 6]"
        );
        assert_eq!(
            shape_string(g.shape_of("s_enc").unwrap()),
            "[batch, support_len, 8]"
        );
        assert_eq!(
            shape_string(g.shape_of("att").unwrap()),
            "[batch, q_len, 8]"
        );
        assert_eq!(shape_string(g.shape_of("logits").unwrap()), "[batch, 3]");
        assert_eq!(g.used_start_keys(), vec!["question", "support"]);
        assert_eq!(g.used_masks(), vec!["support_len", "q_len"]);
        assert!(g.shape_table().contains("block 5 (classifier)"));
    }

    #[test]
    fn default_output_collides_with_start_key() {
        match nli("- {type: embed, input: support}\n") {
            Err(DslError::KeyRedefinition { key, index: 0, .. }) => assert_eq!(key, "support"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undefined_key_is_located() {
        let text = CHAIN.replace("input: v,", "input: w,");
        match nli(&text) {
            Err(DslError::UndefinedKey { key, index, line }) => {
                assert_eq!((key.as_str(), index, line), ("w", 5, 6))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pooling_a_vector_is_a_rank_error() {
        let text = format!("{CHAIN}- {{type: pool, input: v, output: vv}}\n");
        assert!(matches!(
            nli(&text),
            Err(DslError::ShapeError { index: 6, .. })
        ));
    }

    #[test]
    fn terminals_are_required() {
        let text = CHAIN.replace("output: logits, classes: 3", "output: out, classes: 3");
        assert!(matches!(nli(&text), Err(DslError::MissingTerminal { .. })));
        let text = CHAIN.replace("classes: 3", "classes: 4");
        assert!(matches!(
            nli(&text),
            Err(DslError::ShapeError { index: 5, .. })
        ));
        assert!(matches!(
            compile(CHAIN, Task::Qa, DIMS),
            Err(DslError::MissingTerminal { .. })
        ));
    }

    #[test]
    fn dot_attention_needs_equal_sizes() {
        let text = CHAIN.replace("kind: bilinear", "kind: dot");
        assert!(matches!(
            nli(&text),
            Err(DslError::ShapeError { index: 3, .. })
        ));
    }

    #[test]
    fn bad_hyperparameter_values() {
        let text = CHAIN.replace("units: 4", "units: -1");
        assert!(matches!(
            nli(&text),
            Err(DslError::BadHyperparam { index: 2, .. })
        ));
    }

    #[test]
    fn qa_terminals() {
        let text = "\
- {type: embed, input: question, output: q}
- {type: embed, input: support, output: s}
- {type: pool, input: q, output: qv, mode: mean}
- {type: span_head, input: [s, qv]}
";
        let g = compile(text, Task::Qa, DIMS).unwrap();
        assert_eq!(
            shape_string(g.shape_of("end_scores").unwrap()),
            "[batch, support_len]"
        );
    }
}
