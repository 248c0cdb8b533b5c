use std::collections::BTreeMap;
use std::fmt;

use super::yaml::{self, Node};
use super::DslError;

/// The block registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockType {
    Embed,
    CharEmbed,
    Dense,
    Highway,
    SeqEncoder,
    Attention,
    Combine,
    Pool,
    SpanHead,
    Classifier,
}

/// Accepted number of input keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(n) => write!(f, "{n}"),
            Arity::AtLeast(n) => write!(f, "at least {n}"),
        }
    }
}

impl BlockType {
    pub const ALL: [BlockType; 10] = [
        BlockType::Embed,
        BlockType::CharEmbed,
        BlockType::Dense,
        BlockType::Highway,
        BlockType::SeqEncoder,
        BlockType::Attention,
        BlockType::Combine,
        BlockType::Pool,
        BlockType::SpanHead,
        BlockType::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockType::Embed => "embed",
            BlockType::CharEmbed => "char_embed",
            BlockType::Dense => "dense",
            BlockType::Highway => "highway",
            BlockType::SeqEncoder => "seq_encoder",
            BlockType::Attention => "attention",
            BlockType::Combine => "combine",
            BlockType::Pool => "pool",
            BlockType::SpanHead => "span_head",
            BlockType::Classifier => "classifier",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            BlockType::Attention | BlockType::SpanHead => Arity::Exactly(2),
            BlockType::Combine => Arity::AtLeast(2),
            _ => Arity::Exactly(1),
        }
    }

    /// Hyperparameters the block understands.
    pub fn hyperparams(self) -> &'static [&'static str] {
        match self {
            BlockType::Embed | BlockType::Highway | BlockType::SpanHead => &[],
            BlockType::CharEmbed => &["units"],
            BlockType::Dense => &["units", "activation", "dropout"],
            BlockType::SeqEncoder => &["kind", "units", "bidirectional"],
            BlockType::Attention => &["kind"],
            BlockType::Combine | BlockType::Pool => &["mode"],
            BlockType::Classifier => &["classes"],
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A hyperparameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Scalar {
    fn from_plain(value: &str, quoted: bool) -> Self {
        if quoted {
            return Scalar::Str(value.to_string());
        }
        if let Ok(i) = value.parse::<i64>() {
            return Scalar::Int(i);
        }
        if let Ok(f) = value.parse::<f64>() {
            return Scalar::Float(f);
        }
        match value {
            "true" => Scalar::Bool(true),
            "false" => Scalar::Bool(false),
            _ => Scalar::Str(value.to_string()),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Str(s) => write!(f, "{s}"),
        }
    }
}

/// One block of an architecture, with its output key already defaulted.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub block_type: BlockType,
    pub inputs: Vec<String>,
    pub output: String,
    /// Whether `output` was written in the file.
    pub explicit_output: bool,
    pub hyperparams: BTreeMap<String, Scalar>,
    /// Position in the file, from 0.
    pub index: usize,
    pub line: usize,
}

impl BlockSpec {
    pub fn int(&self, key: &str) -> Option<i64> {
        match self.hyperparams.get(key) {
            Some(Scalar::Int(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        match self.hyperparams.get(key) {
            Some(Scalar::Str(s)) => Some(s),
            _ => None,
        }
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Registry name closest to `name` by edit distance.
pub fn suggest(name: &str) -> &'static str {
    BlockType::ALL
        .iter()
        .map(|b| b.name())
        .min_by_key(|n| edit_distance(name, n))
        .expect("registry is not empty")
}

fn key_list(node: &Node, index: usize) -> Result<Vec<String>, DslError> {
    let bad = |line| DslError::ParseError {
        line,
        message: format!("block {index}: input must be a key or a list of keys"),
    };
    match node {
        Node::Scalar { value, .. } if !value.is_empty() => Ok(vec![value.clone()]),
        Node::Seq { items, .. } => items
            .iter()
            .map(|i| match i {
                Node::Scalar { value, .. } if !value.is_empty() => Ok(value.clone()),
                other => Err(bad(other.line())),
            })
            .collect(),
        other => Err(bad(other.line())),
    }
}

fn block_from_node(node: &Node, index: usize) -> Result<BlockSpec, DslError> {
    let line = node.line();
    let Node::Map { entries, .. } = node else {
        return Err(DslError::ParseError {
            line,
            message: format!("block {index} must be a mapping"),
        });
    };
    let type_name =
        node.get("type")
            .and_then(Node::as_str)
            .ok_or_else(|| DslError::ParseError {
                line,
                message: format!("block {index} has no type"),
            })?;
    let block_type = BlockType::from_name(type_name).ok_or_else(|| DslError::UnknownBlock {
        name: type_name.to_string(),
        suggestion: suggest(type_name),
        index,
        line,
    })?;
    let input_node = node
        .get("input")
        .or_else(|| node.get("inputs"))
        .ok_or_else(|| DslError::ParseError {
            line,
            message: format!("block {index} ({block_type}) has no input"),
        })?;
    let inputs = key_list(input_node, index)?;
    let arity_ok = match block_type.arity() {
        Arity::Exactly(n) => inputs.len() == n,
        Arity::AtLeast(n) => inputs.len() >= n,
    };
    if !arity_ok {
        return Err(DslError::BadArity {
            block: block_type,
            expected: block_type.arity().to_string(),
            found: inputs.len(),
            index,
            line,
        });
    }
    let mut hyperparams = BTreeMap::new();
    let mut output = None;
    for (k, v) in entries {
        match k.as_str() {
            "type" | "input" | "inputs" => {}
            "output" => match v {
                Node::Scalar { value, .. } if !value.is_empty() => output = Some(value.clone()),
                other => {
                    return Err(DslError::ParseError {
                        line: other.line(),
                        message: format!("block {index}: output must be a single key"),
                    })
                }
            },
            name if block_type.hyperparams().contains(&name) => match v {
                Node::Scalar { value, quoted, .. } => {
                    hyperparams.insert(name.to_string(), Scalar::from_plain(value, *quoted));
                }
                other => {
                    return Err(DslError::ParseError {
                        line: other.line(),
                        message: format!("block {index}: hyperparameter {name} must be a scalar"),
                    })
                }
            },
            other => {
                return Err(DslError::BadHyperparam {
                    block: block_type,
                    name: other.to_string(),
                    message: format!("accepted: {}", block_type.hyperparams().join(", ")),
                    index,
                    line: v.line(),
                })
            }
        }
    }
    if block_type == BlockType::SpanHead && output.is_some() {
        return Err(DslError::BadHyperparam {
            block: block_type,
            name: "output".into(),
            message: "span_head always writes start_scores and end_scores".into(),
            index,
            line,
        });
    }
    let explicit_output = output.is_some();
    let output = output.unwrap_or_else(|| inputs[0].clone());
    Ok(BlockSpec {
        block_type,
        inputs,
        output,
        explicit_output,
        hyperparams,
        index,
        line,
    })
}

/// Parses an architecture file into block specs in file order. The file is
/// either a sequence of blocks or a mapping with a `blocks` sequence.
pub fn parse_arch(text: &str) -> Result<Vec<BlockSpec>, DslError> {
    let root = yaml::parse(text)?;
    let blocks = match &root {
        Node::Seq { items, .. } => items,
        Node::Map { line, .. } => match root.get("blocks") {
            Some(Node::Seq { items, .. }) => items,
            _ => {
                return Err(DslError::ParseError {
                    line: *line,
                    message: "expected a `blocks` sequence".into(),
                })
            }
        },
        Node::Scalar { line, .. } => {
            return Err(DslError::ParseError {
                line: *line,
                message: "expected a sequence of blocks".into(),
            })
        }
    };
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| block_from_node(b, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_defaults_to_first_input() {
        let specs =
            parse_arch("- {type: dense, input: support}\n- {type: attention, input: [a, b]}\n")
                .unwrap();
        assert_eq!(specs[0].output, "support");
        assert!(!specs[0].explicit_output);
        assert_eq!(specs[1].output, "a");
    }

    #[test]
    fn unknown_block_suggests_a_name() {
        match parse_arch("blocks:\n  - type: dens\n    input: x\n") {
            Err(DslError::UnknownBlock {
                suggestion,
                index,
                line,
                ..
            }) => {
                assert_eq!((suggestion, index, line), ("dense", 0, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            parse_arch("- {type: attention, input: x}\n"),
            Err(DslError::BadArity { found: 1, .. })
        ));
        assert!(matches!(
            parse_arch("- {type: combine, input: [x]}\n"),
            Err(DslError::BadArity { found: 1, .. })
        ));
    }

    #[test]
    fn hyperparams_are_typed_and_checked() {
        let s = parse_arch(
            "- {type: dense, input: x, output: y, units: 8, activation: relu, dropout: 0.5}\n",
        )
        .unwrap();
        assert_eq!(s[0].int("units"), Some(8));
        assert_eq!(s[0].str("activation"), Some("relu"));
        assert_eq!(s[0].hyperparams["dropout"], Scalar::Float(0.5));
        assert!(matches!(
            parse_arch("- {type: dense, input: x, colour: red}\n"),
            Err(DslError::BadHyperparam { .. })
        ));
    }

    #[test]
    fn suggestion_distance() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(suggest("classifer"), "classifier");
        assert_eq!(suggest("seq_encodr"), "seq_encoder");
    }
}
