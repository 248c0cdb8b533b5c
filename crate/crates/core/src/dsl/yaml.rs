//! Parser for the structured-text subset used by architecture files:
//! block mappings, block sequences, flow collections (`[a, b]`, `{k: v}`),
//! plain and quoted scalars, and `#` comments. Anchors, aliases, tags,
//! multi-document streams and block scalars are rejected.

use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Scalar {
        value: String,
        quoted: bool,
        line: usize,
    },
    Seq {
        items: Vec<Node>,
        line: usize,
    },
    Map {
        entries: Vec<(String, Node)>,
        line: usize,
    },
}

impl Node {
    pub fn line(&self) -> usize {
        match self {
            Node::Scalar { line, .. } | Node::Seq { line, .. } | Node::Map { line, .. } => *line,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Node> {
        match self {
            Node::Map { entries, .. } => entries.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Node::Scalar { value, .. } => Some(value),
            _ => None,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> DslError {
    DslError::ParseError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Line<'a> {
    indent: usize,
    text: &'a str,
    number: usize,
}

/// Drops a trailing comment that is not inside quotes.
fn strip_comment(s: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut prev = ' ';
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '#' && prev.is_whitespace() => return &s[..i],
            None => {}
        }
        prev = c;
    }
    s
}

fn split_lines(text: &str) -> Result<Vec<Line<'_>>, DslError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let body = raw.trim_end();
        let content = body.trim_start_matches(' ');
        if content.starts_with('\t') {
            return Err(err(number, "tabs are not allowed for indentation"));
        }
        let content = strip_comment(content).trim_end();
        if content.is_empty() {
            continue;
        }
        if content == "---" || content == "..." {
            return Err(err(number, "multi-document streams are not supported"));
        }
        out.push(Line {
            indent: body.len() - body.trim_start_matches(' ').len(),
            text: content,
            number,
        });
    }
    Ok(out)
}

/// Byte offset of the `:` separating a mapping key, if `s` is a `key: value`
/// entry.
fn key_split(s: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    let mut depth = 0i32;
    let bytes = s.as_bytes();
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '"' | '\'' if i == 0 => quote = Some(c),
                '[' | '{' => depth += 1,
                ']' | '}' => depth -= 1,
                ':' if depth == 0 && (i + 1 == bytes.len() || bytes[i + 1] == b' ') => {
                    return Some(i)
                }
                _ => {}
            },
        }
    }
    None
}

fn parse_key(raw: &str, line: usize) -> Result<String, DslError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(err(line, "empty mapping key"));
    }
    match parse_flow(raw, line)? {
        Node::Scalar { value, .. } => Ok(value),
        _ => Err(err(line, "mapping keys must be scalars")),
    }
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Line<'a>> {
        self.lines.get(self.pos)
    }

    fn is_seq_item(text: &str) -> bool {
        text == "-" || text.starts_with("- ")
    }

    /// Parses the block starting at the current line, which has indent `indent`.
    fn block(&mut self, indent: usize) -> Result<Node, DslError> {
        let line = self.peek().expect("caller checked").clone();
        if Self::is_seq_item(line.text) {
            self.sequence(indent)
        } else if key_split(line.text).is_some() {
            self.mapping(indent, None)
        } else {
            self.pos += 1;
            let node = parse_flow(line.text, line.number)?;
            if let Some(next) = self.peek() {
                if next.indent > indent {
                    return Err(err(next.number, "unexpected indentation"));
                }
            }
            Ok(node)
        }
    }

    fn sequence(&mut self, indent: usize) -> Result<Node, DslError> {
        let start = self.peek().expect("caller checked").number;
        let mut items = Vec::new();
        while let Some(line) = self.peek().cloned() {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(err(line.number, "unexpected indentation"));
            }
            if !Self::is_seq_item(line.text) {
                if key_split(line.text).is_some() {
                    break;
                }
                return Err(err(line.number, "expected a sequence item"));
            }
            let rest = line.text[1..].trim_start();
            self.pos += 1;
            if rest.is_empty() {
                match self.peek() {
                    Some(next) if next.indent > indent => {
                        let ni = next.indent;
                        items.push(self.block(ni)?);
                    }
                    _ => items.push(Node::Scalar {
                        value: String::new(),
                        quoted: false,
                        line: line.number,
                    }),
                }
                continue;
            }
            let inner_indent = indent + (line.text.len() - rest.len());
            if key_split(rest).is_some() && !rest.starts_with('{') && !rest.starts_with('[') {
                let first = Line {
                    indent: inner_indent,
                    text: rest,
                    number: line.number,
                };
                items.push(self.mapping(inner_indent, Some(first))?);
            } else if Self::is_seq_item(rest) {
                return Err(err(
                    line.number,
                    "nested inline sequences are not supported",
                ));
            } else {
                items.push(parse_flow(rest, line.number)?);
            }
        }
        Ok(Node::Seq { items, line: start })
    }

    /// Mapping whose entries sit at `indent`. `first` is an entry that was
    /// found after a `- ` marker on a line already consumed.
    fn mapping(&mut self, indent: usize, first: Option<Line<'a>>) -> Result<Node, DslError> {
        let start = first
            .as_ref()
            .or(self.peek())
            .expect("caller checked")
            .number;
        let mut entries: Vec<(String, Node)> = Vec::new();
        let mut pending = first;
        loop {
            let line = match pending.take() {
                Some(l) => l,
                None => match self.peek().cloned() {
                    Some(l) if l.indent == indent && !Self::is_seq_item(l.text) => {
                        self.pos += 1;
                        l
                    }
                    Some(l) if l.indent > indent => {
                        return Err(err(l.number, "unexpected indentation"))
                    }
                    _ => break,
                },
            };
            let Some(colon) = key_split(line.text) else {
                return Err(err(line.number, "expected `key: value`"));
            };
            let key = parse_key(&line.text[..colon], line.number)?;
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(err(line.number, format!("duplicate key {key:?}")));
            }
            let rest = line.text[colon + 1..].trim();
            let value = if rest.is_empty() {
                match self.peek().cloned() {
                    Some(next) if next.indent > indent => self.block(next.indent)?,
                    Some(next) if next.indent == indent && Self::is_seq_item(next.text) => {
                        self.sequence(indent)?
                    }
                    _ => Node::Scalar {
                        value: String::new(),
                        quoted: false,
                        line: line.number,
                    },
                }
            } else {
                parse_flow(rest, line.number)?
            };
            entries.push((key, value));
        }
        Ok(Node::Map {
            entries,
            line: start,
        })
    }
}

/// Parses a complete document.
pub fn parse(text: &str) -> Result<Node, DslError> {
    let lines = split_lines(text)?;
    let Some(first) = lines.first() else {
        return Err(err(1, "empty document"));
    };
    let indent = first.indent;
    let mut p = Parser { lines, pos: 0 };
    let node = p.block(indent)?;
    if let Some(extra) = p.peek() {
        return Err(err(extra.number, "content after the end of the document"));
    }
    Ok(node)
}

struct Flow<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    src: &'a str,
}

impl Flow<'_> {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn value(&mut self, in_flow: bool) -> Result<Node, DslError> {
        self.skip_ws();
        match self.peek() {
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    if self.peek() == Some(']') {
                        self.pos += 1;
                        break;
                    }
                    items.push(self.value(true)?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            break;
                        }
                        _ => {
                            return Err(err(
                                self.line,
                                format!("unterminated flow sequence in {:?}", self.src),
                            ))
                        }
                    }
                }
                Ok(Node::Seq {
                    items,
                    line: self.line,
                })
            }
            Some('{') => {
                self.pos += 1;
                let mut entries: Vec<(String, Node)> = Vec::new();
                loop {
                    self.skip_ws();
                    if self.peek() == Some('}') {
                        self.pos += 1;
                        break;
                    }
                    let key = match self.value(true)? {
                        Node::Scalar { value, .. } => value,
                        _ => return Err(err(self.line, "mapping keys must be scalars")),
                    };
                    self.skip_ws();
                    if self.peek() != Some(':') {
                        return Err(err(self.line, format!("expected `:` after key {key:?}")));
                    }
                    self.pos += 1;
                    let v = self.value(true)?;
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(err(self.line, format!("duplicate key {key:?}")));
                    }
                    entries.push((key, v));
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some('}') => {
                            self.pos += 1;
                            break;
                        }
                        _ => {
                            return Err(err(
                                self.line,
                                format!("unterminated flow mapping in {:?}", self.src),
                            ))
                        }
                    }
                }
                Ok(Node::Map {
                    entries,
                    line: self.line,
                })
            }
            Some(q @ ('"' | '\'')) => {
                self.pos += 1;
                let mut value = String::new();
                loop {
                    match self.peek() {
                        None => return Err(err(self.line, "unterminated quoted string")),
                        Some(c) if c == q => {
                            self.pos += 1;
                            if q == '\'' && self.peek() == Some('\'') {
                                value.push('\'');
                                self.pos += 1;
                                continue;
                            }
                            break;
                        }
                        Some('\\') if q == '"' => {
                            self.pos += 1;
                            let esc = self
                                .peek()
                                .ok_or_else(|| err(self.line, "dangling escape"))?;
                            value.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                            self.pos += 1;
                        }
                        Some(c) => {
                            value.push(c);
                            self.pos += 1;
                        }
                    }
                }
                Ok(Node::Scalar {
                    value,
                    quoted: true,
                    line: self.line,
                })
            }
            Some(c @ ('&' | '*' | '!' | '|' | '>')) => Err(err(
                self.line,
                format!("unsupported construct starting with {c:?}"),
            )),
            _ => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    let stop = if in_flow {
                        matches!(c, ',' | ']' | '}')
                            || (c == ':'
                                && self
                                    .chars
                                    .get(self.pos + 1)
                                    .is_none_or(|n| n.is_whitespace()))
                    } else {
                        false
                    };
                    if stop {
                        break;
                    }
                    self.pos += 1;
                }
                let value: String = self.chars[start..self.pos].iter().collect();
                Ok(Node::Scalar {
                    value: value.trim().to_string(),
                    quoted: false,
                    line: self.line,
                })
            }
        }
    }
}

/// Parses an inline value: a flow collection, a quoted or a plain scalar.
fn parse_flow(src: &str, line: usize) -> Result<Node, DslError> {
    let mut f = Flow {
        chars: src.chars().collect(),
        pos: 0,
        line,
        src,
    };
    let node = f.value(false)?;
    f.skip_ws();
    if f.pos != f.chars.len() {
        return Err(err(line, format!("unexpected trailing text in {src:?}")));
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(n: &Node) -> &str {
        n.as_str().unwrap()
    }

    #[test]
    fn block_sequence_of_mappings() {
        let doc = "\
# model
- type: embed   # shared table
  input: question
  output: q_emb
- type: attention
  input: [q, s]
  kind: \"dot\"
";
        let n = parse(doc).unwrap();
        let Node::Seq { items, .. } = &n else {
            panic!()
        };
        assert_eq!(items.len(), 2);
        assert_eq!(scalar(items[0].get("output").unwrap()), "q_emb");
        assert_eq!(items[1].line(), 5);
        let Node::Seq { items: inputs, .. } = items[1].get("input").unwrap() else {
            panic!()
        };
        assert_eq!(inputs.len(), 2);
        assert!(matches!(
            items[1].get("kind"),
            Some(Node::Scalar { quoted: true, .. })
        ));
    }

    #[test]
    fn nested_mappings_and_same_indent_sequences() {
        let doc = "name: x\nblocks:\n- type: dense\n  units: 4\nextra:\n  a: {b: 1, c: [2, 3]}\n";
        let n = parse(doc).unwrap();
        let Node::Seq { items, .. } = n.get("blocks").unwrap() else {
            panic!()
        };
        assert_eq!(scalar(items[0].get("units").unwrap()), "4");
        let a = n.get("extra").unwrap().get("a").unwrap();
        assert_eq!(scalar(a.get("b").unwrap()), "1");
    }

    #[test]
    fn errors_carry_lines() {
        let cases = [
            ("a: 1\n  b: 2\n", 2),
            ("a: &x 1\n", 1),
            ("a: [1, 2\n", 1),
            ("a: 1\na: 2\n", 2),
            ("- a\n---\n", 2),
            ("a: 1\n\tb: 2\n", 2),
            ("", 1),
        ];
        for (doc, line) in cases {
            match parse(doc) {
                Err(DslError::ParseError { line: l, .. }) => assert_eq!(l, line, "{doc:?}"),
                other => panic!("{doc:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn comments_inside_quotes_are_kept() {
        let n = parse("a: 'x # y'\n").unwrap();
        assert_eq!(scalar(n.get("a").unwrap()), "x # y");
    }
}
