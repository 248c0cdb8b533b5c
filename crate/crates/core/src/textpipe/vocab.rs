use std::collections::HashMap;

use super::{tokenize, TextError};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token/id mapping with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<usize>,
    frozen: bool,
    lowercase: bool,
}

impl Vocab {
    pub fn new(lowercase: bool) -> Self {
        let mut v = Self {
            ids: HashMap::new(),
            tokens: Vec::new(),
            counts: Vec::new(),
            frozen: false,
            lowercase,
        };
        v.push(PAD.to_string(), 0);
        v.push(UNK.to_string(), 0);
        v
    }

    fn push(&mut self, token: String, count: usize) -> usize {
        let id = self.tokens.len();
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        self.counts.push(count);
        id
    }

    fn key<'a>(&self, token: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            token.to_lowercase().into()
        } else {
            token.into()
        }
    }

    /// Adds `token` (or bumps its count); a frozen vocab returns `UNK_ID` and
    /// does not grow.
    pub fn add(&mut self, token: &str) -> usize {
        let key = self.key(token);
        if let Some(&id) = self.ids.get(key.as_ref()) {
            if !self.frozen {
                self.counts[id] += 1;
            }
            return id;
        }
        if self.frozen {
            return UNK_ID;
        }
        let key = key.into_owned();
        self.push(key, 1)
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids
            .get(self.key(token).as_ref())
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(self.key(token).as_ref())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Vocab::to_text`]; the result is frozen.
    pub fn from_text(text: &str, lowercase: bool) -> Result<Self, TextError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[PAD_ID] != PAD || lines[UNK_ID] != UNK {
            return Err(TextError::MalformedLine {
                line: 1,
                reason: format!("vocabulary must start with {PAD} and {UNK}"),
            });
        }
        let mut v = Vocab::new(lowercase);
        for (i, l) in lines.iter().enumerate().skip(2) {
            if l.is_empty() || v.ids.contains_key(*l) {
                return Err(TextError::MalformedLine {
                    line: i + 1,
                    reason: format!("empty or duplicate token {l:?}"),
                });
            }
            v.push(l.to_string(), 0);
        }
        v.freeze();
        Ok(v)
    }
}

/// Case-preserving [`build_vocab_with`].
pub fn build_vocab<I, S>(corpus: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    build_vocab_with(corpus, min_count, false)
}

/// Tokens seen at least `min_count` times, ids by descending frequency with
/// ties in first-appearance order. The result is frozen.
pub fn build_vocab_with<I, S>(corpus: I, min_count: usize, lowercase: bool) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let min_count = min_count.max(1);
    let mut counter = Vocab::new(lowercase);
    for text in corpus {
        for t in tokenize(text.as_ref()) {
            counter.add(&t.text);
        }
    }
    let mut order: Vec<usize> = (2..counter.len()).collect();
    // Stable sort keeps first appearance among equal counts.
    order.sort_by(|&a, &b| counter.counts[b].cmp(&counter.counts[a]));
    let mut v = Vocab::new(lowercase);
    for id in order {
        if counter.counts[id] >= min_count {
            v.push(counter.tokens[id].clone(), counter.counts[id]);
        }
    }
    v.freeze();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_first_appearance() {
        let v = build_vocab(["a b a", "b c"], 1);
        assert_eq!(v.tokens(), &[PAD, UNK, "a", "b", "c"]);
        assert_eq!((v.id("a"), v.id("b"), v.id("c")), (2, 3, 4));
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unk() {
        let v = build_vocab(["a b a", "b c"], 2);
        assert_eq!(v.id("c"), UNK_ID);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn empty_corpus() {
        let v = build_vocab(Vec::<String>::new(), 1);
        assert_eq!(v.len(), 2);
        assert!(v.is_frozen());
    }

    #[test]
    fn frozen_vocab_does_not_grow() {
        let mut v = build_vocab(["x"], 1);
        assert_eq!(v.add("unseen"), UNK_ID);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn lowercase_is_opt_in() {
        let v = build_vocab_with(["The the THE"], 1, true);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("tHe"), 2);
        assert_eq!(build_vocab(["The the"], 1).len(), 4);
    }

    #[test]
    fn text_roundtrip() {
        let v = build_vocab(["a b a", "b c"], 1);
        let back = Vocab::from_text(&v.to_text(), false).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert!(Vocab::from_text("x\n", false).is_err());
    }
}
