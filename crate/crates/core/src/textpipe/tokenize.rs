/// Characters split off the ends of whitespace-delimited chunks.
pub const EDGE_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')', '[', ']', '\''];

/// A token and its half-open character offsets in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace split, then edge punctuation peeled into one-character tokens.
/// Apostrophes and hyphens inside a word stay attached.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_chunk(chars: &[char], mut lo: usize, mut hi: usize, out: &mut Vec<Token>) {
    let single = |at: usize| Token {
        text: chars[at].to_string(),
        start: at,
        end: at + 1,
    };
    while lo < hi && EDGE_PUNCT.contains(&chars[lo]) {
        out.push(single(lo));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && EDGE_PUNCT.contains(&chars[hi - 1]) {
        trailing.push(single(hi - 1));
        hi -= 1;
    }
    if lo < hi {
        out.push(Token {
            text: chars[lo..hi].iter().collect(),
            start: lo,
            end: hi,
        });
    }
    out.extend(trailing.into_iter().rev());
}

/// Smallest token range `(first, last)` (inclusive) overlapping the character
/// range `[start, end)`.
pub fn char_span_to_tokens(tokens: &[Token], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = tokens.iter().position(|t| t.end > start)?;
    let last = tokens.iter().rposition(|t| t.start < end)?;
    (first <= last).then_some((first, last))
}

/// Character range covered by tokens `first..=last`.
pub fn tokens_to_char_span(tokens: &[Token], first: usize, last: usize) -> (usize, usize) {
    (tokens[first].start, tokens[last].end)
}
