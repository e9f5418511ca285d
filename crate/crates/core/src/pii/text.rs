/// An alphanumeric run. Byte offsets index the source string, char offsets count scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token {
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn as_str<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    pub fn is_capitalized(&self, text: &str) -> bool {
        self.as_str(text).chars().next().is_some_and(char::is_uppercase)
    }
}

/// Splits on runs of non-alphanumeric characters.
pub(crate) fn tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { start: s, end: text.len() });
    }
    out
}

/// Byte offset to char offset lookup for one string.
pub(crate) struct CharIndex {
    /// Byte offset of every char boundary, including `len`.
    boundaries: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut boundaries: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        boundaries.push(text.len());
        Self { boundaries }
    }

    pub fn char_of(&self, byte: usize) -> usize {
        self.boundaries
            .binary_search(&byte)
            .expect("offset on a char boundary")
    }

    pub fn byte_of(&self, ch: usize) -> usize {
        self.boundaries[ch]
    }
}
