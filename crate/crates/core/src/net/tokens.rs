/// One input position: a continuous embedding or a label-symbol token id.
#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    Embedding(Vec<f64>),
    Symbol(u32),
}

/// A supervised next-symbol prediction made at `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub position: usize,
    pub symbol: u32,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
    pub targets: Vec<Target>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
