use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved end-of-answer symbol, always index 0.
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    /// Every index below `vocab_size`.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab_size) {
            Some(t) => Err(Error::Alphabet(format!("token index {t} >= vocab size {vocab_size}"))),
            None => Ok(()),
        }
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// Word-level vocabulary over a closed alphabet of symbols separated by
/// single spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        Self { symbols, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    /// Builds a vocab; `<eos>` is prepended when absent. Symbols must be
    /// unique, non-empty and contain no whitespace.
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![EOS.to_string()];
        for s in symbols {
            let s = s.into();
            if s != EOS {
                all.push(s);
            }
        }
        let mut seen = HashMap::new();
        for (i, s) in all.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocab symbol {s:?}")));
            }
            if seen.insert(s.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocab symbol {s:?}")));
            }
        }
        Ok(Self::from(all))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Result<u32> {
        self.index.get(symbol).copied().ok_or_else(|| Error::Alphabet(symbol.to_string()))
    }

    pub fn symbol(&self, id: u32) -> Result<&str> {
        self.symbols
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Alphabet(format!("#{id}")))
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn eos(&self) -> u32 {
        0
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Result<TokenSeq> {
    if text.is_empty() {
        return Ok(TokenSeq::default());
    }
    text.split(' ').map(|w| vocab.id(w)).collect::<Result<Vec<_>>>().map(TokenSeq)
}

pub fn detokenize(ts: &TokenSeq, vocab: &Vocab) -> Result<String> {
    let words = ts.tokens().iter().map(|&t| vocab.symbol(t)).collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(["?", "k7", "v1", "none"]).unwrap()
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("", &vocab()).unwrap().is_empty());
    }

    #[test]
    fn out_of_alphabet_rejected() {
        assert!(matches!(tokenize("k8 ?", &vocab()), Err(Error::Alphabet(_))));
        assert!(matches!(tokenize("k7  ?", &vocab()), Err(Error::Alphabet(_))));
    }

    #[test]
    fn duplicate_symbols_rejected() {
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["a b"]).is_err());
    }

    #[test]
    fn eos_is_zero() {
        let v = vocab();
        assert_eq!(v.id(EOS).unwrap(), 0);
        assert_eq!(tokenize("k7 ?", &v).unwrap().tokens(), &[2, 1]);
    }

    proptest! {
        #[test]
        fn roundtrip(idx in proptest::collection::vec(0usize..5, 0..12)) {
            let v = vocab();
            let text = idx.iter().map(|&i| v.symbols()[i].clone()).collect::<Vec<_>>().join(" ");
            let ts = tokenize(&text, &v).unwrap();
            prop_assert_eq!(detokenize(&ts, &v).unwrap(), text);
        }
    }
}
