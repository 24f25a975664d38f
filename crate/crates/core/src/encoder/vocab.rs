use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const SEP: &str = "[SEP]";
const SPECIALS: [&str; 4] = [PAD, UNK, MASK, SEP];

/// Shared token inventory. Ids are dense and the four specials come first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const MASK_ID: usize = 2;
    pub const SEP_ID: usize = 3;
    pub const NUM_SPECIAL: usize = 4;

    /// Counts whitespace tokens over all texts and keeps those seen at least
    /// `min_freq` times, ordered by descending frequency then bytewise.
    pub fn build<'a, I>(texts: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in text.split_whitespace() {
                if !SPECIALS.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::NUM_SPECIAL || tokens[..Self::NUM_SPECIAL] != SPECIALS {
            return Err(Error::Data(format!("vocabulary must start with {SPECIALS:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?} at line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Token ids of one sequence with its language and attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub lang: String,
    pub mask: Vec<u8>,
}

impl TokenSeq {
    pub fn from_ids(ids: Vec<usize>, lang: &str) -> Self {
        let mask = ids.iter().map(|&i| u8::from(i != Vocab::PAD_ID)).collect();
        TokenSeq { ids, lang: lang.to_string(), mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Whitespace tokenization with UNK fallback, truncated to `max_len`.
pub fn tokenize(text: &str, lang: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    tokenize_words(&toks, lang, vocab, max_len)
}

pub fn tokenize_words<S: AsRef<str>>(words: &[S], lang: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    if words.is_empty() {
        return Err(Error::Data("cannot tokenize empty text".into()));
    }
    let ids = words.iter().take(max_len).map(|w| vocab.id_or_unk(w.as_ref())).collect::<Vec<_>>();
    let mask = vec![1; ids.len()];
    Ok(TokenSeq { ids, lang: lang.to_string(), mask })
}

/// Replaces the inclusive span `[start, end]` by a single MASK token.
pub fn mask_span(seq: &TokenSeq, span: (usize, usize)) -> Result<TokenSeq> {
    let (start, end) = span;
    if start > end || end >= seq.len() || seq.mask[start..=end].contains(&0) {
        return Err(Error::Data(format!("invalid span {span:?} for a sequence of length {}", seq.len())));
    }
    let mut ids = Vec::with_capacity(seq.len() - (end - start));
    ids.extend_from_slice(&seq.ids[..start]);
    ids.push(Vocab::MASK_ID);
    ids.extend_from_slice(&seq.ids[end + 1..]);
    let mut mask = Vec::with_capacity(ids.len());
    mask.extend_from_slice(&seq.mask[..start]);
    mask.push(1);
    mask.extend_from_slice(&seq.mask[end + 1..]);
    Ok(TokenSeq { ids, lang: seq.lang.clone(), mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocab {
        Vocab::build(["Zurich is nice", "Zurich is the largest city in Switzerland"], 1).unwrap()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(["a a b"], 1).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, MASK, SEP, "a", "b"]);
        let v2 = Vocab::build(["a a b"], 2).unwrap();
        assert_eq!(v2.tokens(), [PAD, UNK, MASK, SEP, "a"]);
        assert_eq!(Vocab::build(["a a b"], 1).unwrap().to_text(), v.to_text());
    }

    #[test]
    fn ties_break_bytewise() {
        let v = Vocab::build(["c b a"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], ["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(Vocab::build(std::iter::empty::<&str>(), 1).is_err());
    }

    #[test]
    fn known_and_unknown_tokens() {
        let v = small();
        let s = tokenize("Zurich is nice", "en", &v, 16).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.ids.iter().all(|&i| i >= Vocab::NUM_SPECIAL));
        let u = tokenize("Geneva", "en", &v, 16).unwrap();
        assert_eq!(u.ids, [Vocab::UNK_ID]);
    }

    #[test]
    fn truncates_to_max_len() {
        let v = small();
        let s = tokenize("Zurich is the largest city in Switzerland", "en", &v, 4).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.mask, [1, 1, 1, 1]);
    }

    #[test]
    fn span_masking_uses_one_token() {
        let v = small();
        let s = tokenize("Zurich is the largest city in Switzerland", "en", &v, 16).unwrap();
        let m = mask_span(&s, (6, 6)).unwrap();
        assert_eq!(m.len(), s.len());
        assert_eq!(m.ids[6], Vocab::MASK_ID);
        assert_eq!(m.ids[..6], s.ids[..6]);
        let m3 = mask_span(&s, (1, 3)).unwrap();
        assert_eq!(m3.len(), s.len() - 2);
        assert_eq!(m3.ids[1], Vocab::MASK_ID);
        assert_eq!(m3.ids[2], s.ids[4]);
        assert!(mask_span(&s, (3, 2)).is_err());
        assert!(mask_span(&s, (5, 7)).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let v = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
