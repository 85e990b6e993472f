//! Tokenization and phrase matching shared by every pipeline.
//!
//! Token rule used throughout the crate: a Latin-script token is a maximal
//! run of non-whitespace, non-CJK characters; every CJK character (ideographs,
//! kana, hangul, CJK punctuation and full-width forms) is a token on its own.

use sha2::{Digest, Sha256};
use std::ops::Range;

/// Returns true for characters that count as one token each.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F   // CJK symbols and punctuation
        | 0x3040..=0x30FF // hiragana, katakana
        | 0x3400..=0x4DBF // extension A
        | 0x4E00..=0x9FFF // unified ideographs
        | 0xAC00..=0xD7AF // hangul syllables
        | 0xF900..=0xFAFF // compatibility ideographs
        | 0xFF00..=0xFFEF // half/full-width forms
        | 0x20000..=0x2FA1F)
}

/// Byte spans of every token in `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
        } else if is_cjk(c) {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
            spans.push(i..i + c.len_utf8());
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

/// Owned tokens, the unit BLEU operates on.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

/// Lowercased word unigrams: alphanumeric runs, CJK characters individually.
pub fn word_unigrams(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if c.is_alphanumeric() {
                out.push(c.to_string());
            }
        } else if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// One-to-one lowercase fold so folded strings keep their char positions.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold(text: &str) -> String {
    text.chars().map(fold_char).collect()
}

/// Hex SHA-256 truncated to 16 characters.
pub fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    let digest = hex::encode(h.finalize());
    digest[..16].to_string()
}

const EN_STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by",
    "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "of", "on", "or", "our", "she",
    "so", "some", "than", "that", "the", "their", "them", "there", "these", "they", "this", "those",
    "to", "us", "was", "we", "were", "what", "when", "where", "which", "who", "whom", "why", "will",
    "with", "would", "you", "your",
];

const ZH_STOPWORDS: &[&str] = &[
    "的", "了", "是", "在", "和", "与", "及", "或", "有", "也", "就", "都", "而", "被", "把", "对",
    "从", "中", "之", "其", "这", "那", "哪些", "什么", "如何", "关于", "我们", "你们", "他们", "吗",
    "呢", "吧",
];

pub fn is_stopword(token: &str) -> bool {
    let folded = fold(token);
    EN_STOPWORDS.binary_search(&folded.as_str()).is_ok() || ZH_STOPWORDS.contains(&folded.as_str())
}

/// A match produced by [`PhraseMatcher::find_all`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseMatch {
    /// Byte range in the original text.
    pub span: Range<usize>,
    /// Index of the matched phrase in the matcher's phrase list.
    pub phrase: usize,
}

/// Case-insensitive, leftmost-longest, non-overlapping phrase scanner.
///
/// Latin-script phrase edges must sit on word boundaries; CJK edges need no
/// boundary since CJK text carries no spaces.
#[derive(Debug, Clone, Default)]
pub struct PhraseMatcher {
    phrases: Vec<Vec<char>>,
}

impl PhraseMatcher {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Self {
        Self {
            phrases: phrases
                .iter()
                .map(|p| p.as_ref().trim().chars().map(fold_char).collect())
                .collect(),
        }
    }

    pub fn find_all(&self, text: &str) -> Vec<PhraseMatch> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let folded: Vec<char> = chars.iter().map(|&(_, c)| fold_char(c)).collect();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            let mut best: Option<(usize, usize)> = None;
            if starts_word(&folded, i) {
                for (pi, p) in self.phrases.iter().enumerate() {
                    let end = i + p.len();
                    if p.is_empty() || end > folded.len() || folded[i..end] != p[..] {
                        continue;
                    }
                    if !ends_word(&folded, end) {
                        continue;
                    }
                    if best.is_none_or(|(_, len)| p.len() > len) {
                        best = Some((pi, p.len()));
                    }
                }
            }
            match best {
                Some((pi, len)) => {
                    out.push(PhraseMatch {
                        span: byte_at(i)..byte_at(i + len),
                        phrase: pi,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !is_cjk(c)
}

fn starts_word(chars: &[char], i: usize) -> bool {
    i == 0 || !is_word_char(chars[i]) || !is_word_char(chars[i - 1])
}

fn ends_word(chars: &[char], end: usize) -> bool {
    end == chars.len() || !is_word_char(chars[end - 1]) || !is_word_char(chars[end])
}
