//! Title/abstract cleanup: markup stripping, symbol transliteration, whitespace folding.

use std::path::Path;

use crate::error::{Error, Result};

/// Longest run of non-`>` characters accepted inside a tag after its leading letter.
const MAX_TAG_BODY: usize = 64;

/// Ordered literal substitutions applied after markup removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolMap {
    pairs: Vec<(String, String)>,
}

impl SymbolMap {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        for (pattern, replacement) in &pairs {
            if pattern.is_empty() {
                return Err(Error::Config("symbol map pattern must not be empty".into()));
            }
            if !replacement.bytes().all(|b| (0x20..0x7f).contains(&b)) {
                return Err(Error::Config(format!(
                    "replacement for `{pattern}` must be printable ASCII"
                )));
            }
        }
        Ok(SymbolMap { pairs })
    }

    /// Parses a JSON array of `[pattern, replacement]` pairs.
    pub fn from_json(text: &str) -> Result<Self> {
        let pairs: Vec<(String, String)> = serde_json::from_str(text)?;
        Self::new(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Appends more substitutions; earlier entries keep priority.
    pub fn extend(&mut self, other: SymbolMap) {
        self.pairs.extend(other.pairs);
    }

    fn apply(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        'outer: while let Some(ch) = rest.chars().next() {
            for (pattern, replacement) in &self.pairs {
                if let Some(tail) = rest.strip_prefix(pattern.as_str()) {
                    out.push_str(replacement);
                    rest = tail;
                    continue 'outer;
                }
            }
            out.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        out
    }
}

impl Default for SymbolMap {
    fn default() -> Self {
        let pairs = [
            ("\u{00a9}", "(c)"),
            ("\u{00ae}", "(R)"),
            ("\u{2122}", "(TM)"),
            ("\u{00b1}", "+/-"),
            ("\u{00b0}", " deg "),
            ("\u{00b5}", "u"),
            ("\u{03bc}", "u"),
            ("\u{00d7}", "x"),
            ("\u{2013}", "-"),
            ("\u{2014}", "-"),
            ("\u{2018}", "'"),
            ("\u{2019}", "'"),
            ("\u{201c}", "\""),
            ("\u{201d}", "\""),
            ("\u{2264}", "<="),
            ("\u{2265}", ">="),
            ("\u{00a0}", " "),
        ];
        SymbolMap {
            pairs: pairs
                .iter()
                .map(|(p, r)| (p.to_string(), r.to_string()))
                .collect(),
        }
    }
}

/// Byte length of a tag starting at `s` (which begins with `<`), if one is there.
fn tag_len(s: &str) -> Option<usize> {
    let body = s.strip_prefix('<')?;
    let body = body.strip_prefix('/').unwrap_or(body);
    let mut chars = body.char_indices();
    let (_, first) = chars.next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    for (n, (i, c)) in chars.enumerate() {
        if c == '>' {
            return Some(s.len() - body.len() + i + 1);
        }
        if n == MAX_TAG_BODY {
            return None;
        }
    }
    None
}

fn strip_tags_once(text: &str) -> (String, bool) {
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with('<') {
            if let Some(n) = tag_len(rest) {
                i += n;
                changed = true;
                continue;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        i += ch.len_utf8();
    }
    (out, changed)
}

fn strip_tags(text: &str) -> String {
    let (mut out, mut changed) = strip_tags_once(text);
    // Removing one tag can splice a new one together, e.g. "<<b>i>".
    while changed {
        (out, changed) = strip_tags_once(&out);
    }
    out
}

/// Keeps printable ASCII; every other run of characters becomes one space.
fn collapse(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_ascii_graphic() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn normalize_text(raw: &str, map: &SymbolMap) -> String {
    let mut text = map.apply(&strip_tags(raw));
    // Substitution and whitespace folding can both complete a tag ("<\u{b5}x>", long
    // whitespace bodies), so strip again until the folded text is stable.
    loop {
        let folded = collapse(&text);
        let (stripped, changed) = strip_tags_once(&folded);
        if !changed {
            return folded;
        }
        text = stripped;
    }
}
