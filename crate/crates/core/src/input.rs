//! Serialized model input: `journal<1>title<2>abstract`, cut to a token budget.

use serde::{Deserialize, Serialize};

use crate::corpus::Citation;
use crate::error::{Error, Result};

pub const TITLE_SEPARATOR: &str = "<1>";
pub const ABSTRACT_SEPARATOR: &str = "<2>";
pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// Counts tokens and cuts text at token boundaries.
///
/// Implementations must satisfy `count_tokens(prefix_tokens(t, n)) <= n` and
/// `prefix_tokens(t, count_tokens(t)) == t`.
pub trait Tokenizer: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;

    /// Longest prefix of `text` holding at most `n` tokens.
    fn prefix_tokens<'a>(&self, text: &'a str, n: usize) -> &'a str;
}

/// Splits on whitespace. Separators glue to their neighbours, so
/// `J1<1>Gene therapy` is two tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn prefix_tokens<'a>(&self, text: &'a str, n: usize) -> &'a str {
        if n >= self.count_tokens(text) {
            return text;
        }
        let mut seen = 0;
        let mut in_token = false;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if in_token {
                    seen += 1;
                    in_token = false;
                    if seen == n {
                        return &text[..i];
                    }
                }
            } else if !in_token {
                if seen == n {
                    return text[..i].trim_end();
                }
                in_token = true;
            }
        }
        unreachable!("fewer than {n} tokens")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub id: String,
    pub text: String,
    pub token_count: usize,
    pub truncated: bool,
}

fn compose(journal_id: &str, title: &str, abstract_text: &str) -> String {
    let mut s = String::with_capacity(
        journal_id.len() + title.len() + abstract_text.len() + 2 * TITLE_SEPARATOR.len(),
    );
    s.push_str(journal_id);
    s.push_str(TITLE_SEPARATOR);
    s.push_str(title);
    s.push_str(ABSTRACT_SEPARATOR);
    s.push_str(abstract_text);
    s
}

/// Largest `n` in `0..=max` for which `fits(n)` holds, given `fits` is monotone
/// (true up to some point, false after) and `fits(0)` holds.
fn largest_fitting(max: usize, fits: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, max);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Builds the model input for an already text-normalized citation.
///
/// The journal id and separators are always kept. The title is kept whole when it fits,
/// and the rest of the budget goes to the longest abstract prefix that fits.
pub fn assemble_input(
    citation: &Citation,
    tokenizer: &dyn Tokenizer,
    budget: usize,
) -> Result<ModelInput> {
    let journal = citation.journal_id.as_str();
    let required = tokenizer.count_tokens(&compose(journal, "", ""));
    if budget < required || budget == 0 {
        return Err(Error::BudgetTooSmall {
            budget,
            required: required.max(1),
        });
    }
    let title = citation.title.as_str();
    let abstract_text = citation.abstract_text.as_str();
    let count = |t: &str, a: &str| tokenizer.count_tokens(&compose(journal, t, a));

    let (title_part, abstract_part) = if count(title, "") > budget {
        let n = largest_fitting(tokenizer.count_tokens(title), |n| {
            count(tokenizer.prefix_tokens(title, n), "") <= budget
        });
        (tokenizer.prefix_tokens(title, n), "")
    } else {
        let total = tokenizer.count_tokens(abstract_text);
        let n = largest_fitting(total, |n| {
            count(title, tokenizer.prefix_tokens(abstract_text, n)) <= budget
        });
        (title, tokenizer.prefix_tokens(abstract_text, n))
    };

    let text = compose(journal, title_part, abstract_part);
    Ok(ModelInput {
        id: citation.id.clone(),
        token_count: tokenizer.count_tokens(&text),
        truncated: title_part.len() < title.len() || abstract_part.len() < abstract_text.len(),
        text,
    })
}
