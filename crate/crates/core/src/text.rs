//! Line-oriented helpers shared by the small table formats.

use alloc::string::String;

use thiserror::Error;

/// Error from one of the whitespace/tab separated table formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: &'static str },
    #[error("line {line}: duplicate entry {key:?}")]
    Duplicate { line: usize, key: String },
}

/// Yields `(line_number, trimmed_line)` for every line that is neither blank
/// nor a `#` comment. Line numbers are 1-based.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

pub(crate) fn parse_u64(token: &str) -> Option<u64> {
    // u64::from_str accepts a leading '+', which none of the formats allow.
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    token.parse().ok()
}
