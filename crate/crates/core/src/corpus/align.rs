//! Character-span to token-span projection.

use crate::error::{CdstError, Result};

/// Minimal inclusive token range whose byte cover contains the non-blank part
/// of `[char_start, char_end)`.
///
/// `offsets` are the `(start, end)` byte ranges of the tokens of `text`, in
/// order and non-overlapping.
pub fn char_span_to_token_span(
    text: &str,
    char_start: usize,
    char_end: usize,
    offsets: &[(usize, usize)],
) -> Result<(usize, usize)> {
    if char_start >= char_end || char_end > text.len() {
        return Err(CdstError::Span(format!(
            "span [{char_start}, {char_end}) outside text of length {}",
            text.len()
        )));
    }
    let first = offsets.iter().position(|&(_, end)| end > char_start);
    let last = offsets.iter().rposition(|&(start, _)| start < char_end);
    match (first, last) {
        (Some(first), Some(last)) if first <= last => Ok((first, last)),
        _ => Err(CdstError::Span(format!(
            "span [{char_start}, {char_end}) covers no token"
        ))),
    }
}
