use crate::error::{AoiError, Result};

use super::tokens::Token;

/// A fixed-size token span. Window `i` starts at `i * stride` where
/// `stride = window_size * overlap_ratio` (or `window_size` when the ratio
/// is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Window<'a> {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub tokens: &'a [Token],
    /// The first token continues a sentence begun before `start`.
    pub leading_partial: bool,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Token distance between consecutive window starts.
pub fn stride(window_size: usize, overlap_ratio: f64) -> Result<usize> {
    if window_size < 2 {
        return Err(AoiError::Config(format!("window size must be at least 2, got {window_size}")));
    }
    if !(0.0..1.0).contains(&overlap_ratio) {
        return Err(AoiError::Config(format!("overlap ratio must lie in [0, 1), got {overlap_ratio}")));
    }
    if overlap_ratio == 0.0 {
        return Ok(window_size);
    }
    let step = window_size as f64 * overlap_ratio;
    if (step - step.round()).abs() > 1e-9 || step.round() < 1.0 {
        return Err(AoiError::Config(format!(
            "window size {window_size} times overlap {overlap_ratio} is not a positive integer stride"
        )));
    }
    Ok(step.round() as usize)
}

pub fn make_windows(tokens: &[Token], window_size: usize, overlap_ratio: f64) -> Result<Vec<Window<'_>>> {
    let step = stride(window_size, overlap_ratio)?;
    let n = tokens.len();
    let mut out = Vec::with_capacity(n / step + 1);
    let mut start = 0;
    while start < n {
        let end = (start + window_size).min(n);
        out.push(Window {
            index: out.len(),
            start,
            end,
            tokens: &tokens[start..end],
            leading_partial: start > 0 && !tokens[start - 1].brk,
        });
        start += step;
    }
    if out.is_empty() {
        // Empty input still yields one (empty) window so callers can treat
        // the degenerate case uniformly.
        out.push(Window { index: 0, start: 0, end: 0, tokens: &tokens[..0], leading_partial: false });
    }
    Ok(out)
}
