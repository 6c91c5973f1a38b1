use std::ops::Range;

use crate::data::SplitFractions;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A history window and the future window that immediately follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    /// Index of the first history step in the source series.
    pub start: usize,
    pub history: Tensor,
    pub future: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitWindows {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
}

/// Step ranges of the train, validation and test segments, in that order.
pub fn split_bounds(total: usize, split: &SplitFractions) -> [Range<usize>; 3] {
    let n_train = (total as f64 * split.train).floor() as usize;
    let n_val = (total as f64 * split.val).floor() as usize;
    let n_test = (total as f64 * split.test).floor() as usize;
    let a = n_train.min(total);
    let b = (a + n_val).min(total);
    let c = (b + n_test).min(total);
    [0..a, a..b, b..c]
}

/// Every pair fully inside `range`, starting at `range.start` and advancing
/// by `stride`.
pub fn sliding_pairs(series: &Tensor, range: Range<usize>, history_len: usize, horizon: usize, stride: usize) -> Result<Vec<WindowPair>> {
    if stride == 0 || history_len == 0 || horizon == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    let (t, _) = series.expect_2d("make_windows")?;
    let end = range.end.min(t);
    let span = history_len + horizon;
    let mut out = Vec::new();
    let mut s = range.start;
    while s + span <= end {
        out.push(WindowPair {
            start: s,
            history: series.slice_rows(s, history_len),
            future: series.slice_rows(s + history_len, horizon),
        });
        s += stride;
    }
    Ok(out)
}

/// Chronological train/validation/test pairs; no pair crosses a segment
/// boundary.
pub fn make_windows(series: &Tensor, history_len: usize, horizon: usize, stride: usize, split: &SplitFractions) -> Result<SplitWindows> {
    let (t, _) = series.expect_2d("make_windows")?;
    if t < history_len + horizon {
        return Err(Error::Dataset(format!(
            "series of {t} steps is shorter than one window pair ({history_len} + {horizon})"
        )));
    }
    split.validate()?;
    let [train, val, test] = split_bounds(t, split);
    Ok(SplitWindows {
        train: sliding_pairs(series, train, history_len, horizon, stride)?,
        val: sliding_pairs(series, val, history_len, horizon, stride)?,
        test: sliding_pairs(series, test, history_len, horizon, stride)?,
    })
}
