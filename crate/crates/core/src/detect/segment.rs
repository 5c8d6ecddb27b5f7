use ndarray::{s, Array2, ArrayView2};

use super::recording::center_columns;
use crate::error::{Error, Result};

/// One `N × D` block (or `N × L` for the single-sensor protocol) of
/// normalised samples with every column mean-subtracted.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    pub values: Array2<f64>,
    pub segment_index: usize,
    /// First sample (inclusive) and last sample (exclusive) covered.
    pub sample_span: (usize, usize),
    /// `sample_span` in seconds.
    pub time_span: (f64, f64),
}

/// Splits a normalised `T × D` matrix into consecutive windows of
/// `segment_len` rows. A trailing partial window is kept only when it holds
/// at least half a segment.
pub fn segment(
    normalized: ArrayView2<'_, f64>,
    segment_len: usize,
    sample_rate_hz: f64,
) -> Result<Vec<SegmentMatrix>> {
    if segment_len < 2 {
        return Err(Error::InvalidInput(format!(
            "segment length must be at least 2, got {segment_len}"
        )));
    }
    let t = normalized.nrows();
    if 2 * t < segment_len {
        return Err(Error::InvalidInput(format!(
            "recording has {t} samples, shorter than half a segment ({segment_len})"
        )));
    }

    let mut segments = Vec::new();
    let mut start = 0;
    while start < t {
        let end = (start + segment_len).min(t);
        if 2 * (end - start) < segment_len {
            break;
        }
        let mut values = normalized.slice(s![start..end, ..]).to_owned();
        center_columns(&mut values);
        segments.push(SegmentMatrix {
            values,
            segment_index: segments.len(),
            sample_span: (start, end),
            time_span: (start as f64 / sample_rate_hz, end as f64 / sample_rate_hz),
        });
        start = end;
    }
    Ok(segments)
}

/// Stacks `window_count` neighbouring windows of `window_len` samples into
/// `N × L` matrices, one column per window. Blocks do not overlap; samples
/// past the last full block are ignored.
///
/// `segment_index` on the returned matrices is the block index.
pub fn window_blocks(
    normalized: &[f64],
    window_len: usize,
    window_count: usize,
    sample_rate_hz: f64,
) -> Result<Vec<SegmentMatrix>> {
    if window_len < 2 || window_count < 1 {
        return Err(Error::InvalidInput(format!(
            "need window_len >= 2 and window_count >= 1, got {window_len} and {window_count}"
        )));
    }
    let block_len = window_len * window_count;
    if normalized.len() < block_len {
        return Err(Error::InvalidInput(format!(
            "channel has {} samples, need at least {block_len} ({window_count} windows of {window_len})",
            normalized.len()
        )));
    }
    Ok(normalized
        .chunks_exact(block_len)
        .enumerate()
        .map(|(b, block)| {
            let mut values = Array2::from_shape_fn((window_len, window_count), |(i, w)| {
                block[w * window_len + i]
            });
            center_columns(&mut values);
            let start = b * block_len;
            let end = start + block_len;
            SegmentMatrix {
                values,
                segment_index: b,
                sample_span: (start, end),
                time_span: (start as f64 / sample_rate_hz, end as f64 / sample_rate_hz),
            }
        })
        .collect())
}
