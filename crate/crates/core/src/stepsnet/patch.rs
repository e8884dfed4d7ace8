//! Patch tokenization of `[C, H, W]` slabs.
//!
//! Tokens are ordered row-major over (latitude patch, longitude patch).
//! Within a token, features are ordered channel-major, then row inside the
//! patch, then column: feature `c·p² + di·p + dj`.

use super::ModelError;
use crate::dataset::Group;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid<T> {
    /// `[n_tokens, width]` row-major.
    pub tokens: Vec<T>,
    pub n_tokens: usize,
    pub width: usize,
    pub group: Option<Group>,
}

fn check(len: usize, channels: usize, h: usize, w: usize, p: usize) -> Result<(), ModelError> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(ModelError::Shape(format!(
            "grid {h}x{w} is not divisible by patch size {p}"
        )));
    }
    if len != channels * h * w {
        return Err(ModelError::Shape(format!(
            "{len} values do not form a [{channels}, {h}, {w}] slab"
        )));
    }
    Ok(())
}

/// Flat source index in a `[C, H, W]` slab for every token feature.
pub fn patch_index(channels: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (rows, cols) = (h / p, w / p);
    let width = channels * p * p;
    let mut index = vec![0; rows * cols * width];
    for ti in 0..rows {
        for tj in 0..cols {
            let token = ti * cols + tj;
            for c in 0..channels {
                for di in 0..p {
                    for dj in 0..p {
                        let f = c * p * p + di * p + dj;
                        let (i, j) = (ti * p + di, tj * p + dj);
                        index[token * width + f] = (c * h + i) * w + j;
                    }
                }
            }
        }
    }
    index
}

pub fn patchify<T: Copy>(
    x: &[T],
    channels: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Result<TokenGrid<T>, ModelError> {
    check(x.len(), channels, h, w, p)?;
    let index = patch_index(channels, h, w, p);
    Ok(TokenGrid {
        tokens: index.iter().map(|&k| x[k]).collect(),
        n_tokens: (h / p) * (w / p),
        width: channels * p * p,
        group: None,
    })
}

pub fn unpatchify<T: Copy + Default>(
    grid: &TokenGrid<T>,
    channels: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Result<Vec<T>, ModelError> {
    check(grid.tokens.len(), channels, h, w, p)?;
    let mut out = vec![T::default(); channels * h * w];
    for (f, &k) in patch_index(channels, h, w, p).iter().enumerate() {
        out[k] = grid.tokens[f];
    }
    Ok(out)
}

/// Reflect-pads the latitude axis of a `[C, H, W]` slab at the southern
/// edge up to `h_padded` rows: row `H + r` copies row `H − 2 − r`.
pub fn reflect_pad_lat<T: Copy>(x: &[T], channels: usize, h: usize, w: usize, h_padded: usize) -> Vec<T> {
    assert!(h_padded >= h && h_padded - h < h, "padding must be shorter than the grid");
    let mut out = Vec::with_capacity(channels * h_padded * w);
    for c in 0..channels {
        for i in 0..h_padded {
            let src = if i < h { i } else { 2 * h - 2 - i };
            out.extend_from_slice(&x[(c * h + src) * w..(c * h + src + 1) * w]);
        }
    }
    out
}
