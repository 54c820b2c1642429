use crate::error::{Error, Result};

use super::FeatureMap;

/// `1 - a.b / (|a| |b|)` clamped to `[0, 2]`; a zero-norm operand gives 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0)
}

/// Gradient of [`cosine_distance`] with respect to `a`; zero when either norm is zero.
pub fn cosine_distance_grad(a: &[f64], b: &[f64], out: &mut [f64], scale: f64) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let ab = dot(a, b);
    for k in 0..a.len() {
        out[k] -= scale * (b[k] / (na * nb) - ab * a[k] / (na * na * na * nb));
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nearest reference cell for every content cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub ref_h: usize,
    pub ref_w: usize,
    /// Row-major index into the reference grid.
    pub index: Vec<usize>,
    pub distance: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MatchMap {
    pub fn identity(grid_h: usize, grid_w: usize) -> Self {
        let n = grid_h * grid_w;
        Self {
            grid_h,
            grid_w,
            ref_h: grid_h,
            ref_w: grid_w,
            index: (0..n).collect(),
            distance: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    /// Matched `(row, col)` in the reference grid.
    pub fn matched_cell(&self, cell: usize) -> (usize, usize) {
        let i = self.index[cell];
        (i / self.ref_w, i % self.ref_w)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Exhaustive nearest neighbour under cosine distance. Reference cells are scanned
/// row by row and only a strictly smaller distance replaces the current best, so ties
/// go to the lowest `(row, col)`. With a gate, a cell is valid iff its best distance is
/// below it.
pub fn match_features(content: &FeatureMap, reference: &FeatureMap, gate: Option<f64>) -> Result<MatchMap> {
    if content.channels != reference.channels {
        return Err(Error::input(format!(
            "cannot match {}-channel features against {}-channel features",
            content.channels, reference.channels
        )));
    }
    if reference.cells() == 0 {
        return Err(Error::input("reference feature map has no cells"));
    }
    let ref_norm: Vec<f64> = (0..reference.cells()).map(|j| norm(reference.cell(j))).collect();
    let best = crate::par::map_range(content.cells(), |i| {
        let a = content.cell(i);
        let na = norm(a);
        let mut best = (0usize, f64::INFINITY);
        for (j, &nb) in ref_norm.iter().enumerate() {
            let d = if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                (1.0 - dot(a, reference.cell(j)) / (na * nb)).clamp(0.0, 2.0)
            };
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    });
    Ok(MatchMap {
        grid_h: content.grid_h,
        grid_w: content.grid_w,
        ref_h: reference.grid_h,
        ref_w: reference.grid_w,
        index: best.iter().map(|b| b.0).collect(),
        distance: best.iter().map(|b| b.1).collect(),
        valid: best.iter().map(|b| gate.is_none_or(|g| b.1 < g)).collect(),
    })
}

/// `F_G[i] = F_style[match[i]]`.
pub fn build_guidance(matches: &MatchMap, style: &FeatureMap) -> Result<FeatureMap> {
    if style.grid_h != matches.ref_h || style.grid_w != matches.ref_w {
        return Err(Error::Internal(format!(
            "style map is {}x{} but matches index a {}x{} reference",
            style.grid_h, style.grid_w, matches.ref_h, matches.ref_w
        )));
    }
    let mut out = FeatureMap::zeros(
        matches.grid_h,
        matches.grid_w,
        style.channels,
        style.stride,
        (matches.grid_h * style.stride, matches.grid_w * style.stride),
    );
    for (cell, &j) in matches.index.iter().enumerate() {
        if j >= style.cells() {
            return Err(Error::Internal(format!("match index {j} out of bounds")));
        }
        out.cell_mut(cell).copy_from_slice(style.cell(j));
    }
    Ok(out)
}
