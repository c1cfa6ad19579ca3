//! Overlap and surface-distance scores for binary segmentations.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::grid::LabelMap;

/// Physical pixel size `(dy, dx)` in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dy: f64,
    pub dx: f64,
}

impl Default for Spacing {
    fn default() -> Self {
        Self { dy: 1.0, dx: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    /// Percentage in `[0, 100]`.
    pub dice: f64,
    /// Millimeters; `None` when either mask is empty.
    pub assd: Option<f64>,
    pub spacing: Spacing,
}

fn foreground(pred: &LabelMap, truth: &LabelMap) -> Result<(Vec<bool>, Vec<bool>)> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(domain_err!(
            "prediction is {}x{} but reference is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        ));
    }
    let binary = |m: &LabelMap| -> Result<Vec<bool>> {
        m.check_classes(2)?;
        Ok(m.labels().iter().map(|&l| l == 1).collect())
    };
    Ok((binary(pred)?, binary(truth)?))
}

/// `200 |P & T| / (|P| + |T|)`, and 100 when both masks are empty.
pub fn dice(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    let (p, t) = foreground(pred, truth)?;
    let inter = p.iter().zip(&t).filter(|(&a, &b)| a && b).count();
    let total = p.iter().filter(|&&a| a).count() + t.iter().filter(|&&b| b).count();
    Ok(if total == 0 { 100.0 } else { 200.0 * inter as f64 / total as f64 })
}

/// Foreground pixels with at least one background 4-neighbor. Pixels
/// outside the grid do not count as background.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let k = y * width + x;
            if !mask[k] {
                continue;
            }
            let bg = (y > 0 && !mask[k - width])
                || (y + 1 < height && !mask[k + width])
                || (x > 0 && !mask[k - 1])
                || (x + 1 < width && !mask[k + 1]);
            out[k] = bg;
        }
    }
    out
}

/// Average symmetric surface distance: the mean of the two directed mean
/// nearest-boundary distances. `None` when either mask is empty.
pub fn assd(pred: &LabelMap, truth: &LabelMap, spacing: Spacing) -> Result<Option<f64>> {
    if !(spacing.dy > 0.0 && spacing.dx > 0.0) {
        return Err(domain_err!("spacing must be positive, got {:?}", spacing));
    }
    let (p, t) = foreground(pred, truth)?;
    let (h, w) = (pred.height(), pred.width());
    if !p.iter().any(|&v| v) || !t.iter().any(|&v| v) {
        return Ok(None);
    }
    // A mask covering the whole grid has no interior background; its
    // pixels then serve as the surface.
    let surface = |m: &[bool]| {
        let b = boundary(m, h, w);
        if b.iter().any(|&v| v) { b } else { m.to_vec() }
    };
    let (bp, bt) = (surface(&p), surface(&t));
    let directed = |from: &[bool], to: &[bool]| {
        let dist = squared_distance_transform(to, h, w, spacing);
        let (sum, count) = from
            .iter()
            .zip(&dist)
            .filter(|(&on, _)| on)
            .fold((0.0, 0usize), |(s, c), (_, &d)| (s + d.sqrt(), c + 1));
        sum / count as f64
    };
    Ok(Some(0.5 * (directed(&bp, &bt) + directed(&bt, &bp))))
}

pub fn evaluate(pred: &LabelMap, truth: &LabelMap, spacing: Spacing) -> Result<MetricResult> {
    Ok(MetricResult { dice: dice(pred, truth)?, assd: assd(pred, truth, spacing)?, spacing })
}

/// Squared Euclidean distance in mm to the nearest `true` site, by two
/// separable passes of the lower envelope of parabolas.
fn squared_distance_transform(sites: &[bool], h: usize, w: usize, spacing: Spacing) -> Vec<f64> {
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut buf = vec![0.0; h.max(w)];
    for y in 0..h {
        buf[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        let row = envelope_1d(&buf[..w], spacing.dx);
        grid[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    for x in 0..w {
        for y in 0..h {
            buf[y] = grid[y * w + x];
        }
        let col = envelope_1d(&buf[..h], spacing.dy);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    grid
}

/// `out[q] = min_p f[p] + (step (q - p))^2`.
fn envelope_1d(f: &[f64], step: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        return out;
    }
    let s2 = step * step;
    let pos = |i: usize| i as f64 * step;
    // Abscissa where the parabolas rooted at p and q intersect.
    let cross = |p: usize, q: usize| ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
    let mut hull = vec![finite[0]];
    let mut bounds = vec![f64::NEG_INFINITY];
    for &q in &finite[1..] {
        let mut s = cross(*hull.last().unwrap(), q);
        while s <= *bounds.last().unwrap() {
            hull.pop();
            bounds.pop();
            s = cross(*hull.last().unwrap(), q);
        }
        hull.push(q);
        bounds.push(s);
    }
    let mut j = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = pos(i);
        while j + 1 < hull.len() && bounds[j + 1] < x {
            j += 1;
        }
        let p = hull[j];
        let d = (i as f64 - p as f64) * (i as f64 - p as f64) * s2;
        *o = f[p] + d;
    }
    out
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
