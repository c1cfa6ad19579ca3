//! Dense 2D containers: multi-channel scalar fields, crisp and soft labelings,
//! and partial (scribble) annotations.
//!
//! All containers store pixels row-major as `(y, x)` with channels innermost.

use crate::error::{domain_err, Result};
use crate::scalar::Scalar;

/// Dense `height x width x channels` field of finite scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> TensorGrid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(domain_err!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            ));
        }
        if data.len() != height * width * channels {
            return Err(domain_err!(
                "grid data length {} does not match {height}x{width}x{channels}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(domain_err!("non-finite grid value at flat index {i}"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "grid dimensions must be positive");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Builds a grid from a per-pixel closure `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }
    /// Channel vector of pixel `k` (flat index).
    #[inline]
    pub fn pixel(&self, k: usize) -> &[T] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub fn same_hw(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn cast<U: Scalar>(&self) -> TensorGrid<U> {
        TensorGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Crisp per-pixel labeling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(domain_err!("label map dimensions must be positive"));
        }
        if labels.len() != height * width {
            return Err(domain_err!(
                "label count {} does not match {height}x{width}",
                labels.len()
            ));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self { height, width, labels: vec![label; height * width] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// Largest label plus one.
    pub fn min_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= classes) {
            Some(k) => Err(domain_err!(
                "label {} at pixel {k} is outside [0, {classes})",
                self.labels[k]
            )),
            None => Ok(()),
        }
    }
}

/// Per-pixel probability vectors over `classes` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabeling<T> {
    height: usize,
    width: usize,
    classes: usize,
    probs: Vec<T>,
}

impl<T: Scalar> SoftLabeling<T> {
    /// Validates that every pixel vector lies on the simplex.
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<T>) -> Result<Self> {
        let out = Self::new_unchecked(height, width, classes, probs)?;
        out.check_simplex()?;
        Ok(out)
    }

    /// Shape-checked construction without the simplex check, for relaxed
    /// variables that only need to be finite (finite-difference probes,
    /// gradients).
    pub fn new_unchecked(height: usize, width: usize, classes: usize, probs: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(domain_err!("soft labeling dimensions must be positive"));
        }
        if probs.len() != height * width * classes {
            return Err(domain_err!(
                "probability length {} does not match {height}x{width}x{classes}",
                probs.len()
            ));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(domain_err!("non-finite probability"));
        }
        Ok(Self { height, width, classes, probs })
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        let v = T::one() / T::from_count(classes);
        Self { height, width, classes, probs: vec![v; height * width * classes] }
    }

    /// Row-wise softmax of `logits` (one row of `classes` entries per pixel).
    pub fn softmax(height: usize, width: usize, classes: usize, logits: &[T]) -> Result<Self> {
        if logits.len() != height * width * classes {
            return Err(domain_err!("logit length mismatch"));
        }
        let mut probs = logits.to_vec();
        for row in probs.chunks_mut(classes) {
            softmax_in_place(row);
        }
        Self::new(height, width, classes, probs)
    }

    pub fn check_simplex(&self) -> Result<()> {
        let tol = T::simplex_tol();
        for (k, row) in self.probs.chunks(self.classes).enumerate() {
            if row.iter().any(|&p| p < T::zero()) {
                return Err(domain_err!("negative probability at pixel {k}"));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(domain_err!("probabilities at pixel {k} sum to {s}"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }
    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
    #[inline]
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }
    #[inline]
    pub fn get(&self, k: usize, c: usize) -> T {
        self.probs[k * self.classes + c]
    }
    #[inline]
    pub fn pixel(&self, k: usize) -> &[T] {
        &self.probs[k * self.classes..(k + 1) * self.classes]
    }

    /// Column of class `c` as a per-pixel vector.
    pub fn class_column(&self, c: usize) -> Vec<T> {
        self.probs.iter().skip(c).step_by(self.classes).copied().collect()
    }

    pub fn same_shape(&self, other: &SoftLabeling<T>) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }

    pub fn to_grid(&self) -> TensorGrid<T> {
        TensorGrid {
            height: self.height,
            width: self.width,
            channels: self.classes,
            data: self.probs.clone(),
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Partial annotation: each pixel is either unlabeled or carries a class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScribbleMask {
    height: usize,
    width: usize,
    entries: Vec<Option<usize>>,
}

impl ScribbleMask {
    pub fn new(height: usize, width: usize, entries: Vec<Option<usize>>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(domain_err!("scribble mask dimensions must be positive"));
        }
        if entries.len() != height * width {
            return Err(domain_err!(
                "scribble entry count {} does not match {height}x{width}",
                entries.len()
            ));
        }
        Ok(Self { height, width, entries })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, entries: vec![None; height * width] }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    #[inline]
    pub fn entries(&self) -> &[Option<usize>] {
        &self.entries
    }
    #[inline]
    pub fn get(&self, k: usize) -> Option<usize> {
        self.entries[k]
    }
    pub fn set(&mut self, k: usize, label: Option<usize>) {
        self.entries[k] = label;
    }

    /// Size of the annotated set.
    pub fn labeled_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Iterator over `(pixel, label)` pairs of the annotated set.
    pub fn labeled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().enumerate().filter_map(|(k, e)| e.map(|l| (k, l)))
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labeled().find(|&(_, l)| l >= classes) {
            Some((k, l)) => Err(domain_err!(
                "scribble label {l} at pixel {k} is outside [0, {classes})"
            )),
            None => Ok(()),
        }
    }
}

/// Embeds a crisp labeling as simplex vertices.
pub fn one_hot<T: Scalar>(labels: &LabelMap, classes: usize) -> Result<SoftLabeling<T>> {
    if classes == 0 {
        return Err(domain_err!("class count must be positive"));
    }
    labels.check_classes(classes)?;
    let mut probs = vec![T::zero(); labels.len() * classes];
    for (k, &l) in labels.labels().iter().enumerate() {
        probs[k * classes + l] = T::one();
    }
    Ok(SoftLabeling { height: labels.height(), width: labels.width(), classes, probs })
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labeling<T: Scalar>(p: &SoftLabeling<T>) -> LabelMap {
    let labels = p
        .probs()
        .chunks(p.classes())
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    LabelMap { height: p.height(), width: p.width(), labels }
}

/// Annotation covering every pixel (fully labeled source images).
pub fn full_mask(labels: &LabelMap) -> ScribbleMask {
    ScribbleMask {
        height: labels.height(),
        width: labels.width(),
        entries: labels.labels().iter().map(|&l| Some(l)).collect(),
    }
}
