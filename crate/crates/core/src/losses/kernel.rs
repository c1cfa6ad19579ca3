use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::grid::TensorGrid;
use crate::lattice::{ExactFilter, FeaturePointSet, GaussianFilter, LatticeFilter};
use crate::scalar::Scalar;

/// Which pairs the cross-image regularizer connects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaMode {
    /// Only pairs with one endpoint in each image.
    #[default]
    StrictCross,
    /// Every pair of the concatenated point set, within-image pairs included.
    Joint,
}

/// Bandwidths and weights of the pairwise regularizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    /// Intensity bandwidth of the bilateral kernel.
    pub sigma_alpha: f64,
    /// Spatial bandwidth of the bilateral kernel, in pixels.
    pub sigma_beta: f64,
    /// Bandwidth of the cross-image feature kernel, applied to standardized
    /// feature channels.
    pub sigma_gamma: f64,
    pub lambda_i: f64,
    pub lambda_da: f64,
    pub da_mode: DaMode,
    /// Feature channels sampled per step for the cross-image kernel.
    pub da_channels: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            sigma_alpha: 15.0,
            sigma_beta: 3.0,
            sigma_gamma: 0.1,
            lambda_i: 0.05,
            lambda_da: 0.05,
            da_mode: DaMode::StrictCross,
            da_channels: 2,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain_err!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("lambda_i", self.lambda_i), ("lambda_da", self.lambda_da)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain_err!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.da_channels == 0 {
            return Err(domain_err!("da_channels must be at least 1"));
        }
        Ok(())
    }
}

/// Exact (brute-force) or lattice evaluation of kernel products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterBackend {
    Exact,
    #[default]
    Lattice,
}

impl FilterBackend {
    pub fn from_exact_flag(exact: bool) -> Self {
        if exact {
            Self::Exact
        } else {
            Self::Lattice
        }
    }

    pub fn build<T: Scalar>(self, points: FeaturePointSet<T>) -> Result<Box<dyn GaussianFilter<T>>> {
        Ok(match self {
            Self::Exact => Box::new(ExactFilter::new(points)?),
            Self::Lattice => Box::new(LatticeFilter::build(&points)?),
        })
    }
}

/// Bilateral features per pixel: every image channel over `sigma_alpha`,
/// then `(y, x)` over `sigma_beta`.
pub fn bilateral_points<T: Scalar>(
    image: &TensorGrid<T>,
    sigma_alpha: f64,
    sigma_beta: f64,
) -> Result<FeaturePointSet<T>> {
    let c = image.channels();
    let dim = c + 2;
    let (ia, ib) = (T::lit(1.0 / sigma_alpha), T::lit(1.0 / sigma_beta));
    let mut f = Vec::with_capacity(image.len() * dim);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let k = y * image.width() + x;
            f.extend(image.pixel(k).iter().map(|&v| v * ia));
            f.push(T::from_count(y) * ib);
            f.push(T::from_count(x) * ib);
        }
    }
    FeaturePointSet::new(image.len(), dim, f)
}

/// Cross-image features: the selected channels of both feature maps,
/// standardized jointly over the two images and divided by `sigma_gamma`.
/// No spatial coordinates. Rows of `g_i` come first.
pub fn feature_points<T: Scalar>(
    g_i: &TensorGrid<T>,
    g_j: &TensorGrid<T>,
    channel_subset: &[usize],
    sigma_gamma: f64,
) -> Result<FeaturePointSet<T>> {
    if channel_subset.is_empty() {
        return Err(domain_err!("channel subset is empty"));
    }
    let available = g_i.channels().min(g_j.channels());
    if let Some(&ch) = channel_subset.iter().find(|&&ch| ch >= available) {
        return Err(domain_err!("feature channel {ch} out of range (have {available})"));
    }
    let (ni, nj) = (g_i.len(), g_j.len());
    let dim = channel_subset.len();
    let mut f = vec![T::zero(); (ni + nj) * dim];
    for (t, &ch) in channel_subset.iter().enumerate() {
        let column = || {
            (0..ni).map(move |k| g_i.pixel(k)[ch]).chain((0..nj).map(move |k| g_j.pixel(k)[ch]))
        };
        let m = T::from_count(ni + nj);
        let mean = column().sum::<T>() / m;
        let var = column().map(|v| (v - mean) * (v - mean)).sum::<T>() / m;
        let sd = var.sqrt();
        let scale = if sd.as_f64() > 1e-12 { T::one() / sd } else { T::one() };
        let inv = T::lit(1.0 / sigma_gamma);
        for (k, v) in column().enumerate() {
            f[k * dim + t] = (v - mean) * scale * inv;
        }
    }
    FeaturePointSet::new(ni + nj, dim, f)
}
