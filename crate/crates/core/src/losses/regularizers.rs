//! Relaxed Potts regularizers `sum_c p_c^T W (1 - p_c)` over image-specific
//! and cross-image affinities, and the KL divergence used to relate the
//! proposal objective to the regularized loss.

use super::kernel::{bilateral_points, feature_points, DaMode, FilterBackend, KernelSpec};
use super::LossValue;
use crate::error::{domain_err, Result};
use crate::grid::{SoftLabeling, TensorGrid};
use crate::lattice::GaussianFilter;
use crate::scalar::Scalar;

/// Image-specific regularizer with the row-normalized, zero-diagonal
/// bilateral kernel, normalized by the pixel count.
pub fn r_i<T: Scalar>(
    p: &SoftLabeling<T>,
    image: &TensorGrid<T>,
    kernel: &KernelSpec,
    exact: bool,
) -> Result<LossValue<T>> {
    if !image.same_hw(p.height(), p.width()) {
        return Err(domain_err!(
            "image is {}x{} but probabilities are {}x{}",
            image.height(),
            image.width(),
            p.height(),
            p.width()
        ));
    }
    let points = bilateral_points(image, kernel.sigma_alpha, kernel.sigma_beta)?;
    let filter = FilterBackend::from_exact_flag(exact).build(points)?;
    let (value, grad) = quadratic_potts(filter.as_ref(), p.probs(), p.classes())?;
    Ok(LossValue { value, grad: TensorGrid::new(p.height(), p.width(), p.classes(), grad)? })
}

/// `(sum_c p_c^T W (1 - p_c) / N, gradient)` with `W = D^-1 (K - diag K)`.
fn quadratic_potts<T: Scalar>(
    filter: &dyn GaussianFilter<T>,
    p: &[T],
    classes: usize,
) -> Result<(T, Vec<T>)> {
    let n = filter.point_count();
    let d = filter.normalizer()?;
    let complement: Vec<T> = p.iter().map(|&v| T::one() - v).collect();
    let w_comp = crate::lattice::normalized_no_self_with(filter, &d, &complement, classes)?;

    // W^T p = (K - diag K) D^-1 p
    let scaled: Vec<T> = p.iter().enumerate().map(|(i, &v)| v / d[i / classes]).collect();
    let mut wt_p = filter.apply(&scaled, classes)?;
    for (i, v) in wt_p.iter_mut().enumerate() {
        *v -= filter.self_weight(i / classes) * scaled[i];
    }

    let inv_n = T::one() / T::from_count(n);
    let value = p.iter().zip(&w_comp).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
    let grad = w_comp.iter().zip(&wt_p).map(|(&a, &b)| (a - b) * inv_n).collect();
    Ok((value, grad))
}

/// Cross-image regularizer value and the gradients for both inputs.
#[derive(Clone, Debug)]
pub struct PairLoss<T> {
    pub value: T,
    pub grad_i: TensorGrid<T>,
    pub grad_j: TensorGrid<T>,
}

/// Cross-image regularizer over the selected feature channels.
///
/// Kernel features are constants for differentiation: gradients flow into
/// the probabilities only.
pub fn r_da<T: Scalar>(
    p_i: &SoftLabeling<T>,
    p_j: &SoftLabeling<T>,
    g_i: &TensorGrid<T>,
    g_j: &TensorGrid<T>,
    kernel: &KernelSpec,
    channel_subset: &[usize],
    exact: bool,
) -> Result<PairLoss<T>> {
    if p_i.classes() != p_j.classes() {
        return Err(domain_err!("class counts differ: {} vs {}", p_i.classes(), p_j.classes()));
    }
    if !g_i.same_hw(p_i.height(), p_i.width()) || !g_j.same_hw(p_j.height(), p_j.width()) {
        return Err(domain_err!("feature maps do not match the probability grids"));
    }
    let c = p_i.classes();
    let (ni, nj) = (p_i.len(), p_j.len());
    let m = ni + nj;
    let points = feature_points(g_i, g_j, channel_subset, kernel.sigma_gamma)?;
    let filter = FilterBackend::from_exact_flag(exact).build(points)?;

    let mut p = Vec::with_capacity(m * c);
    p.extend_from_slice(p_i.probs());
    p.extend_from_slice(p_j.probs());

    let (value, grad) = match kernel.da_mode {
        DaMode::Joint => quadratic_potts(filter.as_ref(), &p, c)?,
        DaMode::StrictCross => {
            let d = filter.normalizer()?;
            let complement: Vec<T> = p.iter().map(|&v| T::one() - v).collect();
            let a_comp = cross_apply(filter.as_ref(), &complement, ni, c)?;
            let scaled: Vec<T> = p.iter().enumerate().map(|(i, &v)| v / d[i / c]).collect();
            let wt_p = cross_apply(filter.as_ref(), &scaled, ni, c)?;
            let inv_m = T::one() / T::from_count(m);
            let mut value = T::zero();
            let mut grad = Vec::with_capacity(m * c);
            for i in 0..m * c {
                let w_comp = a_comp[i] / d[i / c];
                value += p[i] * w_comp;
                grad.push((w_comp - wt_p[i]) * inv_m);
            }
            (value * inv_m, grad)
        }
    };
    let (gi, gj) = grad.split_at(ni * c);
    Ok(PairLoss {
        value,
        grad_i: TensorGrid::new(p_i.height(), p_i.width(), c, gi.to_vec())?,
        grad_j: TensorGrid::new(p_j.height(), p_j.width(), c, gj.to_vec())?,
    })
}

/// Product with the cross-image block of the kernel: rows of the first
/// `ni` points only see the remaining points and vice versa. One filter
/// pass on `2c` channels carrying `[v_i; 0]` and `[0; v_j]`.
fn cross_apply<T: Scalar>(
    filter: &dyn GaussianFilter<T>,
    v: &[T],
    ni: usize,
    c: usize,
) -> Result<Vec<T>> {
    let m = filter.point_count();
    let mut split = vec![T::zero(); m * 2 * c];
    for k in 0..m {
        let offset = if k < ni { 0 } else { c };
        split[k * 2 * c + offset..k * 2 * c + offset + c].copy_from_slice(&v[k * c..(k + 1) * c]);
    }
    let out = filter.apply(&split, 2 * c)?;
    let mut res = Vec::with_capacity(m * c);
    for k in 0..m {
        let offset = if k < ni { c } else { 0 };
        res.extend_from_slice(&out[k * 2 * c + offset..k * 2 * c + offset + c]);
    }
    Ok(res)
}

/// `sum_k sum_c y log(y / p)` with `0 log 0 = 0` and clipping at 1e-12.
pub fn kl_divergence<T: Scalar>(y_hat: &SoftLabeling<T>, p: &SoftLabeling<T>) -> Result<T> {
    if !y_hat.same_shape(p) {
        return Err(domain_err!("soft labelings differ in shape"));
    }
    let clip = T::lit(super::data::LOG_CLIP);
    Ok(y_hat
        .probs()
        .iter()
        .zip(p.probs())
        .filter(|(&y, _)| y > T::zero())
        .map(|(&y, &q)| y * (y.max(clip).ln() - q.max(clip).ln()))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{one_hot, LabelMap};
    use crate::lattice::{relative_l2, ExactFilter};
    use crate::losses::testing::{fd_check, random_grid, random_soft};

    fn spec() -> KernelSpec {
        KernelSpec { sigma_alpha: 0.5, sigma_beta: 1.5, sigma_gamma: 0.5, ..KernelSpec::default() }
    }

    #[test]
    fn r_i_vanishes_on_constant_labeling() {
        let image = random_grid(6, 6, 1, 1);
        let p: SoftLabeling<f64> = one_hot(&LabelMap::filled(6, 6, 1), 3).unwrap();
        for exact in [true, false] {
            let v = r_i(&p, &image, &spec(), exact).unwrap();
            assert!(v.value.abs() < 1e-12, "exact={exact}: {}", v.value);
        }
    }

    #[test]
    fn r_i_uniform_closed_form() {
        let image = random_grid(2, 2, 1, 2);
        let kernel = spec();
        for classes in [2usize, 3, 4] {
            let p = SoftLabeling::<f64>::uniform(2, 2, classes);
            let v = r_i(&p, &image, &kernel, true).unwrap().value;
            let filter = ExactFilter::new(bilateral_points(&image, kernel.sigma_alpha, kernel.sigma_beta).unwrap()).unwrap();
            // Row mass of the normalized zero-diagonal kernel, by direct sums.
            let mut mass = 0.0;
            for k in 0..4 {
                let total: f64 = (0..4).map(|l| filter.weight(k, l)).sum();
                mass += (0..4).filter(|&l| l != k).map(|l| filter.weight(k, l)).sum::<f64>() / total;
            }
            let expected = (classes as f64 - 1.0) / classes as f64 * mass / 4.0;
            assert!((v - expected).abs() < 1e-12, "C={classes}: {v} vs {expected}");
        }
    }

    #[test]
    fn r_i_lattice_tracks_exact() {
        let image = random_grid(16, 16, 1, 3);
        let p = random_soft(16, 16, 2, 4);
        let kernel = spec();
        let exact = r_i(&p, &image, &kernel, true).unwrap().value;
        let lat = r_i(&p, &image, &kernel, false).unwrap().value;
        assert!(((lat - exact) / exact).abs() < 0.05, "{lat} vs {exact}");
    }

    #[test]
    fn r_i_rejects_shape_mismatch() {
        let image = random_grid(4, 5, 1, 3);
        let p = random_soft(5, 4, 2, 4);
        assert!(matches!(r_i(&p, &image, &spec(), true), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn r_da_agreeing_constant_labelings_vanish() {
        let g_i = random_grid(4, 4, 3, 5);
        let g_j = random_grid(4, 4, 3, 6);
        let p: SoftLabeling<f64> = one_hot(&LabelMap::filled(4, 4, 0), 2).unwrap();
        for mode in [DaMode::StrictCross, DaMode::Joint] {
            let kernel = KernelSpec { da_mode: mode, ..spec() };
            let v = r_da(&p, &p, &g_i, &g_j, &kernel, &[0, 2], true).unwrap();
            assert!(v.value.abs() < 1e-12);
        }
    }

    #[test]
    fn r_da_disconnected_domains_vanish() {
        let g_i = TensorGrid::from_fn(4, 4, 2, |y, x, _| (y * 4 + x) as f64 * 1e-3).unwrap();
        let g_j = TensorGrid::from_fn(4, 4, 2, |y, x, _| 100.0 + (y * 4 + x) as f64 * 1e-3).unwrap();
        let p_i = random_soft(4, 4, 2, 7);
        let p_j = random_soft(4, 4, 2, 8);
        // Joint standardization puts the two clusters 2 units apart.
        let kernel = KernelSpec { da_mode: DaMode::StrictCross, sigma_gamma: 0.1, ..spec() };
        for exact in [true, false] {
            let v = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[0, 1], exact).unwrap();
            assert!(v.value.abs() < 1e-9, "exact={exact}: {}", v.value);
        }
    }

    /// Direct double sum over cross pairs, normalized by the joint row mass.
    fn strict_cross_oracle(
        p_i: &SoftLabeling<f64>,
        p_j: &SoftLabeling<f64>,
        g_i: &TensorGrid<f64>,
        g_j: &TensorGrid<f64>,
        channels: &[usize],
        sigma: f64,
    ) -> f64 {
        let (ni, nj) = (g_i.len(), g_j.len());
        let m = ni + nj;
        let mut feats = vec![vec![0.0; channels.len()]; m];
        for (t, &ch) in channels.iter().enumerate() {
            let col: Vec<f64> = (0..ni).map(|k| g_i.pixel(k)[ch]).chain((0..nj).map(|k| g_j.pixel(k)[ch])).collect();
            let mean = col.iter().sum::<f64>() / m as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
            for k in 0..m {
                feats[k][t] = (col[k] - mean) / sd / sigma;
            }
        }
        let w = |a: usize, b: usize| {
            (-feats[a].iter().zip(&feats[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 2.0).exp()
        };
        let prob = |k: usize, c: usize| if k < ni { p_i.get(k, c) } else { p_j.get(k - ni, c) };
        let classes = p_i.classes();
        let mut total = 0.0;
        for k in 0..m {
            let row: f64 = (0..m).map(|l| w(k, l)).sum();
            for l in 0..m {
                if (k < ni) == (l < ni) {
                    continue;
                }
                for c in 0..classes {
                    total += prob(k, c) * w(k, l) / row * (1.0 - prob(l, c));
                }
            }
        }
        total / m as f64
    }

    #[test]
    fn r_da_strict_cross_matches_double_sum() {
        let g_i = random_grid(4, 4, 4, 9);
        let g_j = random_grid(4, 4, 4, 10);
        let p_i = random_soft(4, 4, 2, 11);
        let p_j = random_soft(4, 4, 2, 12);
        let kernel = KernelSpec { da_mode: DaMode::StrictCross, sigma_gamma: 0.7, ..spec() };
        let oracle = strict_cross_oracle(&p_i, &p_j, &g_i, &g_j, &[1, 3], 0.7);
        let exact = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[1, 3], true).unwrap().value;
        assert!(((exact - oracle) / oracle).abs() < 1e-9, "{exact} vs {oracle}");
        let lat = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[1, 3], false).unwrap().value;
        assert!(((lat - oracle) / oracle).abs() < 0.05, "{lat} vs {oracle}");
    }

    #[test]
    fn r_da_strict_cross_is_symmetric() {
        let g_i = random_grid(5, 4, 3, 13);
        let g_j = random_grid(3, 6, 3, 14);
        let p_i = random_soft(5, 4, 3, 15);
        let p_j = random_soft(3, 6, 3, 16);
        let kernel = KernelSpec { da_mode: DaMode::StrictCross, ..spec() };
        let a = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[0, 2], true).unwrap().value;
        let b = r_da(&p_j, &p_i, &g_j, &g_i, &kernel, &[0, 2], true).unwrap().value;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn r_da_channel_out_of_range() {
        let g = random_grid(3, 3, 2, 1);
        let p = random_soft(3, 3, 2, 2);
        assert!(matches!(r_da(&p, &p, &g, &g, &spec(), &[2], true), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn regularizer_gradients_match_finite_differences() {
        let image = random_grid(5, 5, 1, 20);
        let p = random_soft(5, 5, 3, 21);
        let kernel = spec();
        fd_check(&p, 20, 22, |q| r_i(q, &image, &kernel, true).map(|v| (v.value, v.grad)));

        let g_i = random_grid(4, 4, 3, 23);
        let g_j = random_grid(4, 4, 3, 24);
        let p_j = random_soft(4, 4, 2, 25);
        let p_i = random_soft(4, 4, 2, 26);
        for mode in [DaMode::StrictCross, DaMode::Joint] {
            let kernel = KernelSpec { da_mode: mode, ..spec() };
            fd_check(&p_i, 20, 27, |q| {
                r_da(q, &p_j, &g_i, &g_j, &kernel, &[0, 1], true).map(|v| (v.value, v.grad_i))
            });
            fd_check(&p_j, 20, 28, |q| {
                r_da(&p_i, q, &g_i, &g_j, &kernel, &[0, 1], true).map(|v| (v.value, v.grad_j))
            });
        }
    }

    #[test]
    fn kl_cases() {
        let p = random_soft(3, 3, 4, 30);
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);

        let y: SoftLabeling<f64> = one_hot(&LabelMap::new(1, 3, vec![0, 1, 1]).unwrap(), 2).unwrap();
        let u = SoftLabeling::uniform(1, 3, 2);
        assert!((kl_divergence(&y, &u).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);

        for seed in 0..100 {
            let a = random_soft(3, 3, 3, 1000 + seed);
            let b = random_soft(3, 3, 3, 2000 + seed);
            assert!(kl_divergence(&a, &b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn lattice_r_da_relative_error_is_small_on_larger_inputs() {
        let g_i = random_grid(12, 12, 3, 40);
        let g_j = random_grid(12, 12, 3, 41);
        let p_i = random_soft(12, 12, 2, 42);
        let p_j = random_soft(12, 12, 2, 43);
        for mode in [DaMode::StrictCross, DaMode::Joint] {
            let kernel = KernelSpec { da_mode: mode, sigma_gamma: 0.5, ..spec() };
            let e = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[0, 2], true).unwrap();
            let l = r_da(&p_i, &p_j, &g_i, &g_j, &kernel, &[0, 2], false).unwrap();
            assert!(((l.value - e.value) / e.value).abs() < 0.05);
            assert!(relative_l2(l.grad_i.data(), e.grad_i.data()) < 0.1);
        }
    }
}
