//! Weakly supervised segmentation loss: a partial data term on annotated
//! pixels plus relaxed Potts regularizers on target-domain predictions.

pub mod data;
pub mod kernel;
pub mod regularizers;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::grid::{ScribbleMask, SoftLabeling, TensorGrid};
use crate::scalar::Scalar;

pub use data::{partial_cross_entropy, partial_dice};
pub use kernel::{bilateral_points, feature_points, DaMode, FilterBackend, KernelSpec};
pub use regularizers::{kl_divergence, r_da, r_i, PairLoss};

/// A scalar loss and its gradient with respect to the probabilities.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: TensorGrid<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataLoss {
    CrossEntropy,
    #[default]
    Dice,
}

impl DataLoss {
    pub fn eval<T: Scalar>(self, p: &SoftLabeling<T>, scribbles: &ScribbleMask) -> Result<LossValue<T>> {
        match self {
            Self::CrossEntropy => partial_cross_entropy(p, scribbles),
            Self::Dice => partial_dice(p, scribbles),
        }
    }
}

/// One network output with its supervision and inputs to the kernels.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a, T> {
    pub p: &'a SoftLabeling<T>,
    /// Scribbles for target images, the full mask for source images.
    pub supervision: &'a ScribbleMask,
    pub image: &'a TensorGrid<T>,
    pub features: &'a TensorGrid<T>,
    pub domain: Domain,
}

#[derive(Clone, Debug)]
pub struct LossOptions {
    pub data_loss: DataLoss,
    pub ri_enabled: bool,
    pub da_enabled: bool,
    /// Feature channels used by the cross-image kernel.
    pub channel_subset: Vec<usize>,
    pub exact: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            data_loss: DataLoss::Dice,
            ri_enabled: true,
            da_enabled: true,
            channel_subset: vec![0, 1],
            exact: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossReport<T> {
    pub total: T,
    pub data_term: T,
    pub r_i_term: T,
    pub r_da_term: T,
    /// Gradient of `total` with respect to each item's probabilities.
    pub gradients: Vec<TensorGrid<T>>,
}

fn target_indices<T>(batch: &[BatchItem<'_, T>]) -> Vec<usize> {
    batch.iter().enumerate().filter(|(_, b)| b.domain == Domain::Target).map(|(i, _)| i).collect()
}

fn check_batch<T>(batch: &[BatchItem<'_, T>], opts: &LossOptions) -> Result<Vec<usize>> {
    if batch.is_empty() {
        return Err(domain_err!("empty batch"));
    }
    let targets = target_indices(batch);
    if opts.da_enabled && targets.len() < 2 {
        return Err(domain_err!(
            "cross-image regularizer needs at least 2 target items, got {}",
            targets.len()
        ));
    }
    Ok(targets)
}

fn axpy<T: Scalar>(acc: &mut TensorGrid<T>, scale: T, g: &TensorGrid<T>) -> Result<()> {
    let data: Vec<T> = acc.data().iter().zip(g.data()).map(|(&a, &b)| a + scale * b).collect();
    *acc = TensorGrid::new(acc.height(), acc.width(), acc.channels(), data)?;
    Ok(())
}

/// Data term summed over the batch; image and cross-image regularizers on
/// target items only, the latter over every unordered target pair.
pub fn total_loss<T: Scalar>(
    batch: &[BatchItem<'_, T>],
    kernel: &KernelSpec,
    opts: &LossOptions,
) -> Result<LossReport<T>> {
    kernel.validate()?;
    let targets = check_batch(batch, opts)?;
    let (lambda_i, lambda_da) = (T::lit(kernel.lambda_i), T::lit(kernel.lambda_da));

    let mut data_term = T::zero();
    let mut gradients = Vec::with_capacity(batch.len());
    for item in batch {
        let v = opts.data_loss.eval(item.p, item.supervision)?;
        data_term += v.value;
        gradients.push(v.grad);
    }

    let mut r_i_term = T::zero();
    if opts.ri_enabled {
        for &i in &targets {
            let v = r_i(batch[i].p, batch[i].image, kernel, opts.exact)?;
            r_i_term += v.value;
            axpy(&mut gradients[i], lambda_i, &v.grad)?;
        }
    }

    let mut r_da_term = T::zero();
    if opts.da_enabled {
        for (a, &i) in targets.iter().enumerate() {
            for &j in &targets[a + 1..] {
                let (bi, bj) = (&batch[i], &batch[j]);
                let v = r_da(bi.p, bj.p, bi.features, bj.features, kernel, &opts.channel_subset, opts.exact)?;
                r_da_term += v.value;
                axpy(&mut gradients[i], lambda_da, &v.grad_i)?;
                axpy(&mut gradients[j], lambda_da, &v.grad_j)?;
            }
        }
    }

    Ok(LossReport {
        total: data_term + lambda_i * r_i_term + lambda_da * r_da_term,
        data_term,
        r_i_term,
        r_da_term,
        gradients,
    })
}

/// Joint objective over network outputs and per-image proposals:
/// data term on `p`, plus for target items `KL(y_hat, p)` and the
/// regularizers evaluated on the proposals. Proposals of source items are
/// ignored.
pub fn coseg_objective<T: Scalar>(
    batch: &[BatchItem<'_, T>],
    proposals: &[SoftLabeling<T>],
    kernel: &KernelSpec,
    opts: &LossOptions,
) -> Result<T> {
    kernel.validate()?;
    let targets = check_batch(batch, opts)?;
    if proposals.len() != batch.len() {
        return Err(domain_err!("{} proposals for {} items", proposals.len(), batch.len()));
    }
    let mut total = T::zero();
    for item in batch {
        total += opts.data_loss.eval(item.p, item.supervision)?.value;
    }
    for &i in &targets {
        total += kl_divergence(&proposals[i], batch[i].p)?;
        if opts.ri_enabled {
            total += T::lit(kernel.lambda_i) * r_i(&proposals[i], batch[i].image, kernel, opts.exact)?.value;
        }
    }
    if opts.da_enabled {
        for (a, &i) in targets.iter().enumerate() {
            for &j in &targets[a + 1..] {
                let (bi, bj) = (&batch[i], &batch[j]);
                let v = r_da(
                    &proposals[i],
                    &proposals[j],
                    bi.features,
                    bj.features,
                    kernel,
                    &opts.channel_subset,
                    opts.exact,
                )?;
                total += T::lit(kernel.lambda_da) * v.value;
            }
        }
    }
    Ok(total)
}


#[cfg(test)]
mod tests {
    use super::testing::{random_grid, random_soft};
    use super::*;
    use crate::grid::{argmax_labeling, full_mask};

    struct Fixture {
        p: Vec<SoftLabeling<f64>>,
        masks: Vec<ScribbleMask>,
        images: Vec<TensorGrid<f64>>,
        feats: Vec<TensorGrid<f64>>,
        domains: Vec<Domain>,
    }

    impl Fixture {
        fn new(domains: &[Domain], seed: u64) -> Self {
            let n = domains.len();
            let p: Vec<_> = (0..n).map(|i| random_soft(6, 6, 2, seed + i as u64)).collect();
            let masks = (0..n)
                .map(|i| {
                    let mut s = ScribbleMask::empty(6, 6);
                    for k in (i % 3..36).step_by(5) {
                        s.set(k, Some(k % 2));
                    }
                    if domains[i] == Domain::Source {
                        s = full_mask(&argmax_labeling(&p[i]));
                    }
                    s
                })
                .collect();
            Self {
                images: (0..n).map(|i| random_grid(6, 6, 1, seed + 100 + i as u64)).collect(),
                feats: (0..n).map(|i| random_grid(6, 6, 3, seed + 200 + i as u64)).collect(),
                p,
                masks,
                domains: domains.to_vec(),
            }
        }

        fn batch(&self) -> Vec<BatchItem<'_, f64>> {
            (0..self.p.len())
                .map(|i| BatchItem {
                    p: &self.p[i],
                    supervision: &self.masks[i],
                    image: &self.images[i],
                    features: &self.feats[i],
                    domain: self.domains[i],
                })
                .collect()
        }
    }

    fn kernel() -> KernelSpec {
        KernelSpec { sigma_alpha: 0.3, sigma_beta: 2.0, sigma_gamma: 0.5, lambda_i: 0.3, lambda_da: 0.2, ..Default::default() }
    }

    fn exact_opts() -> LossOptions {
        LossOptions { exact: true, ..Default::default() }
    }

    const MIXED: [Domain; 4] = [Domain::Source, Domain::Target, Domain::Source, Domain::Target];

    #[test]
    fn decomposition_identity() {
        let fx = Fixture::new(&MIXED, 1);
        let r = total_loss(&fx.batch(), &kernel(), &exact_opts()).unwrap();
        let k = kernel();
        let recomposed = r.data_term + k.lambda_i * r.r_i_term + k.lambda_da * r.r_da_term;
        assert!((r.total - recomposed).abs() < 1e-9);
        assert!(r.r_i_term > 0.0 && r.r_da_term > 0.0);
    }

    #[test]
    fn zero_weights_leave_data_term() {
        let fx = Fixture::new(&MIXED, 2);
        let k = KernelSpec { lambda_i: 0.0, lambda_da: 0.0, ..kernel() };
        let r = total_loss(&fx.batch(), &k, &exact_opts()).unwrap();
        assert_eq!(r.total, r.data_term);
    }

    #[test]
    fn source_items_skip_regularizers() {
        let fx = Fixture::new(&[Domain::Source], 3);
        let opts = LossOptions { da_enabled: false, ..exact_opts() };
        let r = total_loss(&fx.batch(), &kernel(), &opts).unwrap();
        assert_eq!(r.total, r.data_term);
        assert_eq!(r.r_i_term, 0.0);
    }

    #[test]
    fn cross_image_term_needs_two_targets() {
        let fx = Fixture::new(&[Domain::Source, Domain::Target, Domain::Source], 4);
        assert!(matches!(total_loss(&fx.batch(), &kernel(), &exact_opts()), Err(crate::Error::Domain(_))));
        assert!(matches!(
            total_loss::<f64>(&[], &kernel(), &exact_opts()),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn proposal_objective_at_network_output_equals_loss() {
        for (seed, mode) in [(5, DaMode::StrictCross), (6, DaMode::Joint)] {
            let fx = Fixture::new(&[Domain::Target, Domain::Source, Domain::Target, Domain::Target], seed);
            let k = KernelSpec { da_mode: mode, ..kernel() };
            for data_loss in [DataLoss::Dice, DataLoss::CrossEntropy] {
                let opts = LossOptions { data_loss, ..exact_opts() };
                let r = total_loss(&fx.batch(), &k, &opts).unwrap();
                let inner = coseg_objective(&fx.batch(), &fx.p, &k, &opts).unwrap();
                assert!((r.total - inner).abs() < 1e-9, "{} vs {inner}", r.total);
            }
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let fx = Fixture::new(&MIXED, 7);
        let opts = exact_opts();
        let r = total_loss(&fx.batch(), &kernel(), &opts).unwrap();
        for item in [0usize, 3] {
            let analytic = r.gradients[item].clone();
            super::testing::fd_check(&fx.p[item], 20, 8 + item as u64, |q| {
                let mut batch = fx.batch();
                batch[item].p = q;
                let v = total_loss(&batch, &kernel(), &opts)?;
                Ok((v.total, analytic.clone()))
            });
        }
    }
}
