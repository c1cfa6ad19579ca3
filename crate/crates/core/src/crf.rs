//! Fully connected Potts CRF over pixels with a bilateral pairwise kernel:
//! brute-force energy, scribble-clamped mean field and an exhaustive
//! minimizer for tiny grids.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::grid::{LabelMap, ScribbleMask, SoftLabeling, TensorGrid};
use crate::lattice::{ExactFilter, BRUTEFORCE_MAX_POINTS};
use crate::losses::{bilateral_points, FilterBackend};
use crate::scalar::Scalar;

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const CONVERGENCE_TOL: f64 = 1e-5;
/// Largest search space `C^free` accepted by [`exhaustive_map`].
pub const EXHAUSTIVE_MAX_STATES: u64 = 1 << 20;

/// Scaling of the pairwise kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairwiseNorm {
    /// `exp(-|dI|^2 / 2 sa^2 - |dp|^2 / 2 sb^2)` as is.
    #[default]
    Raw,
    /// Rows divided by their total kernel mass (self pair included), as in
    /// the relaxed regularizer of the loss.
    RowNormalized,
}

#[derive(Clone, Debug)]
pub struct DenseCrf<T> {
    /// Per-pixel cost of every label, `(h, w, C)`.
    pub unary: TensorGrid<T>,
    pub image: TensorGrid<T>,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub pairwise_weight: f64,
    pub norm: PairwiseNorm,
}

impl<T: Scalar> DenseCrf<T> {
    pub fn new(unary: TensorGrid<T>, image: TensorGrid<T>, sigma_alpha: f64, sigma_beta: f64) -> Result<Self> {
        let crf = Self {
            unary,
            image,
            sigma_alpha,
            sigma_beta,
            pairwise_weight: 1.0,
            norm: PairwiseNorm::Raw,
        };
        crf.validate()?;
        Ok(crf)
    }

    pub fn with_weight(mut self, w: f64) -> Result<Self> {
        self.pairwise_weight = w;
        self.validate()?;
        Ok(self)
    }

    pub fn with_norm(mut self, norm: PairwiseNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image.same_hw(self.unary.height(), self.unary.width()) {
            return Err(domain_err!(
                "unary is {}x{} but image is {}x{}",
                self.unary.height(),
                self.unary.width(),
                self.image.height(),
                self.image.width()
            ));
        }
        for (name, v) in [("sigma_alpha", self.sigma_alpha), ("sigma_beta", self.sigma_beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain_err!("{name} must be positive, got {v}"));
            }
        }
        if !(self.pairwise_weight >= 0.0 && self.pairwise_weight.is_finite()) {
            return Err(domain_err!("pairwise weight must be nonnegative, got {}", self.pairwise_weight));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.unary.channels()
    }

    pub fn pixels(&self) -> usize {
        self.unary.len()
    }

    fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if !self.image.same_hw(labels.height(), labels.width()) {
            return Err(domain_err!("label map does not match the CRF grid"));
        }
        labels.check_classes(self.classes())
    }

    fn check_constraints(&self, constraints: Option<&ScribbleMask>) -> Result<()> {
        if let Some(s) = constraints {
            if s.height() != self.image.height() || s.width() != self.image.width() {
                return Err(domain_err!("constraint mask does not match the CRF grid"));
            }
            s.check_classes(self.classes())?;
        }
        Ok(())
    }

    fn exact_filter(&self) -> Result<ExactFilter<T>> {
        ExactFilter::new(bilateral_points(&self.image, self.sigma_alpha, self.sigma_beta)?)
    }

    /// Dense `N x N` pairwise weights including `pairwise_weight`, zero diagonal.
    fn pair_matrix(&self) -> Result<Vec<f64>> {
        let filter = self.exact_filter()?;
        let n = self.pixels();
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            let mut row_mass = 0.0;
            for l in 0..n {
                let w = filter.weight(k, l).as_f64();
                row_mass += w;
                if l != k {
                    m[k * n + l] = w;
                }
            }
            let scale = match self.norm {
                PairwiseNorm::Raw => self.pairwise_weight,
                PairwiseNorm::RowNormalized => self.pairwise_weight / row_mass,
            };
            m[k * n..(k + 1) * n].iter_mut().for_each(|v| *v *= scale);
        }
        Ok(m)
    }

    pub fn unary_energy(&self, labels: &LabelMap) -> Result<f64> {
        self.check_labels(labels)?;
        Ok(labels.labels().iter().enumerate().map(|(k, &l)| self.unary.pixel(k)[l].as_f64()).sum())
    }

    /// Sum over ordered pairs `k != l` of the pairwise weight on disagreement.
    pub fn pairwise_energy(&self, labels: &LabelMap) -> Result<f64> {
        self.check_labels(labels)?;
        let n = self.pixels();
        if n > BRUTEFORCE_MAX_POINTS {
            return Err(Error::Refusal(format!(
                "energy evaluation is quadratic; {n} pixels exceed {BRUTEFORCE_MAX_POINTS}"
            )));
        }
        let m = self.pair_matrix()?;
        Ok(pairwise_with(&m, labels.labels()))
    }

    pub fn energy(&self, labels: &LabelMap) -> Result<f64> {
        Ok(self.unary_energy(labels)? + self.pairwise_energy(labels)?)
    }
}

fn pairwise_with(m: &[f64], labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut e = 0.0;
    for k in 0..n {
        let row = &m[k * n..(k + 1) * n];
        for l in 0..n {
            if labels[k] != labels[l] {
                e += row[l];
            }
        }
    }
    e
}

/// Options of [`mean_field`].
#[derive(Clone, Copy, Debug)]
pub struct MeanFieldOptions {
    pub iters: usize,
    pub damping: f64,
    pub backend: FilterBackend,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self { iters: 10, damping: DEFAULT_DAMPING, backend: FilterBackend::Lattice }
    }
}

/// Synchronous damped mean field with annotated pixels clamped to their
/// label. Stops early once no pixel moves more than 1e-5 in L1.
pub fn mean_field<T: Scalar>(
    crf: &DenseCrf<T>,
    constraints: Option<&ScribbleMask>,
    opts: &MeanFieldOptions,
) -> Result<SoftLabeling<T>> {
    crf.validate()?;
    crf.check_constraints(constraints)?;
    if opts.iters == 0 {
        return Err(domain_err!("mean field needs at least one iteration"));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(domain_err!("damping must lie in (0, 1], got {}", opts.damping));
    }
    let (h, w, c) = (crf.unary.height(), crf.unary.width(), crf.classes());
    let n = h * w;
    let neg_unary: Vec<T> = crf.unary.data().iter().map(|&u| -u).collect();
    let clamp = |q: &mut [T]| {
        if let Some(s) = constraints {
            for (k, label) in s.labeled() {
                let row = &mut q[k * c..(k + 1) * c];
                row.fill(T::zero());
                row[label] = T::one();
            }
        }
    };

    let mut q = SoftLabeling::softmax(h, w, c, &neg_unary)?.into_probs();
    clamp(&mut q);
    if crf.pairwise_weight == 0.0 {
        return SoftLabeling::new(h, w, c, q);
    }

    let filter = opts.backend.build(bilateral_points(&crf.image, crf.sigma_alpha, crf.sigma_beta)?)?;
    let row_scale: Vec<T> = match crf.norm {
        PairwiseNorm::Raw => vec![T::one(); n],
        PairwiseNorm::RowNormalized => filter.normalizer()?.iter().map(|&d| T::one() / d).collect(),
    };
    let wp = T::lit(crf.pairwise_weight);
    let damping = T::lit(opts.damping);
    let mut logits = vec![T::zero(); n * c];
    for _ in 0..opts.iters {
        let complement: Vec<T> = q.iter().map(|&v| T::one() - v).collect();
        let msg = filter.apply(&complement, c)?;
        for k in 0..n {
            let self_w = filter.self_weight(k);
            for cls in 0..c {
                let i = k * c + cls;
                let m = (msg[i] - self_w * complement[i]) * row_scale[k];
                logits[i] = neg_unary[i] - wp * m;
            }
        }
        let fresh = SoftLabeling::softmax(h, w, c, &logits)?.into_probs();
        let mut max_change = T::zero();
        for k in 0..n {
            let mut change = T::zero();
            for cls in 0..c {
                let i = k * c + cls;
                let next = (T::one() - damping) * q[i] + damping * fresh[i];
                change += (next - q[i]).abs();
                q[i] = next;
            }
            max_change = max_change.max(change);
        }
        clamp(&mut q);
        if max_change.as_f64() < CONVERGENCE_TOL {
            break;
        }
    }
    SoftLabeling::new(h, w, c, q)
}

/// Global minimizer by enumeration of the free pixels. Among equal
/// energies the lexicographically first flattened labeling wins.
pub fn exhaustive_map<T: Scalar>(crf: &DenseCrf<T>, constraints: Option<&ScribbleMask>) -> Result<LabelMap> {
    crf.validate()?;
    crf.check_constraints(constraints)?;
    let (n, c) = (crf.pixels(), crf.classes());
    let mut labels: Vec<usize> = (0..n).map(|k| constraints.and_then(|s| s.get(k)).unwrap_or(0)).collect();
    let free: Vec<usize> = (0..n).filter(|&k| constraints.and_then(|s| s.get(k)).is_none()).collect();
    let states = (c as f64).powi(free.len() as i32);
    if states > EXHAUSTIVE_MAX_STATES as f64 {
        return Err(Error::Refusal(format!(
            "{c}^{} labelings exceed the enumeration limit of 2^20",
            free.len()
        )));
    }
    let m = crf.pair_matrix()?;
    let unary: Vec<f64> = crf.unary.data().iter().map(|v| v.as_f64()).collect();
    let energy = |labels: &[usize]| {
        labels.iter().enumerate().map(|(k, &l)| unary[k * c + l]).sum::<f64>() + pairwise_with(&m, labels)
    };

    let mut best = labels.clone();
    let mut best_energy = energy(&labels);
    // Odometer with the first free pixel as the most significant digit.
    loop {
        let mut pos = free.len();
        loop {
            if pos == 0 {
                return LabelMap::new(crf.image.height(), crf.image.width(), best);
            }
            pos -= 1;
            let k = free[pos];
            labels[k] += 1;
            if labels[k] < c {
                break;
            }
            labels[k] = 0;
        }
        let e = energy(&labels);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&labels);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{argmax_labeling, one_hot};
    use crate::losses::{r_i, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_crf(h: usize, w: usize, c: usize, seed: u64, sa: f64, sb: f64) -> DenseCrf<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unary = TensorGrid::from_fn(h, w, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        let image = TensorGrid::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        DenseCrf::new(unary, image, sa, sb).unwrap()
    }

    fn random_labels(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> LabelMap {
        LabelMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0..c)).collect()).unwrap()
    }

    #[test]
    fn constant_labels_zero_unary_have_zero_energy() {
        let crf = DenseCrf::new(TensorGrid::<f64>::zeros(3, 3, 2), TensorGrid::filled(3, 3, 1, 0.4), 1.0, 1.0).unwrap();
        assert_eq!(crf.energy(&LabelMap::filled(3, 3, 1)).unwrap(), 0.0);
    }

    #[test]
    fn two_pixel_hand_value() {
        let crf = DenseCrf::new(TensorGrid::<f64>::zeros(1, 2, 2), TensorGrid::zeros(1, 2, 1), 1.0, 1.0).unwrap();
        let e = crf.energy(&LabelMap::new(1, 2, vec![0, 1]).unwrap()).unwrap();
        assert!((e - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn energy_errors() {
        let crf = random_crf(3, 3, 2, 1, 1.0, 1.0);
        assert!(matches!(crf.energy(&LabelMap::filled(3, 4, 0)), Err(Error::Domain(_))));
        assert!(matches!(crf.energy(&LabelMap::filled(3, 3, 2)), Err(Error::Domain(_))));
        let big = DenseCrf::new(TensorGrid::<f64>::zeros(71, 71, 2), TensorGrid::zeros(71, 71, 1), 1.0, 1.0).unwrap();
        assert!(matches!(big.energy(&LabelMap::filled(71, 71, 0)), Err(Error::Refusal(_))));
    }

    #[test]
    fn relaxed_regularizer_is_tight_at_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..50 {
            let crf = random_crf(4, 4, 3, 100 + seed, 0.5, 1.5).with_norm(PairwiseNorm::RowNormalized);
            let labels = random_labels(4, 4, 3, &mut rng);
            let p = one_hot::<f64>(&labels, 3).unwrap();
            let kernel = KernelSpec { sigma_alpha: 0.5, sigma_beta: 1.5, ..KernelSpec::default() };
            let relaxed = r_i(&p, &crf.image, &kernel, true).unwrap().value * 16.0;
            let unary_dot: f64 = p.probs().iter().zip(crf.unary.data()).map(|(a, b)| a * b).sum();
            let e = crf.energy(&labels).unwrap();
            assert!((relaxed + unary_dot - e).abs() < 1e-9, "{} vs {e}", relaxed + unary_dot);
        }
    }

    #[test]
    fn energy_is_label_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let perm = [2usize, 0, 1];
        for seed in 0..10 {
            let crf = random_crf(4, 4, 3, seed, 0.5, 1.5);
            let labels = random_labels(4, 4, 3, &mut rng);
            let permuted = LabelMap::new(4, 4, labels.labels().iter().map(|&l| perm[l]).collect()).unwrap();
            let unary = TensorGrid::from_fn(4, 4, 3, |y, x, c| {
                let src = perm.iter().position(|&p| p == c).unwrap();
                crf.unary.get(y, x, src)
            })
            .unwrap();
            let moved = DenseCrf { unary, ..crf.clone() };
            let (a, b) = (crf.energy(&labels).unwrap(), moved.energy(&permuted).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_gives_unary_softmax() {
        let crf = random_crf(5, 5, 3, 4, 1.0, 1.0).with_weight(0.0).unwrap();
        let neg: Vec<f64> = crf.unary.data().iter().map(|v| -v).collect();
        let expected = SoftLabeling::softmax(5, 5, 3, &neg).unwrap();
        for damping in [0.5, 1.0] {
            let opts = MeanFieldOptions { iters: 5, damping, backend: FilterBackend::Exact };
            let q = mean_field(&crf, None, &opts).unwrap();
            assert_eq!(q.probs(), expected.probs());
        }
    }

    #[test]
    fn full_constraints_clamp_everything() {
        let crf = random_crf(4, 4, 3, 5, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels = random_labels(4, 4, 3, &mut rng);
        let mask = crate::grid::full_mask(&labels);
        for backend in [FilterBackend::Exact, FilterBackend::Lattice] {
            let q = mean_field(&crf, Some(&mask), &MeanFieldOptions { backend, ..Default::default() }).unwrap();
            assert_eq!(q.probs(), one_hot::<f64>(&labels, 3).unwrap().probs());
        }
    }

    #[test]
    fn annotated_pixels_stay_one_hot() {
        let crf = random_crf(6, 6, 3, 7, 0.3, 2.0);
        let mut mask = ScribbleMask::empty(6, 6);
        for k in [0, 7, 14, 30] {
            mask.set(k, Some(k % 3));
        }
        let q = mean_field(&crf, Some(&mask), &MeanFieldOptions::default()).unwrap();
        for (k, l) in mask.labeled() {
            for c in 0..3 {
                assert_eq!(q.get(k, c), if c == l { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mean_field_arguments_are_validated() {
        let crf = random_crf(3, 3, 2, 8, 1.0, 1.0);
        let bad_iters = MeanFieldOptions { iters: 0, ..Default::default() };
        assert!(matches!(mean_field(&crf, None, &bad_iters), Err(Error::Domain(_))));
        let bad_damping = MeanFieldOptions { damping: 0.0, ..Default::default() };
        assert!(matches!(mean_field(&crf, None, &bad_damping), Err(Error::Domain(_))));
        let mut mask = ScribbleMask::empty(3, 3);
        mask.set(0, Some(2));
        assert!(matches!(mean_field(&crf, Some(&mask), &MeanFieldOptions::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_field_lowers_crisp_energy() {
        let mut improved = 0;
        for seed in 0..100 {
            let crf = random_crf(8, 8, 3, 1000 + seed, 0.5, 2.0).with_weight(0.2).unwrap();
            let neg: Vec<f64> = crf.unary.data().iter().map(|v| -v).collect();
            let base = argmax_labeling(&SoftLabeling::softmax(8, 8, 3, &neg).unwrap());
            let q = mean_field(&crf, None, &MeanFieldOptions { iters: 20, ..Default::default() }).unwrap();
            if crf.energy(&argmax_labeling(&q)).unwrap() <= crf.energy(&base).unwrap() {
                improved += 1;
            }
        }
        assert!(improved >= 95, "{improved}/100");
    }

    #[test]
    fn exhaustive_map_is_optimal_over_all_labelings() {
        for seed in 0..5 {
            let crf = random_crf(3, 3, 2, 200 + seed, 0.5, 1.5);
            let best = exhaustive_map(&crf, None).unwrap();
            let e_best = crf.energy(&best).unwrap();
            for code in 0u32..512 {
                let m = LabelMap::new(3, 3, (0..9).map(|k| ((code >> (8 - k)) & 1) as usize).collect()).unwrap();
                assert!(e_best <= crf.energy(&m).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_map_trivial_cases() {
        let crf = random_crf(3, 3, 3, 9, 1.0, 1.0).with_weight(0.0).unwrap();
        let map = exhaustive_map(&crf, None).unwrap();
        for k in 0..9 {
            let u = crf.unary.pixel(k);
            let argmin = (0..3).min_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap()).unwrap();
            assert_eq!(map.labels()[k], argmin);
        }

        let crf = random_crf(3, 3, 3, 10, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels = random_labels(3, 3, 3, &mut rng);
        assert_eq!(exhaustive_map(&crf, Some(&crate::grid::full_mask(&labels))).unwrap(), labels);

        // Ties resolve to the lexicographically first labeling.
        let flat = DenseCrf::new(TensorGrid::<f64>::zeros(1, 2, 2), TensorGrid::zeros(1, 2, 1), 1.0, 1.0)
            .unwrap()
            .with_weight(0.0)
            .unwrap();
        assert_eq!(exhaustive_map(&flat, None).unwrap().labels(), &[0, 0]);
    }

    #[test]
    fn exhaustive_map_refuses_large_instances() {
        let crf = random_crf(5, 5, 2, 12, 1.0, 1.0);
        assert!(matches!(exhaustive_map(&crf, None), Err(Error::Refusal(_))));
    }

    #[test]
    fn mean_field_gap_to_optimum_is_nonnegative() {
        let mut gaps = Vec::new();
        for seed in 0..20 {
            let crf = random_crf(3, 3, 2, 300 + seed, 0.5, 1.5).with_weight(0.5).unwrap();
            let opt = crf.energy(&exhaustive_map(&crf, None).unwrap()).unwrap();
            let opts = MeanFieldOptions { iters: 20, damping: 0.5, backend: FilterBackend::Exact };
            let mf = crf.energy(&argmax_labeling(&mean_field(&crf, None, &opts).unwrap())).unwrap();
            assert!(mf - opt >= -1e-12);
            gaps.push(mf - opt);
        }
        println!("mean field gap to optimum: {:.4}", gaps.iter().sum::<f64>() / gaps.len() as f64);
    }
}
