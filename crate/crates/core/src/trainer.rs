//! Training loop for the segmenter on mixed source and target batches,
//! with augmentation, delayed cross-image regularization, a plateau
//! learning-rate schedule and early stopping.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_labeling, full_mask, LabelMap, ScribbleMask, TensorGrid};
use crate::losses::{total_loss, BatchItem, DataLoss, Domain, KernelSpec, LossOptions};
use crate::metrics::{self, mean_std, Spacing};
use crate::model::{
    adam_step, backward, forward, AdamConfig, AdamState, ForwardOutput, ModelDims, SegmenterParams,
    DEFAULT_FEATURES, DEFAULT_HIDDEN,
};
use crate::synthdata::Sample;

/// Training variants: which data and which regularizers are used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "scrib")]
    Scrib,
    #[serde(rename = "scrib+ireg")]
    ScribIreg,
    #[serde(rename = "scrib+source")]
    ScribSource,
    #[serde(rename = "scrib+source+ireg")]
    ScribSourceIreg,
    #[default]
    #[serde(rename = "scrib+source+ireg+da")]
    ScribSourceIregDa,
    #[serde(rename = "fullsup-target")]
    FullsupTarget,
    #[serde(rename = "source-only")]
    SourceOnly,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Scrib,
        Mode::ScribIreg,
        Mode::ScribSource,
        Mode::ScribSourceIreg,
        Mode::ScribSourceIregDa,
        Mode::FullsupTarget,
        Mode::SourceOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Scrib => "scrib",
            Mode::ScribIreg => "scrib+ireg",
            Mode::ScribSource => "scrib+source",
            Mode::ScribSourceIreg => "scrib+source+ireg",
            Mode::ScribSourceIregDa => "scrib+source+ireg+da",
            Mode::FullsupTarget => "fullsup-target",
            Mode::SourceOnly => "source-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }

    pub fn uses_source(self) -> bool {
        matches!(self, Mode::ScribSource | Mode::ScribSourceIreg | Mode::ScribSourceIregDa | Mode::SourceOnly)
    }

    pub fn uses_target(self) -> bool {
        self != Mode::SourceOnly
    }

    pub fn image_reg(self) -> bool {
        matches!(self, Mode::ScribIreg | Mode::ScribSourceIreg | Mode::ScribSourceIregDa)
    }

    pub fn cross_reg(self) -> bool {
        self == Mode::ScribSourceIregDa
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub lr_drop_factor: f64,
    pub lr_patience_epochs: usize,
    pub early_stop_epochs: usize,
    pub da_warmup_epochs: usize,
    pub data_loss: DataLoss,
    pub kernel: KernelSpec,
    pub mode: Mode,
    pub seed: u64,
    pub max_epochs: usize,
    pub hidden: usize,
    pub features: usize,
    pub augment: bool,
    /// Brute-force kernels instead of the lattice; only for tiny images.
    pub exact_kernels: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-5,
            batch_source: 2,
            batch_target: 2,
            lr_drop_factor: 5.0,
            lr_patience_epochs: 5,
            early_stop_epochs: 10,
            da_warmup_epochs: 10,
            data_loss: DataLoss::Dice,
            kernel: KernelSpec::default(),
            mode: Mode::default(),
            seed: 0,
            max_epochs: 100,
            hidden: DEFAULT_HIDDEN,
            features: DEFAULT_FEATURES,
            augment: true,
            exact_kernels: false,
            threads: 1,
        }
    }
}

pub const MOVING_AVERAGE_WINDOW: usize = 3;
/// Relative decrease of the moving average that counts as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-4;
/// Warm-up length used in the original experiments; the desk default is shorter.
pub const PAPER_DA_WARMUP_EPOCHS: usize = 70;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return Err(Error::Config("lr_drop_factor must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.hidden == 0 || self.features == 0 {
            return Err(Error::Config("max_epochs, hidden and features must be positive".into()));
        }
        if self.mode.uses_target() && self.batch_target == 0 {
            return Err(Error::Config(format!("mode {} needs target items per batch", self.mode.name())));
        }
        if self.mode.uses_source() && self.batch_source == 0 {
            return Err(Error::Config(format!("mode {} needs source items per batch", self.mode.name())));
        }
        if self.mode.cross_reg() && self.batch_target < 2 {
            return Err(Error::Config("the cross-image regularizer needs at least 2 target items per batch".into()));
        }
        if self.mode.cross_reg() && self.kernel.da_channels > self.features {
            return Err(Error::Config(format!(
                "da_channels {} exceeds the {} feature channels",
                self.kernel.da_channels, self.features
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub data: f64,
    pub ri: f64,
    pub rda: f64,
    pub val: f64,
    pub lr: f64,
    /// Largest regularizer-gradient magnitude reaching a source item.
    pub source_reg_grad: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// CSV without timings, so repeated runs compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,data,ri,rda,val,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{:e},{:e},{:e}", r.epoch, r.loss, r.data, r.ri, r.rda, r.val, r.lr);
        }
        s
    }
}

/// Fixed affine map of 8-bit intensities to the network input range.
pub const INTENSITY_CENTER: f64 = 127.5;
pub const INTENSITY_SCALE: f64 = 64.0;

pub fn standardize(image: &TensorGrid<f64>) -> TensorGrid<f64> {
    let data = image.data().iter().map(|v| (v - INTENSITY_CENTER) / INTENSITY_SCALE).collect();
    TensorGrid::new(image.height(), image.width(), image.channels(), data).expect("same shape")
}

/// Augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augment {
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub noise_fraction: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Self { max_rotation_deg: 15.0, scale_range: (0.9, 1.1), noise_fraction: 0.02 }
    }
}

/// One training view: image, dense labels and optional scribbles.
#[derive(Clone, Debug)]
struct View {
    image: TensorGrid<f64>,
    mask: LabelMap,
    scribbles: Option<ScribbleMask>,
}

/// Rotates and scales about the center (bilinear for intensities, nearest
/// for labels, clamped borders), then adds white noise.
fn augment(sample: &Sample, aug: &Augment, rng: &mut ChaCha8Rng) -> View {
    let (h, w) = (sample.image.height(), sample.image.width());
    let c = sample.image.channels();
    let angle = rng.gen_range(-aug.max_rotation_deg..=aug.max_rotation_deg).to_radians();
    let scale = rng.gen_range(aug.scale_range.0..=aug.scale_range.1);
    let (sin, cos) = angle.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // Inverse map: output pixel -> source coordinate.
    let source = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        ((cos * dy + sin * dx) / scale + cy, (-sin * dy + cos * dx) / scale + cx)
    };
    let clampi = |v: f64, n: usize| v.round().clamp(0.0, n as f64 - 1.0) as usize;

    let (lo, hi) = sample
        .image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo).max(1e-12);
    let noise = Normal::new(0.0, aug.noise_fraction * range).expect("positive std");
    let mut data = Vec::with_capacity(h * w * c);
    let mut labels = Vec::with_capacity(h * w);
    let mut scribbles = sample.scribbles.as_ref().map(|_| ScribbleMask::empty(h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y, x);
            let fy = sy.clamp(0.0, h as f64 - 1.0);
            let fx = sx.clamp(0.0, w as f64 - 1.0);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            for ch in 0..c {
                let g = |yy: usize, xx: usize| sample.image.get(yy, xx, ch);
                let v = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x1)) + ty * ((1.0 - tx) * g(y1, x0) + tx * g(y1, x1));
                data.push(v + noise.sample(rng));
            }
            let (ny, nx) = (clampi(sy, h), clampi(sx, w));
            labels.push(sample.mask.get(ny, nx));
            if let (Some(out), Some(src)) = (scribbles.as_mut(), sample.scribbles.as_ref()) {
                out.set(y * w + x, src.get(ny * w + nx));
            }
        }
    }
    View {
        image: TensorGrid::new(h, w, c, data).expect("same shape"),
        mask: LabelMap::new(h, w, labels).expect("same shape"),
        scribbles,
    }
}

fn plain_view(sample: &Sample) -> View {
    View { image: sample.image.clone(), mask: sample.mask.clone(), scribbles: sample.scribbles.clone() }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: SegmenterParams<f64>,
    pub history: TrainHistory,
}

struct StepStats {
    loss: f64,
    data: f64,
    ri: f64,
    rda: f64,
    source_reg_grad: f64,
}

fn run_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains per `cfg.mode`. Deterministic for a fixed seed: per-item work may
/// run in parallel but results are combined in batch order.
pub fn train(source: &[Sample], target: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mode = cfg.mode;
    if mode.uses_source() && source.is_empty() {
        return Err(Error::Config(format!("mode {} needs source images", mode.name())));
    }
    if mode.uses_target() && target.is_empty() {
        return Err(Error::Config(format!("mode {} needs target images", mode.name())));
    }
    if mode.cross_reg() && target.len() < 2 {
        return Err(Error::Config("the cross-image regularizer needs at least 2 target images".into()));
    }
    if mode.uses_target() && mode != Mode::FullsupTarget && target.iter().any(|s| s.scribbles.is_none()) {
        return Err(Error::Config("target images need scribbles".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let in_channels = source.first().or(target.first()).map(|s| s.image.channels()).unwrap_or(1);
    let dims = ModelDims::new(in_channels, cfg.hidden, cfg.features, 2).map_err(|e| Error::Config(e.to_string()))?;
    run_pool(cfg.threads, || train_inner(source, target, val, cfg, dims))?
}

fn train_inner(
    source: &[Sample],
    target: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    dims: ModelDims,
) -> Result<TrainResult> {
    let mode = cfg.mode;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = SegmenterParams::<f64>::init(rng.gen(), dims);
    let mut adam = AdamState::new(dims);
    let mut lr = cfg.lr;
    let aug = Augment::default();

    let mut history = TrainHistory::default();
    let mut best_params = params.clone();
    let mut window: VecDeque<f64> = VecDeque::new();
    let mut best_ma = f64::INFINITY;
    let mut since_best = 0usize;
    let mut since_drop = 0usize;

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let da_active = mode.cross_reg() && epoch >= cfg.da_warmup_epochs;
        let batches = epoch_batches(source, target, cfg, &mut rng);
        let mut sums = StepStats { loss: 0.0, data: 0.0, ri: 0.0, rda: 0.0, source_reg_grad: 0.0 };
        for (src_idx, tgt_idx) in &batches {
            let step_seed: u64 = rng.gen();
            let channels: Vec<usize> = if da_active {
                let mut pick = index::sample(&mut rng, cfg.features, cfg.kernel.da_channels).into_vec();
                pick.sort_unstable();
                pick
            } else {
                Vec::new()
            };
            let stats = train_step(
                &mut params,
                &mut adam,
                source,
                target,
                src_idx,
                tgt_idx,
                cfg,
                lr,
                da_active,
                channels,
                (step_seed, &aug),
            )?;
            sums.loss += stats.loss;
            sums.data += stats.data;
            sums.ri += stats.ri;
            sums.rda += stats.rda;
            sums.source_reg_grad = sums.source_reg_grad.max(stats.source_reg_grad);
        }
        let steps = batches.len().max(1) as f64;
        let val_loss = validation_loss(&params, val, cfg.data_loss)?;
        history.records.push(EpochRecord {
            epoch,
            loss: sums.loss / steps,
            data: sums.data / steps,
            ri: sums.ri / steps,
            rda: sums.rda / steps,
            val: val_loss,
            lr,
            source_reg_grad: sums.source_reg_grad,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if !params.is_finite() {
            return Err(Error::Numerical(format!("parameters became non-finite at epoch {epoch}")));
        }

        window.push_back(val_loss);
        if window.len() > MOVING_AVERAGE_WINDOW {
            window.pop_front();
        }
        let ma = window.iter().sum::<f64>() / window.len() as f64;
        if !best_ma.is_finite() || ma < best_ma - IMPROVEMENT_TOL * best_ma.abs() {
            best_ma = ma;
            best_params = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
            since_drop = 0;
        } else if epoch >= cfg.da_warmup_epochs {
            since_best += 1;
            since_drop += 1;
        }
        if since_best >= cfg.early_stop_epochs {
            break;
        }
        if since_drop >= cfg.lr_patience_epochs {
            lr /= cfg.lr_drop_factor;
            since_drop = 0;
        }
    }
    Ok(TrainResult { params: best_params, history })
}

/// Index pairs of (source, target) items for every step of one epoch. An
/// epoch is one shuffled pass over the target set, or over the source set
/// when no target data is used.
fn epoch_batches(
    source: &[Sample],
    target: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mode = cfg.mode;
    let draw_source = |rng: &mut ChaCha8Rng| {
        if mode.uses_source() {
            index::sample(rng, source.len(), cfg.batch_source.min(source.len())).into_vec()
        } else {
            Vec::new()
        }
    };
    let mut out = Vec::new();
    if mode.uses_target() {
        let mut order: Vec<usize> = (0..target.len()).collect();
        order.shuffle(rng);
        let per = cfg.batch_target.min(target.len());
        for chunk in order.chunks(per) {
            let mut tgt = chunk.to_vec();
            // Top up a short final batch so the cross-image term has a pair.
            while tgt.len() < per {
                let extra = rng.gen_range(0..target.len());
                if !tgt.contains(&extra) {
                    tgt.push(extra);
                }
            }
            out.push((draw_source(rng), tgt));
        }
    } else {
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_source.min(source.len())) {
            out.push((chunk.to_vec(), Vec::new()));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut SegmenterParams<f64>,
    adam: &mut AdamState<f64>,
    source: &[Sample],
    target: &[Sample],
    src_idx: &[usize],
    tgt_idx: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    da_active: bool,
    channels: Vec<usize>,
    (seed, aug): (u64, &Augment),
) -> Result<StepStats> {
    let mode = cfg.mode;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(&Sample, Domain)> = src_idx
        .iter()
        .map(|&i| (&source[i], Domain::Source))
        .chain(tgt_idx.iter().map(|&i| (&target[i], Domain::Target)))
        .collect();
    let views: Vec<View> = picks
        .iter()
        .map(|(s, _)| if cfg.augment { augment(s, aug, &mut rng) } else { plain_view(s) })
        .collect();
    let supervision: Vec<ScribbleMask> = picks
        .iter()
        .zip(&views)
        .map(|((_, domain), v)| match (domain, mode) {
            (Domain::Target, m) if m != Mode::FullsupTarget => v.scribbles.clone().expect("checked scribbles"),
            _ => full_mask(&v.mask),
        })
        .collect();
    let outputs: Vec<ForwardOutput<f64>> = views
        .par_iter()
        .map(|v| forward(params, &standardize(&v.image)))
        .collect::<Result<_>>()?;

    let batch: Vec<BatchItem<'_, f64>> = (0..views.len())
        .map(|i| BatchItem {
            p: &outputs[i].probs,
            supervision: &supervision[i],
            image: &views[i].image,
            features: &outputs[i].features,
            domain: picks[i].1,
        })
        .collect();
    let opts = LossOptions {
        data_loss: cfg.data_loss,
        ri_enabled: mode.image_reg(),
        da_enabled: da_active,
        channel_subset: channels,
        exact: cfg.exact_kernels,
    };
    let report = total_loss(&batch, &cfg.kernel, &opts)?;

    // Regularizer gradient that reached source items, for the indicator check.
    let mut source_reg_grad: f64 = 0.0;
    for (i, item) in batch.iter().enumerate().filter(|(_, b)| b.domain == Domain::Source) {
        let data_grad = cfg.data_loss.eval(item.p, item.supervision)?.grad;
        for (a, b) in report.gradients[i].data().iter().zip(data_grad.data()) {
            source_reg_grad = source_reg_grad.max((a - b).abs());
        }
    }

    let grads: Vec<SegmenterParams<f64>> = outputs
        .par_iter()
        .zip(report.gradients.par_iter())
        .map(|(out, g)| backward(params, out, g, None))
        .collect::<Result<_>>()?;
    let mut total = SegmenterParams::zeros(params.dims);
    for g in &grads {
        total.add_scaled(1.0, g);
    }
    let adam_cfg = AdamConfig { lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    adam_step(params, &total, adam, &adam_cfg)?;
    Ok(StepStats {
        loss: report.total,
        data: report.data_term,
        ri: report.r_i_term,
        rda: report.r_da_term,
        source_reg_grad,
    })
}

/// Mean data term over the validation images against their full masks.
pub fn validation_loss(params: &SegmenterParams<f64>, val: &[Sample], data_loss: DataLoss) -> Result<f64> {
    let losses: Vec<f64> = val
        .par_iter()
        .map(|s| {
            let out = forward(params, &standardize(&s.image))?;
            Ok(data_loss.eval(&out.probs, &full_mask(&s.mask))?.value)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn predict(params: &SegmenterParams<f64>, image: &TensorGrid<f64>) -> Result<ForwardOutput<f64>> {
    forward(params, &standardize(image))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub domain: Domain,
    pub dice: f64,
    pub assd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: Domain,
    pub count: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub assd_mean: Option<f64>,
    pub assd_std: Option<f64>,
    /// Images whose surface distance was undefined (an empty mask).
    pub assd_undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub images: Vec<ImageScore>,
    pub summaries: Vec<DomainSummary>,
}

impl Evaluation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,domain,dice,assd,assd_defined\n");
        for r in &self.images {
            let domain = match r.domain {
                Domain::Source => "source",
                Domain::Target => "target",
            };
            let (assd, defined) = match r.assd {
                Some(a) => (format!("{a:.6}"), 1),
                None => (String::new(), 0),
            };
            let _ = writeln!(s, "{},{domain},{:.6},{assd},{defined}", r.id, r.dice);
        }
        s
    }

    pub fn summary(&self, domain: Domain) -> Option<&DomainSummary> {
        self.summaries.iter().find(|s| s.domain == domain)
    }
}

/// Scores crisp predictions against reference masks.
pub fn score(predictions: &[(String, Domain, LabelMap, LabelMap)], spacing: Spacing) -> Result<Evaluation> {
    let images: Vec<ImageScore> = predictions
        .iter()
        .map(|(id, domain, pred, truth)| {
            let m = metrics::evaluate(pred, truth, spacing)?;
            Ok(ImageScore { id: id.clone(), domain: *domain, dice: m.dice, assd: m.assd })
        })
        .collect::<Result<_>>()?;
    let mut summaries = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        let rows: Vec<&ImageScore> = images.iter().filter(|r| r.domain == domain).collect();
        if rows.is_empty() {
            continue;
        }
        let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
        let assd: Vec<f64> = rows.iter().filter_map(|r| r.assd).collect();
        let (dice_mean, dice_std) = mean_std(&dice).expect("non-empty");
        let assd_stats = mean_std(&assd);
        summaries.push(DomainSummary {
            domain,
            count: rows.len(),
            dice_mean,
            dice_std,
            assd_mean: assd_stats.map(|s| s.0),
            assd_std: assd_stats.map(|s| s.1),
            assd_undefined: rows.len() - assd.len(),
        });
    }
    Ok(Evaluation { images, summaries })
}

/// Predicts every sample and scores it against its mask.
pub fn evaluate(params: &SegmenterParams<f64>, samples: &[Sample], spacing: Spacing) -> Result<Evaluation> {
    let preds: Vec<(String, Domain, LabelMap, LabelMap)> = samples
        .par_iter()
        .map(|s| {
            let out = predict(params, &s.image)?;
            Ok((s.id.clone(), s.domain, argmax_labeling(&out.probs), s.mask.clone()))
        })
        .collect::<Result<_>>()?;
    score(&preds, spacing)
}
