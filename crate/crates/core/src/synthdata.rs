//! Two-domain synthetic segmentation benchmark: irregular bright blobs
//! with a faint rim on textured backgrounds. The fully annotated source
//! domain is smooth; the scribbled target domain is brighter overall and
//! heavily grained.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::grid::{LabelMap, ScribbleMask, TensorGrid};
use crate::losses::Domain;
use crate::tgio;

pub const DEFAULT_SIZE: usize = 48;
pub const MIN_SIZE: usize = 32;
pub const FG_BUDGET: f64 = 0.07;
pub const IMAGE_BUDGET: f64 = 0.01;
/// Relative contrast of the two-pixel outer band of the object.
pub const RIM_LEVEL: f64 = 0.15;
/// Standard deviation of the target domain's per-pixel noise.
pub const TARGET_GRAIN: f64 = 30.0;
/// Brightness shift of the target domain.
pub const TARGET_OFFSET: f64 = 35.0;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub size: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { seed: 0, n_source: 30, n_target: 10, n_val: 4, n_test: 20, size: DEFAULT_SIZE }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIZE {
            return Err(domain_err!("image size must be at least {MIN_SIZE}, got {}", self.size));
        }
        let counts = [self.n_source, self.n_target, self.n_val, self.n_test];
        if counts.contains(&0) {
            return Err(domain_err!("every split needs at least one image"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    /// Single-channel intensities roughly in `[0, 255]`.
    pub image: TensorGrid<f64>,
    pub mask: LabelMap,
    pub scribbles: Option<ScribbleMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub params: GenParams,
    pub train_source: Vec<Sample>,
    pub train_target: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test_target: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    TrainSource,
    TrainTarget,
    Val,
    TestTarget,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::TrainSource, Split::TrainTarget, Split::Val, Split::TestTarget];

    pub fn name(self) -> &'static str {
        match self {
            Split::TrainSource => "train-source",
            Split::TrainTarget => "train-target",
            Split::Val => "val",
            Split::TestTarget => "test-target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::TrainSource => &self.train_source,
            Split::TrainTarget => &self.train_target,
            Split::Val => &self.val,
            Split::TestTarget => &self.test_target,
        }
    }
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * field[y * w + reflect(x as isize + t as isize - radius, w)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| k * tmp[reflect(y as isize + t as isize - radius, h) * w + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

fn white_noise(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Smoothed noise rescaled to unit standard deviation.
fn texture(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw = gaussian_blur(&white_noise(h * w, 1.0, rng), h, w, sigma);
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
    raw.iter().map(|v| (v - mean) / sd).collect()
}

/// Thresholded sum of one or two Gaussian bumps and smooth noise, keeping
/// a foreground fraction drawn from `[0.04, 0.09]`.
fn blob_mask(size: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let n = size * size;
    let s = size as f64;
    let bumps = rng.gen_range(1..=2);
    let centers: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let margin = 0.22 * s;
            (rng.gen_range(margin..s - margin), rng.gen_range(margin..s - margin), rng.gen_range(0.08..0.13) * s)
        })
        .collect();
    let noise = texture(size, size, s / 10.0, rng);
    let field: Vec<f64> = (0..n)
        .map(|k| {
            let (y, x) = ((k / size) as f64, (k % size) as f64);
            let bump: f64 = centers
                .iter()
                .map(|&(cy, cx, r)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
                .fold(0.0, f64::max);
            bump + 0.12 * noise[k]
        })
        .collect();
    let fraction = rng.gen_range(0.04..0.09);
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite field"));
    let keep = ((fraction * n as f64).round() as usize).max(1);
    let threshold = sorted[keep - 1];
    LabelMap::new(size, size, field.iter().map(|&v| usize::from(v >= threshold)).collect())
        .expect("mask matches grid")
}

/// Appearance of one domain. The object is brighter than the background
/// in both, with a faint two-pixel outer rim. The source is smooth; the
/// target is shifted brighter and carries heavy pixel grain.
fn render(mask: &LabelMap, domain: Domain, rng: &mut ChaCha8Rng) -> TensorGrid<f64> {
    let size = mask.height();
    let n = size * size;
    let fg_pixels: Vec<bool> = mask.labels().iter().map(|&l| l == 1).collect();
    let core = erode(&erode(&fg_pixels, size, size), size, size);
    let level: Vec<f64> = (0..n)
        .map(|k| if core[k] { 1.0 } else if fg_pixels[k] { RIM_LEVEL } else { 0.0 })
        .collect();
    let soft = gaussian_blur(&level, size, size, 0.7);
    let (tex_sigma, grain) = match domain {
        Domain::Source => (3.0, 3.0),
        Domain::Target => (1.0, TARGET_GRAIN),
    };
    let bg = rng.gen_range(60.0..80.0) + if domain == Domain::Target { TARGET_OFFSET } else { 0.0 };
    let contrast = rng.gen_range(100.0..120.0);
    let background = texture(size, size, tex_sigma, rng);
    let white = white_noise(n, grain, rng);
    let data = (0..n)
        .map(|k| (bg + soft[k] * contrast + 8.0 * background[k] + white[k]).clamp(0.0, 255.0))
        .collect();
    TensorGrid::new(size, size, 1, data).expect("image matches grid")
}

fn erode(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|k| {
            let (y, x) = (k / w, k % w);
            mask[k]
                && y > 0
                && y + 1 < h
                && x > 0
                && x + 1 < w
                && mask[k - w]
                && mask[k + w]
                && mask[k - 1]
                && mask[k + 1]
        })
        .collect()
}

fn dilate(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    (0..h * w)
        .map(|k| {
            let (y, x) = (k / w, k % w);
            mask[k]
                || (y > 0 && mask[k - w])
                || (y + 1 < h && mask[k + w])
                || (x > 0 && mask[k - 1])
                || (x + 1 < w && mask[k + 1])
        })
        .collect()
}

const STEPS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Random walk restricted to `allowed`, preferring to keep its heading so
/// strokes look drawn rather than diffuse. Returns the visited pixels.
fn stroke(allowed: &[bool], h: usize, w: usize, start: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut path = vec![start];
    let (mut y, mut x) = ((start / w) as isize, (start % w) as isize);
    let mut heading = STEPS[rng.gen_range(0..8)];
    for _ in 0..len * 4 {
        if path.len() >= len {
            break;
        }
        if rng.gen_bool(0.3) {
            heading = STEPS[rng.gen_range(0..8)];
        }
        let (ny, nx) = (y + heading.0, x + heading.1);
        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize || !allowed[ny as usize * w + nx as usize] {
            heading = STEPS[rng.gen_range(0..8)];
            continue;
        }
        (y, x) = (ny, nx);
        let k = y as usize * w + x as usize;
        if !path.contains(&k) {
            path.push(k);
        }
    }
    path
}

/// Foreground strokes inside the eroded mask covering about `fg_budget`
/// of the foreground, then background strokes away from the object until
/// about `image_budget` of the image is labeled.
pub fn make_scribbles(mask: &LabelMap, seed: u64, fg_budget: f64, image_budget: f64) -> Result<ScribbleMask> {
    mask.check_classes(2)?;
    if !(0.0..=1.0).contains(&fg_budget) || !(0.0..=1.0).contains(&image_budget) {
        return Err(domain_err!("budgets must be fractions"));
    }
    let (h, w) = (mask.height(), mask.width());
    let n = h * w;
    let fg: Vec<bool> = mask.labels().iter().map(|&l| l == 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ScribbleMask::empty(h, w);
    let fg_count = fg.iter().filter(|&&v| v).count();

    if fg_count > 0 {
        let eroded = erode(&erode(&fg, h, w), h, w);
        let interior: Vec<usize> = (0..n).filter(|&k| eroded[k]).collect();
        if interior.is_empty() {
            out.set(centroid_pixel(&fg, h, w), Some(1));
        } else {
            let want = ((fg_budget * fg_count as f64).round() as usize).max(1);
            let mut labeled = 0;
            for _ in 0..16 {
                if labeled >= want {
                    break;
                }
                let start = *interior.choose(&mut rng).expect("non-empty");
                for k in stroke(&eroded, h, w, start, want - labeled, &mut rng) {
                    if out.get(k).is_none() {
                        out.set(k, Some(1));
                        labeled += 1;
                    }
                }
            }
        }
    }

    let far = dilate(&dilate(&fg, h, w), h, w);
    let outside: Vec<bool> = far.iter().map(|&v| !v).collect();
    let candidates: Vec<usize> = (0..n).filter(|&k| outside[k]).collect();
    let total = ((image_budget * n as f64).round() as usize).max(out.labeled_count() + 1);
    let mut remaining = total - out.labeled_count();
    for _ in 0..64 {
        if remaining == 0 || candidates.is_empty() {
            break;
        }
        let start = *candidates.choose(&mut rng).expect("non-empty");
        let len = remaining.min(rng.gen_range(6..14));
        for k in stroke(&outside, h, w, start, len, &mut rng) {
            if out.get(k).is_none() && remaining > 0 {
                out.set(k, Some(0));
                remaining -= 1;
            }
        }
    }
    Ok(out)
}

fn centroid_pixel(fg: &[bool], h: usize, w: usize) -> usize {
    let pts: Vec<usize> = (0..h * w).filter(|&k| fg[k]).collect();
    let cy = pts.iter().map(|&k| (k / w) as f64).sum::<f64>() / pts.len() as f64;
    let cx = pts.iter().map(|&k| (k % w) as f64).sum::<f64>() / pts.len() as f64;
    *pts.iter()
        .min_by(|&&a, &&b| {
            let d = |k: usize| ((k / w) as f64 - cy).powi(2) + ((k % w) as f64 - cx).powi(2);
            d(a).partial_cmp(&d(b)).expect("finite")
        })
        .expect("non-empty foreground")
}

fn sample(id: String, domain: Domain, size: usize, scribble: bool, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let mask = blob_mask(size, rng);
    let image = render(&mask, domain, rng);
    let scribbles = if scribble { Some(make_scribbles(&mask, rng.gen(), FG_BUDGET, IMAGE_BUDGET)?) } else { None };
    Ok(Sample { id, domain, image, mask, scribbles })
}

/// Deterministic dataset for `params.seed`. Source images carry full
/// masks only; target images also carry scribbles.
pub fn generate(params: &GenParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut make = |prefix: &str, count: usize, domain: Domain| -> Result<Vec<Sample>> {
        (0..count)
            .map(|i| sample(format!("{prefix}-{i:03}"), domain, params.size, domain == Domain::Target, &mut rng))
            .collect()
    };
    Ok(Dataset {
        train_source: make("src", params.n_source, Domain::Source)?,
        train_target: make("tgt", params.n_target, Domain::Target)?,
        val: make("val", params.n_val, Domain::Target)?,
        test_target: make("test", params.n_test, Domain::Target)?,
        params: params.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scribbles: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to; filled in on load.
    #[serde(skip)]
    pub root: PathBuf,
    pub params: GenParams,
    pub fg_budget: f64,
    pub image_budget: f64,
    pub train_source: Vec<ManifestEntry>,
    pub train_target: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test_target: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::TrainSource => &self.train_source,
            Split::TrainTarget => &self.train_target,
            Split::Val => &self.val,
            Split::TestTarget => &self.test_target,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries(split)
            .iter()
            .map(|e| {
                let mask = tgio::read_labels(self.root.join(&e.mask))?;
                mask.check_classes(2)?;
                let scribbles = e.scribbles.as_ref().map(|s| tgio::read_scribbles(self.root.join(s))).transpose()?;
                Ok(Sample {
                    id: e.id.clone(),
                    domain: e.domain,
                    image: tgio::read_grid(self.root.join(&e.image))?,
                    mask,
                    scribbles,
                })
            })
            .collect()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Ok(Dataset {
            params: self.params.clone(),
            train_source: self.load_split(Split::TrainSource)?,
            train_target: self.load_split(Split::TrainTarget)?,
            val: self.load_split(Split::Val)?,
            test_target: self.load_split(Split::TestTarget)?,
        })
    }
}

/// Writes every sample as `.tg` files under `dir/<split>/` plus the manifest.
pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut lists: Vec<Vec<ManifestEntry>> = Vec::new();
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        let mut entries = Vec::new();
        for s in data.split(split) {
            let rel = |suffix: &str| format!("{}/{}_{suffix}.tg", split.name(), s.id);
            let entry = ManifestEntry {
                id: s.id.clone(),
                domain: s.domain,
                image: rel("image"),
                mask: rel("mask"),
                scribbles: s.scribbles.as_ref().map(|_| rel("scribbles")),
            };
            tgio::write_grid(dir.join(&entry.image), &s.image)?;
            tgio::write_labels(dir.join(&entry.mask), &s.mask)?;
            if let (Some(path), Some(scr)) = (&entry.scribbles, &s.scribbles) {
                tgio::write_scribbles(dir.join(path), scr)?;
            }
            entries.push(entry);
        }
        lists.push(entries);
    }
    let mut lists = lists.into_iter();
    let mut next = || lists.next().expect("four splits");
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        params: data.params.clone(),
        fg_budget: FG_BUDGET,
        image_budget: IMAGE_BUDGET,
        train_source: next(),
        train_target: next(),
        val: next(),
        test_target: next(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;

    fn small(seed: u64) -> GenParams {
        GenParams { seed, n_source: 4, n_target: 4, n_val: 2, n_test: 20, size: 48 }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(generate(&GenParams { size: 31, ..small(0) }).is_err());
        assert!(generate(&GenParams { n_val: 0, ..small(0) }).is_err());
    }

    #[test]
    fn masks_are_nonempty_and_scribbles_agree() {
        let d = generate(&small(5)).unwrap();
        for split in Split::ALL {
            for s in d.split(split) {
                assert!(s.mask.labels().contains(&1));
                assert_eq!(s.scribbles.is_some(), s.domain == Domain::Target);
                if let Some(scr) = &s.scribbles {
                    for (k, l) in scr.labeled() {
                        assert_eq!(s.mask.labels()[k], l);
                    }
                    assert!(scr.labeled().any(|(_, l)| l == 1));
                    assert!(scr.labeled().any(|(_, l)| l == 0));
                }
            }
        }
    }

    fn background_spread(s: &Sample) -> f64 {
        let v: Vec<f64> = (0..s.mask.len()).filter(|&k| s.mask.labels()[k] == 0).map(|k| s.image.pixel(k)[0]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn target_background_is_grainier() {
        let d = generate(&GenParams { n_source: 20, n_target: 20, ..small(6) }).unwrap();
        for (a, b) in d.train_source.iter().zip(&d.train_target) {
            assert!(background_spread(b) > 2.0 * background_spread(a));
        }
    }

    #[test]
    fn scribble_budgets_hold() {
        let mut image_fracs = Vec::new();
        let mut fg_fracs = Vec::new();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = blob_mask(48, &mut rng);
            let scr = make_scribbles(&mask, seed, FG_BUDGET, IMAGE_BUDGET).unwrap();
            let fg_total = mask.labels().iter().filter(|&&l| l == 1).count();
            let fg_lab = scr.labeled().filter(|&(_, l)| l == 1).count();
            let image_frac = scr.labeled_count() as f64 / mask.len() as f64;
            let fg_frac = fg_lab as f64 / fg_total as f64;
            assert!((0.005..=0.02).contains(&image_frac), "seed {seed}: image fraction {image_frac}");
            assert!((0.5 * FG_BUDGET..=1.5 * FG_BUDGET).contains(&fg_frac), "seed {seed}: fg fraction {fg_frac}");
            image_fracs.push(image_frac);
            fg_fracs.push(fg_frac);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((0.04..=0.10).contains(&mean(&fg_fracs)));
        assert!((0.005..=0.02).contains(&mean(&image_fracs)));
    }

    #[test]
    fn tiny_foreground_falls_back_to_centroid() {
        let mut labels = vec![0; 36 * 36];
        labels[5 * 36 + 7] = 1;
        labels[5 * 36 + 8] = 1;
        let scr = make_scribbles(&LabelMap::new(36, 36, labels).unwrap(), 1, FG_BUDGET, IMAGE_BUDGET).unwrap();
        let fg: Vec<usize> = scr.labeled().filter(|&(_, l)| l == 1).map(|(k, _)| k).collect();
        assert_eq!(fg.len(), 1);
        assert!(fg[0] == 5 * 36 + 7 || fg[0] == 5 * 36 + 8);
    }

    /// Best intensity band `(lo, hi]` for a set of images.
    fn tune(samples: &[Sample]) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for lo in (0..255).step_by(5) {
            for hi in (lo + 5..=260).step_by(5) {
                let d = band_dice(samples, lo as f64, hi as f64);
                if d > best.0 {
                    best = (d, lo as f64, hi as f64);
                }
            }
        }
        (best.1, best.2)
    }

    fn band_dice(samples: &[Sample], lo: f64, hi: f64) -> f64 {
        samples
            .iter()
            .map(|s| {
                let pred = LabelMap::new(
                    s.mask.height(),
                    s.mask.width(),
                    s.image.data().iter().map(|&v| usize::from(v > lo && v <= hi)).collect(),
                )
                .unwrap();
                dice(&pred, &s.mask).unwrap()
            })
            .sum::<f64>()
            / samples.len() as f64
    }

    #[test]
    fn domain_shift_is_real_and_task_is_learnable() {
        let d = generate(&GenParams { n_source: 20, ..small(7) }).unwrap();
        let test_source = generate(&GenParams { n_source: 20, ..small(8) }).unwrap().train_source;
        let (sl, sh) = tune(&d.train_source);
        let (tl, th) = tune(&d.train_target);
        let cross = band_dice(&d.test_target, sl, sh);
        let within = band_dice(&d.test_target, tl, th);
        assert!(cross < 40.0, "source band on target: {cross}");
        assert!(within > cross + 15.0, "target band on target: {within}");
        assert!(band_dice(&test_source, sl, sh) > 70.0);
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&GenParams { n_source: 2, n_target: 2, n_val: 1, n_test: 1, ..small(9) }).unwrap();
        write_dataset(dir.path(), &d).unwrap();
        let m = DatasetManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.load_dataset().unwrap(), d);
        assert_eq!(Split::parse("val").unwrap(), Split::Val);
        assert!(Split::parse("nope").is_err());
    }
}
