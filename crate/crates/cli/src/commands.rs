use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribble_da::crf::{mean_field, DenseCrf, MeanFieldOptions};
use scribble_da::grid::{argmax_labeling, LabelMap, ScribbleMask, SoftLabeling, TensorGrid};
use scribble_da::lattice::{filter_bruteforce, relative_l2, FeaturePointSet, GaussianFilter, LatticeFilter};
use scribble_da::losses::Domain;
use scribble_da::metrics::Spacing;
use scribble_da::model::{load_checkpoint, save_checkpoint, SegmenterParams};
use scribble_da::synthdata::{generate, write_dataset, DatasetManifest, GenParams, Sample, Split, MANIFEST_FILE};
use scribble_da::trainer::{self, score, Evaluation};
use scribble_da::{tgio, Error, Result};

use crate::config::RunConfig;
use crate::{CrfArgs, EvalArgs, FilterBenchArgs, GenDataArgs, InferArgs, RefineArgs, TrainArgs};

/// Probabilities are floored before taking logs for the CRF unary.
const PROB_FLOOR: f64 = 1e-12;

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let params = GenParams {
        seed: a.seed,
        n_source: a.n_source,
        n_target: a.n_target,
        n_val: a.n_val,
        n_test: a.n_test,
        size: a.size,
    };
    let data = generate(&params)?;
    write_dataset(&a.out_dir, &data)?;
    println!("wrote {}", a.out_dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let run = RunConfig::from_args(a)?;
    let manifest = DatasetManifest::load(&run.data_manifest)?;
    let data = manifest.load_dataset()?;
    fs::create_dir_all(&run.out_dir)?;
    write_json(&run.out_dir.join("config.json"), &run)?;

    let result = trainer::train(&data.train_source, &data.train_target, &data.val, &run.train)?;
    save_checkpoint(run.out_dir.join("checkpoint"), &result.params, run.train.seed)?;
    fs::write(run.out_dir.join("history.csv"), result.history.to_csv())?;
    let eval = trainer::evaluate(&result.params, &data.test_target, Spacing::default())?;
    fs::write(run.out_dir.join("metrics.csv"), eval.to_csv())?;
    write_json(&run.out_dir.join("metrics.json"), &eval.summaries)?;

    let dice = eval.summary(Domain::Target).map_or(f64::NAN, |s| s.dice_mean);
    println!(
        "mode {} epochs {} best {} target dice {dice:.2} -> {}",
        run.train.mode.name(),
        result.history.records.len(),
        result.history.best_epoch,
        run.out_dir.display()
    );
    Ok(())
}

fn crf_options(c: &CrfArgs) -> MeanFieldOptions {
    MeanFieldOptions { iters: c.iters, damping: c.damping, ..MeanFieldOptions::default() }
}

fn neg_log(p: &SoftLabeling<f64>) -> Result<TensorGrid<f64>> {
    TensorGrid::new(
        p.height(),
        p.width(),
        p.classes(),
        p.probs().iter().map(|&v| -v.max(PROB_FLOOR).ln()).collect(),
    )
}

fn refine_soft(
    unary: TensorGrid<f64>,
    image: &TensorGrid<f64>,
    scribbles: Option<&ScribbleMask>,
    c: &CrfArgs,
) -> Result<SoftLabeling<f64>> {
    let crf = DenseCrf::new(unary, image.clone(), c.sigma_alpha, c.sigma_beta)?.with_weight(c.pairwise_weight)?;
    mean_field(&crf, scribbles, &crf_options(c))
}

fn load_split(manifest: &Path, split: &str) -> Result<Vec<Sample>> {
    DatasetManifest::load(manifest)?.load_split(Split::parse(split)?)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let (params, _) = load_checkpoint::<f64>(&a.checkpoint)?;
    let samples = load_split(&a.manifest, &a.split)?;
    fs::create_dir_all(&a.out_dir)?;
    for s in &samples {
        let mut probs = trainer::predict(&params, &s.image)?.probs;
        if a.crf_postprocess {
            probs = refine_soft(neg_log(&probs)?, &s.image, s.scribbles.as_ref(), &a.crf)?;
        }
        tgio::write_soft(a.out_dir.join(format!("{}_soft.tg", s.id)), &probs)?;
        tgio::write_labels(a.out_dir.join(format!("{}_pred.tg", s.id)), &argmax_labeling(&probs))?;
    }
    println!("wrote {} predictions to {}", samples.len(), a.out_dir.display());
    Ok(())
}

pub fn refine(a: &RefineArgs) -> Result<()> {
    let image = tgio::read_grid::<f64>(&a.image)?;
    let unary = tgio::read_grid::<f64>(&a.unary)?;
    let scribbles = a.scribbles.as_ref().map(tgio::read_scribbles).transpose()?;
    let soft = refine_soft(unary, &image, scribbles.as_ref(), &a.crf)?;
    tgio::write_soft(&a.out, &soft)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("refined");
    let crisp = a.out.with_file_name(format!("{stem}_crisp.tg"));
    tgio::write_labels(&crisp, &argmax_labeling(&soft))?;
    println!("wrote {} and {}", a.out.display(), crisp.display());
    Ok(())
}

fn eval_checkpoint(params: &SegmenterParams<f64>, samples: &[Sample]) -> Result<Evaluation> {
    trainer::evaluate(params, samples, Spacing::default())
}

fn eval_predictions(dir: &Path, samples: &[Sample]) -> Result<Evaluation> {
    let rows = samples
        .iter()
        .map(|s| {
            let pred: LabelMap = tgio::read_labels(dir.join(format!("{}_pred.tg", s.id)))?;
            Ok((s.id.clone(), s.domain, pred, s.mask.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    score(&rows, Spacing::default())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let samples = load_split(&a.manifest, &a.split)?;
    let eval = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => eval_checkpoint(&load_checkpoint::<f64>(ckpt)?.0, &samples)?,
        (None, Some(dir)) => eval_predictions(dir, &samples)?,
        (None, None) => return Err(Error::Config("one of --checkpoint or --predictions is required".into())),
    };
    fs::write(&a.out, eval.to_csv())?;
    for s in &eval.summaries {
        let assd = s.assd_mean.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        println!("{:?}: n {} dice {:.2} +- {:.2} assd {assd}", s.domain, s.count, s.dice_mean, s.dice_std);
    }
    Ok(())
}

pub fn filter_bench(a: &FilterBenchArgs) -> Result<()> {
    println!("n,dim,lattice_ms,oracle_ms,rel_l2_err");
    for &dim in &a.dim {
        for &n in &a.n {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ ((dim as u64) << 32) ^ n as u64);
            let features: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>() * a.spread).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let points = FeaturePointSet::new(n, dim, features)?;
            let t = Instant::now();
            let approx = LatticeFilter::build(&points)?.apply(&values, 1)?;
            let lattice_ms = t.elapsed().as_secs_f64() * 1e3;
            let (oracle_ms, err) = if a.oracle {
                let t = Instant::now();
                let exact = filter_bruteforce(&points, &values, 1)?;
                (format!("{:.3}", t.elapsed().as_secs_f64() * 1e3), format!("{:.6}", relative_l2(&approx, &exact)))
            } else {
                (String::new(), String::new())
            };
            println!("{n},{dim},{lattice_ms:.3},{oracle_ms},{err}");
        }
    }
    Ok(())
}
