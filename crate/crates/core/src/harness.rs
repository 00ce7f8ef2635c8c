//! Cross-validated grid search over stepsize and regularization.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{fit_scaling, parse_libsvm, scale_dataset, Dataset, Label, LabelMap};
use crate::error::{ConfigError, DataError, EvalError, HarnessError};
use crate::eval::auc_of;
use crate::learner::train_pass;
use crate::model::{Algorithm, LearnerSpec, Model};

pub const INNER_FOLDS: usize = 5;
pub const DEFAULT_TAU: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data_path: String,
    pub algo: Algorithm,
    pub eta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub tau: usize,
    pub proj_dim: Option<usize>,
    pub folds: usize,
    pub trials: usize,
    pub seed: u64,
    pub positive_labels: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn new(data_path: impl Into<String>, algo: Algorithm) -> Self {
        ExperimentConfig {
            data_path: data_path.into(),
            algo,
            eta_grid: power_grid(-12, 10),
            lambda_grid: power_grid(-10, 2),
            tau: DEFAULT_TAU,
            proj_dim: None,
            folds: 5,
            trials: 5,
            seed: 0,
            positive_labels: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.folds < 2 {
            return invalid("folds must be at least 2");
        }
        if self.trials < 1 {
            return invalid("trials must be at least 1");
        }
        if self.eta_grid.is_empty() || self.lambda_grid.is_empty() {
            return invalid("grids must be nonempty");
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return invalid("stepsizes must be positive and finite");
        }
        if self
            .lambda_grid
            .iter()
            .any(|&l| !(l >= 0.0 && l.is_finite()))
        {
            return invalid("regularization values must be nonnegative and finite");
        }
        if self.algo.needs_tau() && self.tau == 0 {
            return invalid("tau must be at least 1");
        }
        if self.algo.needs_proj_dim() && self.proj_dim.is_none() {
            return invalid("this algorithm needs a projection dimension");
        }
        Ok(())
    }

    pub fn label_map(&self) -> LabelMap {
        match &self.positive_labels {
            Some(set) => LabelMap::Positive(set.clone()),
            None => LabelMap::Binary,
        }
    }

    pub fn load_data(&self) -> Result<Dataset, DataError> {
        load_libsvm(&self.data_path, &self.label_map())
    }
}

pub fn load_libsvm(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Dataset, DataError> {
    let file = File::open(path.as_ref())
        .map_err(|e| DataError::Format(format!("cannot open {}: {e}", path.as_ref().display())))?;
    let ds = parse_libsvm(BufReader::new(file), labels)?;
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(ds)
}

/// `2^lo, 2^(lo+1), ..., 2^hi`.
pub fn power_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|p| 2f64.powi(p)).collect()
}

/// Parses `0.1,2^-3,...` or `2^[lo:hi]` (the two forms may be mixed).
pub fn parse_grid(text: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |t: &str| ConfigError::Invalid(format!("bad grid entry `{t}`"));
    let mut out = Vec::new();
    for token in text.split(',').map(str::trim) {
        if token.is_empty() {
            return Err(bad(token));
        }
        if let Some(range) = token.strip_prefix("2^[").and_then(|r| r.strip_suffix(']')) {
            let (lo, hi) = range.split_once(':').ok_or_else(|| bad(token))?;
            let lo: i32 = lo.trim().parse().map_err(|_| bad(token))?;
            let hi: i32 = hi.trim().parse().map_err(|_| bad(token))?;
            if lo > hi {
                return Err(bad(token));
            }
            out.extend(power_grid(lo, hi));
        } else if let Some(exp) = token.strip_prefix("2^") {
            let p: f64 = exp.parse().map_err(|_| bad(token))?;
            out.push(2f64.powf(p));
        } else {
            out.push(token.parse().map_err(|_| bad(token))?);
        }
    }
    Ok(out)
}

/// SplitMix64 finalizer; derives independent stream seeds from tuples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, &p| mix(acc ^ mix(p)))
}

/// Stratified `k`-fold assignment: `folds[f]` lists the held-out positions of
/// fold `f`, each in increasing order.
pub fn stratified_folds(
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, HarnessError> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.instances()[i].label == Label::Pos);
    if pos.len() < k || neg.len() < k {
        return Err(HarnessError::Split(format!(
            "cannot split {} positives and {} negatives into {k} folds with both classes",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        folds[slot % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of fold `f`.
fn training_positions(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    train.sort_unstable();
    train
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub eta: f64,
    pub lambda: f64,
    /// `None` when some run diverged to non-finite scores.
    pub inner_auc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Chosen {
    pub eta: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub trial: usize,
    pub fold: usize,
    pub eta: f64,
    pub lambda: f64,
    pub test_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    /// Inner-CV AUC per grid cell, averaged over all outer folds.
    pub cells: Vec<CellResult>,
    pub chosen: Chosen,
    pub per_fold: Vec<FoldResult>,
    pub outer_auc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub wall_time_sec: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per outer evaluation.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "fold", "eta", "lambda", "test_auc"])?;
        for r in &self.per_fold {
            w.write_record([
                r.trial.to_string(),
                r.fold.to_string(),
                r.eta.to_string(),
                r.lambda.to_string(),
                r.test_auc.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Argmax of inner AUC; ties go to the smaller stepsize, then the smaller
/// regularizer. Cells without a score are never chosen.
pub fn grid_select(cells: &[CellResult]) -> Option<Chosen> {
    cells
        .iter()
        .filter_map(|c| c.inner_auc.map(|a| (a, c)))
        .max_by(|(a, x), (b, y)| {
            a.total_cmp(b)
                .then_with(|| y.eta.total_cmp(&x.eta))
                .then_with(|| y.lambda.total_cmp(&x.lambda))
        })
        .map(|(_, c)| Chosen {
            eta: c.eta,
            lambda: c.lambda,
        })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug)]
struct RunSetup {
    algo: Algorithm,
    tau: usize,
    proj_dim: usize,
}

impl RunSetup {
    fn train(
        &self,
        train: &Dataset,
        eta: f64,
        lambda: f64,
        seed: u64,
    ) -> Result<Model, ConfigError> {
        let mut model = Model::build(&LearnerSpec {
            algo: self.algo,
            dim: train.dim(),
            lambda,
            tau: self.tau,
            proj_dim: self.proj_dim,
            seed: derive_seed(&[seed, 1]),
        })?;
        train_pass(&mut model, train.stream(Some(derive_seed(&[seed, 2]))), eta);
        Ok(model)
    }
}

/// AUC of `model` on `test`, or `None` if the model produced non-finite
/// scores.
fn held_out_auc(model: &Model, test: &Dataset) -> Result<Option<f64>, HarnessError> {
    match auc_of(model, test) {
        Ok(a) => Ok(Some(a)),
        Err(EvalError::NonFiniteScore(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

struct OuterOutcome {
    cells: Vec<CellResult>,
    result: FoldResult,
}

fn run_outer_fold(
    setup: RunSetup,
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    trial: usize,
    fold: usize,
) -> Result<OuterOutcome, HarnessError> {
    let params = fit_scaling(train)?;
    let train = scale_dataset(train, &params);
    let test = scale_dataset(test, &params);
    let base = [config.seed, trial as u64, fold as u64];
    let inner = stratified_folds(
        &train,
        INNER_FOLDS,
        derive_seed(&[base[0], base[1], base[2], 0]),
    )?;
    let parts: Vec<(Dataset, Dataset)> = (0..INNER_FOLDS)
        .map(|f| {
            (
                train.subset(&training_positions(&inner, f)),
                train.subset(&inner[f]),
            )
        })
        .collect();

    let grid: Vec<(usize, f64, f64)> = config
        .eta_grid
        .iter()
        .flat_map(|&eta| config.lambda_grid.iter().map(move |&lambda| (eta, lambda)))
        .enumerate()
        .map(|(i, (eta, lambda))| (i, eta, lambda))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(cell, eta, lambda)| {
            let mut total = Some(0.0);
            for (f, (tr, va)) in parts.iter().enumerate() {
                let seed = derive_seed(&[base[0], base[1], base[2], 1 + cell as u64, f as u64]);
                let model = setup.train(tr, eta, lambda, seed)?;
                total = match (total, held_out_auc(&model, va)?) {
                    (Some(t), Some(a)) => Some(t + a),
                    _ => None,
                };
            }
            Ok(CellResult {
                eta,
                lambda,
                inner_auc: total.map(|t| t / INNER_FOLDS as f64),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let chosen = grid_select(&cells).ok_or_else(|| {
        HarnessError::Split(format!(
            "every grid cell diverged (trial {trial}, fold {fold})"
        ))
    })?;
    let seed = derive_seed(&[base[0], base[1], base[2], u64::MAX]);
    let model = setup.train(&train, chosen.eta, chosen.lambda, seed)?;
    let test_auc = auc_of(&model, &test)?;
    Ok(OuterOutcome {
        cells,
        result: FoldResult {
            trial,
            fold,
            eta: chosen.eta,
            lambda: chosen.lambda,
            test_auc,
        },
    })
}

/// Runs `trials` rounds of stratified `folds`-fold cross-validation on an
/// already loaded dataset.
pub fn run_cv_on(config: &ExperimentConfig, ds: &Dataset) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let setup = RunSetup {
        algo: config.algo,
        tau: config.tau,
        proj_dim: config.proj_dim.unwrap_or(0),
    };
    let mut jobs = Vec::new();
    for trial in 0..config.trials {
        let folds = stratified_folds(ds, config.folds, derive_seed(&[config.seed, trial as u64]))?;
        for f in 0..config.folds {
            jobs.push((
                trial,
                f,
                ds.subset(&training_positions(&folds, f)),
                ds.subset(&folds[f]),
            ));
        }
    }
    let pool = thread_pool();
    let run = || {
        jobs.par_iter()
            .map(|(trial, fold, train, test)| {
                run_outer_fold(setup, config, train, test, *trial, *fold)
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    };
    let outcomes = match &pool {
        Some(p) => p.install(run),
        None => run(),
    }?;

    let n = outcomes.len() as f64;
    let cells: Vec<CellResult> = (0..outcomes[0].cells.len())
        .map(|i| {
            let first = outcomes[0].cells[i];
            let sum = outcomes
                .iter()
                .map(|o| o.cells[i].inner_auc)
                .try_fold(0.0, |acc, a| a.map(|a| acc + a));
            CellResult {
                eta: first.eta,
                lambda: first.lambda,
                inner_auc: sum.map(|s| s / n),
            }
        })
        .collect();
    let chosen = grid_select(&cells).unwrap_or_else(|| {
        let r = outcomes[0].result;
        Chosen {
            eta: r.eta,
            lambda: r.lambda,
        }
    });
    let per_fold: Vec<FoldResult> = outcomes.iter().map(|o| o.result).collect();
    let outer_auc: Vec<f64> = per_fold.iter().map(|r| r.test_auc).collect();
    let (mean, std) = mean_std(&outer_auc);
    Ok(EvalReport {
        config: config.clone(),
        cells,
        chosen,
        per_fold,
        outer_auc,
        mean,
        std,
        wall_time_sec: started.elapsed().as_secs_f64(),
    })
}

pub fn run_cv(config: &ExperimentConfig) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let ds = config.load_data()?;
    run_cv_on(config, &ds)
}

/// A pool sized by `OPAUC_THREADS`, if set.
fn thread_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var("OPAUC_THREADS").ok()?.trim().parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .ok()
}
