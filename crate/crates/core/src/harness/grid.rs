//! Experiment grids over methods, preprocessing, training sizes and splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::methods::{evaluate_model, fit_method, Family, Method};
use super::preprocess::{preprocess, PreprocMode};
use super::splits::make_splits;
use crate::error::{invalid, Result};

/// Datasets with more than this many entries need an explicit opt-in.
pub const LARGE_ENTRIES: usize = 250_000;

pub const GM_CLUSTERS: std::ops::RangeInclusive<usize> = 1..=13;
pub const MP_RANK_PERCENT: [usize; 6] = [5, 12, 19, 26, 33, 40];
pub const MP_NEIGHBOUR_PERCENT: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub families: Vec<Family>,
    pub latent_dims: Vec<usize>,
    pub leave_outs: Vec<usize>,
    pub preprocs: Vec<PreprocMode>,
    pub n_tr: Vec<usize>,
    pub n_splits: usize,
    pub seed: u64,
    pub steps: usize,
    pub workers: usize,
    pub allow_large: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            families: vec![Family::Lz, Family::LpoDet, Family::LpoRd, Family::Gm, Family::Kde, Family::Mp],
            latent_dims: vec![1, 2, 3],
            leave_outs: vec![1, 2, 5, 10, 15],
            preprocs: PreprocMode::ALL.to_vec(),
            n_tr: vec![50],
            n_splits: 10,
            seed: 0,
            steps: 600,
            workers: 1,
            allow_large: false,
        }
    }
}

fn ceil_percent(total: usize, pct: usize) -> usize {
    (total * pct).div_ceil(100)
}

/// All methods of one family valid for data of dimension `dim` and `n_tr` training points.
pub fn family_methods(family: Family, spec: &GridSpec, dim: usize, n_tr: usize) -> Vec<Method> {
    let dims = || spec.latent_dims.iter().copied().filter(move |&d| d >= 1 && d <= dim.min(n_tr - 1));
    let mut out: Vec<Method> = match family {
        Family::Lz => dims().map(|d| Method::Lz { d }).collect(),
        Family::LooDet | Family::LooRd => dims()
            .map(|d| Method::Loo { d, stochastic: family == Family::LooRd })
            .collect(),
        Family::LpoDet | Family::LpoRd => dims()
            .flat_map(|d| {
                spec.leave_outs
                    .iter()
                    .filter(move |&&p| p >= 1 && p < n_tr)
                    .map(move |&p| Method::Lpo { d, leave_out: p, stochastic: family == Family::LpoRd })
            })
            .collect(),
        Family::Gm => GM_CLUSTERS.filter(|&k| k <= n_tr).map(|k| Method::Gm { k }).collect(),
        Family::Kde => vec![Method::Kde],
        Family::Mp => {
            let ranks = MP_RANK_PERCENT.map(|p| ceil_percent(dim, p));
            let neigh = MP_NEIGHBOUR_PERCENT.map(|p| ceil_percent(n_tr, p));
            ranks
                .iter()
                .filter(|&&d| d >= 1 && d < dim)
                .flat_map(|&d| neigh.iter().filter(|&&r| r >= 1 && r < n_tr).map(move |&r| Method::Mp { d, r }))
                .collect()
        }
    };
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub n_tr: usize,
    pub preproc: PreprocMode,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub family: Family,
    pub params: String,
    pub n_tr: usize,
    pub n_test: usize,
    pub split: usize,
    pub split_seed: u64,
    pub preproc: PreprocMode,
    /// Mean test log density in the preprocessed space.
    pub log_density: Option<f64>,
    pub log_abs_det: Option<f64>,
    pub log_density_raw_space: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub key: CellKey,
    pub method: String,
    pub split_seed: u64,
    pub per_split: Vec<Option<f64>>,
    pub per_split_raw: Vec<Option<f64>>,
    /// Average of per-split means over the successful splits.
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    pub mean_raw_space: Option<f64>,
    /// Average over all test points of all successful splits.
    pub pooled_mean: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub family: Family,
    pub n_tr: usize,
    pub method: String,
    pub preproc: PreprocMode,
    pub mean_raw_space: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub spec: GridSpec,
    pub runs: Vec<RunRecord>,
    pub results: Vec<ExperimentResult>,
    pub best: Vec<BestEntry>,
}

/// Index and value of the largest finite value, first one on ties.
pub fn best_value(values: &[f64]) -> Option<(usize, f64)> {
    values
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |best, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
}

fn mean_and_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Some((var / n).sqrt())
    } else {
        None
    };
    (Some(mean), se)
}

fn run_one(dataset: &Dataset, key: &CellKey, split_index: usize, split: &super::splits::Split, spec: &GridSpec) -> RunRecord {
    let started = Instant::now();
    let method = key.method;
    let seed = spec.seed.wrapping_add(split_index as u64);
    let result = (|| -> Result<(f64, f64)> {
        let (pre, train_y) = preprocess(&dataset.select(&split.train), key.preproc)?;
        let test_y = pre.apply(&dataset.select(&split.test))?;
        let model = fit_method(&method, &train_y, spec.steps, seed)?;
        Ok((evaluate_model(&model, &test_y)?, pre.log_abs_det))
    })();
    let (ld, lad, error) = match result {
        Ok((ld, lad)) if ld.is_finite() => (Some(ld), Some(lad), None),
        Ok((ld, _)) => (None, None, Some(format!("non-finite test log density {ld}"))),
        Err(e) => (None, None, Some(e.to_string())),
    };
    RunRecord {
        dataset: dataset.name.clone(),
        method: method.to_string(),
        family: method.family(),
        params: method.params(),
        n_tr: key.n_tr,
        n_test: split.test.len(),
        split: split_index,
        split_seed: spec.seed,
        preproc: key.preproc,
        log_density: ld,
        log_abs_det: lad,
        log_density_raw_space: ld.zip(lad).map(|(a, b)| a + b),
        seconds: started.elapsed().as_secs_f64(),
        error,
    }
}

/// Fits every grid cell on every split, `workers` runs at a time, in a fixed output order.
pub fn run_grid(dataset: &Dataset, spec: &GridSpec) -> Result<GridOutcome> {
    if dataset.is_empty() || dataset.dim() == 0 {
        return invalid("dataset is empty");
    }
    if dataset.dim() * dataset.len() > LARGE_ENTRIES && !spec.allow_large {
        return invalid(format!(
            "dataset has {} entries; pass --allow-large to run it",
            dataset.dim() * dataset.len()
        ));
    }
    let mut keys = Vec::new();
    let mut splits = BTreeMap::new();
    for &n_tr in &spec.n_tr {
        splits.insert(n_tr, make_splits(dataset.len(), n_tr, spec.n_splits, spec.seed)?);
        for &preproc in &spec.preprocs {
            for &family in &spec.families {
                for method in family_methods(family, spec, dataset.dim(), n_tr) {
                    keys.push(CellKey { n_tr, preproc, method });
                }
            }
        }
    }
    keys.sort();
    keys.dedup();
    let jobs: Vec<(usize, usize)> = (0..keys.len())
        .flat_map(|c| (0..spec.n_splits).map(move |s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| crate::Error::Numerical(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| {
                let key = &keys[c];
                run_one(dataset, key, s, &splits[&key.n_tr][s], spec)
            })
            .collect()
    });

    let results: Vec<ExperimentResult> = keys
        .iter()
        .enumerate()
        .map(|(c, key)| {
            let cell = &runs[c * spec.n_splits..(c + 1) * spec.n_splits];
            let per_split: Vec<Option<f64>> = cell.iter().map(|r| r.log_density).collect();
            let per_split_raw: Vec<Option<f64>> = cell.iter().map(|r| r.log_density_raw_space).collect();
            let ok: Vec<f64> = per_split.iter().flatten().copied().collect();
            let ok_raw: Vec<f64> = per_split_raw.iter().flatten().copied().collect();
            let (mean, std_err) = mean_and_se(&ok);
            let weights: f64 = cell.iter().filter(|r| r.log_density.is_some()).map(|r| r.n_test as f64).sum();
            let pooled = cell
                .iter()
                .filter_map(|r| r.log_density.map(|v| v * r.n_test as f64))
                .sum::<f64>()
                / weights;
            ExperimentResult {
                dataset: dataset.name.clone(),
                key: key.clone(),
                method: key.method.to_string(),
                split_seed: spec.seed,
                per_split,
                per_split_raw,
                mean,
                std_err,
                mean_raw_space: mean_and_se(&ok_raw).0,
                pooled_mean: (weights > 0.0).then_some(pooled),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    let best = summarize_best(&results);
    Ok(GridOutcome {
        spec: spec.clone(),
        runs,
        results,
        best,
    })
}

/// Best raw-space mean per method family and training size.
pub fn summarize_best(results: &[ExperimentResult]) -> Vec<BestEntry> {
    let mut groups: BTreeMap<(Family, usize), Vec<&ExperimentResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.key.method.family(), r.key.n_tr)).or_default().push(r);
    }
    groups
        .into_iter()
        .filter_map(|((family, n_tr), rs)| {
            let values: Vec<f64> = rs.iter().map(|r| r.mean_raw_space.unwrap_or(f64::NAN)).collect();
            best_value(&values).map(|(i, v)| BestEntry {
                family,
                n_tr,
                method: rs[i].method.clone(),
                preproc: rs[i].key.preproc,
                mean_raw_space: v,
            })
        })
        .collect()
}

/// One JSON file per run, `results.json`, and a flat `summary.csv`.
pub fn write_outcome(outcome: &GridOutcome, dir: &Path) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for (i, r) in outcome.runs.iter().enumerate() {
        let name = format!("{i:05}_{}_{}_ntr{}_split{}.json", r.family, r.preproc, r.n_tr, r.split);
        fs::write(runs_dir.join(name), serde_json::to_string_pretty(r)?)?;
    }
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(outcome)?)?;
    let mut csv = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    csv.write_record([
        "dataset",
        "method",
        "params",
        "n_tr",
        "split",
        "preproc",
        "log_density",
        "log_density_raw_space",
    ])
    .map_err(csv_err)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in &outcome.runs {
        csv.write_record([
            r.dataset.clone(),
            r.family.to_string(),
            r.params.clone(),
            r.n_tr.to_string(),
            r.split.to_string(),
            r.preproc.to_string(),
            fmt(r.log_density),
            fmt(r.log_density_raw_space),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{curve, gaussian};

    #[test]
    fn best_of_table_example() {
        assert_eq!(best_value(&[-10.2, -9.1, -12.0]), Some((1, -9.1)));
        assert_eq!(best_value(&[f64::NAN]), None);
    }

    #[test]
    fn baseline_grids() {
        let spec = GridSpec::default();
        let gm = family_methods(Family::Gm, &spec, 9, 50);
        assert_eq!(gm.len(), 13);
        let mp = family_methods(Family::Mp, &spec, 9, 50);
        // ranks ceil(9 * {5..40}%) = {1, 2, 2, 3, 3, 4}; neighbours ceil(50 * {5..30}%) = {3, 5, 8, 10, 13, 15}
        assert_eq!(mp.len(), 4 * 6);
        assert!(mp.contains(&Method::Mp { d: 4, r: 15 }));
        assert_eq!(family_methods(Family::LpoRd, &spec, 2, 50).len(), 2 * 5);
        assert_eq!(family_methods(Family::Gm, &spec, 2, 5).len(), 5);
    }

    fn single_cell() -> GridSpec {
        GridSpec {
            families: vec![Family::Gm],
            preprocs: vec![PreprocMode::Scaled],
            n_tr: vec![20],
            n_splits: 3,
            ..GridSpec::default()
        }
    }

    #[test]
    fn single_cell_grid() {
        let data = gaussian(2, 60, 1);
        let mut spec = single_cell();
        spec.families = vec![Family::Kde];
        let out = run_grid(&data, &spec).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.runs.len(), 3);
        let r = &out.results[0];
        let ok: Vec<f64> = r.per_split.iter().flatten().copied().collect();
        assert_eq!(ok.len(), 3);
        assert!((r.mean.unwrap() - ok.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        for run in &out.runs {
            assert_eq!(run.log_density_raw_space, Some(run.log_density.unwrap() + run.log_abs_det.unwrap()));
        }
    }

    #[test]
    fn reruns_are_bitwise_identical_across_worker_counts() {
        let data = curve(60, 0.05, 2);
        let mut spec = single_cell();
        spec.families = vec![Family::Gm, Family::Kde, Family::Mp, Family::LpoDet];
        spec.latent_dims = vec![1];
        spec.leave_outs = vec![2];
        spec.n_tr = vec![12];
        spec.n_splits = 2;
        spec.steps = 6;
        let a = run_grid(&data, &spec).unwrap();
        spec.workers = 4;
        let b = run_grid(&data, &spec).unwrap();
        let key = |o: &GridOutcome| o.results.iter().map(|r| r.mean.map(f64::to_bits)).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
        assert!(a.results.iter().all(|r| r.failures == 0), "{:?}", a.runs.iter().find(|r| r.error.is_some()));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // constant data cannot be whitened
        let data = Dataset {
            name: "flat".into(),
            features: nalgebra::DMatrix::from_element(2, 10, 1.0),
            source_format: crate::harness::data::SourceFormat::Synthetic,
        };
        let mut spec = single_cell();
        spec.n_tr = vec![4];
        spec.preprocs = vec![PreprocMode::Whitened];
        spec.families = vec![Family::Kde];
        let out = run_grid(&data, &spec).unwrap();
        assert_eq!(out.results[0].failures, 3);
        assert!(out.results[0].mean.is_none());
        assert!(out.best.is_empty());
    }

    #[test]
    fn large_datasets_need_opt_in() {
        let data = Dataset {
            name: "big".into(),
            features: nalgebra::DMatrix::zeros(256, 1000),
            source_format: crate::harness::data::SourceFormat::Synthetic,
        };
        assert!(run_grid(&data, &single_cell()).is_err());
    }

    #[test]
    fn outputs_written() {
        let data = gaussian(2, 40, 3);
        let out = run_grid(&data, &single_cell()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outcome(&out, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + out.runs.len());
        assert!(csv.starts_with("dataset,method,params,n_tr,split,preproc,log_density,log_density_raw_space"));
        assert_eq!(fs::read_dir(dir.path().join("runs")).unwrap().count(), out.runs.len());
        let back: GridOutcome =
            serde_json::from_str(&fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
        assert_eq!(back.results.len(), out.results.len());
    }
}
