//! Cross-product experiment runs with incremental, single-writer persistence.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use msphs::baselines::{GpPhsModel, MsOdeModel};
use msphs::inference::{Anchor, FieldPredictor, FitReport, HamiltonianPredictor, MsPhsModel};
use msphs::phs_models::benchmark;
use msphs::simulate::simulate_benchmark;
use msphs::{BenchmarkSystem, MultistepScheme, SystemId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::mesh::eval_mesh;
use crate::method::MethodId;
use crate::metrics::{h_metrics, vf_metrics};
use crate::stats::Summary;

pub const RUNS_FILE: &str = "runs.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const MESH_DIR: &str = "meshes";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub system: SystemId,
    pub method: MethodId,
    pub noise_variance: f64,
    pub sigma_j: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn cell(&self) -> CellKey {
        CellKey {
            system: self.system,
            method: self.method,
            noise_variance: self.noise_variance,
            sigma_j: self.sigma_j,
        }
    }

    /// File-name friendly identifier.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_nv{:?}_sj{:?}_s{}",
            self.system, self.method, self.noise_variance, self.sigma_j, self.seed
        )
    }
}

/// One aggregation cell: everything but the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub system: SystemId,
    pub method: MethodId,
    pub noise_variance: f64,
    pub sigma_j: f64,
}

impl CellKey {
    fn order_key(&self) -> (SystemId, MethodId, u64, u64) {
        (self.system, self.method, self.noise_variance.to_bits(), self.sigma_j.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub vf_mse: f64,
    pub vf_cosine_distance: f64,
    pub h_mse: Option<f64>,
    pub mean_sigma_h2: Option<f64>,
    pub ratio: Option<f64>,
}

impl RunMetrics {
    fn all_valid(&self) -> bool {
        [Some(self.vf_mse), Some(self.vf_cosine_distance), self.h_mse, self.mean_sigma_h2, self.ratio]
            .into_iter()
            .flatten()
            .all(|v| v.is_finite() && v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Position in the sweep's cross product.
    pub index: usize,
    pub spec: RunSpec,
    pub metrics: Option<RunMetrics>,
    pub hyperparameters: BTreeMap<String, f64>,
    pub fit: Option<FitReport>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.metrics.is_some()
    }
}

/// Every run of the sweep, in cross-product order
/// (system, method, noise, jitter, seed).
pub fn expand(config: &ExperimentConfig) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &system in &config.systems {
        for &method in &config.methods {
            for &noise_variance in &config.noise_variances {
                for &sigma_j in &config.jitter_stds {
                    for &seed in &config.seeds {
                        out.push(RunSpec {
                            system,
                            method,
                            noise_variance,
                            sigma_j,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Predictions of one fitted model on the mesh.
pub struct MeshEvaluation {
    pub points: Vec<Vec<f64>>,
    pub truth_field: Vec<Vec<f64>>,
    pub field_mean: Vec<Vec<f64>>,
    pub field_variance: Option<Vec<Vec<f64>>>,
    pub truth_h: Vec<f64>,
    pub surface: Option<(Vec<f64>, Vec<f64>)>,
}

struct Fitted {
    field: Box<dyn FieldPredictor>,
    surface: Option<Box<dyn HamiltonianPredictor>>,
    hyperparameters: BTreeMap<String, f64>,
    fit: FitReport,
}

fn named(names: Vec<String>, values: Vec<f64>, prefix: &str) -> impl Iterator<Item = (String, f64)> + '_ {
    names.into_iter().zip(values).map(move |(n, v)| (format!("{prefix}{n}"), v))
}

fn fit_method(config: &ExperimentConfig, spec: &RunSpec, system: &BenchmarkSystem, dataset: msphs::TrajectoryDataset) -> Result<Fitted> {
    let fit_cfg = config.optimizer.fit_config(spec.seed);
    let n = system.state_dim();
    let anchor = Anchor::origin(n, config.anchor_value.unwrap_or_else(|| system.hamiltonian(&vec![0.0; n])));
    match spec.method {
        MethodId::MsPhs { order } => {
            let scheme = MultistepScheme::adams_bashforth(order)?;
            let (model, fit) = MsPhsModel::fit(dataset, system.structure, scheme, &fit_cfg)?;
            let h = model.hyperparameters();
            let hyperparameters = named(h.parameter_names(), h.to_vector(), "").collect();
            let surface = model.hamiltonian_posterior(&anchor)?;
            Ok(Fitted {
                field: Box::new(model),
                surface: Some(Box::new(surface)),
                hyperparameters,
                fit,
            })
        }
        MethodId::MsOde { order } => {
            let scheme = MultistepScheme::adams_bashforth(order)?;
            let (model, fit) = MsOdeModel::fit(&dataset, system.structure, scheme, &fit_cfg)?;
            let mut hyperparameters = BTreeMap::new();
            for (i, c) in model.components().iter().enumerate() {
                let k = c.kernel();
                let prefix = format!("f{}.", i + 1);
                for (m, v) in k.log_lengthscales().iter().enumerate() {
                    hyperparameters.insert(format!("{prefix}log_lengthscale_{}", m + 1), *v);
                }
                hyperparameters.insert(format!("{prefix}log_signal_variance"), k.log_signal_variance());
                hyperparameters.insert(format!("{prefix}log_noise_variance"), c.noise_variance().ln());
            }
            Ok(Fitted {
                field: Box::new(model),
                surface: None,
                hyperparameters,
                fit,
            })
        }
        MethodId::GpPhsLoess | MethodId::GpPhsSavgol => {
            let smoother = spec.method.smoother().expect("prefilter method");
            let (model, fit) = GpPhsModel::fit(&dataset, smoother, system.structure, &fit_cfg)?;
            let h = model.hyperparameters();
            let hyperparameters = named(h.parameter_names(), h.to_vector(), "").collect();
            let surface = model.hamiltonian_posterior(&anchor)?;
            Ok(Fitted {
                field: Box::new(model),
                surface: Some(Box::new(surface)),
                hyperparameters,
                fit,
            })
        }
    }
}

/// Simulates, fits and evaluates one run.
pub fn evaluate_run(
    config: &ExperimentConfig,
    spec: &RunSpec,
    with_variances: bool,
) -> Result<(MeshEvaluation, BTreeMap<String, f64>, FitReport)> {
    let system = benchmark(spec.system, config.omega);
    let sampling = config.sampling(spec.noise_variance, spec.sigma_j);
    let (dense, dataset) = simulate_benchmark(&system, &sampling, spec.seed)?;
    let grid = eval_mesh(&config.mesh, &dense.states)?;
    let fitted = fit_method(config, spec, &system, dataset)?;
    let points = grid.points();
    let mut field_mean = Vec::with_capacity(points.len());
    let mut field_variance = with_variances.then(Vec::new);
    for x in &points {
        match &mut field_variance {
            Some(vars) => {
                let p = fitted.field.predict_field(x)?;
                field_mean.push(p.mean.iter().copied().collect());
                vars.push(p.covariance.diagonal().iter().copied().collect());
            }
            None => field_mean.push(fitted.field.field_mean(x)?),
        }
    }
    let surface = match &fitted.surface {
        Some(s) => {
            let (mut mu, mut var) = (Vec::new(), Vec::new());
            for x in &points {
                let (m, v) = s.predict_hamiltonian(x)?;
                mu.push(m);
                var.push(v);
            }
            Some((mu, var))
        }
        None => None,
    };
    let eval = MeshEvaluation {
        truth_field: points.iter().map(|x| system.true_drift(x)).collect(),
        truth_h: points.iter().map(|x| system.hamiltonian(x)).collect(),
        points,
        field_mean,
        field_variance,
        surface,
    };
    Ok((eval, fitted.hyperparameters, fitted.fit))
}

pub fn metrics_of(eval: &MeshEvaluation) -> Result<RunMetrics> {
    let vf = vf_metrics(&eval.field_mean, &eval.truth_field)?;
    let h = match &eval.surface {
        Some((mu, var)) => Some(h_metrics(mu, var, &eval.truth_h)?),
        None => None,
    };
    Ok(RunMetrics {
        vf_mse: vf.mse,
        vf_cosine_distance: vf.cosine_distance,
        h_mse: h.map(|m| m.h_mse),
        mean_sigma_h2: h.map(|m| m.mean_variance),
        ratio: h.map(|m| m.ratio),
    })
}

/// Writes a mesh evaluation as CSV (one row per mesh point).
pub fn write_mesh_dump(path: &Path, eval: &MeshEvaluation) -> Result<()> {
    let n = eval.points.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=n).map(|i| format!("f_true{i}")));
    header.extend((1..=n).map(|i| format!("mu_f{i}")));
    if eval.field_variance.is_some() {
        header.extend((1..=n).map(|i| format!("var_f{i}")));
    }
    header.push("h_true".into());
    if eval.surface.is_some() {
        header.push("mu_h".into());
        header.push("var_h".into());
    }
    w.write_record(&header)?;
    for (k, x) in eval.points.iter().enumerate() {
        let mut row: Vec<f64> = x.clone();
        row.extend(&eval.truth_field[k]);
        row.extend(&eval.field_mean[k]);
        if let Some(v) = &eval.field_variance {
            row.extend(&v[k]);
        }
        row.push(eval.truth_h[k]);
        if let Some((mu, var)) = &eval.surface {
            row.push(mu[k]);
            row.push(var[k]);
        }
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))?;
    Ok(())
}

/// Runs one cross-product entry; failures become records with error text.
pub fn run_one(config: &ExperimentConfig, index: usize, spec: RunSpec, mesh_dir: Option<&Path>) -> RunRecord {
    let start = Instant::now();
    let outcome = evaluate_run(config, &spec, mesh_dir.is_some()).and_then(|(eval, hyper, fit)| {
        let metrics = metrics_of(&eval)?;
        if let Some(dir) = mesh_dir {
            write_mesh_dump(&dir.join(format!("{}.csv", spec.id())), &eval)?;
        }
        Ok((metrics, hyper, fit))
    });
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((metrics, hyperparameters, fit)) if metrics.all_valid() => RunRecord {
            index,
            spec,
            metrics: Some(metrics),
            hyperparameters,
            fit: Some(fit),
            error: None,
            wall_time_s,
        },
        Ok((metrics, hyperparameters, fit)) => RunRecord {
            index,
            spec,
            metrics: None,
            hyperparameters,
            fit: Some(fit),
            error: Some(format!("non-finite or negative metric: {metrics:?}")),
            wall_time_s,
        },
        Err(e) => RunRecord {
            index,
            spec,
            metrics: None,
            hyperparameters: BTreeMap::new(),
            fit: None,
            error: Some(e.to_string()),
            wall_time_s,
        },
    }
}

/// Executes the sweep with `jobs` workers (0 = all cores), appending each
/// record to `out/runs.jsonl` as it completes. Returns records in
/// cross-product order.
pub fn run_sweep(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<RunRecord>> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml()).map_err(|e| BenchError::io(&cfg_path, e))?;
    let mesh_dir = if config.dump_meshes {
        let d = out.join(MESH_DIR);
        fs::create_dir_all(&d).map_err(|e| BenchError::io(&d, e))?;
        Some(d)
    } else {
        None
    };
    let runs_path = out.join(RUNS_FILE);
    let file = File::create(&runs_path).map_err(|e| BenchError::io(&runs_path, e))?;
    let specs = expand(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<RunRecord>();
    let writer_path = runs_path.clone();
    let writer = std::thread::spawn(move || -> Result<Vec<RunRecord>> {
        let mut w = BufWriter::new(file);
        let mut all = Vec::new();
        for record in rx {
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| BenchError::io(&writer_path, e))?;
            all.push(record);
        }
        Ok(all)
    });
    pool.install(|| {
        specs.par_iter().enumerate().for_each_with(tx, |tx, (i, spec)| {
            let record = run_one(config, i, *spec, mesh_dir.as_deref());
            match &record.error {
                Some(e) => log::warn!("run {} failed: {e}", spec.id()),
                None => log::info!("run {} done in {:.1}s", spec.id(), record.wall_time_s),
            }
            // The receiver only disappears if the writer failed; that error is
            // reported when joining.
            let _ = tx.send(record);
        });
    });
    let mut records = writer.join().expect("writer thread panicked")?;
    records.sort_by_key(|r| r.index);
    Ok(records)
}

pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path: PathBuf = dir.join(RUNS_FILE);
    let file = File::open(&path).map_err(|e| BenchError::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| BenchError::io(&path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str::<RunRecord>(&line)?);
        }
    }
    out.sort_by_key(|r| r.index);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: CellKey,
    pub n_ok: usize,
    pub n_total: usize,
    pub vf_mse: Option<Summary>,
    pub vf_cosine_distance: Option<Summary>,
    pub h_mse: Option<Summary>,
    pub mean_sigma_h2: Option<Summary>,
    pub ratio: Option<Summary>,
}

/// Per-cell summaries over the successful runs, ordered by cell.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(SystemId, MethodId, u64, u64), (CellKey, Vec<&RunRecord>)> = BTreeMap::new();
    for r in records {
        let key = r.spec.cell();
        cells.entry(key.order_key()).or_insert_with(|| (key, Vec::new())).1.push(r);
    }
    cells
        .into_values()
        .map(|(cell, runs)| {
            let ok: Vec<RunMetrics> = runs.iter().filter_map(|r| r.metrics).collect();
            let collect = |f: fn(&RunMetrics) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(f).collect();
                Summary::of(&v)
            };
            AggregateRow {
                cell,
                n_ok: ok.len(),
                n_total: runs.len(),
                vf_mse: collect(|m| Some(m.vf_mse)),
                vf_cosine_distance: collect(|m| Some(m.vf_cosine_distance)),
                h_mse: collect(|m| m.h_mse),
                mean_sigma_h2: collect(|m| m.mean_sigma_h2),
                ratio: collect(|m| m.ratio),
            }
        })
        .collect()
}
