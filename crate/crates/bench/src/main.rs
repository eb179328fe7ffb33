use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msphs::inference::{Anchor, FieldPredictor, FitConfig, MsPhsModel};
use msphs::phs_models::{benchmark, DEFAULT_OMEGA};
use msphs::simulate::{simulate_benchmark, SamplingConfig, DEFAULT_DT};
use msphs::{MultistepScheme, SystemId, TrajectoryDataset};
use msphs_bench::config::MeshSpec;
use msphs_bench::mesh::eval_mesh;
use msphs_bench::report::write_report;
use msphs_bench::sweep::{load_records, run_sweep, write_mesh_dump, MeshEvaluation};
use msphs_bench::{BenchError, ExperimentConfig, MethodId, Result};

#[derive(Parser)]
#[command(name = "msphs", version, about = "Multistep port-Hamiltonian GP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark and write a noisy dataset file.
    Simulate {
        #[arg(long)]
        system: SystemId,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma_x: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma_j: f64,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 20.0)]
        t1: f64,
        #[arg(long, default_value_t = DEFAULT_OMEGA)]
        omega: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an MS-PHS model to a dataset and write the model document.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        system: SystemId,
        /// Only ms-phs-ab-{1,2,3} models can be saved.
        #[arg(long, default_value = "ms-phs-ab-3")]
        method: MethodId,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a mesh and write field/surface dumps.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 25)]
        resolution: usize,
        /// Mesh bounds `lo1,hi1,lo2,hi2,...`; defaults to the data bounding box plus 10%.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bounds: Option<Vec<f64>>,
        /// Anchor value of the Hamiltonian at the origin.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        anchor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured sweep and store one JSON record per run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 uses every core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Build the CSV report tables from a sweep directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output directory; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Simulate {
            system,
            samples,
            sigma_x,
            sigma_j,
            t0,
            t1,
            omega,
            seed,
            out,
        } => {
            let sampling = SamplingConfig {
                t0,
                t1,
                samples,
                sigma_x,
                sigma_j,
                dt: DEFAULT_DT,
            };
            let (_, dataset) = simulate_benchmark(&benchmark(system, omega), &sampling, seed)?;
            write(&out, &dataset.to_text())?;
            Ok(serde_json::json!({ "dataset": out, "samples": dataset.len(), "fingerprint": dataset.fingerprint() }))
        }
        Command::Fit {
            data,
            system,
            method,
            iterations,
            seed,
            out,
        } => {
            let MethodId::MsPhs { order } = method else {
                return Err(BenchError::Config(format!("`fit` saves ms-phs models only; got {method}")));
            };
            let dataset = TrajectoryDataset::from_text(&read(&data)?)?;
            let mut cfg = FitConfig {
                seed,
                ..FitConfig::default()
            };
            cfg.adam.iterations = iterations;
            let structure = benchmark(system, DEFAULT_OMEGA).structure;
            let scheme = MultistepScheme::adams_bashforth(order)?;
            let (model, report) = MsPhsModel::fit(dataset, structure, scheme, &cfg)?;
            write(&out, &model.to_json())?;
            Ok(serde_json::json!({ "model": out, "fit": report }))
        }
        Command::Predict {
            model,
            data,
            resolution,
            bounds,
            anchor,
            out,
        } => {
            let dataset = TrajectoryDataset::from_text(&read(&data)?)?;
            let model = MsPhsModel::from_json(&read(&model)?, dataset)?;
            let n = model.state_dim();
            let bounds = match bounds {
                Some(b) if b.len() == 2 * n => Some(b.chunks(2).map(|c| [c[0], c[1]]).collect()),
                Some(b) => {
                    return Err(BenchError::Config(format!(
                        "--bounds needs {} values, got {}",
                        2 * n,
                        b.len()
                    )))
                }
                None => None,
            };
            let spec = MeshSpec {
                bounds,
                resolution,
                inflation: 0.1,
            };
            let grid = eval_mesh(&spec, &model.dataset().state_rows())?;
            let surface = model.hamiltonian_posterior(&Anchor::origin(n, anchor))?;
            let points = grid.points();
            let mut field_mean = Vec::new();
            let mut field_variance = Vec::new();
            let (mut mu, mut var) = (Vec::new(), Vec::new());
            for x in &points {
                let p = model.predict_field(x)?;
                field_mean.push(p.mean.iter().copied().collect());
                field_variance.push(p.covariance.diagonal().iter().copied().collect());
                let (m, v) = surface.predict(x)?;
                mu.push(m);
                var.push(v);
            }
            // Ground truth is unknown here; those columns hold NaN.
            let eval = MeshEvaluation {
                truth_field: vec![vec![f64::NAN; n]; points.len()],
                truth_h: vec![f64::NAN; points.len()],
                points,
                field_mean,
                field_variance: Some(field_variance),
                surface: Some((mu, var)),
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
            }
            write_mesh_dump(&out, &eval)?;
            Ok(serde_json::json!({ "mesh": out, "points": eval.points.len() }))
        }
        Command::Sweep { config, seed, out, jobs } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let records = run_sweep(&cfg, &out, jobs)?;
            let ok = records.iter().filter(|r| r.is_ok()).count();
            Ok(serde_json::json!({ "results": out, "n_ok": ok, "n_total": records.len() }))
        }
        Command::Report { results, out } => {
            let records = load_records(&results)?;
            let out = out.unwrap_or_else(|| results.clone());
            let files = write_report(&records, &out)?;
            Ok(serde_json::json!({ "files": files }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
