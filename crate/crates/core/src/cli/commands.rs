use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use super::config::{Connectivity, ExperimentConfig, ReferenceConfig, TrajectoryFiles, Validated};
use super::output::{self, write_json};
use super::{CliError, Overrides};
use crate::analysis::{
    centralized_reference, estimate_transfer_norm, fit_decay, summability, summability_pairs, AnalysisError, Reference,
    SearchBox, TransferPair,
};
use crate::engine::{monte_carlo, EngineError, EnsembleError, InitPolicy, Scenario};
use crate::objective::{estimate_subgradient_bound, Normalization};

const LOG_DECREASE_EPS: f64 = 1e-9;

/// Overrides for the `lemma1` section of the config.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize)]
pub struct Lemma1Args {
    /// Comma-separated final indices, e.g. `10,100,1000`.
    #[arg(long = "k", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Horizon of the dense summability study; 0 skips it.
    #[arg(long)]
    pub sum_horizon: Option<usize>,
    #[arg(long)]
    pub sum_replications: Option<usize>,
}

/// Overrides for the reference search.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize)]
pub struct ReferenceArgs {
    /// `LOW,HIGH` applied to every coordinate.
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub search_box: Option<Vec<f64>>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub polish: Option<usize>,
}

fn numeric_or_invalid(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::BoxTooSmall { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Validation(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

/// The reference named by the config, computed or loaded.
pub fn resolve_reference(config: &ExperimentConfig, v: &Validated) -> Result<Option<Reference>, CliError> {
    match &config.reference {
        ReferenceConfig::None => Ok(None),
        ReferenceConfig::ClosedForm => {
            let x = v
                .suite
                .closed_form_minimizer()
                .ok_or_else(|| CliError::Validation("objective has no closed-form minimizer".into()))?;
            Ok(Some(Reference::exact(&v.suite, x.to_vec())))
        }
        ReferenceConfig::Oracle {
            search_box,
            grid_pts,
            polish_iters,
        } => centralized_reference(&v.suite, *search_box, *grid_pts, *polish_iters)
            .map(Some)
            .map_err(numeric_or_invalid),
        ReferenceConfig::File { path } => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("reference file {}: {e}", path.display())))?;
            let r: Reference = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("reference file {}: {e}", path.display())))?;
            if r.x_star.len() != v.suite.dim() {
                return Err(CliError::Validation(format!(
                    "reference has dimension {}, objective {}",
                    r.x_star.len(),
                    v.suite.dim()
                )));
            }
            Ok(Some(r))
        }
    }
}

fn seeds_record(master_seed: u64, replications: usize) -> serde_json::Value {
    json!({
        "master_seed": master_seed,
        "replications": replications,
        "generator": "ChaCha8",
        "streams": "replication r uses stream 4r (switching path) and 4r + 1 (initial state)",
    })
}

/// The bound `l` on the vectors the agents descend along. Without
/// normalization it is sampled over the box of initial states.
fn subgradient_bound(config: &ExperimentConfig, v: &Validated) -> serde_json::Value {
    match config.normalization {
        Normalization::PerAgent => json!({"l": 1.0, "source": "per-agent normalization"}),
        Normalization::Stacked => json!({
            "l": (v.graphs.n_agents() as f64).sqrt(),
            "source": "stacked normalization",
        }),
        Normalization::Off => {
            let (low, high) = match &config.init {
                InitPolicy::Uniform { low, high } => (*low, *high),
                InitPolicy::Explicit { rows } => rows
                    .iter()
                    .flatten()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x))),
            };
            json!({
                "l": estimate_subgradient_bound(&v.suite, low, high, BOUND_SAMPLES, config.seed),
                "source": "sampled",
                "box": [low, high],
                "samples": BOUND_SAMPLES,
            })
        }
    }
}

const BOUND_SAMPLES: usize = 1000;

/// Monte Carlo ensemble: trajectory CSVs plus `summary.json`.
pub fn cmd_run(config: &ExperimentConfig, overrides: &Overrides) -> Result<PathBuf, CliError> {
    let config = overrides.apply(config);
    let v = config.validate(Connectivity::Required)?;
    for w in &v.warnings {
        log::warn!("{w}");
    }
    let reference = resolve_reference(&config, &v)?;
    let scenario = Scenario {
        graphs: v.graphs.clone(),
        chain: v.chain.clone(),
        schedule: v.schedule.clone(),
        suite: v.suite.clone(),
        normalization: config.normalization,
        horizon: config.horizon,
        log_stride: config.log_stride,
        reference: reference.clone(),
        init: config.init.clone(),
        record_states: config.output.dump_states,
        record_path: config.output.dump_path,
    };
    let outcome = with_pool(config.jobs, || {
        monte_carlo(&scenario, config.seed, config.runs, config.tolerance)
    })?
    .map_err(|e| match e {
        EnsembleError::RunsFailed(_) | EnsembleError::Scenario(EngineError::NonFiniteState { .. }) => {
            CliError::Numeric(e.to_string())
        }
        other => CliError::Validation(other.to_string()),
    })?;

    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    let written = match config.output.trajectories {
        TrajectoryFiles::All => outcome.trajectories.len(),
        TrajectoryFiles::First => 1,
    };
    let (n_agents, dim) = (v.graphs.n_agents(), v.suite.dim());
    for t in &outcome.trajectories[..written] {
        let path = dir.join(output::trajectory_file_name(t.replication));
        output::write_trajectory_csv(&path, t, n_agents, dim)?;
        if let Some(p) = &t.path {
            output::write_path_csv(&dir.join(output::path_file_name(t.replication)), p)?;
        }
    }

    let summary = json!({
        "config": config,
        "overrides": overrides,
        "seeds": seeds_record(config.seed, config.runs),
        "metadata": {
            "n_agents": n_agents,
            "dim": dim,
            "objective": v.suite.name(),
            "chain_initial_distribution": v.chain.initial_distribution(),
            "warnings": v.warnings,
            "trajectory_files": written,
            "subgradient_bound": subgradient_bound(&config, &v),
        },
        "reference": reference,
        "ensemble": outcome.summary,
    });
    let path = dir.join(output::SUMMARY_FILE);
    write_json(&path, &summary)?;
    Ok(path)
}

/// Transfer-norm decay fit plus the dense summability study.
pub fn cmd_lemma1(config: &ExperimentConfig, overrides: &Overrides, args: &Lemma1Args) -> Result<PathBuf, CliError> {
    let mut config = overrides.apply(config);
    let l = &mut config.lemma1;
    if let Some(ks) = &args.ks {
        l.ks.clone_from(ks);
    }
    l.s = args.s.unwrap_or(l.s);
    l.replications = args.replications.unwrap_or(l.replications);
    l.sum_horizon = args.sum_horizon.unwrap_or(l.sum_horizon);
    l.sum_replications = args.sum_replications.unwrap_or(l.sum_replications);
    let v = config.validate(Connectivity::WarnOnly)?;
    for w in &v.warnings {
        log::warn!("{w}");
    }
    let l = &config.lemma1;
    let pairs: Vec<TransferPair> =
        l.ks.iter()
            .map(|&k| TransferPair::new(k, l.s))
            .collect::<Result<_, _>>()
            .map_err(numeric_or_invalid)?;

    let (estimates, sums) = with_pool(config.jobs, || {
        let estimates = estimate_transfer_norm(&v.chain, &v.graphs, &v.schedule, &pairs, l.replications, config.seed)?;
        let sums = if l.sum_horizon > 0 && l.sum_replications > 0 {
            let dense = estimate_transfer_norm(
                &v.chain,
                &v.graphs,
                &v.schedule,
                &summability_pairs(l.sum_horizon),
                l.sum_replications,
                config.seed,
            )?;
            Some(summability(&dense, &v.schedule))
        } else {
            None
        };
        Ok::<_, AnalysisError>((estimates, sums))
    })?
    .map_err(numeric_or_invalid)?;

    let (fit, fit_error) = match fit_decay(&estimates, &v.schedule) {
        Ok(mut f) => {
            if let Some(s) = &sums {
                f.sum_checks = s.clone();
            }
            (Some(f), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    // drops at rounding level do not count
    let strictly_decreasing = estimates
        .windows(2)
        .all(|w| w[1].log_mean_norm < w[0].log_mean_norm - LOG_DECREASE_EPS);

    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    output::write_lemma1_curve(&dir.join(output::LEMMA1_CURVE_FILE), &estimates)?;
    if let Some(inner) = sums.as_ref().and_then(|s| s.inner.as_ref()) {
        output::write_inner_sums(&dir.join(output::LEMMA1_INNER_FILE), &inner.sums)?;
    }
    let report = json!({
        "config": config,
        "overrides": overrides,
        "study": args,
        "seeds": seeds_record(config.seed, l.replications),
        "warnings": v.warnings,
        "estimates": estimates,
        "strictly_decreasing": strictly_decreasing,
        "fit": fit,
        "fit_error": fit_error,
        "summability": sums,
    });
    let path = dir.join(output::LEMMA1_REPORT_FILE);
    write_json(&path, &report)?;
    Ok(path)
}

/// Centralized reference solution written as `reference.json`.
pub fn cmd_reference(
    config: &ExperimentConfig,
    overrides: &Overrides,
    args: &ReferenceArgs,
) -> Result<PathBuf, CliError> {
    let config = overrides.apply(config);
    let v = config.validate(Connectivity::Required)?;
    let (mut search_box, mut grid_pts, mut polish_iters) = match &config.reference {
        ReferenceConfig::Oracle {
            search_box,
            grid_pts,
            polish_iters,
        } => (*search_box, *grid_pts, *polish_iters),
        _ => (SearchBox::default(), 400, 100_000),
    };
    if let Some(b) = &args.search_box {
        let [low, high] = b[..] else {
            return Err(CliError::Validation(format!(
                "--box takes LOW,HIGH, got {} values",
                b.len()
            )));
        };
        search_box = SearchBox { low, high };
    }
    grid_pts = args.grid.unwrap_or(grid_pts);
    polish_iters = args.polish.unwrap_or(polish_iters);
    let reference = centralized_reference(&v.suite, search_box, grid_pts, polish_iters).map_err(numeric_or_invalid)?;

    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    let path = dir.join(output::REFERENCE_FILE);
    write_json(&path, &reference)?;
    Ok(path)
}
