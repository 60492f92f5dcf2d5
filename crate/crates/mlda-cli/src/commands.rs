//! Subcommand implementations. Each command is an ordinary function over
//! paths and a [`RunConfig`] so integration tests can drive them in-process;
//! `main` only parses arguments and maps errors to exit codes.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mlda::darcy::{self, DarcyLevel, SyntheticData};
use mlda::diagnostics;
use mlda::hierarchy::{MldaSampler, MldaStats, ModelHierarchy, Trace};
use mlda::kernel::sample_prior;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::tracefile::{self, format_float, TraceData};

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const FIELDS_FILE: &str = "fields.csv";
pub const GENERATE_METADATA_FILE: &str = "generate.json";
pub const RUN_METADATA_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_DATA_FILE: &str = "plot_data.csv";

/// Data generation consumes a dedicated RNG stream so chain seeds
/// (base_seed + i on the default stream) can never collide with it.
const DATA_RNG_STREAM: u64 = 1;

fn create_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        CliError::config(format!("cannot create output dir {}: {e}", out_dir.display()))
    })
}

fn create_file(path: &Path) -> Result<BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate-data

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateMetadata {
    pub config: RunConfig,
    pub seed: u64,
    pub rng_stream: u64,
    pub theta_true: Vec<f64>,
    pub noiseless: Vec<f64>,
    pub observations: Vec<f64>,
}

#[derive(Debug)]
pub struct GenerateOutputs {
    pub data_path: PathBuf,
    pub truth_path: PathBuf,
    pub fields_path: PathBuf,
    pub metadata_path: PathBuf,
    pub data: SyntheticData,
}

/// Draws θ_true from the prior, synthesizes noisy observations on the finest
/// level, and writes the data set plus ground-truth records.
pub fn cmd_generate_data(config: &RunConfig, out_dir: &Path) -> Result<GenerateOutputs> {
    config.validate()?;
    create_out_dir(out_dir)?;

    let darcy_config = config.darcy_config();
    let levels = darcy::build_darcy_levels(&darcy_config)?;
    let noise = darcy::noise_model(&darcy_config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.sampling.base_seed);
    rng.set_stream(DATA_RNG_STREAM);
    let data = darcy::generate_synthetic_data(&levels, &noise, &mut rng)?;

    let data_path = out_dir.join(DATA_FILE);
    let mut out = create_file(&data_path)?;
    writeln!(out, "value")?;
    for value in data.observations.iter() {
        writeln!(out, "{}", format_float(*value))?;
    }
    out.flush()?;

    let truth_path = out_dir.join(TRUTH_FILE);
    let mut out = create_file(&truth_path)?;
    writeln!(out, "parameter,value")?;
    for (i, value) in data.theta_true.iter().enumerate() {
        writeln!(out, "theta_{},{}", i + 1, format_float(*value))?;
    }
    out.flush()?;

    let fields_path = out_dir.join(FIELDS_FILE);
    write_field_snapshots(&fields_path, &levels, &data.theta_true)?;

    let metadata_path = out_dir.join(GENERATE_METADATA_FILE);
    write_json(
        &metadata_path,
        &GenerateMetadata {
            config: config.clone(),
            seed: config.sampling.base_seed,
            rng_stream: DATA_RNG_STREAM,
            theta_true: data.theta_true.iter().copied().collect(),
            noiseless: data.noiseless.iter().copied().collect(),
            observations: data.observations.iter().copied().collect(),
        },
    )?;

    Ok(GenerateOutputs {
        data_path,
        truth_path,
        fields_path,
        metadata_path,
        data,
    })
}

/// True log-permeability and pressure on every level, row-major nodal order.
fn write_field_snapshots(
    path: &Path,
    levels: &[std::sync::Arc<DarcyLevel>],
    theta: &DVector<f64>,
) -> Result<()> {
    let mut out = create_file(path)?;
    writeln!(out, "level,m,quantity,value")?;
    for (index, level) in levels.iter().enumerate() {
        let m = level.grid.m;
        let log_k = level.log_permeability(theta)?;
        for value in log_k.iter() {
            writeln!(out, "{index},{m},log_permeability,{}", format_float(*value))?;
        }
        let permeability = log_k.map(f64::exp);
        let pressure = darcy::solve_darcy(&level.grid, &permeability)?;
        for value in pressure.iter() {
            writeln!(out, "{index},{m},pressure,{}", format_float(*value))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a single-column `value` CSV of observations.
pub fn read_observations(path: &Path) -> Result<DVector<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["value"] {
        return Err(CliError::config(format!(
            "{}: expected a single `value` column, found {:?}",
            path.display(),
            header
        )));
    }
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let value: f64 = record[0].trim().parse().map_err(|e| {
            CliError::config(format!("{} row {}: {e}", path.display(), row + 1))
        })?;
        values.push(value);
    }
    if values.is_empty() {
        return Err(CliError::config(format!(
            "{} contains no observations",
            path.display()
        )));
    }
    Ok(DVector::from_vec(values))
}

// ---------------------------------------------------------------------------
// sample

/// Final moments of one inter-level bias term, summarized for the sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AemTermRecord {
    pub term: usize,
    pub count: u64,
    pub mean: Vec<f64>,
    pub covariance_diagonal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain: usize,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub final_step_size: Option<f64>,
    pub stats: MldaStats,
    pub aem_terms: Option<Vec<AemTermRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub data_file: String,
    pub seeds: Vec<u64>,
    pub wall_time_seconds: f64,
    pub chains: Vec<ChainRecord>,
}

/// Written instead of `run.json` when one or more chains fail, so completed
/// traces stay interpretable.
#[derive(Debug, Serialize, Deserialize)]
pub struct PartialManifest {
    pub status: String,
    pub config: RunConfig,
    pub completed_chains: Vec<usize>,
    pub failed_chains: Vec<FailedChain>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FailedChain {
    pub chain: usize,
    pub error: String,
}

#[derive(Debug)]
pub struct SampleOutputs {
    pub trace_paths: Vec<PathBuf>,
    pub metadata_path: PathBuf,
}

pub fn chain_file_name(chain: usize) -> String {
    format!("chain_{chain}.csv")
}

struct ChainSuccess {
    record: ChainRecord,
    trace: Trace,
}

fn run_chain(
    hierarchy: &ModelHierarchy,
    config: &RunConfig,
    chain: usize,
) -> std::result::Result<ChainSuccess, String> {
    let seed = config.sampling.base_seed.wrapping_add(chain as u64);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let initial = sample_prior(config.problem.n_modes, &mut rng);
    let mut sampler =
        MldaSampler::new(hierarchy, config.mlda_options()).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let run = sampler
        .run(
            config.sampling.n_samples,
            config.sampling.n_burnin,
            initial,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let aem_terms = run.bias.as_ref().map(|model| {
        (0..model.n_terms())
            .map(|k| {
                let term = model.term(k);
                AemTermRecord {
                    term: k,
                    count: term.count(),
                    mean: term.mean().iter().copied().collect(),
                    covariance_diagonal: term.covariance().diagonal().iter().copied().collect(),
                }
            })
            .collect()
    });

    Ok(ChainSuccess {
        record: ChainRecord {
            chain,
            seed,
            wall_time_seconds,
            final_step_size: run.final_step_size,
            stats: run.stats,
            aem_terms,
        },
        trace: run.trace,
    })
}

fn max_threads(n_chains: usize) -> usize {
    let from_env = std::env::var("MLDA_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0);
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    from_env.unwrap_or(available).min(n_chains).max(1)
}

/// Runs `n_chains` independent MLDA chains against one data set and writes a
/// trace file per chain plus a `run.json` sidecar. Chains are scheduled in
/// waves of at most `MLDA_THREADS` (default: available parallelism); results
/// are deterministic either way because chain i always uses seed
/// base_seed + i.
pub fn cmd_sample(config: &RunConfig, data_path: &Path, out_dir: &Path) -> Result<SampleOutputs> {
    config.validate()?;
    create_out_dir(out_dir)?;
    let observations = read_observations(data_path)?;

    let hierarchy = darcy::build_hierarchy(
        &config.darcy_config(),
        &config.sampling.subchain_lengths,
        observations,
        config.sampling.aem,
    )?;

    let n_chains = config.sampling.n_chains;
    let batch = max_threads(n_chains);
    let started = Instant::now();
    let mut outcomes: Vec<Option<std::result::Result<ChainSuccess, String>>> =
        (0..n_chains).map(|_| None).collect();

    let mut next = 0;
    while next < n_chains {
        let wave: Vec<usize> = (next..(next + batch).min(n_chains)).collect();
        next += wave.len();
        if wave.len() == 1 {
            let chain = wave[0];
            outcomes[chain] = Some(run_chain(&hierarchy, config, chain));
        } else {
            let results: Vec<(usize, std::result::Result<ChainSuccess, String>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = wave
                        .iter()
                        .map(|&chain| {
                            let hierarchy = &hierarchy;
                            scope.spawn(move || (chain, run_chain(hierarchy, config, chain)))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().unwrap()).collect()
                });
            for (chain, outcome) in results {
                outcomes[chain] = Some(outcome);
            }
        }
        // Stop scheduling further waves once something failed.
        if outcomes
            .iter()
            .flatten()
            .any(|outcome| outcome.is_err())
        {
            break;
        }
    }

    let mut completed = Vec::new();
    let mut failed = Vec::new();
    let mut trace_paths = Vec::new();
    let mut records = Vec::new();
    for (chain, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Some(Ok(success)) => {
                let path = out_dir.join(chain_file_name(chain));
                tracefile::write_trace(&path, &success.trace)?;
                trace_paths.push(path);
                records.push(success.record);
                completed.push(chain);
            }
            Some(Err(message)) => failed.push(FailedChain {
                chain,
                error: message,
            }),
            None => {}
        }
    }

    if !failed.is_empty() {
        let first = failed[0].chain;
        let message = failed[0].error.clone();
        write_json(
            &out_dir.join(MANIFEST_FILE),
            &PartialManifest {
                status: "partial".into(),
                config: config.clone(),
                completed_chains: completed,
                failed_chains: failed,
            },
        )?;
        return Err(CliError::numerical(format!(
            "chain {first} failed: {message}"
        )));
    }

    let metadata_path = out_dir.join(RUN_METADATA_FILE);
    write_json(
        &metadata_path,
        &RunMetadata {
            config: config.clone(),
            data_file: data_path.display().to_string(),
            seeds: records.iter().map(|r| r.seed).collect(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            chains: records,
        },
    )?;

    Ok(SampleOutputs {
        trace_paths,
        metadata_path,
    })
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Clone)]
pub struct DiagnosticsRow {
    pub parameter: String,
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug)]
pub struct DiagnoseOutputs {
    pub diagnostics_path: PathBuf,
    pub summary_path: Option<PathBuf>,
    pub rows: Vec<DiagnosticsRow>,
}

fn pooled_constant(chains: &[Vec<f64>]) -> bool {
    let mut values = chains.iter().flatten();
    match values.next() {
        Some(first) => values.all(|v| v == first),
        None => true,
    }
}

/// Computes rank-normalized ESS and split-R̂ per parameter across chains.
/// Constant parameters are flagged with NaN rather than aborting the report.
pub fn diagnostics_rows(traces: &[TraceData]) -> Result<Vec<DiagnosticsRow>> {
    let first = &traces[0];
    let mut rows = Vec::with_capacity(first.parameters.len());
    for (index, name) in first.parameters.iter().enumerate() {
        let chains: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| t.trace.parameter_column(index))
            .collect();
        let (ess, rhat) = if pooled_constant(&chains) {
            (f64::NAN, f64::NAN)
        } else {
            (
                diagnostics::effective_sample_size(&chains)?,
                diagnostics::split_rhat(&chains)?,
            )
        };
        rows.push(DiagnosticsRow {
            parameter: name.clone(),
            ess,
            rhat,
        });
    }
    Ok(rows)
}

/// Aggregated per-level counters summed over chains, plus the sampling-phase
/// acceptance rate over distinct proposals.
fn summary_rows(metadata: &RunMetadata) -> Vec<(usize, u64, u64, u64, u64, f64)> {
    let n_levels = metadata
        .chains
        .first()
        .map(|c| c.stats.n_levels())
        .unwrap_or(0);
    (0..n_levels)
        .map(|level| {
            let (mut proposals, mut accepted, mut trivial, mut evals) = (0, 0, 0, 0);
            for chain in &metadata.chains {
                let s = &chain.stats.sampling[level];
                proposals += s.proposals;
                accepted += s.accepted;
                trivial += s.trivial_proposals;
                evals += chain.stats.total_forward_evaluations(level);
            }
            let rate = if proposals > 0 {
                accepted as f64 / proposals as f64
            } else {
                f64::NAN
            };
            (level, proposals, accepted, trivial, evals, rate)
        })
        .collect()
}

/// Reads chain traces, writes `diagnostics.csv` (parameter, ESS, split-R̂),
/// and, when a `run.json` sidecar sits next to the traces, `summary.csv`
/// with per-level acceptance statistics, forward-solve counts, and wall time.
pub fn cmd_diagnose(trace_paths: &[PathBuf], out_dir: &Path) -> Result<DiagnoseOutputs> {
    let traces = tracefile::read_consistent_traces(trace_paths)?;
    create_out_dir(out_dir)?;
    let rows = diagnostics_rows(&traces)?;

    let diagnostics_path = out_dir.join(DIAGNOSTICS_FILE);
    let mut out = create_file(&diagnostics_path)?;
    writeln!(out, "parameter,ess,rhat")?;
    for row in &rows {
        writeln!(
            out,
            "{},{},{}",
            row.parameter,
            format_float(row.ess),
            format_float(row.rhat)
        )?;
    }
    out.flush()?;

    // The sidecar lives next to the traces it describes.
    let sidecar = trace_paths[0]
        .parent()
        .map(|dir| dir.join(RUN_METADATA_FILE))
        .filter(|p| p.is_file());
    let summary_path = match sidecar {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            let metadata: RunMetadata = serde_json::from_str(&text)?;
            let summary_path = out_dir.join(SUMMARY_FILE);
            let mut out = create_file(&summary_path)?;
            writeln!(
                out,
                "level,sampling_proposals,sampling_accepted,sampling_trivial,\
                 total_forward_evaluations,acceptance_rate,wall_time_seconds"
            )?;
            for (level, proposals, accepted, trivial, evals, rate) in summary_rows(&metadata) {
                writeln!(
                    out,
                    "{level},{proposals},{accepted},{trivial},{evals},{},{}",
                    format_float(rate),
                    format_float(metadata.wall_time_seconds)
                )?;
            }
            out.flush()?;
            Some(summary_path)
        }
        None => None,
    };

    Ok(DiagnoseOutputs {
        diagnostics_path,
        summary_path,
        rows,
    })
}

// ---------------------------------------------------------------------------
// plot-data

/// Writes a long-format CSV (chain, iteration, parameter, value,
/// running_mean) for the requested parameters, ready for any plotting tool.
pub fn cmd_plot_data(
    trace_paths: &[PathBuf],
    parameters: &[String],
    out_dir: &Path,
) -> Result<PathBuf> {
    let traces = tracefile::read_consistent_traces(trace_paths)?;
    create_out_dir(out_dir)?;

    let default = ["theta_1".to_string()];
    let parameters: &[String] = if parameters.is_empty() {
        &default
    } else {
        parameters
    };
    // Validate every name up front so nothing is written on bad input.
    for name in parameters {
        traces[0].parameter_column(name)?;
    }

    let path = out_dir.join(PLOT_DATA_FILE);
    let mut out = create_file(&path)?;
    writeln!(out, "chain,iteration,parameter,value,running_mean")?;
    for (chain, trace) in traces.iter().enumerate() {
        for name in parameters {
            let column = trace.parameter_column(name)?;
            let mut running = 0.0;
            for (i, value) in column.iter().enumerate() {
                running += value;
                writeln!(
                    out,
                    "{chain},{},{name},{},{}",
                    i + 1,
                    format_float(*value),
                    format_float(running / (i + 1) as f64)
                )?;
            }
        }
    }
    out.flush()?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// discovery

/// Finds `chain_<i>.csv` files in a directory, ordered by chain index.
pub fn discover_traces(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("cannot list {}: {e}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::config(format!("cannot list {}: {e}", dir.display())))?
            .path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(index) = name
            .strip_prefix("chain_")
            .and_then(|rest| rest.strip_suffix(".csv"))
            .and_then(|digits| digits.parse::<usize>().ok())
        {
            found.push((index, path));
        }
    }
    if found.is_empty() {
        return Err(CliError::config(format!(
            "no chain_*.csv traces found in {}",
            dir.display()
        )));
    }
    found.sort_by_key(|(index, _)| *index);
    Ok(found.into_iter().map(|(_, path)| path).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.problem.n_levels = 2;
        config.problem.n_modes = 4;
        config.sampling.subchain_lengths = vec![3];
        config.sampling.n_chains = 2;
        config.sampling.n_samples = 12;
        config.sampling.n_burnin = 6;
        config.sampling.base_seed = 99;
        config
    }

    #[test]
    fn generate_data_writes_all_artifacts() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        let outputs = cmd_generate_data(&config, dir.path()).unwrap();
        assert!(outputs.data_path.is_file());
        assert!(outputs.truth_path.is_file());
        assert!(outputs.fields_path.is_file());
        assert!(outputs.metadata_path.is_file());

        let observations = read_observations(&outputs.data_path).unwrap();
        assert_eq!(observations.len(), 25);
        for (a, b) in observations.iter().zip(outputs.data.observations.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let fields = std::fs::read_to_string(&outputs.fields_path).unwrap();
        let mut lines = fields.lines();
        assert_eq!(lines.next(), Some("level,m,quantity,value"));
        // Two quantities per level, m² nodes each: 2·(25 + 289) data rows.
        assert_eq!(fields.lines().count() - 1, 2 * (25 + 289));
    }

    #[test]
    fn generate_data_is_deterministic_in_the_seed() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let config = tiny_config();
        cmd_generate_data(&config, dir_a.path()).unwrap();
        cmd_generate_data(&config, dir_b.path()).unwrap();
        let a = std::fs::read_to_string(dir_a.path().join(DATA_FILE)).unwrap();
        let b = std::fs::read_to_string(dir_b.path().join(DATA_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_writes_traces_and_sidecar() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        let generated = cmd_generate_data(&config, dir.path()).unwrap();
        let outputs = cmd_sample(&config, &generated.data_path, dir.path()).unwrap();
        assert_eq!(outputs.trace_paths.len(), 2);

        for (chain, path) in outputs.trace_paths.iter().enumerate() {
            let data = tracefile::read_trace(path).unwrap();
            assert_eq!(data.len(), 12, "chain {chain} sample count");
            assert_eq!(data.parameters.len(), 4);
        }

        let text = std::fs::read_to_string(&outputs.metadata_path).unwrap();
        let metadata: RunMetadata = serde_json::from_str(&text).unwrap();
        assert_eq!(metadata.seeds, vec![99, 100]);
        assert_eq!(metadata.chains.len(), 2);
        for chain in &metadata.chains {
            assert!(chain.aem_terms.is_some(), "AEM moments recorded");
            assert!(chain.final_step_size.is_some());
            // The finest level makes one DA decision per kept sample.
            let sampling = &chain.stats.sampling[1];
            assert_eq!(sampling.proposals + sampling.trivial_proposals, 12);
        }
        let echo = serde_json::to_value(&metadata.config).unwrap();
        let original = serde_json::to_value(&config).unwrap();
        assert_eq!(echo, original, "config echo must match the input exactly");
    }

    #[test]
    fn diagnose_and_plot_consume_sample_outputs() {
        let dir = tempdir().unwrap();
        let mut config = tiny_config();
        config.sampling.n_samples = 40;
        let generated = cmd_generate_data(&config, dir.path()).unwrap();
        let sampled = cmd_sample(&config, &generated.data_path, dir.path()).unwrap();

        let diagnosed = cmd_diagnose(&sampled.trace_paths, dir.path()).unwrap();
        assert_eq!(diagnosed.rows.len(), 4);
        assert!(diagnosed.summary_path.is_some(), "run.json sidecar found");
        let summary = std::fs::read_to_string(diagnosed.summary_path.unwrap()).unwrap();
        assert_eq!(summary.lines().count(), 1 + 2, "two levels plus header");

        let plot = cmd_plot_data(&sampled.trace_paths, &["theta_2".into()], dir.path()).unwrap();
        let text = std::fs::read_to_string(plot).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 40);
        assert!(text.lines().nth(1).unwrap().starts_with("0,1,theta_2,"));
    }

    #[test]
    fn plot_data_rejects_unknown_parameters() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        let generated = cmd_generate_data(&config, dir.path()).unwrap();
        let sampled = cmd_sample(&config, &generated.data_path, dir.path()).unwrap();
        let err =
            cmd_plot_data(&sampled.trace_paths, &["theta_99".into()], dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!dir.path().join(PLOT_DATA_FILE).exists(), "nothing written");
    }

    #[test]
    fn discover_traces_orders_numerically() {
        let dir = tempdir().unwrap();
        for i in [10, 2, 0, 1] {
            std::fs::write(dir.path().join(chain_file_name(i)), "x\n").unwrap();
        }
        std::fs::write(dir.path().join("chain_x.csv"), "x\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x\n").unwrap();
        let names: Vec<String> = discover_traces(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["chain_0.csv", "chain_1.csv", "chain_2.csv", "chain_10.csv"]);
    }

    #[test]
    fn diagnose_flags_constant_parameters_with_nan() {
        let dir = tempdir().unwrap();
        let mut trace = Trace::default();
        for i in 0..16 {
            let theta = DVector::from_vec(vec![1.5, (i as f64 * 0.7).sin()]);
            trace.push(theta, true, -1.0);
        }
        let path = dir.path().join(chain_file_name(0));
        tracefile::write_trace(&path, &trace).unwrap();
        let outputs = cmd_diagnose(&[path], dir.path()).unwrap();
        assert!(outputs.rows[0].ess.is_nan());
        assert!(outputs.rows[0].rhat.is_nan());
        assert!(outputs.rows[1].ess.is_finite());
        assert!(outputs.summary_path.is_none(), "no sidecar in this dir");
    }

    #[test]
    fn missing_data_file_is_a_config_error() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        let err = cmd_sample(&config, &dir.path().join("absent.csv"), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mismatched_observation_count_is_a_config_error() {
        let dir = tempdir().unwrap();
        let config = tiny_config();
        let data_path = dir.path().join(DATA_FILE);
        std::fs::write(&data_path, "value\n1.0\n2.0\n").unwrap();
        let err = cmd_sample(&config, &data_path, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
