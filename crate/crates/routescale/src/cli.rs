use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use routescale_core::arch::{param_flop_model, ArchSpec, RoutingShape};
use routescale_core::dispatch::{simulate_hash_balance, zipf_frequencies, DispatchConfig, DropPolicy};
use routescale_core::fit::{self, FitOptions, Observation, RunRecord, SliceBy, Technique};
use routescale_core::law::{self, LawCoefficients, LawForm};
use routescale_core::routing::HashStrategy;
use routescale_core::synth::{grid_records, GRID_EXPERTS, GRID_SIZES};
use routescale_core::toy::{self, RouterMethod, TrainHyper};

use crate::artifact::{ArtifactMetadata, FitArtifact, TOOL_VERSION};
use crate::error::{CliError, CliResult};
use crate::fixtures::{self, FIXTURES};
use crate::runs::{load_runs, write_runs, RunTable};

#[derive(Debug, Parser)]
#[command(name = "routescale", version, about = "Scaling-law analysis and routing simulation for routed language models")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Run-record CSV (`technique,N,E,K,R,tokens,loss`).
    #[arg(long, conflicts_with = "fixture")]
    pub input: Option<PathBuf>,
    /// Built-in run table: `synthetic-sbase`, `synthetic-rlr` or `synthetic-hash`.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Keep only this technique (plus dense baselines).
    #[arg(long)]
    pub technique: Option<Technique>,
    /// log10 noise of synthetic fixtures.
    #[arg(long, default_value_t = 0.004)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    /// Projected-gradient tolerance of each local solve.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Greedy,
    Nucleus,
    Baseline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    N,
    E,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Drop {
    Random,
    HighestIndex,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a law to run records and write a JSON artifact.
    Fit {
        #[arg(long)]
        law: LawForm,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Record the wall-clock time in the artifact (makes output vary).
        #[arg(long)]
        timestamp: bool,
    },
    /// Predicted log10 loss at (N, E).
    Predict {
        /// `table3:sbase`, `table6:hash`, `table2:ours`, `transfer:sbase/lambada` or an artifact path.
        #[arg(long)]
        coeffs: String,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 1.0)]
        e: f64,
    },
    /// Effective parameter count of a routed model.
    Epc {
        #[arg(long)]
        coeffs: String,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        e: f64,
    },
    /// Size beyond which routing stops helping, 10^(-b/c).
    Cutoff {
        #[arg(long)]
        coeffs: String,
    },
    /// Best effective size reachable with unlimited experts.
    Nmax {
        #[arg(long)]
        coeffs: String,
        #[arg(long)]
        n: f64,
    },
    /// (N, E) pairs that match the loss of a reference model, as CSV.
    LevelCurves {
        #[arg(long)]
        coeffs: String,
        /// Reference model size.
        #[arg(long)]
        target_n: f64,
        #[arg(long, default_value_t = 1.0)]
        target_e: f64,
        #[arg(long, default_value_t = 1e6)]
        n_min: f64,
        #[arg(long, default_value_t = 1e9)]
        n_max: f64,
        #[arg(long, default_value_t = 31)]
        points: usize,
    },
    /// Leave-one-out RMSLE of a law on run records.
    Loo {
        #[arg(long)]
        law: LawForm,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Per-slice power-law slopes, as CSV.
    Slices {
        #[arg(long, value_enum)]
        by: Axis,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Hash routing of a Zipf token stream through capacity-limited experts.
    RouteSim {
        #[arg(long, default_value_t = 4096)]
        tokens: usize,
        #[arg(long, default_value_t = 64)]
        experts: usize,
        #[arg(long, default_value_t = 2.0)]
        capacity_factor: f64,
        #[arg(long, default_value_t = 1)]
        experts_per_device: usize,
        #[arg(long)]
        share_within_device: bool,
        #[arg(long, value_enum, default_value_t = Drop::Random)]
        drop_policy: Drop,
        /// modulo, random or greedy.
        #[arg(long, default_value = "modulo")]
        strategy: HashStrategy,
        #[arg(long, default_value_t = 32_000)]
        vocab: usize,
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
        #[arg(long, default_value_t = 65_536)]
        stream_len: usize,
        /// Also write a JSON summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train a tabular router with policy gradients; learning curve as CSV.
    TrainToy {
        #[arg(long, value_enum, default_value_t = Method::Baseline)]
        method: Method,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 256)]
        vocab: usize,
        #[arg(long, default_value_t = 8)]
        experts: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        balance_w: Option<f64>,
        /// Also write a JSON summary with the exact final evaluation here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Parameter and FLOP accounting for reference or custom shapes, as CSV.
    Params {
        /// One reference shape by name (e.g. 130M); all of them if omitted.
        #[arg(long, conflicts_with = "d_model")]
        arch: Option<String>,
        #[arg(long, requires_all = ["n_layers", "n_heads", "kv_size"])]
        d_model: Option<u64>,
        #[arg(long)]
        n_layers: Option<u64>,
        #[arg(long)]
        n_heads: Option<u64>,
        #[arg(long)]
        kv_size: Option<u64>,
        #[arg(long, default_value_t = 1)]
        experts: u64,
        #[arg(long, default_value_t = 1)]
        top_k: u64,
        /// Fraction of layers that are routed.
        #[arg(long, default_value_t = 0.5)]
        frequency: f64,
    },
    /// Synthetic run table on the reference 6 x 10 grid, as CSV.
    Synth {
        #[arg(long)]
        coeffs: String,
        #[arg(long, default_value_t = 0.004)]
        noise: f64,
        #[arg(long, default_value = "sbase")]
        technique: Technique,
    },
    /// List the built-in tables.
    Fixtures,
}

/// Runs one command and returns its primary output.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let seed = cli.seed;
    match &cli.command {
        Command::Fit { law, data, fit, timestamp } => {
            let table = load_data(data, seed)?;
            let result = fit_table(&table, *law, &fit_options(fit, seed))?;
            let artifact = FitArtifact {
                fit: result,
                metadata: ArtifactMetadata {
                    law_form: *law,
                    data_hash: table.data_hash()?,
                    seed,
                    tool_version: TOOL_VERSION.to_string(),
                    timestamp: timestamp.then(unix_time),
                },
            };
            artifact.to_json()
        }
        Command::Predict { coeffs, n, e } => {
            let c = resolve(coeffs)?;
            let log_loss = law::eval_law(&c, *n, *e)?;
            Ok(format!("log10_loss,loss\n{log_loss},{}\n", 10f64.powf(log_loss)))
        }
        Command::Epc { coeffs, n, e } => {
            let c = resolve(coeffs)?;
            let value = match c.form {
                LawForm::Saturated => law::effective_param_count(&c, *n, *e)?,
                _ => law::simplified_epc(&c, *n, *e)?,
            };
            Ok(format!("{value:e}\n"))
        }
        Command::Cutoff { coeffs } => {
            let c = resolve(coeffs)?;
            let cut = law::n_cutoff(&c)?;
            eprintln!("note: 10^(-b/c) from coefficients as given; rounding of b and c moves this by orders of magnitude");
            Ok(format!("{cut:e}\n"))
        }
        Command::Nmax { coeffs, n } => {
            let c = resolve(coeffs)?;
            Ok(format!("{:e}\n", law::n_max(&c, *n)?))
        }
        Command::LevelCurves { coeffs, target_n, target_e, n_min, n_max, points } => {
            let c = resolve(coeffs)?;
            if *points < 2 || !(n_min > &0.0 && n_max > n_min) {
                return Err(CliError::Usage("need --points >= 2 and 0 < --n-min < --n-max".into()));
            }
            let target = law::eval_law(&c, *target_n, *target_e)?;
            let (lo, hi) = (n_min.log10(), n_max.log10());
            let grid: Vec<f64> = (0..*points)
                .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (*points - 1) as f64))
                .collect();
            let curve = law::level_curve(&c, target, &grid)?;
            let mut s = format!("# target log10 loss {target}\nN,E\n");
            for (n, e) in &curve.points {
                writeln!(s, "{n},{e}").unwrap();
            }
            for (n, why) in &curve.skipped {
                writeln!(s, "# N={n} skipped: {why}").unwrap();
            }
            Ok(s)
        }
        Command::Loo { law, data, fit } => {
            let table = load_data(data, seed)?;
            let opts = fit_options(fit, seed);
            let value = match law {
                LawForm::FlopParam => fit::loo_rmsle_points(&flop_points(&table.records)?, *law, &opts)?,
                _ => fit::loo_rmsle(&table.records, *law, &opts)?,
            };
            Ok(format!("law,loo_rmsle\n{law},{value}\n"))
        }
        Command::Slices { by, data } => {
            let table = load_data(data, seed)?;
            let axis = match by {
                Axis::N => SliceBy::N,
                Axis::E => SliceBy::E,
            };
            let slices = fit::per_slice_fits(&table.records, axis)?;
            let mut s = String::from("key,slope,intercept,points,rmsle\n");
            for f in &slices.slices {
                writeln!(s, "{},{},{},{},{}", f.key, f.slope, f.intercept, f.points, f.rmsle).unwrap();
            }
            for (key, why) in &slices.skipped {
                writeln!(s, "# {key} skipped: {why}").unwrap();
            }
            Ok(s)
        }
        Command::RouteSim {
            tokens,
            experts,
            capacity_factor,
            experts_per_device,
            share_within_device,
            drop_policy,
            strategy,
            vocab,
            zipf,
            stream_len,
            summary,
        } => {
            let config = DispatchConfig {
                tokens: *tokens,
                experts: *experts,
                capacity_factor: *capacity_factor,
                experts_per_device: *experts_per_device,
                share_within_device: *share_within_device,
                drop_policy: match drop_policy {
                    Drop::Random => DropPolicy::Random,
                    Drop::HighestIndex => DropPolicy::HighestIndex,
                },
                seed,
            };
            let freq = zipf_frequencies(*vocab, *zipf);
            let study = simulate_hash_balance(&freq, *strategy, &config, *stream_len)?;
            let mut s = String::from("expert_rank,load,capacity,dropped\n");
            for row in &study.curve {
                writeln!(s, "{},{},{},{}", row.expert_rank, row.load, row.capacity, row.dropped).unwrap();
            }
            if let Some(path) = summary {
                #[derive(Serialize)]
                struct Summary<'a> {
                    config: &'a DispatchConfig,
                    strategy: HashStrategy,
                    vocab: usize,
                    zipf: f64,
                    stream_len: usize,
                    batches: usize,
                    dropped_count: usize,
                    drop_rate: f64,
                    max_mean_ratio: f64,
                    absorbed_per_device: &'a [usize],
                }
                let r = &study.report;
                let json = serde_json::to_string_pretty(&Summary {
                    config: &config,
                    strategy: *strategy,
                    vocab: *vocab,
                    zipf: *zipf,
                    stream_len: *stream_len,
                    batches: study.batches,
                    dropped_count: r.dropped_count,
                    drop_rate: r.drop_rate,
                    max_mean_ratio: r.max_mean_ratio,
                    absorbed_per_device: &r.absorbed_per_device,
                })?;
                write_file(path, &(json + "\n"))?;
            }
            Ok(s)
        }
        Command::TrainToy { method, top_p, vocab, experts, steps, batch, lr, balance_w, summary } => {
            let method = match method {
                Method::Greedy => RouterMethod::Greedy,
                Method::Nucleus => RouterMethod::Nucleus(*top_p),
                Method::Baseline => RouterMethod::Baseline,
            };
            let defaults = TrainHyper::for_method(method);
            let hyper = TrainHyper {
                steps: steps.unwrap_or(defaults.steps),
                batch: batch.unwrap_or(defaults.batch),
                lr: lr.unwrap_or(defaults.lr),
                balance_w: balance_w.unwrap_or(defaults.balance_w),
                seed,
                ..defaults
            };
            let task = toy::make_task(*vocab, *experts, seed)?;
            let outcome = toy::train_router(&task, method, &hyper)?;
            let mut s = String::from("step,mean_reward,optimal_rate,balance_loss\n");
            for p in &outcome.curve {
                writeln!(s, "{},{},{},{}", p.step, p.mean_reward, p.optimal_rate, p.balance_loss).unwrap();
            }
            if let Some(path) = summary {
                #[derive(Serialize)]
                struct Summary {
                    method: RouterMethod,
                    hyper: TrainHyper,
                    vocab: usize,
                    experts: usize,
                    eval: toy::PolicyEval,
                }
                let eval = toy::eval_policy(&task, &outcome.policy)?;
                let json = serde_json::to_string_pretty(&Summary { method, hyper, vocab: *vocab, experts: *experts, eval })?;
                write_file(path, &(json + "\n"))?;
            }
            Ok(s)
        }
        Command::Params { arch, d_model, n_layers, n_heads, kv_size, experts, top_k, frequency } => {
            let shape = RoutingShape::new(*experts, *top_k, *frequency)?;
            let rows: Vec<(ArchSpec, Option<u64>)> = match (arch, d_model) {
                (_, Some(d)) => vec![(
                    ArchSpec::new("custom", *d, n_layers.unwrap_or(0), n_heads.unwrap_or(0), kv_size.unwrap_or(0), fixtures::VOCAB)?,
                    None,
                )],
                (Some(name), None) => {
                    let all = fixtures::architectures()?;
                    let known: Vec<String> = all.iter().map(|(a, _)| a.name.clone()).collect();
                    let row = all.into_iter().find(|(a, _)| &a.name == name).ok_or_else(|| {
                        CliError::Data(format!("unknown architecture `{name}`; known: {}", known.join(", ")))
                    })?;
                    vec![(row.0, Some(row.1))]
                }
                (None, None) => fixtures::architectures()?.into_iter().map(|(a, p)| (a, Some(p))).collect(),
            };
            let mut s = String::from("name,N,reported,P,F_tflops,B\n");
            for (a, reported) in rows {
                let cost = param_flop_model(&a, &shape)?;
                let reported = reported.map(|r| r.to_string()).unwrap_or_default();
                writeln!(s, "{},{},{},{},{},{}", a.name, cost.n, reported, cost.p, cost.f_tflops, cost.b).unwrap();
            }
            Ok(s)
        }
        Command::Synth { coeffs, noise, technique } => {
            let c = resolve(coeffs)?;
            let records = grid_records(&c, *technique, &GRID_SIZES, &GRID_EXPERTS, *noise, seed)?;
            write_runs(&records)
        }
        Command::Fixtures => {
            let mut s = String::from("name,rows,sha256,description\n");
            for f in FIXTURES {
                writeln!(s, "{},{},{},{}", f.name, fixtures::row_count(f.name)?, f.sha256, f.description).unwrap();
            }
            for t in [Technique::SBase, Technique::RLR, Technique::Hash] {
                writeln!(s, "synthetic-{},60,,generated 6 x 10 grid from table3:{} (noise --noise; seed --seed)", t, t).unwrap();
            }
            Ok(s)
        }
    }
}

/// Parses, runs and writes the output; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = execute(&cli).and_then(|text| match &cli.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn unix_time() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn fit_options(args: &FitArgs, seed: u64) -> FitOptions {
    let mut opts = FitOptions { starts: args.starts, ..FitOptions::with_seed(seed) };
    if let Some(tol) = args.tol {
        opts.lbfgs.pg_tol = tol;
    }
    opts
}

/// Coefficients from a fixture reference or a fit artifact on disk.
fn resolve(reference: &str) -> CliResult<LawCoefficients> {
    let path = Path::new(reference);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        return Ok(FitArtifact::from_json(&text)?.fit.coefficients);
    }
    fixtures::coefficients(reference)
}

fn load_data(args: &DataArgs, seed: u64) -> CliResult<RunTable> {
    let table = match (&args.input, &args.fixture) {
        (Some(path), _) => load_runs(path)?,
        (None, Some(name)) => {
            let Some(t) = name.strip_prefix("synthetic-") else {
                fixtures::fixture(name)?;
                return Err(CliError::Usage(format!("fixture `{name}` is not a run table; use synthetic-<technique>")));
            };
            let technique: Technique = t.parse()?;
            let coeffs = fixtures::coefficients(&format!("table3:{technique}"))?;
            let records = grid_records(&coeffs, technique, &GRID_SIZES, &GRID_EXPERTS, args.noise, seed)?;
            RunTable::new(records, name.clone())?
        }
        (None, None) => return Err(CliError::Usage("one of --input or --fixture is required".into())),
    };
    let routed: Vec<Technique> = {
        let mut v: Vec<Technique> = table.records.iter().map(|r| r.technique).filter(|t| *t != Technique::Dense).collect();
        v.sort();
        v.dedup();
        v
    };
    match args.technique {
        Some(t) => RunTable::new(table.for_technique(t), table.provenance.clone()),
        None if routed.len() > 1 => Err(CliError::Usage(format!(
            "{} mixes techniques ({}); pick one with --technique",
            table.provenance,
            routed.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
        ))),
        None => Ok(table),
    }
}

/// Observations in (F, B) for the FLOP/parameter law. Sizes must match a
/// reference shape exactly.
pub fn flop_points(records: &[RunRecord]) -> CliResult<Vec<Observation>> {
    let archs = fixtures::architectures()?;
    records
        .iter()
        .map(|r| {
            let (arch, _) = archs.iter().find(|(a, _)| a.dense_params() == r.n).ok_or_else(|| {
                CliError::Data(format!("N={} matches no reference shape; the (F, B) law needs known shapes", r.n))
            })?;
            let shape = if r.e == 1 { RoutingShape::dense() } else { RoutingShape::new(r.e, r.k, r.r)? };
            let cost = param_flop_model(arch, &shape)?;
            Ok(Observation { x1: cost.f_tflops, x2: cost.utilization(), loss: r.loss })
        })
        .collect()
}

fn fit_table(table: &RunTable, form: LawForm, opts: &FitOptions) -> CliResult<fit::FitResult> {
    Ok(match form {
        LawForm::FlopParam => fit::fit_points(&flop_points(&table.records)?, form, opts)?,
        _ => fit::fit_law(&table.records, form, opts)?,
    })
}
