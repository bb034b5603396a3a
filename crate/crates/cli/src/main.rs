//! `vlpre`: data generation, pre-training, masking ablation, standalone OT
//! solving, gradient checks, evaluation and attention export.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or validation error,
//! 3 gradient check failure. Failures print one JSON object on stderr.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use vlpre_core::data::{generate_synthetic, load_dataset, write_dataset, SyntheticCorpusSpec};
use vlpre_core::gradcheck;
use vlpre_core::tasks::SequenceInput;
use vlpre_core::trainer::{evaluate, run_ablation, Checkpoint, EvalSet, RunOutput, TrainConfig, Trainer};
use vlpre_ot::{
    ipot_solve, lp_exact, plan_diagnostics, sinkhorn_solve, uniform_weights, CostMatrix, IpotConfig,
    SinkhornConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_GRADCHECK: u8 = 3;

/// Written to the output directory of `pretrain`, next to the CSVs.
const EFFECTIVE_CONFIG: &str = "config.toml";
const ABLATION_SUMMARY: &str = "summary.json";
pub const ATTENTION_CSV_HEADER: &str = "layer,head,query,key,query_segment,key_segment,weight";

#[derive(Parser)]
#[command(name = "vlpre", version, about = "Image-text transformer pre-training at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an aligned image-text corpus as JSON lines.
    GenData {
        /// TOML corpus settings.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train on a JSON-lines dataset.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Paired conditional / joint-random masking runs.
    AblateMasking {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Optimal transport utilities.
    Ot {
        #[command(subcommand)]
        command: OtCommand,
    },
    /// Finite-difference gradient checks (all ops when no --op is given).
    Gradcheck {
        #[arg(long, conflicts_with = "all")]
        op: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Evaluate a checkpoint on every instance of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write every layer's and head's attention weights for one instance.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instance_id: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML training config; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum OtCommand {
    /// Solve one transport problem and print the plan with diagnostics.
    Solve(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Ipot,
    Sinkhorn,
    Exact,
}

#[derive(Args)]
struct SolveArgs {
    /// Cost matrix as a JSON array of rows, inline or as a file path.
    #[arg(long)]
    cost: String,
    /// Row marginal (JSON array, inline or file); uniform when omitted.
    #[arg(long)]
    a: Option<String>,
    /// Column marginal (JSON array, inline or file); uniform when omitted.
    #[arg(long)]
    b: Option<String>,
    #[arg(long, value_enum, default_value = "ipot")]
    solver: Solver,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// IPOT outer iterations or Sinkhorn iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime { kind: &'static str, message: String },
    Gradcheck(String),
}

impl From<vlpre_core::Error> for Failure {
    fn from(e: vlpre_core::Error) -> Self {
        Failure::Runtime { kind: e.kind(), message: e.to_string() }
    }
}

impl From<vlpre_ot::OtError> for Failure {
    fn from(e: vlpre_ot::OtError) -> Self {
        vlpre_core::Error::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        vlpre_core::Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(Failure::Usage(e.to_string().trim().to_string())),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(failure: Failure) -> ExitCode {
    let (code, kind, message) = match failure {
        Failure::Usage(m) => (EXIT_USAGE, "usage", m),
        Failure::Runtime { kind, message } => (EXIT_RUNTIME, kind, message),
        Failure::Gradcheck(m) => (EXIT_GRADCHECK, "gradcheck_failed", m),
    };
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable output"));
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::GenData { spec, out } => {
            let spec = SyntheticCorpusSpec::load(spec)?;
            let data = generate_synthetic(&spec)?;
            write_dataset(&out, &data)?;
            print_json(&json!({ "instances": data.len(), "out": out }));
            Ok(())
        }
        Command::Pretrain { run, resume } => pretrain(&run, resume.as_deref()),
        Command::AblateMasking { run } => ablate(&run),
        Command::Ot { command: OtCommand::Solve(args) } => solve(&args),
        Command::Gradcheck { op, all: _ } => run_gradcheck(op.as_deref()),
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::load(checkpoint)?;
            let data = load_dataset(data)?;
            let set = EvalSet::build(data, ck.model.config.vocab_size, ck.train.eval_mask_repeats, ck.train.seed)?;
            print_json(&evaluate(&ck.model, &ck.store, &set, &ck.train.ipot(), ck.step)?);
            Ok(())
        }
        Command::ExportAttn { checkpoint, instance_id, data, out } => {
            let ck = Checkpoint::load(checkpoint)?;
            let data = load_dataset(data)?;
            let instance = data.iter().find(|i| i.id == instance_id).ok_or_else(|| Failure::Runtime {
                kind: "unknown_instance",
                message: format!("no instance with id `{instance_id}`"),
            })?;
            let rows = export_attention(&ck, instance, &out)?;
            print_json(&json!({ "rows": rows, "out": out }));
            Ok(())
        }
    }
}

fn final_summary(out: &RunOutput) -> serde_json::Value {
    json!({ "steps_run": out.steps.len(), "final_eval": out.evals.last() })
}

fn pretrain(run: &RunArgs, resume: Option<&Path>) -> CliResult {
    let config = TrainConfig::load(&run.config)?;
    let data = load_dataset(&run.data)?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(Checkpoint::load(path)?, config.clone(), &data)?,
        None => Trainer::new(config.clone(), &data)?,
    };
    fs::create_dir_all(&run.out_dir)?;
    fs::write(run.out_dir.join(EFFECTIVE_CONFIG), config.to_toml())?;
    let out = trainer.run(Some(&run.out_dir))?;
    print_json(&final_summary(&out));
    Ok(())
}

fn final_mlm(out: &RunOutput) -> f64 {
    out.evals.last().map_or(f64::NAN, |e| e.mlm_accuracy)
}

fn ablate(run: &RunArgs) -> CliResult {
    let config = TrainConfig::load(&run.config)?;
    let data = load_dataset(&run.data)?;
    let out = run_ablation(&config, &data, Some(&run.out_dir))?;
    let (cond, joint) = (final_mlm(&out.conditional), final_mlm(&out.joint_random));
    let summary = json!({
        "conditional": final_summary(&out.conditional),
        "joint_random": final_summary(&out.joint_random),
        "conditional_final_mlm_accuracy": cond,
        "joint_random_final_mlm_accuracy": joint,
        "conditional_minus_joint": cond - joint,
    });
    fs::write(run.out_dir.join(ABLATION_SUMMARY), format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")))?;
    print_json(&summary);
    Ok(())
}

/// Inline JSON when the argument looks like JSON, otherwise a file path.
fn json_arg<T: serde::de::DeserializeOwned>(name: &str, arg: &str) -> CliResult<T> {
    let trimmed = arg.trim_start();
    let text = if trimmed.starts_with('[') || trimmed.starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg)?
    };
    serde_json::from_str(&text).map_err(|e| Failure::Runtime {
        kind: "parse_error",
        message: format!("--{name}: {e}"),
    })
}

fn solve(args: &SolveArgs) -> CliResult {
    let rows: Vec<Vec<f64>> = json_arg("cost", &args.cost)?;
    let cost = CostMatrix::from_rows(&rows)?;
    let a = match &args.a {
        Some(s) => json_arg("a", s)?,
        None => uniform_weights(cost.rows()),
    };
    let b = match &args.b {
        Some(s) => json_arg("b", s)?,
        None => uniform_weights(cost.cols()),
    };
    let misplaced = match args.solver {
        Solver::Ipot => args.epsilon.map(|_| "--epsilon"),
        Solver::Sinkhorn => args.beta.or(args.inner_iters.map(|x| x as f64)).map(|_| "--beta/--inner-iters"),
        Solver::Exact => [args.beta, args.epsilon, args.tol, args.iters.map(|x| x as f64)]
            .iter()
            .any(Option::is_some)
            .then_some("solver parameters"),
    };
    if let Some(flag) = misplaced {
        return Err(Failure::Usage(format!("{flag} does not apply to the selected solver")));
    }
    let (name, result) = match args.solver {
        Solver::Ipot => {
            let d = IpotConfig::default();
            let config = IpotConfig {
                beta: args.beta.unwrap_or(d.beta),
                outer_iters: args.iters.unwrap_or(d.outer_iters),
                inner_iters: args.inner_iters.unwrap_or(d.inner_iters),
                marginal_tol: args.tol.unwrap_or(d.marginal_tol),
            };
            ("ipot", ipot_solve(&cost, &a, &b, &config)?)
        }
        Solver::Sinkhorn => {
            let d = SinkhornConfig::default();
            let config = SinkhornConfig {
                epsilon: args.epsilon.unwrap_or(d.epsilon),
                iters: args.iters.unwrap_or(d.iters),
                marginal_tol: args.tol.unwrap_or(d.marginal_tol),
            };
            ("sinkhorn", sinkhorn_solve(&cost, &a, &b, &config)?)
        }
        Solver::Exact => ("exact", lp_exact(&cost, &a, &b)?),
    };
    let diag = plan_diagnostics(&result.plan, &a, &b);
    let mut out = serde_json::to_value(&result).expect("json");
    out["solver"] = json!(name);
    out["grand_sum"] = json!(diag.grand_sum);
    out["nonzero_count"] = json!(diag.nonzero_count);
    print_json(&out);
    Ok(())
}

fn run_gradcheck(op: Option<&str>) -> CliResult {
    let reports = match op {
        Some(op) if !gradcheck::OPS.contains(&op) => {
            return Err(Failure::Usage(format!(
                "unknown op `{op}`; expected one of {}",
                gradcheck::OPS.join(", ")
            )))
        }
        Some(op) => vec![gradcheck::run(op)?],
        None => gradcheck::run_all()?,
    };
    for r in &reports {
        print_json(r);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!("failed ops: {}", failed.join(", "))))
    }
}

/// One CSV row per (layer, head, query, key); returns the row count.
fn export_attention(ck: &Checkpoint, instance: &vlpre_core::instance::TrainingInstance, out: &Path) -> CliResult<usize> {
    let input = SequenceInput::from_instance(instance)?;
    let fwd = ck.model.infer(&ck.store, std::slice::from_ref(&input))?;
    let layout = fwd.layouts[0];
    let n = fwd.seq_len;
    let heads = ck.model.config.heads;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "{ATTENTION_CSV_HEADER}")?;
    let mut rows = 0;
    for layer in 0..ck.model.config.num_layers {
        let probs = fwd.attention(layer).data();
        for head in 0..heads {
            for q in 0..n {
                let row = &probs[(head * n + q) * n..(head * n + q + 1) * n];
                for (k, p) in row.iter().enumerate() {
                    writeln!(
                        w,
                        "{layer},{head},{q},{k},{},{},{p}",
                        layout.segment(q).name(),
                        layout.segment(k).name()
                    )?;
                    rows += 1;
                }
            }
        }
    }
    w.flush()?;
    Ok(rows)
}
