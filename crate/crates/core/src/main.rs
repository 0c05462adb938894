use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modfl_core::data::PartitionPlan;
use modfl_core::federation::{plan_partition, prepare_data};
use modfl_core::harness::{self, parse_config, read_csv, ExperimentConfig};
use modfl_core::nn::gradcheck;
use modfl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "modfl", version, about = "Modular federated learning simulator")]
struct Cli {
    /// Worker threads for client updates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Artifact directory (default: output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot cohort accuracy curves from metrics CSV files.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// SVG path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy deltas of run A minus run B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer kind and the loss.
    CheckGrad {
        /// Random instances per kind.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the client partition of a configuration.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Only print the plan; required.
        #[arg(long)]
        dry_run: bool,
    },
}

fn load(config: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut c = parse_config(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(&p, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_plan(config: &ExperimentConfig, plan: &PartitionPlan) {
    println!(
        "{} clients, {} configuration groups, {} operation groups, {} labels per group",
        plan.num_clients,
        config.config_groups(),
        plan.label_sets.len(),
        config.labels_per_group
    );
    for (j, set) in plan.label_sets.iter().enumerate() {
        println!("operation group {j}: labels {set:?}");
    }
    println!("client,arch,config_group,op_group,train,test");
    for n in 0..plan.num_clients {
        let cg = plan.config_groups[n];
        println!(
            "{n},{},{cg},{},{},{}",
            config.architectures[cg],
            plan.operation_groups[n],
            plan.shards[n].train.len(),
            plan.shards[n].test.len()
        );
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let c = load(&config, seed)?;
            let dir = out.unwrap_or_else(|| c.output_dir.clone());
            let outcome = harness::run(&c, &dir)?;
            print!("{}", harness::summary_table(&outcome.summary, outcome.metrics.len()));
            println!("artifacts in {}", outcome.dir.display());
        }
        Command::Plot { csv, out } => {
            let mut rows = Vec::new();
            for p in &csv {
                rows.extend(read_csv(p)?);
            }
            emit(out, &harness::plot_svg(&rows)?)?;
        }
        Command::Compare { a, b, out } => {
            let cmp = harness::compare(&read_csv(&a)?, &read_csv(&b)?)?;
            emit(out, &cmp.to_text())?;
        }
        Command::CheckGrad { instances, seed } => {
            let reports = gradcheck::run_suite(instances, seed)?;
            let mut failed = 0;
            for kind in gradcheck::KINDS {
                let of_kind: Vec<_> = reports.iter().filter(|r| r.kind == kind).collect();
                let worst = of_kind.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
                let bad = of_kind.iter().filter(|r| !r.passed()).count();
                failed += bad;
                println!(
                    "{} {kind}: {} instances, max relative error {worst:.3e}",
                    if bad == 0 { "PASS" } else { "FAIL" },
                    of_kind.len()
                );
            }
            if failed > 0 {
                return Err(Error::Protocol(format!("{failed} gradient checks failed")));
            }
        }
        Command::Partition { config, seed, dry_run } => {
            if !dry_run {
                return Err(Error::Config(vec!["partition only supports --dry-run".into()]));
            }
            let c = load(&config, seed)?;
            let data = prepare_data(&c)?;
            print_plan(&c, &plan_partition(&c, &data)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
