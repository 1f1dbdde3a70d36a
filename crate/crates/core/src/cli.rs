//! Command-line front end: load a scenario, compile it, run shots, and emit
//! results.
//!
//! Exit codes: 0 success, 1 runtime failure (a shot failed), 2 usage or
//! config/circuit error.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::qasm::{lower_to_circuit, parse_qasm};
use crate::runtime::{run_shots, to_csv, to_json, RunResult};
use crate::scenario::{build_scenario, load_config, Scenario, SetOverride};

#[derive(Parser)]
#[command(
    name = "dqsim",
    version,
    about = "Discrete-event simulator for distributed quantum computers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's shots and report fidelity results.
    Run(RunArgs),
    /// Compile a scenario to instruction streams without executing.
    Compile(CompileArgs),
    /// Parse a circuit file and print the lowered operations.
    Parse(ParseArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured circuit with this file (.qasm is monolithic,
    /// anything else is distributed circuit text).
    #[arg(long)]
    circuit: Option<PathBuf>,
    /// Override one config value, e.g. --set run.formalism=ket (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<SetOverride>,
    /// Write the effective config (after overrides) to this file.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write shot results to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the results file.
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured shot count.
    #[arg(long)]
    shots: Option<usize>,
    /// Abort on the first failing shot instead of recording it.
    #[arg(long)]
    fail_fast: bool,
    /// Print the event trace (`t=<ns> node=<name> <instruction>`).
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the instruction streams to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Circuit file: .qasm (monolithic) or distributed circuit text.
    circuit: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compile(args) => cmd_compile(args),
        Command::Parse(args) => cmd_parse(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Load the config (with overrides applied), honor --dump-config, and
/// assemble the scenario. All failures here are config errors (exit 2).
fn assemble(args: &ScenarioArgs) -> anyhow::Result<Scenario> {
    let config = load_config(&args.config, &args.set)?;
    if let Some(path) = &args.dump_config {
        std::fs::write(path, config.to_toml_string()?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let base_dir = args.config.parent().unwrap_or(Path::new("."));
    let scenario = build_scenario(config, base_dir, args.circuit.as_deref())?;
    Ok(scenario)
}

fn write_results(
    result: &RunResult,
    out: Option<&Path>,
    format: OutFormat,
) -> anyhow::Result<()> {
    let rendered = match format {
        OutFormat::Csv => to_csv(result),
        OutFormat::Json => to_json(result),
    };
    match out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let mut scenario = assemble(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(shots) = args.shots {
        if shots == 0 {
            anyhow::bail!("--shots must be >= 1");
        }
        scenario.shots = shots;
    }
    for note in &scenario.notes {
        eprintln!("note: {note}");
    }
    let result = run_shots(
        &scenario.program,
        &scenario.network,
        scenario.collector.as_ref(),
        scenario.formalism,
        scenario.seed,
        scenario.shots,
        args.verbose,
        args.fail_fast,
    );
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            // A runtime failure under --fail-fast: exit 1, not 2.
            eprintln!("error: {e}");
            return Ok(1);
        }
    };
    if args.verbose {
        for row in &result.rows {
            if let Ok(outcome) = &row.outcome {
                eprintln!("shot {} trace:", row.shot);
                for line in &outcome.trace {
                    eprintln!("  {line}");
                }
            }
        }
    }
    write_results(&result, args.out.as_deref(), args.format)?;
    let failures = result.rows.iter().filter(|r| r.outcome.is_err()).count();
    let final_time = result
        .rows
        .iter()
        .find_map(|r| r.outcome.as_ref().ok().map(|o| o.final_time));
    eprintln!(
        "ran {} shot(s), formalism {}, base seed {}",
        result.rows.len(),
        scenario.formalism,
        scenario.seed
    );
    if let Some(t) = final_time {
        eprintln!("final time: {} ns", t.ns());
    }
    match result.mean_fidelity() {
        Some(f) => eprintln!("mean fidelity: {f:.16}"),
        None => eprintln!("mean fidelity: (no collector configured)"),
    }
    if failures > 0 {
        for row in result.rows.iter().filter(|r| r.outcome.is_err()) {
            if let Err(e) = &row.outcome {
                eprintln!("shot {} failed: {e}", row.shot);
            }
        }
        return Ok(1);
    }
    Ok(0)
}

fn cmd_compile(args: CompileArgs) -> anyhow::Result<i32> {
    let scenario = assemble(&args.scenario)?;
    for note in &scenario.notes {
        eprintln!("note: {note}");
    }
    let mut report = scenario.program.dump();
    report.push_str(&format!(
        "resources: ebits={} classical_bits={}\n",
        scenario.program.ebits, scenario.program.cbits
    ));
    let depths: Vec<String> = scenario
        .program
        .streams
        .iter()
        .map(|s| {
            format!(
                "{}={}",
                scenario.network.node_name(s.node),
                s.instructions.len()
            )
        })
        .collect();
    report.push_str(&format!("per-QPU depth: {}\n", depths.join(" ")));
    match &args.out {
        Some(path) => std::fs::write(path, report)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{report}"),
    }
    Ok(0)
}

fn cmd_parse(args: ParseArgs) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(&args.circuit)
        .with_context(|| format!("reading {}", args.circuit.display()))?;
    if args.circuit.extension().is_some_and(|e| e == "qasm") {
        let prog = parse_qasm(&text)?;
        let lowered = lower_to_circuit(&prog)?;
        for note in &lowered.notes {
            eprintln!("note: {note}");
        }
        println!(
            "qubits={} cbits={}",
            lowered.circuit.num_qubits, lowered.circuit.num_cbits
        );
        print!("{}", lowered.circuit);
    } else {
        let circuit = crate::circuit::parse_distributed(&text)?;
        print!("{circuit}");
    }
    Ok(0)
}
