use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gflow_core::harness::{self, Command, Overrides};

#[derive(Parser)]
#[command(name = "gflow", version, about = "Run verification scenarios for flows on Lie groupoid presentations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Groupoid axioms, tangent groupoid, and field laws.
    Check(Common),
    /// Haar-average fields and certify the equivalence to the original.
    Average(Common),
    /// Integrate a field's flow and write trajectories.
    Flow(Common),
    /// Sampled indicator of where a field is not equivalent to zero.
    Support(Common),
    /// Gauge transport between the flows of two equivalent fields.
    Gauge(Common),
    /// Chart-system pullback and assignment checks.
    Etale(Common),
    /// Count 2-morphisms between finite groupoid morphisms.
    Dictionary(Common),
    /// Lift a flow along a map and compare its projection.
    Lift(Common),
    /// Every task listed in the scenario's [tasks] section.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for report.json and CSV files.
    #[arg(long, default_value = "gflow-out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override every tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the integrator step.
    #[arg(long)]
    step: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Check(a) => (Command::Check, a),
        Cmd::Average(a) => (Command::Average, a),
        Cmd::Flow(a) => (Command::Flow, a),
        Cmd::Support(a) => (Command::Support, a),
        Cmd::Gauge(a) => (Command::Gauge, a),
        Cmd::Etale(a) => (Command::Etale, a),
        Cmd::Dictionary(a) => (Command::Dictionary, a),
        Cmd::Lift(a) => (Command::Lift, a),
        Cmd::Run(a) => (Command::Run, a),
    };
    match execute(command, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("gflow: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command, args: &Common) -> gflow_core::Result<bool> {
    let mut scenario = harness::load(&args.scenario)?;
    scenario.apply(&Overrides {
        seed: args.seed,
        tol: args.tol,
        step: args.step,
    });
    let out = harness::run(&scenario, command)?;
    harness::write_outputs(&args.out, &out)?;
    let report = &out.report;
    for section in &report.sections {
        for c in &section.checks {
            println!(
                "{} {} / {}: {:.3e} (tolerance {:.1e})",
                if c.passed { "PASS" } else { "FAIL" },
                section.title,
                c.name,
                c.max_residual,
                c.tolerance
            );
        }
    }
    println!(
        "{}: {} {} in {} ms, report in {}",
        report.scenario,
        command.as_str(),
        if report.passed { "passed" } else { "failed" },
        report.wall_time_ms,
        args.out.join("report.json").display()
    );
    Ok(report.passed)
}
