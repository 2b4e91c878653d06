use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellfree::harness::{
    compare, emit, read_records, run_experiment, savings_vs, summarize, write_cdf, write_compare,
    write_summary, ExperimentConfig, Method, MethodSummary, Record,
};
use cellfree::Error;

#[derive(Parser)]
#[command(
    name = "cellfree",
    version,
    about = "Cell-free massive MIMO AP selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write its report.
    Run {
        /// Flat key = value config file; `-` uses the built-in defaults.
        config: PathBuf,
        /// Output directory.
        out: PathBuf,
        /// Overrides as --key=value, applied after the file.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Rebuild CDF and summary tables from a records CSV.
    Summarize { records: PathBuf, out: PathBuf },
    /// Relative savings of report B against report A, per method.
    Compare {
        /// Report directory or records CSV.
        a: PathBuf,
        b: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn records_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("records.csv")
    } else {
        p.to_path_buf()
    }
}

fn print_summaries(summaries: &[MethodSummary]) {
    println!(
        "{:<14} {:<5} {:>6} {:>6} {:>12} {:>12} {:>12} {:>8}",
        "method", "prec", "ok", "infeas", "transmit_W", "p5_tx_W", "total_W", "|A|"
    );
    for s in summaries {
        println!(
            "{:<14} {:<5} {:>6} {:>6} {:>12.5} {:>12.5} {:>12.4} {:>8.2}",
            s.method.name(),
            s.precoder.name(),
            s.included,
            s.infeasible,
            s.transmit.mean(),
            s.transmit.percentile(0.05),
            s.total.mean(),
            s.active.mean()
        );
    }
    for (m, p, x) in savings_vs(summaries, Method::TransmitOnly) {
        if m != Method::TransmitOnly {
            println!(
                "saving of {} vs transmit-only ({}): {:.2}%",
                m.name(),
                p.name(),
                100.0 * x
            );
        }
    }
}

fn failures(records: &[Record]) -> usize {
    records.iter().filter(|r| r.status.is_failure()).count()
}

fn execute(cli: Cli) -> cellfree::Result<usize> {
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let mut cfg = if config.as_os_str() == "-" {
                ExperimentConfig::default()
            } else {
                ExperimentConfig::load(&config)?
            };
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            emit(&report, &out)?;
            print_summaries(&summarize(&report.records));
            println!("wrote {}", out.display());
            Ok(report.failures())
        }
        Command::Summarize { records, out } => {
            let rs = read_records(&records_path(&records))?;
            let summaries = summarize(&rs);
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_cdf(&out.join("cdf.csv"), &summaries)?;
            write_summary(&out.join("summary.csv"), &summaries)?;
            print_summaries(&summaries);
            Ok(failures(&rs))
        }
        Command::Compare { a, b, out } => {
            let ra = read_records(&records_path(&a))?;
            let rb = read_records(&records_path(&b))?;
            let rows = compare(&ra, &rb);
            println!(
                "{:<14} {:<5} {:>12} {:>12} {:>9} {:>12} {:>12} {:>9}",
                "method", "prec", "total_A", "total_B", "saving", "tx_A", "tx_B", "saving"
            );
            for r in &rows {
                println!(
                    "{:<14} {:<5} {:>12.4} {:>12.4} {:>8.2}% {:>12.5} {:>12.5} {:>8.2}%",
                    r.method.name(),
                    r.precoder.name(),
                    r.total_a,
                    r.total_b,
                    100.0 * r.total_saving(),
                    r.transmit_a,
                    r.transmit_b,
                    100.0 * r.transmit_saving()
                );
            }
            if let Some(path) = out {
                write_compare(&path, &rows)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} method run(s) failed; see the status column");
            ExitCode::from(3)
        }
        Err(
            e @ (Error::Config(_) | Error::InvalidParameter(_) | Error::PrecodingScheme { .. }),
        ) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
