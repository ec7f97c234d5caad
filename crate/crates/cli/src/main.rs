//! Command-line front end.
//!
//! ```text
//! spde <simulate|expand|converge|resolvent-check|functional|musiela> [flags]
//! spde report --out DIR
//! spde <any> --print-defaults
//! ```
//!
//! Flags: `--config PATH`, `--seed N`, `--paths N`, `--out DIR`,
//! `--eps-list a,b,c`, `--m N`, `--threads N`. `SPDE_THREADS` caps the
//! worker pool. Exit codes: 0 pass, 2 invariant failure, 3 configuration
//! error, 4 numeric blow-up.

use spde_cli::config::{ExperimentConfig, ExperimentKind};
use spde_cli::run::{recompute_payload_hash, run, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

fn usage() -> String {
    "usage: spde <simulate|expand|converge|resolvent-check|functional|musiela|report> \
     [--config PATH] [--seed N] [--paths N] [--out DIR] [--eps-list a,b,c] [--m N] \
     [--threads N] [--print-defaults]"
        .to_string()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--print-defaults") {
        print!("{}", ExperimentConfig::print_defaults());
        return ExitCode::SUCCESS;
    }
    let Some(sub) = args.first() else {
        eprintln!("{}", usage());
        return ExitCode::from(3);
    };

    // Flag parsing: every flag takes one value.
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let Some(value) = it.next() else {
            eprintln!("flag {flag} expects a value\n{}", usage());
            return ExitCode::from(3);
        };
        flags.push((flag.clone(), value.clone()));
    }

    if sub == "report" {
        let dir = flags
            .iter()
            .find(|(f, _)| f == "--out")
            .map(|(_, v)| PathBuf::from(v))
            .unwrap_or_else(|| PathBuf::from("out"));
        return report(&dir);
    }

    let Some(kind) = ExperimentKind::parse(sub) else {
        eprintln!("unknown subcommand `{sub}`\n{}", usage());
        return ExitCode::from(3);
    };

    let mut cfg = ExperimentConfig::defaults(kind);
    let mut flag_errors = Vec::new();
    for (flag, value) in &flags {
        let result = match flag.as_str() {
            "--config" => match std::fs::read_to_string(value) {
                Ok(text) => match ExperimentConfig::parse(&text, kind) {
                    Ok(parsed) => {
                        cfg = parsed;
                        cfg.experiment = kind;
                        Ok(())
                    }
                    Err(errs) => {
                        flag_errors.extend(errs);
                        Ok(())
                    }
                },
                Err(e) => Err(format!("cannot read config {value}: {e}")),
            },
            "--seed" => cfg.apply("mc.seed", value),
            "--paths" => cfg.apply("mc.paths", value),
            "--out" => cfg.apply("output.dir", value),
            "--eps-list" => cfg.apply("eps.list", value),
            "--m" => cfg.apply("expansion.m", value),
            "--threads" => cfg.apply("threads", value),
            other => Err(format!("unknown flag `{other}`")),
        };
        if let Err(e) = result {
            flag_errors.push(e);
        }
    }
    flag_errors.extend(cfg.validation_errors());
    if !flag_errors.is_empty() {
        eprintln!("configuration errors:");
        for e in &flag_errors {
            eprintln!("  - {e}");
        }
        return ExitCode::from(3);
    }

    match run(&cfg) {
        Ok(rep) => {
            for check in &rep.checks {
                println!(
                    "{} {} (value {:.6e}; {})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.value,
                    check.constraint
                );
            }
            println!(
                "artifacts in {} (payload sha256 {})",
                cfg.out_dir.display(),
                rep.payload_sha256.as_deref().unwrap_or("-")
            );
            if rep.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            match &e {
                RunError::Config(errs) => {
                    eprintln!("configuration errors:");
                    for err in errs {
                        eprintln!("  - {err}");
                    }
                }
                RunError::Numeric(m) => eprintln!("numeric blow-up: {m}"),
                RunError::Invariant(m) => eprintln!("invariant failure: {m}"),
                RunError::Io(m) => eprintln!("io failure: {m}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(dir: &std::path::Path) -> ExitCode {
    let summary_path = dir.join("run_summary.json");
    let text = match std::fs::read_to_string(&summary_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", summary_path.display());
            return ExitCode::from(3);
        }
    };
    println!("{text}");
    let stored = std::fs::read_to_string(dir.join("payload.sha256"))
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    match recompute_payload_hash(dir) {
        Ok(recomputed) if recomputed == stored => {
            println!("payload hash verified: {recomputed}");
            if let Err(e) = spde_cli::plot::emit_plot_script(dir) {
                eprintln!("note: no plot script generated: {e:?}");
            }
            ExitCode::SUCCESS
        }
        Ok(recomputed) => {
            eprintln!("payload hash mismatch: stored {stored}, recomputed {recomputed}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("cannot rehash payload: {e:?}");
            ExitCode::from(2)
        }
    }
}
