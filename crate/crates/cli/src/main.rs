use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierlab::experiment::{run_experiment, ConfigPatch, Experiment, RhoValues, RunStatus};
use hierlab::report::{emit_report, Format};
use hierlab::sampler::SamplerMethod;
use hierlab::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(
    name = "hierlab",
    version,
    about = "VRJP and H^{2|2} experiments on the hierarchical lattice"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fractional moments of e^u at representative sites, per rho.
    Figure1(RunArgs),
    /// KS test of 1/(2 G(delta, delta)) against Gamma(1/2).
    GammaLaw(RunArgs),
    /// Mean of e^u at random sites, pinned at delta.
    Ward(RunArgs),
    /// Fine block averages vs samples on the coarse graph.
    CoarseCheck(RunArgs),
    /// Fitted decay slope of the fractional moments.
    DecaySlope(RunArgs),
    /// Median escape probability over box levels.
    RecurrenceScan(RunArgs),
    /// Median escape probability at the critical rho with a boundary correction.
    TransienceScan(RunArgs),
    /// Constants, path sums and the recursion check.
    BoundsTable(RunArgs),
    /// Sequential vs Gibbs sampler.
    SamplerCrosscheck(RunArgs),
    /// Runs every acceptance criterion.
    Check {
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One value, or a comma-separated list for series experiments.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    wbar: Option<f64>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// 0 draws a seed from the OS.
    #[arg(long)]
    seed: Option<u64>,
    /// `sequential` or `gibbs`.
    #[arg(long, value_parser = parse_method)]
    method: Option<SamplerMethod>,
    #[arg(long, allow_hyphen_values = true)]
    q_exponent: Option<i32>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, env = "HIERLAB_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv, svg, md.
    #[arg(long, value_delimiter = ',', value_parser = parse_format, default_value = "csv,svg,md")]
    formats: Vec<Format>,
}

fn parse_method(s: &str) -> Result<SamplerMethod, String> {
    match s {
        "sequential" => Ok(SamplerMethod::Sequential),
        "gibbs" => Ok(SamplerMethod::Gibbs),
        _ => Err(format!(
            "unknown method {s:?}; expected sequential or gibbs"
        )),
    }
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "svg" => Ok(Format::Svg),
        "md" => Ok(Format::Md),
        _ => Err(format!("unknown format {s:?}; expected csv, svg or md")),
    }
}

impl RunArgs {
    fn patch(&self) -> Result<ConfigPatch, Error> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                ConfigPatch::from_json(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ConfigPatch::default(),
        };
        let flags = ConfigPatch {
            experiment: None,
            rho: self.rho.clone().map(|v| match v.as_slice() {
                [one] => RhoValues::One(*one),
                _ => RhoValues::Many(v),
            }),
            wbar: self.wbar,
            n: self.n,
            s: self.s,
            replicas: self.replicas,
            seed: self.seed,
            method: self.method,
            q_exponent: self.q_exponent,
            workers: self.workers,
            output_dir: self.out.clone(),
            k: self.k,
        };
        Ok(file.merge(flags))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Csv { .. } => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn run(experiment: Experiment, args: &RunArgs) -> Result<u8, Error> {
    let cfg = args.patch()?.resolve(experiment)?;
    let record = run_experiment(&cfg)?;
    let paths = emit_report(&record, &args.formats, &cfg.output_dir)?;
    for p in &paths {
        println!("{}", p.display());
    }
    match &record.status {
        RunStatus::Complete => Ok(0),
        RunStatus::Failed { message, numerical } => {
            eprintln!("run failed: {message} (partial results written)");
            Ok(if *numerical {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Check { workers } => {
            let results = hierlab::acceptance::run_all(*workers);
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!(
                "{} of {} criteria passed",
                results.len() - failed,
                results.len()
            );
            return ExitCode::from(if failed == 0 { 0 } else { EXIT_ACCEPTANCE });
        }
        Command::Figure1(a) => (Experiment::Figure1, a),
        Command::GammaLaw(a) => (Experiment::GammaLaw, a),
        Command::Ward(a) => (Experiment::Ward, a),
        Command::CoarseCheck(a) => (Experiment::CoarseCheck, a),
        Command::DecaySlope(a) => (Experiment::DecaySlope, a),
        Command::RecurrenceScan(a) => (Experiment::RecurrenceScan, a),
        Command::TransienceScan(a) => (Experiment::TransienceScan, a),
        Command::BoundsTable(a) => (Experiment::BoundsTable, a),
        Command::SamplerCrosscheck(a) => (Experiment::SamplerCrosscheck, a),
    };
    match run(experiment, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(line: &[&str]) -> (Experiment, RunArgs) {
        let cli =
            Cli::try_parse_from(std::iter::once("hierlab").chain(line.iter().copied())).unwrap();
        match cli.command {
            Command::GammaLaw(a) => (Experiment::GammaLaw, a),
            Command::Figure1(a) => (Experiment::Figure1, a),
            Command::BoundsTable(a) => (Experiment::BoundsTable, a),
            _ => panic!("unexpected subcommand"),
        }
    }

    fn tmp(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("hierlab-cli-{name}-{}", std::process::id()))
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tmp("override");
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("c.json");
        std::fs::write(&cfg, r#"{"replicas": 16, "n": 3, "seed": 4}"#).unwrap();
        let out = dir.join("out");
        let (e, a) = args(&[
            "gamma-law",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        let resolved = a.patch().unwrap().resolve(e).unwrap();
        assert_eq!((resolved.replicas, resolved.n, resolved.seed), (16, 3, 9));
        assert_eq!(run(e, &a).unwrap(), 0);
        for f in ["gamma_law.record.json", "gamma_law.csv", "gamma_law.md"] {
            assert!(out.join(f).exists(), "{f}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rho_list_and_formats() {
        let out = tmp("figure1");
        let (e, a) = args(&[
            "figure1",
            "--rho",
            "4,2",
            "--n",
            "3",
            "--replicas",
            "8",
            "--formats",
            "svg",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            a.patch().unwrap().rho,
            Some(RhoValues::Many(vec![4.0, 2.0]))
        );
        assert_eq!(run(e, &a).unwrap(), 0);
        assert!(out.join("figure1.svg").exists());
        assert!(!out.join("figure1.csv").exists());
        std::fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn invalid_values_map_to_validation_exit() {
        for line in [
            &["gamma-law", "--s", "0.5"][..],
            &["gamma-law", "--rho", "0.5"],
            &["gamma-law", "--workers", "0"],
            &["gamma-law", "--rho", "4,2"],
        ] {
            let (e, a) = args(line);
            let err = run(e, &a).unwrap_err();
            assert_eq!(exit_code(&err), EXIT_VALIDATION, "{line:?}: {err}");
        }
        let dir = tmp("badcfg");
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("c.json");
        std::fs::write(&cfg, r#"{"replicas": 16, "unknown": 1}"#).unwrap();
        let (e, a) = args(&["gamma-law", "--config", cfg.to_str().unwrap()]);
        assert_eq!(exit_code(&run(e, &a).unwrap_err()), EXIT_VALIDATION);
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(Cli::try_parse_from(["hierlab", "ward", "--method", "metropolis"]).is_err());
    }

    #[test]
    fn numerical_errors_have_their_own_code() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
        assert_eq!(
            exit_code(&Error::NotPositiveDefinite {
                pivot: 0,
                value: -1.0
            }),
            EXIT_NUMERICAL
        );
    }

    #[test]
    fn bounds_table_without_sampling() {
        let out = tmp("bounds");
        let (e, a) = args(&[
            "bounds-table",
            "--replicas",
            "0",
            "--n",
            "8",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run(e, &a).unwrap(), 0);
        let csv = std::fs::read_to_string(out.join("bounds_table.csv")).unwrap();
        assert!(csv.contains("c_s_pow"));
        std::fs::remove_dir_all(&out).unwrap();
    }
}
