use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hypolap::pipeline;
use hypolap::{HdmError, Result, RunConfig};

/// Hypoelliptic diffusion maps on the unit tangent bundle of S².
///
/// Every subcommand reads `--config <file>` (flat `key = value` lines) and
/// then applies `--key value` overrides, e.g. `--delta 0.15 --mode empirical`.
#[derive(Parser, Debug)]
#[command(name = "hypolap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample base points and fibre tangents.
    Sample(StageArgs),
    /// Build and α-normalize the block weight matrix.
    Build(StageArgs),
    /// Smallest Laplacian eigenpairs and their clusters.
    Eig(StageArgs),
    /// Diffusion and base embeddings.
    Embed(StageArgs),
    /// Section extraction from the normalized embedding.
    Afap(StageArgs),
    /// Aggregate the run artifacts into report.json.
    Report(StageArgs),
    /// Every stage in order.
    Run(StageArgs),
    /// Print the resolved configuration.
    Config(StageArgs),
}

#[derive(clap::Args, Debug)]
struct StageArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` or `--key=value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| HdmError::InvalidConfig(format!("expected --key, found {arg}")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.replace('-', "_"), v.to_string())),
            None => {
                let value = it
                    .next()
                    .ok_or_else(|| HdmError::InvalidConfig(format!("--{key} needs a value")))?;
                out.push((key.replace('-', "_"), value.clone()));
            }
        }
    }
    Ok(out)
}

fn resolve(args: &StageArgs) -> Result<RunConfig> {
    RunConfig::resolve(args.config.as_deref(), &parse_overrides(&args.overrides)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => {
            let cfg = resolve(&a)?;
            let s = pipeline::cmd_sample(&cfg)?;
            println!("sampled {} bundle points over {} fibres", s.total_size(), s.n_base());
        }
        Command::Build(a) => {
            let meta = pipeline::cmd_build(&resolve(&a)?)?;
            println!("built {}x{} matrix with {} nonzeros", meta.n, meta.n, meta.nnz);
        }
        Command::Eig(a) => {
            let (spec, clusters) = pipeline::cmd_eig(&resolve(&a)?)?;
            println!("eigenvalues: {:?}", spec.eigenvalues);
            println!("cluster multiplicities: {:?}", clusters.multiplicities);
        }
        Command::Embed(a) => {
            let coords = pipeline::cmd_embed(&resolve(&a)?)?;
            println!(
                "embedded {} points in {} coordinates",
                coords.rows.nrows(),
                coords.rows.ncols()
            );
        }
        Command::Afap(a) => {
            let (section, report) = pipeline::cmd_afap(&resolve(&a)?)?;
            println!(
                "section over {} fibres; near-anchor mean angle {:?}",
                section.choices.len(),
                report.mean_angle(|d| d <= 0.3)
            );
        }
        Command::Report(a) => {
            let cfg = resolve(&a)?;
            pipeline::cmd_report(&cfg)?;
            println!("{}", pipeline::RunPaths::new(&cfg.out_dir).report().display());
        }
        Command::Run(a) => {
            let report = pipeline::run_all(&resolve(&a)?)?;
            println!("cluster multiplicities: {:?}", report.clusters.multiplicities);
        }
        Command::Config(a) => print!("{}", resolve(&a)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_accept_both_forms() {
        let got = parse_overrides(&strings(&["--delta", "0.3", "--n-base=40", "--mode", "empirical"])).unwrap();
        assert_eq!(
            got,
            vec![
                ("delta".to_string(), "0.3".to_string()),
                ("n_base".to_string(), "40".to_string()),
                ("mode".to_string(), "empirical".to_string())
            ]
        );
        assert!(parse_overrides(&strings(&["delta", "0.3"])).is_err());
        assert!(parse_overrides(&strings(&["--delta"])).is_err());
    }

    #[test]
    fn negative_values_are_not_flags() {
        let got = parse_overrides(&strings(&["--eps", "-1"])).unwrap();
        assert_eq!(got, vec![("eps".to_string(), "-1".to_string())]);
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from(["hypolap", "eig", "--config", "a.cfg", "--m_eigs", "10"]).unwrap();
        let Command::Eig(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.config, Some(PathBuf::from("a.cfg")));
        assert_eq!(a.overrides, strings(&["--m_eigs", "10"]));
    }
}
