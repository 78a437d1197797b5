use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nnlab::harness::config::parse_shape;
use nnlab::harness::corpus::{describe, Sample};
use nnlab::harness::report::Status;
use nnlab::harness::{emit_tables, generate_corpus, run_experiment, CorpusKind, CorpusOptions, ExperimentKind, ExperimentSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nnlab", version, about = "Batch experiments for smoothing operators, dbar homotopies and the KAM iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its bundle. Exit status 0 iff no criterion failed.
    Run {
        /// Experiment name; may instead come from `--spec`.
        experiment: Option<String>,
        /// Config file of `key = value` lines under `[section]` headers.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bundle directory [default: bundles/<experiment>-<seed>]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid shape such as 16x16x16x16 or 4096.
        #[arg(long)]
        grid: Option<String>,
        /// Iteration cap for kam-run.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// List experiments and the criteria they decide.
    List,
    /// Generate a corpus and print one line per item.
    Corpus {
        /// weierstrass, bandlimited, diffeo or acs
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points of the 1-D grid (scalar kinds) or per axis (maps, structures).
        #[arg(long)]
        grid: Option<usize>,
        /// Largest amplitude of maps and structures.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Also write every item as a binary field file into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_spec(
    experiment: Option<String>,
    spec: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    grid: Option<String>,
    max_steps: Option<usize>,
) -> Result<ExperimentSpec> {
    let mut s = match (&spec, &experiment) {
        (Some(path), _) => ExperimentSpec::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(name)) => ExperimentSpec::new(ExperimentKind::from_name(name)?, 0),
        (None, None) => bail!("name an experiment or pass --spec; see `nnlab list`"),
    };
    if let Some(name) = experiment {
        let kind = ExperimentKind::from_name(&name)?;
        if spec.is_some() && kind != s.kind {
            bail!("--spec names {} but the command line names {name}", s.kind.name());
        }
        s.kind = kind;
    }
    if let Some(v) = seed {
        s.seed = v;
    }
    if let Some(v) = out {
        s.out = Some(v);
    }
    if let Some(g) = grid {
        s.grid = Some(parse_shape(&g)?);
    }
    if let Some(k) = max_steps {
        s.max_steps = Some(k);
    }
    Ok(s)
}

fn run(spec: ExperimentSpec) -> Result<u8> {
    let out = spec.out.clone().unwrap_or_else(|| PathBuf::from(format!("bundles/{}-{}", spec.kind.name(), spec.seed)));
    let bundle = run_experiment(&spec)?;
    let code = emit_tables(&bundle, &out)?;
    for (id, v) in bundle.ledger.iter().filter(|(_, v)| v.status != Status::NotRun) {
        println!("criterion {id}: {} {}", v.status.label(), v.detail);
    }
    println!("bundle written to {}", out.display());
    Ok(code as u8)
}

fn list() {
    for k in ExperimentKind::ALL {
        let ids: Vec<String> = k.criteria().iter().map(|c| c.to_string()).collect();
        println!("{:<16} criteria {:<9} {}", k.name(), ids.join(","), k.summary());
    }
}

fn corpus(kind: &str, seed: u64, grid: Option<usize>, amplitude: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let kind = CorpusKind::from_name(kind)?;
    let mut o = CorpusOptions::default();
    if let Some(n) = grid {
        match kind {
            CorpusKind::Weierstrass | CorpusKind::Bandlimited => o.points = n,
            CorpusKind::Diffeo => o.map_grid = n,
            CorpusKind::Acs => o.acs_grid = n,
        }
    }
    if let Some(a) = amplitude {
        o.amplitude = a;
    }
    let items = generate_corpus(seed, kind, &o)?;
    print!("{}", describe(&items));
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        for it in &items {
            match &it.sample {
                Sample::Field(f) => f.save(&dir.join(format!("{}.bin", it.name)))?,
                Sample::Map(m) => {
                    for (a, f) in m.iter().enumerate() {
                        f.save(&dir.join(format!("{}_{a}.bin", it.name)))?;
                    }
                }
                Sample::Structure(x) => x.save(&dir.join(&it.name))?,
            }
        }
        std::fs::write(dir.join("manifest.txt"), describe(&items))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { experiment, spec, seed, out, grid, max_steps } => build_spec(experiment, spec, seed, out, grid, max_steps).and_then(run),
        Command::List => {
            list();
            Ok(0)
        }
        Command::Corpus { kind, seed, grid, amplitude, out } => corpus(&kind, seed, grid, amplitude, out).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
