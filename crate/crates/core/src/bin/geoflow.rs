use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geoflow::blocks::{read_model, Network};
use geoflow::experiments::{
    accuracy_curve, certify_planar, planar_dataset, run_experiment, selftest, sweep, write_table, Experiment,
    ExperimentConfig, Metrics,
};
use geoflow::{Error, Result};

#[derive(Parser)]
#[command(name = "geoflow", version, about = "Train and test networks built from structure-preserving flow maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// classify-planar, robust-planar, regression, sir-flowmap or flowmap.
    #[arg(long)]
    experiment: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write history, metrics, model and plot data.
    Train(Common),
    /// Attack a saved planar classifier with L2 PGD at the configured budgets.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Certify a saved planar classifier and attack it inside the certified radii.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Learn a flow map (`flowmap` for x1/x2, or `sir-flowmap`).
    Flowmap(Common),
    /// Repeat an experiment over `seeds` seeds and aggregate.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides the config seed count.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run quick structural checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(common: &Common, default: Experiment, model: Option<&Path>) -> Result<ExperimentConfig> {
    let flag = common.experiment.as_deref().map(Experiment::parse).transpose()?;
    // A model directory carries the config that produced it.
    let path = common.config.clone().or_else(|| model.and_then(Path::parent).map(|d| d.join("config.toml")).filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            if let Some(e) = flag {
                table.insert("experiment".into(), toml::Value::String(e.name().into()));
            }
            ExperimentConfig::parse(&toml::to_string(&table).expect("table serializes"), Some(default))?
        }
        None => ExperimentConfig::parse("", Some(flag.unwrap_or(default)))?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

fn print_metrics(m: &Metrics, dir: &Path) {
    for (k, v) in &m.0 {
        println!("{k:<28} {v}");
    }
    println!("artifacts in {}", dir.display());
}

fn load_planar_model(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let net = read_model(&text)?;
    if net.input_dim() != 2 || net.output_dim() != 2 {
        return Err(Error::Incompatible(format!("expected a planar classifier (2 → 2), got {} → {}", net.input_dim(), net.output_dim())));
    }
    Ok(net)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = resolve(&c, Experiment::ClassifyPlanar, None)?;
            let dir = out_dir(&cfg);
            let m = run_experiment(&cfg, &dir)?;
            print_metrics(&m, &dir);
        }
        Command::Flowmap(c) => {
            let cfg = resolve(&c, Experiment::Flowmap, None)?;
            if !matches!(cfg.experiment, Experiment::Flowmap | Experiment::SirFlowmap) {
                return Err(Error::Config(format!("`flowmap` runs flow-map experiments, not {}", cfg.experiment.name())));
            }
            let dir = out_dir(&cfg);
            let m = run_experiment(&cfg, &dir)?;
            print_metrics(&m, &dir);
        }
        Command::Sweep { common, seeds } => {
            let mut cfg = resolve(&common, Experiment::ClassifyPlanar, None)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let dir = out_dir(&cfg);
            let m = sweep(&cfg, &dir)?;
            print_metrics(&m, &dir);
        }
        Command::Attack { common, model } => {
            let cfg = resolve(&common, Experiment::RobustPlanar, Some(&model))?;
            let net = load_planar_model(&model)?;
            let data = planar_dataset(&cfg, cfg.seed)?;
            let curve = accuracy_curve(&cfg, &net, &data)?;
            let dir = common.out.clone().unwrap_or_else(|| model.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            let rows = curve.iter().map(|(e, a)| vec![e.to_string(), a.to_string()]).collect();
            write_table(&dir.join("attack.csv"), &["eps", "accuracy"], rows)?;
            for (e, a) in &curve {
                println!("eps {e:<8} accuracy {a:.4}");
            }
        }
        Command::Certify { common, model } => {
            let cfg = resolve(&common, Experiment::RobustPlanar, Some(&model))?;
            let net = load_planar_model(&model)?;
            let data = planar_dataset(&cfg, cfg.seed)?;
            let report = certify_planar(&cfg, &net, &data)?;
            let dir = common.out.clone().unwrap_or_else(|| model.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            report.save(&dir.join("certification.csv"))?;
            let mean_r = report.rows.iter().map(|r| r.certified_radius).sum::<f64>() / report.rows.len().max(1) as f64;
            println!("lipschitz bound   {}", net.lipschitz_bound());
            println!("certified points  {}/{}", report.certified(), report.rows.len());
            println!("mean radius       {mean_r:.4}");
            println!("violations        0");
        }
        Command::Selftest { seed } => {
            let checks = selftest(seed);
            for c in &checks {
                println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                eprintln!("error: self-test failed");
                std::process::exit(1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors are validation errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => 2,
                Error::Soundness(_) => 3,
                _ => 1,
            })
        }
    }
}
