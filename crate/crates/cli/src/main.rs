use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gprl::harness::{self, ExperimentConfig};
use gprl::solver::{SweepParam, Variant};
use gprl::Error;

#[derive(Parser)]
#[command(
    name = "gprl",
    version,
    about = "Latent-search super-resolution with a style-based generator prior"
)]
struct Cli {
    #[command(subcommand)]
    group: Group,
}

#[derive(Subcommand)]
enum Group {
    /// Generator weights.
    Gen {
        #[command(subcommand)]
        cmd: GenCmd,
    },
    /// Style-space flow.
    Flow {
        #[command(subcommand)]
        cmd: FlowCmd,
    },
    /// Super-resolution experiments.
    Sr {
        #[command(subcommand)]
        cmd: SrCmd,
    },
    /// Diagnostics.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    /// Write seeded random generator weights.
    Init(Common),
    /// Train the generator as an autoencoder decoder on blob images.
    Train(Common),
}

#[derive(Subcommand)]
enum FlowCmd {
    /// Fit the flow to style vectors of the saved generator.
    Train(Common),
    /// Squared-norm gaussianization check of the saved flow.
    Check(Common),
}

#[derive(Subcommand)]
enum SrCmd {
    /// Solve every target with one variant.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "rls_plus")]
        variant: String,
    },
    /// Anchor search over a grid of one prior weight.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `lambda_w` or `lambda_g`.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated ascending values.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Reference methods and all ablation variants.
    Ablate(Common),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Both stages under each corruption of the robustness suite.
    Robustness(Common),
    /// Alias of `flow check`.
    Gaussianization(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (`key=value`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run: Option<String>,
}

impl Common {
    fn load(&self, default_run: &str) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => {
                let mut c = ExperimentConfig::default();
                c.run = default_run.into();
                c
            }
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        for (k, v) in [
            ("factor", self.factor.map(|v| v.to_string())),
            ("images", self.images.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("run", self.run.clone()),
        ] {
            if let Some(v) = v {
                pairs.push((k.into(), v));
            }
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn models(
    cfg: &ExperimentConfig,
) -> Result<(gprl::generator::GeneratorBundle, gprl::flow::FlowModel), Error> {
    let root = harness::output_root(cfg);
    Ok((harness::load_generator(&root)?, harness::load_flow(&root)?))
}

fn gen(cfg: &ExperimentConfig) -> Result<(), Error> {
    let (g, report) = harness::build_generator(cfg)?;
    if let Some(r) = report {
        println!("decoder mse {:.6} -> {:.6}", r.initial_mse, r.final_mse);
    }
    let path = harness::save_generator(&g, &harness::output_root(cfg))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gaussianization(cfg: &ExperimentConfig) -> Result<(), Error> {
    let (g, f) = models(cfg)?;
    let dir = harness::prepare_run(cfg, "flow check")?;
    let r = harness::check_flow(cfg, &g, &f)?;
    let text = harness::format_gaussianization(&r);
    std::fs::write(dir.join("gaussianization.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn report_csv(dir: &std::path::Path, rows: usize) {
    println!("wrote {rows} rows to {}", dir.join("metrics.csv").display());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.group {
        Group::Gen { cmd } => match cmd {
            GenCmd::Init(c) => {
                let mut cfg = c.load("gen")?;
                cfg.set("generator.mode", "fixed")?;
                gen(&cfg)
            }
            GenCmd::Train(c) => {
                let mut cfg = c.load("gen")?;
                cfg.set("generator.mode", "trained")?;
                gen(&cfg)
            }
        },
        Group::Flow { cmd } => match cmd {
            FlowCmd::Train(c) => {
                let cfg = c.load("flow")?;
                let root = harness::output_root(&cfg);
                let g = harness::load_generator(&root)?;
                let (f, r) = harness::fit_flow(&cfg, &g)?;
                println!(
                    "holdout log-likelihood {:.4} -> {:.4}",
                    r.initial_holdout_ll, r.final_holdout_ll
                );
                let path = harness::save_flow(&f, &root)?;
                println!("wrote {}", path.display());
                Ok(())
            }
            FlowCmd::Check(c) => gaussianization(&c.load("gaussianization")?),
        },
        Group::Sr { cmd } => match cmd {
            SrCmd::Run { common, variant } => {
                let cfg = common.load("sr")?;
                let variant: Variant = variant.parse()?;
                let (g, f) = models(&cfg)?;
                let out = harness::sr_run(&cfg, &g, &f, variant)?;
                report_csv(&out.dir, out.records.len());
                Ok(())
            }
            SrCmd::Sweep {
                common,
                param,
                grid,
            } => {
                let mut cfg = common.load("sweep")?;
                if let Some(p) = param {
                    cfg.sweep.param = p.parse::<SweepParam>()?;
                }
                if let Some(g) = grid {
                    cfg.set("sweep.grid", &g)?;
                }
                cfg.validate()?;
                let (g, f) = models(&cfg)?;
                let out = harness::sr_sweep(&cfg, &g, &f)?;
                report_csv(&out.dir, out.records.len());
                Ok(())
            }
            SrCmd::Ablate(c) => {
                let cfg = c.load("ablate")?;
                let (g, f) = models(&cfg)?;
                let out = harness::sr_ablate(&cfg, &g, &f)?;
                report_csv(&out.dir, out.records.len());
                Ok(())
            }
        },
        Group::Eval { cmd } => match cmd {
            EvalCmd::Robustness(c) => {
                let cfg = c.load("robustness")?;
                let (g, f) = models(&cfg)?;
                let out = harness::eval_robustness(&cfg, &g, &f)?;
                report_csv(&out.dir, out.records.len());
                Ok(())
            }
            EvalCmd::Gaussianization(c) => gaussianization(&c.load("gaussianization")?),
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged { trace, .. } = &e {
                eprintln!("loss trace: {trace:?}");
            }
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
