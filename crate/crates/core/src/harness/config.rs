use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::degrade::Corruption;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTraining};
use crate::generator::{DecoderTraining, GeneratorConfig};
use crate::objective::Reduction;
use crate::parallel::Execution;
use crate::solver::{BallMode, Init, SolverConfig, SweepParam};

/// How the generator weights are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeneratorMode {
    /// Seeded random weights; the domain is the generator's range.
    #[default]
    Fixed,
    /// Decoder of an autoencoder trained on blob images.
    Trained,
}

/// Where super-resolution targets come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetKind {
    /// `G_s(broadcast(G_m(z)))` for seeded `z`.
    #[default]
    Generated,
    /// Generated images with one seeded square patch brightened or darkened.
    Perturbed,
    /// Procedural blob images.
    Blobs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    /// Patch side as a fraction of the image side.
    pub size: f64,
    pub amplitude: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            size: 0.25,
            amplitude: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            param: SweepParam::LambdaG,
            grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        }
    }
}

/// Everything a run needs; one master seed drives every stochastic step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run: String,
    pub out: PathBuf,
    pub seed: u64,
    pub exec: Execution,
    pub images: usize,
    pub factor: usize,
    pub targets: TargetKind,
    pub corruption: Corruption,
    pub perturbation: Perturbation,
    pub mode: GeneratorMode,
    pub generator: GeneratorConfig,
    pub decoder: DecoderTraining,
    pub decoder_images: usize,
    pub flow: FlowConfig,
    pub flow_training: FlowTraining,
    pub flow_samples: usize,
    pub gaussianization_samples: usize,
    pub solver: SolverConfig,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: "run".into(),
            out: PathBuf::from("out"),
            seed: 0,
            exec: Execution::Parallel,
            images: 20,
            factor: 8,
            targets: TargetKind::Generated,
            corruption: Corruption::None,
            perturbation: Perturbation::default(),
            mode: GeneratorMode::Fixed,
            generator: GeneratorConfig::default(),
            decoder: DecoderTraining::default(),
            decoder_images: 2000,
            flow: FlowConfig::default(),
            flow_training: FlowTraining::default(),
            flow_samples: 50_000,
            gaussianization_samples: 5000,
            solver: SolverConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn show_f(v: f64) -> String {
    // `{:?}` keeps enough digits to round-trip.
    format!("{v:?}")
}

impl ExperimentConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are
    /// errors, missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.solver;
        match key {
            "run" => {
                if v.is_empty()
                    || v.contains(['/', '\\', ','])
                    || v.chars().any(char::is_whitespace)
                {
                    return Err(Error::Config(format!("bad run name `{v}`")));
                }
                self.run = v.to_string()
            }
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "exec" => {
                self.exec = match v {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(Error::Config(format!("bad exec `{v}`"))),
                }
            }
            "images" => self.images = parse(key, v)?,
            "factor" => self.factor = parse(key, v)?,
            "targets" => {
                self.targets = match v {
                    "generated" => TargetKind::Generated,
                    "perturbed" => TargetKind::Perturbed,
                    "blobs" => TargetKind::Blobs,
                    _ => return Err(Error::Config(format!("bad targets `{v}`"))),
                }
            }
            "corruption" => self.corruption = v.parse()?,
            "perturb.size" => self.perturbation.size = parse(key, v)?,
            "perturb.amplitude" => self.perturbation.amplitude = parse(key, v)?,
            "generator.mode" => {
                self.mode = match v {
                    "fixed" => GeneratorMode::Fixed,
                    "trained" => GeneratorMode::Trained,
                    _ => return Err(Error::Config(format!("bad generator mode `{v}`"))),
                }
            }
            "generator.latent_dim" => self.generator.latent_dim = parse(key, v)?,
            "generator.layers" => self.generator.layers = parse(key, v)?,
            "generator.channels" => self.generator.channels = parse(key, v)?,
            "generator.mapping_hidden" => self.generator.mapping_hidden = parse(key, v)?,
            "decoder.images" => self.decoder_images = parse(key, v)?,
            "decoder.epochs" => self.decoder.epochs = parse(key, v)?,
            "decoder.lr" => self.decoder.lr = parse(key, v)?,
            "decoder.batch" => self.decoder.batch = parse(key, v)?,
            "flow.blocks" => self.flow.blocks = parse(key, v)?,
            "flow.hidden" => self.flow.hidden = parse(key, v)?,
            "flow.epochs" => self.flow_training.epochs = parse(key, v)?,
            "flow.lr" => self.flow_training.lr = parse(key, v)?,
            "flow.batch" => self.flow_training.batch = parse(key, v)?,
            "flow.holdout" => self.flow_training.holdout_fraction = parse(key, v)?,
            "flow.samples" => self.flow_samples = parse(key, v)?,
            "gaussianization.samples" => self.gaussianization_samples = parse(key, v)?,
            "solver.lambda_w" => s.weights.lambda_w = parse(key, v)?,
            "solver.lambda_g" => s.weights.lambda_g = parse(key, v)?,
            "solver.lambda_c" => s.weights.lambda_c = parse(key, v)?,
            "solver.reduction" => {
                s.reduction = match v {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(Error::Config(format!("bad reduction `{v}`"))),
                }
            }
            "solver.init" => {
                s.init = match v {
                    "mean" => Init::MeanLatent,
                    "random" => Init::RandomDraw,
                    _ => return Err(Error::Config(format!("bad init `{v}`"))),
                }
            }
            "solver.rls.iterations" => s.rls.iterations = parse(key, v)?,
            "solver.rls.lr" => s.rls.lr = parse(key, v)?,
            "solver.rls.init_samples" => s.rls.init_samples = parse(key, v)?,
            "solver.rlsplus.iterations" => s.rlsplus.iterations = parse(key, v)?,
            "solver.rlsplus.latent_lr" => s.rlsplus.latent_lr = parse(key, v)?,
            "solver.rlsplus.param_lr" => s.rlsplus.param_lr = parse(key, v)?,
            "solver.rlsplus.radius" => s.rlsplus.radius = parse_auto(key, v)?,
            "solver.rlsplus.trainable_layers" => s.rlsplus.trainable_layers = parse_auto(key, v)?,
            "solver.rlsplus.patience" => s.rlsplus.patience = parse(key, v)?,
            "solver.rlsplus.ball" => {
                s.rlsplus.ball = match v {
                    "per_row" => BallMode::PerRow,
                    "flattened" => BallMode::Flattened,
                    _ => return Err(Error::Config(format!("bad ball mode `{v}`"))),
                }
            }
            "ablation.no_regu" => s.ablation.no_regu = parse_bool(key, v)?,
            "ablation.no_cross" => s.ablation.no_cross = parse_bool(key, v)?,
            "ablation.w_space" => s.ablation.w_space = parse_bool(key, v)?,
            "ablation.no_anchor" => s.ablation.no_anchor = parse_bool(key, v)?,
            "ablation.no_noise" => s.ablation.no_noise = parse_bool(key, v)?,
            "ablation.no_g" => s.ablation.no_g = parse_bool(key, v)?,
            "ablation.no_w" => s.ablation.no_w = parse_bool(key, v)?,
            "ablation.no_l1_ball" => s.ablation.no_l1_ball = parse_bool(key, v)?,
            "sweep.param" => self.sweep.param = v.parse()?,
            "sweep.grid" => {
                self.sweep.grid = v
                    .split(',')
                    .map(|x| parse(key, x.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        self.sync_seeds();
        Ok(())
    }

    /// Every key with its current value, in a fixed order; feeding the lines
    /// back through [`ExperimentConfig::parse`] reproduces `self`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.solver;
        let a = s.ablation;
        vec![
            ("run", self.run.clone()),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            (
                "exec",
                match self.exec {
                    Execution::Parallel => "parallel",
                    Execution::Sequential => "sequential",
                }
                .into(),
            ),
            ("images", self.images.to_string()),
            ("factor", self.factor.to_string()),
            (
                "targets",
                match self.targets {
                    TargetKind::Generated => "generated",
                    TargetKind::Perturbed => "perturbed",
                    TargetKind::Blobs => "blobs",
                }
                .into(),
            ),
            ("corruption", self.corruption.to_string()),
            ("perturb.size", show_f(self.perturbation.size)),
            ("perturb.amplitude", show_f(self.perturbation.amplitude)),
            (
                "generator.mode",
                match self.mode {
                    GeneratorMode::Fixed => "fixed",
                    GeneratorMode::Trained => "trained",
                }
                .into(),
            ),
            (
                "generator.latent_dim",
                self.generator.latent_dim.to_string(),
            ),
            ("generator.layers", self.generator.layers.to_string()),
            ("generator.channels", self.generator.channels.to_string()),
            (
                "generator.mapping_hidden",
                self.generator.mapping_hidden.to_string(),
            ),
            ("decoder.images", self.decoder_images.to_string()),
            ("decoder.epochs", self.decoder.epochs.to_string()),
            ("decoder.lr", show_f(self.decoder.lr)),
            ("decoder.batch", self.decoder.batch.to_string()),
            ("flow.blocks", self.flow.blocks.to_string()),
            ("flow.hidden", self.flow.hidden.to_string()),
            ("flow.epochs", self.flow_training.epochs.to_string()),
            ("flow.lr", show_f(self.flow_training.lr)),
            ("flow.batch", self.flow_training.batch.to_string()),
            ("flow.holdout", show_f(self.flow_training.holdout_fraction)),
            ("flow.samples", self.flow_samples.to_string()),
            (
                "gaussianization.samples",
                self.gaussianization_samples.to_string(),
            ),
            ("solver.lambda_w", show_f(s.weights.lambda_w)),
            ("solver.lambda_g", show_f(s.weights.lambda_g)),
            ("solver.lambda_c", show_f(s.weights.lambda_c)),
            (
                "solver.reduction",
                match s.reduction {
                    Reduction::Mean => "mean",
                    Reduction::Sum => "sum",
                }
                .into(),
            ),
            (
                "solver.init",
                match s.init {
                    Init::MeanLatent => "mean",
                    Init::RandomDraw => "random",
                }
                .into(),
            ),
            ("solver.rls.iterations", s.rls.iterations.to_string()),
            ("solver.rls.lr", show_f(s.rls.lr)),
            ("solver.rls.init_samples", s.rls.init_samples.to_string()),
            (
                "solver.rlsplus.iterations",
                s.rlsplus.iterations.to_string(),
            ),
            ("solver.rlsplus.latent_lr", show_f(s.rlsplus.latent_lr)),
            ("solver.rlsplus.param_lr", show_f(s.rlsplus.param_lr)),
            (
                "solver.rlsplus.radius",
                show_auto(&s.rlsplus.radius.map(show_f)),
            ),
            (
                "solver.rlsplus.trainable_layers",
                show_auto(&s.rlsplus.trainable_layers),
            ),
            ("solver.rlsplus.patience", s.rlsplus.patience.to_string()),
            (
                "solver.rlsplus.ball",
                match s.rlsplus.ball {
                    BallMode::PerRow => "per_row",
                    BallMode::Flattened => "flattened",
                }
                .into(),
            ),
            ("ablation.no_regu", a.no_regu.to_string()),
            ("ablation.no_cross", a.no_cross.to_string()),
            ("ablation.w_space", a.w_space.to_string()),
            ("ablation.no_anchor", a.no_anchor.to_string()),
            ("ablation.no_noise", a.no_noise.to_string()),
            ("ablation.no_g", a.no_g.to_string()),
            ("ablation.no_w", a.no_w.to_string()),
            ("ablation.no_l1_ball", a.no_l1_ball.to_string()),
            (
                "sweep.param",
                match self.sweep.param {
                    SweepParam::LambdaW => "lambda_w",
                    SweepParam::LambdaG => "lambda_g",
                }
                .into(),
            ),
            (
                "sweep.grid",
                self.sweep
                    .grid
                    .iter()
                    .map(|&v| show_f(v))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Copy the master seed into every component.
    fn sync_seeds(&mut self) {
        self.generator.seed = self.seed;
        self.decoder.seed = self.seed;
        self.flow.seed = self.seed;
        self.solver.seed = self.seed;
        self.flow.latent_dim = self.generator.latent_dim;
        self.decoder.exec = self.exec;
        self.flow_training.exec = self.exec;
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        if g.latent_dim == 0 || g.layers == 0 || g.channels == 0 || g.mapping_hidden == 0 {
            return Err(Error::Config(
                "generator dimensions must be positive".into(),
            ));
        }
        let side = 4usize << g.layers;
        if self.factor == 0 || !self.factor.is_power_of_two() || self.factor > side {
            return Err(Error::Config(format!(
                "factor {} must be a power of two no larger than the image side {side}",
                self.factor
            )));
        }
        if self.images == 0 {
            return Err(Error::Config("images must be at least 1".into()));
        }
        if !(self.perturbation.size > 0.0 && self.perturbation.size <= 1.0) {
            return Err(Error::Config("perturb.size must lie in (0, 1]".into()));
        }
        if self.sweep.grid.is_empty() {
            return Err(Error::Config("sweep.grid must not be empty".into()));
        }
        self.solver.validate()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse("# nothing\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn defaults_mirror_reference_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.solver.weights.lambda_w, 2e-4);
        assert_eq!(c.solver.weights.lambda_g, 4e-4);
        assert_eq!(c.solver.weights.lambda_c, 0.05);
        assert_eq!(c.solver.rls.iterations, 200);
        // Desk step size; the reference 0.5 overshoots at this latent scale.
        assert_eq!(c.solver.rls.lr, 0.1);
        assert_eq!(c.solver.rlsplus.iterations, 50);
        assert_eq!(c.solver.rlsplus.param_lr, 1e-4);
        assert_eq!(c.flow.blocks, 3);
        assert_eq!(c.flow.hidden, 64);
        assert_eq!(c.flow_training.epochs, 50);
        let mut reference = c.clone();
        reference.set("solver.rls.lr", "0.5").unwrap();
        assert_eq!(reference.solver.rls.lr, 0.5);
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = ExperimentConfig::parse(
            "seed = 7  # master\nfactor=4\ncorruption = sp:0.05\nsolver.rlsplus.radius = 2.5\n\
             ablation.no_w = true\nsweep.grid = 0, 1e-3 ,0.1\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.solver.seed, 7);
        assert_eq!(c.generator.seed, 7);
        assert_eq!(c.factor, 4);
        assert_eq!(c.corruption, Corruption::SaltPepper(0.05));
        assert_eq!(c.solver.rlsplus.radius, Some(2.5));
        assert!(c.solver.ablation.no_w);
        assert_eq!(c.sweep.grid, vec![0.0, 1e-3, 0.1]);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nope = 1",
            "seed = x",
            "factor = 3",
            "factor = 64",
            "just words",
            "ablation.no_g = maybe",
            "solver.lambda_w = -1",
            "run = a/b",
        ] {
            let e = ExperimentConfig::parse(bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}: {e}");
        }
        let e = ExperimentConfig::parse("seed = 1\nbogus = 2").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn text_round_trips() {
        let mut c = ExperimentConfig::default();
        for (k, v) in [
            ("seed", "99"),
            ("corruption", "motion:100"),
            ("solver.lambda_g", "0.123456789012"),
            ("solver.rlsplus.trainable_layers", "2"),
            ("solver.rlsplus.ball", "flattened"),
            ("generator.mode", "trained"),
            ("targets", "perturbed"),
            ("exec", "sequential"),
        ] {
            c.set(k, v).unwrap();
        }
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&d.to_text()).unwrap(), d);
    }
}
