//! Two-stage super-resolution: regularized latent search for an anchor
//! code, then l1-ball-constrained joint refinement of the code, the leading
//! synthesis layers and the noise images.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::degrade::Bicubic;
use crate::error::{Error, Result};
use crate::eval::{lr_consistency, ms_ssim, psnr, ssim, MetricsRecord, SsimParams};
use crate::flow::FlowModel;
use crate::generator::{mean_latent, ExtendedLatent, GeneratorBundle, Image};
use crate::nn::ParamStore;
use crate::objective::{self, data_term_graph, rls_loss_graph, LossParts, PriorWeights, Reduction};
use crate::optim::{pgd_loop, L1Ball, PgdSettings, PgdState, StepGrads, StepRule};
use crate::parallel::{self, Execution};
use crate::seed;
use crate::tensor::{Tape, Tensor};

const MS_SSIM_SCALES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct RlsSettings {
    pub iterations: usize,
    pub lr: f64,
    /// Samples averaged for the mean-latent starting point.
    pub init_samples: usize,
}

impl Default for RlsSettings {
    fn default() -> Self {
        RlsSettings {
            iterations: 200,
            lr: 0.1,
            init_samples: 10_000,
        }
    }
}

/// Shape of the refinement constraint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BallMode {
    /// One ball of radius `r` around every anchor row.
    #[default]
    PerRow,
    /// A single ball of radius `r * sqrt(L)` over the flattened code.
    Flattened,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlsPlusSettings {
    pub iterations: usize,
    pub latent_lr: f64,
    /// Step size for θ and η.
    pub param_lr: f64,
    /// Ball radius; `None` means `sqrt(d)`.
    pub radius: Option<f64>,
    /// Leading synthesis layers that are fine-tuned; `None` means `ceil(L/2)`.
    pub trainable_layers: Option<usize>,
    /// Stop after this many iterations without improvement; 0 runs the
    /// full budget.
    pub patience: usize,
    pub ball: BallMode,
}

impl Default for RlsPlusSettings {
    fn default() -> Self {
        RlsPlusSettings {
            iterations: 50,
            latent_lr: 0.05,
            param_lr: 1e-4,
            radius: None,
            trainable_layers: None,
            patience: 0,
            ball: BallMode::PerRow,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_regu: bool,
    pub no_cross: bool,
    pub w_space: bool,
    pub no_anchor: bool,
    pub no_noise: bool,
    pub no_g: bool,
    pub no_w: bool,
    pub no_l1_ball: bool,
}

/// Starting point of the anchor search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    #[default]
    MeanLatent,
    /// A seeded `G_m(z)` draw per solve, for sampling several solutions.
    RandomDraw,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverConfig {
    pub weights: PriorWeights,
    pub reduction: Reduction,
    pub rls: RlsSettings,
    pub rlsplus: RlsPlusSettings,
    pub ablation: Ablation,
    pub init: Init,
    pub seed: u64,
}

impl SolverConfig {
    /// Prior weights after the `no_regu` and `no_cross` switches.
    pub fn effective_weights(&self) -> PriorWeights {
        if self.ablation.no_regu {
            return PriorWeights::ZERO;
        }
        let mut w = self.weights;
        if self.ablation.no_cross {
            w.lambda_c = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.rls.lr > 0.0) || !(self.rlsplus.latent_lr > 0.0) || !(self.rlsplus.param_lr > 0.0)
        {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.rls.init_samples == 0 {
            return Err(Error::Config("rls init_samples must be at least 1".into()));
        }
        if let Some(r) = self.rlsplus.radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!(
                    "ball radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Anchor,
    Refined,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub stage: Stage,
    /// Centre of the refinement ball (for the anchor stage, the code itself).
    pub anchor: ExtendedLatent,
    pub latent: ExtendedLatent,
    /// Synthesis parameters used for `image`.
    pub theta: ParamStore,
    /// l2 norm of the θ change per synthesis layer.
    pub theta_delta: Vec<f64>,
    pub noise: ParamStore,
    pub image: Image,
    /// Loss before every update.
    pub trace: Vec<f64>,
    /// Mean per-pixel data term at the returned point.
    pub data_term: f64,
    /// Anchor-stage loss parts at the returned point.
    pub parts: Option<LossParts>,
    pub stopped_early: bool,
}

impl SolveResult {
    /// Largest l1 distance of a code row from its anchor row.
    pub fn max_row_deviation(&self) -> f64 {
        (0..self.latent.layers())
            .map(|i| {
                self.latent
                    .row(i)
                    .iter()
                    .zip(self.anchor.row(i))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// A solver bound to one generator and flow; the mean latent is computed
/// once here and shared by every solve.
pub struct Solver<'a> {
    pub generator: &'a GeneratorBundle,
    pub flow: &'a FlowModel,
    pub config: SolverConfig,
    mean: Vec<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(
        generator: &'a GeneratorBundle,
        flow: &'a FlowModel,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        if generator.latent_dim() != flow.latent_dim() {
            return Err(Error::invalid(format!(
                "generator latent dim {} does not match flow dim {}",
                generator.latent_dim(),
                flow.latent_dim()
            )));
        }
        let mean = mean_latent(
            generator,
            config.rls.init_samples,
            seed::derive(config.seed, seed::MEAN_LATENT),
            Execution::Parallel,
        )?;
        Ok(Solver {
            generator,
            flow,
            config,
            mean,
        })
    }

    /// Same generator, flow and mean latent under another configuration.
    /// The mean is reused, so `rls.init_samples` and `seed` keep the values
    /// it was computed with.
    pub fn with_config(&self, config: SolverConfig) -> Result<Solver<'a>> {
        config.validate()?;
        Ok(Solver {
            generator: self.generator,
            flow: self.flow,
            config,
            mean: self.mean.clone(),
        })
    }

    pub fn mean_latent(&self) -> &[f64] {
        &self.mean
    }

    fn degradation(&self, y: &Image) -> Result<Bicubic> {
        let n = self.generator.side();
        if y.side() == 0 || !n.is_multiple_of(y.side()) || y.side() > n {
            return Err(Error::invalid(format!(
                "observation side {} is not a divisor of generator side {n}",
                y.side()
            )));
        }
        Bicubic::new(n, n / y.side())
    }

    fn start_row(&self, job: u64) -> Result<Vec<f64>> {
        match self.config.init {
            Init::MeanLatent => Ok(self.mean.clone()),
            Init::RandomDraw => {
                let s = seed::derive(seed::derive(self.config.seed, seed::SOLVER), job);
                Ok(self
                    .generator
                    .sample_w(1, s, Execution::Sequential)?
                    .into_data())
            }
        }
    }

    fn free_rows(&self) -> usize {
        if self.config.ablation.w_space {
            1
        } else {
            self.generator.layers()
        }
    }

    fn expand(&self, free: &Tensor) -> Result<ExtendedLatent> {
        let l = self.generator.layers();
        if free.shape()[0] == l {
            return ExtendedLatent::new(free.clone());
        }
        Ok(ExtendedLatent::broadcast(free.data(), l))
    }

    /// Anchor search from the mean latent (or a seeded draw for `job`),
    /// with η = 0 and θ fixed.
    pub fn rls(&self, y: &Image, job: u64) -> Result<SolveResult> {
        self.rls_for(y, job, self.config.rls.iterations)
    }

    fn rls_for(&self, y: &Image, job: u64, iterations: usize) -> Result<SolveResult> {
        let g = self.generator;
        let down = self.degradation(y)?;
        let weights = self.config.effective_weights();
        let reduction = self.config.reduction;
        let zero = g.zero_noise();
        let start = self.start_row(job)?;
        let rows = self.free_rows();
        let d = g.latent_dim();
        let init = Tensor::new(vec![rows, d], start.repeat(rows))?;
        let mut state = PgdState {
            latent: init.clone(),
            params: ParamStore::new(),
        };
        let settings = PgdSettings {
            rule: StepRule::Adam,
            iterations,
            latent_lr: self.config.rls.lr,
            param_lr: self.config.rls.lr,
            project: false,
            patience: 0,
            min_delta: 0.0,
        };
        let eval = |latent: &Tensor| -> Result<(LossParts, Tensor)> {
            let tape = Tape::new();
            let syn = g.synthesis.bind_constant(&tape);
            let eta = zero.bind_constant(&tape);
            let fp = self.flow.params.bind_constant(&tape);
            let free = tape.param(latent.clone());
            let wplus = if rows == 1 && g.layers() > 1 {
                free.repeat_rows(g.layers())?
            } else {
                free
            };
            let hr = g.synthesis_graph(&syn, &eta, wplus)?;
            let data = data_term_graph(y, hr, &down, reduction)?;
            let loss = rls_loss_graph(data, self.flow, &fp, wplus, &weights)?;
            tape.backward(loss.total)?;
            let grad = tape
                .grad(free)
                .unwrap_or_else(|| Tensor::zeros(latent.shape().to_vec()));
            Ok((loss.values(), grad))
        };
        let outcome = pgd_loop(&mut state, &[], &settings, |latent, _| {
            let (parts, grad) = eval(latent)?;
            Ok(StepGrads {
                loss: parts.total,
                latent: Some(grad),
                params: BTreeMap::new(),
            })
        })
        .map_err(|e| restage(e, "rls"))?;
        let (parts, _) = eval(&state.latent)?;
        let latent = self.expand(&state.latent)?;
        let image = g.synthesize_with(&latent, &g.synthesis, &zero)?;
        Ok(SolveResult {
            stage: Stage::Anchor,
            anchor: latent.clone(),
            latent,
            theta: g.synthesis.clone(),
            theta_delta: vec![0.0; g.layers()],
            noise: zero,
            image,
            trace: outcome.trace,
            data_term: objective_data_mean(&parts, reduction, y),
            parts: Some(parts),
            stopped_early: false,
        })
    }

    fn balls(&self, center: &Tensor) -> Result<Vec<L1Ball>> {
        let d = self.generator.latent_dim();
        let r = self.config.rlsplus.radius.unwrap_or((d as f64).sqrt());
        match self.config.rlsplus.ball {
            BallMode::PerRow => (0..center.shape()[0])
                .map(|i| L1Ball::new(center.row(i).to_vec(), r))
                .collect(),
            BallMode::Flattened => {
                let rows = center.shape()[0] as f64;
                Ok(vec![L1Ball::new(center.data().to_vec(), r * rows.sqrt())?])
            }
        }
    }

    /// Joint refinement of the code, the leading synthesis layers and η,
    /// starting from (and constrained around) `anchor`.
    pub fn rlsplus(&self, y: &Image, anchor: &SolveResult) -> Result<SolveResult> {
        let g = self.generator;
        let ab = self.config.ablation;
        let set = &self.config.rlsplus;
        let down = self.degradation(y)?;
        let reduction = self.config.reduction;
        let rows = self.free_rows();
        let l = g.layers();
        let center = if rows == 1 {
            Tensor::new(vec![1, g.latent_dim()], anchor.latent.row(0).to_vec())?
        } else {
            anchor.latent.tensor().clone()
        };
        let balls = self.balls(&center)?;
        if balls.iter().enumerate().any(|(i, b)| match set.ball {
            BallMode::PerRow => !b.contains(center.row(i)),
            BallMode::Flattened => !b.contains(center.data()),
        }) {
            return Err(Error::invalid("anchor lies outside its own ball"));
        }

        let k = set.trainable_layers.unwrap_or(l.div_ceil(2)).min(l);
        let trainable: Vec<String> = if ab.no_g {
            Vec::new()
        } else {
            g.leading_layer_params(k)
        };
        let mut params = g.synthesis.clone();
        params.merge_prefixed("", &g.zero_noise())?;
        let train_noise = !ab.no_noise;
        let is_trainable = |name: &str| {
            trainable.iter().any(|t| t == name) || (train_noise && name.starts_with("noise."))
        };

        let mut state = PgdState {
            latent: center.clone(),
            params,
        };
        let settings = PgdSettings {
            rule: StepRule::Adam,
            iterations: set.iterations,
            latent_lr: set.latent_lr,
            param_lr: set.param_lr,
            project: !ab.no_l1_ball,
            patience: set.patience,
            min_delta: 0.0,
        };
        let outcome = pgd_loop(&mut state, &balls, &settings, |latent, params| {
            let tape = Tape::new();
            let p = params.bind(&tape, is_trainable);
            let free = if ab.no_w {
                tape.constant(latent.clone())
            } else {
                tape.param(latent.clone())
            };
            let wplus = if rows == 1 && l > 1 {
                free.repeat_rows(l)?
            } else {
                free
            };
            let hr = g.synthesis_graph(&p, &p, wplus)?;
            let loss = data_term_graph(y, hr, &down, reduction)?;
            tape.backward(loss)?;
            Ok(StepGrads {
                loss: loss.item(),
                latent: if ab.no_w { None } else { tape.grad(free) },
                params: p.grads(),
            })
        })
        .map_err(|e| restage(e, "rlsplus"))?;

        let latent = self.expand(&state.latent)?;
        let theta = state.params.subset("syn.");
        let noise = state.params.subset("noise.");
        let image = g.synthesize_with(&latent, &theta, &noise)?;
        let data_term = lr_consistency(&image, y, down.factor())?;
        let theta_delta = (0..l)
            .map(|i| {
                let prefix = format!("syn.{i}.");
                theta
                    .iter()
                    .filter(|(n, _)| n.starts_with(&prefix))
                    .map(|(n, t)| {
                        let base = g.synthesis.get(n).expect("same names");
                        t.data()
                            .iter()
                            .zip(base.data())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        Ok(SolveResult {
            stage: Stage::Refined,
            anchor: anchor.latent.clone(),
            latent,
            theta,
            theta_delta,
            noise,
            image,
            trace: outcome.trace,
            data_term,
            parts: None,
            stopped_early: outcome.stopped_early,
        })
    }

    /// Both stages. With `no_anchor` the search is skipped and refinement
    /// starts from (and is constrained around) the initial code.
    pub fn solve(&self, y: &Image, job: u64) -> Result<(SolveResult, SolveResult)> {
        let anchor = if self.config.ablation.no_anchor {
            self.rls_for(y, job, 0)?
        } else {
            self.rls(y, job)?
        };
        let refined = self.rlsplus(y, &anchor)?;
        Ok((anchor, refined))
    }

    /// Metrics of `result` against the ground truth `hr` and observation `y`.
    pub fn score(&self, result: &SolveResult, hr: &Image, y: &Image) -> Result<MetricsRecord> {
        score(result, hr, y, self.flow)
    }
}

fn objective_data_mean(parts: &LossParts, reduction: Reduction, y: &Image) -> f64 {
    match reduction {
        Reduction::Mean => parts.data,
        Reduction::Sum => parts.data / y.data().len() as f64,
    }
}

fn restage(e: Error, stage: &'static str) -> Error {
    match e {
        Error::Diverged {
            iteration,
            loss,
            trace,
            ..
        } => Error::Diverged {
            stage,
            iteration,
            loss,
            trace,
        },
        other => other,
    }
}

pub fn score(
    result: &SolveResult,
    hr: &Image,
    y: &Image,
    flow: &FlowModel,
) -> Result<MetricsRecord> {
    let p = SsimParams::default();
    let factor = hr.side() / y.side().max(1);
    let ms = if result.image.side() >= p.window << (MS_SSIM_SCALES - 1) {
        Some(ms_ssim(&result.image, hr, MS_SSIM_SCALES, p)?)
    } else {
        None
    };
    let (z, _) = flow.forward_batch(result.latent.tensor())?;
    let d = flow.latent_dim();
    let rows = result.latent.layers() as f64;
    let norm_stat = z
        .data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / rows;
    Ok(MetricsRecord {
        psnr: psnr(&result.image, hr)?,
        ssim: ssim(&result.image, hr, p)?,
        ms_ssim: ms,
        lr_consistency_l1: lr_consistency(&result.image, y, factor)?,
        density_score: objective::p_w(&result.latent, flow)?,
        norm_stat,
    })
}

pub fn rls_solve(
    y: &Image,
    generator: &GeneratorBundle,
    flow: &FlowModel,
    config: &SolverConfig,
) -> Result<SolveResult> {
    Solver::new(generator, flow, config.clone())?.rls(y, 0)
}

pub fn rlsplus_solve(
    y: &Image,
    generator: &GeneratorBundle,
    flow: &FlowModel,
    anchor: &SolveResult,
    config: &SolverConfig,
) -> Result<SolveResult> {
    Solver::new(generator, flow, config.clone())?.rlsplus(y, anchor)
}

/// Observation and ground truth of one super-resolution problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub hr: Image,
    pub lr: Image,
}

/// Ablation variants; the first four modify the anchor search and are
/// reported after it, the rest modify the refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Rls,
    NoRegu,
    NoCross,
    WSpace,
    RlsPlus,
    NoAnchor,
    NoNoise,
    NoG,
    NoW,
    NoBall,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Rls,
        Variant::NoRegu,
        Variant::NoCross,
        Variant::WSpace,
        Variant::RlsPlus,
        Variant::NoAnchor,
        Variant::NoNoise,
        Variant::NoG,
        Variant::NoW,
        Variant::NoBall,
    ];

    /// The eight ablations, without the two reference methods.
    pub const ABLATIONS: [Variant; 8] = [
        Variant::NoRegu,
        Variant::NoCross,
        Variant::WSpace,
        Variant::NoAnchor,
        Variant::NoNoise,
        Variant::NoG,
        Variant::NoW,
        Variant::NoBall,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Rls => "rls",
            Variant::NoRegu => "wo_regu",
            Variant::NoCross => "wo_p_cross",
            Variant::WSpace => "wo_w_plus",
            Variant::RlsPlus => "rls_plus",
            Variant::NoAnchor => "wo_anchor",
            Variant::NoNoise => "wo_noise",
            Variant::NoG => "wo_g",
            Variant::NoW => "wo_w",
            Variant::NoBall => "wo_l1_ball",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Rls => "RLS",
            Variant::NoRegu => "w/o Regu.",
            Variant::NoCross => "w/o P_cross",
            Variant::WSpace => "w/o W+",
            Variant::RlsPlus => "RLS+",
            Variant::NoAnchor => "w/o anchor",
            Variant::NoNoise => "w/o noise",
            Variant::NoG => "w/o g",
            Variant::NoW => "w/o w",
            Variant::NoBall => "w/o l1-ball",
        }
    }

    /// True when the variant is reported after the refinement stage.
    pub fn refines(self) -> bool {
        self >= Variant::RlsPlus
    }

    pub fn ablation(self) -> Ablation {
        let mut a = Ablation::default();
        match self {
            Variant::Rls | Variant::RlsPlus => {}
            Variant::NoRegu => a.no_regu = true,
            Variant::NoCross => a.no_cross = true,
            Variant::WSpace => a.w_space = true,
            Variant::NoAnchor => a.no_anchor = true,
            Variant::NoNoise => a.no_noise = true,
            Variant::NoG => a.no_g = true,
            Variant::NoW => a.no_w = true,
            Variant::NoBall => a.no_l1_ball = true,
        }
        a
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// One solved (variant, image) job.
#[derive(Clone, Debug, PartialEq)]
pub struct JobOutcome {
    pub variant: Variant,
    pub image_index: usize,
    pub anchor: SolveResult,
    /// Present for refining variants.
    pub refined: Option<SolveResult>,
    pub metrics: MetricsRecord,
}

impl JobOutcome {
    /// The result the metrics describe.
    pub fn reported(&self) -> &SolveResult {
        self.refined.as_ref().unwrap_or(&self.anchor)
    }
}

/// Run `variant` on every target; job `i` uses seed stream `i`.
pub fn run_variant(
    solver: &Solver<'_>,
    variant: Variant,
    targets: &[Target],
    exec: Execution,
) -> Result<Vec<JobOutcome>> {
    let mut config = solver.config.clone();
    let base = config.ablation;
    let extra = variant.ablation();
    config.ablation = Ablation {
        no_regu: base.no_regu || extra.no_regu,
        no_cross: base.no_cross || extra.no_cross,
        w_space: base.w_space || extra.w_space,
        no_anchor: base.no_anchor || extra.no_anchor,
        no_noise: base.no_noise || extra.no_noise,
        no_g: base.no_g || extra.no_g,
        no_w: base.no_w || extra.no_w,
        no_l1_ball: base.no_l1_ball || extra.no_l1_ball,
    };
    let s = solver.with_config(config)?;
    parallel::try_map(exec, targets, |i, t| {
        let (anchor, refined) = if variant.refines() {
            let (a, r) = s.solve(&t.lr, i as u64)?;
            (a, Some(r))
        } else {
            (s.rls(&t.lr, i as u64)?, None)
        };
        let reported = refined.as_ref().unwrap_or(&anchor);
        let metrics = s.score(reported, &t.hr, &t.lr)?;
        Ok(JobOutcome {
            variant,
            image_index: i,
            anchor,
            refined,
            metrics,
        })
    })
}

/// Every variant in [`Variant::ALL`] on every target, ordered by variant then
/// image index.
pub fn ablation_suite(
    solver: &Solver<'_>,
    targets: &[Target],
    exec: Execution,
) -> Result<Vec<JobOutcome>> {
    let jobs: Vec<(Variant, usize)> = Variant::ALL
        .into_iter()
        .flat_map(|v| (0..targets.len()).map(move |i| (v, i)))
        .collect();
    let solvers = Variant::ALL
        .into_iter()
        .map(|v| {
            let mut c = solver.config.clone();
            c.ablation = v.ablation();
            solver.with_config(c)
        })
        .collect::<Result<Vec<_>>>()?;
    parallel::try_map(exec, &jobs, |_, &(variant, i)| {
        let s = &solvers[Variant::ALL
            .iter()
            .position(|&v| v == variant)
            .expect("listed")];
        let t = &targets[i];
        let (anchor, refined) = if variant.refines() {
            let (a, r) = s.solve(&t.lr, i as u64)?;
            (a, Some(r))
        } else {
            (s.rls(&t.lr, i as u64)?, None)
        };
        let metrics = s.score(refined.as_ref().unwrap_or(&anchor), &t.hr, &t.lr)?;
        Ok(JobOutcome {
            variant,
            image_index: i,
            anchor,
            refined,
            metrics,
        })
    })
}

/// Which prior weight a sweep varies; the other two are zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    LambdaW,
    LambdaG,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_w" => Ok(SweepParam::LambdaW),
            "lambda_g" => Ok(SweepParam::LambdaG),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub weights: PriorWeights,
    pub image_index: usize,
    pub metrics: MetricsRecord,
}

/// Anchor search on every target at each grid value.
pub fn sweep(
    solver: &Solver<'_>,
    targets: &[Target],
    param: SweepParam,
    grid: &[f64],
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("sweep grid must be sorted ascending"));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..targets.len()).map(move |i| (g, i)))
        .collect();
    let solvers = grid
        .iter()
        .map(|&v| {
            let mut c = solver.config.clone();
            c.weights = match param {
                SweepParam::LambdaW => PriorWeights {
                    lambda_w: v,
                    ..PriorWeights::ZERO
                },
                SweepParam::LambdaG => PriorWeights {
                    lambda_g: v,
                    ..PriorWeights::ZERO
                },
            };
            solver.with_config(c)
        })
        .collect::<Result<Vec<_>>>()?;
    parallel::try_map(exec, &jobs, |_, &(g, i)| {
        let s = &solvers[g];
        let t = &targets[i];
        let r = s.rls(&t.lr, i as u64)?;
        Ok(SweepRow {
            weights: s.config.weights,
            image_index: i,
            metrics: s.score(&r, &t.hr, &t.lr)?,
        })
    })
}
