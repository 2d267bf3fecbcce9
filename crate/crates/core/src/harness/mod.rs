//! Experiment plumbing behind the command line tool: configuration,
//! procedural data, weight files, run directories and CSV output.
//!
//! A run directory `<root>/<run>/` holds `manifest.txt` (the full config,
//! reparseable), `metrics.csv` and `images/*.pgm`. Weights live in
//! `<root>/weights/{generator,flow}.gprl`. The root is the config's `out`
//! unless `GPRL_OUT` is set.

mod config;
mod csv;
mod data;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, GeneratorMode, Perturbation, SweepSpec, TargetKind};
pub use csv::{emit_csv, parse_csv, write_csv, CsvRecord, HEADER};
pub use data::{make_blob_dataset, make_targets, perturb_patch};

use crate::degrade::Corruption;
use crate::error::Result;
use crate::eval::{gaussianization_report, GaussianizationReport, MetricsRecord};
use crate::flow::{train_flow, FlowModel, FlowReport};
use crate::generator::{train_decoder, DecoderReport, GeneratorBundle};
use crate::nn::{load_weights, save_weights};
use crate::objective::PriorWeights;
use crate::seed;
use crate::solver::{
    ablation_suite, run_variant, sweep, JobOutcome, Solver, SweepRow, Target, Variant,
};

pub const OUT_ENV: &str = "GPRL_OUT";

pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.out.clone(),
    }
}

pub fn generator_path(root: &Path) -> PathBuf {
    root.join("weights").join("generator.gprl")
}

pub fn flow_path(root: &Path) -> PathBuf {
    root.join("weights").join("flow.gprl")
}

/// Seeded generator; in trained mode it is fitted to a blob dataset first.
pub fn build_generator(cfg: &ExperimentConfig) -> Result<(GeneratorBundle, Option<DecoderReport>)> {
    let init = GeneratorBundle::new(&cfg.generator)?;
    match cfg.mode {
        GeneratorMode::Fixed => Ok((init, None)),
        GeneratorMode::Trained => {
            let data = make_blob_dataset(cfg.decoder_images, init.side(), cfg.seed)?;
            let (g, report) = train_decoder(&init, &data, &cfg.decoder)?;
            Ok((g, Some(report)))
        }
    }
}

pub fn save_generator(g: &GeneratorBundle, root: &Path) -> Result<PathBuf> {
    let path = generator_path(root);
    save_weights(&g.to_store()?, &path)?;
    Ok(path)
}

pub fn load_generator(root: &Path) -> Result<GeneratorBundle> {
    GeneratorBundle::from_store(&load_weights(generator_path(root))?)
}

/// Fit the flow to `flow_samples` fresh style vectors.
pub fn fit_flow(cfg: &ExperimentConfig, g: &GeneratorBundle) -> Result<(FlowModel, FlowReport)> {
    let w = g.sample_w(
        cfg.flow_samples,
        seed::derive(cfg.seed, seed::FLOW_SAMPLES),
        cfg.exec,
    )?;
    train_flow(&w, &cfg.flow, &cfg.flow_training)
}

pub fn save_flow(f: &FlowModel, root: &Path) -> Result<PathBuf> {
    let path = flow_path(root);
    save_weights(&f.params, &path)?;
    Ok(path)
}

pub fn load_flow(root: &Path) -> Result<FlowModel> {
    FlowModel::from_store(&load_weights(flow_path(root))?)
}

/// Gaussianization check on samples independent of the training draw.
pub fn check_flow(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    f: &FlowModel,
) -> Result<GaussianizationReport> {
    gaussianization_report(
        f,
        g,
        cfg.gaussianization_samples,
        seed::derive(cfg.seed, seed::GAUSSIANIZATION),
        cfg.exec,
    )
}

/// Create `<root>/<run>/images` and write the manifest.
pub fn prepare_run(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = output_root(cfg).join(&cfg.run);
    std::fs::create_dir_all(dir.join("images"))?;
    let text = format!(
        "# command: {command}\n# gprl {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_text()
    );
    std::fs::write(dir.join("manifest.txt"), text)?;
    Ok(dir)
}

/// Targets described by `cfg`, with `corruption` in place of its own.
pub fn targets_for(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    corruption: Corruption,
) -> Result<Vec<Target>> {
    make_targets(
        g,
        cfg.targets,
        cfg.images,
        cfg.factor,
        corruption,
        &cfg.perturbation,
        cfg.seed,
        cfg.exec,
    )
}

fn record(
    cfg: &ExperimentConfig,
    variant: &str,
    weights: PriorWeights,
    corruption: Corruption,
    index: usize,
    metrics: MetricsRecord,
) -> CsvRecord {
    CsvRecord {
        run_id: format!("{}-{index:03}", cfg.run),
        variant: variant.into(),
        lambda_w: weights.lambda_w,
        lambda_g: weights.lambda_g,
        lambda_c: weights.lambda_c,
        factor: cfg.factor,
        corruption: corruption.to_string(),
        metrics,
        seed: cfg.seed,
    }
}

fn variant_weights(cfg: &ExperimentConfig, v: Variant) -> PriorWeights {
    let mut c = cfg.solver.clone();
    c.ablation = v.ablation();
    c.effective_weights()
}

/// Outcome of an experiment: per-job results plus the CSV rows written.
pub struct RunOutput<T> {
    pub dir: PathBuf,
    pub jobs: Vec<T>,
    pub records: Vec<CsvRecord>,
}

/// Solve every target with one variant; writes GT, LR and reconstruction
/// images per target.
pub fn sr_run(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    f: &FlowModel,
    variant: Variant,
) -> Result<RunOutput<JobOutcome>> {
    let dir = prepare_run(cfg, &format!("sr run --variant {variant}"))?;
    let targets = targets_for(cfg, g, cfg.corruption)?;
    let solver = Solver::new(g, f, cfg.solver.clone())?;
    let jobs = run_variant(&solver, variant, &targets, cfg.exec)?;
    let mut records = Vec::with_capacity(jobs.len());
    for (job, t) in jobs.iter().zip(&targets) {
        let k = job.image_index;
        let images = dir.join("images");
        t.hr.save_pgm(images.join(format!("{k:03}_gt.pgm")))?;
        t.lr.save_pgm(images.join(format!("{k:03}_lr.pgm")))?;
        job.reported()
            .image
            .save_pgm(images.join(format!("{k:03}_recon.pgm")))?;
        let w = variant_weights(cfg, variant);
        records.push(record(
            cfg,
            variant.slug(),
            w,
            cfg.corruption,
            k,
            job.metrics.clone(),
        ));
    }
    emit_csv(&records, dir.join("metrics.csv"))?;
    Ok(RunOutput { dir, jobs, records })
}

/// Anchor search over the configured λ grid.
pub fn sr_sweep(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    f: &FlowModel,
) -> Result<RunOutput<SweepRow>> {
    let dir = prepare_run(cfg, "sr sweep")?;
    let targets = targets_for(cfg, g, cfg.corruption)?;
    let solver = Solver::new(g, f, cfg.solver.clone())?;
    let rows = sweep(
        &solver,
        &targets,
        cfg.sweep.param,
        &cfg.sweep.grid,
        cfg.exec,
    )?;
    let records = rows
        .iter()
        .map(|r| {
            record(
                cfg,
                "rls",
                r.weights,
                cfg.corruption,
                r.image_index,
                r.metrics.clone(),
            )
        })
        .collect::<Vec<_>>();
    emit_csv(&records, dir.join("metrics.csv"))?;
    Ok(RunOutput {
        dir,
        jobs: rows,
        records,
    })
}

/// The reference methods and all ablations, ordered by variant then image.
pub fn sr_ablate(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    f: &FlowModel,
) -> Result<RunOutput<JobOutcome>> {
    let dir = prepare_run(cfg, "sr ablate")?;
    let targets = targets_for(cfg, g, cfg.corruption)?;
    let solver = Solver::new(g, f, cfg.solver.clone())?;
    let jobs = ablation_suite(&solver, &targets, cfg.exec)?;
    let mut records = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let k = job.image_index;
        let name = format!("{}_{k:03}.pgm", job.variant.slug());
        job.reported()
            .image
            .save_pgm(dir.join("images").join(name))?;
        let w = variant_weights(cfg, job.variant);
        records.push(record(
            cfg,
            job.variant.slug(),
            w,
            cfg.corruption,
            k,
            job.metrics.clone(),
        ));
    }
    emit_csv(&records, dir.join("metrics.csv"))?;
    Ok(RunOutput { dir, jobs, records })
}

/// Both stages on clean inputs and under each corruption of the robustness
/// suite; rows are ordered by corruption (clean first) then image.
pub fn eval_robustness(
    cfg: &ExperimentConfig,
    g: &GeneratorBundle,
    f: &FlowModel,
) -> Result<RunOutput<(Corruption, JobOutcome)>> {
    let dir = prepare_run(cfg, "eval robustness")?;
    let solver = Solver::new(g, f, cfg.solver.clone())?;
    let mut jobs = Vec::new();
    let mut records = Vec::new();
    let settings = std::iter::once(Corruption::None).chain(Corruption::robustness_suite());
    for corruption in settings {
        let targets = targets_for(cfg, g, corruption)?;
        let tag = corruption.to_string().replace(':', "_");
        for job in run_variant(&solver, Variant::RlsPlus, &targets, cfg.exec)? {
            let k = job.image_index;
            let images = dir.join("images");
            targets[k]
                .lr
                .save_pgm(images.join(format!("{tag}_{k:03}_lr.pgm")))?;
            job.reported()
                .image
                .save_pgm(images.join(format!("{tag}_{k:03}_recon.pgm")))?;
            let w = variant_weights(cfg, Variant::RlsPlus);
            records.push(record(
                cfg,
                Variant::RlsPlus.slug(),
                w,
                corruption,
                k,
                job.metrics.clone(),
            ));
            jobs.push((corruption, job));
        }
    }
    emit_csv(&records, dir.join("metrics.csv"))?;
    Ok(RunOutput { dir, jobs, records })
}

pub fn format_gaussianization(r: &GaussianizationReport) -> String {
    format!(
        "samples = {}\ndim = {}\nmean_sq_norm = {:.6}\nvar_sq_norm = {:.6}\nraw_mean_sq_norm = {:.6}\n\
         ks_stat_flowed = {:.6}\nks_p_flowed = {:.6}\nks_stat_raw = {:.6}\nks_p_raw = {:.6}\n\
         flowed_passes = {}\nraw_fails = {}\npass = {}\n",
        r.samples,
        r.dim,
        r.mean_sq_norm,
        r.var_sq_norm,
        r.raw_mean_sq_norm,
        r.ks_stat_flowed,
        r.ks_p_flowed,
        r.ks_stat_raw,
        r.ks_p_raw,
        r.flowed_passes,
        r.raw_fails,
        r.pass()
    )
}
