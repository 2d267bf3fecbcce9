//! The MAP objective: an l1 data term through the degradation operator and
//! the three latent regularizers scored by the flow.
//!
//! Every term exists twice: as a graph builder used inside the solver's
//! tapes and as a plain value function used by tests and metrics. The
//! value functions simply run the graph builders on a throwaway tape.

use std::f64::consts::PI;

use crate::degrade::Bicubic;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::generator::{ExtendedLatent, GeneratorBundle, Image};
use crate::nn::{BoundParams, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorWeights {
    pub lambda_w: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        PriorWeights {
            lambda_w: 2e-4,
            lambda_g: 4e-4,
            lambda_c: 0.05,
        }
    }
}

impl PriorWeights {
    pub const ZERO: PriorWeights = PriorWeights {
        lambda_w: 0.0,
        lambda_g: 0.0,
        lambda_c: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_w", self.lambda_w),
            ("lambda_g", self.lambda_g),
            ("lambda_c", self.lambda_c),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

/// How the per-pixel absolute deviations of the data term are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: PriorWeights,
    pub reduction: Reduction,
}

/// Scalar components of the anchor-stage loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub data: f64,
    pub p_w: f64,
    pub p_gaussian: f64,
    pub p_cross: f64,
    pub total: f64,
}

/// Graph nodes of the anchor-stage loss.
#[derive(Clone, Copy)]
pub struct LossVars<'t> {
    pub data: Var<'t>,
    pub p_w: Var<'t>,
    pub p_gaussian: Var<'t>,
    pub p_cross: Var<'t>,
    pub total: Var<'t>,
}

impl LossVars<'_> {
    pub fn values(&self) -> LossParts {
        LossParts {
            data: self.data.item(),
            p_w: self.p_w.item(),
            p_gaussian: self.p_gaussian.item(),
            p_cross: self.p_cross.item(),
            total: self.total.item(),
        }
    }
}

fn check_rows(wplus: Var<'_>, d: usize) -> Result<usize> {
    let s = wplus.shape();
    if s.len() != 2 || s[1] != d || s[0] == 0 {
        return Err(Error::ShapeMismatch {
            op: "latent prior",
            left: s,
            right: vec![0, d],
        });
    }
    Ok(s[0])
}

/// `(P_w, P_gaussian)` from one pass of the flow over the rows of `wplus`.
pub fn flow_priors_graph<'t>(
    flow: &FlowModel,
    fp: &BoundParams<'t>,
    wplus: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let d = flow.latent_dim();
    check_rows(wplus, d)?;
    let (z, logdet) = flow.forward_graph(fp, wplus)?;
    let sq = z.square().row_sum()?;
    let log_p = sq
        .scale(-0.5)
        .add_scalar(-0.5 * d as f64 * (2.0 * PI).ln())
        .add(logdet)?;
    let p_w = log_p.mean();
    let p_gaussian = sq
        .sqrt()?
        .add_scalar(-(d as f64).sqrt())
        .square()
        .mean()
        .neg();
    Ok((p_w, p_gaussian))
}

/// `-sum_{i<j} |w_i - w_j|^2`; zero for a single row.
pub fn p_cross_graph(wplus: Var<'_>) -> Result<Var<'_>> {
    let l = wplus.shape()[0];
    let mut acc: Option<Var<'_>> = None;
    for i in 0..l {
        let wi = wplus.slice_rows(i, i + 1)?;
        for j in i + 1..l {
            let term = wi.sub(wplus.slice_rows(j, j + 1)?)?.square().sum();
            acc = Some(match acc {
                Some(a) => a.add(term)?,
                None => term,
            });
        }
    }
    Ok(match acc {
        Some(a) => a.neg(),
        None => wplus.tape().scalar(0.0),
    })
}

/// `|y - D(x)|_1` reduced over the low-resolution pixels.
pub fn data_term_graph<'t>(
    y: &Image,
    hr: Var<'t>,
    down: &Bicubic,
    reduction: Reduction,
) -> Result<Var<'t>> {
    if y.side() != down.output_side() {
        return Err(Error::ShapeMismatch {
            op: "data term",
            left: vec![y.side(), y.side()],
            right: vec![down.output_side(), down.output_side()],
        });
    }
    let yv = hr.tape().constant(y.tensor().clone());
    let diff = down.graph(hr)?.sub(yv)?.abs();
    Ok(match reduction {
        Reduction::Mean => diff.mean(),
        Reduction::Sum => diff.sum(),
    })
}

/// Anchor-stage loss `data - (λ_w P_w + λ_g P_gaussian + λ_c P_cross)`.
pub fn rls_loss_graph<'t>(
    data: Var<'t>,
    flow: &FlowModel,
    fp: &BoundParams<'t>,
    wplus: Var<'t>,
    weights: &PriorWeights,
) -> Result<LossVars<'t>> {
    let (p_w, p_gaussian) = flow_priors_graph(flow, fp, wplus)?;
    let p_cross = p_cross_graph(wplus)?;
    let prior = p_w
        .scale(weights.lambda_w)
        .add(p_gaussian.scale(weights.lambda_g))?
        .add(p_cross.scale(weights.lambda_c))?;
    Ok(LossVars {
        data,
        p_w,
        p_gaussian,
        p_cross,
        total: data.sub(prior)?,
    })
}

fn factor_for(generator: &GeneratorBundle, y: &Image) -> Result<Bicubic> {
    let n = generator.side();
    if y.side() == 0 || !n.is_multiple_of(y.side()) {
        return Err(Error::invalid(format!(
            "observation side {} does not divide generator side {n}",
            y.side()
        )));
    }
    Bicubic::new(n, n / y.side())
}

pub fn p_w(wplus: &ExtendedLatent, flow: &FlowModel) -> Result<f64> {
    let tape = Tape::new();
    let fp = flow.params.bind_constant(&tape);
    Ok(
        flow_priors_graph(flow, &fp, tape.constant(wplus.tensor().clone()))?
            .0
            .item(),
    )
}

pub fn p_gaussian(wplus: &ExtendedLatent, flow: &FlowModel) -> Result<f64> {
    let tape = Tape::new();
    let fp = flow.params.bind_constant(&tape);
    Ok(
        flow_priors_graph(flow, &fp, tape.constant(wplus.tensor().clone()))?
            .1
            .item(),
    )
}

pub fn p_cross(wplus: &ExtendedLatent) -> f64 {
    let tape = Tape::new();
    p_cross_graph(tape.constant(wplus.tensor().clone()))
        .expect("rank-2 latent")
        .item()
}

/// Mean-reduced data term of `G_s(wplus, θ, η)` against `y`, with θ taken
/// from `generator` and η from `noise`.
pub fn data_term(
    y: &Image,
    wplus: &ExtendedLatent,
    generator: &GeneratorBundle,
    noise: &ParamStore,
) -> Result<f64> {
    let down = factor_for(generator, y)?;
    let tape = Tape::new();
    let syn = generator.synthesis.bind_constant(&tape);
    let eta = noise.bind_constant(&tape);
    let hr = generator.synthesis_graph(&syn, &eta, tape.constant(wplus.tensor().clone()))?;
    Ok(data_term_graph(y, hr, &down, Reduction::Mean)?.item())
}

/// Anchor-stage loss with η = 0.
pub fn rls_loss(
    y: &Image,
    wplus: &ExtendedLatent,
    generator: &GeneratorBundle,
    flow: &FlowModel,
    weights: &PriorWeights,
) -> Result<LossParts> {
    let down = factor_for(generator, y)?;
    let tape = Tape::new();
    let syn = generator.synthesis.bind_constant(&tape);
    let zero = generator.zero_noise();
    let eta = zero.bind_constant(&tape);
    let fp = flow.params.bind_constant(&tape);
    let w = tape.constant(wplus.tensor().clone());
    let hr = generator.synthesis_graph(&syn, &eta, w)?;
    let data = data_term_graph(y, hr, &down, Reduction::Mean)?;
    Ok(rls_loss_graph(data, flow, &fp, w, weights)?.values())
}

/// Refinement-stage loss: the bare data term over `(W⁺, θ, η)`, with θ
/// read from `generator` (typically a refined clone).
pub fn rlsplus_loss(
    y: &Image,
    wplus: &ExtendedLatent,
    generator: &GeneratorBundle,
    noise: &ParamStore,
) -> Result<f64> {
    data_term(y, wplus, generator, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::generator::GeneratorConfig;
    use crate::seed;
    use crate::tensor::{grad_check, Tensor};
    use proptest::prelude::*;
    use rand::Rng;

    fn small_flow(d: usize) -> FlowModel {
        let mut f = FlowModel::new(&FlowConfig {
            latent_dim: d,
            blocks: 2,
            hidden: 8,
            seed: 3,
        })
        .unwrap();
        // Move the output layers away from their near-identity start.
        let mut rng = seed::rng(11);
        for (name, t) in f.params.iter_mut() {
            if name.ends_with(".2.weight") || name.ends_with(".2.bias") {
                for v in t.data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
        }
        f
    }

    fn small_generator() -> GeneratorBundle {
        GeneratorBundle::new(&GeneratorConfig {
            latent_dim: 4,
            layers: 2,
            channels: 4,
            mapping_hidden: 8,
            seed: 5,
        })
        .unwrap()
    }

    fn random_latent(l: usize, d: usize, s: u64) -> ExtendedLatent {
        let mut rng = seed::rng(s);
        let data = (0..l * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        ExtendedLatent::new(Tensor::new(vec![l, d], data).unwrap()).unwrap()
    }

    #[test]
    fn p_w_single_row_and_loop() {
        let f = small_flow(4);
        let one = random_latent(1, 4, 1);
        assert!((p_w(&one, &f).unwrap() - f.log_density(one.row(0)).unwrap()).abs() < 1e-12);

        let w = random_latent(3, 4, 2);
        let oracle: f64 = (0..3)
            .map(|i| f.log_density(w.row(i)).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((p_w(&w, &f).unwrap() - oracle).abs() < 1e-6);

        let same = ExtendedLatent::broadcast(w.row(1), 4);
        assert!((p_w(&same, &f).unwrap() - f.log_density(w.row(1)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn p_w_rejects_wrong_dim() {
        assert!(p_w(&random_latent(2, 3, 1), &small_flow(4)).is_err());
    }

    #[test]
    fn p_gaussian_values() {
        let d = 4;
        let id = FlowModel::identity(d).unwrap();
        // |F(w)| = |w| = 2 = sqrt(d) on every row.
        let on = ExtendedLatent::new(
            Tensor::from_rows(&[vec![2.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, -1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert!(p_gaussian(&on, &id).unwrap().abs() < 1e-14);
        let origin = ExtendedLatent::broadcast(&[0.0; 4], 3);
        assert!((p_gaussian(&origin, &id).unwrap() + d as f64).abs() < 1e-14);

        let f = small_flow(d);
        let w = random_latent(3, d, 4);
        let oracle: f64 = (0..3)
            .map(|i| {
                let (z, _) = f.forward(w.row(i)).unwrap();
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                -(norm - (d as f64).sqrt()).powi(2)
            })
            .sum::<f64>()
            / 3.0;
        let got = p_gaussian(&w, &f).unwrap();
        assert!((got - oracle).abs() < 1e-6);
        assert!(got < 0.0);
    }

    #[test]
    fn p_cross_values() {
        let e = ExtendedLatent::new(Tensor::identity(2)).unwrap();
        assert!((p_cross(&e) + 2.0).abs() < 1e-15);
        assert_eq!(p_cross(&random_latent(1, 3, 1)), 0.0);

        let w = random_latent(4, 3, 9);
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    oracle -= w
                        .row(i)
                        .iter()
                        .zip(w.row(j))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>();
                }
            }
        }
        assert!((p_cross(&w) - oracle).abs() < 1e-6);
        assert!(p_cross(&w) < 0.0);
    }

    proptest! {
        #[test]
        fn p_cross_vanishes_on_broadcast(w in prop::collection::vec(-5.0f64..5.0, 4), l in 1usize..6) {
            prop_assert_eq!(p_cross(&ExtendedLatent::broadcast(&w, l)), 0.0);
        }

        #[test]
        fn p_gaussian_never_positive(s in 0u64..1000) {
            let f = small_flow(4);
            prop_assert!(p_gaussian(&random_latent(2, 4, s), &f).unwrap() <= 0.0);
        }
    }

    #[test]
    fn data_term_values() {
        let g = small_generator();
        let w = random_latent(2, 4, 3);
        let zero = g.zero_noise();
        let hr = g.synthesize(&w).unwrap();
        let down = Bicubic::new(16, 2).unwrap();
        let y = down.apply(&hr).unwrap();
        assert!(data_term(&y, &w, &g, &zero).unwrap() < 1e-15);

        let shifted = Image::new(8, y.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((data_term(&shifted, &w, &g, &zero).unwrap() - 0.1).abs() < 1e-12);

        let mut rng = seed::rng(8);
        let other = Image::new(8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let oracle: f64 = y
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 64.0;
        assert!((data_term(&other, &w, &g, &zero).unwrap() - oracle).abs() < 1e-6);

        assert!(data_term(&Image::filled(32, 0.5).unwrap(), &w, &g, &zero).is_err());
    }

    #[test]
    fn rls_loss_recomposes_and_reduces() {
        let (g, f) = (small_generator(), small_flow(4));
        let w = random_latent(2, 4, 6);
        let y = Image::filled(8, 0.4).unwrap();
        let bare = rls_loss(&y, &w, &g, &f, &PriorWeights::ZERO).unwrap();
        let dt = data_term(&y, &w, &g, &g.zero_noise()).unwrap();
        assert_eq!(bare.total, bare.data);
        assert!((bare.data - dt).abs() < 1e-15);

        let lw = PriorWeights {
            lambda_w: 0.3,
            lambda_g: 0.02,
            lambda_c: 1.5,
        };
        let parts = rls_loss(&y, &w, &g, &f, &lw).unwrap();
        let oracle = dt
            - (0.3 * p_w(&w, &f).unwrap() + 0.02 * p_gaussian(&w, &f).unwrap() + 1.5 * p_cross(&w));
        assert!((parts.total - oracle).abs() < 1e-6);
    }

    #[test]
    fn cross_gradient_vanishes_only_on_identical_rows() {
        let grad = |w: &ExtendedLatent| {
            let tape = Tape::new();
            let v = tape.param(w.tensor().clone());
            tape.backward(p_cross_graph(v).unwrap()).unwrap();
            tape.grad(v).unwrap()
        };
        let same = ExtendedLatent::broadcast(&[0.3, -1.0, 2.0], 3);
        assert!(grad(&same).data().iter().all(|&g| g == 0.0));
        assert!(grad(&random_latent(3, 3, 2))
            .data()
            .iter()
            .any(|&g| g.abs() > 1e-3));
    }

    #[test]
    fn weights_validate() {
        PriorWeights::default().validate().unwrap();
        PriorWeights::ZERO.validate().unwrap();
        let bad = PriorWeights {
            lambda_w: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let nan = PriorWeights {
            lambda_g: f64::NAN,
            ..Default::default()
        };
        assert!(nan.validate().is_err());
    }

    /// Full anchor loss as a function of `W⁺` at d = 4, L = 2, n = 16.
    #[test]
    fn rls_loss_gradient_matches_finite_differences() {
        let (g, f) = (small_generator(), small_flow(4));
        let y = Image::new(8, (0..64).map(|i| 0.3 + 0.005 * i as f64).collect()).unwrap();
        let down = Bicubic::new(16, 2).unwrap();
        let weights = PriorWeights {
            lambda_w: 0.05,
            lambda_g: 0.05,
            lambda_c: 0.05,
        };
        let zero = g.zero_noise();
        let w = random_latent(2, 4, 12);
        let r = grad_check(
            |v| {
                let tape = v.tape();
                let syn = g.synthesis.bind_constant(tape);
                let eta = zero.bind_constant(tape);
                let fp = f.params.bind_constant(tape);
                let hr = g.synthesis_graph(&syn, &eta, v)?;
                let data = data_term_graph(&y, hr, &down, Reduction::Mean)?;
                Ok(rls_loss_graph(data, &f, &fp, v, &weights)?.total)
            },
            w.tensor(),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.excluded.len() < w.tensor().len());
    }

    #[test]
    fn noise_gradient_is_nonzero_at_anchor() {
        let g = small_generator();
        let w = random_latent(2, 4, 13);
        let y = Image::new(8, (0..64).map(|i| 0.2 + 0.008 * i as f64).collect()).unwrap();
        let down = Bicubic::new(16, 2).unwrap();
        let zero = g.zero_noise();
        let tape = Tape::new();
        let syn = g.synthesis.bind_constant(&tape);
        let eta = zero.bind(&tape, |_| true);
        let hr = g
            .synthesis_graph(&syn, &eta, tape.constant(w.tensor().clone()))
            .unwrap();
        let loss = data_term_graph(&y, hr, &down, Reduction::Mean).unwrap();
        tape.backward(loss).unwrap();
        let grads = eta.grads();
        assert!(grads
            .values()
            .any(|t| t.data().iter().any(|v| v.abs() > 1e-6)));

        // Central difference along the analytic gradient direction confirms
        // the slope.
        let dir = grads.clone();
        let norm2: f64 = dir
            .values()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let h = 1e-6;
        let eval = |s: f64| {
            let mut n = zero.clone();
            for (name, t) in n.iter_mut() {
                for (a, b) in t.data_mut().iter_mut().zip(dir[name].data()) {
                    *a += s * b;
                }
            }
            rlsplus_loss(&y, &w, &g, &n).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!((fd - norm2).abs() / norm2 < 1e-4, "{fd} vs {norm2}");
    }
}
