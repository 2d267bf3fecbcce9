use std::collections::BTreeMap;

use super::adam::Adam;
use super::l1::{project_l1_in_place, L1Ball};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Update applied before projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StepRule {
    #[default]
    Adam,
    /// Plain gradient step `x -= lr * g`.
    Gradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdSettings {
    pub rule: StepRule,
    pub iterations: usize,
    /// Adam step size for the latent rows.
    pub latent_lr: f64,
    /// Adam step size for every other parameter.
    pub param_lr: f64,
    /// Project the latent after each step.
    pub project: bool,
    /// Stop after this many iterations without the loss improving by more
    /// than `min_delta`; 0 disables the check.
    pub patience: usize,
    pub min_delta: f64,
}

/// Variables optimized by [`pgd_loop`].
#[derive(Clone, Debug)]
pub struct PgdState {
    /// `[rows, d]`; constrained.
    pub latent: Tensor,
    /// Unconstrained; only names present in the returned gradients move.
    pub params: ParamStore,
}

/// Loss and gradients at the current point. A `None` latent gradient freezes
/// the latent.
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub loss: f64,
    pub latent: Option<Tensor>,
    pub params: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdOutcome {
    /// Loss before each update, one entry per iteration run.
    pub trace: Vec<f64>,
    pub stopped_early: bool,
}

fn gradient_step(name: &str, p: &mut Tensor, g: &Tensor, lr: f64) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "gradient step",
            left: p.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    if let Some(i) = g.first_non_finite() {
        return Err(Error::NonFinite {
            context: format!("gradient of `{name}`"),
            index: i,
        });
    }
    for (p, g) in p.data_mut().iter_mut().zip(g.data()) {
        *p -= lr * g;
    }
    Ok(())
}

fn project_all(latent: &mut Tensor, balls: &[L1Ball]) -> Result<()> {
    let n = latent.len();
    if balls.len() == 1 && balls[0].center.len() == n {
        project_l1_in_place(latent.data_mut(), &balls[0]);
        return Ok(());
    }
    let rows = latent.shape()[0];
    if balls.len() != rows {
        return Err(Error::invalid(format!(
            "{} balls for a latent with {rows} rows",
            balls.len()
        )));
    }
    let d = n / rows;
    for (row, ball) in latent.data_mut().chunks_mut(d).zip(balls) {
        project_l1_in_place(row, ball);
    }
    Ok(())
}

/// Projected Adam: each iteration takes an Adam step on every variable and
/// then projects the latent rows back onto their balls.
///
/// `balls` is either one ball per latent row or a single ball over the
/// flattened latent.
pub fn pgd_loop<F>(
    state: &mut PgdState,
    balls: &[L1Ball],
    settings: &PgdSettings,
    mut eval: F,
) -> Result<PgdOutcome>
where
    F: FnMut(&Tensor, &ParamStore) -> Result<StepGrads>,
{
    let mut latent_adam = Adam::new(settings.latent_lr);
    let mut param_adam = Adam::new(settings.param_lr);
    let mut trace = Vec::with_capacity(settings.iterations);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 0..settings.iterations {
        let grads = eval(&state.latent, &state.params)?;
        trace.push(grads.loss);
        if !grads.loss.is_finite() {
            return Err(Error::Diverged {
                stage: "pgd",
                iteration: it,
                loss: grads.loss,
                trace,
            });
        }
        if settings.patience > 0 {
            if grads.loss < best - settings.min_delta {
                best = grads.loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= settings.patience {
                    return Ok(PgdOutcome {
                        trace,
                        stopped_early: true,
                    });
                }
            }
        }
        match settings.rule {
            StepRule::Adam => {
                if let Some(g) = &grads.latent {
                    latent_adam.begin_step();
                    latent_adam.update("latent", &mut state.latent, g)?;
                }
                if !grads.params.is_empty() {
                    param_adam.step(&mut state.params, &grads.params)?;
                }
            }
            StepRule::Gradient => {
                if let Some(g) = &grads.latent {
                    gradient_step("latent", &mut state.latent, g, settings.latent_lr)?;
                }
                for (name, g) in &grads.params {
                    gradient_step(name, state.params.get_mut(name)?, g, settings.param_lr)?;
                }
            }
        }
        if settings.project {
            project_all(&mut state.latent, balls)?;
        }
    }
    Ok(PgdOutcome {
        trace,
        stopped_early: false,
    })
}
