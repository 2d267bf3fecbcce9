use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dense, make_autoregressive_masks, Activation, BoundParams, ParamStore};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

pub const ALPHA_BOUND: f64 = 7.0;
// Output layer starts this much smaller than fan-in init, so the untrained
// flow is close to the identity.
const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub latent_dim: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            latent_dim: 16,
            blocks: 3,
            hidden: 64,
            seed: 0,
        }
    }
}

/// Stack of MAF blocks. Parameters live in one store under
/// `flow.{block}.{layer}.{weight,bias,mask}`; masks are frozen entries.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub params: ParamStore,
    latent_dim: usize,
    blocks: usize,
    hidden: usize,
}

/// Fixed per-dimension standardization applied before the first block.
pub const SHIFT: &str = "flow.input.shift";
pub const LOG_SCALE: &str = "flow.input.log_scale";

fn name(block: usize, layer: usize, what: &str) -> String {
    format!("flow.{block}.{layer}.{what}")
}

impl FlowModel {
    pub fn new(config: &FlowConfig) -> Result<Self> {
        let FlowConfig {
            latent_dim: d,
            blocks,
            hidden: h,
            seed: s,
        } = *config;
        if d == 0 || blocks == 0 || h == 0 {
            return Err(Error::invalid("flow dimensions must be positive"));
        }
        let base = seed::derive(s, seed::FLOW);
        let mut rng = seed::rng(base);
        let mut params = ParamStore::new();
        for k in 0..blocks {
            let masks = make_autoregressive_masks(d, &[h, h], seed::derive(base, k as u64));
            let out_mask = masks.masks[2].clone();
            let doubled = Tensor::new(
                vec![2 * d, h],
                out_mask
                    .data()
                    .iter()
                    .chain(out_mask.data())
                    .copied()
                    .collect(),
            )?;
            let layer_masks = [masks.masks[0].clone(), masks.masks[1].clone(), doubled];
            for (j, mask) in layer_masks.into_iter().enumerate() {
                let (rows, cols) = (mask.shape()[0], mask.shape()[1]);
                let mut bound = 1.0 / (cols as f64).sqrt();
                if j == 2 {
                    bound *= OUTPUT_INIT_SCALE;
                }
                let w = (0..rows * cols)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                params.insert(name(k, j, "weight"), Tensor::new(vec![rows, cols], w)?)?;
                params.insert(name(k, j, "bias"), Tensor::zeros(vec![rows]))?;
                params.insert(name(k, j, "mask"), mask)?;
            }
        }
        params.insert(SHIFT, Tensor::zeros(vec![d]))?;
        params.insert(LOG_SCALE, Tensor::zeros(vec![d]))?;
        let mut flow = FlowModel {
            params,
            latent_dim: d,
            blocks,
            hidden: h,
        };
        flow.freeze_masks()?;
        flow.params.round_to_f32();
        Ok(flow)
    }

    /// One block whose conditioner outputs `mu = 0` and `alpha = c`
    /// everywhere (`c = 0` is the identity flow).
    pub fn constant_scale(d: usize, c: f64) -> Result<Self> {
        if c.abs() >= ALPHA_BOUND {
            return Err(Error::invalid(format!(
                "|alpha| must be below {ALPHA_BOUND}"
            )));
        }
        let mut flow = FlowModel::new(&FlowConfig {
            latent_dim: d,
            blocks: 1,
            hidden: 1,
            seed: 0,
        })?;
        let raw = ALPHA_BOUND * (c / ALPHA_BOUND).atanh();
        *flow.params.get_mut(&name(0, 2, "weight"))? = Tensor::zeros(vec![2 * d, 1]);
        *flow.params.get_mut(&name(0, 2, "bias"))? =
            Tensor::vector((0..2 * d).map(|i| if i < d { 0.0 } else { raw }).collect());
        Ok(flow)
    }

    pub fn identity(d: usize) -> Result<Self> {
        FlowModel::constant_scale(d, 0.0)
    }

    /// Rebuild from a store containing `flow.*` entries.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let params = store.subset("flow.");
        let blocks = (0..)
            .take_while(|&k| params.contains(&name(k, 0, "weight")))
            .count();
        if blocks == 0 {
            return Err(Error::MissingParameter(name(0, 0, "weight")));
        }
        let w0 = params.get(&name(0, 0, "weight"))?;
        let (hidden, d) = (w0.shape()[0], w0.shape()[1]);
        for k in 0..blocks {
            for j in 0..3 {
                for what in ["weight", "bias", "mask"] {
                    params.get(&name(k, j, what))?;
                }
            }
            if params.get(&name(k, 2, "weight"))?.shape() != [2 * d, hidden] {
                return Err(Error::invalid("flow output layer has unexpected shape"));
            }
        }
        for fixed in [SHIFT, LOG_SCALE] {
            if params.get(fixed)?.shape() != [d] {
                return Err(Error::invalid(format!("{fixed} has unexpected shape")));
            }
        }
        let mut flow = FlowModel {
            params,
            latent_dim: d,
            blocks,
            hidden,
        };
        flow.freeze_masks()?;
        Ok(flow)
    }

    fn freeze_masks(&mut self) -> Result<()> {
        self.params.set_trainable(SHIFT, false)?;
        self.params.set_trainable(LOG_SCALE, false)?;
        for k in 0..self.blocks {
            for j in 0..3 {
                self.params.set_trainable(&name(k, j, "mask"), false)?;
            }
        }
        Ok(())
    }

    /// Set the input standardization to the per-dimension mean and
    /// standard deviation of the rows of `w`.
    pub fn set_standardization(&mut self, w: &Tensor) -> Result<()> {
        let d = self.latent_dim;
        if w.rank() != 2 || w.shape()[1] != d || w.shape()[0] < 2 {
            return Err(Error::invalid(
                "standardization needs at least two rows of width d",
            ));
        }
        let n = w.shape()[0] as f64;
        let mut mean = vec![0.0; d];
        for row in w.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in w.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / (n - 1.0);
            }
        }
        if let Some(j) = var.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::invalid(format!("dimension {j} has zero variance")));
        }
        *self.params.get_mut(SHIFT)? = Tensor::vector(mean);
        *self.params.get_mut(LOG_SCALE)? =
            Tensor::vector(var.iter().map(|v| 0.5 * v.ln()).collect());
        self.params.round_to_f32();
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn conditioner<'t>(&self, p: &BoundParams<'t>, k: usize, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for j in 0..3 {
            let w = p
                .get(&name(k, j, "weight"))?
                .mul(p.get(&name(k, j, "mask"))?)?;
            let act = if j < 2 {
                Activation::Tanh
            } else {
                Activation::None
            };
            h = dense(h, w, p.get(&name(k, j, "bias"))?, act)?;
        }
        Ok(h)
    }

    fn reversal(&self, rows: usize) -> Rc<[usize]> {
        let d = self.latent_dim;
        (0..rows)
            .flat_map(|r| (0..d).rev().map(move |c| r * d + c))
            .collect()
    }

    /// `F` on the rows of `w` (`[B, d]`): returns `z` (`[B, d]`) and the
    /// per-row log-determinant (`[B]`).
    pub fn forward_graph<'t>(&self, p: &BoundParams<'t>, w: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let d = self.latent_dim;
        let shape = w.shape();
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::ShapeMismatch {
                op: "flow_forward",
                left: shape,
                right: vec![0, d],
            });
        }
        let rows = shape[0];
        let shift = p.get(SHIFT)?.repeat_rows(rows)?;
        let log_scale = p.get(LOG_SCALE)?;
        let mut x = w
            .sub(shift)?
            .mul(log_scale.neg().exp().repeat_rows(rows)?)?;
        let mut logdet = Some(
            log_scale
                .sum()
                .neg()
                .repeat_rows(rows)?
                .reshape(vec![rows])?,
        );
        for k in 0..self.blocks {
            if k > 0 {
                x = x.gather(self.reversal(rows), vec![rows, d])?;
            }
            let out = self.conditioner(p, k, x)?;
            let mu = out.slice_cols(0, d)?;
            let alpha = out
                .slice_cols(d, 2 * d)?
                .scale(1.0 / ALPHA_BOUND)
                .tanh()
                .scale(ALPHA_BOUND);
            if let Some(i) = alpha.value().first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("flow block {k} alpha"),
                    index: i,
                });
            }
            x = x.sub(mu)?.mul(alpha.neg().exp())?;
            let contrib = alpha.row_sum()?.neg();
            logdet = Some(match logdet {
                Some(l) => l.add(contrib)?,
                None => contrib,
            });
        }
        Ok((x, logdet.expect("at least one block")))
    }

    /// `log N(F(w); 0, I) + log|det J_F(w)|` per row, shape `[B]`.
    pub fn log_density_graph<'t>(&self, p: &BoundParams<'t>, w: Var<'t>) -> Result<Var<'t>> {
        let (z, logdet) = self.forward_graph(p, w)?;
        let d = self.latent_dim as f64;
        z.square()
            .row_sum()?
            .scale(-0.5)
            .add_scalar(-0.5 * d * (2.0 * PI).ln())
            .add(logdet)
    }

    fn as_batch(&self, w: &[f64]) -> Result<Tensor> {
        if w.len() != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "flow input",
                left: vec![w.len()],
                right: vec![self.latent_dim],
            });
        }
        Tensor::new(vec![1, self.latent_dim], w.to_vec())
    }

    pub fn forward_batch(&self, w: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        let (z, ld) = self.forward_graph(&p, tape.constant(w.clone()))?;
        Ok((z.value(), ld.value().into_data()))
    }

    pub fn forward(&self, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.forward_batch(&self.as_batch(w)?)?;
        Ok((z.into_data(), ld[0]))
    }

    pub fn log_density_batch(&self, w: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        Ok(self
            .log_density_graph(&p, tape.constant(w.clone()))?
            .value()
            .into_data())
    }

    pub fn log_density(&self, w: &[f64]) -> Result<f64> {
        Ok(self.log_density_batch(&self.as_batch(w)?)?[0])
    }

    /// `F^{-1}` on the rows of `z`, solved one dimension at a time inside
    /// each block.
    pub fn inverse_batch(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.latent_dim;
        if z.rank() != 2 || z.shape()[1] != d {
            return Err(Error::ShapeMismatch {
                op: "flow_inverse",
                left: z.shape().to_vec(),
                right: vec![0, d],
            });
        }
        let rows = z.shape()[0];
        let mut cur = z.clone();
        for k in (0..self.blocks).rev() {
            let mut x = Tensor::zeros(vec![rows, d]);
            for i in 0..d {
                let tape = Tape::new();
                let p = self.params.bind_constant(&tape);
                let out = self.conditioner(&p, k, tape.constant(x.clone()))?.value();
                for r in 0..rows {
                    let o = out.row(r);
                    let alpha = ALPHA_BOUND * (o[d + i] / ALPHA_BOUND).tanh();
                    x.data_mut()[r * d + i] = cur.data()[r * d + i] * alpha.exp() + o[i];
                }
            }
            if k > 0 {
                for r in 0..rows {
                    x.data_mut()[r * d..(r + 1) * d].reverse();
                }
            }
            cur = x;
        }
        let shift = self.params.get(SHIFT)?.data();
        let log_scale = self.params.get(LOG_SCALE)?.data();
        for row in cur.data_mut().chunks_mut(d) {
            for ((v, m), ls) in row.iter_mut().zip(shift).zip(log_scale) {
                *v = *v * ls.exp() + m;
            }
        }
        Ok(cur)
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_batch(&self.as_batch(z)?)?.into_data())
    }
}
