use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::bundle::{GeneratorBundle, LRELU_SLOPE};
use super::image::Image;
use crate::error::{Error, Result};
use crate::nn::{dense, Activation, ParamStore};
use crate::optim::Adam;
use crate::parallel::{self, Execution};
use crate::seed;
use crate::tensor::{Tape, Tensor};

const ENCODER_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for DecoderTraining {
    fn default() -> Self {
        DecoderTraining {
            epochs: 4,
            lr: 2e-3,
            batch: 32,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean training loss of each epoch.
    pub epoch_mse: Vec<f64>,
}

fn encoder(pixels: usize, d: usize, rng: &mut impl Rng) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    for (j, (fan_in, fan_out)) in [(pixels, ENCODER_HIDDEN), (ENCODER_HIDDEN, d)]
        .into_iter()
        .enumerate()
    {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        s.insert(
            format!("enc.{j}.weight"),
            Tensor::new(vec![fan_out, fan_in], w)?,
        )?;
        s.insert(format!("enc.{j}.bias"), Tensor::zeros(vec![fan_out]))?;
    }
    Ok(s)
}

/// Reconstruction loss of one image and, when `grads` is set, the gradient
/// of every entry of `params`.
fn image_loss(
    bundle: &GeneratorBundle,
    params: &ParamStore,
    img: &Image,
    grads: bool,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let tape = Tape::new();
    let p = params.bind(&tape, |_| grads);
    let eta = bundle.noise.bind_constant(&tape);
    let x = tape.constant(img.tensor().clone().reshape(vec![img.data().len()])?);
    let h = dense(
        x,
        p.get("enc.0.weight")?,
        p.get("enc.0.bias")?,
        Activation::LeakyRelu(LRELU_SLOPE),
    )?;
    let z = dense(
        h,
        p.get("enc.1.weight")?,
        p.get("enc.1.bias")?,
        Activation::None,
    )?;
    let w = bundle.mapping_graph(&p, z)?;
    let wplus = w.repeat_rows(bundle.layers())?;
    let out = bundle.synthesis_graph(&p, &eta, wplus)?;
    let loss = out.sub(x.reshape(out.shape())?)?.square().mean();
    let value = loss.item();
    if !grads {
        return Ok((value, BTreeMap::new()));
    }
    tape.backward(loss)?;
    Ok((value, p.grads()))
}

fn dataset_mse(
    bundle: &GeneratorBundle,
    params: &ParamStore,
    data: &[Image],
    exec: Execution,
) -> Result<f64> {
    let losses = parallel::try_map(exec, data, |_, img| {
        image_loss(bundle, params, img, false).map(|r| r.0)
    })?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Train the generator as the decoder of an autoencoder on `dataset`
/// (mean squared reconstruction loss); the encoder is discarded.
pub fn train_decoder(
    init: &GeneratorBundle,
    dataset: &[Image],
    cfg: &DecoderTraining,
) -> Result<(GeneratorBundle, DecoderReport)> {
    if dataset.is_empty() {
        return Err(Error::invalid("decoder training needs a nonempty dataset"));
    }
    if let Some(bad) = dataset.iter().find(|i| i.side() != init.side()) {
        return Err(Error::invalid(format!(
            "dataset image side {} does not match generator side {}",
            bad.side(),
            init.side()
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let base = seed::derive(cfg.seed, seed::DECODER);
    let mut rng = seed::rng(base);
    let n2 = init.side() * init.side();
    let mut params = encoder(n2, init.latent_dim(), &mut rng)?;
    params.merge_prefixed("", &init.mapping)?;
    params.merge_prefixed("", &init.synthesis)?;

    let initial_mse = dataset_mse(init, &params, dataset, cfg.exec)?;
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    let mut trace = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(seed::derive(base, epoch as u64 + 1)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let results = parallel::try_map(cfg.exec, batch, |_, &i| {
                image_loss(init, &params, &dataset[i], true)
            })?;
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for (l, g) in results {
                loss += l * scale;
                for (name, t) in g {
                    match grads.get_mut(&name) {
                        Some(acc) => {
                            for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                                *a += v * scale;
                            }
                        }
                        None => {
                            grads.insert(name, t.map(|v| v * scale));
                        }
                    }
                }
            }
            trace.push(loss);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "decoder",
                    iteration,
                    loss,
                    trace,
                });
            }
            adam.step(&mut params, &grads)?;
            total += loss * batch.len() as f64;
            iteration += 1;
        }
        epoch_mse.push(total / dataset.len() as f64);
    }

    let mut out = init.clone();
    for (name, t) in params.iter() {
        if name.starts_with("map.") {
            *out.mapping.get_mut(name)? = t.clone();
        } else if name.starts_with("syn.") {
            *out.synthesis.get_mut(name)? = t.clone();
        }
    }
    out.round_to_f32();
    // Re-measure with the rounded generator and the trained encoder.
    let mut check = params.clone();
    for (name, t) in out.mapping.iter().chain(out.synthesis.iter()) {
        *check.get_mut(name)? = t.clone();
    }
    let final_mse = dataset_mse(&out, &check, dataset, cfg.exec)?;
    Ok((
        out,
        DecoderReport {
            initial_mse,
            final_mse,
            epoch_mse,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;

    fn tiny() -> GeneratorBundle {
        GeneratorBundle::new(&GeneratorConfig {
            latent_dim: 4,
            layers: 1,
            channels: 4,
            mapping_hidden: 8,
            seed: 1,
        })
        .unwrap()
    }

    fn images(count: usize) -> Vec<Image> {
        (0..count)
            .map(|k| {
                let data = (0..64)
                    .map(|i| 0.2 + 0.6 * (k as f64 / 8.0) * ((i % 8) as f64 / 7.0))
                    .collect();
                Image::new(8, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let g = tiny();
        let cfg = DecoderTraining {
            epochs: 0,
            ..Default::default()
        };
        let (out, report) = train_decoder(&g, &images(4), &cfg).unwrap();
        assert_eq!(out, g);
        assert_eq!(report.initial_mse, report.final_mse);
        assert!(report.epoch_mse.is_empty());
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let g = tiny();
        let cfg = DecoderTraining {
            epochs: 30,
            lr: 1e-2,
            batch: 4,
            ..Default::default()
        };
        let data = images(8);
        let (a, ra) = train_decoder(&g, &data, &cfg).unwrap();
        assert!(ra.final_mse < 0.5 * ra.initial_mse, "{ra:?}");
        let seq = DecoderTraining {
            exec: Execution::Sequential,
            ..cfg
        };
        let (b, rb) = train_decoder(&g, &data, &seq).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn rejects_empty_or_mismatched_data() {
        let g = tiny();
        assert!(train_decoder(&g, &[], &DecoderTraining::default()).is_err());
        let wrong = vec![Image::filled(16, 0.5).unwrap()];
        assert!(train_decoder(&g, &wrong, &DecoderTraining::default()).is_err());
    }
}
