use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::image::Image;
use super::latent::ExtendedLatent;
use crate::error::{Error, Result};
use crate::nn::{dense, Activation, BoundParams, ParamStore};
use crate::parallel::{self, Execution};
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;
// Milder kinks keep the style density smooth enough for a small flow.
pub const MAPPING_SLOPE: f64 = 0.5;
const CONST_SIDE: usize = 4;
const BLUR: [f64; 3] = [0.25, 0.5, 0.25];
const NOISE_STRENGTH_INIT: f64 = 0.1;
const MEAN_CHUNK: usize = 500;

// Variance-preserving gain for a leaky-relu layer under uniform(±1/sqrt(in))
// init: 3 * 2 / (1 + slope^2).
fn lrelu_gain(slope: f64) -> f64 {
    (6.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub layers: usize,
    pub channels: usize,
    pub mapping_hidden: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 16,
            layers: 3,
            channels: 16,
            mapping_hidden: 32,
            seed: 0,
        }
    }
}

/// Mapping network, synthesis parameters θ and per-layer noise images η.
///
/// Parameter names: `map.{0,1,2}.{weight,bias}` for the mapping MLP,
/// `syn.const`, `syn.{i}.{mix,style,bias,noise_strength}` and
/// `syn.rgb.{weight,bias}` for synthesis, `noise.{i}` for η.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBundle {
    pub mapping: ParamStore,
    pub synthesis: ParamStore,
    pub noise: ParamStore,
    latent_dim: usize,
    layers: usize,
    channels: usize,
}

pub fn noise_name(i: usize) -> String {
    format!("noise.{i}")
}

fn uniform(shape: [usize; 2], bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl GeneratorBundle {
    /// Seeded random initialization (the `fixed` generator mode).
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        let GeneratorConfig {
            latent_dim: d,
            layers: l,
            channels: c,
            mapping_hidden: h,
            seed: s,
        } = *config;
        if d == 0 || l == 0 || c == 0 || h == 0 {
            return Err(Error::invalid("generator dimensions must be positive"));
        }
        let mut rng = seed::rng(seed::derive(s, seed::GENERATOR));
        let gain = lrelu_gain(LRELU_SLOPE);

        let mut mapping = ParamStore::new();
        let dims = [(d, h), (h, h), (h, d)];
        for (j, &(fan_in, fan_out)) in dims.iter().enumerate() {
            // The last layer keeps plain fan-in scaling times sqrt(3) so w has
            // roughly unit scale per coordinate.
            let g = if j < 2 {
                lrelu_gain(MAPPING_SLOPE)
            } else {
                3f64.sqrt()
            };
            let w = uniform([fan_out, fan_in], g / (fan_in as f64).sqrt(), &mut rng);
            let b = Tensor::vector((0..fan_out).map(|_| rng.random_range(-0.5..0.5)).collect());
            mapping.insert(format!("map.{j}.weight"), w)?;
            mapping.insert(format!("map.{j}.bias"), b)?;
        }

        let mut synthesis = ParamStore::new();
        let cells = CONST_SIDE * CONST_SIDE;
        let konst: Vec<f64> = (0..c * cells)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        synthesis.insert("syn.const", Tensor::new(vec![c, cells], konst)?)?;
        for i in 0..l {
            let mix = uniform([c, c], gain / (c as f64).sqrt(), &mut rng);
            let style = uniform([c, d], 1.5f64.sqrt() / (d as f64).sqrt(), &mut rng);
            synthesis.insert(format!("syn.{i}.mix"), mix)?;
            synthesis.insert(format!("syn.{i}.style"), style)?;
            synthesis.insert(format!("syn.{i}.bias"), Tensor::zeros(vec![c]))?;
            synthesis.insert(
                format!("syn.{i}.noise_strength"),
                Tensor::vector(vec![NOISE_STRENGTH_INIT]),
            )?;
        }
        let rgb = uniform([1, c], 3f64.sqrt() / (c as f64).sqrt(), &mut rng);
        synthesis.insert("syn.rgb.weight", rgb)?;
        synthesis.insert("syn.rgb.bias", Tensor::zeros(vec![1]))?;

        let mut bundle = GeneratorBundle {
            mapping,
            synthesis,
            noise: ParamStore::new(),
            latent_dim: d,
            layers: l,
            channels: c,
        };
        bundle.noise = bundle.zero_noise();
        bundle.round_to_f32();
        Ok(bundle)
    }

    /// Rebuild from a flat store holding `map.*`, `syn.*` and optionally
    /// `noise.*` entries; dimensions are inferred.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let w0 = store.get("map.0.weight")?;
        let konst = store.get("syn.const")?;
        if w0.rank() != 2 || konst.rank() != 2 || konst.shape()[1] != CONST_SIDE * CONST_SIDE {
            return Err(Error::invalid("generator weights have unexpected shapes"));
        }
        let d = w0.shape()[1];
        let c = konst.shape()[0];
        let l = (0..)
            .take_while(|i| store.contains(&format!("syn.{i}.mix")))
            .count();
        if l == 0 {
            return Err(Error::MissingParameter("syn.0.mix".into()));
        }
        let mut bundle = GeneratorBundle {
            mapping: store.subset("map."),
            synthesis: store.subset("syn."),
            noise: ParamStore::new(),
            latent_dim: d,
            layers: l,
            channels: c,
        };
        bundle.noise = bundle.zero_noise();
        for i in 0..l {
            let name = noise_name(i);
            if let Ok(t) = store.get(&name) {
                *bundle.noise.get_mut(&name)? = t.clone();
            }
        }
        Ok(bundle)
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut out = self.mapping.clone();
        out.merge_prefixed("", &self.synthesis)?;
        out.merge_prefixed("", &self.noise)?;
        Ok(out)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Side of the feature map produced by synthesis layer `i`.
    pub fn layer_side(&self, i: usize) -> usize {
        CONST_SIDE << (i + 1)
    }

    pub fn side(&self) -> usize {
        self.layer_side(self.layers - 1)
    }

    pub fn zero_noise(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for i in 0..self.layers {
            let n = self.layer_side(i);
            s.insert(noise_name(i), Tensor::zeros(vec![n, n]))
                .expect("distinct noise names");
        }
        s
    }

    /// Seeded N(0, 1) noise images.
    pub fn random_noise(&self, seed: u64) -> ParamStore {
        let mut rng = seed::rng(seed);
        let mut s = ParamStore::new();
        for i in 0..self.layers {
            let n = self.layer_side(i);
            let data = (0..n * n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            s.insert(
                noise_name(i),
                Tensor::new(vec![n, n], data).expect("noise shape"),
            )
            .expect("distinct noise names");
        }
        s
    }

    /// Synthesis parameter names belonging to the first `k` layers in
    /// forward order, including the learned constant.
    pub fn leading_layer_params(&self, k: usize) -> Vec<String> {
        let mut names = vec!["syn.const".to_string()];
        for i in 0..k.min(self.layers) {
            for p in ["mix", "style", "bias", "noise_strength"] {
                names.push(format!("syn.{i}.{p}"));
            }
        }
        names
    }

    pub fn round_to_f32(&mut self) {
        self.mapping.round_to_f32();
        self.synthesis.round_to_f32();
        self.noise.round_to_f32();
    }

    /// `G_m` on a batch `[B, d]` or a single `[d]` vector.
    pub fn mapping_graph<'t>(&self, params: &BoundParams<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let lrelu = Activation::LeakyRelu(MAPPING_SLOPE);
        let h = dense(
            z,
            params.get("map.0.weight")?,
            params.get("map.0.bias")?,
            lrelu,
        )?;
        let h = dense(
            h,
            params.get("map.1.weight")?,
            params.get("map.1.bias")?,
            lrelu,
        )?;
        dense(
            h,
            params.get("map.2.weight")?,
            params.get("map.2.bias")?,
            Activation::None,
        )
    }

    pub fn mapping_forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "mapping_forward",
                left: vec![z.len()],
                right: vec![self.latent_dim],
            });
        }
        let tape = Tape::new();
        let p = self.mapping.bind_constant(&tape);
        let w = self.mapping_graph(&p, tape.constant(Tensor::vector(z.to_vec())))?;
        Ok(w.value().into_data())
    }

    /// Rows of `z` (`[B, d]`) through `G_m`.
    pub fn map_batch(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.mapping.bind_constant(&tape);
        Ok(self.mapping_graph(&p, tape.constant(z.clone()))?.value())
    }

    /// `G_s(W⁺, θ, η)` as an `[n, n]` variable with values in `(0, 1)`.
    pub fn synthesis_graph<'t>(
        &self,
        syn: &BoundParams<'t>,
        noise: &BoundParams<'t>,
        wplus: Var<'t>,
    ) -> Result<Var<'t>> {
        let (l, d, c) = (self.layers, self.latent_dim, self.channels);
        if wplus.shape() != [l, d] {
            return Err(Error::ShapeMismatch {
                op: "synthesis(wplus)",
                left: wplus.shape(),
                right: vec![l, d],
            });
        }
        let mut x = syn.get("syn.const")?;
        let mut side = CONST_SIDE;
        for i in 0..l {
            let up = side * 2;
            let cells = up * up;
            x = x.gather(upsample_indices(c, side), vec![c, up, up])?;
            x = x.conv2d_separable(&BLUR)?.reshape(vec![c, cells])?;
            x = syn.get(&format!("syn.{i}.mix"))?.matmul(x)?;

            let row = wplus.slice_rows(i, i + 1)?.reshape(vec![d, 1])?;
            let style = syn
                .get(&format!("syn.{i}.style"))?
                .matmul(row)?
                .add_scalar(1.0);
            x = x.mul(style.repeat_cols(cells)?)?;
            x = x.add(syn.get(&format!("syn.{i}.bias"))?.repeat_cols(cells)?)?;

            let strength = syn.get(&format!("syn.{i}.noise_strength"))?;
            let eta = noise.get(&noise_name(i))?;
            if eta.shape() != [up, up] {
                return Err(Error::ShapeMismatch {
                    op: "synthesis(noise)",
                    left: eta.shape(),
                    right: vec![up, up],
                });
            }
            let scaled = strength
                .gather(Rc::from(vec![0; cells]), vec![cells])?
                .mul(eta.reshape(vec![cells])?)?;
            x = x.add(scaled.repeat_rows(c)?)?.leaky_relu(LRELU_SLOPE);
            side = up;
        }
        let rgb = syn.get("syn.rgb.weight")?.matmul(x)?;
        let rgb = rgb.add(syn.get("syn.rgb.bias")?.repeat_cols(side * side)?)?;
        rgb.tanh()
            .add_scalar(1.0)
            .scale(0.5)
            .reshape(vec![side, side])
    }

    pub fn synthesize(&self, wplus: &ExtendedLatent) -> Result<Image> {
        self.synthesize_with(wplus, &self.synthesis, &self.noise)
    }

    pub fn synthesize_with(
        &self,
        wplus: &ExtendedLatent,
        theta: &ParamStore,
        noise: &ParamStore,
    ) -> Result<Image> {
        let tape = Tape::new();
        let syn = theta.bind_constant(&tape);
        let eta = noise.bind_constant(&tape);
        let img = self.synthesis_graph(&syn, &eta, tape.constant(wplus.tensor().clone()))?;
        Image::from_tensor(img.value())
    }

    /// W-space generation: `w` on every layer.
    pub fn generate_w(&self, w: &[f64]) -> Result<Image> {
        self.synthesize(&ExtendedLatent::broadcast(w, self.layers))
    }

    /// `G_m(z)` for `count` seeded standard-normal `z`, as rows of a
    /// `[count, d]` tensor.
    pub fn sample_w(&self, count: usize, seed: u64, exec: Execution) -> Result<Tensor> {
        let d = self.latent_dim;
        let chunks = count.div_ceil(MEAN_CHUNK);
        let parts = parallel::map_range(exec, chunks, |k| {
            let rows = MEAN_CHUNK.min(count - k * MEAN_CHUNK);
            let mut rng = seed::rng(seed::derive(seed, k as u64));
            let z: Vec<f64> = (0..rows * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            self.map_batch(&Tensor::new(vec![rows, d], z)?)
        });
        let mut data = Vec::with_capacity(count * d);
        for p in parts {
            data.extend_from_slice(p?.data());
        }
        Tensor::new(vec![count, d], data)
    }
}

/// Average of `G_m(z_k)` over `count` seeded samples.
pub fn mean_latent(
    bundle: &GeneratorBundle,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("mean_latent needs at least one sample"));
    }
    let w = bundle.sample_w(count, seed, exec)?;
    let d = bundle.latent_dim;
    let mut mean = vec![0.0; d];
    for row in w.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    Ok(mean.into_iter().map(|m| m / count as f64).collect())
}

fn upsample_indices(channels: usize, side: usize) -> Rc<[usize]> {
    let up = side * 2;
    let mut idx = Vec::with_capacity(channels * up * up);
    for ch in 0..channels {
        for r in 0..up {
            for col in 0..up {
                idx.push(ch * side * side + (r / 2) * side + col / 2);
            }
        }
    }
    idx.into()
}
