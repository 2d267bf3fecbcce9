use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    None,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::None => x,
            Activation::LeakyRelu(slope) => x.leaky_relu(slope),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `activation(x W^T + b)` for `x` of shape `[batch, in]` or `[in]`.
///
/// `weight` is `[out, in]`, `bias` is `[out]`. A rank-1 input gives a rank-1
/// output.
pub fn dense<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>, act: Activation) -> Result<Var<'t>> {
    let ws = weight.shape();
    if ws.len() != 2 || bias.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch {
            op: "dense(weight, bias)",
            left: ws,
            right: bias.shape(),
        });
    }
    let xs = x.shape();
    let vector = xs.len() == 1;
    let x2 = if vector {
        x.reshape(vec![1, xs[0]])?
    } else {
        x
    };
    let xs2 = x2.shape();
    if xs2.len() != 2 || xs2[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "dense(input, weight)",
            left: xs,
            right: ws,
        });
    }
    let y = x2.matmul(weight.transpose()?)?;
    let y = y.add(bias.repeat_rows(xs2[0])?)?;
    let y = act.apply(y);
    if vector {
        y.reshape(vec![ws[0]])
    } else {
        Ok(y)
    }
}

/// Fan-in scaled uniform init: weights in `±1/sqrt(in)`, zero bias.
fn init_weight(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (inputs as f64).sqrt();
    let data = (0..inputs * outputs)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![outputs, inputs], data).expect("weight shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weight: init_weight(inputs, outputs, rng),
            bias: Tensor::zeros(vec![outputs]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Forward pass with the layer's own weights held constant.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        dense(
            x,
            tape.constant(self.weight.clone()),
            tape.constant(self.bias.clone()),
            self.activation,
        )
    }
}

/// Dense layer whose effective weight is `weight ⊙ mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedDenseLayer {
    pub layer: DenseLayer,
    pub mask: Tensor,
}

impl MaskedDenseLayer {
    pub fn new(layer: DenseLayer, mask: Tensor) -> Result<Self> {
        if mask.shape() != layer.weight.shape() {
            return Err(Error::ShapeMismatch {
                op: "MaskedDenseLayer",
                left: layer.weight.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        Ok(MaskedDenseLayer { layer, mask })
    }

    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let w = tape
            .constant(self.layer.weight.clone())
            .mul(tape.constant(self.mask.clone()))?;
        dense(
            x,
            w,
            tape.constant(self.layer.bias.clone()),
            self.layer.activation,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::tensor::Tape;

    #[test]
    fn identity_layer_passes_input() {
        let layer = DenseLayer::from_parts(
            Tensor::identity(3),
            Tensor::zeros(vec![3]),
            Activation::None,
        )
        .unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        assert_eq!(layer.forward(x).unwrap().value().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weight_gives_bias() {
        let layer = DenseLayer::from_parts(
            Tensor::zeros(vec![2, 3]),
            Tensor::vector(vec![0.25, -4.0]),
            Activation::None,
        )
        .unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(layer.forward(x).unwrap().value().data(), &[0.25, -4.0]);
    }

    #[test]
    fn random_layer_matches_hand_matvec() {
        let mut rng = seed::rng(5);
        let mut layer = DenseLayer::new(3, 2, Activation::LeakyRelu(0.2), &mut rng);
        layer.bias = Tensor::vector(vec![0.1, -0.3]);
        let x = [0.7, -1.1, 0.4];
        let tape = Tape::new();
        let got = layer
            .forward(tape.constant(Tensor::vector(x.to_vec())))
            .unwrap()
            .value();
        for o in 0..2 {
            let mut acc = layer.bias.data()[o];
            for i in 0..3 {
                acc += layer.weight.data()[o * 3 + i] * x[i];
            }
            let expect = if acc > 0.0 { acc } else { 0.2 * acc };
            assert!((got.data()[o] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = seed::rng(9);
        let layer = DenseLayer::new(4, 3, Activation::Tanh, &mut rng);
        let tape = Tape::new();
        let rows =
            Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 0.5, 2.0]]).unwrap();
        let batch = layer.forward(tape.constant(rows.clone())).unwrap().value();
        for r in 0..2 {
            let single = layer
                .forward(tape.constant(Tensor::vector(rows.row(r).to_vec())))
                .unwrap()
                .value();
            assert_eq!(batch.row(r), single.data());
        }
    }

    #[test]
    fn dense_rejects_wrong_input_width() {
        let mut rng = seed::rng(1);
        let layer = DenseLayer::new(3, 2, Activation::None, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(layer.forward(x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn init_is_fan_in_bounded() {
        let mut rng = seed::rng(3);
        let layer = DenseLayer::new(16, 8, Activation::None, &mut rng);
        assert!(layer.weight.data().iter().all(|w| w.abs() <= 0.25));
        assert!(layer.bias.data().iter().all(|&b| b == 0.0));
    }
}
