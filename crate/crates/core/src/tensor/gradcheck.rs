use std::rc::Rc;

use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - fd_i| / max(1, |fd_i|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates whose `x ± h` probes changed the branch of some `abs` or
    /// `leaky_relu`; the central difference is meaningless there.
    pub excluded: Vec<usize>,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<(f64, u64)>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let y = f(tape.constant(x.clone()))?;
    if y.len() != 1 {
        return Err(Error::NonScalarRoot(y.shape()));
    }
    Ok((y.item(), tape.branch_signature()))
}

/// Check the gradient of a scalar function at `x` with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(xv)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    if let Some(i) = analytic.first_non_finite() {
        return Err(Error::NonFinite {
            context: "analytic gradient".into(),
            index: i,
        });
    }
    let center_sig = tape.branch_signature();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        excluded: Vec::new(),
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (fp, sp) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let (fm, sm) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite-difference probe".into(),
                index: i,
            });
        }
        if sp != center_sig || sm != center_sig {
            report.excluded.push(i);
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Dense Jacobian `[outputs, inputs]` of `f` at `x`, one backward pass per
/// output element.
pub fn jacobian<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(xv)?;
    let (m, n) = (y.len(), x.len());
    let mut data = vec![0.0; m * n];
    for j in 0..m {
        tape.zero_grad();
        let yj = y.gather(Rc::from(vec![j]), Vec::<usize>::new())?;
        tape.backward(yj)?;
        if let Some(g) = tape.grad(xv) {
            data[j * n..(j + 1) * n].copy_from_slice(g.data());
        }
    }
    Tensor::new(vec![m, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -2.0, 5.0]);
        let r = grad_check(|v| Ok(v.sum()), &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-10);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn abs_kink_is_excluded() {
        let x = Tensor::vector(vec![0.0, 1.0, -0.5]);
        let r = grad_check(|v| Ok(v.abs().sum()), &x, 1e-3).unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn rejects_bad_step_and_non_scalar() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|v| Ok(v.sum()), &x, 0.0).is_err());
        assert!(grad_check(|v| Ok(v.square()), &Tensor::vector(vec![1.0, 2.0]), 1e-3).is_err());
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let x = Tensor::vector(vec![1.0, 1e-4]);
        let err = grad_check(|v| Ok(v.exp().scale(1e308).exp().sum()), &x, 1e-3);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn jacobian_of_elementwise_square() {
        let x = Tensor::vector(vec![1.0, -2.0]);
        let j = jacobian(|v| Ok(v.square()), &x).unwrap();
        assert_eq!(j.data(), &[2.0, 0.0, 0.0, -4.0]);
    }

    mod every_op {
        use super::super::*;
        use crate::seed;
        use proptest::prelude::*;
        use rand::Rng;

        type Op = fn(Var<'_>) -> Result<Var<'_>>;

        fn weigh(y: Var<'_>) -> Result<Var<'_>> {
            let w = Tensor::new(
                y.shape(),
                (0..y.len()).map(|i| (0.9 * i as f64 + 0.4).cos()).collect(),
            )?;
            Ok(y.mul(y.tape().constant(w))?.sum())
        }

        fn other(x: Var<'_>) -> Var<'_> {
            // Shape only: values taken from x would move under the probe.
            let data = (0..x.len()).map(|i| (i as f64).sin()).collect();
            x.tape().constant(Tensor::new(x.shape(), data).unwrap())
        }

        const OPS: &[(&str, Op)] = &[
            ("add", |x| weigh(x.add(other(x))?)),
            ("sub", |x| weigh(other(x).sub(x)?)),
            ("mul", |x| weigh(x.mul(x)?)),
            ("matmul", |x| weigh(x.matmul(x.transpose()?)?)),
            ("sum", |x| Ok(x.square().sum())),
            ("mean", |x| Ok(x.square().mean())),
            ("row_sum", |x| weigh(x.row_sum()?.square())),
            ("abs", |x| weigh(x.abs())),
            ("exp", |x| weigh(x.exp())),
            ("log", |x| weigh(x.square().add_scalar(0.5).log()?)),
            ("tanh", |x| weigh(x.tanh())),
            ("sqrt", |x| weigh(x.square().add_scalar(0.5).sqrt()?)),
            ("leaky_relu", |x| weigh(x.leaky_relu(0.2))),
            ("l2_norm", |x| Ok(x.l2_norm())),
            ("square", |x| weigh(x.square())),
            ("scale", |x| weigh(x.scale(-1.7).square())),
            ("reshape", |x| {
                let n = x.len();
                weigh(x.reshape(vec![n])?.square())
            }),
            ("concat", |x| weigh(x.tape().concat(&[x.square(), x])?)),
            ("gather", |x| {
                let n = x.len();
                let idx: std::rc::Rc<[usize]> = (0..n).map(|i| (i * 7 + 3) % n).collect();
                weigh(x.gather(idx, vec![n])?.square())
            }),
            ("conv2d_separable", |x| {
                weigh(x.conv2d_separable(&[0.25, 0.5, 0.25])?.square())
            }),
        ];

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(50))]
            #[test]
            fn every_op_matches_central_differences(s in any::<u64>()) {
                let mut rng = seed::rng(s);
                let (r, c) = (rng.random_range(2..=8), rng.random_range(2..=8));
                let x = Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
                for (name, op) in OPS {
                    let rep = grad_check(op, &x, 1e-5).unwrap();
                    prop_assert!(rep.max_rel_error < 1e-4, "{} at seed {}: {:?}", name, s, rep);
                }
            }
        }
    }
}
