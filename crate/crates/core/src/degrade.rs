//! Forward operator and corruptions.
//!
//! Downscaling is separable antialiased Catmull–Rom bicubic (`a = -0.5`):
//! output sample `o` is centered at input coordinate `(o + 0.5) f - 0.5`,
//! the kernel is stretched by the factor `f`, taps falling outside the image
//! are reflected, and each row of weights is normalized to sum to 1. The
//! resulting matrix `D_r` acts as `D(X) = D_r X D_r^T`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::generator::Image;
use crate::seed;
use crate::tensor::{conv1d, reflect_index, Axis, Tensor, Var};

const CUBIC_A: f64 = -0.5;
/// Motion blur lengths are given at this reference resolution.
pub const MOTION_REFERENCE_SIDE: usize = 1024;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// `[n / factor, n]` resampling matrix.
pub fn bicubic_matrix(n: usize, factor: usize) -> Result<Tensor> {
    if factor == 0 || !n.is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "downscale factor {factor} does not divide side {n}"
        )));
    }
    let m = n / factor;
    let f = factor as f64;
    let mut data = vec![0.0; m * n];
    for o in 0..m {
        let center = (o as f64 + 0.5) * f - 0.5;
        let lo = (center - 2.0 * f).floor() as isize;
        let hi = (center + 2.0 * f).ceil() as isize;
        let row = &mut data[o * n..(o + 1) * n];
        let mut total = 0.0;
        for i in lo..=hi {
            let wgt = cubic((i as f64 - center) / f);
            if wgt != 0.0 {
                row[reflect_index(i, n)] += wgt;
                total += wgt;
            }
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(vec![m, n], data)
}

/// Bicubic downscaling `D` by an integer factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Bicubic {
    factor: usize,
    rows: Tensor,
    rows_t: Tensor,
}

impl Bicubic {
    pub fn new(side: usize, factor: usize) -> Result<Self> {
        let rows = bicubic_matrix(side, factor)?;
        let (m, n) = (rows.shape()[0], rows.shape()[1]);
        let mut t = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                t[j * m + i] = rows.data()[i * n + j];
            }
        }
        Ok(Bicubic {
            factor,
            rows,
            rows_t: Tensor::new(vec![n, m], t)?,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn input_side(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn output_side(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.rows
    }

    pub fn graph<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let n = self.input_side();
        if x.shape() != [n, n] {
            return Err(Error::ShapeMismatch {
                op: "bicubic",
                left: x.shape(),
                right: vec![n, n],
            });
        }
        let tape = x.tape();
        tape.constant(self.rows.clone())
            .matmul(x)?
            .matmul(tape.constant(self.rows_t.clone()))
    }

    fn sandwich(a: &Tensor, x: &[f64], b: &Tensor, side_in: usize) -> Vec<f64> {
        // a [p, side_in] * X [side_in, side_in] * b [side_in, q]
        let p = a.shape()[0];
        let q = b.shape()[1];
        let mut ax = vec![0.0; p * side_in];
        for i in 0..p {
            for k in 0..side_in {
                let aik = a.data()[i * side_in + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..side_in {
                    ax[i * side_in + j] += aik * x[k * side_in + j];
                }
            }
        }
        let mut out = vec![0.0; p * q];
        for i in 0..p {
            for k in 0..side_in {
                let v = ax[i * side_in + k];
                if v == 0.0 {
                    continue;
                }
                for j in 0..q {
                    out[i * q + j] += v * b.data()[k * q + j];
                }
            }
        }
        out
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        let n = self.input_side();
        if img.side() != n {
            return Err(Error::ShapeMismatch {
                op: "bicubic",
                left: vec![img.side(), img.side()],
                right: vec![n, n],
            });
        }
        Image::new(
            self.output_side(),
            Bicubic::sandwich(&self.rows, img.data(), &self.rows_t, n),
        )
    }

    /// `D^T u`: adjoint of [`Bicubic::apply`], from LR back to HR size.
    pub fn adjoint(&self, lr: &[f64]) -> Result<Vec<f64>> {
        let m = self.output_side();
        if lr.len() != m * m {
            return Err(Error::invalid("adjoint input has the wrong size"));
        }
        Ok(Bicubic::sandwich(&self.rows_t, lr, &self.rows, m))
    }
}

pub fn bicubic_downsample(img: &Image, factor: usize) -> Result<Image> {
    Bicubic::new(img.side(), factor)?.apply(img)
}

fn check_param(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!(
            "{name} must be nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// Add i.i.d. `N(0, sigma^2)` noise and clamp to `[0, 1]`.
pub fn gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    check_param("noise sigma", sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out.clamped())
}

/// Replace `round(fraction * pixels)` seeded positions, the first half of
/// them with 0 and the rest with 1.
pub fn salt_pepper(img: &Image, fraction: f64, seed: u64) -> Result<Image> {
    check_param("salt and pepper fraction", fraction)?;
    if fraction > 1.0 {
        return Err(Error::invalid("salt and pepper fraction exceeds 1"));
    }
    let n = img.data().len();
    let count = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut out = img.clone();
    for (k, &i) in idx[..count].iter().enumerate() {
        out.data_mut()[i] = if k < count / 2 { 0.0 } else { 1.0 };
    }
    Ok(out)
}

/// Normalized Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    check_param("blur sigma", sigma)?;
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

fn separable(img: &Image, kernel: &[f64], origin: isize, axes: &[Axis]) -> Result<Image> {
    let s = img.side();
    let mut data = img.data().to_vec();
    for &axis in axes {
        data = conv1d(&data, 1, s, s, kernel, origin, axis, false);
    }
    Image::new(s, data)
}

pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let k = gaussian_kernel(sigma)?;
    let origin = -((k.len() / 2) as isize);
    separable(img, &k, origin, &[Axis::Horizontal, Axis::Vertical])
}

/// Horizontal box average of `length` pixels, reflect padded.
pub fn motion_blur(img: &Image, length: usize) -> Result<Image> {
    if length > img.side() {
        return Err(Error::invalid(format!(
            "motion blur length {length} exceeds image side {}",
            img.side()
        )));
    }
    if length <= 1 {
        return Ok(img.clone());
    }
    let k = vec![1.0 / length as f64; length];
    separable(img, &k, -((length / 2) as isize), &[Axis::Horizontal])
}

/// `round(length * side / 1024)`: a blur length given at the reference
/// resolution, rescaled to `side`.
pub fn scaled_motion_length(length: f64, side: usize) -> usize {
    (length * side as f64 / MOTION_REFERENCE_SIDE as f64).round() as usize
}

/// Corruption applied on top of bicubic downscaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    None,
    Gauss(f64),
    SaltPepper(f64),
    Blur(f64),
    /// Length at the 1024-pixel reference side.
    Motion(f64),
}

impl Corruption {
    /// The four robustness settings at their reference parameters.
    pub fn robustness_suite() -> [Corruption; 4] {
        [
            Corruption::Gauss(0.1),
            Corruption::SaltPepper(0.05),
            Corruption::Blur(1.0),
            Corruption::Motion(100.0),
        ]
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::None => write!(f, "none"),
            Corruption::Gauss(s) => write!(f, "gauss:{s}"),
            Corruption::SaltPepper(p) => write!(f, "sp:{p}"),
            Corruption::Blur(s) => write!(f, "blur:{s}"),
            Corruption::Motion(l) => write!(f, "motion:{l}"),
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Corruption::None);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad corruption spec `{s}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("bad corruption parameter in `{s}`")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "corruption parameter must be nonnegative in `{s}`"
            )));
        }
        match kind {
            "gauss" => Ok(Corruption::Gauss(v)),
            "sp" => Ok(Corruption::SaltPepper(v)),
            "blur" => Ok(Corruption::Blur(v)),
            "motion" => Ok(Corruption::Motion(v)),
            _ => Err(Error::Config(format!("unknown corruption kind `{kind}`"))),
        }
    }
}

/// LR observation of `hr`: motion blur is applied before downscaling, the
/// other corruptions after it.
pub fn robustness_pipeline(
    hr: &Image,
    corruption: Corruption,
    factor: usize,
    seed: u64,
) -> Result<Image> {
    match corruption {
        Corruption::Motion(len) => {
            let blurred = motion_blur(hr, scaled_motion_length(len, hr.side()))?;
            bicubic_downsample(&blurred, factor)
        }
        other => {
            let lr = bicubic_downsample(hr, factor)?;
            match other {
                Corruption::None => Ok(lr),
                Corruption::Gauss(s) => gaussian_noise(&lr, s, seed),
                Corruption::SaltPepper(p) => salt_pepper(&lr, p, seed),
                Corruption::Blur(s) => gaussian_blur(&lr, s),
                Corruption::Motion(_) => unreachable!(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(side: usize, seed: u64) -> Image {
        let mut rng = seed::rng(seed);
        Image::new(
            side,
            (0..side * side).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn factor_one_is_identity() {
        let img = random_image(8, 1);
        assert_eq!(bicubic_downsample(&img, 1).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(32, 0.37).unwrap();
        for f in [2, 4, 8] {
            let lr = bicubic_downsample(&img, f).unwrap();
            assert!(lr.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_non_dividing_factor() {
        assert!(bicubic_downsample(&random_image(16, 2), 3).is_err());
    }

    #[test]
    fn matches_dense_matrix_oracle() {
        // Kronecker form: vec(D_r X D_r^T) = (D_r ⊗ D_r) vec(X).
        let img = random_image(16, 3);
        let d = bicubic_matrix(16, 4).unwrap();
        let lr = bicubic_downsample(&img, 4).unwrap();
        for oi in 0..4 {
            for oj in 0..4 {
                let mut acc = 0.0;
                for i in 0..16 {
                    for j in 0..16 {
                        acc += d.data()[oi * 16 + i] * d.data()[oj * 16 + j] * img.at(i, j);
                    }
                }
                assert!((acc - lr.at(oi, oj)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factor_two_interior_weights() {
        // Center at 2o + 0.5, taps at offsets ±0.25, ±0.75, ±1.25, ±1.75 of
        // the stretched kernel.
        let d = bicubic_matrix(16, 2).unwrap();
        let raw: Vec<f64> = [-1.75f64, -1.25, -0.75, -0.25, 0.25, 0.75, 1.25, 1.75]
            .iter()
            .map(|&t| cubic(t))
            .collect();
        let s: f64 = raw.iter().sum();
        let row = d.row(3);
        for (k, r) in raw.iter().enumerate() {
            assert!((row[3 + k] - r / s).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_matches_apply_and_adjoint() {
        let img = random_image(16, 4);
        let op = Bicubic::new(16, 4).unwrap();
        let tape = crate::tensor::Tape::new();
        let x = tape.param(img.tensor().clone());
        let y = op.graph(x).unwrap();
        let direct = op.apply(&img).unwrap();
        assert!(y.value().max_abs_diff(direct.tensor()) < 1e-12);
        let u = random_image(4, 5);
        let lhs: f64 = direct.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let atu = op.adjoint(u.data()).unwrap();
        let rhs: f64 = img.data().iter().zip(&atu).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn noise_and_salt_pepper() {
        let img = random_image(8, 6);
        assert_eq!(gaussian_noise(&img, 0.0, 1).unwrap(), img);
        let noisy = gaussian_noise(&img, 0.5, 1).unwrap();
        assert!(noisy.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(noisy, gaussian_noise(&img, 0.5, 1).unwrap());
        let sp = salt_pepper(&img, 1.0, 2).unwrap();
        let zeros = sp.data().iter().filter(|&&v| v == 0.0).count();
        let ones = sp.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(zeros + ones, 64);
        assert!(zeros.abs_diff(ones) <= 1);
        let some = salt_pepper(&img, 0.05, 2).unwrap();
        let changed = some
            .data()
            .iter()
            .zip(img.data())
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed <= 3);
        assert!(gaussian_noise(&img, -0.1, 0).is_err());
    }

    #[test]
    fn blur_kernels_are_normalized() {
        for s in [0.3, 1.0, 2.5] {
            let k = gaussian_kernel(s).unwrap();
            assert_eq!(k.len(), 2 * (3.0 * s).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let c = Image::filled(8, 0.6).unwrap();
        assert!(gaussian_blur(&c, 1.0)
            .unwrap()
            .data()
            .iter()
            .all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn blur_on_small_lr_matches_hand_convolution() {
        let img = random_image(4, 7);
        let k = gaussian_kernel(1.0).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0;
                for (a, ka) in k.iter().enumerate() {
                    for (b, kb) in k.iter().enumerate() {
                        let rr = reflect_index(r as isize + a as isize - 3, 4);
                        let cc = reflect_index(c as isize + b as isize - 3, 4);
                        acc += ka * kb * img.at(rr, cc);
                    }
                }
                assert!((acc - out.at(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn motion_blur_rules() {
        assert_eq!(scaled_motion_length(100.0, 32), 3);
        assert_eq!(scaled_motion_length(100.0, 1024), 100);
        let img = random_image(8, 8);
        assert!(motion_blur(&img, 9).is_err());
        let out = motion_blur(&img, 3).unwrap();
        let expect = (img.at(2, 1) + img.at(2, 2) + img.at(2, 3)) / 3.0;
        assert!((out.at(2, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn corruption_strings() {
        for s in ["none", "gauss:0.1", "sp:0.05", "blur:1", "motion:100"] {
            let c: Corruption = s.parse().unwrap();
            assert_eq!(c.to_string().parse::<Corruption>().unwrap(), c);
        }
        assert!("wobble:1".parse::<Corruption>().is_err());
        assert!("gauss".parse::<Corruption>().is_err());
        assert!("blur:-1".parse::<Corruption>().is_err());
    }

    #[test]
    fn pipeline_ordering() {
        let hr = random_image(32, 9);
        let plain = robustness_pipeline(&hr, Corruption::None, 8, 0).unwrap();
        assert_eq!(plain, bicubic_downsample(&hr, 8).unwrap());
        let m = robustness_pipeline(&hr, Corruption::Motion(100.0), 8, 0).unwrap();
        let expect = bicubic_downsample(&motion_blur(&hr, 3).unwrap(), 8).unwrap();
        assert_eq!(m, expect);
        let b = robustness_pipeline(&hr, Corruption::Blur(1.0), 8, 0).unwrap();
        assert_eq!(b, gaussian_blur(&plain, 1.0).unwrap());
    }
}
