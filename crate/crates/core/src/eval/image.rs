use crate::degrade::bicubic_downsample;
use crate::error::{Error, Result};
use crate::generator::Image;

/// Reported for identical images instead of infinity.
pub const PSNR_CAP: f64 = 99.0;

fn same_side(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.side() != b.side() {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![a.side(), a.side()],
            right: vec![b.side(), b.side()],
        });
    }
    Ok(())
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_side(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 8,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// Mean luminance term and mean contrast-structure term over all
/// `window x window` positions (stride 1).
fn ssim_terms(a: &Image, b: &Image, p: SsimParams) -> Result<(f64, f64, f64)> {
    same_side(a, b, "ssim")?;
    let n = a.side();
    let w = p.window;
    if w == 0 || n < w {
        return Err(Error::invalid(format!(
            "ssim window {w} needs an image side of at least {w}, got {n}"
        )));
    }
    let count = (w * w) as f64;
    let positions = n - w + 1;
    let (mut full, mut lum, mut cs) = (0.0, 0.0, 0.0);
    for r in 0..positions {
        for c in 0..positions {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + w {
                for j in c..c + w {
                    let (x, y) = (a.at(i, j), b.at(i, j));
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let va = saa / count - ma * ma;
            let vb = sbb / count - mb * mb;
            let cov = sab / count - ma * mb;
            let l = (2.0 * ma * mb + p.c1) / (ma * ma + mb * mb + p.c1);
            let s = (2.0 * cov + p.c2) / (va + vb + p.c2);
            full += l * s;
            lum += l;
            cs += s;
        }
    }
    let k = (positions * positions) as f64;
    Ok((full / k, lum / k, cs / k))
}

/// Windowed SSIM with uniform windows.
pub fn ssim(a: &Image, b: &Image, p: SsimParams) -> Result<f64> {
    Ok(ssim_terms(a, b, p)?.0)
}

fn halve(img: &Image) -> Result<Image> {
    let n = img.side() / 2;
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            data[r * n + c] = 0.25
                * (img.at(2 * r, 2 * c)
                    + img.at(2 * r, 2 * c + 1)
                    + img.at(2 * r + 1, 2 * c)
                    + img.at(2 * r + 1, 2 * c + 1));
        }
    }
    Image::new(n, data)
}

/// Product of contrast-structure terms at the finer scales times full SSIM
/// at the coarsest, with 2x2 average pooling between scales.
pub fn ms_ssim(a: &Image, b: &Image, scales: usize, p: SsimParams) -> Result<f64> {
    same_side(a, b, "ms_ssim")?;
    if scales == 0 {
        return Err(Error::invalid("ms_ssim needs at least one scale"));
    }
    let need = p.window << (scales - 1);
    if a.side() < need {
        return Err(Error::invalid(format!(
            "ms_ssim with {scales} scales needs side >= {need}, got {}",
            a.side()
        )));
    }
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut value = 1.0;
    for s in 0..scales {
        let (full, _, cs) = ssim_terms(&x, &y, p)?;
        if s + 1 == scales {
            value *= full;
        } else {
            value *= cs;
            x = halve(&x)?;
            y = halve(&y)?;
        }
    }
    Ok(value)
}

/// Mean per-pixel `|D(x_hat) - y|`.
pub fn lr_consistency(x_hat: &Image, y: &Image, factor: usize) -> Result<f64> {
    let down = bicubic_downsample(x_hat, factor)?;
    same_side(&down, y, "lr_consistency")?;
    Ok(down
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.data().len() as f64)
}
