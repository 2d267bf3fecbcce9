use rand::Rng;

use crate::degrade::{robustness_pipeline, Corruption};
use crate::error::{Error, Result};
use crate::generator::{GeneratorBundle, Image};
use crate::parallel::{self, Execution};
use crate::seed;
use crate::solver::Target;

use super::config::Perturbation;

const BACKGROUND: f64 = 0.05;

/// `count` grayscale images of one to three Gaussian blobs on a dark
/// background. Per blob: centre uniform in `[0.15, 0.85] * side` on both
/// axes, width uniform in `[0.06, 0.2] * side`, peak uniform in `[0.4, 0.9]`.
/// Pixels are `clamp(0.05 + sum of blobs, 0, 1)`.
pub fn make_blob_dataset(count: usize, side: usize, seed: u64) -> Result<Vec<Image>> {
    if count == 0 {
        return Err(Error::invalid("blob dataset needs at least one image"));
    }
    let base = seed::derive(seed, seed::DATASET);
    (0..count)
        .map(|k| {
            let mut rng = seed::rng(seed::derive(base, k as u64));
            let s = side as f64;
            let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
                .map(|_| {
                    (
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(0.06..0.2) * s,
                        rng.random_range(0.4..0.9),
                    )
                })
                .collect();
            let mut data = vec![BACKGROUND; side * side];
            for (i, px) in data.iter_mut().enumerate() {
                let (r, c) = ((i / side) as f64 + 0.5, (i % side) as f64 + 0.5);
                for &(cr, cc, w, a) in &blobs {
                    let d2 = (r - cr).powi(2) + (c - cc).powi(2);
                    *px += a * (-d2 / (2.0 * w * w)).exp();
                }
                *px = px.clamp(0.0, 1.0);
            }
            Image::new(side, data)
        })
        .collect()
}

/// Brighten or darken one seeded square patch of `img`.
pub fn perturb_patch(img: &Image, p: &Perturbation, seed: u64) -> Result<Image> {
    let n = img.side();
    let k = ((p.size * n as f64).round() as usize).clamp(1, n);
    let mut rng = seed::rng(seed);
    let r0 = rng.random_range(0..=n - k);
    let c0 = rng.random_range(0..=n - k);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut out = img.clone();
    for r in r0..r0 + k {
        for c in c0..c0 + k {
            let v = &mut out.data_mut()[r * n + c];
            *v = (*v + sign * p.amplitude).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Generated, perturbed or blob targets with their (possibly corrupted)
/// observations. Target `k` uses seed streams derived from `k`, so a
/// prefix of a larger suite is the smaller suite.
#[allow(clippy::too_many_arguments)]
pub fn make_targets(
    generator: &GeneratorBundle,
    kind: super::config::TargetKind,
    count: usize,
    factor: usize,
    corruption: Corruption,
    perturbation: &Perturbation,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Target>> {
    use super::config::TargetKind;
    let base = seed::derive(seed, seed::TARGETS);
    let hrs: Vec<Image> = match kind {
        TargetKind::Blobs => make_blob_dataset(count, generator.side(), base)?,
        _ => {
            let items: Vec<usize> = (0..count).collect();
            parallel::try_map(exec, &items, |_, &k| {
                let w =
                    generator.sample_w(1, seed::derive(base, k as u64), Execution::Sequential)?;
                let img = generator.generate_w(w.data())?;
                if kind == TargetKind::Perturbed {
                    let s = seed::derive(seed::derive(seed, seed::PERTURBATION), k as u64);
                    perturb_patch(&img, perturbation, s)
                } else {
                    Ok(img)
                }
            })?
        }
    };
    let cseed = seed::derive(seed, seed::CORRUPTION);
    hrs.into_iter()
        .enumerate()
        .map(|(k, hr)| {
            let lr = robustness_pipeline(&hr, corruption, factor, seed::derive(cseed, k as u64))?;
            Ok(Target { hr, lr })
        })
        .collect()
}
