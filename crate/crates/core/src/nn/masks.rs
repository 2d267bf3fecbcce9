use crate::seed::splitmix64;
use crate::tensor::Tensor;

/// Binary connectivity masks for an autoregressive MLP over `d` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoregressiveMasks {
    /// `[hidden_0, d]`, `[hidden_1, hidden_0]`, ..., `[d, hidden_last]`.
    pub masks: Vec<Tensor>,
    /// Degree of every unit, input layer first.
    pub degrees: Vec<Vec<usize>>,
}

/// Degree-based masks in the MADE style.
///
/// Inputs get degrees `1..=d`. Hidden unit `k` of layer `l` gets degree
/// `1 + (k + offset_l) mod (d - 1)` where `offset_l` comes from the seed, so
/// every degree in `1..d` is used. A hidden unit sees inputs with degree
/// `<=` its own; output `i` (degree `i`) sees hidden units with degree `< i`,
/// hence depends only on inputs `j < i`. With `d == 1` every output mask row
/// is zero and the conditioner is constant.
pub fn make_autoregressive_masks(d: usize, hidden: &[usize], seed: u64) -> AutoregressiveMasks {
    assert!(d >= 1, "autoregressive masks need d >= 1");
    let span = d.saturating_sub(1).max(1);
    let mut degrees = vec![(1..=d).collect::<Vec<_>>()];
    for (l, &width) in hidden.iter().enumerate() {
        let offset = (splitmix64(seed ^ (l as u64 + 1)) % span as u64) as usize;
        degrees.push((0..width).map(|k| 1 + (k + offset) % span).collect());
    }
    let mut masks = Vec::with_capacity(hidden.len() + 1);
    for l in 1..degrees.len() {
        let (prev, cur) = (&degrees[l - 1], &degrees[l]);
        let data = cur
            .iter()
            .flat_map(|&dc| prev.iter().map(move |&dp| f64::from(u8::from(dc >= dp))))
            .collect();
        masks.push(Tensor::new(vec![cur.len(), prev.len()], data).expect("mask shape"));
    }
    let last = degrees.last().expect("input degrees");
    let out: Vec<usize> = (1..=d).collect();
    let data = out
        .iter()
        .flat_map(|&o| last.iter().map(move |&dp| f64::from(u8::from(o > dp))))
        .collect();
    masks.push(Tensor::new(vec![d, last.len()], data).expect("mask shape"));
    degrees.push(out);
    AutoregressiveMasks { masks, degrees }
}
