use crate::error::{Error, Result};

/// `{u : ||u - center||_1 <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct L1Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Slack on membership tests: points within `radius + MEMBERSHIP_TOL` are
/// inside and left untouched by the projection.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

impl L1Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!(
                "l1 ball radius must be positive, got {radius}"
            )));
        }
        Ok(L1Ball { center, radius })
    }

    pub fn distance(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.center).map(|(a, c)| (a - c).abs()).sum()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        self.distance(v) <= self.radius + MEMBERSHIP_TOL
    }
}

/// Euclidean projection of `v` onto `ball`.
///
/// Sort-based: with `u = |v - c|` sorted descending and `rho` the last index
/// where `u_rho > (sum_{i<=rho} u_i - r) / rho`, the soft threshold is
/// `theta = (sum_{i<=rho} u_i - r) / rho` and the result is
/// `c + sign(v - c) * max(u - theta, 0)`.
pub fn project_l1(v: &[f64], ball: &L1Ball) -> Vec<f64> {
    let mut out = v.to_vec();
    project_l1_in_place(&mut out, ball);
    out
}

pub fn project_l1_in_place(v: &mut [f64], ball: &L1Ball) {
    assert_eq!(v.len(), ball.center.len(), "ball dimension mismatch");
    if ball.contains(v) {
        return;
    }
    let mut u: Vec<f64> = v
        .iter()
        .zip(&ball.center)
        .map(|(a, c)| (a - c).abs())
        .collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - ball.radius) / (j + 1) as f64;
        if uj > t {
            theta = t;
        } else {
            break;
        }
    }
    for (x, c) in v.iter_mut().zip(&ball.center) {
        let diff = *x - c;
        let mag = (diff.abs() - theta).max(0.0);
        *x = c + diff.signum() * mag;
    }
}
