use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One style vector per synthesis layer: an `L x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedLatent {
    rows: Tensor,
}

impl ExtendedLatent {
    pub fn new(rows: Tensor) -> Result<Self> {
        if rows.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: rows.shape().to_vec(),
                reason: "extended latent must be [layers, d]".into(),
            });
        }
        Ok(ExtendedLatent { rows })
    }

    /// `w` repeated on every layer (the W-space special case).
    pub fn broadcast(w: &[f64], layers: usize) -> Self {
        assert!(layers >= 1 && !w.is_empty());
        let data = (0..layers).flat_map(|_| w.iter().copied()).collect();
        ExtendedLatent {
            rows: Tensor::new(vec![layers, w.len()], data).expect("broadcast shape"),
        }
    }

    pub fn layers(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.rows
    }

    pub fn into_tensor(self) -> Tensor {
        self.rows
    }

    /// All rows identical.
    pub fn is_w_space(&self) -> bool {
        (1..self.layers()).all(|i| self.row(i) == self.row(0))
    }
}
