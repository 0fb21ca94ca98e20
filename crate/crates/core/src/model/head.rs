use ndarray::{Array1, Array2};
use rand::Rng;

use super::ops::{softmax, trunc_normal_matrix};
use super::params::impl_parameters;
use crate::error::{Error, Result};

/// Fully connected softmax classifier over the final CLS embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// (C, D)
    pub w_c: Array2<f64>,
    pub b_c: Array1<f64>,
}

impl_parameters!(ClassifierHead { w_c, b_c });

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, num_classes: usize) -> Self {
        Self {
            w_c: trunc_normal_matrix(rng, num_classes, dim, 0.02),
            b_c: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.b_c.len()
    }

    pub fn logits(&self, z_cls: &Array1<f64>) -> Result<Array1<f64>> {
        if z_cls.len() != self.w_c.ncols() {
            return Err(Error::Shape {
                context: "classifier input".into(),
                expected: vec![self.w_c.ncols()],
                actual: vec![z_cls.len()],
            });
        }
        Ok(self.w_c.dot(z_cls) + &self.b_c)
    }

    /// Returns dL/dz_cls and accumulates head gradients.
    pub fn backward(&self, z_cls: &Array1<f64>, dlogits: &Array1<f64>, grad: &mut ClassifierHead) -> Array1<f64> {
        grad.w_c += &dlogits
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&z_cls.view().insert_axis(ndarray::Axis(0)));
        grad.b_c += dlogits;
        self.w_c.t().dot(dlogits)
    }
}

/// Class probabilities `softmax(W_c z + b_c)`.
pub fn classify(z_cls: &Array1<f64>, head: &ClassifierHead) -> Result<Array1<f64>> {
    Ok(softmax(head.logits(z_cls)?.view()))
}

pub fn argmax(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
