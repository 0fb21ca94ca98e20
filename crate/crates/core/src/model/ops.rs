//! Differentiable building blocks. Every forward returns the values its
//! backward needs; backward functions accumulate parameter gradients into a
//! gradient struct of the same type.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::impl_parameters;

const LN_EPS: f64 = 1e-6;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Gaussian sample truncated to two standard deviations.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn trunc_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || trunc_normal(rng, std))
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Max-subtracted softmax of a vector.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}

pub fn softmax_rows(scores: ArrayView2<f64>) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let p = softmax(row.view());
        row.assign(&p);
    }
    out
}

/// Backward of row-wise softmax: dS = A * (dA - rowsum(dA * A)).
pub fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let dot = (dprobs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(dprobs - &dot)
}

pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl_parameters!(LayerNorm { gamma, beta });

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(0.0, |a, &v| a + v * v) / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for r in 0..dy.nrows() {
            let g = dxhat.row(r);
            let xh = cache.xhat.row(r);
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            let is = cache.inv_std[r];
            dx.row_mut(r)
                .assign(&((&g - mean_g - &(&xh * mean_gx)) * is));
        }
        dx
    }
}

/// Affine map `y = x W + b` with `W` stored as (in, out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl_parameters!(Linear { weight, bias });

impl Linear {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, din: usize, dout: usize) -> Self {
        Self {
            weight: trunc_normal_matrix(rng, din, dout, 0.02),
            bias: Array1::zeros(dout),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

/// 3x3 convolution with padding 1 over feature maps stored as (H*W, C).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    /// (out_channels, 9 * in_channels), columns ordered (ky, kx, c).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl_parameters!(Conv3x3 { weight, bias });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl Geometry {
    pub fn out_dims(&self) -> (usize, usize) {
        (
            (self.height - 1) / self.stride + 1,
            (self.width - 1) / self.stride + 1,
        )
    }
}

impl Conv3x3 {
    /// He-style truncated normal initialization.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize) -> Self {
        let std = (2.0 / (9 * cin) as f64).sqrt();
        Self {
            weight: trunc_normal_matrix(rng, cout, 9 * cin, std),
            bias: Array1::zeros(cout),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / 9
    }

    /// Returns the output map and the im2col matrix needed by backward.
    pub fn forward(&self, x: &Array2<f64>, geo: Geometry) -> (Array2<f64>, Array2<f64>) {
        let cols = im2col(x, geo);
        let y = cols.dot(&self.weight.t()) + &self.bias;
        (y, cols)
    }

    pub fn backward(&self, cols: &Array2<f64>, dy: &Array2<f64>, geo: Geometry, grad: &mut Conv3x3) -> Array2<f64> {
        grad.weight += &dy.t().dot(cols);
        grad.bias += &dy.sum_axis(Axis(0));
        let dcols = dy.dot(&self.weight);
        col2im(&dcols, geo, self.in_channels())
    }
}

fn im2col(x: &Array2<f64>, geo: Geometry) -> Array2<f64> {
    let c = x.ncols();
    let (ho, wo) = geo.out_dims();
    let mut cols = Array2::zeros((ho * wo, 9 * c));
    for oy in 0..ho {
        for ox in 0..wo {
            let r = oy * wo + ox;
            for ky in 0..3 {
                let iy = (oy * geo.stride + ky) as isize - 1;
                if iy < 0 || iy >= geo.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * geo.stride + kx) as isize - 1;
                    if ix < 0 || ix >= geo.width as isize {
                        continue;
                    }
                    let src = iy as usize * geo.width + ix as usize;
                    let off = (ky * 3 + kx) * c;
                    cols.slice_mut(s![r, off..off + c]).assign(&x.row(src));
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, geo: Geometry, c: usize) -> Array2<f64> {
    let (ho, wo) = geo.out_dims();
    let mut dx = Array2::zeros((geo.height * geo.width, c));
    for oy in 0..ho {
        for ox in 0..wo {
            let r = oy * wo + ox;
            for ky in 0..3 {
                let iy = (oy * geo.stride + ky) as isize - 1;
                if iy < 0 || iy >= geo.height as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * geo.stride + kx) as isize - 1;
                    if ix < 0 || ix >= geo.width as isize {
                        continue;
                    }
                    let dst = iy as usize * geo.width + ix as usize;
                    let off = (ky * 3 + kx) * c;
                    let mut row = dx.row_mut(dst);
                    row += &dcols.slice(s![r, off..off + c]);
                }
            }
        }
    }
    dx
}
