//! Multi-head self-attention with a global context vector fused into keys and
//! values.
//!
//! Rows of the token matrix are tokens; row 0 is the CLS token. The context
//! vector `g` is a softmax-weighted sum of the patch rows only, and is added
//! (through `w_gk`, `w_gv`) to every key and value row, CLS included.
//!
//! Because the key-side term is the same for every key, it only shifts each
//! query's scores by a constant, which the softmax removes. `w_gk` is kept for
//! parity with the formulation but its gradient is always zero.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::ops::{normal_vector, softmax, softmax_rows, softmax_rows_backward, trunc_normal_matrix};
use super::params::impl_parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// Scores patch tokens for the context aggregation.
    pub w_g: Array1<f64>,
    pub w_gk: Array2<f64>,
    pub w_gv: Array2<f64>,
}

impl_parameters!(AttentionParams { w_q, w_k, w_v, w_g, w_gk, w_gv });

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self {
            w_q: trunc_normal_matrix(rng, dim, dim, 0.02),
            w_k: trunc_normal_matrix(rng, dim, dim, 0.02),
            w_v: trunc_normal_matrix(rng, dim, dim, 0.02),
            w_g: normal_vector(rng, dim, 0.02),
            w_gk: trunc_normal_matrix(rng, dim, dim, 0.02),
            w_gv: trunc_normal_matrix(rng, dim, dim, 0.02),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }
}

/// Softmax-weighted aggregate of the patch tokens: returns `(g, alpha)` with
/// `alpha_i = softmax_i(x_i . w_g)` and `g = sum_i alpha_i x_i`.
pub fn global_context(patches: ArrayView2<f64>, w_g: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if patches.ncols() != w_g.len() {
        return Err(Error::Shape {
            context: "global context weights".into(),
            expected: vec![patches.ncols()],
            actual: vec![w_g.len()],
        });
    }
    if patches.nrows() == 0 {
        return Err(Error::DimensionMismatch("global context needs at least one patch token".into()));
    }
    let scores = patches.dot(&w_g);
    let alpha = softmax(scores.view());
    let g = patches.t().dot(&alpha);
    Ok((g, alpha))
}

pub struct AttentionCache {
    pub alpha: Array1<f64>,
    pub g: Array1<f64>,
    pub q: Array2<f64>,
    pub k_tilde: Array2<f64>,
    pub v_tilde: Array2<f64>,
    /// Row-stochastic attention matrix per head.
    pub probs: Vec<Array2<f64>>,
}

fn check_shapes(x: &Array2<f64>, p: &AttentionParams, num_heads: usize) -> Result<usize> {
    let d = p.dim();
    let expect = [d, d];
    for (name, m) in [("w_q", &p.w_q), ("w_k", &p.w_k), ("w_v", &p.w_v), ("w_gk", &p.w_gk), ("w_gv", &p.w_gv)] {
        if m.shape() != expect {
            return Err(Error::Shape {
                context: format!("attention {name}"),
                expected: expect.to_vec(),
                actual: m.shape().to_vec(),
            });
        }
    }
    if x.ncols() != d || p.w_g.len() != d {
        return Err(Error::Shape {
            context: "attention input".into(),
            expected: vec![x.nrows(), d],
            actual: x.shape().to_vec(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::DimensionMismatch("attention needs at least one token".into()));
    }
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::DimensionMismatch(format!("dim {d} is not divisible by {num_heads} heads")));
    }
    Ok(d / num_heads)
}

/// Forward pass. `x` is (N+1) x D with the CLS token in row 0.
pub fn gc_attention(x: &Array2<f64>, p: &AttentionParams, num_heads: usize) -> Result<(Array2<f64>, AttentionCache)> {
    let dk = check_shapes(x, p, num_heads)?;
    let d = p.dim();
    let (g, alpha) = if x.nrows() > 1 {
        global_context(x.slice(s![1.., ..]), p.w_g.view())?
    } else {
        (Array1::zeros(d), Array1::zeros(0))
    };
    let q = x.dot(&p.w_q);
    let k_tilde = x.dot(&p.w_k) + &g.dot(&p.w_gk);
    let v_tilde = x.dot(&p.w_v) + &g.dot(&p.w_gv);
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let scores = q.slice(cols).dot(&k_tilde.slice(cols).t()) * scale;
        let a = softmax_rows(scores.view());
        out.slice_mut(cols).assign(&a.dot(&v_tilde.slice(cols)));
        probs.push(a);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("global context attention output".into()));
    }
    Ok((
        out,
        AttentionCache {
            alpha,
            g,
            q,
            k_tilde,
            v_tilde,
            probs,
        },
    ))
}

/// Backward pass. Accumulates parameter gradients into `grad` and returns the
/// gradient with respect to `x`.
pub fn gc_attention_backward(
    x: &Array2<f64>,
    p: &AttentionParams,
    cache: &AttentionCache,
    dout: &Array2<f64>,
    grad: &mut AttentionParams,
) -> Array2<f64> {
    let num_heads = cache.probs.len();
    let d = p.dim();
    let dk = d / num_heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let mut dq = Array2::zeros(x.raw_dim());
    let mut dk_tilde = Array2::zeros(x.raw_dim());
    let mut dv_tilde = Array2::zeros(x.raw_dim());
    for (h, a) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let dout_h = dout.slice(cols);
        let da = dout_h.dot(&cache.v_tilde.slice(cols).t());
        dv_tilde.slice_mut(cols).assign(&a.t().dot(&dout_h));
        let dscores = softmax_rows_backward(a, &da) * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&cache.k_tilde.slice(cols)));
        dk_tilde.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }

    // K~ = X Wk + 1 (g Wgk), V~ = X Wv + 1 (g Wgv)
    let dkg = dk_tilde.sum_axis(Axis(0));
    let dvg = dv_tilde.sum_axis(Axis(0));
    let g_col = cache.g.view().insert_axis(Axis(1));
    grad.w_gk += &g_col.dot(&dkg.view().insert_axis(Axis(0)));
    grad.w_gv += &g_col.dot(&dvg.view().insert_axis(Axis(0)));
    let dg = p.w_gk.dot(&dkg) + p.w_gv.dot(&dvg);

    grad.w_q += &x.t().dot(&dq);
    grad.w_k += &x.t().dot(&dk_tilde);
    grad.w_v += &x.t().dot(&dv_tilde);
    let mut dx = dq.dot(&p.w_q.t()) + dk_tilde.dot(&p.w_k.t()) + dv_tilde.dot(&p.w_v.t());

    if x.nrows() > 1 {
        let patches = x.slice(s![1.., ..]);
        let alpha = &cache.alpha;
        // g = sum_i alpha_i x_i ; alpha = softmax(X_p w_g)
        let dalpha = patches.dot(&dg);
        let mean = alpha.dot(&dalpha);
        let dscore = alpha * &(dalpha - mean);
        grad.w_g += &patches.t().dot(&dscore);
        let mut dpatch = dx.slice_mut(s![1.., ..]);
        dpatch += &alpha.view().insert_axis(Axis(1)).dot(&dg.view().insert_axis(Axis(0)));
        dpatch += &dscore.view().insert_axis(Axis(1)).dot(&p.w_g.view().insert_axis(Axis(0)));
    }
    dx
}
