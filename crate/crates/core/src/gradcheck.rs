//! Finite-difference verification of the hand-written backward passes.
//!
//! Each check compares analytic gradients against central differences with
//! step `1e-5`. The error of a tensor is
//! `max|a - n| / max(max|a|, max|n|, ABSOLUTE_FLOOR)`
//! over the checked coordinates, and a check reports its worst tensor.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::augment::{preprocess_eval, AugmentPolicy};
use crate::data::synth::synth_image;
use crate::error::Result;
use crate::model::attention::{gc_attention, gc_attention_backward, AttentionParams};
use crate::model::{GcVit, Parameters};
use crate::rng::{stream_rng, Stream};
use crate::train::{smoothed_cross_entropy, smoothed_cross_entropy_backward};

pub const STEP: f64 = 1e-5;
pub const COMPONENT_THRESHOLD: f64 = 1e-4;
pub const END_TO_END_THRESHOLD: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely. Some tensors have an
/// exactly zero gradient (a shift shared by every key cancels in the softmax),
/// where a pure ratio would only measure finite-difference round-off.
pub const ABSOLUTE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub model: ModelConfig,
    /// Coordinates sampled per tensor in the end-to-end check, on top of the
    /// coordinate with the largest analytic gradient.
    pub samples_per_tensor: usize,
    /// Perturbs the analytic gradients before comparison. Used to confirm that
    /// a broken backward pass is actually detected.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::desk_tiny(12),
            samples_per_tensor: 3,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub coordinates: usize,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(ABSOLUTE_FLOOR)
}

fn corrupt_values(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = *v * 1.05 + 1e-3;
    }
}

fn perturb<P: Parameters>(p: &mut P, tensor: usize, index: usize, delta: f64) {
    p.tensors_mut()[tensor].data[index] += delta;
}

fn central<F: FnMut(f64) -> f64>(mut f: F) -> f64 {
    (f(STEP) - f(-STEP)) / (2.0 * STEP)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

fn summarize(name: &str, per_tensor: Vec<(String, f64, usize)>, threshold: f64) -> CheckResult {
    let coordinates = per_tensor.iter().map(|t| t.2).sum();
    let (worst_tensor, max_rel_error) = per_tensor
        .into_iter()
        .map(|(n, e, _)| (n, e))
        .fold((String::new(), 0.0), |acc, cur| if cur.1 > acc.1 || acc.0.is_empty() { cur } else { acc });
    CheckResult {
        name: name.to_string(),
        max_rel_error,
        worst_tensor,
        coordinates,
        threshold,
    }
}

/// Every parameter of one global-context attention layer plus its input.
pub fn check_attention(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = stream_rng(opts.seed, Stream::Gradcheck, &[0]);
    let (tokens, dim, heads) = (6, 8, 2);
    let mut p = AttentionParams::init(&mut rng, dim);
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = 0.4 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
    }
    let x = gaussian_matrix(&mut rng, tokens, dim, 1.0);
    let proj = gaussian_matrix(&mut rng, tokens, dim, 1.0);
    let loss = |x: &Array2<f64>, p: &AttentionParams| -> Result<f64> {
        let (out, _) = gc_attention(x, p, heads)?;
        Ok((&out * &proj).sum())
    };

    let (_, cache) = gc_attention(&x, &p, heads)?;
    let mut grad = p.zeros_like();
    let mut dx = gc_attention_backward(&x, &p, &cache, &proj, &mut grad);
    if opts.corrupt {
        corrupt_values(dx.as_slice_mut().expect("contiguous"));
        for t in grad.tensors_mut() {
            corrupt_values(t.data);
        }
    }

    let mut per_tensor = Vec::new();
    let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
    for (ti, name) in names.iter().enumerate() {
        let analytic = grad.tensors()[ti].data.to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let mut q = p.clone();
            let mut eval = |d: f64| {
                perturb(&mut q, ti, i, d);
                let v = loss(&x, &q).expect("shapes are fixed");
                perturb(&mut q, ti, i, -d);
                v
            };
            numeric.push((eval(STEP) - eval(-STEP)) / (2.0 * STEP));
        }
        per_tensor.push((name.clone(), rel_error(&analytic, &numeric), analytic.len()));
    }
    let numeric_dx: Vec<f64> = (0..x.len())
        .map(|i| {
            central(|d| {
                let mut xp = x.clone();
                xp.as_slice_mut().expect("contiguous")[i] += d;
                loss(&xp, &p).expect("shapes are fixed")
            })
        })
        .collect();
    per_tensor.push(("input".into(), rel_error(dx.as_slice().expect("contiguous"), &numeric_dx), x.len()));
    Ok(summarize("gc_attention", per_tensor, COMPONENT_THRESHOLD))
}

/// Label-smoothed cross-entropy with respect to the logits.
pub fn check_loss(opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = stream_rng(opts.seed, Stream::Gradcheck, &[1]);
    let classes = 12;
    let logits = Array1::from_shape_simple_fn(classes, || 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let label = rng.random_range(0..classes);
    let eps = 0.1;
    let mut analytic = smoothed_cross_entropy_backward(logits.view(), label, eps)?.to_vec();
    if opts.corrupt {
        corrupt_values(&mut analytic);
    }
    let numeric: Vec<f64> = (0..classes)
        .map(|k| {
            central(|d| {
                let mut l = logits.clone();
                l[k] += d;
                smoothed_cross_entropy(l.view(), label, eps).expect("valid logits")
            })
        })
        .collect();
    Ok(summarize(
        "smoothed_cross_entropy",
        vec![("logits".into(), rel_error(&analytic, &numeric), classes)],
        COMPONENT_THRESHOLD,
    ))
}

/// Image to loss through the whole network, on sampled coordinates of every tensor.
pub fn check_end_to_end(opts: &GradcheckOptions) -> Result<CheckResult> {
    let cfg = opts.model.clone();
    let model = GcVit::init(cfg.clone(), opts.seed)?;
    let classes = cfg.num_classes;
    let label = (opts.seed as usize) % classes;
    let (h, w) = cfg.input_size;
    let raw = synth_image(classes, label, 0, h.max(w), opts.seed);
    let image = preprocess_eval(&raw, &AugmentPolicy::identity(h))?;
    let eps = 0.1;

    let (logits, cache) = model.forward_train(&image)?;
    let dlogits = smoothed_cross_entropy_backward(logits.view(), label, eps)?;
    let mut grad = model.gradient_buffer();
    model.backward(&cache, &dlogits, &mut grad);
    if opts.corrupt {
        for t in grad.tensors_mut() {
            corrupt_values(t.data);
        }
    }

    let mut rng = stream_rng(opts.seed, Stream::Gradcheck, &[2]);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    let grads = grad.tensors();
    for (ti, t) in grads.iter().enumerate() {
        let largest = t
            .data
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc })
            .0;
        coords.push((ti, largest));
        for _ in 0..opts.samples_per_tensor {
            coords.push((ti, rng.random_range(0..t.data.len())));
        }
    }

    let numeric: Vec<f64> = coords
        .par_iter()
        .map(|&(ti, i)| {
            let mut m = model.clone();
            central(|d| {
                perturb(&mut m, ti, i, d);
                let l = m.logits(&image).expect("fixed input");
                perturb(&mut m, ti, i, -d);
                smoothed_cross_entropy(l.view(), label, eps).expect("finite logits")
            })
        })
        .collect();

    let mut per_tensor = Vec::new();
    for (ti, t) in grads.iter().enumerate() {
        let (a, n): (Vec<f64>, Vec<f64>) = coords
            .iter()
            .zip(&numeric)
            .filter(|((t2, _), _)| *t2 == ti)
            .map(|(&(_, i), &n)| (t.data[i], n))
            .unzip();
        per_tensor.push((t.name.clone(), rel_error(&a, &n), a.len()));
    }
    Ok(summarize("end_to_end", per_tensor, END_TO_END_THRESHOLD))
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        checks: vec![check_attention(opts)?, check_loss(opts)?, check_end_to_end(opts)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GradcheckOptions {
        let mut model = ModelConfig::desk_tiny(4);
        model.input_size = (16, 16);
        model.patch_size = 4;
        model.stem_channels = 4;
        model.embed_dim = 8;
        model.stage_dims = vec![8, 16];
        model.num_heads = vec![2, 2];
        model.stage_depths = vec![1, 1];
        GradcheckOptions {
            model,
            samples_per_tensor: 2,
            ..GradcheckOptions::default()
        }
    }

    #[test]
    fn all_checks_pass() {
        let r = run(&small()).unwrap();
        for c in &r.checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn corruption_is_detected() {
        let opts = GradcheckOptions { corrupt: true, ..small() };
        let r = run(&opts).unwrap();
        assert!(r.checks.iter().all(|c| !c.passed()), "{r:?}");
    }

    #[test]
    fn same_seed_gives_identical_errors() {
        let a = check_attention(&small()).unwrap();
        let b = check_attention(&small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(rel_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rel_error(&[2.0], &[2.2]) - 0.2 / 2.2).abs() < 1e-15);
    }
}
