//! Central finite-difference checks of the analytic gradients. The numerical
//! side only calls [`forward`] and [`cross_entropy`], never the backward pass.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{Activation, LayerKind, LayerSpec};
use super::network::{cross_entropy, forward, init_params, loss_and_grad};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;
use crate::registry::ModelSpec;
use crate::rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const FLOOR: f64 = 1e-6;

/// Layer kinds the suite exercises, plus the loss on its own.
pub const KINDS: [&str; 6] = ["dense", "conv2d", "conv2d_strided", "avgpool2d", "maxpool2d", "loss"];

pub struct GradCase {
    pub kind: &'static str,
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub batch: Tensor,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub kind: &'static str,
    pub seed: u64,
    pub scalars: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn loss_only(spec: &ModelSpec, params: &ParamSet, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _) = forward(spec, params, batch)?;
    Ok(cross_entropy(&logits, labels)?.0)
}

/// Central differences of the mean loss with respect to every scalar.
pub fn numerical_grad(spec: &ModelSpec, params: &ParamSet, batch: &Tensor, labels: &[usize], h: f64) -> Result<ParamSet> {
    let mut out = params.zeros_like();
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.buffers().map(<[f64]>::len).collect();
    for (b, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = params.buffers().nth(b).expect("buffer")[i];
            probe.buffers_mut().nth(b).expect("buffer")[i] = orig + h;
            let up = loss_only(spec, &probe, batch, labels)?;
            probe.buffers_mut().nth(b).expect("buffer")[i] = orig - h;
            let down = loss_only(spec, &probe, batch, labels)?;
            probe.buffers_mut().nth(b).expect("buffer")[i] = orig;
            out.buffers_mut().nth(b).expect("buffer")[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, FLOOR)`, maximised over all scalars.
pub fn max_relative_error(analytic: &ParamSet, numeric: &ParamSet) -> f64 {
    analytic
        .buffers()
        .zip(numeric.buffers())
        .flat_map(|(a, n)| a.iter().zip(n))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

fn tiny_model(kind: &'static str) -> ModelSpec {
    let softmax = |units| LayerSpec::dense(units, Activation::Softmax);
    let (input_shape, layers): (Vec<usize>, Vec<LayerSpec>) = match kind {
        "dense" => (vec![5], vec![LayerSpec::dense(6, Activation::Relu), softmax(3)]),
        "conv2d" => (vec![2, 5, 5], vec![LayerSpec::conv(3), LayerSpec::flatten(), softmax(3)]),
        "conv2d_strided" => (
            vec![2, 6, 5],
            vec![
                LayerSpec {
                    kind: LayerKind::Conv2d {
                        channels: 2,
                        kernel: (3, 3),
                        stride: (2, 2),
                    },
                    activation: Activation::Relu,
                },
                LayerSpec::flatten(),
                softmax(3),
            ],
        ),
        "avgpool2d" => (
            vec![2, 4, 4],
            vec![LayerSpec::conv(2), LayerSpec::avg_pool(), LayerSpec::flatten(), softmax(3)],
        ),
        "maxpool2d" => (
            vec![1, 6, 6],
            vec![LayerSpec::conv(2), LayerSpec::max_pool(), LayerSpec::flatten(), softmax(3)],
        ),
        "loss" => (vec![4], vec![softmax(5)]),
        other => panic!("unknown gradient-check kind {other}"),
    };
    let split_point = if layers.len() > 1 { layers.len() - 1 } else { 0 };
    ModelSpec {
        arch_id: format!("gradcheck_{kind}"),
        layers,
        input_shape,
        split_point,
    }
}

/// A small random model of the given kind with random inputs and labels.
pub fn random_case(kind: &'static str, seed: u64) -> Result<GradCase> {
    let spec = tiny_model(kind);
    let mut params = init_params(&spec, seed)?;
    let mut rng = rng::stream(seed, &[rng::hash_str(kind)]);
    for buf in params.buffers_mut() {
        for v in buf.iter_mut() {
            // perturb so biases are nonzero and weights leave the init grid
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * z;
        }
    }
    let batch_size = 3;
    let mut shape = vec![batch_size];
    shape.extend_from_slice(&spec.input_shape);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let classes = spec.num_classes()?;
    let labels = (0..batch_size).map(|_| rng.random_range(0..classes)).collect();
    Ok(GradCase {
        kind,
        spec,
        params,
        batch: Tensor::new(shape, data)?,
        labels,
    })
}

pub fn check_case(case: &GradCase, seed: u64) -> Result<GradReport> {
    let (_, analytic) = loss_and_grad(&case.spec, &case.params, &case.batch, &case.labels)?;
    let numeric = numerical_grad(&case.spec, &case.params, &case.batch, &case.labels, STEP)?;
    Ok(GradReport {
        kind: case.kind,
        seed,
        scalars: case.params.num_scalars(),
        max_rel_error: max_relative_error(&analytic, &numeric),
    })
}

/// Checks `per_kind` random instances of every kind.
pub fn run_suite(per_kind: usize, base_seed: u64) -> Result<Vec<GradReport>> {
    let mut reports = Vec::new();
    for kind in KINDS {
        for i in 0..per_kind {
            let seed = rng::derive_seed(base_seed, &[rng::hash_str(kind), i as u64]);
            reports.push(check_case(&random_case(kind, seed)?, seed)?);
        }
    }
    Ok(reports)
}
