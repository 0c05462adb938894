//! Per-generation architectures and their split into a configuration module
//! (input side, federated within a device generation) and an operation module
//! (output side, identical across generations, federated within an operation
//! cohort).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerKind, LayerSpec, ParamSet};

pub const ARCH_IDS: [&str; 4] = ["cifar_gen", "stl_gen", "synth_lo", "synth_hi"];

/// Width of the embedding the configuration module hands to the operation module.
pub const EMBEDDING_UNITS: usize = 256;
pub const NUM_CLASSES: usize = 9;
/// Layers in the shared operation module: dense 128, dense 64, dense 9.
pub const OPERATION_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch_id: String,
    pub layers: Vec<LayerSpec>,
    /// Per-sample input shape, `(channels, height, width)` for images.
    pub input_shape: Vec<usize>,
    /// Layers `[0, split_point)` form the configuration module.
    pub split_point: usize,
}

/// Where one parametric layer's tensors live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
    pub fan_in: usize,
}

impl ModelSpec {
    /// Per-sample shapes: the input followed by every layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Spec(format!("{}: no layers", self.arch_id)));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Spec(format!("{}: invalid input shape {:?}", self.arch_id, self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Spec(format!("{}: softmax on non-final layer {i}", self.arch_id)));
            }
            if !layer.has_params() && layer.activation != Activation::None {
                return Err(Error::Spec(format!(
                    "{}: layer {i} ({}) cannot carry an activation",
                    self.arch_id,
                    layer.kind_name()
                )));
            }
            let next = layer.output_shape(shapes.last().expect("nonempty")).map_err(|e| match e {
                Error::Shape { detail, .. } => {
                    Error::shape(format!("{} layer {i} ({})", self.arch_id, layer.kind_name()), detail)
                }
                other => other,
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Checks layer shapes and the split point.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        let s = self.split_point;
        if s == 0 || s >= self.layers.len() {
            return Err(Error::Spec(format!(
                "{}: split point {s} outside (0, {})",
                self.arch_id,
                self.layers.len()
            )));
        }
        if let Some(i) = self.layers[s..]
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
        {
            return Err(Error::Spec(format!(
                "{}: operation module layer {i} is a convolution",
                self.arch_id
            )));
        }
        if shapes[s].len() != 1 {
            return Err(Error::Spec(format!(
                "{}: operation module input {:?} is not a flat embedding",
                self.arch_id, shapes[s]
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(shapes.last().expect("nonempty").iter().product())
    }

    /// Parameter layout. Names are `<module>.<index within module>.<kind>`,
    /// so operation-module names do not depend on the configuration depth.
    pub fn param_slots(&self) -> Result<Vec<ParamSlot>> {
        let shapes = self.shapes()?;
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((weight_shape, bias_shape, fan_in)) = layer.param_shapes(&shapes[i]) {
                let name = if i < self.split_point {
                    format!("config.{i}.{}", layer.kind_name())
                } else {
                    format!("operation.{}.{}", i - self.split_point, layer.kind_name())
                };
                slots.push(ParamSlot {
                    layer: i,
                    name,
                    weight_shape,
                    bias_shape,
                    fan_in,
                });
            }
        }
        Ok(slots)
    }

    pub fn config_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.split_point]
    }

    pub fn operation_layers(&self) -> &[LayerSpec] {
        &self.layers[self.split_point..]
    }

    /// Moves the cut so the operation module holds the last `n` layers.
    pub fn with_operation_layers(mut self, n: usize) -> Result<Self> {
        if n == 0 || n >= self.layers.len() {
            return Err(Error::Spec(format!(
                "{}: operation module of {n} layers out of {}",
                self.arch_id,
                self.layers.len()
            )));
        }
        self.split_point = self.layers.len() - n;
        self.validate()?;
        Ok(self)
    }
}

fn operation_module() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(128, Activation::Relu),
        LayerSpec::dense(64, Activation::Relu),
        LayerSpec::dense(NUM_CLASSES, Activation::Softmax),
    ]
}

fn assemble(arch_id: &str, input_shape: Vec<usize>, mut config: Vec<LayerSpec>) -> ModelSpec {
    config.push(LayerSpec::flatten());
    config.push(LayerSpec::dense(EMBEDDING_UNITS, Activation::Relu));
    let split_point = config.len();
    config.extend(operation_module());
    ModelSpec {
        arch_id: arch_id.to_string(),
        layers: config,
        input_shape,
        split_point,
    }
}

/// Builds one of the registered architectures.
pub fn build_arch(arch_id: &str) -> Result<ModelSpec> {
    use LayerSpec as L;
    let spec = match arch_id {
        "cifar_gen" => assemble(
            arch_id,
            vec![3, 32, 32],
            vec![L::conv(32), L::avg_pool(), L::conv(64), L::avg_pool(), L::conv(128), L::avg_pool()],
        ),
        "stl_gen" => assemble(
            arch_id,
            vec![3, 96, 96],
            vec![
                L::conv(16),
                L::max_pool(),
                L::conv(32),
                L::max_pool(),
                L::conv(64),
                L::max_pool(),
                L::conv(128),
                L::max_pool(),
            ],
        ),
        "synth_lo" => assemble(
            arch_id,
            vec![1, 16, 16],
            vec![L::conv(4), L::avg_pool(), L::conv(8), L::avg_pool()],
        ),
        "synth_hi" => assemble(
            arch_id,
            vec![1, 32, 32],
            vec![L::conv(4), L::max_pool(), L::conv(8), L::max_pool(), L::conv(8), L::max_pool()],
        ),
        other => return Err(Error::Registry(other.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

/// Layer specs together with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub layers: Vec<LayerSpec>,
    pub params: ParamSet,
}

/// A model cut into its configuration and operation modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub arch_id: String,
    pub input_shape: Vec<usize>,
    pub config: Module,
    pub operation: Module,
}

/// Partitions specs and parameters at the split point. Every entry lands in
/// exactly one module.
pub fn split(spec: &ModelSpec, params: ParamSet) -> Result<SplitModel> {
    spec.validate()?;
    let slots = spec.param_slots()?;
    crate::nn::validate_params(spec, &params)?;
    let config_entries = slots.iter().filter(|s| s.layer < spec.split_point).count();
    let (config_params, op_params) = params.split_off(config_entries);
    Ok(SplitModel {
        arch_id: spec.arch_id.clone(),
        input_shape: spec.input_shape.clone(),
        config: Module {
            layers: spec.config_layers().to_vec(),
            params: config_params,
        },
        operation: Module {
            layers: spec.operation_layers().to_vec(),
            params: op_params,
        },
    })
}

/// Inverse of [`split`]: rejoins the modules and checks the boundary.
pub fn concatenate(model: &SplitModel) -> Result<(ModelSpec, ParamSet)> {
    let mut layers = model.config.layers.clone();
    layers.extend(model.operation.layers.iter().cloned());
    let spec = ModelSpec {
        arch_id: model.arch_id.clone(),
        layers,
        input_shape: model.input_shape.clone(),
        split_point: model.config.layers.len(),
    };
    spec.validate().map_err(|e| Error::Compatibility(e.to_string()))?;
    let params = model
        .config
        .params
        .clone()
        .concat(model.operation.params.clone())
        .map_err(|e| Error::Compatibility(e.to_string()))?;
    crate::nn::validate_params(&spec, &params).map_err(|e| Error::Compatibility(e.to_string()))?;
    Ok((spec, params))
}

/// Succeeds iff every spec's operation module is layer-for-layer identical,
/// including the embedding width it consumes.
pub fn check_operation_compatibility(specs: &[ModelSpec]) -> Result<()> {
    let (first, rest) = specs
        .split_first()
        .ok_or_else(|| Error::Compatibility("no architectures given".into()))?;
    let first_in = first.shapes()?[first.split_point].clone();
    for other in rest {
        let other_in = other.shapes()?[other.split_point].clone();
        if other_in != first_in {
            return Err(Error::Compatibility(format!(
                "{} feeds its operation module {:?}, {} feeds {:?}",
                first.arch_id, first_in, other.arch_id, other_in
            )));
        }
        let (a, b) = (first.operation_layers(), other.operation_layers());
        for i in 0..a.len().max(b.len()) {
            if a.get(i) != b.get(i) {
                return Err(Error::Compatibility(format!(
                    "operation layer {i} differs between {} ({:?}) and {} ({:?})",
                    first.arch_id,
                    a.get(i),
                    other.arch_id,
                    b.get(i)
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_params, Tensor};

    fn widths(layers: &[LayerSpec]) -> Vec<usize> {
        layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Dense { units } => Some(units),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn operation_module_is_128_64_9() {
        for id in ARCH_IDS {
            assert_eq!(widths(build_arch(id).unwrap().operation_layers()), vec![128, 64, 9], "{id}");
        }
    }

    #[test]
    fn registered_operation_modules_are_equal() {
        let specs: Vec<_> = ARCH_IDS.iter().map(|id| build_arch(id).unwrap()).collect();
        assert_eq!(specs[0].operation_layers(), specs[1].operation_layers());
        check_operation_compatibility(&specs).unwrap();
        check_operation_compatibility(&specs[..1]).unwrap();
        check_operation_compatibility(&specs[2..]).unwrap();
    }

    #[test]
    fn mutant_operation_module_is_rejected_with_index() {
        let cifar = build_arch("cifar_gen").unwrap();
        let mut mutant = cifar.clone();
        mutant.arch_id = "mutant".into();
        let s = mutant.split_point;
        mutant.layers[s + 1] = LayerSpec::dense(32, Activation::Relu);
        let err = check_operation_compatibility(&[cifar, mutant]).unwrap_err().to_string();
        assert!(err.contains("operation layer 1"), "{err}");
    }

    #[test]
    fn shape_trace_ends_in_nine_logits() {
        // Independent propagation using the closed-form sizes of 3x3 "same"
        // convolutions and 2x2/2 pooling.
        fn trace(spec: &ModelSpec) -> Vec<usize> {
            let mut shape = spec.input_shape.clone();
            for l in &spec.layers {
                shape = match l.kind {
                    LayerKind::Conv2d { channels, .. } => vec![channels, shape[1], shape[2]],
                    LayerKind::AvgPool2d { .. } | LayerKind::MaxPool2d { .. } => {
                        vec![shape[0], shape[1] / 2, shape[2] / 2]
                    }
                    LayerKind::Flatten => vec![shape.iter().product()],
                    LayerKind::Dense { units } => vec![units],
                };
            }
            shape
        }
        for id in ARCH_IDS {
            let spec = build_arch(id).unwrap();
            assert_eq!(trace(&spec), vec![9]);
            assert_eq!(spec.shapes().unwrap().last().unwrap(), &vec![9]);
        }
        assert_eq!(build_arch("cifar_gen").unwrap().shapes().unwrap()[8], vec![256]);
        assert_eq!(build_arch("cifar_gen").unwrap().shapes().unwrap()[7], vec![2048]);
        assert_eq!(build_arch("stl_gen").unwrap().shapes().unwrap()[9], vec![4608]);
    }

    #[test]
    fn cifar_forward_yields_one_by_nine() {
        let spec = build_arch("cifar_gen").unwrap();
        let params = init_params(&spec, 3).unwrap();
        let x = Tensor::new(vec![1, 3, 32, 32], (0..3072).map(|i| (i % 17) as f64 / 17.0).collect()).unwrap();
        let (logits, _) = forward(&spec, &params, &x).unwrap();
        assert_eq!(logits.shape(), &[1, 9]);
    }

    #[test]
    fn unknown_arch_is_a_registry_error() {
        assert!(matches!(build_arch("resnet"), Err(Error::Registry(_))));
    }

    #[test]
    fn split_partitions_and_concatenate_inverts() {
        let spec = build_arch("cifar_gen").unwrap();
        let params = init_params(&spec, 11).unwrap();
        let split_model = split(&spec, params.clone()).unwrap();
        let config_names: Vec<_> = split_model.config.params.names().collect();
        let op_names: Vec<_> = split_model.operation.params.names().collect();
        assert_eq!(
            config_names,
            ["config.0.conv2d", "config.2.conv2d", "config.4.conv2d", "config.7.dense"]
        );
        assert_eq!(op_names, ["operation.0.dense", "operation.1.dense", "operation.2.dense"]);
        for name in params.names() {
            let hits = config_names.contains(&name) as usize + op_names.contains(&name) as usize;
            assert_eq!(hits, 1, "{name}");
        }
        let (spec2, params2) = concatenate(&split_model).unwrap();
        assert_eq!(spec2, spec);
        assert!(params2.bit_eq(&params));
    }

    #[test]
    fn foreign_operation_module_concatenates() {
        let cifar = build_arch("cifar_gen").unwrap();
        let stl = build_arch("stl_gen").unwrap();
        let mut m = split(&cifar, init_params(&cifar, 1).unwrap()).unwrap();
        let stl_split = split(&stl, init_params(&stl, 99).unwrap()).unwrap();
        m.operation = stl_split.operation;
        let (spec, params) = concatenate(&m).unwrap();
        let x = Tensor::zeros(&[2, 3, 32, 32]);
        assert_eq!(forward(&spec, &params, &x).unwrap().0.shape(), &[2, 9]);
    }

    #[test]
    fn mismatched_embedding_width_is_a_compatibility_error() {
        let spec = build_arch("synth_lo").unwrap();
        let mut m = split(&spec, init_params(&spec, 1).unwrap()).unwrap();
        let n = m.config.layers.len();
        m.config.layers[n - 1] = LayerSpec::dense(100, Activation::Relu);
        assert!(matches!(concatenate(&m), Err(Error::Compatibility(_))));
    }

    #[test]
    fn split_point_bounds_are_enforced() {
        let mut spec = build_arch("synth_lo").unwrap();
        spec.split_point = 0;
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
        spec.split_point = spec.layers.len();
        assert!(spec.validate().is_err());
        // a cut inside the convolutional stack leaves a convolution in the operation module
        spec.split_point = 1;
        assert!(spec.validate().is_err());
        let moved = build_arch("synth_lo").unwrap().with_operation_layers(2).unwrap();
        assert_eq!(moved.operation_layers().len(), 2);
    }
}
