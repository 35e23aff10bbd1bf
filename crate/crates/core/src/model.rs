//! ResNet-3D topologies and the feature-extractor / head partition used by
//! staged transfer.

use std::fmt;
use std::str::FromStr;

use indexmap::{IndexMap, IndexSet};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::Conv3dSpec;
use crate::kernels::norm::{update_running, Mode, BN_EPSILON, BN_MOMENTUM};
use crate::kernels::pool::MaxPoolSpec;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Inputs whose smallest spatial extent is below this skip the stem max-pool.
pub const STEM_POOL_MIN_EXTENT: usize = 32;

pub const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ResNet18,
    ResNet34,
    ResNet50,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ResNet18, Variant::ResNet34, Variant::ResNet50];

    pub fn blocks(self) -> [usize; 4] {
        match self {
            Variant::ResNet18 => [2, 2, 2, 2],
            Variant::ResNet34 | Variant::ResNet50 => [3, 4, 6, 3],
        }
    }

    pub fn bottleneck(self) -> bool {
        matches!(self, Variant::ResNet50)
    }

    fn expansion(self) -> usize {
        if self.bottleneck() {
            4
        } else {
            1
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ResNet18 => "resnet18",
            Variant::ResNet34 => "resnet34",
            Variant::ResNet50 => "resnet50",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" => Ok(Variant::ResNet18),
            "resnet34" => Ok(Variant::ResNet34),
            "resnet50" => Ok(Variant::ResNet50),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub out_dim: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ResNet18,
            in_channels: 2,
            out_dim: 1,
            width: 64,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, in_channels: usize, out_dim: usize, width: usize) -> Self {
        Self {
            variant,
            in_channels,
            out_dim,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 1 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if !(1..=2).contains(&self.out_dim) {
            return Err(Error::Config(format!("out_dim must be 1 or 2, got {}", self.out_dim)));
        }
        if self.width < 2 || self.width % 2 != 0 {
            return Err(Error::Config(format!("width must be even and >= 2, got {}", self.width)));
        }
        Ok(())
    }

    /// Input width of the head: channels after the last stage.
    pub fn feature_width(&self) -> usize {
        self.width * 8 * self.variant.expansion()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    FeatureExtractor,
    Head,
}

impl Partition {
    pub fn of(name: &str) -> Self {
        if name.starts_with(HEAD_PREFIX) {
            Partition::Head
        } else {
            Partition::FeatureExtractor
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableSet {
    HeadOnly,
    All,
}

/// One residual block's layout.
#[derive(Debug, Clone)]
struct Block {
    prefix: String,
    in_planes: usize,
    planes: usize,
    stride: usize,
    bottleneck: bool,
    projection: bool,
}

impl Block {
    fn out_planes(&self) -> usize {
        if self.bottleneck {
            self.planes * 4
        } else {
            self.planes
        }
    }

    /// (suffix, in, out, kernel, stride) for each convolution in order.
    fn convs(&self) -> Vec<(&'static str, usize, usize, usize, usize)> {
        if self.bottleneck {
            vec![
                ("1", self.in_planes, self.planes, 1, 1),
                ("2", self.planes, self.planes, 3, self.stride),
                ("3", self.planes, self.planes * 4, 1, 1),
            ]
        } else {
            vec![
                ("1", self.in_planes, self.planes, 3, self.stride),
                ("2", self.planes, self.planes, 3, 1),
            ]
        }
    }
}

fn layout(config: &ModelConfig) -> Vec<(usize, Vec<Block>)> {
    let mut in_planes = config.width;
    let exp = config.variant.expansion();
    config
        .variant
        .blocks()
        .iter()
        .enumerate()
        .map(|(stage, &count)| {
            let planes = config.width << stage;
            let blocks = (0..count)
                .map(|b| {
                    let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                    let block = Block {
                        prefix: format!("layer{}.{}", stage + 1, b),
                        in_planes,
                        planes,
                        stride,
                        bottleneck: config.variant.bottleneck(),
                        projection: stride != 1 || in_planes != planes * exp,
                    };
                    in_planes = planes * exp;
                    block
                })
                .collect();
            (stage + 1, blocks)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element = f32> {
    config: ModelConfig,
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
    trainable: IndexSet<String>,
}

/// Parameter handles recorded by one training-mode forward pass.
pub struct TrainForward {
    pub output: Var,
    params: Vec<(String, Var)>,
}

struct Builder<'a> {
    rng: &'a mut Rng,
    params: IndexMap<String, Tensor<f64>>,
    buffers: IndexMap<String, Tensor<f64>>,
}

impl Builder<'_> {
    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize) {
        let fan_in = (cin * k * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let data = (0..cout * cin * k * k * k).map(|_| normal.sample(self.rng)).collect();
        let t = Tensor::from_vec(vec![cout, cin, k, k, k], data).expect("conv shape");
        self.params.insert(format!("{name}.weight"), t);
    }

    fn bn(&mut self, name: String, c: usize) {
        self.params.insert(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        self.params.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{name}.running_mean"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{name}.running_var"), Tensor::full(&[c], 1.0));
    }
}

fn head_params(rng: &mut Rng, out_dim: usize, fan_in: usize) -> [(String, Tensor<f64>); 2] {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let w = (0..out_dim * fan_in).map(|_| dist.sample(rng)).collect();
    let b = (0..out_dim).map(|_| dist.sample(rng)).collect();
    [
        (
            format!("{HEAD_PREFIX}weight"),
            Tensor::from_vec(vec![out_dim, fan_in], w).expect("head shape"),
        ),
        (
            format!("{HEAD_PREFIX}bias"),
            Tensor::from_vec(vec![out_dim], b).expect("head shape"),
        ),
    ]
}

impl<T: Element> Model<T> {
    /// Build a freshly initialized model. Draws are consumed from `rng` in
    /// parameter declaration order.
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng,
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        };
        b.conv("stem.conv".into(), config.in_channels, config.width, 7);
        b.bn("stem.bn".into(), config.width);
        for (_, blocks) in layout(&config) {
            for block in blocks {
                for (suffix, cin, cout, k, _) in block.convs() {
                    b.conv(format!("{}.conv{suffix}", block.prefix), cin, cout, k);
                    b.bn(format!("{}.bn{suffix}", block.prefix), cout);
                }
                if block.projection {
                    b.conv(format!("{}.downsample.conv", block.prefix), block.in_planes, block.out_planes(), 1);
                    b.bn(format!("{}.downsample.bn", block.prefix), block.out_planes());
                }
            }
        }
        let head = head_params(b.rng, config.out_dim, config.feature_width());
        let mut params = b.params;
        params.extend(head);
        let cast = |m: IndexMap<String, Tensor<f64>>| m.into_iter().map(|(k, v)| (k, v.cast::<T>())).collect();
        let params: IndexMap<String, Tensor<T>> = cast(params);
        let trainable = params.keys().cloned().collect();
        Ok(Self {
            config,
            params,
            buffers: cast(b.buffers),
            trainable,
        })
    }

    /// Reassemble a model from stored tensors, checking them against the
    /// topology implied by `config`.
    pub fn from_parts(
        config: ModelConfig,
        params: IndexMap<String, Tensor<T>>,
        buffers: IndexMap<String, Tensor<T>>,
    ) -> Result<Self> {
        let reference = Model::<T>::build(config, &mut crate::rng::seeded(0))?;
        for (kind, have, want) in [
            ("parameter", &params, &reference.params),
            ("buffer", &buffers, &reference.buffers),
        ] {
            if have.len() != want.len() {
                return Err(Error::Config(format!(
                    "expected {} {kind} tensors, found {}",
                    want.len(),
                    have.len()
                )));
            }
            for (name, t) in want {
                match have.get(name) {
                    Some(h) if h.shape() == t.shape() => {}
                    Some(h) => {
                        return Err(Error::Config(format!(
                            "{kind} {name} has shape {:?}, expected {:?}",
                            h.shape(),
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Config(format!("missing {kind} {name}"))),
                }
            }
        }
        // Store in declaration order regardless of input order.
        let params = reference
            .params
            .keys()
            .map(|k| (k.clone(), params[k].clone()))
            .collect::<IndexMap<_, _>>();
        let buffers = reference
            .buffers
            .keys()
            .map(|k| (k.clone(), buffers[k].clone()))
            .collect();
        let trainable = params.keys().cloned().collect();
        Ok(Self {
            config,
            params,
            buffers,
            trainable,
        })
    }

    /// Like [`Model::from_parts`] with parameters and buffers in one map.
    pub fn from_tensors(config: ModelConfig, mut tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let buffer_names: Vec<String> = tensors
            .keys()
            .filter(|k| k.ends_with(".running_mean") || k.ends_with(".running_var"))
            .cloned()
            .collect();
        let buffers = buffer_names
            .into_iter()
            .map(|k| {
                let t = tensors.shift_remove(&k).expect("listed key");
                (k, t)
            })
            .collect();
        Self::from_parts(config, tensors, buffers)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn trainable(&self) -> &IndexSet<String> {
        &self.trainable
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let conv = |m: &IndexMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast::<U>())).collect();
        Model {
            config: self.config,
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            trainable: self.trainable.clone(),
        }
    }

    /// SHA-256 over names and f32 bytes of every parameter and buffer in
    /// the given partition, in declaration order.
    pub fn checksum(&self, partition: Partition) -> String {
        self.checksum_where(|name| Partition::of(name) == partition, true)
    }

    /// Like [`Model::checksum`] but over parameters only.
    pub fn param_checksum(&self, partition: Partition) -> String {
        self.checksum_where(|name| Partition::of(name) == partition, false)
    }

    fn checksum_where(&self, keep: impl Fn(&str) -> bool, with_buffers: bool) -> String {
        let mut hasher = Sha256::new();
        let buffers = self.buffers.iter().filter(|_| with_buffers);
        for (name, t) in self.params.iter().chain(buffers) {
            if keep(name) {
                hasher.update(name.as_bytes());
                hasher.update(t.to_f32_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Discard the head and attach a freshly initialized one with
    /// `new_out_dim` outputs. Feature-extractor tensors are untouched.
    pub fn replace_head(mut self, new_out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let config = ModelConfig {
            out_dim: new_out_dim,
            ..self.config
        };
        config.validate()?;
        for (name, t) in head_params(rng, new_out_dim, config.feature_width()) {
            self.params.insert(name, t.cast::<T>());
        }
        self.config = config;
        Ok(self)
    }

    pub fn set_trainable(mut self, selector: TrainableSet) -> Self {
        self.trainable = self
            .params
            .keys()
            .filter(|name| selector == TrainableSet::All || Partition::of(name) == Partition::Head)
            .cloned()
            .collect();
        self
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 {
            return Err(Error::shape("forward", format!("batch must be [N,C,D,H,W], got {shape:?}")));
        }
        if shape[0] == 0 {
            return Err(Error::shape("forward", "empty batch"));
        }
        if shape[1] != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: shape[1],
            });
        }
        Ok(())
    }

    /// Eval-mode forward: running statistics, no gradient record.
    pub fn forward_eval(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch.shape())?;
        let mut tape = Tape::new();
        let mut runner = Runner {
            tape: &mut tape,
            params: &self.params,
            trainable: None,
            buffers: Buffers::Frozen(&self.buffers),
            mode: Mode::Eval,
            handles: Vec::new(),
        };
        let input = runner.tape.constant(batch.clone());
        let out = runner.network(&self.config, input)?;
        Ok(tape.value(out).clone())
    }

    /// Train-mode forward recorded onto `tape`. Batch-norm layers use batch
    /// statistics and refresh the running buffers.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, batch: Tensor<T>) -> Result<TrainForward> {
        self.check_input(batch.shape())?;
        let config = self.config;
        let mut runner = Runner {
            tape,
            params: &self.params,
            trainable: Some(&self.trainable),
            buffers: Buffers::Live(&mut self.buffers),
            mode: Mode::Train,
            handles: Vec::new(),
        };
        let input = runner.tape.constant(batch);
        let output = runner.network(&config, input)?;
        Ok(TrainForward {
            output,
            params: runner.handles,
        })
    }

    /// Move gradients from a finished backward pass onto the trainable
    /// parameters.
    pub fn collect_grads(&mut self, tape: &mut Tape<T>, fwd: &TrainForward) -> Result<()> {
        for (name, var) in &fwd.params {
            if let Some(g) = tape.take_grad(*var) {
                let p = self.params.get_mut(name).expect("recorded parameter exists");
                p.set_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.clear_grad();
        }
    }
}

enum Buffers<'a, T: Element> {
    Frozen(&'a IndexMap<String, Tensor<T>>),
    Live(&'a mut IndexMap<String, Tensor<T>>),
}

impl<T: Element> Buffers<'_, T> {
    fn get(&self, name: &str) -> &Tensor<T> {
        match self {
            Buffers::Frozen(m) => &m[name],
            Buffers::Live(m) => &m[name],
        }
    }
}

struct Runner<'a, T: Element> {
    tape: &'a mut Tape<T>,
    params: &'a IndexMap<String, Tensor<T>>,
    trainable: Option<&'a IndexSet<String>>,
    buffers: Buffers<'a, T>,
    mode: Mode,
    handles: Vec<(String, Var)>,
}

impl<T: Element> Runner<'_, T> {
    fn param(&mut self, name: &str) -> Var {
        let t = self.params[name].clone();
        let var = match self.trainable {
            Some(set) if set.contains(name) => self.tape.param(t),
            _ => self.tape.constant(t),
        };
        if self.trainable.is_some() {
            self.handles.push((name.to_string(), var));
        }
        var
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"));
        let k = self.tape.value(w).shape()[2];
        self.tape.conv3d(x, w, None, Conv3dSpec::new(stride, k / 2))
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"));
        let beta = self.param(&format!("{name}.beta"));
        let (rm_key, rv_key) = (format!("{name}.running_mean"), format!("{name}.running_var"));
        let (out, moments) = self.tape.batchnorm(
            x,
            gamma,
            beta,
            self.buffers.get(&rm_key),
            self.buffers.get(&rv_key),
            self.mode,
            BN_EPSILON,
        )?;
        if let (Some(m), Buffers::Live(bufs)) = (moments, &mut self.buffers) {
            update_running(bufs.get_mut(&rm_key).expect("buffer"), &m.mean, BN_MOMENTUM);
            update_running(bufs.get_mut(&rv_key).expect("buffer"), &m.unbiased_var, BN_MOMENTUM);
        }
        Ok(out)
    }

    fn check_extent(&self, x: Var, stage: &'static str) -> Result<()> {
        let shape = self.tape.value(x).shape();
        for (axis, &extent) in ["depth", "height", "width"].iter().zip(&shape[2..]) {
            if extent < 2 {
                return Err(Error::SpatialUnderflow { stage, axis, extent });
            }
        }
        Ok(())
    }

    fn block(&mut self, block: &Block, x: Var) -> Result<Var> {
        let convs = block.convs();
        let mut h = x;
        for (i, (suffix, _, _, _, stride)) in convs.iter().enumerate() {
            h = self.conv(&format!("{}.conv{suffix}", block.prefix), h, *stride)?;
            h = self.bn(&format!("{}.bn{suffix}", block.prefix), h)?;
            if i + 1 < convs.len() {
                h = self.tape.relu(h);
            }
        }
        let shortcut = if block.projection {
            let s = self.conv(&format!("{}.downsample.conv", block.prefix), x, block.stride)?;
            self.bn(&format!("{}.downsample.bn", block.prefix), s)?
        } else {
            x
        };
        let sum = self.tape.add(h, shortcut)?;
        Ok(self.tape.relu(sum))
    }

    fn network(&mut self, config: &ModelConfig, input: Var) -> Result<Var> {
        const STAGES: [&str; 4] = ["layer1", "layer2", "layer3", "layer4"];
        self.check_extent(input, "stem")?;
        let pool = self.tape.value(input).shape()[2..]
            .iter()
            .all(|&e| e >= STEM_POOL_MIN_EXTENT);
        let mut h = self.conv("stem.conv", input, 2)?;
        h = self.bn("stem.bn", h)?;
        h = self.tape.relu(h);
        if pool {
            h = self.tape.maxpool3d(
                h,
                MaxPoolSpec {
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
            )?;
        }
        for (stage, blocks) in layout(config) {
            if stage > 1 {
                self.check_extent(h, STAGES[stage - 1])?;
            }
            for block in &blocks {
                h = self.block(block, h)?;
            }
        }
        let pooled = self.tape.global_avgpool(h)?;
        let w = self.param(&format!("{HEAD_PREFIX}weight"));
        let b = self.param(&format!("{HEAD_PREFIX}bias"));
        self.tape.linear(pooled, w, Some(b))
    }
}

/// Predicted class from two logits: argmax, ties to class 0.
pub fn decide<T: Element>(logits: &[T]) -> usize {
    if logits[1] > logits[0] {
        1
    } else {
        0
    }
}

/// Random normal tensor, used by tests and probes.
pub fn random_tensor<T: Element>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::from_f64(rng.sample(rand_distr::StandardNormal))).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small(variant: Variant, out_dim: usize) -> ModelConfig {
        ModelConfig::new(variant, 2, out_dim, 4)
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(Variant::ResNet18, 0, 1, 8).validate().is_err());
        assert!(ModelConfig::new(Variant::ResNet18, 2, 3, 8).validate().is_err());
        assert!(ModelConfig::new(Variant::ResNet18, 2, 1, 7).validate().is_err());
        assert!(ModelConfig::new(Variant::ResNet18, 2, 1, 0).validate().is_err());
        assert!(ModelConfig::new(Variant::ResNet18, 2, 2, 2).validate().is_ok());
    }

    #[test]
    fn block_counts_per_variant() {
        for (variant, blocks) in [
            (Variant::ResNet18, [2, 2, 2, 2]),
            (Variant::ResNet34, [3, 4, 6, 3]),
            (Variant::ResNet50, [3, 4, 6, 3]),
        ] {
            let m = Model::<f32>::build(small(variant, 1), &mut seeded(0)).unwrap();
            for (stage, &count) in blocks.iter().enumerate() {
                let prefix = format!("layer{}.", stage + 1);
                let found: IndexSet<&str> = m
                    .params()
                    .keys()
                    .filter_map(|k| k.strip_prefix(&prefix))
                    .map(|rest| rest.split('.').next().unwrap())
                    .collect();
                assert_eq!(found.len(), count, "{variant} stage {}", stage + 1);
            }
        }
        let m = Model::<f32>::build(small(Variant::ResNet50, 1), &mut seeded(0)).unwrap();
        assert!(m.params().contains_key("layer1.0.conv3.weight"));
        assert!(m.params().contains_key("layer1.0.downsample.conv.weight"));
    }

    #[test]
    fn deterministic_build() {
        let a = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(5)).unwrap();
        let b = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(6)).unwrap();
        assert_ne!(a.checksum(Partition::FeatureExtractor), c.checksum(Partition::FeatureExtractor));
    }

    #[test]
    fn partition_is_total_and_head_is_single_affine() {
        let m = Model::<f32>::build(small(Variant::ResNet34, 2), &mut seeded(1)).unwrap();
        let head: Vec<&String> = m
            .params()
            .keys()
            .filter(|k| Partition::of(k) == Partition::Head)
            .collect();
        assert_eq!(head, vec!["head.weight", "head.bias"]);
        assert_eq!(m.params()["head.weight"].shape(), &[2, m.config().feature_width()]);
        assert!(m.buffers().keys().all(|k| Partition::of(k) == Partition::FeatureExtractor));
    }

    #[test]
    fn forward_shape_and_channel_check() {
        let m = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(2)).unwrap();
        let x = random_tensor(&[3, 2, 16, 16, 16], &mut seeded(3));
        assert_eq!(m.forward_eval(&x).unwrap().shape(), &[3, 1]);
        let bad = random_tensor::<f32>(&[1, 3, 16, 16, 16], &mut seeded(3));
        assert!(matches!(m.forward_eval(&bad), Err(Error::ChannelMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn underflow_names_stage() {
        let m = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(2)).unwrap();
        let x = random_tensor(&[1, 2, 8, 8, 8], &mut seeded(3));
        match m.forward_eval(&x) {
            Err(Error::SpatialUnderflow { stage, .. }) => assert_eq!(stage, "layer4"),
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn replace_head_only_touches_head() {
        let m = Model::<f32>::build(small(Variant::ResNet18, 1), &mut seeded(2)).unwrap();
        let before = m.checksum(Partition::FeatureExtractor);
        let r = m.clone().replace_head(2, &mut seeded(9)).unwrap();
        assert_eq!(r.checksum(Partition::FeatureExtractor), before);
        assert_eq!(r.config().out_dim, 2);
        assert_eq!(r.params()["head.weight"].shape(), &[2, 32]);
        for (name, t) in m.params() {
            if Partition::of(name) == Partition::FeatureExtractor {
                assert_eq!(t, &r.params()[name]);
            }
        }
        let again = m.replace_head(2, &mut seeded(9)).unwrap();
        assert_eq!(again.params()["head.weight"], r.params()["head.weight"]);
        assert_eq!(again.params()["head.bias"], r.params()["head.bias"]);
    }

    #[test]
    fn trainable_selectors() {
        let m = Model::<f32>::build(small(Variant::ResNet18, 2), &mut seeded(2)).unwrap();
        let head = m.clone().set_trainable(TrainableSet::HeadOnly);
        let names: Vec<&str> = head.trainable().iter().map(String::as_str).collect();
        assert_eq!(names, vec!["head.weight", "head.bias"]);
        let all = head.set_trainable(TrainableSet::All);
        assert_eq!(all.trainable().len(), m.params().len());
    }

    #[test]
    fn decision_rule_ties_to_zero() {
        assert_eq!(decide(&[0.2f32, 0.9]), 1);
        assert_eq!(decide(&[0.5f32, 0.5]), 0);
        assert_eq!(decide(&[1.0f32, -1.0]), 0);
    }
}
