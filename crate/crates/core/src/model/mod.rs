//! The network: a Maxout CNN with deformable sampling, VLAD aggregation and
//! a two-layer head whose first output is the matching feature.

mod checkpoint;
pub mod kmeans;
pub mod vlad;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use afinet_autograd::{Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iris::NormalizedIris;

/// Output channels of a deformable layer's offset predictor: a row and a
/// column offset for each of the 3×3 taps.
pub const OFFSET_CHANNELS: usize = 18;
const DEFORM_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kernel: usize,
    /// Channels after Maxout.
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Vlad,
    /// Ablation: 2×2 max-pool of the final map, flattened into the head.
    MaxPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Gaussian weights with variance `1 / fan_in`.
    FanIn,
    /// Every weight drawn from N(0, 1).
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub blocks: Vec<BlockConfig>,
    pub maxout_pieces: usize,
    pub clusters: usize,
    pub feature_dim: usize,
    /// Filled in from the training data when zero.
    #[serde(default)]
    pub num_classes: usize,
    pub aggregation: Aggregation,
    pub init: InitScheme,
    /// Sharpness of the k-means derived soft assignment.
    pub vlad_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn full() -> Self {
        let block = |kernel, channels| BlockConfig { kernel, channels };
        Self {
            input_size: 128,
            blocks: vec![block(9, 48), block(5, 96), block(5, 128), block(4, 192)],
            maxout_pieces: 2,
            clusters: 25,
            feature_dim: 256,
            num_classes: 0,
            aggregation: Aggregation::Vlad,
            init: InitScheme::FanIn,
            vlad_alpha: 1.0,
        }
    }

    /// Same geometry with narrow layers, for single-core training runs.
    pub fn desk() -> Self {
        let mut cfg = Self::full();
        for (b, ch) in cfg.blocks.iter_mut().zip([8, 16, 16, 32]) {
            b.channels = ch;
        }
        cfg
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    /// Spatial side of the final feature map.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.blocks.len()
    }

    pub fn local_dim(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.channels)
    }

    /// Width of the aggregated descriptor fed to the head.
    pub fn descriptor_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Vlad => self.clusters * self.local_dim(),
            Aggregation::MaxPool => self.local_dim() * (self.final_size() / 2).pow(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        if self.blocks.is_empty() {
            return bad("at least one block is required".into());
        }
        if self.input_size == 0 || self.input_size % (1 << self.blocks.len()) != 0 {
            return bad(format!(
                "input size {} is not divisible by 2^{}",
                self.input_size,
                self.blocks.len()
            ));
        }
        if self.aggregation == Aggregation::MaxPool && self.final_size() < 2 {
            return bad("max-pool aggregation needs a final map of at least 2×2".into());
        }
        if self.blocks.iter().any(|b| b.kernel == 0 || b.channels == 0) {
            return bad("block kernels and channels must be positive".into());
        }
        if self.maxout_pieces == 0 || self.clusters == 0 || self.feature_dim == 0 {
            return bad("maxout pieces, clusters and feature width must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "{} classes; at least 2 are required",
                self.num_classes
            ));
        }
        if !(self.vlad_alpha > 0.0 && self.vlad_alpha.is_finite()) {
            return bad(format!("vlad_alpha {} must be positive", self.vlad_alpha));
        }
        Ok(())
    }

    /// Every parameter in storage order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, group, init| {
            specs.push(ParamSpec {
                name,
                shape,
                group,
                init,
            })
        };
        let mut cin = 1;
        let d = DEFORM_KERNEL;
        for (i, b) in self.blocks.iter().enumerate() {
            let (k, co, wide) = (b.kernel, b.channels, b.channels * self.maxout_pieces);
            let p = format!("block{}", i + 1);
            let ex = Group::Extractor;
            push(
                format!("{p}.conv.weight"),
                vec![wide, cin, k, k],
                ex,
                Init::Gaussian(cin * k * k),
            );
            push(format!("{p}.conv.bias"), vec![wide], ex, Init::Zero);
            push(
                format!("{p}.offset.weight"),
                vec![OFFSET_CHANNELS, co, d, d],
                ex,
                Init::Zero,
            );
            push(
                format!("{p}.offset.bias"),
                vec![OFFSET_CHANNELS],
                ex,
                Init::Zero,
            );
            push(
                format!("{p}.deform.weight"),
                vec![co, co, d, d],
                ex,
                Init::Gaussian(co * d * d),
            );
            push(format!("{p}.deform.bias"), vec![co], ex, Init::Zero);
            cin = co;
        }
        let head = Group::Head;
        let c = self.local_dim();
        let fc1_fan_in = match self.aggregation {
            Aggregation::Vlad => {
                let k = self.clusters;
                push("vlad.assign.weight".into(), vec![k, c], head, Init::Zero);
                push("vlad.assign.bias".into(), vec![k], head, Init::Zero);
                push("vlad.centers".into(), vec![k, c], head, Init::Gaussian(1));
                // The descriptor has unit norm whatever its width.
                1
            }
            Aggregation::MaxPool => self.descriptor_dim(),
        };
        let (dd, f) = (self.descriptor_dim(), self.feature_dim);
        push(
            "fc1.weight".into(),
            vec![dd, f],
            head,
            Init::Gaussian(fc1_fan_in),
        );
        push("fc1.bias".into(), vec![f], head, Init::Zero);
        push(
            "fc2.weight".into(),
            vec![f, self.num_classes],
            head,
            Init::Gaussian(f),
        );
        push("fc2.bias".into(), vec![self.num_classes], head, Init::Zero);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// Optimizer group: the extractor and the VLAD layer plus head train with
/// separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Extractor,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Zero,
    /// Gaussian with the given fan-in.
    Gaussian(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub init: Init,
}

/// Provenance recorded with a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub dataset_digest: String,
    /// Digest of the experiment configuration that produced the model.
    pub config_digest: String,
    /// Intensity statistics the inputs must be normalized with.
    pub input_mean: f64,
    pub input_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AfinetModel {
    pub config: ModelConfig,
    pub params: Vec<Tensor<f32>>,
    pub meta: ModelMeta,
}

impl AfinetModel {
    /// Freshly initialized model. Offset predictors start at zero, so every
    /// deformable layer starts as a plain 3×3 convolution.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_specs()
            .iter()
            .map(|spec| {
                let n = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Zero => vec![0.0f32; n],
                    Init::Gaussian(fan_in) => {
                        let std = match config.init {
                            InitScheme::FanIn => 1.0 / (fan_in as f64).sqrt(),
                            InitScheme::StandardNormal => 1.0,
                        };
                        let normal = Normal::new(0.0, std).expect("finite std");
                        (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                    }
                };
                Tensor::from_vec(data, &spec.shape).expect("spec shape")
            })
            .collect();
        Ok(Self {
            config,
            params,
            meta: ModelMeta {
                seed,
                input_mean: 0.0,
                input_std: 1.0,
                ..Default::default()
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.config
            .param_specs()
            .iter()
            .position(|s| s.name == name)
    }

    /// Records every parameter on `tape`, converted to `T`.
    pub fn bind<'t, T: Scalar>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.cast(), trainable))
            .collect()
    }

    /// Installs k-means centers (row-major `[K, C]`) as the VLAD centers and
    /// the matching soft-assignment parameters.
    pub fn set_vlad_from_centers(&mut self, centers: &[f64]) -> Result<()> {
        if self.config.aggregation != Aggregation::Vlad {
            return Err(Error::invalid(
                "vlad initialization",
                "model has no VLAD layer",
            ));
        }
        let c = self.config.local_dim();
        if centers.len() != self.config.clusters * c {
            return Err(Error::invalid(
                "vlad initialization",
                format!(
                    "{} center values for {} clusters of width {c}",
                    centers.len(),
                    self.config.clusters
                ),
            ));
        }
        let (w, b) = kmeans::assignment_from_centers(centers, c, self.config.vlad_alpha);
        let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        for (name, values) in [
            ("vlad.assign.weight", to_f32(&w)),
            ("vlad.assign.bias", to_f32(&b)),
            ("vlad.centers", to_f32(centers)),
        ] {
            let i = self.param_index(name).expect("vlad parameter");
            let shape = self.params[i].shape().to_vec();
            self.params[i] = Tensor::from_vec(values, &shape)?;
        }
        Ok(())
    }

    /// Stacks normalized images into a `[N, 1, H, W]` input using the
    /// model's intensity statistics.
    pub fn input_batch(&self, images: &[&NormalizedIris]) -> Result<Tensor<f32>> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.height != s || img.width != s {
                return Err(Error::invalid(
                    "model input",
                    format!("{}x{} image, expected {s}x{s}", img.height, img.width),
                ));
            }
            let normalized = img.intensity_normalize(self.meta.input_mean, self.meta.input_std)?;
            data.extend_from_slice(&normalized.pixels);
        }
        Ok(Tensor::from_vec(data, &[images.len(), 1, s, s])?)
    }

    /// L2-normalized matching features, one row per image.
    pub fn embed(&self, images: &[&NormalizedIris]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let tape = Tape::<f32>::new();
            let params = self.bind(&tape, false);
            let x = tape.constant(self.input_batch(chunk)?);
            let (feature, _) = Net::new(&self.config, &params).forward(x)?;
            let value = feature.value();
            for row in value.data().chunks(self.config.feature_dim) {
                let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                let scale = 1.0 / norm.max(afinet_autograd::ops::dense::L2_EPSILON);
                out.push(row.iter().map(|&v| (v as f64 * scale) as f32).collect());
            }
        }
        Ok(out)
    }
}

/// Forward computation over parameters recorded on a tape, in the order of
/// [`ModelConfig::param_specs`].
pub struct Net<'a, 't, T: Scalar> {
    config: &'a ModelConfig,
    params: &'a [Var<'t, T>],
}

/// Parameters per extractor block.
const BLOCK_PARAMS: usize = 6;

impl<'a, 't, T: Scalar> Net<'a, 't, T> {
    pub fn new(config: &'a ModelConfig, params: &'a [Var<'t, T>]) -> Self {
        Self { config, params }
    }

    fn block_param(&self, block: usize, i: usize) -> Var<'t, T> {
        self.params[block * BLOCK_PARAMS + i]
    }

    fn head_param(&self, i: usize) -> Var<'t, T> {
        self.params[self.config.blocks.len() * BLOCK_PARAMS + i]
    }

    /// `[N, 1, S, S] -> [N, C, S/16, S/16]` for four blocks.
    pub fn extractor(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = self.config.input_size;
        let xs = x.shape();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != s || xs[3] != s {
            return Err(Error::invalid(
                "model input",
                format!("shape {xs:?}, expected [N, 1, {s}, {s}]"),
            ));
        }
        let mut h = x;
        for b in 0..self.config.blocks.len() {
            h = self.block(b, h)?;
        }
        Ok(h)
    }

    /// One extractor block: convolution, Maxout, 2×2 max-pool, deformable
    /// convolution with linear output.
    pub fn block(&self, b: usize, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = h
            .conv2d(self.block_param(b, 0), Some(self.block_param(b, 1)), 1)?
            .maxout(self.config.maxout_pieces)?
            .maxpool2d(2)?;
        Ok(deformable_conv(
            h,
            self.block_param(b, 2),
            self.block_param(b, 3),
            self.block_param(b, 4),
            self.block_param(b, 5),
        )?)
    }

    /// Aggregated descriptor `[N, descriptor_dim]` of an extractor output.
    pub fn aggregate(&self, local: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = local.shape();
        let n = shape[0];
        match self.config.aggregation {
            Aggregation::Vlad => {
                let v = local.reshape(&[n, shape[1], shape[2] * shape[3]])?;
                Ok(vlad::netvlad(
                    v,
                    self.head_param(0),
                    self.head_param(1),
                    self.head_param(2),
                )?)
            }
            Aggregation::MaxPool => {
                let pooled = local.maxpool2d(2)?;
                Ok(pooled.reshape(&[n, self.config.descriptor_dim()])?)
            }
        }
    }

    /// `(feature, logits)` of a descriptor.
    pub fn head(&self, descriptor: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let first = match self.config.aggregation {
            Aggregation::Vlad => 3,
            Aggregation::MaxPool => 0,
        };
        let feature = descriptor.linear(self.head_param(first), self.head_param(first + 1))?;
        let logits = feature.linear(self.head_param(first + 2), self.head_param(first + 3))?;
        Ok((feature, logits))
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let local = self.extractor(x)?;
        self.head(self.aggregate(local)?)
    }
}

/// Deformable 3×3 convolution preserving the channel count. Offsets come
/// from a regular 3×3 convolution of the input; each tap samples the input
/// bilinearly at its grid position plus offset, with circular columns.
pub fn deformable_conv<'t, T: Scalar>(
    x: Var<'t, T>,
    offset_weight: Var<'t, T>,
    offset_bias: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
) -> afinet_autograd::Result<Var<'t, T>> {
    let ws = weight.shape();
    let [co, ci, kh, kw] = ws[..] else {
        return Err(afinet_autograd::AutogradError::shapes(
            "deformable kernel",
            &ws,
            &x.shape(),
        ));
    };
    let offsets = x.conv2d(offset_weight, Some(offset_bias), 1)?;
    let columns = x.deform_gather(offsets, kh, kw)?;
    let pointwise = weight.reshape(&[co, ci * kh * kw, 1, 1])?;
    columns.conv2d(pointwise, Some(bias), 1)
}
