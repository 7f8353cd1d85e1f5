//! Fully convolutional GoogLeNet variant for per-slice lesion segmentation.
//!
//! Stem 7×7/1 → conv2 (1×1, 3×3) → pool → inception-3 → inception-4 → pool
//! → [inception-5] → 1×1 logit conv → 8×8/4 transposed conv. Two of the
//! original five downsamplings remain, so the bottleneck is input/4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, relu_backward_in_place, relu_in_place, sigmoid, split_channels, BatchNorm2d, Conv2d, ConvGeometry,
    ConvTranspose2d, Float, MaxPool2d, Mode, Module, Param, ParamKind, Tensor,
};
use crate::pipeline::{PreparedStudy, SLAB_CHANNELS};
use crate::seed;
use crate::volume::{resize_bilinear, MultiSequenceStudy, Plane, ProbabilityMap};

/// Reference (unscaled) widths of one inception block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub name: String,
    pub b1: usize,
    pub b2_reduce: usize,
    pub b2: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub pool_proj: usize,
}

impl InceptionSpec {
    fn new(name: &str, w: [usize; 6]) -> Self {
        InceptionSpec {
            name: name.to_string(),
            b1: w[0],
            b2_reduce: w[1],
            b2: w[2],
            b3_reduce: w[3],
            b3: w[4],
            pool_proj: w[5],
        }
    }
}

/// The original GoogLeNet inception table, 3a through 5b.
pub fn googlenet_inception_specs() -> Vec<InceptionSpec> {
    [
        ("3a", [64, 96, 128, 16, 32, 32]),
        ("3b", [128, 128, 192, 32, 96, 64]),
        ("4a", [192, 96, 208, 16, 48, 64]),
        ("4b", [160, 112, 224, 24, 64, 64]),
        ("4c", [128, 128, 256, 24, 64, 64]),
        ("4d", [112, 144, 288, 32, 64, 64]),
        ("4e", [256, 160, 320, 32, 128, 128]),
        ("5a", [256, 160, 320, 32, 128, 128]),
        ("5b", [384, 192, 384, 48, 128, 128]),
    ]
    .iter()
    .map(|(n, w)| InceptionSpec::new(n, *w))
    .collect()
}

/// Where a retained stride-2 max pool sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSite {
    AfterConv2,
    /// After the inception block with this index in `ArchConfig::inception`.
    AfterInception(usize),
}

/// Missing fields in serialized configs fall back to [`ArchConfig::desk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub width_multiplier: f64,
    pub stem_channels: usize,
    pub conv2_reduce: usize,
    pub conv2_channels: usize,
    pub inception: Vec<InceptionSpec>,
    pub pool_schedule: Vec<PoolSite>,
    pub upsample_kernel: usize,
    pub upsample_stride: usize,
    pub upsample_pad: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    fn with(width_multiplier: f64, n_blocks: usize, last_pool: usize) -> Self {
        ArchConfig {
            input_channels: SLAB_CHANNELS,
            width_multiplier,
            stem_channels: 64,
            conv2_reduce: 64,
            conv2_channels: 192,
            inception: googlenet_inception_specs().into_iter().take(n_blocks).collect(),
            pool_schedule: vec![PoolSite::AfterConv2, PoolSite::AfterInception(last_pool)],
            upsample_kernel: 8,
            upsample_stride: 4,
            upsample_pad: 2,
        }
    }

    /// Full widths and all nine inception blocks; pool after 4e.
    pub fn paper() -> Self {
        Self::with(1.0, 9, 6)
    }

    /// Quarter widths, blocks 3a–4c; the inception-4 pool follows 4c.
    pub fn desk() -> Self {
        Self::with(0.25, 5, 4)
    }

    pub fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_channels != SLAB_CHANNELS {
            return bad(format!("input_channels must be {SLAB_CHANNELS}"));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return bad(format!("width_multiplier {} must be positive", self.width_multiplier));
        }
        if self.pool_schedule.len() != 2 {
            return bad(format!("exactly two pools are retained, got {}", self.pool_schedule.len()));
        }
        if self.pool_schedule[0] == self.pool_schedule[1] {
            return bad("pool sites must differ".into());
        }
        for site in &self.pool_schedule {
            if let PoolSite::AfterInception(i) = site {
                if *i >= self.inception.len() {
                    return bad(format!("pool after inception block {i}, but only {} blocks", self.inception.len()));
                }
            }
        }
        let mut names: Vec<&str> = self.inception.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.inception.len() {
            return bad("inception block names must be unique".into());
        }
        if self.upsample_stride == 0 || self.upsample_kernel < self.upsample_stride {
            return bad("upsampler kernel must cover its stride".into());
        }
        if self.upsample_kernel != 2 * self.upsample_pad + self.upsample_stride {
            return bad("upsampler must restore exactly the downsampled size (k = 2·pad + stride)".into());
        }
        if self.upsample_stride != self.downsample_factor() {
            return bad(format!(
                "upsampler stride {} does not undo the {}x downsampling",
                self.upsample_stride,
                self.downsample_factor()
            ));
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.pool_schedule.len()
    }

    fn upsample_geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.upsample_kernel, self.upsample_stride, self.upsample_pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    Concat,
    ConvTranspose,
}

/// One leaf layer as seen by a given input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_shape: [usize; 4],
    pub out_shape: [usize; 4],
    /// Inception block and branch (0-based) for layers inside one.
    pub block: Option<String>,
    pub branch: Option<usize>,
}

/// conv (no bias) → batch norm → ReLU.
#[derive(Debug, Clone)]
struct ConvUnit<T> {
    name: String,
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    output: Option<Tensor<T>>,
}

impl<T: Float> ConvUnit<T> {
    fn new(name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        ConvUnit {
            name: name.to_string(),
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, ConvGeometry::new(kernel, stride, kernel / 2), false),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout),
            output: None,
        }
    }

    fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let mut y = self.bn.forward(&y, mode)?;
        relu_in_place(&mut y);
        self.output = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    fn backward_to_bn_input(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::Shape(format!("{}: backward without a training forward", self.name)))?;
        let mut g = dy.clone();
        relu_backward_in_place(&mut g, &out);
        self.bn.backward(&g)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.backward_to_bn_input(dy)?;
        self.conv.backward(&g)
    }

    fn backward_params(&mut self, dy: &Tensor<T>) -> Result<()> {
        let g = self.backward_to_bn_input(dy)?;
        self.conv.backward_params(&g)
    }

    fn describe(&self, shape: [usize; 4], block: Option<(&str, usize)>, out: &mut Vec<LayerInfo>) -> Result<[usize; 4]> {
        let y = self.conv.out_shape(shape)?;
        let mk = |name: String, kind, i, o| LayerInfo {
            name,
            kind,
            in_shape: i,
            out_shape: o,
            block: block.map(|b| b.0.to_string()),
            branch: block.map(|b| b.1),
        };
        out.push(mk(format!("{}.conv", self.name), LayerKind::Conv, shape, y));
        out.push(mk(format!("{}.bn", self.name), LayerKind::BatchNorm, y, y));
        out.push(mk(format!("{}.relu", self.name), LayerKind::Relu, y, y));
        Ok(y)
    }
}

impl<T: Float> Module<T> for ConvUnit<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }
}

/// Four parallel branches concatenated along channels:
/// 1×1 | 1×1→3×3 | 1×1→5×5 | 3×3/1 max pool→1×1.
#[derive(Debug, Clone)]
struct Inception<T> {
    name: String,
    b1: ConvUnit<T>,
    b2: [ConvUnit<T>; 2],
    b3: [ConvUnit<T>; 2],
    pool: MaxPool2d,
    b4: ConvUnit<T>,
}

impl<T: Float> Inception<T> {
    fn new(spec: &InceptionSpec, cfg: &ArchConfig, cin: usize) -> Self {
        let name = format!("inception_{}", spec.name);
        let s = |c| cfg.scaled(c);
        let unit = |branch: &str, ci, co, k| ConvUnit::new(&format!("{name}.{branch}"), ci, co, k, 1);
        Inception {
            b1: unit("b1", cin, s(spec.b1), 1),
            b2: [unit("b2_reduce", cin, s(spec.b2_reduce), 1), unit("b2", s(spec.b2_reduce), s(spec.b2), 3)],
            b3: [unit("b3_reduce", cin, s(spec.b3_reduce), 1), unit("b3", s(spec.b3_reduce), s(spec.b3), 5)],
            pool: MaxPool2d::new(3, 1, 1),
            b4: unit("b4_proj", cin, s(spec.pool_proj), 1),
            name,
        }
    }

    fn widths(&self) -> [usize; 4] {
        [
            self.b1.out_channels(),
            self.b2[1].out_channels(),
            self.b3[1].out_channels(),
            self.b4.out_channels(),
        ]
    }

    fn out_channels(&self) -> usize {
        self.widths().iter().sum()
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y1 = self.b1.forward(x, mode)?;
        let y2 = self.b2[0].forward(x, mode)?;
        let y2 = self.b2[1].forward(&y2, mode)?;
        let y3 = self.b3[0].forward(x, mode)?;
        let y3 = self.b3[1].forward(&y3, mode)?;
        let y4 = self.pool.forward(x, mode)?;
        let y4 = self.b4.forward(&y4, mode)?;
        concat_channels(&[y1, y2, y3, y4])
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let parts = split_channels(dy, &self.widths())?;
        let mut dx = self.b1.backward(&parts[0])?;
        let g = self.b2[1].backward(&parts[1])?;
        add_assign(&mut dx, &self.b2[0].backward(&g)?);
        let g = self.b3[1].backward(&parts[2])?;
        add_assign(&mut dx, &self.b3[0].backward(&g)?);
        let g = self.b4.backward(&parts[3])?;
        add_assign(&mut dx, &self.pool.backward(&g)?);
        Ok(dx)
    }

    fn describe(&self, shape: [usize; 4], out: &mut Vec<LayerInfo>) -> Result<[usize; 4]> {
        let tag = |b| Some((self.name.as_str(), b));
        let o1 = self.b1.describe(shape, tag(0), out)?;
        let r = self.b2[0].describe(shape, tag(1), out)?;
        let o2 = self.b2[1].describe(r, tag(1), out)?;
        let r = self.b3[0].describe(shape, tag(2), out)?;
        let o3 = self.b3[1].describe(r, tag(2), out)?;
        let p = self.pool.out_shape(shape)?;
        out.push(LayerInfo {
            name: format!("{}.pool", self.name),
            kind: LayerKind::MaxPool,
            in_shape: shape,
            out_shape: p,
            block: Some(self.name.clone()),
            branch: Some(3),
        });
        let o4 = self.b4.describe(p, tag(3), out)?;
        for o in [o2, o3, o4] {
            if o[2..] != o1[2..] {
                return Err(Error::Shape(format!("{}: branch outputs disagree", self.name)));
            }
        }
        let y = [shape[0], self.out_channels(), o1[2], o1[3]];
        out.push(LayerInfo {
            name: format!("{}.concat", self.name),
            kind: LayerKind::Concat,
            in_shape: shape,
            out_shape: y,
            block: Some(self.name.clone()),
            branch: None,
        });
        Ok(y)
    }
}

impl<T: Float> Module<T> for Inception<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.b1.visit_params(f);
        self.b2.iter_mut().for_each(|u| u.visit_params(f));
        self.b3.iter_mut().for_each(|u| u.visit_params(f));
        self.b4.visit_params(f);
    }
}

fn add_assign<T: Float>(a: &mut Tensor<T>, b: &Tensor<T>) {
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[derive(Debug, Clone)]
enum Stage<T> {
    Unit(ConvUnit<T>),
    Pool(String, MaxPool2d),
    Inception(Box<Inception<T>>),
}

/// The assembled network.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: ArchConfig,
    stages: Vec<Stage<T>>,
    logit: Conv2d<T>,
    upsample: ConvTranspose2d<T>,
}

pub fn build_modified_googlenet<T: Float>(config: &ArchConfig, seed: u64) -> Result<Network<T>> {
    let mut net = Network::uninitialized(config)?;
    let mut rng = seed::rng(seed, "init");
    net.visit_convs(&mut |c| c.init(&mut rng));
    net.upsample.init(&mut rng);
    Ok(net)
}

impl<T: Float> Network<T> {
    /// All conv weights zero, batch norm at identity.
    pub fn uninitialized(config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let pool = |name: &str| Stage::Pool(name.to_string(), MaxPool2d::new(3, 2, 1));
        let s = |c| config.scaled(c);
        let mut stages = vec![
            Stage::Unit(ConvUnit::new("stem", config.input_channels, s(config.stem_channels), 7, 1)),
            Stage::Unit(ConvUnit::new("conv2_reduce", s(config.stem_channels), s(config.conv2_reduce), 1, 1)),
            Stage::Unit(ConvUnit::new("conv2", s(config.conv2_reduce), s(config.conv2_channels), 3, 1)),
        ];
        let mut channels = s(config.conv2_channels);
        if config.pool_schedule.contains(&PoolSite::AfterConv2) {
            stages.push(pool("pool2"));
        }
        for (i, spec) in config.inception.iter().enumerate() {
            let block = Inception::new(spec, config, channels);
            channels = block.out_channels();
            stages.push(Stage::Inception(Box::new(block)));
            if config.pool_schedule.contains(&PoolSite::AfterInception(i)) {
                stages.push(pool(&format!("pool_{}", spec.name)));
            }
        }
        Ok(Network {
            config: config.clone(),
            stages,
            logit: Conv2d::new("head.logit", channels, 1, ConvGeometry::new(1, 1, 0), true),
            upsample: ConvTranspose2d::new("head.upsample", 1, 1, config.upsample_geometry(), true),
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    fn visit_convs(&mut self, conv: &mut dyn FnMut(&mut Conv2d<T>)) {
        for stage in &mut self.stages {
            match stage {
                Stage::Unit(u) => conv(&mut u.conv),
                Stage::Pool(..) => {}
                Stage::Inception(b) => {
                    conv(&mut b.b1.conv);
                    b.b2.iter_mut().for_each(|u| conv(&mut u.conv));
                    b.b3.iter_mut().for_each(|u| conv(&mut u.conv));
                    conv(&mut b.b4.conv);
                }
            }
        }
        conv(&mut self.logit);
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        if shape[1] != self.config.input_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {:?}",
                self.config.input_channels, shape
            )));
        }
        let f = self.config.downsample_factor();
        if shape[0] == 0 || shape[2] == 0 || shape[3] == 0 || !shape[2].is_multiple_of(f) || !shape[3].is_multiple_of(f) {
            return Err(Error::Shape(format!("input sides must be positive multiples of {f}, got {shape:?}")));
        }
        Ok(())
    }

    /// Logits `(n, 1, h, w)` for slabs `(n, 28, h, w)`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x.shape)?;
        let mut cur = x.clone();
        for stage in &mut self.stages {
            cur = match stage {
                Stage::Unit(u) => u.forward(&cur, mode)?,
                Stage::Pool(_, p) => p.forward(&cur, mode)?,
                Stage::Inception(b) => b.forward(&cur, mode)?,
            };
        }
        let z = self.logit.forward(&cur, mode)?;
        self.upsample.forward(&z, mode)
    }

    /// Accumulates parameter gradients for `dlogits` after a training forward.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let g = self.upsample.backward(dlogits)?;
        let mut g = self.logit.backward(&g)?;
        for (i, stage) in self.stages.iter_mut().enumerate().rev() {
            if i == 0 {
                if let Stage::Unit(u) = stage {
                    return u.backward_params(&g);
                }
            }
            g = match stage {
                Stage::Unit(u) => u.backward(&g)?,
                Stage::Pool(_, p) => p.backward(&g)?,
                Stage::Inception(b) => b.backward(&g)?,
            };
        }
        Ok(())
    }

    /// Leaf layers with the shapes they see for `input`.
    pub fn layers(&self, input: [usize; 4]) -> Result<Vec<LayerInfo>> {
        self.check_input(input)?;
        let mut out = Vec::new();
        let mut shape = input;
        for stage in &self.stages {
            shape = match stage {
                Stage::Unit(u) => u.describe(shape, None, &mut out)?,
                Stage::Pool(name, p) => {
                    let o = p.out_shape(shape)?;
                    out.push(LayerInfo {
                        name: name.clone(),
                        kind: LayerKind::MaxPool,
                        in_shape: shape,
                        out_shape: o,
                        block: None,
                        branch: None,
                    });
                    o
                }
                Stage::Inception(b) => b.describe(shape, &mut out)?,
            };
        }
        let z = self.logit.out_shape(shape)?;
        out.push(LayerInfo {
            name: "head.logit".into(),
            kind: LayerKind::Conv,
            in_shape: shape,
            out_shape: z,
            block: None,
            branch: None,
        });
        let y = self.upsample.out_shape(z)?;
        out.push(LayerInfo {
            name: "head.upsample".into(),
            kind: LayerKind::ConvTranspose,
            in_shape: z,
            out_shape: y,
            block: None,
            branch: None,
        });
        Ok(out)
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        Ok(self.layers(input)?.last().expect("head").out_shape)
    }

    /// Feature-map shape entering the head.
    pub fn bottleneck_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        Ok(self.layers(input)?.iter().rev().nth(1).expect("head").in_shape)
    }

    /// Trainable scalar count.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.kind.trainable() {
                n += p.len();
            }
        });
        n
    }

    /// Convolution and transposed-convolution weight count.
    pub fn conv_param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.kind == ParamKind::Weight {
                n += p.len();
            }
        });
        n
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }

    /// Parameters (including running statistics) as `(name, shape, values)`.
    pub fn export_params(&mut self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.shape.clone(), p.value.clone())));
        out
    }

    /// Overwrites every parameter from `lookup(name, shape)`.
    pub fn import_params(&mut self, lookup: &mut dyn FnMut(&str, &[usize]) -> Result<Vec<T>>) -> Result<()> {
        let mut result = Ok(());
        self.visit_params(&mut |p| {
            if result.is_err() {
                return;
            }
            match lookup(&p.name, &p.shape) {
                Ok(v) if v.len() == p.value.len() => p.value = v,
                Ok(v) => {
                    result = Err(Error::Shape(format!("{}: {} values for shape {:?}", p.name, v.len(), p.shape)));
                }
                Err(e) => result = Err(e),
            }
        });
        result
    }

    /// Same architecture in another precision.
    pub fn cast<U: Float>(&mut self) -> Result<Network<U>> {
        let mut params = self.export_params().into_iter();
        let mut out = Network::<U>::uninitialized(&self.config)?;
        out.import_params(&mut |name, _| {
            let (n, _, v) = params.next().ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            debug_assert_eq!(n, name);
            Ok(v.iter().map(|x| U::from_f64(x.to_f64())).collect())
        })?;
        Ok(out)
    }
}

impl<T: Float> Module<T> for Network<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for stage in &mut self.stages {
            match stage {
                Stage::Unit(u) => u.visit_params(f),
                Stage::Pool(..) => {}
                Stage::Inception(b) => b.visit_params(f),
            }
        }
        self.logit.visit_params(f);
        self.upsample.visit_params(f);
    }
}

/// Slices forwarded together during inference.
pub const INFER_BATCH: usize = 8;

/// Probability map for a preprocessed study. Logits are resized back to the
/// study grid when the working size differs, then passed through a sigmoid
/// and masked to the brain.
pub fn predict_prepared(net: &mut Network<f32>, prepared: &PreparedStudy, study: &MultiSequenceStudy) -> Result<ProbabilityMap> {
    let dims = study.dims();
    let size = prepared.size();
    let n = size * size;
    let mut values = vec![0f32; dims.len()];
    let zs: Vec<usize> = (0..dims.nz).collect();
    for chunk in zs.chunks(INFER_BATCH) {
        let mut x = Tensor::zeros([chunk.len(), SLAB_CHANNELS, size, size]);
        for (i, &z) in chunk.iter().enumerate() {
            prepared.write_slab(z, &mut x.data[i * SLAB_CHANNELS * n..(i + 1) * SLAB_CHANNELS * n])?;
        }
        let logits = net.forward(&x, Mode::Infer)?;
        for (i, &z) in chunk.iter().enumerate() {
            let plane = Plane::new(size, size, logits.item(i).to_vec())?;
            let plane = resize_bilinear(&plane, dims.nx, dims.ny)?;
            let off = z * dims.plane_len();
            for (o, &l) in values[off..off + dims.plane_len()].iter_mut().zip(&plane.values) {
                *o = sigmoid(l);
            }
        }
    }
    ProbabilityMap::masked(values, study.brain_mask())
}

pub fn predict_study(net: &mut Network<f32>, study: &MultiSequenceStudy, slab_size: usize) -> Result<ProbabilityMap> {
    let prepared = PreparedStudy::new(study, slab_size)?;
    predict_prepared(net, &prepared, study)
}
