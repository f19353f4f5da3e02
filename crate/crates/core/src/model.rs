//! Residual encoder/decoder FCN.
//!
//! Layout for `num_scales = S`, widths `c_s = base_channels * 2^s`:
//!
//! ```text
//! stem      conv3x3 in -> c_0, ReLU                           (full resolution)
//! enc{s}    conv3x3 stride 2 c_{s-1} -> c_s, ReLU,
//!           blocks_per_scale x [x + conv3x3(ReLU(conv3x3 x))], ReLU
//! dec{s}    convT 4x4 stride 2 c_s -> c_{s-1}, + skip, ReLU  (s = S..1)
//! head      conv1x1 c_0 -> num_classes
//! ```
//!
//! The encoder parameters play the role of the downsampling weights and the
//! decoder/head parameters the learned upsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grad::{Element, Graph, ParamSet, Tensor, Var};
use crate::image::{LabelMap, BACKGROUND, CUP, DISK_RING};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcnConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub num_scales: usize,
    pub blocks_per_scale: usize,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 3,
            base_channels: 8,
            num_scales: 3,
            blocks_per_scale: 2,
        }
    }
}

/// Shape and He fan-in of one parameter tensor. A zero fan-in means the
/// tensor starts at zero (biases and the classification head).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
}

impl FcnConfig {
    /// Stage-I default: green channel in.
    pub fn stage1() -> Self {
        Self::default()
    }

    /// Stage-II default: green crop plus cup and disk probabilities.
    pub fn stage2() -> Self {
        Self {
            in_channels: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.in_channels == 0 {
            return fail("in_channels must be positive");
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.base_channels == 0 {
            return fail("base_channels must be positive");
        }
        if self.num_scales == 0 {
            return fail("num_scales must be positive");
        }
        if self.num_scales > 12 {
            return fail("num_scales must be at most 12");
        }
        if self.blocks_per_scale == 0 {
            return fail("blocks_per_scale must be positive");
        }
        Ok(())
    }

    pub fn width(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.num_scales
    }

    /// Every parameter the architecture needs, in construction order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut conv = |prefix: String, out: usize, inp: usize, k: usize| {
            specs.push(ParamSpec {
                name: format!("{prefix}.w"),
                dims: vec![out, inp, k, k],
                fan_in: inp * k * k,
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.b"),
                dims: vec![out],
                fan_in: 0,
            });
        };
        conv("stem".into(), self.width(0), self.in_channels, 3);
        for s in 1..=self.num_scales {
            conv(format!("enc{s}.down"), self.width(s), self.width(s - 1), 3);
            for j in 0..self.blocks_per_scale {
                conv(format!("enc{s}.block{j}.conv1"), self.width(s), self.width(s), 3);
                conv(format!("enc{s}.block{j}.conv2"), self.width(s), self.width(s), 3);
            }
        }
        conv("head".into(), self.num_classes, self.width(0), 1);
        // Zero head: training starts from uniform class probabilities.
        if let Some(head) = specs.iter_mut().find(|p| p.name == "head.w") {
            head.fan_in = 0;
        }
        for s in 1..=self.num_scales {
            // [in, out, 4, 4]; each output pixel sees in * 2 * 2 taps.
            specs.push(ParamSpec {
                name: format!("dec{s}.up.w"),
                dims: vec![self.width(s), self.width(s - 1), 4, 4],
                fan_in: self.width(s) * 4,
            });
            specs.push(ParamSpec {
                name: format!("dec{s}.up.b"),
                dims: vec![self.width(s - 1)],
                fan_in: 0,
            });
        }
        specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub config: FcnConfig,
    pub params: ParamSet<f32>,
}

/// He-initialised model; identical `(config, seed)` give identical weights.
pub fn build_fcn(config: FcnConfig, seed: u64) -> Result<FcnModel> {
    config.validate()?;
    let mut specs = config.param_specs();
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for spec in specs {
        let n: usize = spec.dims.iter().product();
        let values = if spec.fan_in == 0 {
            vec![0.0f32; n]
        } else {
            let std = (2.0 / spec.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        params.insert(spec.name, Tensor::new(&spec.dims, values)?)?;
    }
    Ok(FcnModel { config, params })
}

fn conv_block<T: Element>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    prefix: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    Ok(g.conv2d(x, w, b, stride, pad)?)
}

/// Records the network on `g` and returns the logits node.
pub fn forward_graph<T: Element>(
    config: &FcnConfig,
    params: &ParamSet<T>,
    g: &mut Graph<T>,
    input: Var,
) -> Result<Var> {
    check_input(config, g.value(input).dims())?;
    let stem = conv_block(g, params, "stem", input, 1, 1)?;
    let mut x = g.relu(stem)?;
    let mut skips = vec![x];
    for s in 1..=config.num_scales {
        let down = conv_block(g, params, &format!("enc{s}.down"), x, 2, 1)?;
        x = g.relu(down)?;
        for j in 0..config.blocks_per_scale {
            let c1 = conv_block(g, params, &format!("enc{s}.block{j}.conv1"), x, 1, 1)?;
            let r1 = g.relu(c1)?;
            let c2 = conv_block(g, params, &format!("enc{s}.block{j}.conv2"), r1, 1, 1)?;
            let sum = g.add(x, c2)?;
            x = g.relu(sum)?;
        }
        skips.push(x);
    }
    for s in (1..=config.num_scales).rev() {
        let w = g.param(params, &format!("dec{s}.up.w"))?;
        let b = g.param(params, &format!("dec{s}.up.b"))?;
        let up = g.conv2d_transpose(x, w, b, 2, 1)?;
        let merged = g.add(up, skips[s - 1])?;
        x = g.relu(merged)?;
    }
    conv_block(g, params, "head", x, 1, 0)
}

fn check_input(config: &FcnConfig, dims: &[usize]) -> Result<()> {
    let d = config.divisor();
    match *dims {
        [n, c, h, w] if n > 0 && c == config.in_channels && h > 0 && w > 0 && h % d == 0 && w % d == 0 => Ok(()),
        [n, _, h, w] => Err(Error::Shape {
            expected: vec![n, config.in_channels, h.next_multiple_of(d).max(d), w.next_multiple_of(d).max(d)],
            actual: dims.to_vec(),
        }),
        _ => Err(Error::Shape {
            expected: vec![1, config.in_channels, d, d],
            actual: dims.to_vec(),
        }),
    }
}

impl FcnModel {
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Logits `[N, num_classes, H, W]` for a batch `[N, in_channels, H, W]`.
    pub fn forward(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let y = forward_graph(&self.config, &self.params, &mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn predict_probabilities(&self, image: &Tensor<f32>) -> Result<ProbMap> {
        if image.dims().first() != Some(&1) {
            return Err(Error::Shape {
                expected: vec![1, self.config.in_channels],
                actual: image.dims().to_vec(),
            });
        }
        let logits = self.forward(image)?;
        ProbMap::from_logits(&logits)
    }
}

/// Per-pixel class probabilities `[K, H, W]` in class order
/// background, disk rim, cup.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::Shape {
                expected: vec![classes, height, width],
                actual: vec![data.len()],
            });
        }
        Ok(Self { classes, height, width, data })
    }

    /// Softmax over the channel axis of a single-image logits tensor.
    pub fn from_logits(logits: &Tensor<f32>) -> Result<Self> {
        let [1, k, h, w] = *logits.dims() else {
            return Err(Error::Shape {
                expected: vec![1, 3, 0, 0],
                actual: logits.dims().to_vec(),
            });
        };
        let z = logits.values();
        let hw = h * w;
        let mut data = vec![0.0f32; k * hw];
        for px in 0..hw {
            let m = (0..k).map(|c| z[c * hw + px]).fold(f32::NEG_INFINITY, f32::max);
            let mut s = 0.0f64;
            for c in 0..k {
                let e = ((z[c * hw + px] - m) as f64).exp();
                data[c * hw + px] = e as f32;
                s += e;
            }
            for c in 0..k {
                data[c * hw + px] = (data[c * hw + px] as f64 / s) as f32;
            }
        }
        Self::new(k, h, w, data)
    }

    /// One-hot probabilities for a label map.
    pub fn from_labels(labels: &LabelMap) -> Self {
        let (h, w) = labels.dims();
        let mut data = vec![0.0f32; 3 * h * w];
        for (px, &c) in labels.data().iter().enumerate() {
            data[c as usize * h * w + px] = 1.0;
        }
        Self { classes: 3, height: h, width: w, data }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[class * hw..(class + 1) * hw]
    }

    pub fn prob_cup(&self) -> Vec<f32> {
        self.plane(CUP as usize).to_vec()
    }

    /// Probability of lying inside the disk: rim plus cup.
    pub fn prob_disk(&self) -> Vec<f32> {
        self.plane(DISK_RING as usize)
            .iter()
            .zip(self.plane(CUP as usize))
            .map(|(r, c)| r + c)
            .collect()
    }

    /// Most likely class per pixel; ties resolve to the lower class index.
    pub fn argmax(&self) -> LabelMap {
        let hw = self.height * self.width;
        let data = (0..hw)
            .map(|px| {
                let mut best = BACKGROUND;
                for c in 1..self.classes {
                    if self.data[c * hw + px] > self.data[best as usize * hw + px] {
                        best = c as u8;
                    }
                }
                best
            })
            .collect();
        LabelMap::new(self.height, self.width, data).expect("argmax yields valid classes")
    }
}
