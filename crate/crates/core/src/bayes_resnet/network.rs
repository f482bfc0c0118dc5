//! ResNet with a dropout layer in every residual block and before the head.
//!
//! Activations are kept channel-major, `(C, B, H, W)`, so every convolution is
//! a single 2-D matmul of the weight `(O, C*k*k)` against an im2col matrix
//! `(C*k*k, B*Ho*Wo)` and batch norm reduces along the last axis. Parameter
//! names follow torchvision, so converted ImageNet checkpoints load directly.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{ArchConfig, BlockKind, ModelError};

pub const N_CLASSES: usize = 2;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Batch statistics, running-stat update with the given momentum, dropout on.
    Train { bn_momentum: f64 },
    /// Running statistics, dropout on.
    McDropout,
    /// Running statistics, dropout off.
    Deterministic,
}

impl Mode {
    fn dropout_active(self) -> bool {
        !matches!(self, Mode::Deterministic)
    }

    fn tracks_grad(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

fn param(v: &Var, mode: Mode) -> Tensor {
    if mode.tracks_grad() {
        v.as_tensor().clone()
    } else {
        v.as_tensor().detach()
    }
}

#[derive(Debug)]
struct BatchNorm {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm {
    fn new(channels: usize, dev: &Device) -> candle_core::Result<Self> {
        Ok(Self {
            weight: Var::ones((channels, 1), DType::F32, dev)?,
            bias: Var::zeros((channels, 1), DType::F32, dev)?,
            running_mean: Var::zeros((channels, 1), DType::F32, dev)?,
            running_var: Var::ones((channels, 1), DType::F32, dev)?,
        })
    }

    /// `x` is `(C, N)`.
    fn forward(&self, x: &Tensor, mode: Mode) -> candle_core::Result<Tensor> {
        let (mean, var) = match mode {
            Mode::Train { bn_momentum } => {
                let n = x.dim(1)?;
                let mean = x.mean_keepdim(1)?;
                let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)?;
                let unbiased = (var.detach() * (n as f64 / (n.max(2) - 1) as f64))?;
                let m = bn_momentum;
                self.running_mean.set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?)?;
                self.running_var.set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
                (mean, var)
            }
            _ => (self.running_mean.as_tensor().clone(), self.running_var.as_tensor().clone()),
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        normed.broadcast_mul(&param(&self.weight, mode))?.broadcast_add(&param(&self.bias, mode))
    }
}

/// Keeps every other element along `axis` (whose length must be even).
fn every_other(x: &Tensor, axis: usize) -> candle_core::Result<Tensor> {
    let mut dims = x.dims().to_vec();
    let n = dims[axis];
    dims[axis] = n / 2;
    dims.insert(axis + 1, 2);
    x.reshape(dims)?.narrow(axis + 1, 0, 1)?.squeeze(axis + 1)
}

/// Output extent and a copy of `x` padded so that every kernel offset of a
/// strided window stays in bounds.
fn pad_for_window(x: &Tensor, k: usize, stride: usize, pad: usize) -> candle_core::Result<(Tensor, usize, usize)> {
    let (_, _, h, w) = x.dims4()?;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let need_h = stride * ho + k - 1;
    let need_w = stride * wo + k - 1;
    let xp = x
        .pad_with_zeros(2, pad, need_h.saturating_sub(h + pad))?
        .pad_with_zeros(3, pad, need_w.saturating_sub(w + pad))?;
    Ok((xp, ho, wo))
}

/// Window at kernel offset `(dy, dx)` subsampled by `stride`, shape `(C, B, Ho, Wo)`.
fn shifted_window(xp: &Tensor, dy: usize, dx: usize, stride: usize, ho: usize, wo: usize) -> candle_core::Result<Tensor> {
    let mut r = xp.narrow(2, dy, stride * ho)?;
    if stride == 2 {
        r = every_other(&r, 2)?;
    }
    r = r.narrow(3, dx, stride * wo)?;
    if stride == 2 {
        r = every_other(&r, 3)?;
    }
    Ok(r)
}

#[derive(Debug)]
struct ConvBn {
    weight: Var,
    kernel: usize,
    stride: usize,
    pad: usize,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dev: &Device,
        rng: &mut R,
    ) -> candle_core::Result<Self> {
        assert!(stride == 1 || stride == 2, "only unit and double strides are supported");
        // Kaiming normal, fan-out, ReLU gain
        let std = (2.0 / (cout * kernel * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data: Vec<f32> = (0..cout * cin * kernel * kernel).map(|_| normal.sample(rng) as f32).collect();
        Ok(Self {
            weight: Var::from_tensor(&Tensor::from_vec(data, (cout, cin * kernel * kernel), dev)?)?,
            kernel,
            stride,
            pad,
            bn: BatchNorm::new(cout, dev)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> candle_core::Result<Tensor> {
        let (c, b, h, w) = x.dims4()?;
        let (k, s) = (self.kernel, self.stride);
        let (cols, ho, wo) = if k == 1 && s == 1 && self.pad == 0 {
            (x.reshape((c, b * h * w))?, h, w)
        } else {
            let (xp, ho, wo) = pad_for_window(x, k, s, self.pad)?;
            let n = b * ho * wo;
            let cols = if k == 1 {
                shifted_window(&xp, 0, 0, s, ho, wo)?.reshape((c, n))?
            } else {
                let mut taps = Vec::with_capacity(k * k);
                for dy in 0..k {
                    for dx in 0..k {
                        taps.push(shifted_window(&xp, dy, dx, s, ho, wo)?.reshape((c, 1, n))?);
                    }
                }
                Tensor::cat(&taps, 1)?.reshape((c * k * k, n))?
            };
            (cols, ho, wo)
        };
        let y = param(&self.weight, mode).matmul(&cols)?;
        let y = self.bn.forward(&y, mode)?;
        let o = y.dim(0)?;
        y.reshape((o, b, ho, wo))
    }
}

fn dropout<R: Rng>(x: &Tensor, p: f64, mode: Mode, rng: &mut R) -> candle_core::Result<Tensor> {
    if p <= 0.0 || !mode.dropout_active() {
        return Ok(x.clone());
    }
    let keep = (1.0 / (1.0 - p)) as f32;
    let p32 = p as f32;
    let mask: Vec<f32> = (0..x.elem_count()).map(|_| if rng.random::<f32>() < p32 { 0.0 } else { keep }).collect();
    x.mul(&Tensor::from_vec(mask, x.shape(), x.device())?)
}

/// 3x3, stride 2, padding 1 max pool. Zero padding is exact because the input
/// is post-ReLU.
fn max_pool_3x3_s2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (xp, ho, wo) = pad_for_window(x, 3, 2, 1)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let r = shifted_window(&xp, dy, dx, 2, ho, wo)?;
            out = Some(match out {
                None => r,
                Some(o) => o.maximum(&r)?,
            });
        }
    }
    Ok(out.expect("nine taps"))
}

#[derive(Debug)]
struct Block {
    convs: Vec<ConvBn>,
    downsample: Option<ConvBn>,
}

impl Block {
    fn forward<R: Rng>(&self, x: &Tensor, p: f64, mode: Mode, rng: &mut R) -> candle_core::Result<Tensor> {
        let identity = match &self.downsample {
            Some(d) => d.forward(x, mode)?,
            None => x.clone(),
        };
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h, mode)?;
            if i < last {
                h = h.relu()?;
            }
            if i == 0 {
                h = dropout(&h, p, mode, rng)?;
            }
        }
        (h + identity)?.relu()
    }
}

#[derive(Debug)]
pub struct ResNet {
    stem: ConvBn,
    blocks: Vec<Block>,
    fc_weight: Var,
    fc_bias: Var,
    dropout_p: f64,
    /// torchvision name -> variable, trainable parameters only.
    params: BTreeMap<String, Var>,
    /// Running batch-norm statistics.
    buffers: BTreeMap<String, Var>,
    /// Convolution weight name -> kernel size.
    kernels: BTreeMap<String, usize>,
}

#[derive(Default)]
struct Registry {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    kernels: BTreeMap<String, usize>,
}

impl Registry {
    fn conv(&mut self, conv: &str, bn: &str, c: &ConvBn) {
        self.kernels.insert(format!("{conv}.weight"), c.kernel);
        self.params.insert(format!("{conv}.weight"), c.weight.clone());
        self.params.insert(format!("{bn}.weight"), c.bn.weight.clone());
        self.params.insert(format!("{bn}.bias"), c.bn.bias.clone());
        self.buffers.insert(format!("{bn}.running_mean"), c.bn.running_mean.clone());
        self.buffers.insert(format!("{bn}.running_var"), c.bn.running_var.clone());
    }
}

impl ResNet {
    /// Randomly initialised network; identical seeds give identical weights.
    pub fn new<R: Rng>(arch: &ArchConfig, dropout_p: f64, rng: &mut R) -> candle_core::Result<Self> {
        let dev = Device::Cpu;
        let mut reg = Registry::default();
        let width = arch.base_width;
        let stem = ConvBn::new(3, width, 7, 2, 3, &dev, rng)?;
        reg.conv("conv1", "bn1", &stem);

        let expansion = arch.block.expansion();
        let mut cin = width;
        let mut blocks = Vec::new();
        for (stage, &n_blocks) in arch.layers.iter().enumerate() {
            let planes = width << stage;
            for j in 0..n_blocks {
                let stride = if j == 0 && stage > 0 { 2 } else { 1 };
                let prefix = format!("layer{}.{j}", stage + 1);
                let convs = match arch.block {
                    BlockKind::Basic => vec![
                        ConvBn::new(cin, planes, 3, stride, 1, &dev, rng)?,
                        ConvBn::new(planes, planes, 3, 1, 1, &dev, rng)?,
                    ],
                    BlockKind::Bottleneck => vec![
                        ConvBn::new(cin, planes, 1, 1, 0, &dev, rng)?,
                        ConvBn::new(planes, planes, 3, stride, 1, &dev, rng)?,
                        ConvBn::new(planes, planes * expansion, 1, 1, 0, &dev, rng)?,
                    ],
                };
                for (i, c) in convs.iter().enumerate() {
                    reg.conv(&format!("{prefix}.conv{}", i + 1), &format!("{prefix}.bn{}", i + 1), c);
                }
                let downsample = if stride != 1 || cin != planes * expansion {
                    let d = ConvBn::new(cin, planes * expansion, 1, stride, 0, &dev, rng)?;
                    reg.conv(&format!("{prefix}.downsample.0"), &format!("{prefix}.downsample.1"), &d);
                    Some(d)
                } else {
                    None
                };
                blocks.push(Block { convs, downsample });
                cin = planes * expansion;
            }
        }
        let bound = 1.0 / (cin as f64).sqrt();
        let uniform = Uniform::new(-bound, bound).expect("non-empty range");
        let w: Vec<f32> = (0..N_CLASSES * cin).map(|_| uniform.sample(rng) as f32).collect();
        let b: Vec<f32> = (0..N_CLASSES).map(|_| uniform.sample(rng) as f32).collect();
        let fc_weight = Var::from_tensor(&Tensor::from_vec(w, (N_CLASSES, cin), &dev)?)?;
        let fc_bias = Var::from_tensor(&Tensor::from_vec(b, N_CLASSES, &dev)?)?;
        reg.params.insert("fc.weight".into(), fc_weight.clone());
        reg.params.insert("fc.bias".into(), fc_bias.clone());
        let Registry { params, buffers, kernels } = reg;
        Ok(Self { stem, blocks, fc_weight, fc_bias, dropout_p, params, buffers, kernels })
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    /// Logits `(B, 2)` for an input laid out `(3, B, H, W)`.
    pub fn forward<R: Rng>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> candle_core::Result<Tensor> {
        let mut h = max_pool_3x3_s2(&self.stem.forward(x, mode)?.relu()?)?;
        for block in &self.blocks {
            h = block.forward(&h, self.dropout_p, mode, rng)?;
        }
        let (c, b, hh, ww) = h.dims4()?;
        let pooled = h.reshape((c, b, hh * ww))?.mean(2)?.t()?; // (B, C)
        let pooled = dropout(&pooled, self.dropout_p, mode, rng)?;
        pooled.matmul(&param(&self.fc_weight, mode).t()?)?.broadcast_add(&param(&self.fc_bias, mode))
    }

    /// Every parameter and buffer in torchvision shapes (convolutions
    /// `(O, C, k, k)`, batch-norm vectors `(C,)`).
    pub fn state_dict(&self) -> candle_core::Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (name, v) in self.params.iter().chain(&self.buffers) {
            out.insert(name.clone(), self.to_torch_shape(name, v.as_tensor())?);
        }
        Ok(out)
    }

    fn to_torch_shape(&self, name: &str, t: &Tensor) -> candle_core::Result<Tensor> {
        let t = t.copy()?;
        if name.starts_with("fc.") {
            return Ok(t);
        }
        if t.dim(1)? == 1 {
            return t.flatten_all();
        }
        let (o, ckk) = t.dims2()?;
        let k = self.kernel_of(name);
        t.reshape((o, ckk / (k * k), k, k))
    }

    fn kernel_of(&self, name: &str) -> usize {
        self.kernels.get(name).copied().unwrap_or(1)
    }

    /// Copies tensors from `state` into the matching variables. With
    /// `skip_head` the classifier head keeps its current values (the
    /// ImageNet head has a different number of classes).
    pub fn load_state(&self, state: &BTreeMap<String, Tensor>, skip_head: bool) -> Result<(), ModelError> {
        for (name, var) in self.params.iter().chain(&self.buffers) {
            if skip_head && name.starts_with("fc.") {
                continue;
            }
            let src = state.get(name).ok_or_else(|| ModelError::StateMismatch {
                name: name.clone(),
                detail: "missing from checkpoint".into(),
            })?;
            let dst_shape = var.as_tensor().shape().clone();
            if src.elem_count() != dst_shape.elem_count() {
                return Err(ModelError::StateMismatch {
                    name: name.clone(),
                    detail: format!("checkpoint shape {:?}, network shape {:?}", src.dims(), dst_shape.dims()),
                });
            }
            var.set(&src.to_dtype(DType::F32)?.reshape(dst_shape)?)?;
        }
        Ok(())
    }

    pub fn load_pretrained(&self, path: &Path) -> Result<(), ModelError> {
        if !path.is_file() {
            return Err(ModelError::WeightsUnavailable(Some(path.to_path_buf())));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.load_state(&tensors.into_iter().collect(), true)
    }

    /// Deep copy of every parameter and buffer.
    pub fn snapshot(&self) -> candle_core::Result<BTreeMap<String, Tensor>> {
        self.params.iter().chain(&self.buffers).map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?))).collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
        self.load_state(snapshot, false)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig { block: BlockKind::Bottleneck, layers: [1, 1, 1, 1], base_width: 4 }
    }

    fn nchw_to_cbhw(t: &Tensor) -> Tensor {
        t.permute((1, 0, 2, 3)).unwrap().contiguous().unwrap()
    }

    #[test]
    fn im2col_conv_matches_candle_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p, h) in [(3, 1, 1, 9), (3, 2, 1, 9), (3, 2, 1, 8), (1, 2, 0, 7), (7, 2, 3, 17), (1, 1, 0, 5)] {
            let conv = ConvBn::new(3, 5, k, s, p, &Device::Cpu, &mut rng).unwrap();
            let x = Tensor::randn(0f32, 1.0, (2, 3, h, h + 1), &Device::Cpu).unwrap();
            let ours = conv.forward(&nchw_to_cbhw(&x), Mode::Deterministic).unwrap();
            let w = conv.weight.as_tensor().reshape((5, 3, k, k)).unwrap();
            let reference = x.conv2d(&w, p, s, 1, 1).unwrap();
            // default running stats: y / sqrt(1 + eps)
            let reference = (reference / (1.0 + BN_EPS).sqrt()).unwrap();
            let reference = nchw_to_cbhw(&reference);
            assert_eq!(ours.dims(), reference.dims(), "k{k} s{s} p{p} h{h}");
            let diff = (ours - reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(diff < 1e-4, "k{k} s{s} p{p}: {diff}");
        }
    }

    #[test]
    fn max_pool_matches_reference() {
        let x = Tensor::rand(0f32, 1.0, (1, 2, 9, 8), &Device::Cpu).unwrap();
        let ours = max_pool_3x3_s2(&nchw_to_cbhw(&x)).unwrap();
        let padded = x.pad_with_zeros(2, 1, 1).unwrap().pad_with_zeros(3, 1, 1).unwrap();
        let (pw, ph) = (padded.dim(3).unwrap(), padded.dim(2).unwrap());
        let flat = padded.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let (_, _, ho, wo) = ours.dims4().unwrap();
        assert_eq!((ho, wo), (5, 4));
        let ours = ours.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for c in 0..2 {
            for i in 0..ho {
                for j in 0..wo {
                    let mut m = f32::MIN;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(flat[(c * ph + 2 * i + dy) * pw + 2 * j + dx]);
                        }
                    }
                    assert_eq!(ours[(c * ho + i) * wo + j], m);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ResNet::new(&tiny(), 0.2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = ResNet::new(&tiny(), 0.2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (sa, sb) = (a.state_dict().unwrap(), b.state_dict().unwrap());
        assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
        for (k, t) in &sa {
            let x = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = sb[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()), "{k}");
        }
    }

    #[test]
    fn resnet50_uses_torchvision_names_and_shapes() {
        let net = ResNet::new(&ArchConfig::resnet50(), 0.2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let state = net.state_dict().unwrap();
        let n_params: usize = net.params.values().map(|v| v.as_tensor().elem_count()).sum();
        // torchvision resnet50 has 25,557,032 parameters with a 1000-way head
        assert_eq!(n_params, 25_557_032 - 2048 * 998 - 998);
        assert_eq!(state["conv1.weight"].dims(), &[64, 3, 7, 7]);
        assert_eq!(state["layer1.0.conv1.weight"].dims(), &[64, 64, 1, 1]);
        assert_eq!(state["layer1.0.conv2.weight"].dims(), &[64, 64, 3, 3]);
        assert_eq!(state["layer4.2.conv3.weight"].dims(), &[2048, 512, 1, 1]);
        assert_eq!(state["layer2.0.downsample.0.weight"].dims(), &[512, 256, 1, 1]);
        assert_eq!(state["layer3.5.bn2.running_var"].dims(), &[256]);
        assert_eq!(state["fc.weight"].dims(), &[2, 2048]);
    }

    #[test]
    fn state_round_trip_through_load() {
        let a = ResNet::new(&tiny(), 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = ResNet::new(&tiny(), 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        b.load_state(&a.state_dict().unwrap(), false).unwrap();
        let x = Tensor::randn(0f32, 1.0, (3, 2, 32, 32), &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ya = a.forward(&x, Mode::Deterministic, &mut rng).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let yb = b.forward(&x, Mode::Deterministic, &mut rng).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn missing_pretrained_file() {
        let net = ResNet::new(&tiny(), 0.2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            net.load_pretrained(Path::new("/nonexistent/resnet50.safetensors")),
            Err(ModelError::WeightsUnavailable(_))
        ));
    }
}
