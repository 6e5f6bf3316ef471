//! UNet-style encoder/decoder with a 1×1 convolutional mask head.
//!
//! Layout for `depth = d`, `base_channels = c`:
//!
//! ```text
//! input ─ enc0 (c) ──────────────────────────── dec0 (c) ─ head ─ logits
//!           └ pool ─ enc1 (2c) ────────── dec1 (2c) ┘
//!                      └ pool ─ …  bottleneck (2^d · c) ┘
//! ```
//!
//! Each encoder level and the bottleneck are two 3×3 convolutions with ReLU
//! and an optional 1×1 residual shortcut. Each decoder level upsamples with a
//! 2×2 transposed convolution, concatenates the matching encoder output
//! (optionally passed through an attention gate) and applies two 3×3
//! convolutions with ReLU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AttentionGate, Conv, GateCache, Kernel, UpConv};
use super::params::{Grads, ParamStore};
use super::tensor::{maxpool2, maxpool2_backward, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub in_channels: usize,
    pub use_attention: bool,
    pub residual_encoder_blocks: bool,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            input_size: 256,
            in_channels: 3,
            use_attention: false,
            residual_encoder_blocks: true,
        }
    }
}

impl SegModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        if self.in_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "in_channels must be 3, got {}",
                self.in_channels
            )));
        }
        let stride = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} is not divisible by 2^depth = {stride}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Smallest spatial granularity the network accepts.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

struct BlockCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    output: Tensor<T>,
}

impl ConvBlock {
    fn register<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        residual: bool,
    ) -> Self {
        let conv1 = Conv::register(store, rng, &format!("{name}.conv1"), cin, cout, Kernel::Three);
        let conv2 = Conv::register(store, rng, &format!("{name}.conv2"), cout, cout, Kernel::Three);
        let shortcut =
            residual.then(|| Conv::register(store, rng, &format!("{name}.shortcut"), cin, cout, Kernel::One));
        Self { conv1, conv2, shortcut }
    }

    fn forward<T: Real>(&self, p: &ParamStore<T>, input: Tensor<T>) -> BlockCache<T> {
        let mut hidden = self.conv1.forward(p, &input);
        hidden.relu_in_place();
        let mut output = self.conv2.forward(p, &hidden);
        if let Some(sc) = &self.shortcut {
            output.add_assign(&sc.forward(p, &input));
        }
        output.relu_in_place();
        BlockCache { input, hidden, output }
    }

    fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &BlockCache<T>,
        mut dout: Tensor<T>,
        g: &mut Grads<T>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        dout.relu_backward_in_place(&cache.output);
        let mut dhidden = self
            .conv2
            .backward(p, &cache.hidden, &dout, g, true)
            .expect("input gradient requested");
        dhidden.relu_backward_in_place(&cache.hidden);
        let mut dx = self.conv1.backward(p, &cache.input, &dhidden, g, want_input);
        if let Some(sc) = &self.shortcut {
            if let Some(ds) = sc.backward(p, &cache.input, &dout, g, want_input) {
                if let Some(dx) = dx.as_mut() {
                    dx.add_assign(&ds);
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    up: UpConv,
    gate: Option<AttentionGate>,
    conv1: Conv,
    conv2: Conv,
}

struct UpCache<T> {
    below: Tensor<T>,
    upsampled: Tensor<T>,
    gate: Option<GateCache<T>>,
    concat: Tensor<T>,
    hidden: Tensor<T>,
    output: Tensor<T>,
}

/// Everything the reverse pass needs from one forward pass.
pub struct ForwardCache<T> {
    encoders: Vec<(BlockCache<T>, Vec<u32>)>,
    bottleneck: BlockCache<T>,
    /// Indexed by level, `decoders[0]` is the full-resolution level.
    decoders: Vec<UpCache<T>>,
}

/// The segmentation network. Parameters live in a flat [`ParamStore`] so
/// they can be checkpointed and optimized uniformly.
#[derive(Clone, Debug)]
pub struct SegNet<T> {
    config: SegModelConfig,
    params: ParamStore<T>,
    encoders: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    decoders: Vec<UpBlock>,
    head: Conv,
}

impl<T: Real> SegNet<T> {
    /// Build a network with He-normal weights and zero biases drawn from
    /// `seed`. The draw order is fixed, so equal seeds give equal weights
    /// regardless of scalar type.
    pub fn new(config: SegModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let residual = config.residual_encoder_blocks;
        let mut encoders = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for level in 0..config.depth {
            let cout = config.channels_at(level);
            encoders.push(ConvBlock::register(&mut params, &mut rng, &format!("enc{level}"), cin, cout, residual));
            cin = cout;
        }
        let bottleneck = ConvBlock::register(
            &mut params,
            &mut rng,
            "bottleneck",
            cin,
            config.channels_at(config.depth),
            residual,
        );
        let mut decoders = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let c = config.channels_at(level);
            let name = format!("dec{level}");
            let up = UpConv::register(&mut params, &mut rng, &format!("{name}.up"), 2 * c, c);
            let gate = config
                .use_attention
                .then(|| AttentionGate::register(&mut params, &mut rng, &format!("{name}.gate"), c));
            let conv1 = Conv::register(&mut params, &mut rng, &format!("{name}.conv1"), 2 * c, c, Kernel::Three);
            let conv2 = Conv::register(&mut params, &mut rng, &format!("{name}.conv2"), c, c, Kernel::Three);
            decoders.push(UpBlock { up, gate, conv1, conv2 });
        }
        decoders.reverse();
        let head = Conv::register(&mut params, &mut rng, "head", config.base_channels, 1, Kernel::One);
        Ok(Self {
            config,
            params,
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &SegModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Same architecture and weights in another scalar type.
    pub fn cast<U: Real>(&self) -> SegNet<U> {
        SegNet {
            config: self.config.clone(),
            params: self.params.cast(),
            encoders: self.encoders.clone(),
            bottleneck: self.bottleneck.clone(),
            decoders: self.decoders.clone(),
            head: self.head.clone(),
        }
    }

    /// Parameter ids of the mask head, `(weight, bias)`.
    pub fn head_ids(&self) -> (usize, usize) {
        (self.head.weight, self.head.bias)
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.stride();
        if x.channels != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} channels, got {}",
                self.config.in_channels, x.channels
            )));
        }
        if x.height == 0 || x.width == 0 || x.height % s != 0 || x.width % s != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial size {}x{} is not a positive multiple of {s}",
                x.width, x.height
            )));
        }
        Ok(())
    }

    /// Logit map (`1 × H × W`) plus the cache for [`SegNet::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let p = &self.params;
        let mut encoders = Vec::with_capacity(self.config.depth);
        let mut current = x.clone();
        for block in &self.encoders {
            let cache = block.forward(p, current);
            let (pooled, arg) = maxpool2(&cache.output);
            encoders.push((cache, arg));
            current = pooled;
        }
        let bottleneck = self.bottleneck.forward(p, current);
        let mut below = bottleneck.output.clone();
        let mut decoders: Vec<Option<UpCache<T>>> = (0..self.config.depth).map(|_| None).collect();
        for level in (0..self.config.depth).rev() {
            let block = &self.decoders[level];
            let skip = &encoders[level].0.output;
            let upsampled = block.up.forward(p, &below);
            let (gated, gate) = match &block.gate {
                Some(g) => {
                    let (out, cache) = g.forward(p, skip, &upsampled);
                    (Some(out), Some(cache))
                }
                None => (None, None),
            };
            let concat = Tensor::concat(&upsampled, gated.as_ref().unwrap_or(skip));
            let mut hidden = block.conv1.forward(p, &concat);
            hidden.relu_in_place();
            let mut output = block.conv2.forward(p, &hidden);
            output.relu_in_place();
            let next = output.clone();
            decoders[level] = Some(UpCache {
                below,
                upsampled,
                gate,
                concat,
                hidden,
                output,
            });
            below = next;
        }
        let logits = self.head.forward(p, &below);
        let cache = ForwardCache {
            encoders,
            bottleneck,
            decoders: decoders.into_iter().map(|c| c.expect("every level visited")).collect(),
        };
        Ok((logits, cache))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    /// Per-pixel microplastic probability for each patch, order preserved.
    pub fn forward(&self, batch: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        batch
            .iter()
            .map(|x| {
                let mut z = self.logits(x)?;
                z.data.iter_mut().for_each(|v| *v = sigmoid(*v));
                Ok(z)
            })
            .collect()
    }

    /// Reverse pass from `dlogits` into freshly accumulated gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Tensor<T>, g: &mut Grads<T>) {
        let p = &self.params;
        let top = &cache.decoders[0].output;
        let mut grad = self
            .head
            .backward(p, top, dlogits, g, true)
            .expect("input gradient requested");
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..self.config.depth).map(|_| None).collect();
        for level in 0..self.config.depth {
            let block = &self.decoders[level];
            let dc = &cache.decoders[level];
            grad.relu_backward_in_place(&dc.output);
            let mut dhidden = block
                .conv2
                .backward(p, &dc.hidden, &grad, g, true)
                .expect("input gradient requested");
            dhidden.relu_backward_in_place(&dc.hidden);
            let dconcat = block
                .conv1
                .backward(p, &dc.concat, &dhidden, g, true)
                .expect("input gradient requested");
            let (mut dup, dskip_gated) = dconcat.split_channels(dc.upsampled.channels);
            let skip = &cache.encoders[level].0.output;
            let dskip = match (&block.gate, &dc.gate) {
                (Some(gate), Some(gc)) => {
                    let (dskip, dgate) = gate.backward(p, skip, &dc.upsampled, gc, &dskip_gated, g);
                    dup.add_assign(&dgate);
                    dskip
                }
                _ => dskip_gated,
            };
            skip_grads[level] = Some(dskip);
            grad = block.up.backward(p, &dc.below, &dup, g);
        }
        // `grad` now flows into the bottleneck output.
        grad = self
            .bottleneck
            .backward(p, &cache.bottleneck, grad, g, true)
            .expect("input gradient requested");
        for level in (0..self.config.depth).rev() {
            let (bc, arg) = &cache.encoders[level];
            let out = &bc.output;
            let mut dout = maxpool2_backward(&grad, arg, out.channels, out.height, out.width);
            dout.add_assign(skip_grads[level].as_ref().expect("decoder visited every level"));
            let want_input = level > 0;
            match self.encoders[level].backward(p, bc, dout, g, want_input) {
                Some(dx) => grad = dx,
                None => break,
            }
        }
    }
}


#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::segnet::loss::{loss_with_logit_grad, LossKind};

    fn loss_of(net: &SegNet<f64>, xs: &[Tensor<f64>], ts: &[Tensor<f64>]) -> f64 {
        let z: Vec<_> = xs.iter().map(|x| net.logits(x).unwrap()).collect();
        loss_with_logit_grad(&z, ts, LossKind::BcePlusDice).unwrap().0
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for attention in [false, true] {
            let cfg = SegModelConfig { depth: 2, base_channels: 2, input_size: 16, use_attention: attention, ..Default::default() };
            let mut net = SegNet::<f64>::new(cfg, 5).unwrap();
            let x = Tensor::from_vec(3, 16, 16, (0..768).map(|i| (i * 37 % 101) as f64 / 101.0).collect());
            let t = Tensor::from_vec(1, 16, 16, (0..256).map(|i| ((i / 16 + i % 16) % 5 == 0) as u8 as f64).collect());
            let (z, cache) = net.forward_train(&x).unwrap();
            let (_, dz) = loss_with_logit_grad(&[z], &[t.clone()], LossKind::BcePlusDice).unwrap();
            let mut g = net.params().zeros_like();
            net.backward(&cache, &dz[0], &mut g);
            let total = net.parameter_count();
            let h = 1e-6;
            let mut worst = 0.0f64;
            for k in 0..60 {
                let (e, o) = net.params().locate(k * 7919 % total);
                let orig = net.params().entries()[e].value[o];
                net.params_mut().entries_mut()[e].value[o] = orig + h;
                let up = loss_of(&net, &[x.clone()], &[t.clone()]);
                net.params_mut().entries_mut()[e].value[o] = orig - h;
                let dn = loss_of(&net, &[x.clone()], &[t.clone()]);
                net.params_mut().entries_mut()[e].value[o] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = g.flat(e, o);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "attention={attention} worst rel err {worst}");
        }
    }
}
