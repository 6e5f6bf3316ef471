//! Convolution layers with hand-written reverse passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::direct::{
    conv1_forward, conv1_input_grad, conv1_weight_grad, conv3_forward, conv3_input_grad, conv3_weight_grad,
    Padded,
};
use super::params::{Grads, ParamStore};
use super::tensor::{sigmoid, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    One,
    Three,
}

impl Kernel {
    fn taps(self) -> usize {
        match self {
            Kernel::One => 1,
            Kernel::Three => 9,
        }
    }
}

fn he_normal<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn cast<T: Real>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::from_f64).collect()
}

/// Stride-1 convolution with "same" zero padding. Weight layout is
/// `[out, in · taps]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: Kernel,
}

impl Conv {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: Kernel,
    ) -> Self {
        let k = kernel.taps();
        let side = if k == 9 { 3 } else { 1 };
        let w = he_normal(rng, cout * cin * k, cin * k);
        let weight = store.register(format!("{name}.weight"), vec![cout, cin, side, side], cast(w));
        let bias = store.register(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.channels, self.cin);
        let bias = Some(p.get(self.bias));
        match self.kernel {
            Kernel::One => {
                let data = conv1_forward(&x.data, self.cin, x.plane_len(), p.get(self.weight), bias, self.cout);
                Tensor::from_vec(self.cout, x.height, x.width, data)
            }
            Kernel::Three => conv3_forward(&Padded::new(x), p.get(self.weight), bias, self.cout),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `want_input` is set.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Grads<T>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let hw = x.plane_len();
        {
            let db = g.get_mut(self.bias);
            for (o, d) in db.iter_mut().enumerate() {
                *d += dy.data[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
        }
        match self.kernel {
            Kernel::One => {
                conv1_weight_grad(&x.data, self.cin, &dy.data, self.cout, hw, g.get_mut(self.weight));
                want_input.then(|| {
                    let data = conv1_input_grad(&dy.data, self.cout, hw, p.get(self.weight), self.cin);
                    Tensor::from_vec(self.cin, x.height, x.width, data)
                })
            }
            Kernel::Three => {
                conv3_weight_grad(&Padded::new(x), dy, g.get_mut(self.weight));
                want_input.then(|| conv3_input_grad(dy, p.get(self.weight), self.cin))
            }
        }
    }
}

/// 2×2, stride-2 transposed convolution (exact 2× upsampling).
/// Weight layout is `[in, out · 4]`.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
}

impl UpConv {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        let w = he_normal(rng, cin * cout * 4, cin);
        let weight = store.register(format!("{name}.weight"), vec![cin, cout, 2, 2], cast(w));
        let bias = store.register(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let expanded = conv1_forward(&x.data, self.cin, hw, &self.packed(p), None, self.cout * 4);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(self.cout, oh, ow);
        let bias = p.get(self.bias);
        for o in 0..self.cout {
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let src = &expanded[(o * 4 + d) * hw..(o * 4 + d + 1) * hw];
                for y in 0..h {
                    let row = &mut out.data[o * oh * ow + (2 * y + dy) * ow..];
                    for xx in 0..w {
                        row[2 * xx + dx] = src[y * w + xx] + bias[o];
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Grads<T>,
    ) -> Tensor<T> {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let mut gathered = vec![T::zero(); self.cout * 4 * hw];
        {
            let db = g.get_mut(self.bias);
            for o in 0..self.cout {
                db[o] += dy.data[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum::<T>();
            }
        }
        for o in 0..self.cout {
            for d in 0..4 {
                let (ddy, ddx) = (d / 2, d % 2);
                let dst = &mut gathered[(o * 4 + d) * hw..(o * 4 + d + 1) * hw];
                for y in 0..h {
                    let row = &dy.data[o * oh * ow + (2 * y + ddy) * ow..];
                    for xx in 0..w {
                        dst[y * w + xx] = row[2 * xx + ddx];
                    }
                }
            }
        }
        let k = self.cout * 4;
        let mut dpacked = vec![T::zero(); k * self.cin];
        conv1_weight_grad(&x.data, self.cin, &gathered, k, hw, &mut dpacked);
        let dw = g.get_mut(self.weight);
        for r in 0..k {
            for c in 0..self.cin {
                dw[c * k + r] += dpacked[r * self.cin + c];
            }
        }
        let dx = conv1_input_grad(&gathered, k, hw, &self.packed(p), self.cin);
        Tensor::from_vec(self.cin, h, w, dx)
    }

    /// Weights as a `[cout · 4, cin]` pointwise kernel.
    fn packed<T: Real>(&self, p: &ParamStore<T>) -> Vec<T> {
        let w = p.get(self.weight);
        let k = self.cout * 4;
        let mut out = vec![T::zero(); k * self.cin];
        for c in 0..self.cin {
            for r in 0..k {
                out[r * self.cin + c] = w[c * k + r];
            }
        }
        out
    }
}

/// Additive attention gate on a skip connection: the upsampled decoder
/// features decide, per pixel, how much of the encoder skip passes through.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub skip_proj: Conv,
    pub gate_proj: Conv,
    pub psi: Conv,
}

pub struct GateCache<T> {
    hidden: Tensor<T>,
    alpha: Tensor<T>,
}

impl AttentionGate {
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Self {
        let inner = (channels / 2).max(1);
        Self {
            skip_proj: Conv::register(store, rng, &format!("{name}.skip_proj"), channels, inner, Kernel::One),
            gate_proj: Conv::register(store, rng, &format!("{name}.gate_proj"), channels, inner, Kernel::One),
            psi: Conv::register(store, rng, &format!("{name}.psi"), inner, 1, Kernel::One),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        skip: &Tensor<T>,
        gate: &Tensor<T>,
    ) -> (Tensor<T>, GateCache<T>) {
        let mut hidden = self.skip_proj.forward(p, skip);
        hidden.add_assign(&self.gate_proj.forward(p, gate));
        hidden.relu_in_place();
        let mut alpha = self.psi.forward(p, &hidden);
        alpha.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        let hw = skip.plane_len();
        let mut out = skip.clone();
        for c in 0..out.channels {
            for (v, &a) in out.data[c * hw..(c + 1) * hw].iter_mut().zip(&alpha.data) {
                *v *= a;
            }
        }
        (out, GateCache { hidden, alpha })
    }

    /// Returns `(d skip, d gate)`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        skip: &Tensor<T>,
        gate: &Tensor<T>,
        cache: &GateCache<T>,
        dout: &Tensor<T>,
        g: &mut Grads<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let hw = skip.plane_len();
        let mut dskip = dout.clone();
        let mut dalpha = Tensor::zeros(1, skip.height, skip.width);
        for c in 0..skip.channels {
            let range = c * hw..(c + 1) * hw;
            for (((ds, &s), da), &a) in dskip.data[range.clone()]
                .iter_mut()
                .zip(&skip.data[range])
                .zip(dalpha.data.iter_mut())
                .zip(&cache.alpha.data)
            {
                *da += *ds * s;
                *ds *= a;
            }
        }
        for (d, &a) in dalpha.data.iter_mut().zip(&cache.alpha.data) {
            *d *= a * (T::one() - a);
        }
        let mut dhidden = self
            .psi
            .backward(p, &cache.hidden, &dalpha, g, true)
            .expect("input gradient requested");
        dhidden.relu_backward_in_place(&cache.hidden);
        let ds = self
            .skip_proj
            .backward(p, skip, &dhidden, g, true)
            .expect("input gradient requested");
        dskip.add_assign(&ds);
        let dgate = self
            .gate_proj
            .backward(p, gate, &dhidden, g, true)
            .expect("input gradient requested");
        (dskip, dgate)
    }
}
