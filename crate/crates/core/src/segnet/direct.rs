//! Direct 3×3 convolution kernels.
//!
//! The inner loops run on the scalar type's SIMD vector ([`Real::Vector`]).
//! Inputs are copied once into a zero-bordered buffer whose row stride is a
//! whole number of vectors plus one spare vector, so every load is in bounds
//! and no tap needs a branch.

use super::tensor::{Lanes, Real, Tensor};

/// Output channels computed together in the forward kernel.
const OUT_BLOCK: usize = 8;
/// Output channels computed together in the weight-gradient kernel.
const GRAD_BLOCK: usize = 2;

fn width<T: Real>() -> usize {
    <T::Vector as Lanes<T>>::WIDTH
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Zero-bordered copy of a feature map.
pub struct Padded<T> {
    pub data: Vec<T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row stride of the padded buffer.
    pub stride: usize,
}

impl<T: Real> Padded<T> {
    pub fn new(x: &Tensor<T>) -> Self {
        let (c, h, w) = (x.channels, x.height, x.width);
        let stride = round_up(w, width::<T>()) + width::<T>();
        let rows = h + 2;
        let mut data = vec![T::zero(); c * rows * stride];
        for ci in 0..c {
            let src = x.plane(ci);
            for y in 0..h {
                let dst = (ci * rows + y + 1) * stride + 1;
                data[dst..dst + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
        Self {
            data,
            channels: c,
            height: h,
            width: w,
            stride,
        }
    }

    fn row(&self, c: usize, padded_y: usize) -> &[T] {
        let start = (c * (self.height + 2) + padded_y) * self.stride;
        &self.data[start..start + self.stride]
    }
}

/// `out[o] = bias[o] + Σ_c Σ_taps w[o, c, tap] · x[c, shifted]`, weights laid
/// out `[cout, cin · 9]`.
pub fn conv3_forward<T: Real>(x: &Padded<T>, weight: &[T], bias: Option<&[T]>, cout: usize) -> Tensor<T> {
    let (cin, h, w) = (x.channels, x.height, x.width);
    let lanes = width::<T>();
    let k = cin * 9;
    assert_eq!(weight.len(), cout * k);
    let blocks = cout.div_ceil(OUT_BLOCK);
    // [block][tap][j]: the OUT_BLOCK weights of one tap are contiguous.
    let mut wpack = vec![T::Vector::splat(T::zero()); blocks * k * OUT_BLOCK];
    for o in 0..cout {
        let (b, j) = (o / OUT_BLOCK, o % OUT_BLOCK);
        for t in 0..k {
            wpack[(b * k + t) * OUT_BLOCK + j] = T::Vector::splat(weight[o * k + t]);
        }
    }
    let mut out = Tensor::zeros(cout, h, w);
    let hw = h * w;
    let zero = T::Vector::splat(T::zero());
    let plane = (h + 2) * x.stride;
    let taps: [usize; 9] = std::array::from_fn(|t| (t / 3) * x.stride + t % 3);
    for b in 0..blocks {
        let wb = &wpack[b * k * OUT_BLOCK..(b + 1) * k * OUT_BLOCK];
        let nb = OUT_BLOCK.min(cout - b * OUT_BLOCK);
        for y in 0..h {
            for x0 in (0..w).step_by(lanes) {
                let origin = y * x.stride + x0;
                // Furthest element touched: last channel, tap (2, 2), full vector.
                assert!((cin - 1) * plane + origin + taps[8] + lanes <= x.data.len());
                let mut acc = [zero; OUT_BLOCK];
                for c in 0..cin {
                    let base = c * plane + origin;
                    let wc = &wb[c * 9 * OUT_BLOCK..(c + 1) * 9 * OUT_BLOCK];
                    for (t, &off) in taps.iter().enumerate() {
                        // SAFETY: bounded by the assertion above.
                        let v = T::Vector::load(unsafe { x.data.get_unchecked(base + off..base + off + lanes) });
                        let ws = &wc[t * OUT_BLOCK..(t + 1) * OUT_BLOCK];
                        for (a, &wv) in acc.iter_mut().zip(ws) {
                            *a = v.mul_add(wv, *a);
                        }
                    }
                }
                let n = lanes.min(w - x0);
                for (j, a) in acc.iter().enumerate().take(nb) {
                    let o = b * OUT_BLOCK + j;
                    let bv = T::Vector::splat(bias.map_or(T::zero(), |bs| bs[o]));
                    (*a + bv).store(&mut out.data[o * hw + y * w + x0..][..n]);
                }
            }
        }
    }
    out
}

/// Gradient with respect to the input of [`conv3_forward`]: a convolution of
/// the output gradient with the spatially flipped, channel-transposed kernel.
pub fn conv3_input_grad<T: Real>(dy: &Tensor<T>, weight: &[T], cin: usize) -> Tensor<T> {
    let cout = dy.channels;
    let mut flipped = vec![T::zero(); cin * cout * 9];
    for o in 0..cout {
        for c in 0..cin {
            for t in 0..9 {
                flipped[(c * cout + o) * 9 + (8 - t)] = weight[(o * cin + c) * 9 + t];
            }
        }
    }
    conv3_forward(&Padded::new(dy), &flipped, None, cin)
}

/// Accumulate `dW[o, c, tap] += Σ_{y,x} dy[o, y, x] · x[c, y+ky−1, x+kx−1]`.
pub fn conv3_weight_grad<T: Real>(x: &Padded<T>, dy: &Tensor<T>, dweight: &mut [T]) {
    let (cin, h, w) = (x.channels, x.height, x.width);
    let lanes = width::<T>();
    let cout = dy.channels;
    assert_eq!(dweight.len(), cout * cin * 9);
    // Output gradient with rows widened to whole vectors, tails zero.
    let dstride = round_up(w, lanes);
    let mut dyp = vec![T::zero(); cout * h * dstride];
    for o in 0..cout {
        for y in 0..h {
            let src = &dy.data[(o * h + y) * w..][..w];
            dyp[(o * h + y) * dstride..][..w].copy_from_slice(src);
        }
    }
    let zero = T::Vector::splat(T::zero());
    for ob in (0..cout).step_by(GRAD_BLOCK) {
        let nb = GRAD_BLOCK.min(cout - ob);
        for c in 0..cin {
            let mut acc = [[zero; 9]; GRAD_BLOCK];
            for y in 0..h {
                let rows = [x.row(c, y), x.row(c, y + 1), x.row(c, y + 2)];
                for x0 in (0..w).step_by(lanes) {
                    let mut d = [zero; GRAD_BLOCK];
                    for (j, dj) in d.iter_mut().enumerate().take(nb) {
                        *dj = T::Vector::load(&dyp[((ob + j) * h + y) * dstride + x0..]);
                    }
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let v = T::Vector::load(&rows[ky][x0 + kx..]);
                            for j in 0..GRAD_BLOCK {
                                let a = &mut acc[j][ky * 3 + kx];
                                *a = d[j].mul_add(v, *a);
                            }
                        }
                    }
                }
            }
            for (j, aj) in acc.iter().enumerate().take(nb) {
                for (t, a) in aj.iter().enumerate() {
                    dweight[((ob + j) * cin + c) * 9 + t] += a.sum();
                }
            }
        }
    }
}

/// Pointwise (1×1) convolution over `n` pixels: `out[o] = bias[o] + Σ_c
/// w[o, c] · x[c]` with `x` laid out `[cin, n]` and weights `[cout, cin]`.
pub fn conv1_forward<T: Real>(x: &[T], cin: usize, n: usize, weight: &[T], bias: Option<&[T]>, cout: usize) -> Vec<T> {
    assert_eq!(x.len(), cin * n);
    assert_eq!(weight.len(), cout * cin);
    let lanes = width::<T>();
    let zero = T::Vector::splat(T::zero());
    let mut out = vec![T::zero(); cout * n];
    let full = n / lanes * lanes;
    for ob in (0..cout).step_by(OUT_BLOCK) {
        let nb = OUT_BLOCK.min(cout - ob);
        let mut wv = vec![zero; cin * OUT_BLOCK];
        for j in 0..nb {
            for c in 0..cin {
                wv[c * OUT_BLOCK + j] = T::Vector::splat(weight[(ob + j) * cin + c]);
            }
        }
        let mut p0 = 0;
        while p0 < full {
            let mut acc = [zero; OUT_BLOCK];
            for c in 0..cin {
                let v = T::Vector::load(&x[c * n + p0..]);
                for (a, &w) in acc.iter_mut().zip(&wv[c * OUT_BLOCK..(c + 1) * OUT_BLOCK]) {
                    *a = v.mul_add(w, *a);
                }
            }
            for (j, a) in acc.iter().enumerate().take(nb) {
                let bv = T::Vector::splat(bias.map_or(T::zero(), |b| b[ob + j]));
                (*a + bv).store(&mut out[(ob + j) * n + p0..][..lanes]);
            }
            p0 += lanes;
        }
        for j in 0..nb {
            let o = ob + j;
            for p in full..n {
                let mut acc = bias.map_or(T::zero(), |b| b[o]);
                for c in 0..cin {
                    acc += weight[o * cin + c] * x[c * n + p];
                }
                out[o * n + p] = acc;
            }
        }
    }
    out
}

/// Input gradient of [`conv1_forward`].
pub fn conv1_input_grad<T: Real>(dy: &[T], cout: usize, n: usize, weight: &[T], cin: usize) -> Vec<T> {
    let mut wt = vec![T::zero(); cin * cout];
    for o in 0..cout {
        for c in 0..cin {
            wt[c * cout + o] = weight[o * cin + c];
        }
    }
    conv1_forward(dy, cout, n, &wt, None, cin)
}

/// Accumulate `dW[o, c] += Σ_p dy[o, p] · x[c, p]`.
pub fn conv1_weight_grad<T: Real>(x: &[T], cin: usize, dy: &[T], cout: usize, n: usize, dweight: &mut [T]) {
    assert_eq!(dweight.len(), cout * cin);
    let lanes = width::<T>();
    let zero = T::Vector::splat(T::zero());
    let full = n / lanes * lanes;
    for o in 0..cout {
        let drow = &dy[o * n..(o + 1) * n];
        for cb in (0..cin).step_by(OUT_BLOCK) {
            let nb = OUT_BLOCK.min(cin - cb);
            let mut acc = [zero; OUT_BLOCK];
            let mut p0 = 0;
            while p0 < full {
                let d = T::Vector::load(&drow[p0..]);
                for (j, a) in acc.iter_mut().enumerate().take(nb) {
                    *a = d.mul_add(T::Vector::load(&x[(cb + j) * n + p0..]), *a);
                }
                p0 += lanes;
            }
            for (j, a) in acc.iter().enumerate().take(nb) {
                let c = cb + j;
                let mut s = a.sum();
                for p in full..n {
                    s += drow[p] * x[c * n + p];
                }
                dweight[o * cin + c] += s;
            }
        }
    }
}
