//! Dense single-sample feature maps and the small set of kernels the network
//! is built from. Everything is channel-major (`C × H × W`), one sample at a
//! time; batching happens one level up.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the network can run in.
///
/// Training uses `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `C = alpha · op(A) · op(B) + beta · C` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the provided slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// SIMD vector of this scalar used by the convolution kernels.
    type Vector: Lanes<Self>;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

/// Fixed-width SIMD vector operations.
pub trait Lanes<T>: Copy + Add<Output = Self> + Mul<Output = Self> {
    const WIDTH: usize;
    fn splat(v: T) -> Self;
    /// Loads the first `WIDTH` elements of `s`.
    fn load(s: &[T]) -> Self;
    fn store(self, out: &mut [T]);
    /// `self · m + a`
    fn mul_add(self, m: Self, a: Self) -> Self;
    fn sum(self) -> T;
}

macro_rules! impl_lanes {
    ($scalar:ty, $vec:ty, $width:expr) => {
        impl Lanes<$scalar> for $vec {
            const WIDTH: usize = $width;

            #[inline(always)]
            fn splat(v: $scalar) -> Self {
                <$vec>::splat(v)
            }

            #[inline(always)]
            fn load(s: &[$scalar]) -> Self {
                let a: [$scalar; $width] = s[..$width].try_into().expect("lane load");
                <$vec>::from(a)
            }

            #[inline(always)]
            fn store(self, out: &mut [$scalar]) {
                let n = out.len().min($width);
                out[..n].copy_from_slice(&self.to_array()[..n]);
            }

            #[inline(always)]
            fn mul_add(self, m: Self, a: Self) -> Self {
                <$vec>::mul_add(self, m, a)
            }

            #[inline(always)]
            fn sum(self) -> $scalar {
                self.reduce_add()
            }
        }
    };
}

impl_lanes!(f32, wide::f32x16, 16);
impl_lanes!(f64, wide::f64x8, 8);

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    type Vector = wide::f32x16;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    type Vector = wide::f64x8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix product `out (m×n) = [out +] op(a) · op(b)`.
///
/// `a` is `m×k` (or `k×m` when `a_t`), `b` is `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    out: &mut [T],
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(out.len(), m * n, "matmul output extent");
    assert_eq!(a.len(), m * k, "matmul lhs extent");
    assert_eq!(b.len(), k * n, "matmul rhs extent");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; strides describe the row-major layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A `C × H × W` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Stack two maps along the channel axis.
    pub fn concat(a: &Self, b: &Self) -> Self {
        assert!(a.height == b.height && a.width == b.width, "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Self::from_vec(a.channels + b.channels, a.height, a.width, data)
    }

    /// Inverse of [`Tensor::concat`] for gradients.
    pub fn split_channels(self, first: usize) -> (Self, Self) {
        let n = self.plane_len();
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = self.data;
        let rest = data.split_off(first * n);
        (
            Self::from_vec(first, h, w, data),
            Self::from_vec(c - first, h, w, rest),
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }

    /// Zero the gradient wherever the forward ReLU output was not positive.
    pub fn relu_backward_in_place(&mut self, activated: &Self) {
        for (g, &a) in self.data.iter_mut().zip(&activated.data) {
            if a <= T::zero() {
                *g = T::zero();
            }
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Unfold 3×3 neighbourhoods (zero padding 1) into a `(C·9) × (H·W)` matrix.
pub fn im2col3<T: Real>(x: &Tensor<T>, col: &mut Vec<T>) {
    let (c, h, w) = (x.channels, x.height, x.width);
    let hw = h * w;
    col.clear();
    col.resize(c * 9 * hw, T::zero());
    for ci in 0..c {
        let src = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let dst = &mut col[row..row + hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x_lo = if dx < 0 { 1 } else { 0 };
                let x_hi = if dx > 0 { w - 1 } else { w };
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s_off = sy as usize * w;
                    let d_off = y * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[d_off + x_lo..d_off + x_hi]
                        .copy_from_slice(&src[s_off + sx_lo..s_off + sx_lo + len]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: fold a column matrix back, summing overlaps.
pub fn col2im3<T: Real>(col: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let src = &col[row..row + hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x_lo = if dx < 0 { 1 } else { 0 };
                let x_hi = if dx > 0 { w - 1 } else { w };
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s_off = sy as usize * w;
                    let d_off = y * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    for (d, &s) in dst[s_off + sx_lo..s_off + sx_lo + len]
                        .iter_mut()
                        .zip(&src[d_off + x_lo..d_off + x_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2. Returns the pooled map and, per output
/// element, the flat input index that won.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = (x.channels, x.height, x.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = x.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[i] > best {
                        best = x.data[i];
                        best_i = i;
                    }
                }
                let o = ci * oh * ow + oy * ow + ox;
                out.data[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(grad: &Tensor<T>, arg: &[u32], c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(c, h, w);
    for (&g, &i) in grad.data.iter().zip(arg) {
        dx.data[i as usize] += g;
    }
    dx
}
