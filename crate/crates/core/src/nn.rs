//! Layer primitives with explicit forward caches and reverse-mode gradients.
//!
//! Parameters of a whole network live in one flat slice; each layer records the
//! offsets of its weights inside that slice. This keeps SGD, weight decay and
//! the momentum blend of the key encoder as plain element-wise loops.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

/// Scalar type of the network: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + Default + Debug + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c <- alpha * a . b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must lie
    /// inside the respective buffers.
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
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Operand orientation for [`gemm`]: a row-major `rows x cols` buffer read as
/// itself or as its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c (m x n) <- a' . b' + (accumulate ? c : 0)` where `a'` is `m x k` and `b'`
/// is `k x n` after applying the given orientation to row-major buffers.
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    op_a: Op,
    b: &[T],
    op_b: Op,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above cover every (row, col) of each operand in
    // either orientation.
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
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Channel-major feature map `c x h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
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
        Self { channels, height, width, data }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Contiguous range of a layer's tensor inside the flat parameter slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn get<'a, T>(&self, params: &'a [T]) -> &'a [T] {
        &params[self.offset..self.offset + self.len]
    }

    pub fn get_mut<'a, T>(&self, params: &'a mut [T]) -> &'a mut [T] {
        &mut params[self.offset..self.offset + self.len]
    }
}

/// Hands out consecutive ranges while a network is being laid out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayoutBuilder {
    next: usize,
    fans: Vec<(ParamRange, Init)>,
}

/// Initial distribution of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal with the given fan-in.
    HeNormal(usize),
    Constant(f64),
}

impl LayoutBuilder {
    pub fn alloc(&mut self, len: usize, init: Init) -> ParamRange {
        let r = ParamRange { offset: self.next, len };
        self.next += len;
        self.fans.push((r, init));
        r
    }

    pub fn total(&self) -> usize {
        self.next
    }

    /// Draws a fresh parameter vector following every recorded initializer.
    pub fn initialize<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut params = vec![T::zero(); self.next];
        for (range, init) in &self.fans {
            let slot = range.get_mut(&mut params);
            match *init {
                Init::Constant(v) => slot.iter_mut().for_each(|p| *p = T::of(v)),
                Init::HeNormal(fan_in) => {
                    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
                    for p in slot.iter_mut() {
                        *p = T::of(std * standard_normal(rng));
                    }
                }
            }
        }
        params
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// 2-D convolution with square kernel, optional group norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
    pub norm: Option<GroupNorm>,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: ParamRange,
    pub beta: ParamRange,
}

const GN_EPS: f64 = 1e-5;

/// What a [`ConvBlock`] keeps from its forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
    /// im2col matrix, `(cin * k * k) x (oh * ow)`; empty for 1x1 stride-1.
    cols: Vec<T>,
    /// Input kept for the 1x1 fast path.
    input: Vec<T>,
    /// Normalized pre-affine activations and per-group inverse std.
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Block output (post-ReLU), used for the ReLU mask.
    output: Vec<T>,
}

impl ConvBlock {
    pub fn new(
        layout: &mut LayoutBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        norm_groups: Option<usize>,
        relu: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = layout.alloc(out_channels * fan_in, Init::HeNormal(fan_in));
        let bias = layout.alloc(out_channels, Init::Constant(0.0));
        let norm = norm_groups.map(|groups| {
            assert!(out_channels % groups == 0, "group norm groups must divide channels");
            GroupNorm {
                groups,
                gamma: layout.alloc(out_channels, Init::Constant(1.0)),
                beta: layout.alloc(out_channels, Init::Constant(0.0)),
            }
        });
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias,
            norm,
            relu,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &FeatureMap<T>) -> (FeatureMap<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.output_hw(x.height, x.width);
        let p = oh * ow;
        let kdim = self.in_channels * self.kernel * self.kernel;
        let mut out = vec![T::zero(); self.out_channels * p];
        let bias = self.bias.get(params);
        for (co, row) in out.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        let (cols, input) = if self.is_pointwise() {
            gemm(self.out_channels, kdim, p, self.weight.get(params), Op::N, &x.data, Op::N, &mut out, true);
            (Vec::new(), x.data.clone())
        } else {
            let cols = im2col(x, self.kernel, self.stride, self.padding, oh, ow);
            gemm(self.out_channels, kdim, p, self.weight.get(params), Op::N, &cols, Op::N, &mut out, true);
            (cols, Vec::new())
        };
        let (mut xhat, mut inv_std) = (Vec::new(), Vec::new());
        if let Some(norm) = &self.norm {
            let (xh, is) = group_norm_forward(&mut out, self.out_channels, p, norm, params);
            xhat = xh;
            inv_std = is;
        }
        if self.relu {
            out.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
        }
        let cache = ConvCache {
            in_shape: (x.channels, x.height, x.width),
            out_hw: (oh, ow),
            cols,
            input,
            xhat,
            inv_std,
            output: if self.relu { out.clone() } else { Vec::new() },
        };
        (FeatureMap::from_vec(self.out_channels, oh, ow, out), cache)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &ConvCache<T>,
        dout: &FeatureMap<T>,
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Option<FeatureMap<T>> {
        let (oh, ow) = cache.out_hw;
        let p = oh * ow;
        debug_assert_eq!(dout.data.len(), self.out_channels * p);
        let mut d = dout.data.clone();
        if self.relu {
            for (g, &y) in d.iter_mut().zip(&cache.output) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        if let Some(norm) = &self.norm {
            group_norm_backward(&mut d, self.out_channels, p, norm, params, &cache.xhat, &cache.inv_std, grads);
        }
        {
            let db = self.bias.get_mut(grads);
            for (co, row) in d.chunks_exact(p).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        let kdim = self.in_channels * self.kernel * self.kernel;
        let source = if self.is_pointwise() { &cache.input } else { &cache.cols };
        gemm(self.out_channels, p, kdim, &d, Op::N, source, Op::T, self.weight.get_mut(grads), true);
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); kdim * p];
        gemm(kdim, self.out_channels, p, self.weight.get(params), Op::T, &d, Op::N, &mut dcols, false);
        let (c, h, w) = cache.in_shape;
        if self.is_pointwise() {
            return Some(FeatureMap::from_vec(c, h, w, dcols));
        }
        let mut dx = FeatureMap::zeros(c, h, w);
        col2im(&dcols, &mut dx, self.kernel, self.stride, self.padding, oh, ow);
        Some(dx)
    }
}

fn im2col<T: Real>(x: &FeatureMap<T>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<T> {
    let p = oh * ow;
    let mut cols = vec![T::zero(); x.channels * k * k * p];
    let (h, w) = (x.height as isize, x.width as isize);
    for c in 0..x.channels {
        let plane = &x.data[c * x.plane()..(c + 1) * x.plane()];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[iy as usize * x.width..][..x.width];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], dx: &mut FeatureMap<T>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) {
    let p = oh * ow;
    let (h, w) = (dx.height as isize, dx.width as isize);
    let width = dx.width;
    let plane_len = dx.plane();
    for c in 0..dx.channels {
        let plane = &mut dx.data[c * plane_len..(c + 1) * plane_len];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * width..][..width];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Normalizes `data` (`channels x plane`) in place and applies the affine map.
fn group_norm_forward<T: Real>(
    data: &mut [T],
    channels: usize,
    plane: usize,
    norm: &GroupNorm,
    params: &[T],
) -> (Vec<T>, Vec<T>) {
    let per_group = channels / norm.groups;
    let n = T::of((per_group * plane) as f64);
    let gamma = norm.gamma.get(params);
    let beta = norm.beta.get(params);
    let mut xhat = vec![T::zero(); data.len()];
    let mut inv_std = vec![T::zero(); norm.groups];
    for g in 0..norm.groups {
        let span = g * per_group * plane..(g + 1) * per_group * plane;
        let chunk = &data[span.clone()];
        let mean = chunk.iter().copied().sum::<T>() / n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + T::of(GN_EPS)).sqrt();
        inv_std[g] = is;
        for (i, idx) in span.enumerate() {
            let c = g * per_group + i / plane;
            let xh = (data[idx] - mean) * is;
            xhat[idx] = xh;
            data[idx] = gamma[c] * xh + beta[c];
        }
    }
    (xhat, inv_std)
}

#[allow(clippy::too_many_arguments)]
fn group_norm_backward<T: Real>(
    d: &mut [T],
    channels: usize,
    plane: usize,
    norm: &GroupNorm,
    params: &[T],
    xhat: &[T],
    inv_std: &[T],
    grads: &mut [T],
) {
    let per_group = channels / norm.groups;
    let n = T::of((per_group * plane) as f64);
    let gamma = norm.gamma.get(params);
    {
        let dgamma = norm.gamma.get_mut(grads);
        for c in 0..channels {
            let row = c * plane..(c + 1) * plane;
            dgamma[c] += d[row.clone()].iter().zip(&xhat[row]).map(|(&g, &x)| g * x).sum::<T>();
        }
    }
    {
        let dbeta = norm.beta.get_mut(grads);
        for c in 0..channels {
            dbeta[c] += d[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
        }
    }
    for g in 0..norm.groups {
        let span = g * per_group * plane..(g + 1) * per_group * plane;
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for idx in span.clone() {
            let c = idx / plane;
            let dxh = d[idx] * gamma[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[idx];
        }
        let scale = inv_std[g] / n;
        for idx in span {
            let c = idx / plane;
            let dxh = d[idx] * gamma[c];
            d[idx] = scale * (n * dxh - sum_dxhat - xhat[idx] * sum_dxhat_xhat);
        }
    }
}

/// Fully connected layer `y = W x + b` with optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
    pub relu: bool,
}

impl Linear {
    pub fn new(layout: &mut LayoutBuilder, inputs: usize, outputs: usize, relu: bool) -> Self {
        Self {
            inputs,
            outputs,
            weight: layout.alloc(inputs * outputs, Init::HeNormal(inputs)),
            bias: layout.alloc(outputs, Init::Constant(0.0)),
            relu,
        }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.inputs, "linear input size mismatch");
        let mut y = self.bias.get(params).to_vec();
        gemm(self.outputs, self.inputs, 1, self.weight.get(params), Op::N, x, Op::N, &mut y, true);
        if self.relu {
            y.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        y
    }

    /// `y` is this layer's forward output (needed for the ReLU mask).
    pub fn backward<T: Real>(&self, params: &[T], x: &[T], y: &[T], dy: &[T], grads: &mut [T]) -> Vec<T> {
        let mut d = dy.to_vec();
        if self.relu {
            for (g, &v) in d.iter_mut().zip(y) {
                if v <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        for (b, &g) in self.bias.get_mut(grads).iter_mut().zip(&d) {
            *b += g;
        }
        gemm(self.outputs, 1, self.inputs, &d, Op::N, x, Op::N, self.weight.get_mut(grads), true);
        let mut dx = vec![T::zero(); self.inputs];
        gemm(self.inputs, self.outputs, 1, self.weight.get(params), Op::T, &d, Op::N, &mut dx, false);
        dx
    }
}

/// `x / ||x||` and the norm used.
pub fn l2_normalize<T: Real>(x: &[T]) -> (Vec<T>, T) {
    let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(1e-12));
    (x.iter().map(|&v| v / norm).collect(), norm)
}

/// Gradient through `y = x / ||x||` given `y`, `||x||` and `dy`.
pub fn l2_normalize_backward<T: Real>(y: &[T], norm: T, dy: &[T]) -> Vec<T> {
    let dot = y.iter().zip(dy).map(|(&a, &b)| a * b).sum::<T>();
    y.iter().zip(dy).map(|(&yi, &gi)| (gi - yi * dot) / norm).collect()
}

/// Nearest-neighbour 2x upsample of `coarse` added into `fine`.
pub fn upsample2_add<T: Real>(fine: &mut FeatureMap<T>, coarse: &FeatureMap<T>) {
    assert_eq!(fine.channels, coarse.channels);
    assert!(fine.height == 2 * coarse.height && fine.width == 2 * coarse.width, "upsample shape mismatch");
    let (h, w) = (fine.height, fine.width);
    for c in 0..fine.channels {
        for y in 0..h {
            for x in 0..w {
                let v = coarse.at(c, y / 2, x / 2);
                fine.data[(c * h + y) * w + x] += v;
            }
        }
    }
}

/// Adjoint of [`upsample2_add`] with respect to `coarse`: 2x2 sum pooling.
pub fn upsample2_backward<T: Real>(dfine: &FeatureMap<T>, dcoarse: &mut FeatureMap<T>) {
    let (h, w) = (dfine.height, dfine.width);
    let (ch, cw) = (dcoarse.height, dcoarse.width);
    for c in 0..dfine.channels {
        for y in 0..h {
            for x in 0..w {
                dcoarse.data[(c * ch + y / 2) * cw + x / 2] += dfine.data[(c * h + y) * w + x];
            }
        }
    }
}
