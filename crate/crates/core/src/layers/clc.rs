//! Channel-local convolution.
//!
//! One layer type covers every kernel of the architecture: the spatial kernel
//! is shared over all positions as in an ordinary convolution, while along
//! the channel axis the kernel only sees a window of `window_len`
//! consecutive input channels. Windows slide with channel stride 1 and no
//! channel padding, so an input with `C` channels has `C - L + 1` windows,
//! each producing `filters_per_window` output channels. Output channel
//! `j * M + m` belongs to window `j`.
//!
//! With `L = C` there is a single window and the layer is a dense
//! convolution with `M` output channels.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat, MatMut};
use crate::tensor::{Shape4, Tensor4};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClcSpec {
    /// Spatial kernel extent (kh, kw).
    pub kernel: (usize, usize),
    /// Channel window length L.
    pub window_len: usize,
    /// Filters per window M.
    pub filters_per_window: usize,
    /// One stencil reused by every channel window when true.
    pub shared: bool,
    pub stride: (usize, usize),
    /// Spatial zero padding (ph, pw), applied on both sides.
    pub pad: (usize, usize),
}

impl ClcSpec {
    /// Dense convolution `c_in -> c_out` with a `k`×`k` kernel, padded to keep the spatial size.
    pub fn dense(c_in: usize, c_out: usize, k: usize) -> Self {
        ClcSpec {
            kernel: (k, k),
            window_len: c_in,
            filters_per_window: c_out,
            shared: false,
            stride: (1, 1),
            pad: (k / 2, k / 2),
        }
    }

    /// Sparse channel convolution with one filter per window.
    pub fn sparse(window_len: usize, k: usize, shared: bool) -> Self {
        ClcSpec {
            kernel: (k, k),
            window_len,
            filters_per_window: 1,
            shared,
            stride: (1, 1),
            pad: (k / 2, k / 2),
        }
    }

    pub fn is_dense_for(&self, c_in: usize) -> bool {
        self.window_len == c_in
    }

    /// Number of channel windows, `c_in - L + 1`.
    pub fn windows(&self, c_in: usize) -> Result<usize> {
        if self.window_len == 0 || self.filters_per_window == 0 {
            return Err(Error::Shape(format!(
                "window length ({}) and filters per window ({}) must be >= 1",
                self.window_len, self.filters_per_window
            )));
        }
        if self.window_len > c_in {
            return Err(Error::Shape(format!(
                "channel window length {} exceeds {c_in} input channels",
                self.window_len
            )));
        }
        Ok(c_in - self.window_len + 1)
    }

    /// Windows owning a distinct weight set: all of them unless shared.
    pub fn weight_sets(&self, c_in: usize) -> Result<usize> {
        let p = self.windows(c_in)?;
        Ok(if self.shared { 1 } else { p })
    }

    pub fn out_channels(&self, c_in: usize) -> Result<usize> {
        Ok(self.windows(c_in)? * self.filters_per_window)
    }

    /// Weight tensor dimensions (P_eff, M, kh, kw, L).
    pub fn weight_dims(&self, c_in: usize) -> Result<[usize; 5]> {
        Ok([
            self.weight_sets(c_in)?,
            self.filters_per_window,
            self.kernel.0,
            self.kernel.1,
            self.window_len,
        ])
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let channels = self.out_channels(input.channels)?;
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} and stride {sh}x{sw} must be positive"
            )));
        }
        let ph = input.height + 2 * self.pad.0;
        let pw = input.width + 2 * self.pad.1;
        if ph < kh || pw < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Shape4 {
            batch: input.batch,
            channels,
            height: (ph - kh) / sh + 1,
            width: (pw - kw) / sw + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }
}

/// Weights of one channel-local convolution.
///
/// `weights` is laid out as (P_eff, M, kh, kw, L) row-major; `bias` holds one
/// entry per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ClcWeights {
    dims: [usize; 5],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClcWeights {
    pub fn zeros(spec: &ClcSpec, c_in: usize) -> Result<Self> {
        let dims = spec.weight_dims(c_in)?;
        Ok(ClcWeights {
            dims,
            weights: vec![0.0; dims.iter().product()],
            bias: vec![0.0; spec.out_channels(c_in)?],
        })
    }

    pub fn from_parts(spec: &ClcSpec, c_in: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut w = Self::zeros(spec, c_in)?;
        if weights.len() != w.weights.len() || bias.len() != w.bias.len() {
            return Err(Error::Shape(format!(
                "expected {} weights and {} biases, got {} and {}",
                w.weights.len(),
                w.bias.len(),
                weights.len(),
                bias.len()
            )));
        }
        w.weights = weights;
        w.bias = bias;
        Ok(w)
    }

    /// He-normal initialisation (std = sqrt(2 / fan_in), fan_in = kh·kw·L), zero bias.
    pub fn he_init(spec: &ClcSpec, c_in: usize, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(spec, c_in)?;
        let fan_in = (spec.kernel.0 * spec.kernel.1 * spec.window_len) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).map_err(|e| Error::Param(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut w.weights {
            *v = normal.sample(&mut rng);
        }
        Ok(w)
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    #[inline]
    pub fn index(&self, set: usize, m: usize, ky: usize, kx: usize, l: usize) -> usize {
        let [_, mm, kh, kw, ll] = self.dims;
        (((set * mm + m) * kh + ky) * kw + kx) * ll + l
    }

    #[inline]
    pub fn get(&self, set: usize, m: usize, ky: usize, kx: usize, l: usize) -> f64 {
        self.weights[self.index(set, m, ky, kx, l)]
    }

    fn check(&self, spec: &ClcSpec, c_in: usize) -> Result<()> {
        let dims = spec.weight_dims(c_in)?;
        if dims != self.dims || self.bias.len() != spec.out_channels(c_in)? {
            return Err(Error::Shape(format!(
                "weights {:?} do not fit spec {:?} on {c_in} channels",
                self.dims, dims
            )));
        }
        if let Some(v) = self.weights.iter().chain(&self.bias).find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite convolution parameter {v}")));
        }
        Ok(())
    }

    /// Repacks each weight set as an M × (L·kh·kw) matrix whose column order
    /// (l, ky, kx) matches the im2col row order.
    fn packed(&self) -> Vec<f64> {
        let [sets, m, kh, kw, l] = self.dims;
        let kk = kh * kw;
        let mut out = vec![0.0; self.weights.len()];
        for s in 0..sets {
            for mi in 0..m {
                let row = (s * m + mi) * l * kk;
                for ky in 0..kh {
                    for kx in 0..kw {
                        for li in 0..l {
                            out[row + li * kk + ky * kw + kx] = self.get(s, mi, ky, kx, li);
                        }
                    }
                }
            }
        }
        out
    }

    fn unpack_into(&mut self, packed: &[f64]) {
        let [sets, m, kh, kw, l] = self.dims;
        let kk = kh * kw;
        for s in 0..sets {
            for mi in 0..m {
                let row = (s * m + mi) * l * kk;
                for ky in 0..kh {
                    for kx in 0..kw {
                        for li in 0..l {
                            let i = self.index(s, mi, ky, kx, li);
                            self.weights[i] = packed[row + li * kk + ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(spec: &ClcSpec, input: Shape4, output: Shape4) -> Self {
        Geometry {
            c_in: input.channels,
            h: input.height,
            w: input.width,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.pad.0,
            pw: spec.pad.1,
            ho: output.height,
            wo: output.width,
        }
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input row for output row `oh` and kernel row `ky`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = o * stride + k;
        if pos < pad || pos - pad >= len {
            None
        } else {
            Some(pos - pad)
        }
    }

    fn im2col(&self, image: &[f64], col: &mut [f64]) {
        let n = self.col_cols();
        for c in 0..self.c_in {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    let dst = &mut col[row..row + n];
                    for oh in 0..self.ho {
                        let out = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        match Self::src(oh, ky, self.sh, self.ph, self.h) {
                            None => out.fill(0.0),
                            Some(ih) => {
                                let src_row = &plane[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in out.iter_mut().enumerate() {
                                    *v = match Self::src(ow, kx, self.sw, self.pw, self.w) {
                                        Some(iw) => src_row[iw],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], image: &mut [f64]) {
        let n = self.col_cols();
        for c in 0..self.c_in {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    let src = &col[row..row + n];
                    for oh in 0..self.ho {
                        let Some(ih) = Self::src(oh, ky, self.sh, self.ph, self.h) else {
                            continue;
                        };
                        for ow in 0..self.wo {
                            if let Some(iw) = Self::src(ow, kx, self.sw, self.pw, self.w) {
                                plane[ih * self.w + iw] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Thin layers (a few filters per channel window) are computed directly;
/// the im2col buffer would be wide and each product a matrix-vector one.
fn prefers_direct(spec: &ClcSpec, windows: usize) -> bool {
    windows > 1 && spec.filters_per_window <= 4
}

/// Output positions along one axis whose input position
/// `o * stride + k - pad` falls inside `0..len`.
fn valid_outputs(out_len: usize, k: usize, stride: usize, pad: usize, len: usize) -> std::ops::Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

fn strided_forward(x: &Tensor4, spec: &ClcSpec, w: &ClcWeights, geo: &Geometry, out: &mut Tensor4) {
    let windows = geo.c_in - spec.window_len + 1;
    let m = spec.filters_per_window;
    let (hw, n) = (geo.h * geo.w, geo.col_cols());
    for b in 0..x.shape().batch {
        let img = x.image(b);
        let y = out.image_mut(b);
        for j in 0..windows {
            let set = if spec.shared { 0 } else { j };
            for mi in 0..m {
                let o = j * m + mi;
                let yp = &mut y[o * n..(o + 1) * n];
                for l in 0..spec.window_len {
                    let xp = &img[(j + l) * hw..(j + l + 1) * hw];
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let wv = w.get(set, mi, ky, kx, l);
                            let cols = valid_outputs(geo.wo, kx, geo.sw, geo.pw, geo.w);
                            for oh in 0..geo.ho {
                                let Some(ih) = Geometry::src(oh, ky, geo.sh, geo.ph, geo.h) else {
                                    continue;
                                };
                                let yrow = &mut yp[oh * geo.wo..(oh + 1) * geo.wo];
                                let xrow = &xp[ih * geo.w..(ih + 1) * geo.w];
                                if geo.sw == 1 {
                                    let off = cols.start + kx - geo.pw;
                                    for (yv, xv) in yrow[cols.clone()].iter_mut().zip(&xrow[off..]) {
                                        *yv += wv * xv;
                                    }
                                } else {
                                    for ow in cols.clone() {
                                        yrow[ow] += wv * xrow[ow * geo.sw + kx - geo.pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn strided_backward(
    x: &Tensor4,
    spec: &ClcSpec,
    w: &ClcWeights,
    dy: &Tensor4,
    geo: &Geometry,
    dx: &mut Tensor4,
    grad: &mut ClcWeights,
) {
    let windows = geo.c_in - spec.window_len + 1;
    let m = spec.filters_per_window;
    let (hw, n) = (geo.h * geo.w, geo.col_cols());
    for b in 0..x.shape().batch {
        let img = x.image(b);
        let gy = dy.image(b);
        let dxi = dx.image_mut(b);
        for j in 0..windows {
            let set = if spec.shared { 0 } else { j };
            for mi in 0..m {
                let o = j * m + mi;
                let gp = &gy[o * n..(o + 1) * n];
                for l in 0..spec.window_len {
                    let c = j + l;
                    let xp = &img[c * hw..(c + 1) * hw];
                    let dxp = &mut dxi[c * hw..(c + 1) * hw];
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let wv = w.get(set, mi, ky, kx, l);
                            let cols = valid_outputs(geo.wo, kx, geo.sw, geo.pw, geo.w);
                            let mut acc = 0.0;
                            for oh in 0..geo.ho {
                                let Some(ih) = Geometry::src(oh, ky, geo.sh, geo.ph, geo.h) else {
                                    continue;
                                };
                                let grow = &gp[oh * geo.wo..(oh + 1) * geo.wo];
                                let xrow = &xp[ih * geo.w..(ih + 1) * geo.w];
                                let dxrow = &mut dxp[ih * geo.w..(ih + 1) * geo.w];
                                if geo.sw == 1 {
                                    let off = cols.start + kx - geo.pw;
                                    for ((g, xv), dv) in
                                        grow[cols.clone()].iter().zip(&xrow[off..]).zip(&mut dxrow[off..])
                                    {
                                        acc += g * xv;
                                        *dv += wv * g;
                                    }
                                } else {
                                    for ow in cols.clone() {
                                        let iw = ow * geo.sw + kx - geo.pw;
                                        acc += grow[ow] * xrow[iw];
                                        dxrow[iw] += wv * grow[ow];
                                    }
                                }
                            }
                            let i = grad.index(set, mi, ky, kx, l);
                            grad.weights[i] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Lanes per register block of the stride-1 kernels.
const LANES: usize = 8;

/// Zero-padded copy of every plane of one image, plus slack so a full lane
/// block can be read past the last valid column.
struct Padded {
    data: Vec<f64>,
    ph_len: usize,
    pw_len: usize,
}

impl Padded {
    fn new(geo: &Geometry) -> Self {
        let (ph_len, pw_len) = (geo.h + 2 * geo.ph, geo.w + 2 * geo.pw);
        Padded {
            data: vec![0.0; geo.c_in * ph_len * pw_len + LANES],
            ph_len,
            pw_len,
        }
    }

    fn fill(&mut self, geo: &Geometry, image: &[f64]) {
        let plane = self.ph_len * self.pw_len;
        for c in 0..geo.c_in {
            for y in 0..geo.h {
                let dst = c * plane + (y + geo.ph) * self.pw_len + geo.pw;
                let src = (c * geo.h + y) * geo.w;
                self.data[dst..dst + geo.w].copy_from_slice(&image[src..src + geo.w]);
            }
        }
    }

    /// Adds the interior of every plane into `image`.
    fn crop_add(&self, geo: &Geometry, image: &mut [f64]) {
        let plane = self.ph_len * self.pw_len;
        for c in 0..geo.c_in {
            for y in 0..geo.h {
                let src = c * plane + (y + geo.ph) * self.pw_len + geo.pw;
                let dst = (c * geo.h + y) * geo.w;
                for (d, s) in image[dst..dst + geo.w]
                    .iter_mut()
                    .zip(&self.data[src..src + geo.w])
                {
                    *d += s;
                }
            }
        }
    }

    /// Offsets (relative to the output position) and weights of every tap
    /// feeding output channel `j·M + mi`.
    fn taps(&self, spec: &ClcSpec, w: &ClcWeights, j: usize, mi: usize) -> Vec<(usize, f64)> {
        let set = if spec.shared { 0 } else { j };
        let plane = self.ph_len * self.pw_len;
        let (kh, kw) = spec.kernel;
        let mut taps = Vec::with_capacity(spec.window_len * kh * kw);
        for l in 0..spec.window_len {
            for ky in 0..kh {
                for kx in 0..kw {
                    taps.push(((j + l) * plane + ky * self.pw_len + kx, w.get(set, mi, ky, kx, l)));
                }
            }
        }
        taps
    }
}

fn unit_stride_forward(x: &Tensor4, spec: &ClcSpec, w: &ClcWeights, geo: &Geometry, out: &mut Tensor4) {
    let windows = geo.c_in - spec.window_len + 1;
    let m = spec.filters_per_window;
    let n = geo.col_cols();
    let mut pad = Padded::new(geo);
    for b in 0..x.shape().batch {
        pad.fill(geo, x.image(b));
        let y = out.image_mut(b);
        for j in 0..windows {
            for mi in 0..m {
                let taps = pad.taps(spec, w, j, mi);
                let o = j * m + mi;
                let yp = &mut y[o * n..(o + 1) * n];
                for oh in 0..geo.ho {
                    for ow in (0..geo.wo).step_by(LANES) {
                        let base = oh * pad.pw_len + ow;
                        let mut acc = [0.0; LANES];
                        for &(off, wv) in &taps {
                            let src: &[f64; LANES] = pad.data[base + off..base + off + LANES]
                                .try_into()
                                .expect("lane block");
                            for i in 0..LANES {
                                acc[i] += wv * src[i];
                            }
                        }
                        let len = LANES.min(geo.wo - ow);
                        yp[oh * geo.wo + ow..oh * geo.wo + ow + len].copy_from_slice(&acc[..len]);
                    }
                }
            }
        }
    }
}

fn unit_stride_backward(
    x: &Tensor4,
    spec: &ClcSpec,
    w: &ClcWeights,
    dy: &Tensor4,
    geo: &Geometry,
    dx: &mut Tensor4,
    grad: &mut ClcWeights,
) {
    let windows = geo.c_in - spec.window_len + 1;
    let m = spec.filters_per_window;
    let n = geo.col_cols();
    let (kh, kw) = spec.kernel;
    let mut pad = Padded::new(geo);
    let mut dpad = Padded::new(geo);
    let mut wacc: Vec<[f64; LANES]> = Vec::new();
    for b in 0..x.shape().batch {
        pad.fill(geo, x.image(b));
        dpad.data.fill(0.0);
        let gy = dy.image(b);
        for j in 0..windows {
            let set = if spec.shared { 0 } else { j };
            for mi in 0..m {
                let taps = pad.taps(spec, w, j, mi);
                wacc.clear();
                wacc.resize(taps.len(), [0.0; LANES]);
                let o = j * m + mi;
                let gp = &gy[o * n..(o + 1) * n];
                for oh in 0..geo.ho {
                    for ow in (0..geo.wo).step_by(LANES) {
                        let len = LANES.min(geo.wo - ow);
                        let mut g = [0.0; LANES];
                        g[..len].copy_from_slice(&gp[oh * geo.wo + ow..oh * geo.wo + ow + len]);
                        let base = oh * pad.pw_len + ow;
                        for (t, &(off, wv)) in taps.iter().enumerate() {
                            let at = base + off;
                            let src: &[f64; LANES] = pad.data[at..at + LANES].try_into().expect("lane block");
                            let dst: &mut [f64; LANES] =
                                (&mut dpad.data[at..at + LANES]).try_into().expect("lane block");
                            let acc = &mut wacc[t];
                            for i in 0..LANES {
                                acc[i] += g[i] * src[i];
                                dst[i] += wv * g[i];
                            }
                        }
                    }
                }
                let mut t = 0;
                for l in 0..spec.window_len {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let i = grad.index(set, mi, ky, kx, l);
                            grad.weights[i] += wacc[t].iter().sum::<f64>();
                            t += 1;
                        }
                    }
                }
            }
        }
        dpad.crop_add(geo, dx.image_mut(b));
    }
}

fn direct_forward(x: &Tensor4, spec: &ClcSpec, w: &ClcWeights, geo: &Geometry, out: &mut Tensor4) {
    if spec.stride == (1, 1) {
        unit_stride_forward(x, spec, w, geo, out);
    } else {
        strided_forward(x, spec, w, geo, out);
    }
}

fn direct_backward(
    x: &Tensor4,
    spec: &ClcSpec,
    w: &ClcWeights,
    dy: &Tensor4,
    geo: &Geometry,
    dx: &mut Tensor4,
    grad: &mut ClcWeights,
) {
    if spec.stride == (1, 1) {
        unit_stride_backward(x, spec, w, dy, geo, dx, grad);
    } else {
        strided_backward(x, spec, w, dy, geo, dx, grad);
    }
}

/// Forward pass of a channel-local convolution.
pub fn clc_forward(x: &Tensor4, spec: &ClcSpec, w: &ClcWeights) -> Result<Tensor4> {
    forward_impl(x, spec, w, None)
}

fn forward_impl(x: &Tensor4, spec: &ClcSpec, w: &ClcWeights, direct: Option<bool>) -> Result<Tensor4> {
    let in_shape = x.shape();
    let out_shape = spec.output_shape(in_shape)?;
    w.check(spec, in_shape.channels)?;
    x.ensure_finite("convolution input")?;

    let geo = Geometry::new(spec, in_shape, out_shape);
    let windows = spec.windows(in_shape.channels)?;
    let m = spec.filters_per_window;
    let kk = geo.kh * geo.kw;
    let band = spec.window_len * kk;
    let n = geo.col_cols();
    let packed = w.packed();
    let pointwise = spec.is_pointwise();
    let mut out = Tensor4::zeros(out_shape);
    if direct.unwrap_or_else(|| prefers_direct(spec, windows)) {
        direct_forward(x, spec, w, &geo, &mut out);
        add_bias(&mut out, &w.bias, n);
        out.ensure_finite("convolution output")?;
        return Ok(out);
    }
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![0.0; geo.col_rows() * n]
    };

    for b in 0..in_shape.batch {
        let cols: &[f64] = if pointwise {
            x.image(b)
        } else {
            geo.im2col(x.image(b), &mut col);
            &col
        };
        let y = out.image_mut(b);
        for j in 0..windows {
            let set = if spec.shared { 0 } else { j };
            gemm(
                m,
                band,
                n,
                1.0,
                Mat::row_major(&packed[set * m * band..(set + 1) * m * band], band),
                Mat::row_major(&cols[j * kk * n..(j + spec.window_len) * kk * n], n),
                0.0,
                MatMut::row_major(&mut y[j * m * n..(j + 1) * m * n], n),
            );
        }
    }
    add_bias(&mut out, &w.bias, n);
    out.ensure_finite("convolution output")?;
    Ok(out)
}

fn add_bias(out: &mut Tensor4, bias: &[f64], plane: usize) {
    for (i, p) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        p.iter_mut().for_each(|v| *v += b);
    }
}

/// Gradients of `sum(dy ⊙ clc_forward(x))` with respect to the input and the weights.
pub fn clc_backward(
    x: &Tensor4,
    spec: &ClcSpec,
    w: &ClcWeights,
    dy: &Tensor4,
) -> Result<(Tensor4, ClcWeights)> {
    backward_impl(x, spec, w, dy, None)
}

fn backward_impl(
    x: &Tensor4,
    spec: &ClcSpec,
    w: &ClcWeights,
    dy: &Tensor4,
    direct: Option<bool>,
) -> Result<(Tensor4, ClcWeights)> {
    let in_shape = x.shape();
    let out_shape = spec.output_shape(in_shape)?;
    if dy.shape() != out_shape {
        return Err(Error::Shape(format!(
            "output gradient {} does not match convolution output {out_shape}",
            dy.shape()
        )));
    }
    w.check(spec, in_shape.channels)?;

    let geo = Geometry::new(spec, in_shape, out_shape);
    let windows = spec.windows(in_shape.channels)?;
    let m = spec.filters_per_window;
    let kk = geo.kh * geo.kw;
    let band = spec.window_len * kk;
    let n = geo.col_cols();
    let packed = w.packed();
    let pointwise = spec.is_pointwise();

    let mut grad = ClcWeights::zeros(spec, in_shape.channels)?;
    if direct.unwrap_or_else(|| prefers_direct(spec, windows)) {
        for b in 0..in_shape.batch {
            for (o, plane) in dy.image(b).chunks_exact(n).enumerate() {
                grad.bias[o] += plane.iter().sum::<f64>();
            }
        }
        let mut dx = Tensor4::zeros(in_shape);
        direct_backward(x, spec, w, dy, &geo, &mut dx, &mut grad);
        return Ok((dx, grad));
    }
    let mut dpacked = vec![0.0; packed.len()];
    let mut dx = Tensor4::zeros(in_shape);
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![0.0; geo.col_rows() * n]
    };
    let mut dcol = if pointwise {
        Vec::new()
    } else {
        vec![0.0; geo.col_rows() * n]
    };

    for b in 0..in_shape.batch {
        let gy = dy.image(b);
        for (o, plane) in gy.chunks_exact(n).enumerate() {
            grad.bias[o] += plane.iter().sum::<f64>();
        }
        let cols: &[f64] = if pointwise {
            x.image(b)
        } else {
            geo.im2col(x.image(b), &mut col);
            &col
        };
        let dcols: &mut [f64] = if pointwise {
            dx.image_mut(b)
        } else {
            dcol.fill(0.0);
            &mut dcol
        };
        for j in 0..windows {
            let set = if spec.shared { 0 } else { j };
            let gy_j = &gy[j * m * n..(j + 1) * m * n];
            let rows = j * kk * n..(j + spec.window_len) * kk * n;
            // dW_set += dy_j · col_jᵀ
            gemm(
                m,
                n,
                band,
                1.0,
                Mat::row_major(gy_j, n),
                Mat::col_major(&cols[rows.clone()], n),
                1.0,
                MatMut::row_major(&mut dpacked[set * m * band..(set + 1) * m * band], band),
            );
            // dcol_j += W_setᵀ · dy_j
            gemm(
                band,
                m,
                n,
                1.0,
                Mat::col_major(&packed[set * m * band..(set + 1) * m * band], band),
                Mat::row_major(gy_j, n),
                1.0,
                MatMut::row_major(&mut dcols[rows], n),
            );
        }
        if !pointwise {
            geo.col2im_add(&dcol, dx.image_mut(b));
        }
    }
    grad.unpack_into(&dpacked);
    Ok((dx, grad))
}
