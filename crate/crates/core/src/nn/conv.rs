//! Strided 2-D convolution and its transpose with "same" zero padding.
//!
//! Padding rule: a stride-`s` convolution of an `h`-pixel axis produces
//! `ceil(h/s)` outputs. The total padding is `max((out−1)·s + k − h, 0)`, of
//! which `floor(total/2)` goes before the first pixel and the rest after.
//! A transposed convolution is the exact adjoint of the convolution that maps
//! `in·s` pixels to `in`, so it multiplies the spatial size by `s`.

use rand::Rng;
use rayon::prelude::*;

use super::{fan_in_uniform, Layer, NnError, Scalar, Tensor};

/// Geometry of one correlation, always described in the forward-conv sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output length and leading pad of a "same" convolution along one axis.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn same(batch: usize, in_ch: usize, in_h: usize, in_w: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let (out_h, pad_top) = same_padding(in_h, kernel, stride);
        let (out_w, pad_left) = same_padding(in_w, kernel, stride);
        Self { batch, in_ch, in_h, in_w, out_ch, out_h, out_w, kernel, stride, pad_top, pad_left }
    }

    /// Range of output positions whose tap `kk` lands inside the input.
    fn valid(out_len: usize, in_len: usize, stride: usize, kk: usize, pad: usize) -> (usize, usize) {
        // need 0 <= o·s + kk − pad < in_len
        let lo = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
        let hi_excl = if in_len + pad > kk { (in_len + pad - kk).div_ceil(stride) } else { 0 };
        (lo.min(out_len), hi_excl.min(out_len))
    }
}

/// `out[b,o,y,x] += Σ_{i,ky,kx} input[b,i,y·s+ky−p, x·s+kx−p] · w[o,i,ky,kx]`.
pub fn correlate<T: Scalar>(input: &[T], weight: &[T], g: &ConvGeometry, out: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let in_plane = g.in_h * g.in_w;
    out.par_chunks_mut(g.out_h * g.out_w).enumerate().for_each(|(idx, plane)| {
        let (b, o) = (idx / g.out_ch, idx % g.out_ch);
        for i in 0..g.in_ch {
            let src = &input[(b * g.in_ch + i) * in_plane..][..in_plane];
            let wk = &weight[(o * g.in_ch + i) * k * k..][..k * k];
            for ky in 0..k {
                let (y0, y1) = ConvGeometry::valid(g.out_h, g.in_h, s, ky, g.pad_top);
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    let (x0, x1) = ConvGeometry::valid(g.out_w, g.in_w, s, kx, g.pad_left);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - g.pad_top;
                        let row = &src[iy * g.in_w..][..g.in_w];
                        let dst = &mut plane[oy * g.out_w..][..g.out_w];
                        for ox in x0..x1 {
                            dst[ox] += wv * row[ox * s + kx - g.pad_left];
                        }
                    }
                }
            }
        }
    });
}

/// Adjoint of [`correlate`] with respect to its input:
/// `grad_in[b,i,iy,ix] += Σ grad_out[b,o,oy,ox] · w[o,i,ky,kx]`.
pub fn correlate_adjoint<T: Scalar>(grad_out: &[T], weight: &[T], g: &ConvGeometry, grad_in: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let out_plane = g.out_h * g.out_w;
    grad_in.par_chunks_mut(g.in_h * g.in_w).enumerate().for_each(|(idx, plane)| {
        let (b, i) = (idx / g.in_ch, idx % g.in_ch);
        for o in 0..g.out_ch {
            let src = &grad_out[(b * g.out_ch + o) * out_plane..][..out_plane];
            let wk = &weight[(o * g.in_ch + i) * k * k..][..k * k];
            for ky in 0..k {
                let (y0, y1) = ConvGeometry::valid(g.out_h, g.in_h, s, ky, g.pad_top);
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    let (x0, x1) = ConvGeometry::valid(g.out_w, g.in_w, s, kx, g.pad_left);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - g.pad_top;
                        let row = &src[oy * g.out_w..][..g.out_w];
                        let dst = &mut plane[iy * g.in_w..][..g.in_w];
                        for ox in x0..x1 {
                            dst[ox * s + kx - g.pad_left] += wv * row[ox];
                        }
                    }
                }
            }
        }
    });
}

/// Weight gradient of [`correlate`], accumulated into `grad_w`.
pub fn correlate_weight_grad<T: Scalar>(input: &[T], grad_out: &[T], g: &ConvGeometry, grad_w: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    grad_w.par_chunks_mut(g.in_ch * k * k).enumerate().for_each(|(o, wo)| {
        for i in 0..g.in_ch {
            for ky in 0..k {
                let (y0, y1) = ConvGeometry::valid(g.out_h, g.in_h, s, ky, g.pad_top);
                for kx in 0..k {
                    let (x0, x1) = ConvGeometry::valid(g.out_w, g.in_w, s, kx, g.pad_left);
                    let mut acc = T::zero();
                    for b in 0..g.batch {
                        let src = &input[(b * g.in_ch + i) * in_plane..][..in_plane];
                        let go = &grad_out[(b * g.out_ch + o) * out_plane..][..out_plane];
                        for oy in y0..y1 {
                            let iy = oy * s + ky - g.pad_top;
                            for ox in x0..x1 {
                                acc += go[oy * g.out_w + ox] * src[iy * g.in_w + ox * s + kx - g.pad_left];
                            }
                        }
                    }
                    wo[(i * k + ky) * k + kx] += acc;
                }
            }
        }
    });
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    let ch = bias.len();
    out.chunks_mut(plane).enumerate().for_each(|(idx, p)| {
        let bv = bias[idx % ch];
        p.iter_mut().for_each(|v| *v += bv);
    });
}

fn bias_grad<T: Scalar>(grad_out: &[T], grad_b: &mut [T], plane: usize) {
    let ch = grad_b.len();
    for (idx, p) in grad_out.chunks(plane).enumerate() {
        grad_b[idx % ch] += p.iter().copied().sum::<T>();
    }
}

/// "Same"-padded strided convolution. Weights are `(out, in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = fan_in_uniform(out_ch * fan_in, fan_in, rng);
        Self::from_parts(
            Tensor::parameter(&[out_ch, in_ch, kernel, kernel], w).expect("sized above"),
            Tensor::parameter(&[out_ch], vec![T::zero(); out_ch]).expect("sized above"),
            stride,
        )
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize) -> Self {
        assert!(stride >= 1, "stride must be >= 1");
        Self { weight, bias, stride, input: None }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<ConvGeometry, NnError> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(NnError::Shape(format!("conv expects {} input channels, got {c}", self.in_channels())));
        }
        Ok(ConvGeometry::same(b, c, h, w, self.out_channels(), self.kernel(), self.stride))
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(x)?;
        let mut out = Tensor::zeros(&[g.batch, g.out_ch, g.out_h, g.out_w]);
        add_bias(out.data_mut(), self.bias.data(), g.out_h * g.out_w);
        correlate(x.data(), self.weight.data(), &g, out.data_mut());
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForward("conv2d"))?;
        let g = self.geometry(&x)?;
        if grad_out.shape() != [g.batch, g.out_ch, g.out_h, g.out_w] {
            return Err(NnError::Shape(format!("conv gradient has shape {:?}", grad_out.shape())));
        }
        correlate_weight_grad(x.data(), grad_out.data(), &g, self.weight.grad_mut());
        bias_grad(grad_out.data(), self.bias.grad_mut(), g.out_h * g.out_w);
        let mut grad_in = Tensor::zeros(x.shape());
        correlate_adjoint(grad_out.data(), self.weight.data(), &g, grad_in.data_mut());
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution, the adjoint of a "same" [`Conv2d`] with equal
/// stride. Weights are `(in, out, k, k)`; spatial size grows by `stride`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = fan_in_uniform(in_ch * out_ch * kernel * kernel, fan_in, rng);
        Self::from_parts(
            Tensor::parameter(&[in_ch, out_ch, kernel, kernel], w).expect("sized above"),
            Tensor::parameter(&[out_ch], vec![T::zero(); out_ch]).expect("sized above"),
            stride,
        )
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize) -> Self {
        assert!(stride >= 1, "stride must be >= 1");
        Self { weight, bias, stride, input: None }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Geometry of the forward convolution this layer is the adjoint of.
    fn geometry(&self, x: &Tensor<T>) -> Result<ConvGeometry, NnError> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(NnError::Shape(format!(
                "conv_transpose expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let k = self.weight.shape()[2];
        Ok(ConvGeometry::same(b, self.out_channels(), h * self.stride, w * self.stride, c, k, self.stride))
    }
}

impl<T: Scalar> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(x)?;
        let mut out = Tensor::zeros(&[g.batch, g.in_ch, g.in_h, g.in_w]);
        add_bias(out.data_mut(), self.bias.data(), g.in_h * g.in_w);
        correlate_adjoint(x.data(), self.weight.data(), &g, out.data_mut());
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForward("conv_transpose2d"))?;
        let g = self.geometry(&x)?;
        if grad_out.shape() != [g.batch, g.in_ch, g.in_h, g.in_w] {
            return Err(NnError::Shape(format!("conv_transpose gradient has shape {:?}", grad_out.shape())));
        }
        correlate_weight_grad(grad_out.data(), x.data(), &g, self.weight.grad_mut());
        bias_grad(grad_out.data(), self.bias.grad_mut(), g.in_h * g.in_w);
        let mut grad_in = Tensor::zeros(x.shape());
        correlate(grad_out.data(), self.weight.data(), &g, grad_in.data_mut());
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 99);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Quadruple loop straight from the definition with explicit zero padding.
    fn brute_force_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], stride: usize) -> Tensor<f64> {
        let (b, c, h, wd) = x.dims4().unwrap();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + stride - 1) / stride;
        let ow = (wd + stride - 1) / stride;
        let pt = (((oh - 1) * stride + k).saturating_sub(h)) / 2;
        let pl = (((ow - 1) * stride + k).saturating_sub(wd)) / 2;
        let mut out = Tensor::zeros(&[b, o, oh, ow]);
        for bi in 0..b {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pt as isize;
                                    let ix = (xx * stride + kx) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((bi * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn same_padding_rule() {
        assert_eq!(same_padding(16, 3, 2), (8, 0));
        assert_eq!(same_padding(16, 3, 1), (16, 1));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(8, 1, 2), (4, 0));
        assert_eq!(same_padding(4, 3, 4), (1, 0));
    }

    #[test]
    fn identity_1x1() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let mut conv = Conv2d::from_parts(
            Tensor::parameter(&[3, 3, 1, 1], w).unwrap(),
            Tensor::parameter(&[3], vec![0.0; 3]).unwrap(),
            1,
        );
        let x = random(&[2, 3, 4, 5], 1);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = stream_rng(3, 0);
        for (h, w, c, o, stride) in [(5, 5, 1, 1, 1), (8, 8, 4, 3, 1), (8, 8, 4, 5, 2), (7, 6, 2, 3, 2), (8, 8, 4, 4, 3)] {
            let mut conv = Conv2d::<f64>::new(c, o, 3, stride, &mut rng);
            conv.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let x = random(&[2, c, h, w], 7);
            let got = conv.forward(&x).unwrap();
            let want = brute_force_conv(&x, &conv.weight, conv.bias.data(), stride);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn transpose_stride_one_identity() {
        let mut conv = ConvTranspose2d::from_parts(
            Tensor::parameter(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::parameter(&[1], vec![0.0]).unwrap(),
            1,
        );
        let x = random(&[1, 1, 4, 4], 2);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn stride_two_round_trip_shape() {
        let mut rng = stream_rng(4, 0);
        let mut down = Conv2d::<f64>::new(3, 6, 3, 2, &mut rng);
        let mut up = ConvTranspose2d::<f64>::new(6, 3, 3, 2, &mut rng);
        let x = random(&[2, 3, 16, 12], 5);
        let y = down.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 6, 8, 6]);
        assert_eq!(up.forward(&y).unwrap().shape(), x.shape());
    }

    #[test]
    fn transpose_is_adjoint() {
        // ⟨conv(x), y⟩ = ⟨x, conv_transpose(y)⟩ with the same weights, no bias
        let mut rng = stream_rng(8, 0);
        for (stride, k) in [(1, 3), (2, 3), (2, 1), (3, 3)] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, stride, &mut rng);
            let mut convt = ConvTranspose2d::from_parts(
                Tensor::parameter(&[4, 3, k, k], conv.weight.data().to_vec()).unwrap(),
                Tensor::parameter(&[3], vec![0.0; 3]).unwrap(),
                stride,
            );
            let side = 4 * stride;
            let x = random(&[2, 3, side, side], 10 + stride as u64);
            let cx = conv.forward(&x).unwrap();
            let y = random(cx.shape(), 20 + k as u64);
            let ty = convt.forward(&y).unwrap();
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "stride {stride}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = stream_rng(12, 0);
        for stride in [1, 2] {
            let mut conv = Conv2d::<f64>::new(2, 3, 3, stride, &mut rng);
            let x = random(&[2, 2, 6, 6], 13);
            let report = gradient_check(&mut conv, &x, 1e-5, 1).unwrap();
            assert!(report.max_rel_error < 1e-5, "{report:?}");
        }
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = stream_rng(14, 0);
        for stride in [1, 2] {
            let mut conv = ConvTranspose2d::<f64>::new(3, 2, 3, stride, &mut rng);
            let x = random(&[2, 3, 3, 3], 15);
            let report = gradient_check(&mut conv, &x, 1e-5, 2).unwrap();
            assert!(report.max_rel_error < 1e-5, "{report:?}");
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let mut rng = stream_rng(1, 0);
        let mut conv = Conv2d::<f64>::new(3, 2, 3, 1, &mut rng);
        assert!(matches!(conv.forward(&random(&[1, 2, 4, 4], 0)), Err(NnError::Shape(_))));
        let mut convt = ConvTranspose2d::<f64>::new(3, 2, 3, 1, &mut rng);
        assert!(convt.forward(&random(&[1, 4, 4, 4], 0)).is_err());
    }
}
