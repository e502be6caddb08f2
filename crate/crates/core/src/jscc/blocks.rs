use rand::Rng;

use crate::nn::{concat, split, Conv2d, ConvTranspose2d, Dense, GlobalAvgPool, Layer, NnError, PRelu, Relu, Scalar, Sigmoid, Tensor};

/// A plain or transposed convolution, so both block flavours share one type.
#[derive(Debug, Clone)]
pub enum AnyConv<T: Scalar> {
    Plain(Conv2d<T>),
    Transpose(ConvTranspose2d<T>),
}

impl<T: Scalar> AnyConv<T> {
    pub fn new<R: Rng + ?Sized>(transpose: bool, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        if transpose {
            Self::Transpose(ConvTranspose2d::new(in_ch, out_ch, kernel, stride, rng))
        } else {
            Self::Plain(Conv2d::new(in_ch, out_ch, kernel, stride, rng))
        }
    }

    fn inner(&mut self) -> &mut dyn Layer<T> {
        match self {
            Self::Plain(c) => c,
            Self::Transpose(c) => c,
        }
    }
}

impl<T: Scalar> Layer<T> for AnyConv<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.inner().forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.inner().backward(grad_out)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Plain(c) => c.params(),
            Self::Transpose(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner().params_mut()
    }
}

/// `conv(f, k, s) → PReLU → conv(f, k, 1)` plus a skip path, summed and
/// passed through a second PReLU. The skip is a 1×1 convolution with stride
/// `s` when the block changes shape, identity otherwise. The transpose
/// flavour uses transposed convolutions throughout and upsamples by `s`.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub conv1: AnyConv<T>,
    pub act1: PRelu<T>,
    pub conv2: AnyConv<T>,
    pub skip: Option<AnyConv<T>>,
    pub act_out: PRelu<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        transpose: bool,
        in_ch: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = AnyConv::new(transpose, in_ch, filters, kernel, stride, rng);
        let conv2 = AnyConv::new(transpose, filters, filters, kernel, 1, rng);
        let skip = (in_ch != filters || stride != 1).then(|| AnyConv::new(transpose, in_ch, filters, 1, stride, rng));
        Self { conv1, act1: PRelu::new(filters), conv2, skip, act_out: PRelu::new(filters) }
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let h = self.conv1.forward(x)?;
        let h = self.act1.forward(&h)?;
        let mut h = self.conv2.forward(&h)?;
        match self.skip.as_mut() {
            Some(s) => h.add_assign(&s.forward(x)?)?,
            None => h.add_assign(x)?,
        }
        self.act_out.forward(&h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.act_out.backward(grad_out)?;
        let gm = self.conv2.backward(&g)?;
        let gm = self.act1.backward(&gm)?;
        let mut gx = self.conv1.backward(&gm)?;
        match self.skip.as_mut() {
            Some(s) => gx.add_assign(&s.backward(&g)?)?,
            None => gx.add_assign(&g)?,
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.conv1.params();
        p.extend(self.act1.params());
        p.extend(self.conv2.params());
        if let Some(s) = &self.skip {
            p.extend(s.params());
        }
        p.extend(self.act_out.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.act1.params_mut());
        p.extend(self.conv2.params_mut());
        if let Some(s) = self.skip.as_mut() {
            p.extend(s.params_mut());
        }
        p.extend(self.act_out.params_mut());
        p
    }
}

/// Channel attention conditioned on the channel context.
///
/// `a = σ(W₂·ReLU(W₁·[GAP(x) ⊕ ctx] + b₁) + b₂)` and `y[c] = a[c]·x[c]`.
/// The context is an input set per batch through [`Attention::set_context`];
/// no gradient flows into it.
#[derive(Debug, Clone)]
pub struct Attention<T: Scalar> {
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pool: GlobalAvgPool,
    relu: Relu<T>,
    sigmoid: Sigmoid<T>,
    context: Option<Tensor<T>>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Attention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, context_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Dense::new(channels + context_dim, hidden, rng),
            fc2: Dense::new(hidden, channels, rng),
            pool: GlobalAvgPool::new(),
            relu: Relu::new(),
            sigmoid: Sigmoid::new(),
            context: None,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn context_dim(&self) -> usize {
        self.fc1.inputs() - self.channels()
    }

    /// Context rows `(batch, context_dim)`, or one row broadcast to the batch.
    pub fn set_context(&mut self, ctx: Option<Tensor<T>>) {
        self.context = ctx;
    }

    fn context_for(&self, batch: usize) -> Result<Tensor<T>, NnError> {
        let ctx = self.context.as_ref().ok_or_else(|| NnError::Config("attention context not set".into()))?;
        let (b, d) = ctx.dims2()?;
        if d != self.context_dim() {
            return Err(NnError::Shape(format!("attention expects {} context values, got {d}", self.context_dim())));
        }
        if b == batch {
            Ok(ctx.clone())
        } else if b == 1 {
            Tensor::from_vec(&[batch, d], ctx.data().repeat(batch))
        } else {
            Err(NnError::Shape(format!("{b} context rows for a batch of {batch}")))
        }
    }

    /// Per-channel scale `(batch, channels)` for the given features.
    pub fn scales(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let pooled = self.pool.forward(x)?;
        let u = concat(&pooled, &self.context_for(x.batch())?)?;
        let h = self.fc1.forward(&u)?;
        let h = self.relu.forward(&h)?;
        let h = self.fc2.forward(&h)?;
        self.sigmoid.forward(&h)
    }
}

impl<T: Scalar> Layer<T> for Attention<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(NnError::Shape(format!("attention built for {} channels, got {c}", self.channels())));
        }
        let a = self.scales(x)?;
        let mut y = x.clone();
        for (chunk, &s) in y.data_mut().chunks_mut(h * w).zip(a.data()) {
            chunk.iter_mut().for_each(|v| *v = *v * s);
        }
        self.cache = Some((x.clone(), a));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (x, a) = self.cache.take().ok_or(NnError::NoForward("attention"))?;
        x.same_shape(grad_out)?;
        let (_, c, h, w) = x.dims4()?;
        let plane = h * w;
        let mut grad_a = Tensor::zeros(a.shape());
        let mut gx = grad_out.clone();
        for (i, ((gchunk, xchunk), &s)) in gx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).zip(a.data()).enumerate() {
            let mut acc = T::zero();
            for (g, &xv) in gchunk.iter_mut().zip(xchunk) {
                acc += *g * xv;
                *g = *g * s;
            }
            grad_a.data_mut()[i] = acc;
        }
        let g = self.sigmoid.backward(&grad_a)?;
        let g = self.fc2.backward(&g)?;
        let g = self.relu.backward(&g)?;
        let g = self.fc1.backward(&g)?;
        let (g_pool, _) = split(&g, c)?;
        gx.add_assign(&self.pool.backward(&g_pool)?)?;
        Ok(gx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}

/// A residual block optionally followed by attention.
#[derive(Debug, Clone)]
pub struct Stage<T: Scalar> {
    pub block: ResidualBlock<T>,
    pub attention: Option<Attention<T>>,
}

impl<T: Scalar> Layer<T> for Stage<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let h = self.block.forward(x)?;
        match self.attention.as_mut() {
            Some(a) => a.forward(&h),
            None => Ok(h),
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = match self.attention.as_mut() {
            Some(a) => a.backward(grad_out)?,
            None => grad_out.clone(),
        };
        self.block.backward(&g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.block.params();
        if let Some(a) = &self.attention {
            p.extend(a.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.block.params_mut();
        if let Some(a) = self.attention.as_mut() {
            p.extend(a.params_mut());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 7);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_skip_keeps_shape() {
        let mut b = ResidualBlock::<f64>::new(false, 4, 4, 3, 1, &mut stream_rng(1, 0));
        assert!(b.skip.is_none());
        assert_eq!(b.forward(&input(&[2, 4, 5, 5], 0)).unwrap().shape(), &[2, 4, 5, 5]);
    }

    #[test]
    fn strided_block_halves_and_transpose_doubles() {
        let mut down = ResidualBlock::<f64>::new(false, 3, 6, 3, 2, &mut stream_rng(1, 0));
        assert_eq!(down.forward(&input(&[1, 3, 8, 6], 0)).unwrap().shape(), &[1, 6, 4, 3]);
        let mut odd = ResidualBlock::<f64>::new(false, 3, 6, 3, 2, &mut stream_rng(1, 0));
        assert_eq!(odd.forward(&input(&[1, 3, 7, 7], 0)).unwrap().shape(), &[1, 6, 4, 4]);
        let mut up = ResidualBlock::<f64>::new(true, 6, 6, 3, 2, &mut stream_rng(1, 0));
        assert_eq!(up.forward(&input(&[1, 6, 4, 3], 0)).unwrap().shape(), &[1, 6, 8, 6]);
    }

    #[test]
    fn block_gradients() {
        for (transpose, stride) in [(false, 1), (false, 2), (true, 1), (true, 2)] {
            let mut b = ResidualBlock::<f64>::new(transpose, 2, 3, 3, stride, &mut stream_rng(2, stride as u64));
            let x = input(&[2, 2, 4, 4], 1);
            let r = gradient_check(&mut b, &x, 1e-5, 5).unwrap();
            assert!(r.max_rel_error < 1e-5, "transpose={transpose} stride={stride}: {r:?}");
        }
    }

    #[test]
    fn attention_gradient() {
        let mut a = Attention::<f64>::new(3, 4, 4, &mut stream_rng(3, 0));
        a.set_context(Some(input(&[2, 4], 9)));
        let r = gradient_check(&mut a, &input(&[2, 3, 3, 3], 2), 1e-5, 6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn attention_scales_in_unit_interval() {
        let mut a = Attention::<f64>::new(5, 4, 4, &mut stream_rng(4, 0));
        a.set_context(Some(input(&[1, 4], 3)));
        let x = input(&[3, 5, 2, 2], 4);
        let y = a.forward(&x).unwrap();
        for (xv, yv) in x.data().iter().zip(y.data()) {
            assert!(yv.abs() <= xv.abs());
        }
    }

    #[test]
    fn saturated_attention_is_identity() {
        let mut a = Attention::<f64>::new(3, 4, 4, &mut stream_rng(5, 0));
        a.fc2.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        // σ(800) rounds to exactly 1 in f64
        a.fc2.bias.data_mut().iter_mut().for_each(|v| *v = 800.0);
        a.set_context(Some(input(&[1, 4], 3)));
        let x = input(&[2, 3, 2, 2], 4);
        assert_eq!(a.forward(&x).unwrap(), x);
    }

    #[test]
    fn context_changes_scales() {
        let mut a = Attention::<f64>::new(6, 4, 4, &mut stream_rng(6, 0));
        let x = input(&[1, 6, 3, 3], 5);
        a.set_context(Some(Tensor::from_vec(&[1, 4], vec![0.1, 1.0, 0.0, 0.0]).unwrap()));
        let s1 = a.scales(&x).unwrap();
        a.set_context(Some(Tensor::from_vec(&[1, 4], vec![0.9, 0.0, 0.0, 1.0]).unwrap()));
        let s2 = a.scales(&x).unwrap();
        assert_ne!(s1, s2);
    }

    #[test]
    fn missing_context_is_error() {
        let mut a = Attention::<f64>::new(2, 4, 4, &mut stream_rng(6, 0));
        assert!(a.forward(&input(&[1, 2, 2, 2], 0)).is_err());
    }
}
