use rand::Rng;

use super::{fan_in_uniform, Layer, NnError, Scalar, Tensor};

/// Elements per channel for a `(batch, channels, ...)` tensor.
fn channel_plane<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(NnError::Shape(format!("expected (batch, channels, ...), got {s:?}")));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Parametric ReLU with one learnable slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu<T: Scalar> {
    pub slope: Tensor<T>,
    input: Option<Tensor<T>>,
}

pub const PRELU_INIT: f64 = 0.25;

impl<T: Scalar> PRelu<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            slope: Tensor::parameter(&[channels], vec![T::of(PRELU_INIT); channels]).expect("sized"),
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for PRelu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (_, c, plane) = channel_plane(x)?;
        if c != self.slope.len() {
            return Err(NnError::Shape(format!("prelu has {} slopes, input has {c} channels", self.slope.len())));
        }
        let mut y = x.clone();
        for (idx, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let a = self.slope.data()[idx % c];
            chunk.iter_mut().filter(|v| **v < T::zero()).for_each(|v| *v = *v * a);
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForward("prelu"))?;
        x.same_shape(grad_out)?;
        let (_, c, plane) = channel_plane(&x)?;
        let slopes = self.slope.data().to_vec();
        let mut grad_in = grad_out.clone();
        let gslope = self.slope.grad_mut();
        for (idx, (gi, xi)) in grad_in.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
            let ch = idx % c;
            let mut acc = T::zero();
            for (g, &v) in gi.iter_mut().zip(xi) {
                if v < T::zero() {
                    acc += *g * v;
                    *g = *g * slopes[ch];
                }
            }
            gslope[ch] += acc;
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.slope]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.slope]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForward("relu"))?;
        x.same_shape(grad_out)?;
        let mut g = grad_out.clone();
        g.data_mut().iter_mut().zip(x.data()).filter(|(_, &v)| v <= T::zero()).for_each(|(g, _)| *g = T::zero());
        Ok(g)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self.output.take().ok_or(NnError::NoForward("sigmoid"))?;
        y.same_shape(grad_out)?;
        let mut g = grad_out.clone();
        g.data_mut().iter_mut().zip(y.data()).for_each(|(g, &s)| *g = *g * s * (T::one() - s));
        Ok(g)
    }
}

/// Fully connected layer on `(batch, features)`; weights are `(out, in)`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = fan_in_uniform(inputs * outputs, inputs, rng);
        Self::from_parts(
            Tensor::parameter(&[outputs, inputs], w).expect("sized"),
            Tensor::parameter(&[outputs], vec![T::zero(); outputs]).expect("sized"),
        )
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self { weight, bias, input: None }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, f) = x.dims2()?;
        if f != self.inputs() {
            return Err(NnError::Shape(format!("dense expects {} features, got {f}", self.inputs())));
        }
        let o = self.outputs();
        let mut y = Tensor::zeros(&[b, o]);
        let w = self.weight.data();
        for bi in 0..b {
            let xi = x.sample(bi);
            let yi = &mut y.data_mut()[bi * o..(bi + 1) * o];
            for (j, yj) in yi.iter_mut().enumerate() {
                let row = &w[j * f..(j + 1) * f];
                *yj = self.bias.data()[j] + row.iter().zip(xi).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForward("dense"))?;
        let (b, f) = x.dims2()?;
        let o = self.outputs();
        if grad_out.shape() != [b, o] {
            return Err(NnError::Shape(format!("dense gradient has shape {:?}", grad_out.shape())));
        }
        let mut grad_in = Tensor::zeros(&[b, f]);
        let w = self.weight.data().to_vec();
        {
            let gw = self.weight.grad_mut();
            for bi in 0..b {
                let xi = x.sample(bi);
                for j in 0..o {
                    let g = grad_out.data()[bi * o + j];
                    gw[j * f..(j + 1) * f].iter_mut().zip(xi).for_each(|(a, &v)| *a += g * v);
                }
            }
        }
        let gb = self.bias.grad_mut();
        for bi in 0..b {
            for j in 0..o {
                gb[j] += grad_out.data()[bi * o + j];
            }
        }
        for bi in 0..b {
            let gi = &mut grad_in.data_mut()[bi * f..(bi + 1) * f];
            for j in 0..o {
                let g = grad_out.data()[bi * o + j];
                gi.iter_mut().zip(&w[j * f..(j + 1) * f]).for_each(|(a, &wv)| *a += g * wv);
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Spatial mean per channel: `(b, c, h, w) → (b, c)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, c, h, w) = x.dims4()?;
        let n = T::of((h * w) as f64);
        let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / n).collect();
        self.input_shape = Some(x.shape().to_vec());
        Tensor::from_vec(&[b, c], data)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.input_shape.take().ok_or(NnError::NoForward("global_avg_pool"))?;
        let plane = shape[2] * shape[3];
        if grad_out.shape() != [shape[0], shape[1]] {
            return Err(NnError::Shape(format!("pool gradient has shape {:?}", grad_out.shape())));
        }
        let n = T::of(plane as f64);
        let mut g = Tensor::zeros(&shape);
        for (chunk, &go) in g.data_mut().chunks_mut(plane).zip(grad_out.data()) {
            chunk.iter_mut().for_each(|v| *v = go / n);
        }
        Ok(g)
    }
}

/// Joins `(b, m)` and `(b, n)` feature rows into `(b, m + n)`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (ba, fa) = a.dims2()?;
    let (bb, fb) = b.dims2()?;
    if ba != bb {
        return Err(NnError::Shape(format!("concat batch mismatch {ba} vs {bb}")));
    }
    let mut data = Vec::with_capacity(ba * (fa + fb));
    for i in 0..ba {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec(&[ba, fa + fb], data)
}

/// Splits a concatenated gradient back into its two parts.
pub fn split<T: Scalar>(g: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let (b, f) = g.dims2()?;
    if first > f {
        return Err(NnError::Shape(format!("cannot split {f} features at {first}")));
    }
    let mut a = Vec::with_capacity(b * first);
    let mut c = Vec::with_capacity(b * (f - first));
    for i in 0..b {
        let row = g.sample(i);
        a.extend_from_slice(&row[..first]);
        c.extend_from_slice(&row[first..]);
    }
    Ok((Tensor::from_vec(&[b, first], a)?, Tensor::from_vec(&[b, f - first], c)?))
}

/// Average-power constraint: each sample's `n` reals are read as `k = n/2`
/// complex symbols and scaled to `z = √(kP)·z̃/‖z̃‖`, so `‖z‖²/k = P`.
#[derive(Debug, Clone)]
pub struct PowerNormalize<T: Scalar> {
    pub power: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> PowerNormalize<T> {
    pub fn new(power: f64) -> Self {
        Self { power, cache: None }
    }
}

impl<T: Scalar> Layer<T> for PowerNormalize<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let b = x.batch();
        let n = x.len() / b.max(1);
        if n % 2 != 0 {
            return Err(NnError::Shape(format!("power normalization needs an even value count, got {n}")));
        }
        let k = (n / 2) as f64;
        let mut y = x.clone();
        let mut norms = Vec::with_capacity(b);
        for bi in 0..b {
            let norm = x.sample(bi).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(NnError::NonFinite(format!("sample {bi} has norm {norm}; cannot normalize power")));
            }
            let scale = T::of((k * self.power).sqrt() / norm);
            y.sample_mut(bi).iter_mut().for_each(|v| *v = *v * scale);
            norms.push(T::of(norm));
        }
        self.cache = Some((x.clone(), norms));
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (x, norms) = self.cache.take().ok_or(NnError::NoForward("power_normalize"))?;
        x.same_shape(grad_out)?;
        let n = x.len() / x.batch().max(1);
        let amp = T::of(((n / 2) as f64 * self.power).sqrt());
        let mut grad_in = grad_out.clone();
        for (bi, &norm) in norms.iter().enumerate() {
            let xs = x.sample(bi);
            let gs = grad_out.sample(bi);
            let xg: T = xs.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            let coeff = xg / (norm * norm);
            grad_in
                .sample_mut(bi)
                .iter_mut()
                .zip(xs.iter().zip(gs))
                .for_each(|(out, (&xv, &gv))| *out = amp / norm * (gv - xv * coeff));
        }
        Ok(grad_in)
    }
}

/// Squared-error loss summed per sample and averaged over the batch:
/// `(1/N)·Σᵢ‖xᵢ − x̂ᵢ‖²`. Returns the loss and its gradient w.r.t. `x̂`.
pub fn mse_loss<T: Scalar>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    target.same_shape(prediction)?;
    let n = target.batch().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(prediction.shape());
    let scale = T::of(2.0 / n);
    for ((g, &t), &p) in grad.data_mut().iter_mut().zip(target.data()).zip(prediction.data()) {
        let d = p - t;
        loss += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((loss / n, grad))
}
