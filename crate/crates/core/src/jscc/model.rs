use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::blocks::{Attention, ResidualBlock, Stage};
use super::config::{parameter_report, ArchitectureConfig, AttentionConfig, ChannelContext, ParameterReport};
use super::JsccError;
use crate::channel::{features_to_symbols, symbols_to_features, ChannelLayer, ChannelRealization, SymbolVector};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::{Conv2d, ConvTranspose2d, Layer, NnError, PRelu, PowerNormalize, Scalar, Tensor};
use crate::rng::{stream_id, stream_rng};

const FORMAT: &str = "leo-jscc-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// No attention; one model per channel condition.
    Baseline,
    /// Attention conditioned on the channel context.
    Adaptive,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Adaptive => "adaptive",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = JsccError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "adaptive" => Ok(Self::Adaptive),
            other => Err(JsccError::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub split_hash: String,
}

fn stages<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchitectureConfig,
    attn: &AttentionConfig,
    transpose: bool,
    rng: &mut R,
) -> Vec<Stage<T>> {
    let f = arch.filters;
    let strides: Vec<usize> =
        if transpose { arch.strides.iter().rev().copied().collect() } else { arch.strides.clone() };
    let mut in_ch = if transpose { f } else { arch.input_shape[0] };
    strides
        .into_iter()
        .map(|s| {
            let block = ResidualBlock::new(transpose, in_ch, f, arch.kernel, s, rng);
            in_ch = f;
            let attention = attn.enabled.then(|| Attention::new(f, attn.context_dim(), attn.hidden_for(f), rng));
            Stage { block, attention }
        })
        .collect()
}

fn set_stage_context<T: Scalar>(stages: &mut [Stage<T>], ctx: Option<&Tensor<T>>) {
    for a in stages.iter_mut().filter_map(|s| s.attention.as_mut()) {
        a.set_context(ctx.cloned());
    }
}

/// Residual stages, a `c`-filter convolution with PReLU, and power
/// normalization. Output `(batch, c, H', W')`.
#[derive(Debug, Clone)]
pub struct Encoder<T: Scalar> {
    pub stages: Vec<Stage<T>>,
    pub head: Conv2d<T>,
    pub head_act: PRelu<T>,
    pub norm: PowerNormalize<T>,
}

impl<T: Scalar> Encoder<T> {
    /// Everything up to, but excluding, power normalization.
    pub fn features(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.forward(&h)?;
        }
        let h = self.head.forward(&h)?;
        self.head_act.forward(&h)
    }
}

impl<T: Scalar> Layer<T> for Encoder<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let h = self.features(x)?;
        self.norm.forward(&h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.norm.backward(grad_out)?;
        let g = self.head_act.backward(&g)?;
        let mut g = self.head.backward(&g)?;
        for s in self.stages.iter_mut().rev() {
            g = s.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p: Vec<&Tensor<T>> = self.stages.iter().flat_map(|s| s.params()).collect();
        p.extend(self.head.params());
        p.extend(self.head_act.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p: Vec<&mut Tensor<T>> = self.stages.iter_mut().flat_map(|s| s.params_mut()).collect();
        p.extend(self.head.params_mut());
        p.extend(self.head_act.params_mut());
        p
    }
}

/// Transposed convolution, residual transpose stages, and a transposed
/// convolution to the image bands followed by PReLU. The output is raw;
/// [`JsccModel::decode`] clamps it into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Decoder<T: Scalar> {
    pub stem: ConvTranspose2d<T>,
    pub stages: Vec<Stage<T>>,
    pub tail: ConvTranspose2d<T>,
    pub tail_act: PRelu<T>,
}

impl<T: Scalar> Layer<T> for Decoder<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut h = self.stem.forward(x)?;
        for s in &mut self.stages {
            h = s.forward(&h)?;
        }
        let h = self.tail.forward(&h)?;
        self.tail_act.forward(&h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.tail_act.backward(grad_out)?;
        let mut g = self.tail.backward(&g)?;
        for s in self.stages.iter_mut().rev() {
            g = s.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.stem.params();
        p.extend(self.stages.iter().flat_map(|s| s.params()));
        p.extend(self.tail.params());
        p.extend(self.tail_act.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.stem.params_mut();
        p.extend(self.stages.iter_mut().flat_map(|s| s.params_mut()));
        p.extend(self.tail.params_mut());
        p.extend(self.tail_act.params_mut());
        p
    }
}

/// Encoder/decoder pair with its configuration.
///
/// Forward passes cache activations, so encoding needs `&mut self`; clone
/// the model to encode from several threads.
#[derive(Debug, Clone)]
pub struct JsccModel<T: Scalar> {
    pub architecture: ArchitectureConfig,
    pub attention: AttentionConfig,
    pub metadata: TrainingMetadata,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Scalar> JsccModel<T> {
    pub fn new(arch: ArchitectureConfig, attention: AttentionConfig, seed: u64) -> Result<Self, JsccError> {
        arch.validate()?;
        attention.validate()?;
        let mut rng = stream_rng(seed, stream_id(&[0x696e_6974]));
        let f = arch.filters;
        let c = arch.channel_filters;
        let bands = arch.input_shape[0];
        let enc_stages = stages(&arch, &attention, false, &mut rng);
        let encoder = Encoder {
            stages: enc_stages,
            head: Conv2d::new(f, c, arch.kernel, 1, &mut rng),
            head_act: PRelu::new(c),
            norm: PowerNormalize::new(arch.power),
        };
        let stem = ConvTranspose2d::new(c, f, arch.kernel, 1, &mut rng);
        let dec_stages = stages(&arch, &attention, true, &mut rng);
        let decoder = Decoder {
            stem,
            stages: dec_stages,
            tail: ConvTranspose2d::new(f, bands, arch.kernel, 1, &mut rng),
            tail_act: PRelu::new(bands),
        };
        Ok(Self { architecture: arch, attention, metadata: TrainingMetadata { seed, ..Default::default() }, encoder, decoder })
    }

    pub fn kind(&self) -> ModelKind {
        if self.attention.enabled {
            ModelKind::Adaptive
        } else {
            ModelKind::Baseline
        }
    }

    /// Sets the attention inputs: one context per batch item, or a single
    /// one for the whole batch. Baseline models ignore it.
    pub fn set_context(&mut self, ctx: Option<&[ChannelContext]>) -> Result<(), JsccError> {
        if !self.attention.enabled {
            return Ok(());
        }
        let ctx = match ctx {
            Some(c) if !c.is_empty() => c,
            _ => return Err(JsccError::MissingContext),
        };
        let t = ChannelContext::batch_tensor::<T>(ctx, &self.attention)?;
        set_stage_context(&mut self.encoder.stages, Some(&t));
        set_stage_context(&mut self.decoder.stages, Some(&t));
        Ok(())
    }

    fn check_images(&self, x: &Tensor<T>) -> Result<usize, JsccError> {
        let (b, c, h, w) = x.dims4()?;
        if [c, h, w] != self.architecture.input_shape {
            return Err(JsccError::Input(format!(
                "model expects images {:?}, got {:?}",
                self.architecture.input_shape,
                [c, h, w]
            )));
        }
        if let Some(i) = x.data().iter().position(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
            return Err(JsccError::Input(format!("pixel {i} = {:?} outside [0, 1]", x.data()[i])));
        }
        Ok(b)
    }

    /// Power-normalized channel symbols, one vector per image. The final
    /// scaling runs in `f64` so the power constraint holds to rounding.
    pub fn encode(&mut self, x: &Tensor<T>, ctx: Option<&[ChannelContext]>) -> Result<Vec<SymbolVector>, JsccError> {
        let b = self.check_images(x)?;
        self.set_context(ctx)?;
        let feats = self.encoder.features(x)?;
        let c = self.architecture.channel_filters;
        let k = self.architecture.symbols() as f64;
        (0..b)
            .map(|i| {
                let mut z = features_to_symbols(feats.sample(i), c);
                let norm = z.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(JsccError::Nn(NnError::NonFinite(format!("image {i} encodes to norm {norm}"))));
                }
                let scale = (k * self.architecture.power).sqrt() / norm;
                z.symbols.iter_mut().for_each(|s| *s *= scale);
                Ok(z)
            })
            .collect()
    }

    /// Latent tensor `(batch, c, H', W')` holding the given symbols.
    pub fn symbols_to_latent(&self, z: &[SymbolVector]) -> Result<Tensor<T>, JsccError> {
        let [c, h, w] = self.architecture.latent_shape();
        let k = self.architecture.symbols();
        let mut t = Tensor::zeros(&[z.len(), c, h, w]);
        for (i, zi) in z.iter().enumerate() {
            if zi.len() != k {
                return Err(JsccError::Input(format!("vector {i} has {} symbols, model uses {k}", zi.len())));
            }
            symbols_to_features(zi, c, t.sample_mut(i));
        }
        Ok(t)
    }

    /// Reconstructed images clamped into `[0, 1]`.
    pub fn decode(&mut self, z: &[SymbolVector], ctx: Option<&[ChannelContext]>) -> Result<Tensor<T>, JsccError> {
        if z.is_empty() {
            return Err(JsccError::Input("no symbol vectors to decode".into()));
        }
        let latent = self.symbols_to_latent(z)?;
        self.set_context(ctx)?;
        let mut y = self.decoder.forward(&latent)?;
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()).min(T::one()));
        Ok(y)
    }

    /// Encode, pass through fixed channel realizations, decode.
    pub fn reconstruct(
        &mut self,
        x: &Tensor<T>,
        realizations: &[ChannelRealization],
        ctx: Option<&[ChannelContext]>,
    ) -> Result<Tensor<T>, JsccError> {
        let z = self.encode(x, ctx)?;
        if realizations.len() != z.len() {
            return Err(JsccError::Input(format!("{} realizations for {} images", realizations.len(), z.len())));
        }
        let received = z.iter().zip(realizations).map(|(zi, r)| r.apply(zi)).collect::<Result<Vec<_>, _>>()?;
        self.decode(&received, ctx)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    /// Parameter counts taken from the allocated tensors.
    pub fn parameter_report(&self) -> ParameterReport {
        let attention: usize = self
            .encoder
            .stages
            .iter()
            .chain(&self.decoder.stages)
            .filter_map(|s| s.attention.as_ref())
            .map(|a| a.param_count())
            .sum();
        let enc = self.encoder.param_count();
        let dec = self.decoder.param_count();
        let total = enc + dec;
        let r = ParameterReport {
            encoder: enc - self.encoder.stages.iter().filter_map(|s| s.attention.as_ref()).map(|a| a.param_count()).sum::<usize>(),
            decoder: dec - self.decoder.stages.iter().filter_map(|s| s.attention.as_ref()).map(|a| a.param_count()).sum::<usize>(),
            attention,
            total,
            attention_ratio: if total == 0 { 0.0 } else { attention as f64 / total as f64 },
        };
        debug_assert_eq!(r, parameter_report(&self.architecture, &self.attention));
        r
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), JsccError> {
        let header = json!({
            "format": FORMAT,
            "architecture": self.architecture,
            "attention": self.attention,
            "metadata": self.metadata,
        });
        let params: Vec<Tensor<f32>> = self.params().iter().map(|p| p.cast::<f32>()).collect();
        write_checkpoint(out, &header, &params.iter().collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), JsccError> {
        let mut w = BufWriter::new(File::create(path).map_err(NnError::Io)?);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(NnError::Io)?;
        Ok(())
    }

    pub fn read_checkpoint<R: std::io::BufRead>(input: R) -> Result<Self, JsccError> {
        let (header, tensors) = read_checkpoint(input)?;
        let bad = |m: String| JsccError::Nn(NnError::Checkpoint(m));
        if header.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(bad(format!("header format is not {FORMAT:?}")));
        }
        let field = |name: &str| header.get(name).cloned().ok_or_else(|| bad(format!("header lacks {name:?}")));
        let arch: ArchitectureConfig = serde_json::from_value(field("architecture")?).map_err(|e| bad(e.to_string()))?;
        let attention: AttentionConfig = serde_json::from_value(field("attention")?).map_err(|e| bad(e.to_string()))?;
        let metadata: TrainingMetadata = serde_json::from_value(field("metadata")?).map_err(|e| bad(e.to_string()))?;
        let mut model = Self::new(arch, attention, 0)?;
        model.metadata = metadata;
        let mut params = model.params_mut();
        if params.len() != tensors.len() {
            return Err(bad(format!("checkpoint holds {} tensors, architecture needs {}", tensors.len(), params.len())));
        }
        for (i, (p, t)) in params.iter_mut().zip(&tensors).enumerate() {
            if p.shape() != t.shape() {
                return Err(bad(format!("tensor {i} has shape {:?}, expected {:?}", t.shape(), p.shape())));
            }
            p.data_mut().iter_mut().zip(t.data()).for_each(|(d, &s)| *d = T::of(f64::from(s)));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, JsccError> {
        Self::read_checkpoint(BufReader::new(File::open(path).map_err(NnError::Io)?))
    }
}

/// Encoder, channel layer and decoder as one differentiable stage, used for
/// training and gradient checks. The context must already be set on the
/// model.
#[derive(Debug, Clone)]
pub struct EndToEnd<T: Scalar> {
    pub model: JsccModel<T>,
    pub channel: ChannelLayer,
}

impl<T: Scalar> Layer<T> for EndToEnd<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let z = self.model.encoder.forward(x)?;
        let z = self.channel.forward(&z)?;
        self.model.decoder.forward(&z)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.model.decoder.backward(grad_out)?;
        let g = self.channel.backward(&g)?;
        self.model.encoder.backward(&g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.model.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::ChannelState;
    use crate::nn::gradient_check;

    fn toy_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            num_blocks: 2,
            filters: 4,
            strides: vec![2, 1],
            channel_filters: 2,
            input_shape: [2, 4, 4],
            ..Default::default()
        }
    }

    fn images<T: Scalar>(arch: &ArchitectureConfig, batch: usize, seed: u64) -> Tensor<T> {
        let mut rng = stream_rng(seed, 11);
        let mut shape = vec![batch];
        shape.extend(arch.input_shape);
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(|_| T::of(rng.random_range(0.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn encode_power_and_shapes() {
        let arch = ArchitectureConfig::default();
        let mut m = JsccModel::<f32>::new(arch.clone(), AttentionConfig::default(), 1).unwrap();
        let x = images::<f32>(&arch, 3, 0);
        let ctx = [ChannelContext::new(40.0, ChannelState::Los)];
        let z = m.encode(&x, Some(&ctx)).unwrap();
        assert_eq!(z.len(), 3);
        for zi in &z {
            assert_eq!(zi.len(), 32);
            assert!((zi.average_power() - 1.0).abs() < 1e-9);
        }
        let y = m.decode(&z, Some(&ctx)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn baseline_ignores_context() {
        let arch = toy_arch();
        let mut m = JsccModel::<f64>::new(arch.clone(), AttentionConfig::disabled(), 2).unwrap();
        let x = images::<f64>(&arch, 2, 1);
        let a = m.encode(&x, Some(&[ChannelContext::new(35.0, ChannelState::Los)])).unwrap();
        let b = m.encode(&x, Some(&[ChannelContext::new(45.0, ChannelState::DeepShadow)])).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.encode(&x, None).unwrap(), a);
    }

    #[test]
    fn adaptive_needs_and_uses_context() {
        let arch = toy_arch();
        let mut m = JsccModel::<f64>::new(arch.clone(), AttentionConfig::default(), 3).unwrap();
        let x = images::<f64>(&arch, 1, 2);
        assert!(matches!(m.encode(&x, None), Err(JsccError::MissingContext)));
        let a = m.encode(&x, Some(&[ChannelContext::new(35.0, ChannelState::Los)])).unwrap();
        let b = m.encode(&x, Some(&[ChannelContext::new(45.0, ChannelState::DeepShadow)])).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_bad_images() {
        let arch = toy_arch();
        let mut m = JsccModel::<f64>::new(arch.clone(), AttentionConfig::disabled(), 2).unwrap();
        let mut x = images::<f64>(&arch, 1, 1);
        x.data_mut()[3] = 1.5;
        assert!(matches!(m.encode(&x, None), Err(JsccError::Input(_))));
        assert!(m.encode(&Tensor::zeros(&[1, 3, 4, 4]), None).is_err());
    }

    #[test]
    fn allocated_counts_match_plan() {
        for attn in [AttentionConfig::default(), AttentionConfig::disabled()] {
            let m = JsccModel::<f32>::new(ArchitectureConfig::default(), attn.clone(), 0).unwrap();
            let r = m.parameter_report();
            assert_eq!(r, parameter_report(&ArchitectureConfig::default(), &attn));
            assert_eq!(r.total, m.params().iter().map(|p| p.len()).sum::<usize>());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let arch = ArchitectureConfig::default();
        let mut m = JsccModel::<f32>::new(arch.clone(), AttentionConfig::default(), 7).unwrap();
        m.metadata.epochs = 12;
        m.metadata.split_hash = "abc".into();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let mut back = JsccModel::<f32>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.metadata, m.metadata);
        let x = images::<f32>(&arch, 2, 5);
        let ctx = [ChannelContext::new(38.0, ChannelState::Shadow)];
        assert_eq!(m.encode(&x, Some(&ctx)).unwrap(), back.encode(&x, Some(&ctx)).unwrap());
        let mut again = Vec::new();
        back.write_checkpoint(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn checkpoint_rejects_foreign_header() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &json!({"format": "other"}), &[]).unwrap();
        assert!(JsccModel::<f32>::read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = JsccModel::<f32>::new(toy_arch(), AttentionConfig::default(), 5).unwrap();
        let b = JsccModel::<f32>::new(toy_arch(), AttentionConfig::default(), 5).unwrap();
        let c = JsccModel::<f32>::new(toy_arch(), AttentionConfig::default(), 6).unwrap();
        let flat = |m: &JsccModel<f32>| m.params().iter().flat_map(|p| p.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn end_to_end_gradient_one_block() {
        let arch = ArchitectureConfig {
            num_blocks: 1,
            filters: 3,
            strides: vec![2],
            channel_filters: 2,
            input_shape: [2, 4, 4],
            ..Default::default()
        };
        let mut model = JsccModel::<f64>::new(arch.clone(), AttentionConfig::default(), 9).unwrap();
        model
            .set_context(Some(&[ChannelContext::new(37.0, ChannelState::Los), ChannelContext::new(42.0, ChannelState::Shadow)]))
            .unwrap();
        let k = arch.symbols();
        let mut net = EndToEnd { model, channel: ChannelLayer::new(vec![ChannelRealization::identity(k); 2]) };
        let r = gradient_check(&mut net, &images::<f64>(&arch, 2, 3), 1e-5, 4).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
