use serde::{Deserialize, Serialize};

use super::JsccError;
use crate::fading::{ChannelState, LooParams};
use crate::nn::{LayerSpec, Scalar, Tensor};

/// Topology of the encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub num_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Encoder stride per block; the decoder applies them in reverse.
    pub strides: Vec<usize>,
    /// Filters `c` of the last encoder convolution; `c/2` complex maps.
    pub channel_filters: usize,
    /// `(bands, height, width)`.
    pub input_shape: [usize; 3],
    /// Average symbol power `P`.
    pub power: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            filters: 16,
            kernel: 3,
            strides: vec![2, 2, 1, 1],
            channel_filters: 4,
            input_shape: [3, 16, 16],
            power: 1.0,
        }
    }
}

impl ArchitectureConfig {
    /// Four blocks of 256 filters on 12-band 120×120 patches. Used for
    /// parameter accounting; far too large to train at desk scale.
    pub fn paper_scale() -> Self {
        Self { filters: 256, channel_filters: 16, input_shape: [12, 120, 120], ..Self::default() }
    }

    pub fn downsampling(&self) -> usize {
        self.strides.iter().product()
    }

    /// `(c, H', W')` of one latent sample.
    pub fn latent_shape(&self) -> [usize; 3] {
        let s = self.downsampling().max(1);
        [self.channel_filters, self.input_shape[1] / s, self.input_shape[2] / s]
    }

    /// Complex channel symbols `k` per image.
    pub fn symbols(&self) -> usize {
        let [c, h, w] = self.latent_shape();
        c * h * w / 2
    }

    /// Real source values `n` per image.
    pub fn source_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn compression_ratio(&self) -> f64 {
        self.symbols() as f64 / self.source_dim() as f64
    }

    pub fn validate(&self) -> Result<(), JsccError> {
        let err = |m: String| Err(JsccError::Config(m));
        if self.num_blocks == 0 || self.strides.len() != self.num_blocks {
            return err(format!("{} strides for {} blocks", self.strides.len(), self.num_blocks));
        }
        if self.strides.contains(&0) {
            return err("strides must be >= 1".into());
        }
        if self.filters == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return err(format!("need filters >= 1 and an odd kernel, got {} and {}", self.filters, self.kernel));
        }
        if self.channel_filters == 0 || self.channel_filters % 2 != 0 {
            return err(format!("channel filters must be even and positive, got {}", self.channel_filters));
        }
        let [bands, h, w] = self.input_shape;
        if bands == 0 || h == 0 || w == 0 {
            return err(format!("empty input shape {:?}", self.input_shape));
        }
        let s = self.downsampling();
        if h % s != 0 || w % s != 0 {
            return err(format!("strides {:?} (total {s}) do not divide input {h}x{w}", self.strides));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return err(format!("power must be positive, got {}", self.power));
        }
        let ratio = self.compression_ratio();
        if !(ratio > 0.0 && ratio < 1.0) {
            return err(format!("compression ratio {ratio} outside (0, 1)"));
        }
        Ok(())
    }
}

/// Affine range `[lo, hi]` mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// Clamped into `[0, 1]`; `−∞` maps to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if v == f64::NEG_INFINITY {
            return 0.0;
        }
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub enabled: bool,
    /// Append `(α, ψ, MP)` to the SNR and one-hot state inputs.
    pub include_loo: bool,
    /// `None` means `max(channels/16, 4)`.
    pub hidden_dim: Option<usize>,
    pub snr_range: Range,
    pub alpha_range: Range,
    pub psi_range: Range,
    pub mp_range: Range,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            include_loo: false,
            hidden_dim: None,
            snr_range: Range::new(35.0, 45.0),
            alpha_range: Range::new(-25.0, 5.0),
            psi_range: Range::new(0.0, 10.0),
            mp_range: Range::new(-40.0, 0.0),
        }
    }
}

impl AttentionConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn context_dim(&self) -> usize {
        if self.include_loo {
            7
        } else {
            4
        }
    }

    pub fn hidden_for(&self, channels: usize) -> usize {
        self.hidden_dim.unwrap_or((channels / 16).max(4))
    }

    pub fn validate(&self) -> Result<(), JsccError> {
        if self.hidden_dim == Some(0) {
            return Err(JsccError::Config("attention hidden_dim must be >= 1".into()));
        }
        for (name, r) in [("snr", self.snr_range), ("alpha", self.alpha_range), ("psi", self.psi_range), ("mp", self.mp_range)] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.hi > r.lo) {
                return Err(JsccError::Config(format!("{name} range [{}, {}] is empty", r.lo, r.hi)));
            }
        }
        Ok(())
    }
}

/// Channel condition the attention modules are told about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelContext {
    pub snr_db: f64,
    pub state: ChannelState,
    pub loo: Option<LooParams>,
}

impl ChannelContext {
    pub fn new(snr_db: f64, state: ChannelState) -> Self {
        Self { snr_db, state, loo: None }
    }

    /// Normalized network input: `[snr, one_hot(state), (α, ψ, MP)?]`.
    pub fn features(&self, cfg: &AttentionConfig) -> Result<Vec<f64>, JsccError> {
        let mut v = vec![cfg.snr_range.normalize(self.snr_db)];
        v.extend(self.state.one_hot());
        if cfg.include_loo {
            let p = self.loo.ok_or_else(|| JsccError::Config("context lacks Loo parameters".into()))?;
            v.extend([cfg.alpha_range.normalize(p.alpha_db), cfg.psi_range.normalize(p.psi_db), cfg.mp_range.normalize(p.mp_db)]);
        }
        Ok(v)
    }

    /// One row per context, `(n, context_dim)`.
    pub fn batch_tensor<T: Scalar>(ctxs: &[ChannelContext], cfg: &AttentionConfig) -> Result<Tensor<T>, JsccError> {
        let mut data = Vec::with_capacity(ctxs.len() * cfg.context_dim());
        for c in ctxs {
            data.extend(c.features(cfg)?.into_iter().map(T::of));
        }
        Ok(Tensor::from_vec(&[ctxs.len(), cfg.context_dim()], data)?)
    }
}

impl std::str::FromStr for ChannelContext {
    type Err = JsccError;

    /// `snr=<dB>,state=<name>`, keys in any order.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut snr = None;
        let mut state = None;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| JsccError::Config(format!("expected key=value, got {part:?}")))?;
            match k.trim() {
                "snr" => snr = Some(v.trim().parse::<f64>().map_err(|e| JsccError::Config(format!("snr: {e}")))?),
                "state" => state = Some(v.trim().parse::<ChannelState>().map_err(|e| JsccError::Config(e.to_string()))?),
                other => return Err(JsccError::Config(format!("unknown context key {other:?}"))),
            }
        }
        Ok(Self::new(
            snr.ok_or_else(|| JsccError::Config("context needs snr=".into()))?,
            state.ok_or_else(|| JsccError::Config("context needs state=".into()))?,
        ))
    }
}

/// Which part of the model a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Encoder,
    Decoder,
    Attention,
}

/// Layer list of a configuration in parameter order, without allocating
/// any weights.
pub fn layer_plan(arch: &ArchitectureConfig, attn: &AttentionConfig) -> Vec<(Part, LayerSpec)> {
    let f = arch.filters;
    let k = arch.kernel;
    let bands = arch.input_shape[0];
    let c = arch.channel_filters;
    let mut plan = Vec::new();
    let block = |plan: &mut Vec<(Part, LayerSpec)>, part, transpose: bool, in_ch: usize, s: usize| {
        let conv = |in_ch, filters, kernel, stride| {
            if transpose {
                LayerSpec::ConvTranspose2d { in_ch, filters, kernel, stride }
            } else {
                LayerSpec::Conv2d { in_ch, filters, kernel, stride }
            }
        };
        plan.push((part, conv(in_ch, f, k, s)));
        plan.push((part, LayerSpec::PRelu { channels: f }));
        plan.push((part, conv(f, f, k, 1)));
        if in_ch != f || s != 1 {
            plan.push((part, conv(in_ch, f, 1, s)));
        }
        plan.push((part, LayerSpec::PRelu { channels: f }));
        if attn.enabled {
            let hidden = attn.hidden_for(f);
            plan.push((Part::Attention, LayerSpec::Dense { inputs: f + attn.context_dim(), units: hidden }));
            plan.push((Part::Attention, LayerSpec::Dense { inputs: hidden, units: f }));
        }
    };
    let mut in_ch = bands;
    for &s in &arch.strides {
        block(&mut plan, Part::Encoder, false, in_ch, s);
        in_ch = f;
    }
    plan.push((Part::Encoder, LayerSpec::Conv2d { in_ch: f, filters: c, kernel: k, stride: 1 }));
    plan.push((Part::Encoder, LayerSpec::PRelu { channels: c }));
    plan.push((Part::Encoder, LayerSpec::PowerNormalize));

    plan.push((Part::Decoder, LayerSpec::ConvTranspose2d { in_ch: c, filters: f, kernel: k, stride: 1 }));
    for &s in arch.strides.iter().rev() {
        block(&mut plan, Part::Decoder, true, f, s);
    }
    plan.push((Part::Decoder, LayerSpec::ConvTranspose2d { in_ch: f, filters: bands, kernel: k, stride: 1 }));
    plan.push((Part::Decoder, LayerSpec::PRelu { channels: bands }));
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub encoder: usize,
    pub decoder: usize,
    pub attention: usize,
    pub total: usize,
    /// `attention / total`.
    pub attention_ratio: f64,
}

pub fn parameter_report(arch: &ArchitectureConfig, attn: &AttentionConfig) -> ParameterReport {
    let mut r = ParameterReport { encoder: 0, decoder: 0, attention: 0, total: 0, attention_ratio: 0.0 };
    for (part, spec) in layer_plan(arch, attn) {
        let n = spec.param_count();
        match part {
            Part::Encoder => r.encoder += n,
            Part::Decoder => r.decoder += n,
            Part::Attention => r.attention += n,
        }
        r.total += n;
    }
    r.attention_ratio = if r.total == 0 { 0.0 } else { r.attention as f64 / r.total as f64 };
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_arithmetic() {
        let a = ArchitectureConfig::default();
        a.validate().unwrap();
        assert_eq!(a.source_dim(), 768);
        assert_eq!(a.latent_shape(), [4, 4, 4]);
        assert_eq!(a.symbols(), 32);
        assert!((a.compression_ratio() - 32.0 / 768.0).abs() < 1e-15);
        for (c, ratio) in [(16, 128.0 / 768.0), (32, 256.0 / 768.0)] {
            let a = ArchitectureConfig { channel_filters: c, ..ArchitectureConfig::default() };
            assert!((a.compression_ratio() - ratio).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_architectures() {
        let bad = [
            ArchitectureConfig { channel_filters: 3, ..Default::default() },
            ArchitectureConfig { strides: vec![2, 2, 2], ..Default::default() },
            ArchitectureConfig { input_shape: [3, 18, 16], ..Default::default() },
            ArchitectureConfig { kernel: 2, ..Default::default() },
            ArchitectureConfig { channel_filters: 128, ..Default::default() },
        ];
        for a in bad {
            assert!(a.validate().is_err(), "{a:?}");
        }
    }

    #[test]
    fn one_block_hand_count() {
        let arch = ArchitectureConfig {
            num_blocks: 1,
            filters: 8,
            strides: vec![2],
            channel_filters: 4,
            input_shape: [3, 8, 8],
            ..Default::default()
        };
        let attn = AttentionConfig { hidden_dim: Some(4), ..Default::default() };
        let r = parameter_report(&arch, &attn);
        // encoder: conv 3→8 (224), prelu 8, conv 8→8 (584), skip 1×1 3→8 (32), prelu 8, head conv 8→4 (292), prelu 4
        assert_eq!(r.encoder, 224 + 8 + 584 + 32 + 8 + 292 + 4);
        // decoder: convT 4→8 (296), block 584 + 8 + 584 + skip 72 + 8, tail convT 8→3 (219), prelu 3
        assert_eq!(r.decoder, 296 + 584 + 8 + 584 + 72 + 8 + 219 + 3);
        // two modules of dense 12→4 (52) and dense 4→8 (40)
        assert_eq!(r.attention, 2 * (52 + 40));
        assert_eq!(r.total, 3110);
        assert_eq!(parameter_report(&arch, &AttentionConfig::disabled()).attention_ratio, 0.0);
    }

    #[test]
    fn paper_scale_attention_share() {
        let r = parameter_report(&ArchitectureConfig::paper_scale(), &AttentionConfig { hidden_dim: Some(16), ..Default::default() });
        assert!(r.attention_ratio < 0.01, "{r:?}");
        assert!(r.attention_ratio > 0.0);
    }

    #[test]
    fn context_features() {
        let cfg = AttentionConfig::default();
        let ctx = ChannelContext::new(40.0, ChannelState::Shadow);
        assert_eq!(ctx.features(&cfg).unwrap(), vec![0.5, 0.0, 1.0, 0.0]);
        assert_eq!(ChannelContext::new(100.0, ChannelState::Los).features(&cfg).unwrap()[0], 1.0);
        let with_loo = AttentionConfig { include_loo: true, ..cfg };
        assert!(ctx.features(&with_loo).is_err());
        let ctx = ChannelContext { loo: Some(LooParams { alpha_db: -10.0, psi_db: 5.0, mp_db: f64::NEG_INFINITY }), ..ctx };
        assert_eq!(ctx.features(&with_loo).unwrap(), vec![0.5, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn context_parse() {
        let c: ChannelContext = "snr=37.5,state=deep_shadow".parse().unwrap();
        assert_eq!(c, ChannelContext::new(37.5, ChannelState::DeepShadow));
        assert!("snr=1".parse::<ChannelContext>().is_err());
        assert!("snr=x,state=los".parse::<ChannelContext>().is_err());
        assert!("snr=1,state=los,foo=2".parse::<ChannelContext>().is_err());
    }
}
