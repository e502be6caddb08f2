//! The fading + noise channel `ẑ = z·h + n` and its non-trainable layer.
//!
//! Noise convention: `σ² = P_sig / (2·10^(SNR/10))` and
//! `n = σ·(N(0,1) + j·N(0,1))`, so each of the real and imaginary noise
//! components has variance σ² and the total noise power is
//! `2σ² = P_sig·10^(−SNR/10)`.
//!
//! Symbol naming: `k` is the number of complex channel symbols and `n` the
//! noise vector, not Boltzmann's constant or the source dimension.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fading::{sample_loo_one, DirectPhase, FadingError, LooParams};
use crate::linkbudget::noise_sigma_squared;
use crate::nn::{Layer, NnError, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid symbol vector: {0}")]
    Symbols(String),
    #[error("invalid channel parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Fading(#[from] FadingError),
}

/// `k` complex channel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    pub symbols: Vec<Complex64>,
}

impl SymbolVector {
    pub fn new(symbols: Vec<Complex64>) -> Result<Self, ChannelError> {
        let z = Self { symbols };
        z.validate()?;
        Ok(z)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.symbols.is_empty() {
            return Err(ChannelError::Symbols("empty".into()));
        }
        if let Some(i) = self.symbols.iter().position(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(ChannelError::Symbols(format!("symbol {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Mean of `|z_t|²`.
    pub fn average_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    /// Independent gain per symbol.
    #[default]
    PerSymbol,
    /// One gain shared by the whole codeword.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub mode: FadingMode,
    /// Normalized transmit power `P_sig` the SNR is referred to.
    pub signal_power: f64,
    pub direct_phase: DirectPhase,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { mode: FadingMode::PerSymbol, signal_power: 1.0, direct_phase: DirectPhase::Zero }
    }
}

/// One draw of the channel: gains and the noise samples added after them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Length `k`, or length 1 in block mode.
    pub gains: Vec<Complex64>,
    pub noise_sigma: f64,
    pub noise: Vec<Complex64>,
}

impl ChannelRealization {
    /// `h ≡ 1`, no noise.
    pub fn identity(k: usize) -> Self {
        Self { gains: vec![Complex64::new(1.0, 0.0)], noise_sigma: 0.0, noise: vec![Complex64::new(0.0, 0.0); k] }
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    pub fn gain(&self, t: usize) -> Complex64 {
        if self.gains.len() == 1 {
            self.gains[0]
        } else {
            self.gains[t]
        }
    }

    pub fn apply(&self, z: &SymbolVector) -> Result<SymbolVector, ChannelError> {
        if z.len() != self.noise.len() || (self.gains.len() != 1 && self.gains.len() != z.len()) {
            return Err(ChannelError::Symbols(format!(
                "realization covers {} symbols, vector has {}",
                self.noise.len(),
                z.len()
            )));
        }
        Ok(SymbolVector {
            symbols: z.symbols.iter().enumerate().map(|(t, &s)| s * self.gain(t) + self.noise[t]).collect(),
        })
    }
}

/// Draws gains (one per symbol, or one in block mode), then `k` noise pairs.
pub fn draw_realization<R: Rng + ?Sized>(
    k: usize,
    state_params: &LooParams,
    snr_db: f64,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    state_params.validate()?;
    if k == 0 {
        return Err(ChannelError::Symbols("empty".into()));
    }
    if !snr_db.is_finite() && snr_db != f64::INFINITY {
        return Err(ChannelError::Parameter(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    if !(cfg.signal_power.is_finite() && cfg.signal_power > 0.0) {
        return Err(ChannelError::Parameter(format!("signal power must be positive, got {}", cfg.signal_power)));
    }
    let internal = state_params.to_internal();
    let n_gains = match cfg.mode {
        FadingMode::PerSymbol => k,
        FadingMode::Block => 1,
    };
    let gains = (0..n_gains).map(|_| sample_loo_one(state_params, &internal, cfg.direct_phase, rng).gain()).collect();
    let noise_sigma = noise_sigma_squared(snr_db, cfg.signal_power).sqrt();
    let noise = (0..k)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(noise_sigma * re, noise_sigma * im)
        })
        .collect();
    Ok(ChannelRealization { gains, noise_sigma, noise })
}

/// Passes `z` through a fresh channel draw. The input is left untouched.
pub fn transmit<R: Rng + ?Sized>(
    z: &SymbolVector,
    state_params: &LooParams,
    snr_db: f64,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<(SymbolVector, ChannelRealization), ChannelError> {
    z.validate()?;
    let real = draw_realization(z.len(), state_params, snr_db, cfg, rng)?;
    let out = real.apply(z)?;
    Ok((out, real))
}

/// Position of complex symbol `t`'s real and imaginary parts within one
/// sample of a `(c, h, w)` feature block: the first `c/2` maps hold real
/// parts, the last `c/2` the matching imaginary parts.
pub fn symbol_layout(channels: usize, plane: usize, t: usize) -> (usize, usize) {
    let half = channels / 2;
    let re = t;
    (re, re + half * plane)
}

/// Reads one sample of a `(c, h, w)` feature block as `k = c·h·w/2` symbols.
pub fn features_to_symbols<T: Scalar>(features: &[T], channels: usize) -> SymbolVector {
    let plane = features.len() / channels;
    let k = features.len() / 2;
    SymbolVector {
        symbols: (0..k)
            .map(|t| {
                let (re, im) = symbol_layout(channels, plane, t);
                Complex64::new(features[re].as_f64(), features[im].as_f64())
            })
            .collect(),
    }
}

pub fn symbols_to_features<T: Scalar>(z: &SymbolVector, channels: usize, out: &mut [T]) {
    let plane = out.len() / channels;
    for (t, s) in z.symbols.iter().enumerate() {
        let (re, im) = symbol_layout(channels, plane, t);
        out[re] = T::of(s.re);
        out[im] = T::of(s.im);
    }
}

/// Non-trainable channel layer over a `(batch, c, h, w)` feature tensor.
///
/// Holds one fixed realization per batch item. Backward treats `h` and `n`
/// as constants: the adjoint of `z ↦ z·h` on real pairs is multiplication by
/// `conj(h)`.
#[derive(Debug, Clone)]
pub struct ChannelLayer {
    pub realizations: Vec<ChannelRealization>,
}

impl ChannelLayer {
    pub fn new(realizations: Vec<ChannelRealization>) -> Self {
        Self { realizations }
    }

    fn check<T: Scalar>(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        let (b, c, h, w) = x.dims4()?;
        if c % 2 != 0 {
            return Err(NnError::Shape(format!("channel layer needs an even channel count, got {c}")));
        }
        if b != self.realizations.len() {
            return Err(NnError::Shape(format!("{} realizations for a batch of {b}", self.realizations.len())));
        }
        let k = c * h * w / 2;
        for (i, r) in self.realizations.iter().enumerate() {
            if r.len() != k || (r.gains.len() != 1 && r.gains.len() != k) {
                return Err(NnError::Shape(format!("realization {i} covers {} symbols, block has {k}", r.len())));
            }
        }
        Ok((c, h * w))
    }
}

impl<T: Scalar> Layer<T> for ChannelLayer {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (c, plane) = self.check(x)?;
        let mut y = x.clone();
        for (b, real) in self.realizations.iter().enumerate() {
            let src = x.sample(b);
            let dst = y.sample_mut(b);
            for t in 0..real.len() {
                let (ri, ii) = symbol_layout(c, plane, t);
                let z = Complex64::new(src[ri].as_f64(), src[ii].as_f64());
                let out = z * real.gain(t) + real.noise[t];
                dst[ri] = T::of(out.re);
                dst[ii] = T::of(out.im);
            }
        }
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (c, plane) = self.check(grad_out)?;
        let mut g = grad_out.clone();
        for (b, real) in self.realizations.iter().enumerate() {
            let src = grad_out.sample(b);
            let dst = g.sample_mut(b);
            for t in 0..real.len() {
                let (ri, ii) = symbol_layout(c, plane, t);
                let gz = Complex64::new(src[ri].as_f64(), src[ii].as_f64()) * real.gain(t).conj();
                dst[ri] = T::of(gz.re);
                dst[ii] = T::of(gz.im);
            }
        }
        Ok(g)
    }
}
