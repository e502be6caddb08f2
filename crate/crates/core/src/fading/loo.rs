//! Loo amplitude statistics: a log-normal direct path plus Rayleigh
//! multipath, parameterized in dB by (α, ψ, MP).

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::f64::consts::{LN_10, PI};

use super::bessel::ln_i0;
use super::quadrature::{gauss_kronrod, integrate, QuadOptions};
use super::FadingError;

/// Loo parameters in the dB domain.
///
/// `mp_db` may be `-inf`, meaning no multipath at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooParams {
    pub alpha_db: f64,
    pub psi_db: f64,
    pub mp_db: f64,
}

impl LooParams {
    pub fn new(alpha_db: f64, psi_db: f64, mp_db: f64) -> Result<Self, FadingError> {
        let p = Self { alpha_db, psi_db, mp_db };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FadingError> {
        if !self.alpha_db.is_finite() || !self.psi_db.is_finite() || self.psi_db < 0.0 {
            return Err(FadingError::InvalidParams(format!(
                "alpha_db must be finite and psi_db finite and >= 0 (got alpha={}, psi={})",
                self.alpha_db, self.psi_db
            )));
        }
        if self.mp_db.is_nan() || self.mp_db == f64::INFINITY {
            return Err(FadingError::InvalidParams(format!("mp_db must be finite or -inf, got {}", self.mp_db)));
        }
        Ok(())
    }

    pub fn to_internal(&self) -> LooInternal {
        loo_to_internal(self)
    }
}

/// Natural-log-domain parameters of the density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LooInternal {
    /// Mean of `ln s` for the direct amplitude `s`.
    pub mu: f64,
    /// Variance of `ln s`.
    pub d0: f64,
    /// Half the average multipath power.
    pub b0: f64,
}

pub fn loo_to_internal(p: &LooParams) -> LooInternal {
    let sqrt_d0 = p.psi_db * LN_10 / 20.0;
    LooInternal { mu: p.alpha_db * LN_10 / 20.0, d0: sqrt_d0 * sqrt_d0, b0: 10f64.powf(p.mp_db / 10.0) / 2.0 }
}

pub fn internal_to_loo(i: &LooInternal) -> LooParams {
    LooParams {
        alpha_db: 20.0 * i.mu / LN_10,
        psi_db: 20.0 * i.d0.sqrt() / LN_10,
        mp_db: 10.0 * (2.0 * i.b0).log10(),
    }
}

/// Below this `d0` the direct path is treated as deterministic (Rice law).
const D0_DEGENERATE: f64 = 1e-14;
/// Quadrature spans `μ ± SPAN_SIGMAS·√d₀` in `ln s`.
const SPAN_SIGMAS: f64 = 8.0;
/// Failure threshold on the quadrature's relative error estimate.
const PDF_MAX_REL_ERROR: f64 = 1e-6;

/// Loo amplitude density `p(r)`.
///
/// Integrates over the direct amplitude `s` in the variable `u = ln s`
/// (so `ds/s = du`), with `I₀(r·s/b₀)` and every exponential folded into a
/// single log-domain exponent.
pub fn loo_pdf(r: f64, p: &LooParams) -> Result<f64, FadingError> {
    p.validate()?;
    if r.is_nan() || r < 0.0 {
        return Err(FadingError::Domain(format!("loo_pdf requires r >= 0, got {r}")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let LooInternal { mu, d0, b0 } = loo_to_internal(p);
    if b0 <= 0.0 && d0 <= D0_DEGENERATE {
        return Err(FadingError::Domain("density is a point mass when psi = 0 and MP = -inf".into()));
    }
    if b0 <= 0.0 {
        // pure log-normal direct path
        let z = r.ln() - mu;
        return Ok((-z * z / (2.0 * d0)).exp() / (r * (2.0 * PI * d0).sqrt()));
    }
    if d0 <= D0_DEGENERATE {
        // deterministic direct path a = e^μ: Rice density
        let a = mu.exp();
        let log_p = r.ln() - b0.ln() - (r * r + a * a) / (2.0 * b0) + ln_i0(r * a / b0);
        return Ok(log_p.exp());
    }

    let log_g = |u: f64| {
        let s = u.exp();
        let z = u - mu;
        -z * z / (2.0 * d0) - (r * r + s * s) / (2.0 * b0) + ln_i0(r * s / b0)
    };
    let sd = d0.sqrt();
    let (lo, hi) = (mu - SPAN_SIGMAS * sd, mu + SPAN_SIGMAS * sd);

    // Scale by the largest exponent seen on a coarse grid (plus the Rice
    // ridge near s = r) so the integrand peaks near one.
    let mut peak = f64::NEG_INFINITY;
    let grid = 256;
    for i in 0..=grid {
        peak = peak.max(log_g(lo + (hi - lo) * i as f64 / grid as f64));
    }
    let lr = r.ln();
    if lr > lo && lr < hi {
        peak = peak.max(log_g(lr));
    }
    if !peak.is_finite() {
        return Ok(0.0);
    }

    let opts = QuadOptions { abs_tol: 1e-15, rel_tol: 1e-10, initial_panels: 32, max_intervals: 6000 };
    let res = integrate(|u| (log_g(u) - peak).exp(), lo, hi, &opts);
    if res.value <= 0.0 {
        return Ok(0.0);
    }
    if res.error > PDF_MAX_REL_ERROR * res.value && res.error > 1e-15 {
        return Err(FadingError::Integration { r, error: res.error / res.value });
    }
    let log_prefactor = r.ln() - b0.ln() - 0.5 * (2.0 * PI * d0).ln();
    Ok((log_prefactor + peak + res.value.ln()).exp())
}

/// Amplitude beyond which the density mass is negligible (< 1e-12).
pub fn default_r_max(p: &LooParams) -> f64 {
    let LooInternal { mu, d0, b0 } = loo_to_internal(p);
    (mu + SPAN_SIGMAS * d0.sqrt()).exp() + 8.0 * b0.sqrt()
}

/// Tabulated CDF obtained by integrating [`loo_pdf`] on a uniform grid.
#[derive(Debug, Clone)]
pub struct LooCdf {
    pub r: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl LooCdf {
    pub fn build(p: &LooParams, r_max: f64, intervals: usize) -> Result<Self, FadingError> {
        let n = intervals.max(1);
        let h = r_max / n as f64;
        let mut r = Vec::with_capacity(n + 1);
        let mut cdf = Vec::with_capacity(n + 1);
        r.push(0.0);
        cdf.push(0.0);
        let mut acc = 0.0;
        let failure = RefCell::new(None);
        for i in 0..n {
            let a = h * i as f64;
            let b = if i + 1 == n { r_max } else { a + h };
            let piece = gauss_kronrod(
                &|x: f64| match loo_pdf(x, p) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                },
                a,
                b,
            );
            acc += piece.value;
            r.push(b);
            cdf.push(acc);
        }
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(Self { r, cdf })
    }

    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().unwrap_or(&0.0)
    }

    /// Linear interpolation between grid points; clamps outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.r.len();
        if x <= self.r[0] {
            return 0.0;
        }
        if x >= self.r[n - 1] {
            return self.cdf[n - 1];
        }
        let h = self.r[1] - self.r[0];
        let i = ((x / h) as usize).min(n - 2);
        let t = (x - self.r[i]) / (self.r[i + 1] - self.r[i]);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Kolmogorov–Smirnov distance to an empirical sample.
    pub fn ks_distance(&self, samples: &[f64]) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
            let f = self.eval(x);
            d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
        })
    }
}

/// Phase convention for the direct component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectPhase {
    #[default]
    Zero,
    Uniform,
}

/// One channel gain split into its two physical contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LooSample {
    pub direct: Complex64,
    pub multipath: Complex64,
}

impl LooSample {
    pub fn gain(&self) -> Complex64 {
        self.direct + self.multipath
    }
}

/// Draws one gain. Consumes, in order: the dB-domain direct amplitude, the
/// direct phase (only for [`DirectPhase::Uniform`]), then the two multipath
/// quadratures.
pub fn sample_loo_one<R: Rng + ?Sized>(p: &LooParams, internal: &LooInternal, phase: DirectPhase, rng: &mut R) -> LooSample {
    let x_db = p.alpha_db + p.psi_db * rng.sample::<f64, _>(StandardNormal);
    let amp = 10f64.powf(x_db / 20.0);
    let direct = match phase {
        DirectPhase::Zero => Complex64::new(amp, 0.0),
        DirectPhase::Uniform => Complex64::from_polar(amp, 2.0 * PI * rng.random::<f64>()),
    };
    let scale = internal.b0.sqrt();
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    LooSample { direct, multipath: Complex64::new(scale * g1, scale * g2) }
}

pub fn sample_loo_components<R: Rng + ?Sized>(
    p: &LooParams,
    count: usize,
    phase: DirectPhase,
    rng: &mut R,
) -> Result<Vec<LooSample>, FadingError> {
    p.validate()?;
    if count == 0 {
        return Err(FadingError::Domain("sample count must be positive".into()));
    }
    let internal = loo_to_internal(p);
    Ok((0..count).map(|_| sample_loo_one(p, &internal, phase, rng)).collect())
}

/// I.i.d. complex Loo gains `h = a·e^{jφ} + √b₀·(g₁ + j·g₂)`.
pub fn sample_loo<R: Rng + ?Sized>(p: &LooParams, count: usize, rng: &mut R) -> Result<Vec<Complex64>, FadingError> {
    sample_loo_with_phase(p, count, DirectPhase::Zero, rng)
}

pub fn sample_loo_with_phase<R: Rng + ?Sized>(
    p: &LooParams,
    count: usize,
    phase: DirectPhase,
    rng: &mut R,
) -> Result<Vec<Complex64>, FadingError> {
    Ok(sample_loo_components(p, count, phase, rng)?.iter().map(LooSample::gain).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn zero_params_convert() {
        let i = loo_to_internal(&LooParams { alpha_db: 0.0, psi_db: 0.0, mp_db: 0.0 });
        assert_eq!(i.mu, 0.0);
        assert_eq!(i.d0, 0.0);
        assert_eq!(i.b0, 0.5);
        let back = internal_to_loo(&i);
        assert_eq!(back, LooParams { alpha_db: 0.0, psi_db: 0.0, mp_db: 0.0 });
    }

    #[test]
    fn reference_conversion() {
        // μ = −8·ln10/20, d₀ = (3·ln10/20)², b₀ = 10^(−2)/2 (computed at 40 digits)
        let i = loo_to_internal(&LooParams { alpha_db: -8.0, psi_db: 3.0, mp_db: -20.0 });
        assert!((i.mu - (-0.921_034_037_197_618_3)).abs() < 1e-12);
        assert!((i.d0 - 0.119_292_707_485_763_96).abs() < 1e-12);
        assert!((i.b0 - 0.005).abs() < 1e-15);
        let back = internal_to_loo(&i);
        assert!((back.alpha_db + 8.0).abs() < 1e-12);
        assert!((back.psi_db - 3.0).abs() < 1e-12);
        assert!((back.mp_db + 20.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn conversion_round_trip(a in -30.0f64..10.0, psi in 0.01f64..8.0, mp in -40.0f64..0.0) {
            let p = LooParams { alpha_db: a, psi_db: psi, mp_db: mp };
            let q = internal_to_loo(&loo_to_internal(&p));
            prop_assert!((q.alpha_db - a).abs() <= 1e-10 * a.abs().max(1.0));
            prop_assert!((q.psi_db - psi).abs() <= 1e-10 * psi);
            prop_assert!((q.mp_db - mp).abs() <= 1e-10 * mp.abs().max(1.0));
            let i = loo_to_internal(&p);
            let j = loo_to_internal(&q);
            prop_assert!((i.b0 - j.b0).abs() <= 1e-10 * i.b0);
        }
    }

    #[test]
    fn pdf_vanishes_at_origin() {
        let p = LooParams { alpha_db: -3.0, psi_db: 2.0, mp_db: -15.0 };
        assert_eq!(loo_pdf(0.0, &p).unwrap(), 0.0);
        assert!(loo_pdf(-0.1, &p).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let p = LooParams { alpha_db: -8.0, psi_db: 3.0, mp_db: -20.0 };
        let rmax = default_r_max(&p);
        let total = integrate(|r| loo_pdf(r, &p).unwrap(), 0.0, rmax, &QuadOptions { initial_panels: 64, ..Default::default() });
        assert!((total.value - 1.0).abs() < 1e-4, "{}", total.value);
    }

    #[test]
    fn pdf_limits_match_closed_forms() {
        // no multipath -> log-normal, no shadowing spread -> Rice; both are
        // normalized densities
        for p in [
            LooParams { alpha_db: -2.0, psi_db: 1.5, mp_db: f64::NEG_INFINITY },
            LooParams { alpha_db: -2.0, psi_db: 0.0, mp_db: -12.0 },
        ] {
            let rmax = default_r_max(&p) + 1.0;
            let total = integrate(|r| loo_pdf(r, &p).unwrap(), 0.0, rmax, &QuadOptions { initial_panels: 64, ..Default::default() });
            assert!((total.value - 1.0).abs() < 1e-8, "{p:?}: {}", total.value);
        }
        let delta = LooParams { alpha_db: -2.0, psi_db: 0.0, mp_db: f64::NEG_INFINITY };
        assert!(loo_pdf(0.5, &delta).is_err());
    }

    #[test]
    fn density_concentrates_at_direct_amplitude() {
        // ψ → 0 and b₀ → 0 make the law a point mass at e^μ
        let p = LooParams { alpha_db: -6.0, psi_db: 0.05, mp_db: -60.0 };
        let centre = (-6.0f64 * LN_10 / 20.0).exp();
        let cdf = LooCdf::build(&p, 2.0 * centre, 4000).unwrap();
        let mass_near = cdf.eval(centre * 1.02) - cdf.eval(centre * 0.98);
        assert!(mass_near > 0.99, "{mass_near}");
        let off = loo_pdf(0.5 * centre, &p).unwrap();
        let on = loo_pdf(centre, &p).unwrap();
        assert!(on > 1e6 * off.max(1e-300));
    }

    #[test]
    fn degenerate_sampler_has_constant_amplitude() {
        let p = LooParams { alpha_db: -4.0, psi_db: 0.0, mp_db: f64::NEG_INFINITY };
        let mut rng = stream_rng(7, 0);
        let g = sample_loo(&p, 1000, &mut rng).unwrap();
        let want = 10f64.powf(-4.0 / 20.0);
        assert!(g.iter().all(|h| (h.norm() - want).abs() < 1e-15));
    }

    #[test]
    fn sampler_is_reproducible() {
        let p = LooParams { alpha_db: -3.0, psi_db: 2.0, mp_db: -15.0 };
        let a = sample_loo(&p, 256, &mut stream_rng(11, 3)).unwrap();
        let b = sample_loo(&p, 256, &mut stream_rng(11, 3)).unwrap();
        assert_eq!(a, b);
        let c = sample_loo(&p, 256, &mut stream_rng(11, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_phase_keeps_amplitude_law() {
        let p = LooParams { alpha_db: -3.0, psi_db: 2.0, mp_db: f64::NEG_INFINITY };
        let zero = sample_loo_components(&p, 64, DirectPhase::Zero, &mut stream_rng(5, 0)).unwrap();
        let unif = sample_loo_components(&p, 64, DirectPhase::Uniform, &mut stream_rng(5, 0)).unwrap();
        // same first draw, so the first direct amplitude agrees
        assert!((zero[0].direct.norm() - unif[0].direct.norm()).abs() < 1e-15);
        assert!(unif.iter().any(|s| s.direct.im.abs() > 1e-6));
    }

    #[test]
    fn zero_count_rejected() {
        let p = LooParams { alpha_db: 0.0, psi_db: 1.0, mp_db: -10.0 };
        assert!(sample_loo(&p, 0, &mut stream_rng(1, 0)).is_err());
    }
}
