//! Land-mobile-satellite fading: Loo statistics per shadowing state and the
//! three-state Markov chain that switches between them.

mod bessel;
mod loo;
mod markov;
pub mod quadrature;
mod table;

pub use bessel::bessel_i0_log;
pub use loo::{
    default_r_max, internal_to_loo, loo_pdf, loo_to_internal, sample_loo, sample_loo_components, sample_loo_one,
    sample_loo_with_phase, DirectPhase, LooCdf, LooInternal, LooParams, LooSample,
};
pub use markov::{occupancy, sample_state_sequence, stationary_distribution, ChannelState, MarkovChain};
pub use table::{
    load_environment_table, ElevationKey, Environment, EnvironmentTable, EnvironmentTables, MAX_ELEVATION_DEG,
    MIN_ELEVATION_DEG,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FadingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid Loo parameters: {0}")]
    InvalidParams(String),
    #[error("density quadrature failed at r = {r}: relative error estimate {error:.3e} exceeds 1e-6")]
    Integration { r: f64, error: f64 },
    #[error("invalid Markov chain: {0}")]
    InvalidChain(String),
    #[error("chain has no unique stationary distribution: {0}")]
    NotErgodic(String),
    #[error("stationary distribution did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("environment table validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("range error: {0}")]
    Range(String),
}

/// Σ_s π_s·p_s(r) over the three shadowing states.
pub fn mixture_pdf(r: f64, chain: &MarkovChain, per_state: &[LooParams; 3]) -> Result<f64, FadingError> {
    chain.validate()?;
    let mut total = 0.0;
    for (w, p) in chain.state_probs.iter().zip(per_state) {
        if *w > 0.0 {
            total += w * loo_pdf(r, p)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::quadrature::{integrate, QuadOptions};
    use super::*;

    const IDENT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn states() -> [LooParams; 3] {
        [
            LooParams { alpha_db: -0.5, psi_db: 0.5, mp_db: -20.0 },
            LooParams { alpha_db: -5.0, psi_db: 2.0, mp_db: -17.0 },
            LooParams { alpha_db: -12.0, psi_db: 3.0, mp_db: -20.0 },
        ]
    }

    #[test]
    fn degenerate_mixture_is_single_state() {
        let chain = MarkovChain::new([1.0, 0.0, 0.0], IDENT).unwrap();
        let s = states();
        for r in [0.1, 0.5, 0.9, 1.3] {
            assert_eq!(mixture_pdf(r, &chain, &s).unwrap(), loo_pdf(r, &s[0]).unwrap());
        }
    }

    #[test]
    fn identical_states_collapse() {
        let chain = MarkovChain::new([1.0 / 3.0; 3], IDENT).unwrap();
        let p = states()[1];
        for r in [0.05, 0.4, 1.1] {
            let m = mixture_pdf(r, &chain, &[p, p, p]).unwrap();
            let single = loo_pdf(r, &p).unwrap();
            assert!((m - single).abs() <= 1e-14 * single);
        }
    }

    #[test]
    fn mixture_integrates_to_one() {
        let chain = MarkovChain::new([0.6, 0.3, 0.1], IDENT).unwrap();
        let s = states();
        let rmax = s.iter().map(default_r_max).fold(0.0, f64::max);
        let total = integrate(|r| mixture_pdf(r, &chain, &s).unwrap(), 0.0, rmax, &QuadOptions {
            initial_panels: 64,
            ..Default::default()
        });
        assert!((total.value - 1.0).abs() < 1e-4, "{}", total.value);
    }
}
