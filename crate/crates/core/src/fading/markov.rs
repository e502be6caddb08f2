use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::FadingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelState {
    Los,
    Shadow,
    DeepShadow,
}

impl ChannelState {
    pub const ALL: [ChannelState; 3] = [ChannelState::Los, ChannelState::Shadow, ChannelState::DeepShadow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelState::Los => "los",
            ChannelState::Shadow => "shadow",
            ChannelState::DeepShadow => "deep_shadow",
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelState {
    type Err = FadingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "los" => Ok(ChannelState::Los),
            "shadow" => Ok(ChannelState::Shadow),
            "deepshadow" => Ok(ChannelState::DeepShadow),
            _ => Err(FadingError::Parse(format!("unknown channel state `{s}`"))),
        }
    }
}

const STOCHASTIC_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 1_000_000;
const CONVERGENCE_TOL: f64 = 1e-12;

/// Three-state shadowing chain over {LOS, Shadow, DeepShadow}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub state_probs: [f64; 3],
    pub transition: [[f64; 3]; 3],
}

fn check_distribution(what: &str, row: &[f64; 3]) -> Result<(), FadingError> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(FadingError::InvalidChain(format!("{what} has entries outside [0, 1]: {row:?}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(FadingError::InvalidChain(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl MarkovChain {
    pub fn new(state_probs: [f64; 3], transition: [[f64; 3]; 3]) -> Result<Self, FadingError> {
        let c = Self { state_probs, transition };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FadingError> {
        check_distribution("state_probs", &self.state_probs)?;
        for (i, row) in self.transition.iter().enumerate() {
            check_distribution(&format!("transition row {i}"), row)?;
        }
        Ok(())
    }

    fn is_irreducible(&self) -> bool {
        (0..3).all(|start| {
            let mut seen = [false; 3];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                for j in 0..3 {
                    if self.transition[i][j] > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    /// An irreducible chain is aperiodic iff its transition matrix is
    /// primitive; for 3 states some power up to (3−1)²+1 = 5 is positive.
    fn is_aperiodic(&self) -> bool {
        let mut pattern = [[false; 3]; 3];
        for (i, row) in pattern.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.transition[i][j] > 0.0;
            }
        }
        let base = pattern;
        for _ in 1..5 {
            if pattern.iter().flatten().all(|&b| b) {
                return true;
            }
            let mut next = [[false; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    next[i][j] = (0..3).any(|k| pattern[i][k] && base[k][j]);
                }
            }
            pattern = next;
        }
        pattern.iter().flatten().all(|&b| b)
    }

    /// Row vector times transition matrix.
    pub fn step_distribution(&self, pi: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, &p) in pi.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += p * self.transition[i][j];
            }
        }
        out
    }
}

/// Fixed point `π = π·P` by power iteration from the uniform vector.
pub fn stationary_distribution(chain: &MarkovChain) -> Result<[f64; 3], FadingError> {
    chain.validate()?;
    if !chain.is_irreducible() {
        return Err(FadingError::NotErgodic("transition matrix is not irreducible".into()));
    }
    if !chain.is_aperiodic() {
        return Err(FadingError::NotErgodic("transition matrix is periodic".into()));
    }
    let mut pi = [1.0 / 3.0; 3];
    for _ in 0..MAX_ITERATIONS {
        let mut next = chain.step_distribution(&pi);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= s);
        let delta = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if delta < CONVERGENCE_TOL {
            return Ok(pi);
        }
    }
    Err(FadingError::NoConvergence(MAX_ITERATIONS))
}

fn draw<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> ChannelState {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return ChannelState::ALL[i];
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // state with positive probability
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(2);
    ChannelState::ALL[last]
}

/// First state from `state_probs`, then one transition per step.
pub fn sample_state_sequence<R: Rng + ?Sized>(
    chain: &MarkovChain,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<ChannelState>, FadingError> {
    chain.validate()?;
    if steps == 0 {
        return Err(FadingError::Domain("steps must be positive".into()));
    }
    let mut out = Vec::with_capacity(steps);
    let mut s = draw(&chain.state_probs, rng);
    out.push(s);
    for _ in 1..steps {
        s = draw(&chain.transition[s.index()], rng);
        out.push(s);
    }
    Ok(out)
}

pub fn occupancy(states: &[ChannelState]) -> [f64; 3] {
    let mut counts = [0usize; 3];
    for s in states {
        counts[s.index()] += 1;
    }
    let n = states.len().max(1) as f64;
    [counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    const UNIFORM: [[f64; 3]; 3] = [[1.0 / 3.0; 3]; 3];

    fn uniform_chain() -> MarkovChain {
        // 1/3 three times rounds to 1 within the stochastic tolerance
        MarkovChain::new([1.0 / 3.0; 3], UNIFORM).unwrap()
    }

    /// P^n by repeated squaring; any row approximates π for a mixing chain.
    fn matrix_power(p: &[[f64; 3]; 3], mut n: u32) -> [[f64; 3]; 3] {
        let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
            let mut c = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            c
        };
        let mut acc = IDENTITY;
        let mut base = *p;
        while n > 0 {
            if n & 1 == 1 {
                acc = mul(&acc, &base);
            }
            base = mul(&base, &base);
            n >>= 1;
        }
        acc
    }

    fn random_chain(seed: u64) -> MarkovChain {
        let mut rng = stream_rng(seed, 0);
        let mut row = || {
            let v: [f64; 3] = [rng.random::<f64>() + 0.05, rng.random::<f64>() + 0.05, rng.random::<f64>() + 0.05];
            let s: f64 = v.iter().sum();
            let mut r = [v[0] / s, v[1] / s, 0.0];
            r[2] = 1.0 - r[0] - r[1];
            r
        };
        let t = [row(), row(), row()];
        MarkovChain::new(row(), t).unwrap()
    }

    #[test]
    fn identity_is_not_irreducible() {
        let c = MarkovChain::new([1.0, 0.0, 0.0], IDENTITY).unwrap();
        assert!(matches!(stationary_distribution(&c), Err(FadingError::NotErgodic(_))));
    }

    #[test]
    fn periodic_chain_rejected() {
        let cyc = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let c = MarkovChain::new([1.0, 0.0, 0.0], cyc).unwrap();
        assert!(matches!(stationary_distribution(&c), Err(FadingError::NotErgodic(_))));
    }

    #[test]
    fn uniform_matrix_has_uniform_stationary() {
        let pi = stationary_distribution(&uniform_chain()).unwrap();
        for p in pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_matches_matrix_power() {
        for seed in 0..5 {
            let c = random_chain(seed);
            let pi = stationary_distribution(&c).unwrap();
            let pk = matrix_power(&c.transition, 1000);
            for j in 0..3 {
                assert!((pi[j] - pk[0][j]).abs() < 1e-10, "seed {seed}: {pi:?} vs {:?}", pk[0]);
            }
        }
    }

    #[test]
    fn identity_sequence_is_constant() {
        let c = MarkovChain::new([0.0, 1.0, 0.0], IDENTITY).unwrap();
        let seq = sample_state_sequence(&c, 500, &mut stream_rng(3, 0)).unwrap();
        assert!(seq.iter().all(|&s| s == ChannelState::Shadow));
    }

    #[test]
    fn uniform_occupancy() {
        let seq = sample_state_sequence(&uniform_chain(), 1_000_000, &mut stream_rng(21, 0)).unwrap();
        let occ = occupancy(&seq);
        for p in occ {
            assert!((p - 1.0 / 3.0).abs() < 0.005, "{occ:?}");
        }
    }

    #[test]
    fn sequence_is_reproducible() {
        let c = random_chain(9);
        let a = sample_state_sequence(&c, 4096, &mut stream_rng(77, 1)).unwrap();
        let b = sample_state_sequence(&c, 4096, &mut stream_rng(77, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_matrices_rejected() {
        assert!(MarkovChain::new([0.5, 0.5, 0.1], UNIFORM).is_err());
        assert!(MarkovChain::new([1.0, 0.0, 0.0], [[0.5, 0.6, -0.1], UNIFORM[1], UNIFORM[2]]).is_err());
        assert!(sample_state_sequence(&uniform_chain(), 0, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn state_names_parse() {
        for s in ChannelState::ALL {
            assert_eq!(s.name().parse::<ChannelState>().unwrap(), s);
        }
        assert_eq!("Deep Shadow".parse::<ChannelState>().unwrap(), ChannelState::DeepShadow);
        assert_eq!("deep-shadow".parse::<ChannelState>().unwrap(), ChannelState::DeepShadow);
        assert!("fog".parse::<ChannelState>().is_err());
    }
}
