use super::FadingError;

/// Crossover between the power series and the large-argument expansion.
const SERIES_LIMIT: f64 = 20.0;

/// `ln I₀(x)` for `x ≥ 0`, finite for any finite argument.
pub fn bessel_i0_log(x: f64) -> Result<f64, FadingError> {
    if x.is_nan() || x < 0.0 {
        return Err(FadingError::Domain(format!("bessel_i0_log requires x >= 0, got {x}")));
    }
    Ok(ln_i0(x))
}

/// Unchecked variant used inside the density integrand.
pub(crate) fn ln_i0(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        // Σ (x²/4)^k / (k!)², all terms positive
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        sum.ln()
    } else if x.is_infinite() {
        f64::INFINITY
    } else {
        // I₀(x) ~ eˣ/√(2πx) · Σ ((2k−1)!!)² / (k!·(8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x);
            if next >= term || next < 1e-17 {
                if next < term {
                    sum += next;
                }
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ln Σ_k (x/2)^{2k}/(k!)² evaluated with a running log-sum-exp, so it
    /// stays finite for arguments where I₀ itself overflows.
    fn series_oracle(x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let lh = (0.5 * x).ln();
        let kmax = (2.0 * x + 60.0) as usize;
        let mut lgam = 0.0; // ln k!
        let mut logs = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            if k > 0 {
                lgam += (k as f64).ln();
            }
            logs.push(2.0 * k as f64 * lh - 2.0 * lgam);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn zero_and_one() {
        assert_eq!(bessel_i0_log(0.0).unwrap(), 0.0);
        // I₀(1) = 1.2660658777520083...
        let v = bessel_i0_log(1.0).unwrap();
        assert!((v.exp() - 1.266_065_877_752_008_4).abs() < 1e-15);
    }

    #[test]
    fn large_argument_is_finite() {
        let v = bessel_i0_log(500.0).unwrap();
        assert!(v.is_finite());
        // mpmath: ln I0(500) = 495.97400766810669...
        assert!((v - 495.974_007_668_106_7).abs() < 1e-8, "{v}");
    }

    #[test]
    fn negative_argument_rejected() {
        assert!(bessel_i0_log(-1e-9).is_err());
        assert!(bessel_i0_log(f64::NAN).is_err());
    }

    #[test]
    fn matches_series_oracle_across_range() {
        let mut x = 0.0;
        while x <= 700.0 {
            let got = ln_i0(x);
            let want = series_oracle(x);
            // relative error of exp(result) equals |Δ ln|
            assert!((got - want).abs() < 1e-8, "x={x}: {got} vs {want}");
            x += if x < 30.0 { 0.37 } else { 6.1 };
        }
    }
}
