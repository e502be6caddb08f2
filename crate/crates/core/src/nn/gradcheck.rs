//! Central finite-difference check of a layer's backward pass.
//!
//! The scalar probed is `L = Σ r ⊙ layer(x)` for a fixed random `r`, so the
//! analytic gradients come from one `backward(r)` call. Every input
//! coordinate and every parameter coordinate is perturbed by ±h.

use rand::Rng;

use super::{Layer, NnError, Tensor};
use crate::rng::stream_rng;

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Input(usize),
    Param { tensor: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn probe<L: Layer<f64> + ?Sized>(layer: &mut L, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64, NnError> {
    layer.forward(x)?.dot(r)
}

/// Fails with [`NnError::GradCheck`] naming the worst coordinate when the
/// maximum relative error exceeds `tolerance`.
pub fn gradient_check<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradReport, NnError> {
    let y = layer.forward(input)?;
    let mut rng = stream_rng(seed, 0x6772_6164);
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
    let grad_in = layer.backward(&r)?;
    let param_grads: Vec<Vec<f64>> =
        layer.params().iter().map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()])).collect();

    let mut report = GradReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut record = |coord: Coordinate, analytic: f64, numeric: f64| {
        let e = relative_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = e;
            report.worst = Some(coord);
            report.analytic = analytic;
            report.numeric = numeric;
        }
    };

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let plus = probe(layer, &x, &r)?;
        x.data_mut()[i] = orig - FD_STEP;
        let minus = probe(layer, &x, &r)?;
        x.data_mut()[i] = orig;
        record(Coordinate::Input(i), grad_in.data()[i], (plus - minus) / (2.0 * FD_STEP));
    }

    for (t, grads) in param_grads.iter().enumerate() {
        for (i, &analytic) in grads.iter().enumerate() {
            let orig = layer.params()[t].data()[i];
            layer.params_mut()[t].data_mut()[i] = orig + FD_STEP;
            let plus = probe(layer, input, &r)?;
            layer.params_mut()[t].data_mut()[i] = orig - FD_STEP;
            let minus = probe(layer, input, &r)?;
            layer.params_mut()[t].data_mut()[i] = orig;
            record(Coordinate::Param { tensor: t, index: i }, analytic, (plus - minus) / (2.0 * FD_STEP));
        }
    }

    if report.max_rel_error > tolerance {
        return Err(NnError::GradCheck {
            coordinate: format!("{:?}", report.worst),
            analytic: report.analytic,
            numeric: report.numeric,
            rel_error: report.max_rel_error,
        });
    }
    Ok(report)
}
