//! Training and evaluation of one model under explicit channel conditions.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvalOptions, TrainOptions};
use super::dataset::{Dataset, Split};
use super::metrics::psnr_from_mse;
use super::HarnessError;
use crate::channel::{draw_realization, ChannelConfig, ChannelLayer, ChannelRealization};
use crate::fading::{ChannelState, LooParams};
use crate::jscc::{ChannelContext, EndToEnd, JsccModel};
use crate::linkbudget::noise_sigma_squared;
use crate::nn::{adam_step, mse_loss, AdamState, Layer, Tensor};
use crate::rng::{stream_id, stream_rng, StreamRng};

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_TRAIN: u64 = 0x5452_4e43;
const STREAM_VAL: u64 = 0x5641_4c43;
const STREAM_EVAL: u64 = 0x4556_414c;

/// A channel the codec is trained or evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub state: ChannelState,
    pub snr_db: f64,
    /// `None` means `h ≡ 1`.
    pub loo: Option<LooParams>,
}

impl Condition {
    /// `h ≡ 1` and no noise.
    pub fn noiseless() -> Self {
        Self { state: ChannelState::Los, snr_db: f64::INFINITY, loo: None }
    }

    pub fn context(&self) -> ChannelContext {
        ChannelContext { snr_db: self.snr_db, state: self.state, loo: self.loo }
    }

    pub fn draw<R: Rng + ?Sized>(&self, k: usize, cfg: &ChannelConfig, rng: &mut R) -> Result<ChannelRealization, HarnessError> {
        match &self.loo {
            Some(p) => Ok(draw_realization(k, p, self.snr_db, cfg, rng)?),
            None => {
                let sigma = noise_sigma_squared(self.snr_db, cfg.signal_power).sqrt();
                let mut r = ChannelRealization::identity(k);
                if sigma > 0.0 {
                    r.noise_sigma = sigma;
                    for n in &mut r.noise {
                        *n = num_complex::Complex64::new(
                            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
                            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
                        );
                    }
                }
                Ok(r)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Per-sample summed squared error, averaged over the epoch.
    pub train_loss: f64,
    /// Per-pixel MSE on the validation split with clamped output.
    pub val_mse: f64,
    pub val_psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_val_mse: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Per-pixel validation MSE with one fixed channel draw per image.
fn validation_mse(
    model: &mut JsccModel<f32>,
    ds: &Dataset,
    idx: &[usize],
    conditions: &[Condition],
    cfg: &ChannelConfig,
    seed: u64,
    batch: usize,
) -> Result<f64, HarnessError> {
    let k = model.architecture.symbols();
    let mut total = 0.0;
    let mut count = 0usize;
    for (bi, chunk) in idx.chunks(batch).enumerate() {
        let mut rng = stream_rng(seed, stream_id(&[STREAM_VAL, bi as u64]));
        let mut reals = Vec::with_capacity(chunk.len());
        let mut ctxs = Vec::with_capacity(chunk.len());
        for _ in chunk {
            let c = conditions[rng.random_range(0..conditions.len())];
            reals.push(c.draw(k, cfg, &mut rng)?);
            ctxs.push(c.context());
        }
        let x = ds.batch(chunk);
        let y = model.reconstruct(&x, &reals, Some(&ctxs))?;
        total += x.data().iter().zip(y.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>();
        count += x.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Minimizes the batch MSE through encoder → channel → decoder with a fresh
/// condition and channel draw per item per step. The weights of the best
/// validation epoch are kept.
pub fn train(
    model: JsccModel<f32>,
    ds: &Dataset,
    conditions: &[Condition],
    cfg: &ChannelConfig,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(JsccModel<f32>, TrainLog), HarnessError> {
    opts.validate()?;
    if conditions.is_empty() {
        return Err(HarnessError::Config("training needs at least one channel condition".into()));
    }
    if ds.shape != model.architecture.input_shape {
        return Err(HarnessError::Config(format!("dataset shape {:?} vs model input {:?}", ds.shape, model.architecture.input_shape)));
    }
    let train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(HarnessError::Data("training needs non-empty train and val splits".into()));
    }
    let k = model.architecture.symbols();
    let mut net = EndToEnd { model, channel: ChannelLayer::new(Vec::new()) };
    let mut adam = AdamState::new(opts.learning_rate);
    let initial_val_mse = validation_mse(&mut net.model, ds, &val_idx, conditions, cfg, seed, opts.batch_size)?;
    let mut best = (initial_val_mse, 0usize, snapshot(&net.model));
    let mut log = TrainLog { initial_val_mse, epochs: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut order = train_idx.clone();

    for epoch in 0..opts.epochs {
        adam.learning_rate = opts.rate_at(epoch);
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut stream_rng(seed, stream_id(&[STREAM_SHUFFLE, epoch as u64])));
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(opts.batch_size).enumerate() {
            let mut rng: StreamRng = stream_rng(seed, stream_id(&[STREAM_TRAIN, epoch as u64, bi as u64]));
            let mut reals = Vec::with_capacity(chunk.len());
            let mut ctxs = Vec::with_capacity(chunk.len());
            for _ in chunk {
                let c = conditions[rng.random_range(0..conditions.len())];
                reals.push(c.draw(k, cfg, &mut rng)?);
                ctxs.push(c.context());
            }
            net.model.set_context(Some(&ctxs))?;
            net.channel.realizations = reals;
            let x = ds.batch(chunk);
            let y = net.forward(&x)?;
            let (loss, grad) = mse_loss(&x, &y)?;
            if !loss.is_finite() || !y.all_finite() {
                return Err(HarnessError::Diverged { epoch, loss });
            }
            net.zero_grad();
            net.backward(&grad)?;
            adam_step(&mut net.params_mut(), &mut adam)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val_mse = validation_mse(&mut net.model, ds, &val_idx, conditions, cfg, seed, opts.batch_size)?;
        if !val_mse.is_finite() {
            return Err(HarnessError::Diverged { epoch, loss: val_mse });
        }
        log.epochs.push(EpochLog {
            epoch,
            learning_rate: adam.learning_rate,
            train_loss: loss_sum / order.len() as f64,
            val_mse,
            val_psnr_db: psnr_from_mse(val_mse),
        });
        if val_mse < best.0 {
            best = (val_mse, epoch + 1, snapshot(&net.model));
        } else if epoch + 1 - best.1 >= opts.patience {
            log.stopped_early = true;
            break;
        }
    }
    let mut model = net.model;
    restore(&mut model, &best.2);
    model.metadata.seed = seed;
    model.metadata.epochs = log.epochs.len();
    model.metadata.split_hash = ds.hash();
    log.best_epoch = best.1;
    Ok((model, log))
}

fn snapshot(model: &JsccModel<f32>) -> Vec<Vec<f32>> {
    model.params().iter().map(|p| p.data().to_vec()).collect()
}

fn restore(model: &mut JsccModel<f32>, saved: &[Vec<f32>]) {
    for (p, s) in model.params_mut().into_iter().zip(saved) {
        p.data_mut().copy_from_slice(s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Mean per-pixel MSE over images and realizations.
    pub mse: f64,
    pub psnr_db: f64,
    pub realizations: usize,
    /// Standard error of the per-realization PSNR mean.
    pub psnr_se_db: f64,
}

/// Mean reconstruction quality over `idx` with the channel drawn from
/// `actual` while the model is told `assumed`.
///
/// Realization `r` of image `i` uses its own RNG stream keyed by `(i, r)`,
/// so two evaluations that differ only in the assumed context see the same
/// channel draws.
pub fn evaluate(
    model: &JsccModel<f32>,
    ds: &Dataset,
    idx: &[usize],
    actual: &Condition,
    assumed: &ChannelContext,
    cfg: &ChannelConfig,
    opts: &EvalOptions,
    seed: u64,
) -> Result<EvalOutcome, HarnessError> {
    if idx.is_empty() {
        return Err(HarnessError::Data("no images to evaluate".into()));
    }
    let k = model.architecture.symbols();
    let per_image = ds.shape.iter().product::<usize>() as f64;
    let mut round_mse: Vec<f64> = Vec::new();
    let step = opts.min_realizations;
    loop {
        let rounds: Vec<usize> = (round_mse.len()..round_mse.len() + step).collect();
        let jobs: Vec<(usize, &[usize])> = rounds.iter().flat_map(|&r| idx.chunks(opts.batch_size).map(move |c| (r, c))).collect();
        let sums = jobs
            .par_iter()
            .map_init(
                || model.clone(),
                |m, &(r, chunk)| -> Result<(usize, f64), HarnessError> {
                    let reals = chunk
                        .iter()
                        .map(|&i| actual.draw(k, cfg, &mut stream_rng(seed, stream_id(&[STREAM_EVAL, i as u64, r as u64]))))
                        .collect::<Result<Vec<_>, _>>()?;
                    let x = ds.batch(chunk);
                    let y = m.reconstruct(&x, &reals, Some(std::slice::from_ref(assumed)))?;
                    let se = x.data().iter().zip(y.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>();
                    Ok((r, se))
                },
            )
            .collect::<Result<Vec<_>, _>>()?;
        for &r in &rounds {
            let total: f64 = sums.iter().filter(|(rr, _)| *rr == r).map(|(_, s)| s).sum();
            round_mse.push(total / (per_image * idx.len() as f64));
        }
        let se = psnr_standard_error(&round_mse);
        if se < opts.psnr_se_db || round_mse.len() + step > opts.max_realizations {
            let mse = round_mse.iter().sum::<f64>() / round_mse.len() as f64;
            return Ok(EvalOutcome { mse, psnr_db: psnr_from_mse(mse), realizations: round_mse.len(), psnr_se_db: se });
        }
    }
}

fn psnr_standard_error(round_mse: &[f64]) -> f64 {
    let p: Vec<f64> = round_mse.iter().map(|&m| psnr_from_mse(m)).collect();
    if p.len() < 2 || p.iter().any(|v| v.is_infinite()) {
        return 0.0;
    }
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
}

/// Per-pixel MSE of the codec alone (`h ≡ 1`, no noise).
pub fn autoencoder_mse(model: &JsccModel<f32>, ds: &Dataset, idx: &[usize]) -> Result<f64, HarnessError> {
    let mut m = model.clone();
    let k = m.architecture.symbols();
    let x: Tensor<f32> = ds.batch(idx);
    let ctx = Condition::noiseless().context();
    let y = m.reconstruct(&x, &vec![ChannelRealization::identity(k); idx.len()], Some(&[ctx]))?;
    Ok(x.data().iter().zip(y.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>() / x.len() as f64)
}
