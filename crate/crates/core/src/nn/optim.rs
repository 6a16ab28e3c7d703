//! Optimizer construction and small training-loop helpers.

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub fn adamw(vars: Vec<Var>, lr: f64, weight_decay: f64) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr, weight_decay, ..Default::default() })?)
}

/// Adam with GAN-style moment decay rates and no weight decay.
pub fn adam_gan(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr, beta1: 0.8, beta2: 0.99, weight_decay: 0.0, ..Default::default() })?)
}

/// Scalar value of a loss, failing on NaN or infinity.
pub fn finite_scalar(loss: &Tensor, step: usize, what: &str) -> Result<f64> {
    let v = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss { step: step as u64, snapshot: format!("{what} = {v}") });
    }
    Ok(v)
}

/// Shuffled minibatches of indices covering `0..n` once.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Draws `batch` indices with replacement.
pub fn random_batch<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

pub fn step(opt: &mut AdamW, loss: &Tensor) -> Result<()> {
    opt.backward_step(loss)?;
    Ok(())
}
