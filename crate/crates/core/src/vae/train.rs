//! Loss, hand-derived gradients and the Adam training loop.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{kl_divergence, reparameterize_with, Tensor, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::ingest::RleSequence;
use crate::linproj::{vectorize, CorpusStats, FixedVector};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 5.0;
const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    pub trace: Vec<EpochLoss>,
}

fn axpy_outer(g: &mut Tensor, col: &[f64], row: &[f64]) {
    for (r, &c) in col.iter().enumerate() {
        let dst = &mut g.data[r * g.cols..(r + 1) * g.cols];
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += c * v;
        }
    }
}

fn add_into(g: &mut Tensor, v: &[f64]) {
    for (d, &x) in g.data.iter_mut().zip(v) {
        *d += x;
    }
}

/// `Wᵀ v`
fn transpose_mul(w: &Tensor, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols];
    for (r, &x) in v.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w.data[r * w.cols..(r + 1) * w.cols]) {
            *o += wv * x;
        }
    }
    out
}

/// Loss of one sequence and, when `grads` is given, its gradient scaled by
/// `scale` accumulated into `grads`.
fn sequence_pass(
    model: &VaeModel,
    data: &[f64],
    eps: &[f64],
    beta: f64,
    scale: f64,
    grads: Option<&mut VaeModel>,
) -> LossParts {
    let h = model.hidden;
    let steps = data.len();
    let zeros = vec![0.0; h];
    let enc = model.encoder.forward(data, steps, &zeros, &zeros);
    let h_last = enc.final_h().to_vec();
    let (mu, logvar) = model.heads(&h_last);
    let z = reparameterize_with(&mu, &logvar, eps);
    let h0 = model.w_zh.affine(&z, &model.b_zh);
    let c0 = model.w_zc.affine(&z, &model.b_zc);
    let dec = model.decoder.forward(&[], steps, &h0, &c0);

    let mut recon = 0.0;
    let mut residuals = Vec::with_capacity(steps);
    for (t, &x) in data.iter().enumerate() {
        let y = model.w_out.affine(dec.h_after(t), &model.b_out)[0];
        residuals.push(y - x);
        recon += (y - x) * (y - x);
    }
    recon /= steps as f64;
    let kl = kl_divergence(&mu, &logvar);
    let parts = LossParts {
        total: recon + beta * kl,
        reconstruction: recon,
        kl,
    };
    let Some(g) = grads else {
        return parts;
    };

    let mut dh_steps = vec![0.0; steps * h];
    for (t, r) in residuals.iter().enumerate() {
        let dy = scale * 2.0 * r / steps as f64;
        g.b_out.data[0] += dy;
        axpy_outer(&mut g.w_out, &[dy], dec.h_after(t));
        for (d, &w) in dh_steps[t * h..(t + 1) * h].iter_mut().zip(&model.w_out.data) {
            *d = dy * w;
        }
    }
    let (dh0, dc0) = model
        .decoder
        .backward(&dec, &[], &dh_steps, &zeros, &zeros, &mut g.decoder);

    axpy_outer(&mut g.w_zh, &dh0, &z);
    add_into(&mut g.b_zh, &dh0);
    axpy_outer(&mut g.w_zc, &dc0, &z);
    add_into(&mut g.b_zc, &dc0);
    let dz: Vec<f64> = transpose_mul(&model.w_zh, &dh0)
        .iter()
        .zip(transpose_mul(&model.w_zc, &dc0))
        .map(|(a, b)| a + b)
        .collect();

    let d = model.latent_dim;
    let mut dmu = vec![0.0; d];
    let mut dlv = vec![0.0; d];
    for k in 0..d {
        let sigma = (0.5 * logvar[k]).exp();
        dmu[k] = dz[k] + scale * beta * mu[k];
        dlv[k] = dz[k] * eps[k] * 0.5 * sigma + scale * beta * 0.5 * (logvar[k].exp() - 1.0);
    }
    axpy_outer(&mut g.w_mu, &dmu, &h_last);
    add_into(&mut g.b_mu, &dmu);
    axpy_outer(&mut g.w_logvar, &dlv, &h_last);
    add_into(&mut g.b_logvar, &dlv);
    let dh_last: Vec<f64> = transpose_mul(&model.w_mu, &dmu)
        .iter()
        .zip(transpose_mul(&model.w_logvar, &dlv))
        .map(|(a, b)| a + b)
        .collect();
    model
        .encoder
        .backward(&enc, data, &[], &dh_last, &zeros, &mut g.encoder);
    parts
}

fn check_batch(model: &VaeModel, batch: &[FixedVector], eps: &[Vec<f64>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if eps.len() != batch.len() || eps.iter().any(|e| e.len() != model.latent_dim) {
        return Err(Error::Config("noise does not match batch shape".into()));
    }
    if let Some(i) = batch.iter().position(|f| f.valid == 0) {
        return Err(Error::Undefined(format!("batch entry {i} is all padding")));
    }
    Ok(())
}

fn average(parts: impl Iterator<Item = LossParts>, n: usize) -> LossParts {
    let mut acc = LossParts::default();
    for p in parts {
        acc.total += p.total;
        acc.reconstruction += p.reconstruction;
        acc.kl += p.kl;
    }
    let n = n as f64;
    LossParts {
        total: acc.total / n,
        reconstruction: acc.reconstruction / n,
        kl: acc.kl / n,
    }
}

/// Batch loss for explicit standard-normal noise, one vector per sequence.
pub fn loss_with_noise(
    model: &VaeModel,
    batch: &[FixedVector],
    beta: f64,
    eps: &[Vec<f64>],
) -> Result<LossParts> {
    check_batch(model, batch, eps)?;
    Ok(average(
        batch
            .iter()
            .zip(eps)
            .map(|(f, e)| sequence_pass(model, f.data(), e, beta, 0.0, None)),
        batch.len(),
    ))
}

fn draw_noise<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Batch loss `(total, reconstruction, kl)`, each averaged over the batch.
pub fn loss<R: Rng>(model: &VaeModel, batch: &[FixedVector], beta: f64, rng: &mut R) -> Result<LossParts> {
    let eps = draw_noise(batch.len(), model.latent_dim, rng);
    loss_with_noise(model, batch, beta, &eps)
}

/// Batch loss and its gradient with respect to every parameter. Sequences are
/// processed in parallel and summed in batch order.
pub fn gradient(
    model: &VaeModel,
    batch: &[FixedVector],
    beta: f64,
    eps: &[Vec<f64>],
) -> Result<(LossParts, VaeModel)> {
    check_batch(model, batch, eps)?;
    let scale = 1.0 / batch.len() as f64;
    let per_seq: Vec<(LossParts, VaeModel)> = batch
        .par_iter()
        .zip(eps.par_iter())
        .map(|(f, e)| {
            let mut g = model.zeros_like();
            let p = sequence_pass(model, f.data(), e, beta, scale, Some(&mut g));
            (p, g)
        })
        .collect();
    let mut total = model.zeros_like();
    for (_, g) in &per_seq {
        for ((_, dst), (_, src)) in total.tensors_mut().into_iter().zip(g.tensors()) {
            add_into(dst, &src.data);
        }
    }
    let parts = average(per_seq.iter().map(|(p, _)| *p), batch.len());
    Ok((parts, total))
}

struct Adam {
    m: VaeModel,
    v: VaeModel,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(model: &VaeModel, lr: f64) -> Self {
        Self {
            m: model.zeros_like(),
            v: model.zeros_like(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut VaeModel, grads: &VaeModel) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let params = model.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
            for i in 0..p.1.data.len() {
                let gi = g.1.data[i];
                let mi = &mut m.1.data[i];
                let vi = &mut v.1.data[i];
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                p.1.data[i] -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn clip(grads: &mut VaeModel, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Fits normalization stats on `corpus`, then trains.
pub fn train(config: &VaeConfig, corpus: &[RleSequence]) -> Result<TrainOutcome> {
    config.validate()?;
    let stats = CorpusStats::fit(corpus, config.max_seq_len);
    let mut vectors = Vec::with_capacity(corpus.len());
    for rle in corpus {
        let v = vectorize(rle, config.max_seq_len, &stats)?;
        if v.valid == 0 {
            warn!("skipping empty sequence in training corpus");
            continue;
        }
        vectors.push(v);
    }
    train_vectors(config, &vectors, stats)
}

pub(crate) fn train_vectors(
    config: &VaeConfig,
    vectors: &[FixedVector],
    stats: CorpusStats,
) -> Result<TrainOutcome> {
    config.validate()?;
    if vectors.len() < config.batch_size {
        return Err(Error::Config(format!(
            "training corpus has {} sequences, fewer than batch size {}",
            vectors.len(),
            config.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VaeModel::init(config.latent_dim, config.hidden, config.max_seq_len, &mut rng);
    model.stats = stats;
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    info!(
        "training vae: {} sequences, {} parameters, {} epochs",
        vectors.len(),
        model.n_params(),
        config.epochs
    );
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<FixedVector> = chunk.iter().map(|&i| vectors[i].clone()).collect();
            let eps = draw_noise(batch.len(), config.latent_dim, &mut rng);
            let (parts, mut grads) = gradient(&model, &batch, config.kl_weight, &eps)?;
            if !parts.total.is_finite() || parts.total > DIVERGENCE_LOSS {
                let mut losses: Vec<f64> = trace.iter().map(|e: &EpochLoss| e.total).collect();
                losses.push(parts.total);
                return Err(Error::Diverged {
                    epoch,
                    loss: parts.total,
                    trace: losses,
                });
            }
            let n = batch.len() as f64;
            sum.total += parts.total * n;
            sum.reconstruction += parts.reconstruction * n;
            sum.kl += parts.kl * n;
            let norm = clip(&mut grads, CLIP_NORM);
            debug!("epoch {epoch} batch loss {:.5} grad norm {norm:.3}", parts.total);
            adam.update(&mut model, &grads);
        }
        let n = vectors.len() as f64;
        let e = EpochLoss {
            epoch,
            total: sum.total / n,
            reconstruction: sum.reconstruction / n,
            kl: sum.kl / n,
        };
        info!(
            "epoch {epoch}: loss {:.5} (recon {:.5}, kl {:.5})",
            e.total, e.reconstruction, e.kl
        );
        trace.push(e);
    }
    if !model.is_finite() {
        return Err(Error::Numerical("non-finite parameters after training".into()));
    }
    Ok(TrainOutcome { model, trace })
}

/// Posterior mean per user. Empty sequences are skipped with a warning.
pub fn extract_latent(
    model: &VaeModel,
    series: &BTreeMap<String, RleSequence>,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let entries: Vec<(&String, &RleSequence)> = series.iter().collect();
    let encoded: Vec<Option<Result<Vec<f64>>>> = entries
        .par_iter()
        .map(|(_, rle)| {
            let v = match vectorize(rle, model.seq_len, &model.stats) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            if v.valid == 0 {
                return None;
            }
            Some(model.encode(&v).map(|(mu, _)| mu))
        })
        .collect();
    let mut out = BTreeMap::new();
    for ((user, _), enc) in entries.into_iter().zip(encoded) {
        match enc {
            None => warn!("user {user} has an empty sequence; skipped"),
            Some(r) => {
                out.insert(user.clone(), r?);
            }
        }
    }
    Ok(out)
}
