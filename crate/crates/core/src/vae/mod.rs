//! LSTM variational autoencoder over normalized compressed series.
//!
//! The encoder LSTM reads the unpadded part of a sequence; its final hidden
//! state is mapped to the posterior mean and log-variance. A sample
//! `z = μ + exp(logvar / 2) ⊙ ε` is mapped linearly to the decoder's initial
//! hidden and cell states, and the decoder LSTM then unrolls over zero inputs
//! emitting one scalar per step. At inference time the account's feature
//! vector is `μ`.

mod lstm;
mod train;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linproj::{CorpusStats, FixedVector};

pub use lstm::{LstmParams, LstmTrace};
pub use train::{
    extract_latent, gradient, loss, loss_with_noise, train, EpochLoss, LossParts, TrainOutcome,
};

pub const MODEL_MAGIC: &str = "RTBUST-VAE";
pub const MODEL_VERSION: &str = "v1";

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
        }
    }

    /// `self * x + bias`
    fn affine(&self, x: &[f64], bias: &Tensor) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                bias.data[r]
                    + self.data[r * self.cols..(r + 1) * self.cols]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 32,
            max_seq_len: 512,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("max_seq_len", self.max_seq_len),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.kl_weight > 0.0) {
            return Err(Error::Config("learning_rate and kl_weight must be positive".into()));
        }
        if self.latent_dim > self.hidden {
            return Err(Error::Config(format!(
                "latent_dim {} exceeds hidden size {}",
                self.latent_dim, self.hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub latent_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub encoder: LstmParams,
    pub w_mu: Tensor,
    pub b_mu: Tensor,
    pub w_logvar: Tensor,
    pub b_logvar: Tensor,
    /// latent to decoder initial hidden state
    pub w_zh: Tensor,
    pub b_zh: Tensor,
    /// latent to decoder initial cell state
    pub w_zc: Tensor,
    pub b_zc: Tensor,
    pub decoder: LstmParams,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub stats: CorpusStats,
}

impl VaeModel {
    pub fn zeros(latent_dim: usize, hidden: usize, seq_len: usize) -> Self {
        let (d, h) = (latent_dim, hidden);
        Self {
            latent_dim: d,
            hidden: h,
            seq_len,
            encoder: LstmParams::zeros(1, h),
            w_mu: Tensor::zeros(d, h),
            b_mu: Tensor::zeros(d, 1),
            w_logvar: Tensor::zeros(d, h),
            b_logvar: Tensor::zeros(d, 1),
            w_zh: Tensor::zeros(h, d),
            b_zh: Tensor::zeros(h, 1),
            w_zc: Tensor::zeros(h, d),
            b_zc: Tensor::zeros(h, 1),
            decoder: LstmParams::zeros(0, h),
            w_out: Tensor::zeros(1, h),
            b_out: Tensor::zeros(1, 1),
            stats: CorpusStats::default(),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except a forget-gate
    /// bias of 1 in both LSTMs.
    pub fn init<R: Rng>(latent_dim: usize, hidden: usize, seq_len: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(latent_dim, hidden, seq_len);
        let (d, h) = (latent_dim, hidden);
        let kh = 1.0 / (h as f64).sqrt();
        let kd = 1.0 / (d as f64).sqrt();
        m.encoder.w_x = Tensor::uniform(4 * h, 1, kh, rng);
        m.encoder.w_h = Tensor::uniform(4 * h, h, kh, rng);
        m.w_mu = Tensor::uniform(d, h, kh, rng);
        m.w_logvar = Tensor::uniform(d, h, kh, rng);
        m.w_zh = Tensor::uniform(h, d, kd, rng);
        m.w_zc = Tensor::uniform(h, d, kd, rng);
        m.decoder.w_h = Tensor::uniform(4 * h, h, kh, rng);
        m.w_out = Tensor::uniform(1, h, kh, rng);
        for lstm in [&mut m.encoder, &mut m.decoder] {
            for j in h..2 * h {
                lstm.b.data[j] = 1.0;
            }
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.latent_dim, self.hidden, self.seq_len)
    }

    /// Every trainable tensor with its block name, in file order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("enc.w_x", &self.encoder.w_x),
            ("enc.w_h", &self.encoder.w_h),
            ("enc.b", &self.encoder.b),
            ("w_mu", &self.w_mu),
            ("b_mu", &self.b_mu),
            ("w_logvar", &self.w_logvar),
            ("b_logvar", &self.b_logvar),
            ("w_zh", &self.w_zh),
            ("b_zh", &self.b_zh),
            ("w_zc", &self.w_zc),
            ("b_zc", &self.b_zc),
            ("dec.w_h", &self.decoder.w_h),
            ("dec.b", &self.decoder.b),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("enc.w_x", &mut self.encoder.w_x),
            ("enc.w_h", &mut self.encoder.w_h),
            ("enc.b", &mut self.encoder.b),
            ("w_mu", &mut self.w_mu),
            ("b_mu", &mut self.b_mu),
            ("w_logvar", &mut self.w_logvar),
            ("b_logvar", &mut self.b_logvar),
            ("w_zh", &mut self.w_zh),
            ("b_zh", &mut self.b_zh),
            ("w_zc", &mut self.w_zc),
            ("b_zc", &mut self.b_zc),
            ("dec.w_h", &mut self.decoder.w_h),
            ("dec.b", &mut self.decoder.b),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    fn heads(&self, h_last: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            self.w_mu.affine(h_last, &self.b_mu),
            self.w_logvar.affine(h_last, &self.b_logvar),
        )
    }

    pub fn encode_values(&self, data: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if data.is_empty() {
            return Err(Error::Undefined("cannot encode an all-padding sequence".into()));
        }
        let zeros = vec![0.0; self.hidden];
        let trace = self.encoder.forward(data, data.len(), &zeros, &zeros);
        Ok(self.heads(trace.final_h()))
    }

    /// Posterior `(μ, logvar)` of one sequence; padding steps are skipped.
    pub fn encode(&self, input: &FixedVector) -> Result<(Vec<f64>, Vec<f64>)> {
        self.encode_values(input.data())
    }

    /// Writes the text model file.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MODEL_MAGIC} {MODEL_VERSION} d={} h={} L={}\n",
            self.latent_dim, self.hidden, self.seq_len
        );
        let _ = writeln!(out, "norm 1 2");
        let _ = writeln!(out, "{:e} {:e}", self.stats.mean, self.stats.std);
        for (name, t) in self.tensors() {
            write_block(&mut out, name, t);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty model file".into()))?;
        let (d, h, l) = parse_header(header)?;
        let mut model = Self::zeros(d, h, l);
        let norm = read_block(&mut lines, "norm", 1, 2)?;
        model.stats = CorpusStats {
            mean: norm.data[0],
            std: norm.data[1],
        };
        for (name, t) in model.tensors_mut() {
            *t = read_block(&mut lines, name, t.rows, t.cols)?;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format("trailing content after last block".into()));
        }
        if !model.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::formats::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != MODEL_MAGIC {
        return Err(Error::Format(format!("bad model header '{line}'")));
    }
    if parts[1] != MODEL_VERSION {
        return Err(Error::Format(format!(
            "model version {} is incompatible with {MODEL_VERSION}",
            parts[1]
        )));
    }
    let field = |s: &str, key: &str| -> Result<usize> {
        s.strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad header field '{s}'")))
    };
    Ok((field(parts[2], "d=")?, field(parts[3], "h=")?, field(parts[4], "L=")?))
}

pub fn write_block(out: &mut String, name: &str, t: &Tensor) {
    let _ = writeln!(out, "{name} {} {}", t.rows, t.cols);
    for r in 0..t.rows {
        let row: Vec<String> = t.data[r * t.cols..(r + 1) * t.cols]
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn read_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Tensor> {
    let head = lines
        .next()
        .ok_or_else(|| Error::Format(format!("missing block '{name}'")))?;
    let expected = format!("{name} {rows} {cols}");
    if head.trim() != expected {
        return Err(Error::Format(format!("expected block '{expected}', found '{head}'")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("block '{name}' truncated at row {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|e| Error::Format(format!("block '{name}': bad value '{tok}': {e}")))?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!("block '{name}' row {r}: expected {cols} values")));
        }
    }
    Ok(Tensor { rows, cols, data })
}

/// `z = μ + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)`.
pub fn reparameterize<R: Rng>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
    reparameterize_with(mu, logvar, &eps)
}

pub fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// `½ Σ (μ² + exp(logvar) − logvar − 1)`, the divergence from `N(0, I)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}
