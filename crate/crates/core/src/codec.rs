//! Message ↔ latent-residual codecs.
//!
//! [`CodeBook`] is a fixed spread-spectrum code over `k` orthonormal carriers;
//! its error rate under white noise is known in closed form. [`LinearCoder`]
//! is a trainable encoder/decoder pair optimized for bit recovery against a
//! pixel-space distortion penalty.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{dot, orthonormalize_columns, Matrix};
use crate::rng::seeded;
use crate::vae::LinearVAE;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    bits: Vec<bool>,
}

impl Message {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return invalid("message must carry at least one bit");
        }
        Ok(Self { bits })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Self {
        Self {
            bits: (0..k.max(1)).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Antipodal symbols `s_i = 2m_i − 1`.
    pub fn symbols(&self) -> impl Iterator<Item = f64> + '_ {
        self.bits.iter().map(|b| if *b { 1.0 } else { -1.0 })
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Parses `ceil(k/4)` hex digits, most significant bit first; padding
    /// bits past `k` must be zero.
    pub fn from_hex(hex: &str, k: usize) -> Result<Self> {
        let hex = hex.trim().trim_start_matches("0x");
        if k == 0 || hex.len() != k.div_ceil(4) {
            return invalid(format!(
                "{k}-bit message needs {} hex digits, got `{hex}`",
                k.div_ceil(4)
            ));
        }
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for ch in hex.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::InvalidParameter(format!("`{ch}` is not a hex digit")))?;
            for shift in (0..4).rev() {
                bits.push((v >> shift) & 1 == 1);
            }
        }
        if bits[k..].iter().any(|b| *b) {
            return invalid("non-zero padding bits in hex message");
        }
        bits.truncate(k);
        Self::new(bits)
    }

    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|c| {
                let v = c
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, b)| acc | ((*b as u32) << (3 - i)));
                std::char::from_digit(v, 16).expect("nibble")
            })
            .collect()
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn bit_accuracy(m: &Message, m_prime: &Message) -> Result<f64> {
    check_len(m.len(), m_prime.len())?;
    let hits = m.bits.iter().zip(&m_prime.bits).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / m.len() as f64)
}

/// `k` orthonormal carriers in `R^d` with a common amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodeBookDoc", into = "CodeBookDoc")]
pub struct CodeBook {
    /// Carrier `i` is row `i`.
    carriers: Matrix,
    amplitude: f64,
}

#[derive(Serialize, Deserialize)]
struct CodeBookDoc {
    amplitude: f64,
    carriers: Vec<Vec<f64>>,
}

impl TryFrom<CodeBookDoc> for CodeBook {
    type Error = Error;

    fn try_from(doc: CodeBookDoc) -> Result<Self> {
        let k = doc.carriers.len();
        let d = doc.carriers.first().map_or(0, Vec::len);
        if k == 0 || d == 0 || doc.carriers.iter().any(|c| c.len() != d) {
            return invalid("carriers must be a non-empty k×d array");
        }
        let cb = CodeBook {
            carriers: Matrix::from_rows(k, d, doc.carriers.concat()),
            amplitude: doc.amplitude,
        };
        cb.check_invariants()?;
        Ok(cb)
    }
}

impl From<CodeBook> for CodeBookDoc {
    fn from(cb: CodeBook) -> Self {
        CodeBookDoc {
            amplitude: cb.amplitude,
            carriers: (0..cb.bits()).map(|i| cb.carrier(i).to_vec()).collect(),
        }
    }
}

/// Seeded Gaussian carriers orthonormalized by Gram–Schmidt.
pub fn make_codebook(d: usize, k: usize, alpha: f64, seed: u64) -> Result<CodeBook> {
    if k == 0 || k > d {
        return invalid(format!("need 1 <= k <= d, got k={k}, d={d}"));
    }
    if !(alpha > 0.0) {
        return invalid(format!("amplitude must be positive, got {alpha}"));
    }
    let mut cols = Matrix::gaussian(&mut seeded(seed), d, k);
    if !orthonormalize_columns(&mut cols) {
        return invalid("degenerate carrier draw; choose another seed");
    }
    Ok(CodeBook {
        carriers: cols.transpose(),
        amplitude: alpha,
    })
}

impl CodeBook {
    fn check_invariants(&self) -> Result<()> {
        if self.bits() > self.dim() {
            return invalid("more carriers than dimensions");
        }
        if !(self.amplitude > 0.0) {
            return invalid("amplitude must be positive");
        }
        for i in 0..self.bits() {
            for j in 0..=i {
                let g = dot(self.carrier(i), self.carrier(j));
                let want = if i == j { 1.0 } else { 0.0 };
                if (g - want).abs() > 1e-10 {
                    return invalid(format!("carriers {i},{j} not orthonormal (gram {g})"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.carriers.cols()
    }

    pub fn bits(&self) -> usize {
        self.carriers.rows()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn carrier(&self, i: usize) -> &[f64] {
        self.carriers.row(i)
    }

    /// Carrier projections `u_i · z`.
    pub fn projections(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), z.len())?;
        Ok(self.carriers.mul_vec(z))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// δ = α·Σ s_i u_i.
pub fn encode_message(m: &Message, cb: &CodeBook) -> Result<Vec<f64>> {
    check_len(cb.bits(), m.len())?;
    let symbols: Vec<f64> = m.symbols().map(|s| s * cb.amplitude).collect();
    Ok(cb.carriers.tr_mul_vec(&symbols))
}

/// bit_i = 1 iff u_i·z ≥ 0 (an exact zero margin decodes to 1).
pub fn decode_message(z: &[f64], cb: &CodeBook) -> Result<Message> {
    let bits = cb.projections(z)?.into_iter().map(|p| p >= 0.0).collect();
    Message::new(bits)
}

/// Mean signed carrier margin in units of the amplitude: 1 on a clean
/// embedding of `m_expected`, zero-mean on carrier-free noise.
pub fn detection_stat(z: &[f64], m_expected: &Message, cb: &CodeBook) -> Result<f64> {
    check_len(cb.bits(), m_expected.len())?;
    let proj = cb.projections(z)?;
    let total: f64 = proj.iter().zip(m_expected.symbols()).map(|(p, s)| s * p).sum();
    Ok(total / (cb.bits() as f64 * cb.amplitude))
}

/// Hyper-parameters for [`train_linear_coder`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoderTraining {
    pub bits: usize,
    /// Weight of the pixel MSE term.
    pub lambda2: f64,
    /// Number of gradient steps.
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for CoderTraining {
    fn default() -> Self {
        Self {
            bits: 32,
            lambda2: 30.0,
            epochs: 2000,
            lr: 0.5,
            batch: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoder {
    /// d×k; residual = encoder · s.
    encoder: Matrix,
    /// k×d; logits = decoder · z + bias.
    decoder: Matrix,
    bias: Vec<f64>,
    pub training: CoderTraining,
    pub loss_curve: Vec<f64>,
}

impl LinearCoder {
    pub fn dim(&self) -> usize {
        self.encoder.rows()
    }

    pub fn bits(&self) -> usize {
        self.encoder.cols()
    }

    pub fn encode(&self, m: &Message) -> Result<Vec<f64>> {
        check_len(self.bits(), m.len())?;
        let s: Vec<f64> = m.symbols().collect();
        Ok(self.encoder.mul_vec(&s))
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), z.len())?;
        Ok(self
            .decoder
            .mul_vec(z)
            .into_iter()
            .zip(&self.bias)
            .map(|(l, b)| l + b)
            .collect())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Message> {
        Message::new(self.logits(z)?.into_iter().map(|l| l >= 0.0).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// −[m log σ(ℓ) + (1−m) log(1−σ(ℓ))], evaluated stably.
fn bce_with_logit(logit: f64, bit: bool) -> f64 {
    let y = if bit { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Trains the linear encoder/decoder pair by minibatch gradient descent on
/// `BCE(m, m′) + λ₂·MSE(x_r, x_w)`.
///
/// The distortion target is the autoencoder reconstruction
/// `x_r = dec(enc(x_o))` rather than the cover `x_o`, with
/// `x_w = dec(enc(x_o) + δ)`. For a linear autoencoder the cover cancels and
/// the term reduces to `‖dec·δ‖²/D`. Fresh random messages are drawn every
/// step; the decoder sees `z + δ` for latents `z` drawn from `latents`.
pub fn train_linear_coder(latents: &[Vec<f64>], vae: &LinearVAE, cfg: &CoderTraining) -> Result<LinearCoder> {
    if latents.is_empty() {
        return Err(Error::InsufficientData("training needs at least one latent".into()));
    }
    if !(cfg.lr > 0.0) {
        return invalid(format!("learning rate must be positive, got {}", cfg.lr));
    }
    if cfg.bits == 0 || cfg.batch == 0 {
        return invalid("bits and batch size must be positive");
    }
    if !(cfg.lambda2 >= 0.0) {
        return invalid("lambda2 must be non-negative");
    }
    let d = vae.latent_dim();
    for z in latents {
        check_len(d, z.len())?;
    }
    let k = cfg.bits;
    let pixel_dim = vae.pixel_dim() as f64;
    // decᵀdec, so that ‖dec·δ‖² = δᵀGδ
    let gram = vae.decoder().transpose().matmul(vae.decoder());

    let mut rng = seeded(cfg.seed);
    let mut encoder = Matrix::gaussian(&mut rng, d, k);
    let mut decoder = Matrix::gaussian(&mut rng, k, d);
    encoder.as_mut_slice().iter_mut().for_each(|v| *v *= 0.01);
    decoder.as_mut_slice().iter_mut().for_each(|v| *v *= 0.01);
    let mut bias = vec![0.0; k];
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    let b = cfg.batch as f64;
    for _ in 0..cfg.epochs {
        let mut g_enc = Matrix::zeros(d, k);
        let mut g_dec = Matrix::zeros(k, d);
        let mut g_bias = vec![0.0; k];
        let mut bce_total = 0.0;
        let mut mse_total = 0.0;
        for _ in 0..cfg.batch {
            let z = &latents[rng.random_range(0..latents.len())];
            let m = Message::random(&mut rng, k);
            let s: Vec<f64> = m.symbols().collect();
            let delta = encoder.mul_vec(&s);
            let zw: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let logits: Vec<f64> = decoder
                .mul_vec(&zw)
                .into_iter()
                .zip(&bias)
                .map(|(l, c)| l + c)
                .collect();
            let g_delta_mse = gram.mul_vec(&delta);
            mse_total += dot(&delta, &g_delta_mse) / pixel_dim;

            let mut dlogit = vec![0.0; k];
            for i in 0..k {
                bce_total += bce_with_logit(logits[i], m.bits()[i]);
                let y = if m.bits()[i] { 1.0 } else { 0.0 };
                dlogit[i] = (sigmoid(logits[i]) - y) / (b * k as f64);
            }
            for i in 0..k {
                g_bias[i] += dlogit[i];
                let row = g_dec.row_mut(i);
                for (g, x) in row.iter_mut().zip(&zw) {
                    *g += dlogit[i] * x;
                }
            }
            let mut g_delta = decoder.tr_mul_vec(&dlogit);
            let w = cfg.lambda2 * 2.0 / (b * pixel_dim);
            for (g, h) in g_delta.iter_mut().zip(&g_delta_mse) {
                *g += w * h;
            }
            for (r, gd) in g_delta.iter().enumerate() {
                for (g, si) in g_enc.row_mut(r).iter_mut().zip(&s) {
                    *g += gd * si;
                }
            }
        }
        loss_curve.push(bce_total / (b * k as f64) + cfg.lambda2 * mse_total / b);
        for (p, g) in encoder.as_mut_slice().iter_mut().zip(g_enc.as_slice()) {
            *p -= cfg.lr * g;
        }
        for (p, g) in decoder.as_mut_slice().iter_mut().zip(g_dec.as_slice()) {
            *p -= cfg.lr * g;
        }
        for (p, g) in bias.iter_mut().zip(&g_bias) {
            *p -= cfg.lr * g;
        }
    }
    Ok(LinearCoder {
        encoder,
        decoder,
        bias,
        training: *cfg,
        loss_curve,
    })
}
