//! Linear stand-in for the latent ↔ pixel autoencoder.
//!
//! The decoder is a random orthonormal frame `F ∈ R^{D×d}` and the encoder is
//! `Fᵀ`, so encode∘decode is the identity on latents while decode∘encode is a
//! projection that discards the `D − d` dimensional complement. Optional
//! additive noise on decode models an irreducible reconstruction gap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::linalg::{orthonormalize_columns, standard_normal_vec, Matrix};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    #[serde(rename = "D")]
    pub pixel_dim: usize,
    #[serde(rename = "d")]
    pub latent_dim: usize,
    pub sigma_r: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_perturbation: Option<DecoderPerturbation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderPerturbation {
    pub scale: f64,
    pub seed: u64,
}

impl VaeSpec {
    /// D = 4d with the default reconstruction noise.
    pub fn for_latent_dim(d: usize, seed: u64) -> Self {
        Self {
            pixel_dim: 4 * d,
            latent_dim: d,
            sigma_r: 0.05,
            seed,
            decoder_perturbation: None,
        }
    }

    pub fn build(&self) -> Result<LinearVAE> {
        let vae = make_vae(self.pixel_dim, self.latent_dim, self.sigma_r, self.seed)?;
        match self.decoder_perturbation {
            Some(p) => perturb_decoder(&vae, p.scale, p.seed),
            None => Ok(vae),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearVAE {
    spec: VaeSpec,
    enc: Matrix,
    dec: Matrix,
}

pub fn make_vae(pixel_dim: usize, latent_dim: usize, sigma_r: f64, seed: u64) -> Result<LinearVAE> {
    if latent_dim == 0 || pixel_dim < latent_dim {
        return invalid(format!("need D >= d >= 1, got D={pixel_dim}, d={latent_dim}"));
    }
    if !(sigma_r >= 0.0) {
        return invalid(format!("reconstruction noise must be non-negative, got {sigma_r}"));
    }
    let mut rng = seeded(seed);
    let mut frame = Matrix::gaussian(&mut rng, pixel_dim, latent_dim);
    if !orthonormalize_columns(&mut frame) {
        return invalid("degenerate random frame; choose another seed");
    }
    Ok(LinearVAE {
        spec: VaeSpec {
            pixel_dim,
            latent_dim,
            sigma_r,
            seed,
            decoder_perturbation: None,
        },
        enc: frame.transpose(),
        dec: frame,
    })
}

/// Returns a copy whose decoder is `dec + scale·G/(√D + √d)` for a seeded
/// Gaussian `G`, giving a relative spectral perturbation of about `scale`.
/// The encoder is unchanged.
pub fn perturb_decoder(v: &LinearVAE, scale: f64, seed: u64) -> Result<LinearVAE> {
    if !(scale >= 0.0) {
        return invalid(format!("perturbation scale must be non-negative, got {scale}"));
    }
    let mut out = v.clone();
    out.spec.decoder_perturbation = Some(DecoderPerturbation { scale, seed });
    if scale == 0.0 {
        return Ok(out);
    }
    let (dd, d) = (v.pixel_dim(), v.latent_dim());
    let g = Matrix::gaussian(&mut seeded(seed), dd, d);
    let k = scale / ((dd as f64).sqrt() + (d as f64).sqrt());
    for (o, gi) in out.dec.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *o += k * gi;
    }
    Ok(out)
}

impl LinearVAE {
    pub fn spec(&self) -> VaeSpec {
        self.spec
    }

    pub fn pixel_dim(&self) -> usize {
        self.spec.pixel_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn sigma_r(&self) -> f64 {
        self.spec.sigma_r
    }

    pub fn encoder(&self) -> &Matrix {
        &self.enc
    }

    pub fn decoder(&self) -> &Matrix {
        &self.dec
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.pixel_dim(), x.len())?;
        Ok(self.enc.mul_vec(x))
    }

    /// `dec·z` without reconstruction noise.
    pub fn decode_clean(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.latent_dim(), z.len())?;
        Ok(self.dec.mul_vec(z))
    }

    /// `dec·z + σ_r·η`.
    pub fn decode<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut x = self.decode_clean(z)?;
        if self.sigma_r() > 0.0 {
            let eta = standard_normal_vec(rng, x.len());
            for (xi, e) in x.iter_mut().zip(eta) {
                *xi += self.sigma_r() * e;
            }
        }
        Ok(x)
    }

    /// Deterministic reconstruction `dec·enc·x`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decode_clean(&self.encode(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: VaeSpec = serde_json::from_str(json)?;
        spec.build()
    }
}

pub fn vae_encode(v: &LinearVAE, x: &[f64]) -> Result<Vec<f64>> {
    v.encode(x)
}

pub fn vae_decode<R: Rng + ?Sized>(v: &LinearVAE, z: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    v.decode(z, rng)
}
