//! The β-VAE: encoder/decoder pair, the β-weighted objective, and training.
//!
//! Both networks output a concatenated Gaussian head: the first half is the
//! mean, the second half is mapped through `softplus(·) + 1e-6` to a strictly
//! positive variance. The objective is
//!
//! ```text
//! elbo_β(x) = E_q[ log p(x_obs | z) ] − β · KL(q(z|x) ‖ N(0, I))
//! ```
//!
//! estimated with a single reparameterized latent sample. Scaling the KL term
//! by β is equivalent to raising the likelihood to the power 1/β, which for a
//! factorized Gaussian decoder just multiplies every predictive variance by β
//! — that equivalence is what the samplers exploit.
//!
//! By default the reconstruction term sums over *observed* coordinates only,
//! so missing cells (zero sentinels) neither pull the decoder toward zero nor
//! leak into the gradients. Set `loss_on_masked` to reproduce the classical
//! zero-imputed training objective.
//!
//! Gradients are assembled by hand from the network backward passes; they are
//! exact for the single-sample objective and are checked against central
//! finite differences in the tests.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, params_from_bytes, params_to_bytes, sigmoid, softplus_floor, Activation, AdamState,
    DenseNet, NetGrads, NetMeta, DEFAULT_LEARNING_RATE,
};
use crate::seed::derive_seed;

/// A factorized Gaussian with per-coordinate mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

const LOG_2PI: f64 = 1.8378770664093453;

impl GaussianHead {
    /// Split a raw `2m`-vector into mean (first half) and variance (second
    /// half through `softplus + 1e-6`).
    pub fn from_raw(raw: ArrayView1<f64>) -> Result<Self> {
        if raw.len() % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "a Gaussian head needs an even raw width, got {}",
                raw.len()
            )));
        }
        let m = raw.len() / 2;
        let mean = raw.slice(ndarray::s![..m]).to_owned();
        let variance = raw.slice(ndarray::s![m..]).mapv(softplus_floor);
        Ok(GaussianHead { mean, variance })
    }

    /// Dimension of the distribution.
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    /// True when the head has no coordinates.
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Log density of `x` under the full factorized Gaussian.
    pub fn log_density(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.log_density_subset(x, None)
    }

    /// Log density summed over a subset of coordinates (all when `None`).
    /// `x` is always indexed in full coordinates.
    pub fn log_density_subset(
        &self,
        x: ArrayView1<f64>,
        include: Option<&[usize]>,
    ) -> Result<f64> {
        if x.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "head has {} coordinates, point has {}",
                self.len(),
                x.len()
            )));
        }
        let term = |j: usize| {
            let dev = x[j] - self.mean[j];
            -0.5 * (LOG_2PI + self.variance[j].ln()) - dev * dev / (2.0 * self.variance[j])
        };
        let total = match include {
            None => (0..self.len()).map(term).sum(),
            Some(idx) => {
                for &j in idx {
                    if j >= self.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "coordinate {j} out of range for a {}-dim head",
                            self.len()
                        )));
                    }
                }
                idx.iter().map(|&j| term(j)).sum()
            }
        };
        Ok(total)
    }

    /// Draw one sample, `mean + sqrt(variance) ⊙ ε`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let mut out = self.mean.clone();
        for (o, &v) in out.iter_mut().zip(self.variance.iter()) {
            let eps: f64 = rng.sample(StandardNormal);
            *o += v.sqrt() * eps;
        }
        out
    }
}

/// Log density of `z` under the standard normal prior.
pub fn log_standard_normal(z: ArrayView1<f64>) -> f64 {
    z.iter().map(|&v| -0.5 * (LOG_2PI + v * v)).sum()
}

/// KL divergence from a factorized Gaussian to the standard normal prior,
/// `½ Σ (σ² + μ² − 1 − ln σ²)`.
pub fn kl_to_prior(q: &GaussianHead) -> f64 {
    q.mean
        .iter()
        .zip(q.variance.iter())
        .map(|(&m, &v)| 0.5 * (v + m * m - 1.0 - v.ln()))
        .sum()
}

/// Architecture of the encoder/decoder pair, independent of data width.
///
/// The encoder runs `D → hidden… → 2K` and the decoder mirrors it,
/// `K → reversed hidden… → 2D`, with tanh hidden layers and identity output
/// layers (the Gaussian heads apply their own links).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden layer widths, encoder order.
    pub hidden: Vec<usize>,
    /// Latent dimension K.
    pub latent_dim: usize,
}

impl ModelSpec {
    /// Validate widths; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim == 0 {
            problems.push("latent_dim must be positive".to_string());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            problems.push("hidden widths must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }

    /// Build a freshly initialized model for `input_dim` columns.
    pub fn build(&self, input_dim: usize, beta: f64, seed: u64) -> Result<BetaVae> {
        self.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(&self.hidden);
        enc_dims.push(2 * self.latent_dim);
        let mut dec_dims = vec![self.latent_dim];
        dec_dims.extend(self.hidden.iter().rev().copied());
        dec_dims.push(2 * input_dim);
        let enc_acts = hidden_then_identity(enc_dims.len() - 1);
        let dec_acts = hidden_then_identity(dec_dims.len() - 1);
        let encoder = DenseNet::new(&enc_dims, &enc_acts, derive_seed(seed, "encoder"))?;
        let decoder = DenseNet::new(&dec_dims, &dec_acts, derive_seed(seed, "decoder"))?;
        BetaVae::from_parts(encoder, decoder, self.latent_dim, beta)
    }
}

fn hidden_then_identity(n_layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Tanh; n_layers];
    *acts.last_mut().expect("at least one layer") = Activation::Identity;
    acts
}

/// Encoder/decoder pair with the KL weight β baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVae {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub latent_dim: usize,
    pub beta: f64,
}

impl BetaVae {
    /// Assemble from explicit networks, checking the head widths line up:
    /// encoder `D → 2K`, decoder `K → 2D`.
    pub fn from_parts(
        encoder: DenseNet,
        decoder: DenseNet,
        latent_dim: usize,
        beta: f64,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if latent_dim == 0 {
            problems.push("latent_dim must be positive".to_string());
        }
        // β = 0 is a valid objective (pure autoencoder); the samplers, which
        // divide by β, enforce positivity themselves.
        if !beta.is_finite() || beta < 0.0 {
            problems.push(format!("beta must be non-negative and finite, got {beta}"));
        }
        if encoder.output_dim() != 2 * latent_dim {
            problems.push(format!(
                "encoder outputs {} values but a {latent_dim}-dim latent head needs {}",
                encoder.output_dim(),
                2 * latent_dim
            ));
        }
        if decoder.input_dim() != latent_dim {
            problems.push(format!(
                "decoder takes {} inputs but the latent dimension is {latent_dim}",
                decoder.input_dim()
            ));
        }
        if decoder.output_dim() != 2 * encoder.input_dim() {
            problems.push(format!(
                "decoder outputs {} values but a {}-column head needs {}",
                decoder.output_dim(),
                encoder.input_dim(),
                2 * encoder.input_dim()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems.join("\n")));
        }
        Ok(BetaVae {
            encoder,
            decoder,
            latent_dim,
            beta,
        })
    }

    /// Number of data columns the model expects.
    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Approximate posterior `q(z|x)`.
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<GaussianHead> {
        GaussianHead::from_raw(self.encoder.forward(x)?.view())
    }

    /// Decoder likelihood head `p(x|z)` (unit power; the samplers apply the
    /// 1/β tempering themselves).
    pub fn decode(&self, z: ArrayView1<f64>) -> Result<GaussianHead> {
        GaussianHead::from_raw(self.decoder.forward(z)?.view())
    }

    /// Single-sample β-ELBO and its exact gradients for one row.
    ///
    /// `obs_mask[j] == true` includes coordinate `j` in the reconstruction
    /// term; `noise` is the reparameterization draw `ε` (length K), passed in
    /// so the estimator is a deterministic function of its arguments.
    ///
    /// Coordinates excluded by the mask are zeroed before encoding (the
    /// zero-imputation convention), so the result depends only on the
    /// values at included coordinates — exactly.
    pub fn elbo(
        &self,
        x: ArrayView1<f64>,
        obs_mask: &[bool],
        noise: ArrayView1<f64>,
    ) -> Result<ElboEval> {
        let d = self.input_dim();
        let k = self.latent_dim;
        if x.len() != d || obs_mask.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "model expects {d} columns, got row of {} with mask of {}",
                x.len(),
                obs_mask.len()
            )));
        }
        if noise.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "latent noise must have {k} entries, got {}",
                noise.len()
            )));
        }

        // Encoder forward and head split.
        let enc_input =
            Array1::from_shape_fn(d, |j| if obs_mask[j] { x[j] } else { 0.0 });
        let (enc_raw, enc_trace) = self.encoder.forward_trace(enc_input.view())?;
        let q_mean = enc_raw.slice(ndarray::s![..k]);
        let q_raw_var = enc_raw.slice(ndarray::s![k..]);
        let q_var = q_raw_var.mapv(softplus_floor);

        // Reparameterized latent.
        let mut z = Array1::zeros(k);
        for i in 0..k {
            z[i] = q_mean[i] + q_var[i].sqrt() * noise[i];
        }

        // Decoder forward and head split.
        let (dec_raw, dec_trace) = self.decoder.forward_trace(z.view())?;
        let p_mean = dec_raw.slice(ndarray::s![..d]);
        let p_raw_var = dec_raw.slice(ndarray::s![d..]);
        let p_var = p_raw_var.mapv(softplus_floor);

        // Reconstruction over included coordinates; KL in closed form.
        let mut recon = 0.0;
        for j in 0..d {
            if obs_mask[j] {
                let dev = x[j] - p_mean[j];
                recon += -0.5 * (LOG_2PI + p_var[j].ln()) - dev * dev / (2.0 * p_var[j]);
            }
        }
        let mut kl = 0.0;
        for i in 0..k {
            kl += 0.5 * (q_var[i] + q_mean[i] * q_mean[i] - 1.0 - q_var[i].ln());
        }
        if !recon.is_finite() {
            return Err(Error::NonFinite {
                context: "reconstruction term".into(),
            });
        }
        if !kl.is_finite() {
            return Err(Error::NonFinite {
                context: "kl term".into(),
            });
        }
        let value = recon - self.beta * kl;

        // Upstream gradient into the decoder's raw outputs.
        let mut dec_upstream = Array1::zeros(2 * d);
        for j in 0..d {
            if obs_mask[j] {
                let dev = x[j] - p_mean[j];
                let d_mean = dev / p_var[j];
                let d_var = -0.5 / p_var[j] + dev * dev / (2.0 * p_var[j] * p_var[j]);
                dec_upstream[j] = d_mean;
                dec_upstream[d + j] = d_var * sigmoid(p_raw_var[j]);
            }
        }
        let (decoder_grads, dz) = self.decoder.backward(&dec_trace, dec_upstream.view())?;

        // Upstream gradient into the encoder's raw outputs: the
        // reconstruction path flows through z, the KL path is closed-form.
        let mut enc_upstream = Array1::zeros(2 * k);
        for i in 0..k {
            enc_upstream[i] = dz[i] - self.beta * q_mean[i];
            let dz_dvar = noise[i] / (2.0 * q_var[i].sqrt());
            let dkl_dvar = 0.5 * (1.0 - 1.0 / q_var[i]);
            enc_upstream[k + i] =
                (dz[i] * dz_dvar - self.beta * dkl_dvar) * sigmoid(q_raw_var[i]);
        }
        let (encoder_grads, _) = self.encoder.backward(&enc_trace, enc_upstream.view())?;

        Ok(ElboEval {
            value,
            recon,
            kl,
            latent: z,
            encoder_grads,
            decoder_grads,
        })
    }

    /// Write the model as one line of JSON (architecture, β, training
    /// provenance), a newline, then the encoder and decoder parameter blobs.
    /// Byte-stable: the same model always serializes identically.
    pub fn save(&self, meta: &NetMeta, path: &Path) -> Result<()> {
        let header = ModelHeader {
            latent_dim: self.latent_dim,
            beta: self.beta,
            seed: meta.seed,
            training_step: meta.training_step,
            encoder_dims: self.encoder.dims(),
            encoder_activations: self.encoder.activations(),
            decoder_dims: self.decoder.dims(),
            decoder_activations: self.decoder.activations(),
        };
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let header_line = serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
        file.write_all(header_line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .and_then(|_| file.write_all(&params_to_bytes(&self.encoder)))
            .and_then(|_| file.write_all(&params_to_bytes(&self.decoder)))
            .map_err(|e| Error::io(path, e))
    }

    /// Read a model written by [`BetaVae::save`].
    pub fn load(path: &Path) -> Result<(Self, NetMeta)> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::CorruptArtifact {
                path: path.to_path_buf(),
                message: "no header line".into(),
            }
        })?;
        let header: ModelHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::json(path, e))?;
        let blob = &bytes[newline + 1..];
        let enc_len: usize = header
            .encoder_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
            * 8;
        if blob.len() < enc_len {
            return Err(Error::CorruptArtifact {
                path: path.to_path_buf(),
                message: "parameter blob shorter than the encoder".into(),
            });
        }
        let mk_corrupt = |e: Error| match e {
            Error::ShapeMismatch(msg) => Error::CorruptArtifact {
                path: path.to_path_buf(),
                message: msg,
            },
            other => other,
        };
        let encoder = params_from_bytes(
            &header.encoder_dims,
            &header.encoder_activations,
            &blob[..enc_len],
        )
        .map_err(mk_corrupt)?;
        let decoder = params_from_bytes(
            &header.decoder_dims,
            &header.decoder_activations,
            &blob[enc_len..],
        )
        .map_err(mk_corrupt)?;
        let model = BetaVae::from_parts(encoder, decoder, header.latent_dim, header.beta)?;
        Ok((
            model,
            NetMeta {
                seed: header.seed,
                training_step: header.training_step,
            },
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    latent_dim: usize,
    beta: f64,
    seed: u64,
    training_step: u64,
    encoder_dims: Vec<usize>,
    encoder_activations: Vec<Activation>,
    decoder_dims: Vec<usize>,
    decoder_activations: Vec<Activation>,
}

/// Value and exact gradients of the single-sample β-ELBO for one row.
#[derive(Debug, Clone)]
pub struct ElboEval {
    /// `recon − β · kl`.
    pub value: f64,
    /// Reconstruction log likelihood over the included coordinates.
    pub recon: f64,
    /// `KL(q(z|x) ‖ N(0, I))`.
    pub kl: f64,
    /// The reparameterized latent that produced this estimate.
    pub latent: Array1<f64>,
    pub encoder_grads: NetGrads,
    pub decoder_grads: NetGrads,
}

/// Minibatch training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// KL weight; the trained model carries this β.
    pub beta: f64,
    /// Include missing (sentinel-valued) cells in the reconstruction term.
    /// Off by default: the objective should not reward reconstructing
    /// sentinels.
    pub loss_on_masked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            beta: 1.0,
            loss_on_masked: false,
        }
    }
}

impl TrainConfig {
    /// Validate ranges; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            problems.push(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            ));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            problems.push(format!("beta must be positive and finite, got {}", self.beta));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n")))
        }
    }
}

/// A model captured after a given number of completed epochs.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Completed epochs at capture time.
    pub epoch: usize,
    /// Optimizer steps applied so far.
    pub steps: u64,
    pub model: BetaVae,
}

/// Output of [`train_with_snapshots`].
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: BetaVae,
    /// Per-epoch mean negative ELBO (the minimized loss), in epoch order.
    pub trace: Vec<f64>,
    /// Total optimizer steps applied.
    pub steps: u64,
    /// Requested intermediate models, ascending by epoch.
    pub snapshots: Vec<Snapshot>,
}

/// Train with Adam on minibatches of the negative β-ELBO.
///
/// Returns the trained model and the per-epoch loss trace. The run is a pure
/// function of `(model, data, cfg)`: rows are shuffled and noise drawn from a
/// single ChaCha8 stream seeded by `cfg.seed`.
pub fn train(model: &BetaVae, data: &DataMatrix, cfg: &TrainConfig) -> Result<(BetaVae, Vec<f64>)> {
    let run = train_with_snapshots(model, data, cfg, &[])?;
    Ok((run.model, run.trace))
}

/// [`train`], additionally capturing the model after each epoch count in
/// `snapshot_epochs` (each must be ≤ `cfg.epochs`; an entry of `e` means
/// "after `e` completed epochs"). One training run serves a whole epoch grid.
pub fn train_with_snapshots(
    model: &BetaVae,
    data: &DataMatrix,
    cfg: &TrainConfig,
    snapshot_epochs: &[usize],
) -> Result<TrainRun> {
    cfg.validate()?;
    if model.input_dim() != data.n_cols() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} columns but the data has {}",
            model.input_dim(),
            data.n_cols()
        )));
    }
    if let Some(&bad) = snapshot_epochs.iter().find(|&&e| e == 0 || e > cfg.epochs) {
        return Err(Error::InvalidConfig(format!(
            "snapshot epoch {bad} outside 1..={}",
            cfg.epochs
        )));
    }

    let mut model = model.clone();
    model.beta = cfg.beta;
    let n = data.n_rows();
    let k = model.latent_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_params = model.encoder.num_params() + model.decoder.num_params();
    let mut adam = AdamState::new(n_params, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        // Hand-rolled Fisher–Yates so the permutation depends only on the
        // ChaCha8 stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut enc_grads = NetGrads::zeros_like(&model.encoder);
            let mut dec_grads = NetGrads::zeros_like(&model.decoder);
            let scale = -1.0 / chunk.len() as f64; // mean *negative* elbo
            for &i in chunk {
                let mut noise = Array1::zeros(k);
                for e in noise.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                let obs_mask: Vec<bool> = (0..data.n_cols())
                    .map(|j| cfg.loss_on_masked || !data.mask[(i, j)])
                    .collect();
                let eval = model
                    .elbo(data.values.row(i), &obs_mask, noise.view())
                    .map_err(|e| match e {
                        Error::NonFinite { context } => Error::Diverged {
                            epoch,
                            batch: batch_idx,
                            message: format!("non-finite {context}"),
                        },
                        other => other,
                    })?;
                epoch_loss -= eval.value;
                enc_grads.add_scaled(&eval.encoder_grads, scale);
                dec_grads.add_scaled(&eval.decoder_grads, scale);
            }

            let mut params = model.encoder.params_flat();
            params.extend(model.decoder.params_flat());
            let mut grads = enc_grads.to_flat();
            grads.extend(dec_grads.to_flat());
            let (new_params, new_adam) = adam_step(&params, &grads, &adam).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    message: "non-finite gradient".into(),
                },
                other => other,
            })?;
            adam = new_adam;
            let n_enc = model.encoder.num_params();
            model.encoder.set_params_flat(&new_params[..n_enc])?;
            model.decoder.set_params_flat(&new_params[n_enc..])?;
        }
        let epoch_mean = epoch_loss / n as f64;
        if !epoch_mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                message: "non-finite epoch loss".into(),
            });
        }
        trace.push(epoch_mean);
        if snapshot_epochs.contains(&(epoch + 1)) {
            snapshots.push(Snapshot {
                epoch: epoch + 1,
                steps: adam.step,
                model: model.clone(),
            });
        }
    }

    snapshots.sort_by_key(|s| s.epoch);
    Ok(TrainRun {
        model,
        trace,
        steps: adam.step,
        snapshots,
    })
}
