use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::nnet::{Activation, Mlp, Tensor};

/// Layer sizes and initialisation of a Koopman autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub activation: Activation,
    /// A starts at `a_diagonal·I` plus uniform noise of this half-width.
    pub a_diagonal: f64,
    pub a_noise: f64,
    /// Half-width of the uniform initialisation of B.
    pub b_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![64, 64],
            latent: 8,
            activation: Activation::Tanh,
            a_diagonal: 0.99,
            a_noise: 1e-3,
            b_scale: 1e-2,
        }
    }
}

/// Encoder φ, decoder φ⁻¹, and the bias-free latent maps A and B, together
/// with the normaliser the networks were trained under.
///
/// The latent state evolves as `z⁺ = A·z + B·u` with `u` the normalised input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub a_net: Mlp,
    pub b_net: Mlp,
    pub normalizer: Normalizer,
}

impl KoopmanModel {
    pub fn new(encoder: Mlp, decoder: Mlp, a_net: Mlp, b_net: Mlp, normalizer: Normalizer) -> Result<Self> {
        let (nx, nu) = (normalizer.state_dim(), normalizer.input_dim());
        let n = encoder.out_dim();
        let ok = encoder.in_dim() == nx
            && decoder.in_dim() == n
            && decoder.out_dim() == nx
            && a_net.in_dim() == n
            && a_net.out_dim() == n
            && b_net.in_dim() == nu
            && b_net.out_dim() == n
            && a_net.layers().len() == 1
            && b_net.layers().len() == 1
            && a_net.layers()[0].bias.is_none()
            && b_net.layers()[0].bias.is_none();
        if !ok {
            return Err(Error::dims(format!("inconsistent Koopman model: state {nx}, input {nu}, latent {n}")));
        }
        Ok(KoopmanModel { encoder, decoder, a_net, b_net, normalizer })
    }

    /// Seeded random initialisation.
    pub fn init(arch: &Architecture, normalizer: Normalizer, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nx, nu, n) = (normalizer.state_dim(), normalizer.input_dim(), arch.latent);
        let mut enc_dims = vec![nx];
        enc_dims.extend(&arch.hidden);
        enc_dims.push(n);
        let mut dec_dims = vec![n];
        dec_dims.extend(arch.hidden.iter().rev());
        dec_dims.push(nx);
        let encoder = Mlp::glorot(&enc_dims, arch.activation, Activation::Identity, true, &mut rng)?;
        let decoder = Mlp::glorot(&dec_dims, arch.activation, Activation::Identity, true, &mut rng)?;
        let mut a = Tensor::identity(n).scale(arch.a_diagonal);
        for v in a.values_mut() {
            *v += rng.random_range(-1.0..1.0) * arch.a_noise;
        }
        let b_vals = (0..n * nu).map(|_| rng.random_range(-1.0..1.0) * arch.b_scale).collect();
        let b = Tensor::from_vec(n, nu, b_vals)?;
        KoopmanModel::new(encoder, decoder, Mlp::linear_map(a), Mlp::linear_map(b), normalizer)
    }

    pub fn state_dim(&self) -> usize {
        self.normalizer.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// A as an n×n matrix.
    pub fn a_matrix(&self) -> &Tensor {
        &self.a_net.layers()[0].weight
    }

    /// B as an n×m matrix.
    pub fn b_matrix(&self) -> &Tensor {
        &self.b_net.layers()[0].weight
    }

    /// z = φ(normalize(x)); normalisation is skipped when `already_normalized`.
    pub fn encode(&self, x: &[f64], already_normalized: bool) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::dims(format!("state of length {} for model with {}", x.len(), self.state_dim())));
        }
        if already_normalized {
            self.encoder.infer_vec(x)
        } else {
            self.encoder.infer_vec(&self.normalizer.normalize_state(x)?)
        }
    }

    /// Encodes many raw states in one batched pass.
    pub fn encode_batch(&self, xs: &[Vec<f64>]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| self.normalizer.normalize_state(x)).collect::<Result<_>>()?;
        self.encoder.infer(&Tensor::from_rows(&rows)?)
    }

    /// φ⁻¹(z) in normalised state units.
    pub fn decode_normalized(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::dims(format!("latent of length {}", z.len())));
        }
        self.decoder.infer_vec(z)
    }

    /// φ⁻¹(z) in raw state units.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.normalizer.denormalize_state(&self.decode_normalized(z)?)
    }

    /// A·z + B·u with `u` already normalised.
    pub fn latent_step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() || u.len() != self.input_dim() {
            return Err(Error::dims(format!("latent step with z of {} and u of {}", z.len(), u.len())));
        }
        let az = self.a_net.infer_vec(z)?;
        let bu = self.b_net.infer_vec(u)?;
        Ok(az.iter().zip(bu).map(|(a, b)| a + b).collect())
    }

    /// Open-loop latent rollout decoded at every step. `inputs` are raw; the
    /// output has one raw state per input, the first being φ⁻¹(φ(x₀)).
    pub fn predict_rollout(&self, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut z = self.encode(x0, false)?;
        let mut out = Vec::with_capacity(inputs.len());
        for (k, u) in inputs.iter().enumerate() {
            out.push(self.decode(&z)?);
            if k + 1 < inputs.len() {
                z = self.latent_step(&z, &self.normalizer.normalize_input(u)?)?;
            }
        }
        Ok(out)
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params() + self.a_net.num_params() + self.b_net.num_params()
    }

    /// Σ‖W‖² across all four networks (biases excluded).
    pub fn weight_sum_squares(&self) -> f64 {
        self.encoder.weight_sum_squares()
            + self.decoder.weight_sum_squares()
            + self.a_net.weight_sum_squares()
            + self.b_net.weight_sum_squares()
    }

    /// Every trainable tensor in a fixed order: encoder, decoder, A, B.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v.extend(self.a_net.params_mut());
        v.extend(self.b_net.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v.extend(self.a_net.params());
        v.extend(self.b_net.params());
        v
    }
}

/// Training metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub train_total: Option<f64>,
    pub val_total: Option<f64>,
    pub architecture: Option<Architecture>,
}

/// Single-file JSON checkpoint: layer shapes, activation tags, flattened
/// weights, normaliser, and training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: KoopmanModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&s)?;
        // re-validate dimensions of the deserialised networks
        let m = c.model;
        let model = KoopmanModel::new(
            Mlp::new(m.encoder.layers().to_vec())?,
            Mlp::new(m.decoder.layers().to_vec())?,
            Mlp::new(m.a_net.layers().to_vec())?,
            Mlp::new(m.b_net.layers().to_vec())?,
            m.normalizer,
        )?;
        Ok(Checkpoint { model, meta: c.meta })
    }
}
