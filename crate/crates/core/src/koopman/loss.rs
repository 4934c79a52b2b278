use serde::{Deserialize, Serialize};

use super::model::KoopmanModel;
use crate::error::{Error, Result};
use crate::nnet::{spectral_radius, MlpGrads, Tensor};
use crate::parallel::{map_ordered, Execution};

/// Rows per gradient chunk. Fixed so the reduction order does not depend on
/// the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub linear: f64,
    pub stability: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { recon: 1.0, linear: 50.0, stability: 1.0, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub linear: f64,
    pub stability: f64,
    pub l2_reg: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn from_terms(recon: f64, linear: f64, stability: f64, l2_reg: f64, w: LossWeights) -> Self {
        LossBreakdown {
            recon,
            linear,
            stability,
            l2_reg,
            total: w.recon * recon + w.linear * linear + w.stability * stability + w.l2 * l2_reg,
            weights: w,
        }
    }
}

/// Parameter gradients for the four networks of a [`KoopmanModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub a: MlpGrads,
    pub b: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_like(m: &KoopmanModel) -> Self {
        ModelGrads {
            encoder: MlpGrads::zeros_like(&m.encoder),
            decoder: MlpGrads::zeros_like(&m.decoder),
            a: MlpGrads::zeros_like(&m.a_net),
            b: MlpGrads::zeros_like(&m.b_net),
        }
    }

    pub fn add_assign(&mut self, o: &ModelGrads) {
        self.encoder.add_assign(&o.encoder);
        self.decoder.add_assign(&o.decoder);
        self.a.add_assign(&o.a);
        self.b.add_assign(&o.b);
    }

    /// Flattened in the order of [`KoopmanModel::params_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.decoder.flatten());
        v.extend(self.a.flatten());
        v.extend(self.b.flatten());
        v
    }

    fn weights_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder
            .weights
            .iter_mut()
            .chain(self.decoder.weights.iter_mut())
            .chain(self.a.weights.iter_mut())
            .chain(self.b.weights.iter_mut())
    }
}

fn check_batch(m: &KoopmanModel, x: &Tensor, u: &Tensor, xn: &Tensor) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let (nx, nu) = (m.state_dim(), m.input_dim());
    if x.cols() != nx || xn.cols() != nx || u.cols() != nu || u.rows() != x.rows() || xn.rows() != x.rows() {
        return Err(Error::dims(format!(
            "batch shapes {:?}, {:?}, {:?} for model with state {nx}, input {nu}",
            x.shape(),
            u.shape(),
            xn.shape()
        )));
    }
    Ok(())
}

fn row_chunks(rows: usize) -> Vec<(usize, usize)> {
    (0..rows).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(rows))).collect()
}

/// Sums of squared reconstruction and linearity residuals over a chunk,
/// plus their gradients when `scale` is given (the derivative of
/// `w.recon·recon_sum·scale + w.linear·linear_sum·scale`).
fn chunk_pass(
    m: &KoopmanModel,
    x: &Tensor,
    u: &Tensor,
    xn: &Tensor,
    grad: Option<(LossWeights, f64)>,
) -> Result<(f64, f64, Option<ModelGrads>)> {
    let (z, tz) = m.encoder.forward_traced(x)?;
    let (zn, tzn) = m.encoder.forward_traced(xn)?;
    let (xh, td) = m.decoder.forward_traced(&z)?;
    let (az, ta) = m.a_net.forward_traced(&z)?;
    let (bu, tb) = m.b_net.forward_traced(u)?;
    let recon_err = x.sub(&xh)?;
    let lin_err = zn.sub(&az.add(&bu)?)?;
    let recon_sum = recon_err.sum_squares();
    let lin_sum = lin_err.sum_squares();
    let Some((w, scale)) = grad else {
        return Ok((recon_sum, lin_sum, None));
    };
    let mut g = ModelGrads::zeros_like(m);
    let d_xh = recon_err.scale(-2.0 * w.recon * scale);
    let dz_dec = m.decoder.backward_traced(&td, &d_xh, &mut g.decoder)?;
    let d_zn = lin_err.scale(2.0 * w.linear * scale);
    m.encoder.backward_traced(&tzn, &d_zn, &mut g.encoder)?;
    let d_pred = d_zn.scale(-1.0);
    let dz_a = m.a_net.backward_traced(&ta, &d_pred, &mut g.a)?;
    m.b_net.backward_traced(&tb, &d_pred, &mut g.b)?;
    let dz = dz_dec.add(&dz_a)?;
    m.encoder.backward_traced(&tz, &dz, &mut g.encoder)?;
    Ok((recon_sum, lin_sum, Some(g)))
}

fn batch_pass(
    m: &KoopmanModel,
    x: &Tensor,
    u: &Tensor,
    xn: &Tensor,
    w: LossWeights,
    with_grad: bool,
    exec: Execution,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    check_batch(m, x, u, xn)?;
    let n = x.rows() as f64;
    let grad = with_grad.then_some((w, 1.0 / n));
    let parts = map_ordered(exec, &row_chunks(x.rows()), |&(s, e)| {
        chunk_pass(m, &x.slice_rows(s, e), &u.slice_rows(s, e), &xn.slice_rows(s, e), grad)
    });
    let mut recon = 0.0;
    let mut linear = 0.0;
    let mut grads = with_grad.then(|| ModelGrads::zeros_like(m));
    for part in parts {
        let (r, l, g) = part?;
        recon += r;
        linear += l;
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.add_assign(&g);
        }
    }
    let (rho, drho) = spectral_radius(m.a_matrix())?;
    let excess = (rho - 1.0).max(0.0);
    let l2 = m.weight_sum_squares();
    let loss = LossBreakdown::from_terms(recon / n, linear / n, excess * excess, l2, w);
    if let Some(g) = grads.as_mut() {
        if excess > 0.0 {
            let c = 2.0 * w.stability * excess;
            for (gv, d) in g.a.weights[0].values_mut().iter_mut().zip(drho.values()) {
                *gv += c * d;
            }
        }
        let params: Vec<&Tensor> = [&m.encoder, &m.decoder, &m.a_net, &m.b_net]
            .into_iter()
            .flat_map(|net| net.layers().iter().map(|l| &l.weight))
            .collect();
        for (gw, wt) in g.weights_mut().zip(params) {
            for (gv, v) in gw.values_mut().iter_mut().zip(wt.values()) {
                *gv += 2.0 * w.l2 * v;
            }
        }
    }
    Ok((loss, grads))
}

/// Loss terms on a batch of normalised `(x, u, x⁺)` rows.
pub fn compute_loss(
    m: &KoopmanModel,
    x: &Tensor,
    u: &Tensor,
    x_next: &Tensor,
    w: LossWeights,
) -> Result<LossBreakdown> {
    compute_loss_with(m, x, u, x_next, w, Execution::default())
}

pub fn compute_loss_with(
    m: &KoopmanModel,
    x: &Tensor,
    u: &Tensor,
    x_next: &Tensor,
    w: LossWeights,
    exec: Execution,
) -> Result<LossBreakdown> {
    Ok(batch_pass(m, x, u, x_next, w, false, exec)?.0)
}

/// Loss terms and the gradient of `total` with respect to every parameter.
pub fn loss_and_grads(
    m: &KoopmanModel,
    x: &Tensor,
    u: &Tensor,
    x_next: &Tensor,
    w: LossWeights,
    exec: Execution,
) -> Result<(LossBreakdown, ModelGrads)> {
    let (loss, g) = batch_pass(m, x, u, x_next, w, true, exec)?;
    Ok((loss, g.expect("gradient requested")))
}
