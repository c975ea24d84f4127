//! Reverse-mode gradients through the unrolled network dynamics.
//!
//! The Heaviside firing function has no useful derivative, so `dS/dU` is replaced by a
//! surrogate. The reset term `-v_th * S[t-1]` is treated as a constant (no gradient
//! through the spike that caused the reset); the spike-triggered term `b * S[t-1]` and
//! the onward projection to the next layer do carry gradient.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::decision::argmax;
use crate::snn::{Network, Tape};
use crate::training::loss::{loss_and_grad, softmax, CumulativeScoring, LossKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `1/width` inside `|U - v_th| <= width/2`, zero outside.
    Boxcar { width: f64 },
    /// No gradient through any spike: the exact derivative of the network with its spike
    /// pattern held fixed.
    Blocked,
}

impl Surrogate {
    #[inline]
    pub fn derivative(&self, u: f64, v_th: f64) -> f64 {
        match *self {
            Surrogate::Boxcar { width } => {
                if (u - v_th).abs() <= width / 2.0 {
                    1.0 / width
                } else {
                    0.0
                }
            }
            Surrogate::Blocked => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    pub loss: LossKind,
    pub scoring: CumulativeScoring,
    pub surrogate: Surrogate,
    /// Weight of `sum_l rate_l^2`, where `rate_l` is layer l's mean spike probability.
    pub rate_penalty: f64,
}

impl BackwardOptions {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            scoring: CumulativeScoring::Resoftmax,
            surrogate: Surrogate::Boxcar { width: 1.0 },
            rate_penalty: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

/// Gradients shaped like the trainable parameters of a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub readout: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|p| LayerGradients {
                    weights: Array2::zeros(p.weights.raw_dim()),
                    alpha: Array1::zeros(p.width()),
                    beta: Array1::zeros(p.width()),
                    a: Array1::zeros(p.width()),
                    b: Array1::zeros(p.width()),
                })
                .collect(),
            readout: Array2::zeros(net.readout.raw_dim()),
        }
    }

    /// Flat views in the same order as [`Network::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(5 * self.layers.len() + 1);
        for l in &self.layers {
            for arr in [
                l.weights.as_slice(),
                l.alpha.as_slice(),
                l.beta.as_slice(),
                l.a.as_slice(),
                l.b.as_slice(),
            ] {
                out.push(arr.expect("standard layout"));
            }
        }
        out.push(self.readout.as_slice().expect("standard layout"));
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(5 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.alpha.as_slice_mut().expect("standard layout"));
            out.push(l.beta.as_slice_mut().expect("standard layout"));
            out.push(l.a.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.readout.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for dst in self.slices_mut() {
            dst.iter_mut().for_each(|d| *d *= c);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .into_iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Network {
    /// Mutable flat views of every trainable parameter, ordered per layer as
    /// weights, alpha, beta, a, b, then the readout weights.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(5 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.alpha.as_slice_mut().expect("standard layout"));
            out.push(l.beta.as_slice_mut().expect("standard layout"));
            out.push(l.a.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.readout.as_slice_mut().expect("standard layout"));
        out
    }
}

/// Loss value, gradients and the spike total of one sample's forward pass.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: Gradients,
    pub spikes: usize,
    /// Arg-max of the final cumulative output.
    pub prediction: usize,
}

pub fn backward(
    net: &Network,
    features: &FeatureMatrix,
    label: usize,
    opts: &BackwardOptions,
) -> Result<SampleGradient> {
    let tape = net.forward_tape(features)?;
    let n_steps = features.n_frames();
    let (mut loss, g_ur) = loss_and_grad(opts.loss, opts.scoring, tape.u_r.view(), label)?;

    let spikes: usize = tape
        .layers
        .iter()
        .map(|l| l.spikes.iter().filter(|&&s| s > 0.0).count())
        .sum();

    // dL/dS for every hidden layer, filled from the top down.
    let mut ext: Vec<Array2<f64>> = net
        .layers
        .iter()
        .map(|p| Array2::zeros((n_steps, p.width())))
        .collect();

    if opts.rate_penalty != 0.0 {
        for (l, rec) in tape.layers.iter().enumerate() {
            let denom = (rec.spikes.ncols() * n_steps) as f64;
            let rate = rec.spikes.sum() / denom;
            loss += opts.rate_penalty * rate * rate;
            ext[l].fill(2.0 * opts.rate_penalty * rate / denom);
        }
    }

    let prediction = {
        let mut o = Array1::<f64>::zeros(net.n_classes());
        for row in tape.u_r.rows() {
            o += &softmax(row);
        }
        argmax(o.view())
    };

    let grads = backprop(net, features, &tape, &g_ur, ext, opts.surrogate)?;
    Ok(SampleGradient {
        loss,
        grads,
        spikes,
        prediction,
    })
}

/// Propagates `g_ur = dL/dU_R` (plus any direct `dL/dS` already in `ext`) back to
/// every parameter.
fn backprop(
    net: &Network,
    features: &FeatureMatrix,
    tape: &Tape,
    g_ur: &Array2<f64>,
    mut ext: Vec<Array2<f64>>,
    surrogate: Surrogate,
) -> Result<Gradients> {
    let n_steps = features.n_frames();
    let n_layers = net.layers.len();
    let mut grads = Gradients::zeros_like(net);

    // Readout: U_R[t] = d * U_R[t-1] + W_R S_L[t]
    {
        let decay = net.config.readout_decay;
        let k = net.n_classes();
        let last = &tape.layers[n_layers - 1].spikes;
        let w_r = &net.readout;
        let mut g_r = Array1::<f64>::zeros(k);
        for t in (0..n_steps).rev() {
            g_r *= decay;
            g_r += &g_ur.row(t);
            let s_t = last.row(t);
            for (c, &g) in g_r.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let mut row = grads.readout.row_mut(c);
                for (w, &s) in row.iter_mut().zip(s_t) {
                    if s > 0.0 {
                        *w += g;
                    }
                }
            }
            let mut e = ext[n_layers - 1].row_mut(t);
            e += &w_r.t().dot(&g_r);
        }
    }

    for l in (0..n_layers).rev() {
        let p = &net.layers[l];
        let rec = &tape.layers[l];
        let n = p.width();
        let v_th = p.v_th;
        let g = &mut grads.layers[l];
        let (lower, upper) = ext.split_at_mut(l);
        let ext_l = &upper[0];
        let mut ext_below = lower.last_mut();

        let mut g_u_next = vec![0.0; n];
        let mut g_u = vec![0.0; n];
        let mut dz = vec![0.0; n];
        for t in (0..n_steps).rev() {
            let u_t = rec.u_mem.row(t);
            let z_t = rec.weighted_input.row(t);
            let e_t = ext_l.row(t);
            for i in 0..n {
                let g_s = e_t[i] + p.b[i] * g_u_next[i];
                let gu = g_s * surrogate.derivative(u_t[i], v_th)
                    + (p.alpha[i] + p.a[i]) * g_u_next[i];
                g_u[i] = gu;
                let (u_prev, s_prev) = if t > 0 {
                    (rec.u_mem[[t - 1, i]], rec.spikes[[t - 1, i]])
                } else {
                    (0.0, 0.0)
                };
                g.alpha[i] += gu * (u_prev - v_th * s_prev);
                g.a[i] += gu * u_prev;
                g.b[i] += gu * s_prev;
                g.beta[i] += gu * z_t[i];
                dz[i] = p.beta[i] * gu;
            }
            if let Some(i) = g_u.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient at layer {l}, neuron {i}, timestep {t}"
                )));
            }

            // z[t] = W in[t]; the first layer reads frame t, deeper layers S_{l-1}[t-1].
            if l == 0 {
                let x_t = features.frame(t);
                for (i, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let mut row = g.weights.row_mut(i);
                    row.scaled_add(d, &x_t);
                }
            } else if t > 0 {
                let s_in = tape.layers[l - 1].spikes.row(t - 1);
                let w = p.weights.view();
                let mut below = ext_below.as_mut().expect("l > 0").row_mut(t - 1);
                for (i, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let mut g_row = g.weights.row_mut(i);
                    for (gw, &s) in g_row.iter_mut().zip(s_in) {
                        if s > 0.0 {
                            *gw += d;
                        }
                    }
                    below.scaled_add(d, &w.row(i));
                }
            }
            std::mem::swap(&mut g_u, &mut g_u_next);
        }
    }
    Ok(grads)
}
