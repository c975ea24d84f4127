//! Classification losses over a readout trace, each with its gradient w.r.t. `U_R`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::ReadoutTrace;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy of the time-averaged readout potential.
    SpikeRate,
    /// Mean over timesteps of per-step cross-entropy on `U_R[t]`.
    Tet,
    /// Cross-entropy of the final cumulative softmax output `O[T]`.
    Cumulative,
    /// Mean over timesteps of cross-entropy on every cumulative output `O[t]`.
    #[default]
    Ct,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::SpikeRate,
        LossKind::Tet,
        LossKind::Cumulative,
        LossKind::Ct,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SpikeRate => "spike_rate",
            LossKind::Tet => "tet",
            LossKind::Cumulative => "cumulative",
            LossKind::Ct => "ct",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

/// How a cumulative output row `O[t]` is turned into class log-probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeScoring {
    /// `log_softmax(O[t])`, consistent with the confidence score.
    #[default]
    Resoftmax,
    /// `ln(O[t] / (t + 1))`: the running average of softmaxes is already a distribution.
    Average,
}

/// `O[t] = sum_{i <= t} softmax(U_R[i])`, shape `T × K`.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeOutput {
    pub o: Array2<f64>,
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e /= z;
    e
}

pub fn log_sum_exp(logits: ArrayView1<'_, f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log_softmax(logits)[label]`
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

fn check(u_r: ArrayView2<'_, f64>, label: usize) -> Result<()> {
    if label >= u_r.ncols() {
        return Err(Error::InvalidLabel {
            label,
            n_classes: u_r.ncols(),
        });
    }
    if u_r.nrows() == 0 {
        return Err(Error::Dimension {
            context: "readout trace timesteps",
            expected: 1,
            got: 0,
        });
    }
    if u_r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("readout trace".into()));
    }
    Ok(())
}

fn softmax_rows(u_r: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = Array2::zeros(u_r.raw_dim());
    for (mut out, row) in p.axis_iter_mut(Axis(0)).zip(u_r.axis_iter(Axis(0))) {
        out.assign(&softmax(row));
    }
    p
}

fn running_sum(p: &Array2<f64>) -> Array2<f64> {
    let mut o = p.clone();
    for t in 1..o.nrows() {
        let (done, mut rest) = o.view_mut().split_at(Axis(0), t);
        let mut row = rest.row_mut(0);
        row += &done.row(t - 1);
    }
    o
}

pub fn cumulative_output(trace: &ReadoutTrace) -> Result<CumulativeOutput> {
    if trace.u_r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("readout trace".into()));
    }
    Ok(CumulativeOutput {
        o: running_sum(&softmax_rows(trace.u_r.view())),
    })
}

fn scored_ce(o_t: ArrayView1<'_, f64>, t: usize, label: usize, scoring: CumulativeScoring) -> f64 {
    match scoring {
        CumulativeScoring::Resoftmax => cross_entropy(o_t, label),
        CumulativeScoring::Average => -(o_t[label] / (t + 1) as f64).ln(),
    }
}

/// Gradient of `scored_ce` w.r.t. `O[t]`, scaled by `weight`, added into `out`.
fn add_scored_ce_grad(
    o_t: ArrayView1<'_, f64>,
    label: usize,
    scoring: CumulativeScoring,
    weight: f64,
    mut out: ndarray::ArrayViewMut1<'_, f64>,
) {
    match scoring {
        CumulativeScoring::Resoftmax => {
            let q = softmax(o_t);
            out.scaled_add(weight, &q);
            out[label] -= weight;
        }
        CumulativeScoring::Average => out[label] -= weight / o_t[label],
    }
}

/// Mean over timesteps of the cross-entropy of every cumulative output.
pub fn ct_loss(trace: &ReadoutTrace, label: usize) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Ct, CumulativeScoring::Resoftmax, trace.u_r.view(), label)?.0)
}

pub fn spike_rate_loss(trace: &ReadoutTrace, label: usize) -> Result<f64> {
    Ok(loss_and_grad(LossKind::SpikeRate, CumulativeScoring::Resoftmax, trace.u_r.view(), label)?.0)
}

pub fn tet_loss(trace: &ReadoutTrace, label: usize) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Tet, CumulativeScoring::Resoftmax, trace.u_r.view(), label)?.0)
}

pub fn cumulative_loss(trace: &ReadoutTrace, label: usize) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Cumulative, CumulativeScoring::Resoftmax, trace.u_r.view(), label)?.0)
}

/// Loss value and `dL/dU_R` (same shape as `u_r`).
pub fn loss_and_grad(
    kind: LossKind,
    scoring: CumulativeScoring,
    u_r: ArrayView2<'_, f64>,
    label: usize,
) -> Result<(f64, Array2<f64>)> {
    check(u_r, label)?;
    let n_steps = u_r.nrows();
    let inv_t = 1.0 / n_steps as f64;
    let mut grad = Array2::zeros(u_r.raw_dim());

    let loss = match kind {
        LossKind::SpikeRate => {
            let mean = u_r.mean_axis(Axis(0)).expect("non-empty trace");
            let mut g = softmax(mean.view());
            g[label] -= 1.0;
            g *= inv_t;
            for mut row in grad.axis_iter_mut(Axis(0)) {
                row.assign(&g);
            }
            cross_entropy(mean.view(), label)
        }
        LossKind::Tet => {
            let mut total = 0.0;
            for (row, mut g) in u_r.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))) {
                total += cross_entropy(row, label);
                g.assign(&softmax(row));
                g[label] -= 1.0;
                g *= inv_t;
            }
            total * inv_t
        }
        LossKind::Cumulative | LossKind::Ct => {
            let p = softmax_rows(u_r);
            let o = running_sum(&p);
            // dL/dO[t]
            let mut g_o = Array2::zeros(o.raw_dim());
            let loss = if kind == LossKind::Ct {
                let mut total = 0.0;
                for t in 0..n_steps {
                    total += scored_ce(o.row(t), t, label, scoring);
                    add_scored_ce_grad(o.row(t), label, scoring, inv_t, g_o.row_mut(t));
                }
                total * inv_t
            } else {
                let last = n_steps - 1;
                add_scored_ce_grad(o.row(last), label, scoring, 1.0, g_o.row_mut(last));
                scored_ce(o.row(last), last, label, scoring)
            };
            // O[t] sums p[0..=t], so dL/dp[i] accumulates dL/dO[t] for t >= i.
            let mut g_p = Array1::zeros(u_r.ncols());
            for i in (0..n_steps).rev() {
                g_p += &g_o.row(i);
                let p_i = p.row(i);
                let dot = p_i.dot(&g_p);
                for ((g, &pk), &gk) in grad.row_mut(i).iter_mut().zip(p_i).zip(&g_p) {
                    *g = pk * (gk - dot);
                }
            }
            loss
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{} loss", kind.name())));
    }
    Ok((loss, grad))
}
