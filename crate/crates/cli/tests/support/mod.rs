//! Independent scalar re-implementations used as test oracles.

#![allow(dead_code)]

use spikekws::snn::Network;
use spikekws::training::LossKind;

/// `-ln softmax(z)[y]`, computed the long way.
pub fn ce(z: &[f64], y: usize) -> f64 {
    let mut m = z[0];
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut s = 0.0;
    for &v in z {
        s += (v - m).exp();
    }
    m + s.ln() - z[y]
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let mut m = z[0];
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Loss of a `T x K` readout trace, by the definitions of each loss.
pub fn loss(kind: LossKind, u: &[Vec<f64>], y: usize) -> f64 {
    let t_len = u.len();
    let k = u[0].len();
    match kind {
        LossKind::SpikeRate => {
            let mut mean = vec![0.0; k];
            for row in u {
                for c in 0..k {
                    mean[c] += row[c];
                }
            }
            for v in &mut mean {
                *v /= t_len as f64;
            }
            ce(&mean, y)
        }
        LossKind::Tet => u.iter().map(|row| ce(row, y)).sum::<f64>() / t_len as f64,
        LossKind::Cumulative | LossKind::Ct => {
            let mut o = vec![0.0; k];
            let mut total = 0.0;
            let mut last = 0.0;
            for row in u {
                let p = softmax(row);
                for c in 0..k {
                    o[c] += p[c];
                }
                last = ce(&o, y);
                total += last;
            }
            if kind == LossKind::Ct {
                total / t_len as f64
            } else {
                last
            }
        }
    }
}

/// One adaptive LIF neuron step: returns `(I, U, S)`.
pub fn neuron(alpha: f64, beta: f64, a: f64, b: f64, v_th: f64, u_prev: f64, s_prev: f64, z: f64) -> (f64, f64, f64) {
    let i = beta * z + a * u_prev + b * s_prev;
    let u = alpha * (u_prev - v_th * s_prev) + i;
    let s = if u >= v_th { 1.0 } else { 0.0 };
    (i, u, s)
}

/// Membrane potentials and spikes of every hidden layer, `[layer][t][neuron]`.
pub struct Trajectory {
    pub u: Vec<Vec<Vec<f64>>>,
    pub s: Vec<Vec<Vec<f64>>>,
    pub u_r: Vec<Vec<f64>>,
}

/// Scalar forward pass. With `nominal`, spikes are replaced by their first-order
/// expansion around the nominal run, `S = S0 + width_gate(U0) * (U - U0)`, while the
/// reset keeps using `S0`. Its parameter derivative is the surrogate gradient with a
/// detached reset, so central differences of it check backpropagation exactly.
pub fn forward(net: &Network, x: &[Vec<f64>], nominal: Option<(&Trajectory, f64)>) -> Trajectory {
    let t_len = x.len();
    let v_th = net.config.v_th;
    let mut us = Vec::new();
    let mut ss: Vec<Vec<Vec<f64>>> = Vec::new();
    for (l, p) in net.layers.iter().enumerate() {
        let n = p.weights.nrows();
        let fan_in = p.weights.ncols();
        let mut u_l = vec![vec![0.0; n]; t_len];
        let mut s_l = vec![vec![0.0; n]; t_len];
        for t in 0..t_len {
            for i in 0..n {
                let mut z = 0.0;
                for j in 0..fan_in {
                    let input = if l == 0 {
                        x[t][j]
                    } else if t > 0 {
                        ss[l - 1][t - 1][j]
                    } else {
                        0.0
                    };
                    z += p.weights[[i, j]] * input;
                }
                let (u_prev, s_prev, reset_prev) = if t == 0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let reset = match nominal {
                        Some((nom, _)) => nom.s[l][t - 1][i],
                        None => s_l[t - 1][i],
                    };
                    (u_l[t - 1][i], s_l[t - 1][i], reset)
                };
                let current = p.beta[i] * z + p.a[i] * u_prev + p.b[i] * s_prev;
                let u = p.alpha[i] * (u_prev - v_th * reset_prev) + current;
                u_l[t][i] = u;
                s_l[t][i] = match nominal {
                    None => {
                        if u >= v_th {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Some((nom, width)) => {
                        let u0 = nom.u[l][t][i];
                        let gate = if (u0 - v_th).abs() <= width / 2.0 { 1.0 / width } else { 0.0 };
                        nom.s[l][t][i] + gate * (u - u0)
                    }
                };
            }
        }
        us.push(u_l);
        ss.push(s_l);
    }
    let last = ss.last().unwrap();
    let k = net.readout.nrows();
    let mut u_r = vec![vec![0.0; k]; t_len];
    for t in 0..t_len {
        for c in 0..k {
            let mut drive = 0.0;
            for (j, s) in last[t].iter().enumerate() {
                drive += net.readout[[c, j]] * s;
            }
            let prev = if t > 0 { u_r[t - 1][c] } else { 0.0 };
            u_r[t][c] = net.config.readout_decay * prev + drive;
        }
    }
    Trajectory { u: us, s: ss, u_r }
}

/// Pointer to the `j`-th parameter in `Network::parameters_mut` order.
pub fn nth_param(net: &mut Network, j: usize) -> &mut f64 {
    net.parameters_mut().into_iter().flatten().nth(j).unwrap()
}

pub fn n_params(net: &mut Network) -> usize {
    net.parameters_mut().iter().map(|p| p.len()).sum()
}

/// Relative error with a floor so that near-zero pairs compare on absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst relative error between `backward` (boxcar surrogate) and central differences
/// of the linearized forward, over every parameter.
pub fn surrogate_check(net: &Network, x: &[Vec<f64>], y: usize, kind: LossKind, width: f64, analytic: &[f64]) -> f64 {
    let nominal = forward(net, x, None);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (j, &g) in analytic.iter().enumerate() {
        let base = *nth_param(&mut probe, j);
        *nth_param(&mut probe, j) = base + eps;
        let lp = loss(kind, &forward(&probe, x, Some((&nominal, width))).u_r, y);
        *nth_param(&mut probe, j) = base - eps;
        let lm = loss(kind, &forward(&probe, x, Some((&nominal, width))).u_r, y);
        *nth_param(&mut probe, j) = base;
        worst = worst.max(rel_err((lp - lm) / (2.0 * eps), g));
    }
    worst
}

/// Flip-guarded central differences of the true (spiking) forward against `analytic`.
/// Returns `(worst relative error, parameters checked, parameters skipped)`.
pub fn flip_guarded_check(net: &Network, x: &[Vec<f64>], y: usize, kind: LossKind, analytic: &[f64]) -> (f64, usize, usize) {
    let nominal = forward(net, x, None);
    let eps = 1e-6;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let mut probe = net.clone();
    for (j, &g) in analytic.iter().enumerate() {
        let base = *nth_param(&mut probe, j);
        *nth_param(&mut probe, j) = base + eps;
        let plus = forward(&probe, x, None);
        *nth_param(&mut probe, j) = base - eps;
        let minus = forward(&probe, x, None);
        *nth_param(&mut probe, j) = base;
        if plus.s != nominal.s || minus.s != nominal.s {
            skipped += 1;
            continue;
        }
        let fd = (loss(kind, &plus.u_r, y) - loss(kind, &minus.u_r, y)) / (2.0 * eps);
        worst = worst.max(rel_err(fd, g));
        checked += 1;
    }
    (worst, checked, skipped)
}
