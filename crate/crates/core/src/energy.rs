//! Event-driven operation counting and energy estimates.
//!
//! Counting convention (version 1), per processed timestep `t`:
//!
//! | term | MAC | accumulate |
//! |------|-----|------------|
//! | first layer, dense real-valued frame | `n_inputs * h1` | |
//! | layer `l > 1`, binary spikes of `l-1` from `t-1` | | `spikes(l-1, t-1) * h_l` |
//! | neuron decay `alpha*U` and adaptation `a*U` | `2` per hidden neuron | |
//! | merge of the beta-scaled input into the current | | `1` per hidden neuron |
//! | spike-triggered term `b*S` | | `spikes(l, t-1)` |
//! | readout drive from the last layer's spikes at `t` | | `spikes(L, t) * K` |
//! | readout decay | `K` | |
//!
//! Softmax, the running sum and the threshold test are not counted. The whole
//! convention lives in [`step_ops`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::NetworkConfig;

pub const CONVENTION_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    /// Joules per multiply-accumulate.
    pub e_mac: f64,
    /// Joules per accumulate.
    pub e_acc: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_mac: 4.6e-12,
            e_acc: 0.9e-12,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        if self.e_mac > 0.0 && self.e_acc > 0.0 && self.e_mac.is_finite() && self.e_acc.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("energy: e_mac and e_acc must be positive".into()))
        }
    }
}

/// Layer widths that determine the operation counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkShape {
    pub n_inputs: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl From<&NetworkConfig> for NetworkShape {
    fn from(cfg: &NetworkConfig) -> Self {
        Self {
            n_inputs: cfg.n_inputs,
            hidden: cfg.hidden_sizes.clone(),
            n_classes: cfg.n_classes,
        }
    }
}

/// Spikes emitted per hidden layer per timestep: `counts[layer][t]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeRecord {
    pub counts: Vec<Vec<usize>>,
}

impl SpikeRecord {
    pub fn new(n_layers: usize) -> Self {
        Self {
            counts: vec![Vec::new(); n_layers],
        }
    }

    pub fn push(&mut self, step_counts: &[usize]) {
        for (layer, &c) in self.counts.iter_mut().zip(step_counts) {
            layer.push(c);
        }
    }

    pub fn n_steps(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn truncated(&self, n_steps: usize) -> SpikeRecord {
        SpikeRecord {
            counts: self.counts.iter().map(|c| c[..n_steps.min(c.len())].to_vec()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub n_mac: u64,
    pub n_acc: u64,
    pub t_stop: usize,
}

impl std::ops::Add for OpCount {
    type Output = OpCount;

    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            n_mac: self.n_mac + rhs.n_mac,
            n_acc: self.n_acc + rhs.n_acc,
            t_stop: self.t_stop.max(rhs.t_stop),
        }
    }
}

/// (MACs, accumulates) of 0-based timestep `step`.
fn step_ops(shape: &NetworkShape, record: &SpikeRecord, step: usize) -> (u64, u64) {
    let h1 = shape.hidden[0] as u64;
    let total_hidden: u64 = shape.hidden.iter().map(|&h| h as u64).sum();
    let k = shape.n_classes as u64;
    let spikes = |layer: usize, t: usize| record.counts[layer][t] as u64;

    let mac = shape.n_inputs as u64 * h1 + 2 * total_hidden + k;
    let mut acc = total_hidden;
    if step > 0 {
        for l in 1..shape.hidden.len() {
            acc += spikes(l - 1, step - 1) * shape.hidden[l] as u64;
        }
        for l in 0..shape.hidden.len() {
            acc += spikes(l, step - 1);
        }
    }
    acc += spikes(shape.hidden.len() - 1, step) * k;
    (mac, acc)
}

/// Operations for timesteps `from+1 ..= to` (1-based), i.e. 0-based steps `from..to`.
pub fn count_ops_between(
    shape: &NetworkShape,
    record: &SpikeRecord,
    from: usize,
    to: usize,
) -> Result<OpCount> {
    if record.counts.len() != shape.hidden.len() {
        return Err(Error::Dimension {
            context: "spike record layers",
            expected: shape.hidden.len(),
            got: record.counts.len(),
        });
    }
    if from > to || to > record.n_steps() || record.counts.iter().any(|c| c.len() < to) {
        return Err(Error::Config(format!(
            "energy: timestep range {from}..{to} outside the {}-step spike record",
            record.n_steps()
        )));
    }
    let (mut n_mac, mut n_acc) = (0, 0);
    for step in from..to {
        let (m, a) = step_ops(shape, record, step);
        n_mac += m;
        n_acc += a;
    }
    Ok(OpCount {
        n_mac,
        n_acc,
        t_stop: to,
    })
}

/// Operations spent processing timesteps `1..=t_stop`.
pub fn count_ops(shape: &NetworkShape, record: &SpikeRecord, t_stop: usize) -> Result<OpCount> {
    count_ops_between(shape, record, 0, t_stop)
}

pub fn estimate_energy(count: &OpCount, model: &EnergyModel) -> f64 {
    count.n_mac as f64 * model.e_mac + count.n_acc as f64 * model.e_acc
}

/// Fraction of hidden neurons spiking at each timestep.
pub fn spike_rate_trace(record: &SpikeRecord, widths: &[usize]) -> Vec<f64> {
    let neurons: usize = widths.iter().sum();
    (0..record.n_steps())
        .map(|t| {
            let fired: usize = record.counts.iter().map(|c| c[t]).sum();
            fired as f64 / neurons as f64
        })
        .collect()
}

/// JSON form of one energy estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub n_mac: u64,
    pub n_acc: u64,
    pub joules: f64,
    pub t_stop: usize,
    pub convention_version: u32,
}

impl EnergyReport {
    pub fn new(count: &OpCount, model: &EnergyModel) -> Self {
        Self {
            n_mac: count.n_mac,
            n_acc: count.n_acc,
            joules: estimate_energy(count, model),
            t_stop: count.t_stop,
            convention_version: CONVENTION_VERSION,
        }
    }
}
