//! Confidence-threshold early decisions and the evaluation metrics built on them.
//!
//! After every frame the running sum of readout softmaxes `O[t]` is updated and its
//! confidence `CS_t = max softmax(O[t])` is compared with the threshold `C`. The first
//! timestep (1-based, at or after `min_timestep`) with `CS_t >= C` is the decision time
//! `t_d`; if none qualifies the decision falls back to the last frame.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{count_ops, estimate_energy, EnergyModel, NetworkShape, SpikeRecord};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::snn::Network;
use crate::training::loss::softmax;

/// Candidate thresholds for the validation sweep.
pub const SWEEP_GRID: [f64; 11] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub threshold_c: f64,
    /// Earliest 1-based timestep at which a decision may be taken.
    pub min_timestep: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            threshold_c: 0.9,
            min_timestep: 1,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_c > 0.0 && self.threshold_c <= 1.0) {
            return Err(Error::Config(format!(
                "decision: threshold_c must lie in (0, 1], got {}",
                self.threshold_c
            )));
        }
        if self.min_timestep == 0 {
            return Err(Error::Config("decision: min_timestep must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether confidence `cs` at 1-based step `t` ends the stream.
    ///
    /// `CS_t < 1` for every finite `O[t]`, so `C = 1` is unreachable; it is special-cased
    /// because a very peaked softmax rounds to exactly 1.0.
    pub fn triggers(&self, cs: f64, t: usize) -> bool {
        t >= self.min_timestep && self.threshold_c < 1.0 && cs >= self.threshold_c
    }
}

pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `max(softmax(o_t))`.
pub fn confidence(o_t: ArrayView1<'_, f64>) -> Result<f64> {
    if o_t.is_empty() || o_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cumulative output row".into()));
    }
    let max = o_t.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let z: f64 = o_t.iter().map(|v| (v - max).exp()).sum();
    Ok(1.0 / z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub predicted: usize,
    /// 1-based decision timestep.
    pub t_d: usize,
    /// Decided by the threshold before the last frame.
    pub early: bool,
    /// `CS_t` for `t = 1..=t_d`.
    pub confidence_trace: Vec<f64>,
    /// Spikes per hidden layer over `1..=t_d`.
    pub spike_counts_until_td: Vec<usize>,
    pub spike_record: SpikeRecord,
}

/// Streams frames through `net` until the confidence threshold is met or `horizon`
/// frames have been consumed. No frame after `t_d` is pulled from `frames`.
pub fn decide_stream<I>(
    net: &Network,
    frames: I,
    cfg: &DecisionConfig,
    horizon: usize,
) -> Result<DecisionOutcome>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    cfg.validate()?;
    let mut state = net.stream();
    let mut o = Array1::<f64>::zeros(net.n_classes());
    let mut trace = Vec::new();
    let mut record = SpikeRecord::new(net.layers.len());
    let mut frames = frames.into_iter();

    let mut t = 0;
    while t < horizon {
        let Some(frame) = frames.next() else { break };
        let step = state.step(ArrayView1::from(frame.as_ref()))?;
        t += 1;
        o += &softmax(step.u_r.view());
        let cs = confidence(o.view())?;
        trace.push(cs);
        record.push(&step.spike_counts);
        if cfg.triggers(cs, t) {
            return Ok(outcome(&o, t, t < horizon, trace, record));
        }
    }
    if t == 0 {
        return Err(Error::EmptyStream);
    }
    Ok(outcome(&o, t, false, trace, record))
}

fn outcome(
    o: &Array1<f64>,
    t_d: usize,
    early: bool,
    confidence_trace: Vec<f64>,
    spike_record: SpikeRecord,
) -> DecisionOutcome {
    DecisionOutcome {
        predicted: argmax(o.view()),
        t_d,
        early,
        confidence_trace,
        spike_counts_until_td: spike_record.counts.iter().map(|c| c.iter().sum()).collect(),
        spike_record,
    }
}

/// One sample for [`evaluate`].
#[derive(Clone, Copy, Debug)]
pub struct EvalSample<'a> {
    pub features: &'a FeatureMatrix,
    pub label: usize,
    /// Keyword end as a 1-based frame index, when annotated.
    pub t_end: Option<usize>,
}

/// Full-length run of one sample, from which decisions at any threshold can be read.
#[derive(Clone, Debug)]
pub struct SampleRun {
    pub label: usize,
    pub t_end: Option<usize>,
    /// `CS_t` for `t = 1..=T`.
    pub confidence: Vec<f64>,
    /// `argmax O[t]` for `t = 1..=T`.
    pub prediction: Vec<usize>,
    pub spike_record: SpikeRecord,
}

impl SampleRun {
    pub fn n_steps(&self) -> usize {
        self.confidence.len()
    }

    /// 1-based decision time under `cfg`.
    pub fn decision_time(&self, cfg: &DecisionConfig) -> usize {
        self.confidence
            .iter()
            .enumerate()
            .find(|&(i, &cs)| cfg.triggers(cs, i + 1))
            .map_or(self.n_steps(), |(i, _)| i + 1)
    }
}

pub fn run_sample(net: &Network, sample: &EvalSample<'_>) -> Result<SampleRun> {
    if sample.label >= net.n_classes() {
        return Err(Error::InvalidLabel {
            label: sample.label,
            n_classes: net.n_classes(),
        });
    }
    let n = sample.features.n_frames();
    if n == 0 {
        return Err(Error::EmptyStream);
    }
    let trace = net.forward(sample.features)?;
    let mut o = Array1::<f64>::zeros(net.n_classes());
    let mut confidence_trace = Vec::with_capacity(n);
    let mut prediction = Vec::with_capacity(n);
    for row in trace.u_r.rows() {
        o += &softmax(row);
        confidence_trace.push(confidence(o.view())?);
        prediction.push(argmax(o.view()));
    }
    Ok(SampleRun {
        label: sample.label,
        t_end: sample.t_end,
        confidence: confidence_trace,
        prediction,
        spike_record: SpikeRecord {
            counts: trace.spike_counts,
        },
    })
}

/// Per-sample result at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub label: usize,
    pub predicted_early: usize,
    pub predicted_late: usize,
    pub t_d: usize,
    pub t_end_frame: Option<usize>,
    pub cs_at_td: f64,
    pub energy_early: f64,
    pub energy_full: f64,
    pub spike_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold_c: f64,
    pub min_timestep: usize,
    pub n_samples: usize,
    /// Acc^t, percent.
    pub acc_early: f64,
    /// Acc^T, percent.
    pub acc_late: f64,
    /// Mean decision timestep.
    pub mean_td: f64,
    /// Mean of `t_d - t_end` over annotated samples.
    pub delta_td: Option<f64>,
    pub n_annotated: usize,
    /// Mean spike probability per hidden neuron per timestep over full-length runs.
    pub mean_spike_rate: f64,
    /// Mean joules spent up to `t_d`.
    pub mean_energy: f64,
    /// Mean joules of a full-length run.
    pub mean_energy_full: f64,
    /// Mean over samples of `E(t_d) / E(T)`.
    pub mean_energy_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub outcomes: Vec<SampleOutcome>,
}

/// Runs every sample to the end once, then reads off decisions for `cfg`.
pub fn run_all(net: &Network, samples: &[EvalSample<'_>]) -> Result<Vec<SampleRun>> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    samples.par_iter().map(|s| run_sample(net, s)).collect()
}

pub fn summarize(
    net: &Network,
    runs: &[SampleRun],
    cfg: &DecisionConfig,
    energy: &EnergyModel,
) -> Result<Evaluation> {
    cfg.validate()?;
    let shape = NetworkShape::from(&net.config);
    let neurons = net.config.n_hidden_neurons() as f64;
    let outcomes = runs
        .iter()
        .map(|run| {
            let n = run.n_steps();
            let t_d = run.decision_time(cfg);
            let early = count_ops(&shape, &run.spike_record, t_d)?;
            let full = count_ops(&shape, &run.spike_record, n)?;
            Ok(SampleOutcome {
                label: run.label,
                predicted_early: run.prediction[t_d - 1],
                predicted_late: run.prediction[n - 1],
                t_d,
                t_end_frame: run.t_end,
                cs_at_td: run.confidence[t_d - 1],
                energy_early: estimate_energy(&early, energy),
                energy_full: estimate_energy(&full, energy),
                spike_rate: run.spike_record.total() as f64 / (neurons * n as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&SampleOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let annotated: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.t_end_frame.map(|e| o.t_d as f64 - e as f64))
        .collect();
    let report = EvalReport {
        threshold_c: cfg.threshold_c,
        min_timestep: cfg.min_timestep,
        n_samples: outcomes.len(),
        acc_early: 100.0 * mean(&|o| (o.predicted_early == o.label) as u8 as f64),
        acc_late: 100.0 * mean(&|o| (o.predicted_late == o.label) as u8 as f64),
        mean_td: mean(&|o| o.t_d as f64),
        delta_td: (!annotated.is_empty())
            .then(|| annotated.iter().sum::<f64>() / annotated.len() as f64),
        n_annotated: annotated.len(),
        mean_spike_rate: mean(&|o| o.spike_rate),
        mean_energy: mean(&|o| o.energy_early),
        mean_energy_full: mean(&|o| o.energy_full),
        mean_energy_ratio: mean(&|o| {
            if o.energy_full > 0.0 {
                o.energy_early / o.energy_full
            } else {
                1.0
            }
        }),
    };
    Ok(Evaluation { report, outcomes })
}

/// Early and late accuracy, decision times and energy over a dataset.
pub fn evaluate(
    net: &Network,
    samples: &[EvalSample<'_>],
    cfg: &DecisionConfig,
    energy: &EnergyModel,
) -> Result<Evaluation> {
    let runs = run_all(net, samples)?;
    summarize(net, &runs, cfg, energy)
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub reports: Vec<EvalReport>,
    /// Index into `reports` of the chosen threshold.
    pub selected: usize,
}

impl Sweep {
    pub fn selected_report(&self) -> &EvalReport {
        &self.reports[self.selected]
    }
}

/// Evaluates every threshold in `grid`, choosing the highest Acc^t and, among equals,
/// the smallest mean decision time.
pub fn sweep_thresholds(
    net: &Network,
    runs: &[SampleRun],
    grid: &[f64],
    min_timestep: usize,
    energy: &EnergyModel,
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::Config("decision: empty threshold grid".into()));
    }
    let reports = grid
        .iter()
        .map(|&c| {
            let cfg = DecisionConfig {
                threshold_c: c,
                min_timestep,
            };
            summarize(net, runs, &cfg, energy).map(|e| e.report)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut selected = 0;
    for (i, r) in reports.iter().enumerate() {
        let best = &reports[selected];
        if r.acc_early > best.acc_early || (r.acc_early == best.acc_early && r.mean_td < best.mean_td) {
            selected = i;
        }
    }
    Ok(Sweep { reports, selected })
}
