//! Adaptive leaky integrate-and-fire network.
//!
//! Each hidden neuron keeps a synaptic current `I`, a membrane potential `U` and a binary
//! spike `S`. With `x[t]` the weighted input arriving at step `t`:
//!
//! ```text
//! I[t] = beta * x[t] + a * U[t-1] + b * S[t-1]
//! U[t] = alpha * (U[t-1] - v_th * S[t-1]) + I[t]
//! S[t] = U[t] >= v_th
//! ```
//!
//! The first hidden layer sees feature frame `t` at step `t`. Deeper layers see the spikes
//! their predecessor emitted at `t - 1`. The readout is a leaky integrator over the last
//! hidden layer's spikes at `t` and never fires.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.min..=self.max)
    }
}

/// Allowed ranges of the trainable neuron constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBounds {
    pub alpha: Range,
    pub beta: Range,
    pub a: Range,
    pub b: Range,
    /// Upper bound on `alpha + a`, the factor multiplying `U[t-1]`. Above 1 the potential
    /// of a silent neuron grows geometrically.
    pub max_potential_gain: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: Range::new(0.36, 0.96),
            beta: Range::new(0.36, 0.96),
            a: Range::new(-1.0, 1.0),
            b: Range::new(0.0, 2.0),
            max_potential_gain: 1.0,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: &Range| r.min.is_finite() && r.max.is_finite() && r.min <= r.max;
        let unit = |r: &Range| r.min > 0.0 && r.max < 1.0;
        if !(ok(&self.alpha) && ok(&self.beta) && ok(&self.a) && ok(&self.b)) {
            return Err(Error::Config("network.bounds: empty or non-finite range".into()));
        }
        if !(unit(&self.alpha) && unit(&self.beta)) {
            return Err(Error::Config(
                "network.bounds: alpha and beta ranges must lie inside (0, 1)".into(),
            ));
        }
        if !(self.max_potential_gain > self.alpha.min + self.a.min) {
            return Err(Error::Config(
                "network.bounds: max_potential_gain leaves no feasible (alpha, a)".into(),
            ));
        }
        Ok(())
    }

    /// Projects one neuron's constants into the feasible set. `a` gives way when
    /// `alpha + a` exceeds the gain bound.
    pub fn project(&self, alpha: &mut f64, beta: &mut f64, a: &mut f64, b: &mut f64) {
        *alpha = self.alpha.clamp(*alpha);
        *beta = self.beta.clamp(*beta);
        *a = self.a.clamp(*a).min(self.max_potential_gain - *alpha);
        *b = self.b.clamp(*b);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_inputs: usize,
    pub hidden_sizes: Vec<usize>,
    pub n_classes: usize,
    pub readout_decay: f64,
    pub v_th: f64,
    pub bounds: ParamBounds,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_inputs: 40,
            hidden_sizes: vec![128, 128],
            n_classes: 35,
            readout_decay: 0.9,
            v_th: 1.0,
            bounds: ParamBounds::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_classes == 0 {
            return Err(Error::Config("network: n_inputs and n_classes must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "network: need at least one hidden layer, every layer >= 1 neuron".into(),
            ));
        }
        if !(self.readout_decay > 0.0 && self.readout_decay < 1.0) {
            return Err(Error::Config(format!(
                "network: readout_decay must lie in (0, 1), got {}",
                self.readout_decay
            )));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::Config(format!("network: v_th must be > 0, got {}", self.v_th)));
        }
        self.bounds.validate()
    }

    /// Fan-in of every hidden layer, in order.
    pub fn layer_inputs(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.n_inputs).chain(self.hidden_sizes.iter().copied())
    }

    pub fn n_hidden_neurons(&self) -> usize {
        self.hidden_sizes.iter().sum()
    }

    pub fn last_hidden(&self) -> usize {
        *self.hidden_sizes.last().expect("validated: at least one hidden layer")
    }

    /// Trainable parameters: every weight plus (alpha, beta, a, b) per hidden neuron.
    pub fn parameter_count(&self) -> usize {
        let weights: usize = self
            .layer_inputs()
            .zip(&self.hidden_sizes)
            .map(|(fan_in, &n)| fan_in * n)
            .sum::<usize>()
            + self.last_hidden() * self.n_classes;
        weights + 4 * self.n_hidden_neurons()
    }
}

/// Constants and input weights of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdLifParams {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub v_th: f64,
    /// `n_out × n_in`
    pub weights: Array2<f64>,
}

impl AdLifParams {
    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, cfg: &NetworkConfig, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((n_out, n_in), || rng.random_range(-bound..=bound));
        let mut p = Self {
            alpha: Array1::from_shape_simple_fn(n_out, || cfg.bounds.alpha.sample(rng)),
            beta: Array1::from_shape_simple_fn(n_out, || cfg.bounds.beta.sample(rng)),
            a: Array1::from_shape_simple_fn(n_out, || cfg.bounds.a.sample(rng)),
            b: Array1::from_shape_simple_fn(n_out, || cfg.bounds.b.sample(rng)),
            v_th: cfg.v_th,
            weights,
        };
        p.project(&cfg.bounds);
        p
    }

    pub fn project(&mut self, bounds: &ParamBounds) {
        for i in 0..self.width() {
            bounds.project(
                &mut self.alpha[i],
                &mut self.beta[i],
                &mut self.a[i],
                &mut self.b[i],
            );
        }
    }

    fn check(&self, layer: usize, bounds: &ParamBounds) -> Result<()> {
        let n = self.width();
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta), ("a", &self.a), ("b", &self.b)] {
            if v.len() != n {
                return Err(Error::Checkpoint(format!(
                    "layer {layer}: {name} has {} entries for {n} neurons",
                    v.len()
                )));
            }
        }
        let all_finite = self.weights.iter().chain(&self.alpha).chain(&self.beta).chain(&self.a).chain(&self.b).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite(format!("layer {layer} parameters")));
        }
        let in_range = self.alpha.iter().all(|&v| bounds.alpha.contains(v))
            && self.beta.iter().all(|&v| bounds.beta.contains(v))
            && self.a.iter().all(|&v| bounds.a.contains(v))
            && self.b.iter().all(|&v| bounds.b.contains(v));
        if !in_range {
            return Err(Error::Checkpoint(format!("layer {layer}: neuron constants outside bounds")));
        }
        Ok(())
    }
}

/// Per-timestep state of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub i_syn: Array1<f64>,
    pub u_mem: Array1<f64>,
    /// 0.0 or 1.0
    pub spikes: Array1<f64>,
}

impl LayerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            i_syn: Array1::zeros(n),
            u_mem: Array1::zeros(n),
            spikes: Array1::zeros(n),
        }
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.iter().filter(|&&s| s > 0.0).count()
    }
}

/// Advances one adaptive LIF layer by a single step.
///
/// `weighted_input` is the already-projected input (`W · S_{l-1}[t-1]`, or `W · x[t]`
/// for the first layer).
pub fn adlif_step(
    state: &LayerState,
    weighted_input: ArrayView1<'_, f64>,
    params: &AdLifParams,
) -> Result<LayerState> {
    let n = params.width();
    for (context, got) in [
        ("adlif_step input", weighted_input.len()),
        ("adlif_step state", state.u_mem.len()),
    ] {
        if got != n {
            return Err(Error::Dimension { context, expected: n, got });
        }
    }
    if weighted_input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adlif_step input".into()));
    }
    let mut next = LayerState::zeros(n);
    advance_neurons(state, weighted_input, params, &mut next);
    if next.u_mem.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adlif_step membrane potential".into()));
    }
    Ok(next)
}

#[inline]
fn advance_neurons(
    prev: &LayerState,
    weighted_input: ArrayView1<'_, f64>,
    p: &AdLifParams,
    next: &mut LayerState,
) {
    let v_th = p.v_th;
    for i in 0..p.width() {
        let (u_prev, s_prev) = (prev.u_mem[i], prev.spikes[i]);
        let current = p.beta[i] * weighted_input[i] + p.a[i] * u_prev + p.b[i] * s_prev;
        let u = p.alpha[i] * (u_prev - v_th * s_prev) + current;
        next.i_syn[i] = current;
        next.u_mem[i] = u;
        next.spikes[i] = if u >= v_th { 1.0 } else { 0.0 };
    }
}

/// Leaky non-spiking readout: `decay * prev + weighted_input`.
pub fn readout_step(
    u_r_prev: ArrayView1<'_, f64>,
    weighted_input: ArrayView1<'_, f64>,
    decay: f64,
) -> Result<Array1<f64>> {
    if u_r_prev.len() != weighted_input.len() {
        return Err(Error::Dimension {
            context: "readout_step",
            expected: u_r_prev.len(),
            got: weighted_input.len(),
        });
    }
    if !decay.is_finite() || u_r_prev.iter().chain(weighted_input.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("readout_step".into()));
    }
    Ok(&u_r_prev * decay + &weighted_input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<AdLifParams>,
    /// `n_classes × last_hidden`
    pub readout: Array2<f64>,
}

impl Network {
    /// Uniform `±1/sqrt(fan_in)` weights, neuron constants uniform over their bounds.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_inputs()
            .zip(&config.hidden_sizes)
            .map(|(n_in, &n_out)| AdLifParams::init(n_in, n_out, &config, rng))
            .collect();
        let bound = 1.0 / (config.last_hidden() as f64).sqrt();
        let readout = Array2::from_shape_simple_fn((config.n_classes, config.last_hidden()), || {
            rng.random_range(-bound..=bound)
        });
        Ok(Self {
            config,
            layers,
            readout,
        })
    }

    /// Checks shapes, finiteness and bounds against `config`.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.hidden_sizes.len() {
            return Err(Error::Checkpoint(format!(
                "{} layers for {} hidden sizes",
                self.layers.len(),
                self.config.hidden_sizes.len()
            )));
        }
        for (l, ((layer, fan_in), &n)) in self
            .layers
            .iter()
            .zip(self.config.layer_inputs())
            .zip(&self.config.hidden_sizes)
            .enumerate()
        {
            if layer.weights.dim() != (n, fan_in) {
                return Err(Error::Checkpoint(format!(
                    "layer {l}: weights {:?}, expected {:?}",
                    layer.weights.dim(),
                    (n, fan_in)
                )));
            }
            layer.check(l, &self.config.bounds)?;
        }
        let expected = (self.config.n_classes, self.config.last_hidden());
        if self.readout.dim() != expected {
            return Err(Error::Checkpoint(format!(
                "readout weights {:?}, expected {expected:?}",
                self.readout.dim()
            )));
        }
        if self.readout.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("readout weights".into()));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Re-imposes the neuron-constant bounds, e.g. after an optimizer step.
    pub fn project(&mut self) {
        let bounds = self.config.bounds.clone();
        for layer in &mut self.layers {
            layer.project(&bounds);
        }
    }

    pub fn stream(&self) -> NetworkState<'_> {
        NetworkState::new(self)
    }

    pub fn forward(&self, features: &FeatureMatrix) -> Result<ReadoutTrace> {
        self.check_features(features)?;
        let mut state = self.stream();
        let mut u_r = Array2::zeros((features.n_frames(), self.n_classes()));
        let mut spike_counts = vec![Vec::with_capacity(features.n_frames()); self.layers.len()];
        for (t, frame) in features.frames.axis_iter(Axis(0)).enumerate() {
            let step = state.step(frame)?;
            u_r.row_mut(t).assign(&step.u_r);
            for (counts, &c) in spike_counts.iter_mut().zip(&step.spike_counts) {
                counts.push(c);
            }
        }
        Ok(ReadoutTrace { u_r, spike_counts })
    }

    /// Forward pass that keeps every intermediate needed for backpropagation.
    pub(crate) fn forward_tape(&self, features: &FeatureMatrix) -> Result<Tape> {
        self.check_features(features)?;
        let n_steps = features.n_frames();
        let mut tape = Tape {
            layers: self
                .layers
                .iter()
                .map(|p| LayerTape {
                    weighted_input: Array2::zeros((n_steps, p.width())),
                    u_mem: Array2::zeros((n_steps, p.width())),
                    spikes: Array2::zeros((n_steps, p.width())),
                })
                .collect(),
            u_r: Array2::zeros((n_steps, self.n_classes())),
        };
        let mut state = self.stream();
        for (t, frame) in features.frames.axis_iter(Axis(0)).enumerate() {
            state.advance(frame)?;
            for (rec, (layer_state, z)) in tape
                .layers
                .iter_mut()
                .zip(state.layers.iter().zip(&state.weighted))
            {
                rec.weighted_input.row_mut(t).assign(z);
                rec.u_mem.row_mut(t).assign(&layer_state.u_mem);
                rec.spikes.row_mut(t).assign(&layer_state.spikes);
            }
            tape.u_r.row_mut(t).assign(&state.u_r);
        }
        Ok(tape)
    }

    fn check_features(&self, features: &FeatureMatrix) -> Result<()> {
        if features.width() != self.config.n_inputs {
            return Err(Error::Dimension {
                context: "feature width",
                expected: self.config.n_inputs,
                got: features.width(),
            });
        }
        Ok(())
    }
}

/// Readout potentials for every timestep plus per-layer spike totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutTrace {
    /// `T × K`
    pub u_r: Array2<f64>,
    /// `spike_counts[layer][t]`
    pub spike_counts: Vec<Vec<usize>>,
}

impl ReadoutTrace {
    pub fn from_potentials(u_r: Array2<f64>) -> Self {
        Self {
            u_r,
            spike_counts: Vec::new(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.u_r.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.u_r.ncols()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerTape {
    pub weighted_input: Array2<f64>,
    pub u_mem: Array2<f64>,
    pub spikes: Array2<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct Tape {
    pub layers: Vec<LayerTape>,
    pub u_r: Array2<f64>,
}

/// Result of feeding one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub u_r: Array1<f64>,
    pub spike_counts: Vec<usize>,
}

/// Mutable inference state of a network, advanced one frame at a time.
#[derive(Clone, Debug)]
pub struct NetworkState<'a> {
    net: &'a Network,
    layers: Vec<LayerState>,
    weighted: Vec<Array1<f64>>,
    u_r: Array1<f64>,
    steps: usize,
}

impl<'a> NetworkState<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self {
            layers: net.layers.iter().map(|p| LayerState::zeros(p.width())).collect(),
            weighted: net.layers.iter().map(|p| Array1::zeros(p.width())).collect(),
            u_r: Array1::zeros(net.n_classes()),
            steps: 0,
            net,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layer_states(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn step(&mut self, frame: ArrayView1<'_, f64>) -> Result<StepOutput> {
        self.advance(frame)?;
        Ok(StepOutput {
            u_r: self.u_r.clone(),
            spike_counts: self.layers.iter().map(LayerState::spike_count).collect(),
        })
    }

    fn advance(&mut self, frame: ArrayView1<'_, f64>) -> Result<()> {
        let net = self.net;
        if frame.len() != net.config.n_inputs {
            return Err(Error::Dimension {
                context: "frame width",
                expected: net.config.n_inputs,
                got: frame.len(),
            });
        }
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input frame {}", self.steps)));
        }
        // Deeper layers read their predecessor's spikes from the previous step, so the
        // projections are taken before any layer is advanced.
        self.weighted[0] = net.layers[0].weights.dot(&frame);
        for l in 1..net.layers.len() {
            self.weighted[l] = net.layers[l].weights.dot(&self.layers[l - 1].spikes);
        }
        for (l, params) in net.layers.iter().enumerate() {
            let mut next = LayerState::zeros(params.width());
            advance_neurons(&self.layers[l], self.weighted[l].view(), params, &mut next);
            if let Some(i) = next.u_mem.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "membrane potential, layer {l} neuron {i}, timestep {}",
                    self.steps
                )));
            }
            self.layers[l] = next;
        }
        let last = &self.layers[net.layers.len() - 1].spikes;
        let drive = net.readout.dot(last);
        self.u_r = &self.u_r * net.config.readout_decay + &drive;
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(alpha: f64, beta: f64, a: f64, b: f64) -> AdLifParams {
        AdLifParams {
            alpha: array![alpha],
            beta: array![beta],
            a: array![a],
            b: array![b],
            v_th: 1.0,
            weights: array![[1.0]],
        }
    }

    #[test]
    fn quiescent_neuron_stays_quiet() {
        let p = scalar_params(0.5, 0.7, 0.3, 0.4);
        let s = adlif_step(&LayerState::zeros(1), array![0.0].view(), &p).unwrap();
        assert_eq!(s, LayerState::zeros(1));
    }

    #[test]
    fn soft_reset_trace() {
        let p = scalar_params(0.5, 1.0, 0.0, 0.0);
        let s0 = adlif_step(&LayerState::zeros(1), array![0.8].view(), &p).unwrap();
        assert_eq!((s0.u_mem[0], s0.spikes[0]), (0.8, 0.0));
        let s1 = adlif_step(&s0, array![0.8].view(), &p).unwrap();
        assert!((s1.u_mem[0] - 1.2).abs() < 1e-15);
        assert_eq!(s1.spikes[0], 1.0);
        let s2 = adlif_step(&s1, array![0.0].view(), &p).unwrap();
        assert!((s2.u_mem[0] - 0.1).abs() < 1e-15);
        assert_eq!(s2.spikes[0], 0.0);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let p = scalar_params(0.5, 1.0, 0.0, 0.0);
        assert!(matches!(
            adlif_step(&LayerState::zeros(1), array![0.0, 1.0].view(), &p),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            adlif_step(&LayerState::zeros(1), array![f64::INFINITY].view(), &p),
            Err(Error::NonFinite(_))
        ));
        assert!(readout_step(array![0.0].view(), array![f64::NAN].view(), 0.5).is_err());
        assert!(readout_step(array![0.0].view(), array![1.0, 2.0].view(), 0.5).is_err());
    }

    #[test]
    fn readout_cases() {
        let prev = array![3.0, -2.0];
        let input = array![0.25, 0.5];
        assert_eq!(readout_step(prev.view(), input.view(), 0.0).unwrap(), input);

        let mut u = array![1.5, -0.5];
        for _ in 0..50 {
            u = readout_step(u.view(), array![0.0, 0.0].view(), 1.0).unwrap();
        }
        assert_eq!(u, array![1.5, -0.5]);

        let mut u = array![0.0];
        for t in 0..30 {
            u = readout_step(u.view(), array![1.0].view(), 0.9).unwrap();
            let closed = (1.0 - 0.9f64.powi(t + 1)) / 0.1;
            assert!((u[0] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_counts() {
        let small = NetworkConfig::default();
        assert_eq!(small.parameter_count(), 40 * 128 + 128 * 128 + 128 * 35 + 4 * 256);
        let large = NetworkConfig {
            hidden_sizes: vec![512, 512],
            ..NetworkConfig::default()
        };
        assert_eq!(large.parameter_count(), 40 * 512 + 512 * 512 + 512 * 35 + 4 * 1024);
    }

    #[test]
    fn projection_caps_potential_gain() {
        let bounds = ParamBounds::default();
        let (mut alpha, mut beta, mut a, mut b) = (0.9, 2.0, 0.8, -1.0);
        bounds.project(&mut alpha, &mut beta, &mut a, &mut b);
        assert_eq!((alpha, beta, b), (0.9, 0.96, 0.0));
        assert!((alpha + a - 1.0).abs() < 1e-15);
    }

    fn small_net(seed: u64, hidden: Vec<usize>, n_inputs: usize, n_classes: usize) -> Network {
        let cfg = NetworkConfig {
            n_inputs,
            hidden_sizes: hidden,
            n_classes,
            ..NetworkConfig::default()
        };
        Network::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_features(seed: u64, t: usize, f: usize, scale: f64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(Array2::from_shape_simple_fn((t, f), || rng.random_range(-scale..scale)))
    }

    #[test]
    fn zero_features_give_zero_readout() {
        let net = small_net(1, vec![8, 8], 5, 3);
        let trace = net.forward(&FeatureMatrix::new(Array2::zeros((20, 5)))).unwrap();
        assert!(trace.u_r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = small_net(2, vec![8, 8], 6, 3);
        let x = random_features(3, 40, 6, 4.0);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.spike_counts.iter().flatten().any(|&c| c > 0));
    }

    #[test]
    fn hand_unrolled_two_steps() {
        let mut net = small_net(4, vec![1], 2, 2);
        let l = &mut net.layers[0];
        l.weights = array![[0.7, 0.6]];
        l.alpha = array![0.5];
        l.beta = array![0.9];
        l.a = array![0.2];
        l.b = array![0.3];
        net.readout = array![[0.4], [-0.25]];
        let d = net.config.readout_decay;
        let x = FeatureMatrix::new(array![[1.0, 0.5], [0.2, -0.1]]);
        let trace = net.forward(&x).unwrap();

        let z0 = 0.7 * 1.0 + 0.6 * 0.5;
        let u0 = 0.5 * 0.0 + 0.9 * z0;
        let s0 = if u0 >= 1.0 { 1.0 } else { 0.0 };
        let z1 = 0.7 * 0.2 + 0.6 * -0.1;
        let u1 = 0.5 * (u0 - s0) + 0.9 * z1 + 0.2 * u0 + 0.3 * s0;
        let s1 = if u1 >= 1.0 { 1.0 } else { 0.0 };
        let r0 = [0.4 * s0, -0.25 * s0];
        let r1 = [d * r0[0] + 0.4 * s1, d * r0[1] - 0.25 * s1];
        for k in 0..2 {
            assert!((trace.u_r[[0, k]] - r0[k]).abs() < 1e-12);
            assert!((trace.u_r[[1, k]] - r1[k]).abs() < 1e-12);
        }
        assert_eq!(trace.spike_counts[0], vec![s0 as usize, s1 as usize]);
    }

    #[test]
    fn isolated_neuron_stays_bounded_under_constant_drive() {
        for &(alpha, drive) in &[(0.36, 1.5), (0.6, 3.0), (0.96, 0.9), (0.96, 10.0)] {
            let p = scalar_params(alpha, 1.0, 0.0, 0.0);
            let mut s = LayerState::zeros(1);
            let bound = drive / (1.0 - alpha) + 1.0;
            for _ in 0..500 {
                s = adlif_step(&s, array![drive].view(), &p).unwrap();
                assert!(s.u_mem[0] <= bound, "alpha {alpha} drive {drive}: {}", s.u_mem[0]);
            }
        }
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let net = small_net(5, vec![4], 3, 2);
        assert!(matches!(
            net.forward(&FeatureMatrix::new(Array2::zeros((5, 4)))),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spikes_are_binary(seed in 0u64..10_000) {
            let net = small_net(seed, vec![6, 5], 4, 3);
            let x = random_features(seed + 1, 25, 4, 5.0);
            let tape = net.forward_tape(&x).unwrap();
            for layer in &tape.layers {
                prop_assert!(layer.spikes.iter().all(|&s| s == 0.0 || s == 1.0));
            }
        }

        #[test]
        fn causality(seed in 0u64..10_000, t in 0usize..20) {
            let net = small_net(seed, vec![6, 5], 4, 3);
            let x = random_features(seed + 7, 20, 4, 5.0);
            let mut y = x.clone();
            for v in y.frames.row_mut(t) {
                *v += 3.0;
            }
            let a = net.forward_tape(&x).unwrap();
            let b = net.forward_tape(&y).unwrap();
            for s in 0..t {
                prop_assert_eq!(a.layers[0].u_mem.row(s), b.layers[0].u_mem.row(s));
            }
            for s in 0..=t {
                prop_assert_eq!(a.layers[1].u_mem.row(s), b.layers[1].u_mem.row(s));
                prop_assert_eq!(a.u_r.row(s), b.u_r.row(s));
            }
        }
    }
}
