//! Dense-network substrate: explicit forward/backward passes, Adam updates,
//! and a finite-difference gradient checker.
//!
//! Everything is double precision and value-semantic: networks, gradients and
//! optimizer states are plain owned data, so clients can train concurrently
//! without locks.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given the preactivation `z` and the output `a = apply(z)`.
    /// ReLU uses 0 at z = 0 (a subgradient choice).
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// One fully connected layer: `output = activation(weights · input + bias)`.
/// Weights are stored row-major, one row of `in_dim` entries per output unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::config(format!(
                "layer parameter shapes {}/{} do not match dims {}x{}",
                weights.len(),
                bias.len(),
                out_dim,
                in_dim
            )));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::config("layer parameters must be finite"));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights (scale sqrt(6 / (in + out))), zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-s..s)).collect();
        DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn validate(&self) -> Result<()> {
        // Re-run the constructor checks; used after deserialization.
        DenseLayer::new(
            self.in_dim,
            self.out_dim,
            self.activation,
            self.weights.clone(),
            self.bias.clone(),
        )
        .map(|_| ())
    }

    fn forward_into(&self, x: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
        z.clear();
        a.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += w * xi;
            }
            z.push(acc);
            a.push(self.activation.apply(acc));
        }
    }
}

/// Activation record from one forward pass: per layer, the input it saw, the
/// preactivations, and the outputs. Sufficient to run backward.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("tape has at least one layer")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Address of one scalar parameter inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::config(format!(
                    "adjacent layer dims mismatch: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(Network { layers })
    }

    /// Validates invariants after an untrusted load (snapshot files).
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        Network::new(self.layers.clone()).map(|_| ())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation
            })
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if x.len() != self.in_dim() {
            return Err(Error::config(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.in_dim()
            )));
        }
        let n = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(n),
            preacts: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            let mut a = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&cur, &mut z, &mut a);
            tape.inputs.push(cur);
            tape.preacts.push(z);
            cur = a.clone();
            tape.outputs.push(a);
        }
        Ok((cur, tape))
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::config(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        let mut a = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut z, &mut a);
            std::mem::swap(&mut cur, &mut a);
        }
        Ok(cur)
    }

    fn check_tape(&self, tape: &Tape, upstream: &[f64]) -> Result<()> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::usage("tape does not match network depth"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if tape.inputs[l].len() != layer.in_dim || tape.preacts[l].len() != layer.out_dim {
                return Err(Error::usage("tape layer shapes do not match network"));
            }
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::usage(format!(
                "upstream gradient length {} does not match output dim {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        Ok(())
    }

    /// Backpropagates `upstream` (dLoss/dOutput), accumulating parameter
    /// gradients into `grads` and returning dLoss/dInput for chaining.
    pub fn backward_into(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grads: &mut GradientBundle,
    ) -> Result<Vec<f64>> {
        self.check_tape(tape, upstream)?;
        if !grads.shape_matches(self) {
            return Err(Error::usage("gradient bundle shape does not match network"));
        }
        let mut delta = self.output_delta(tape, upstream, self.layers.len() - 1);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.inputs[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, xi) in row.iter_mut().zip(input.iter()) {
                        *gw += d * xi;
                    }
                }
                g.bias[o] += d;
            }
            delta = self.propagate_delta(tape, &delta, l);
        }
        Ok(delta)
    }

    /// Like `backward_into` but only computes dLoss/dInput, leaving parameter
    /// gradients untouched. Used when the network is frozen (the generator
    /// phase differentiates through the discriminator without updating it).
    pub fn backward_input_grad(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_tape(tape, upstream)?;
        let mut delta = self.output_delta(tape, upstream, self.layers.len() - 1);
        for l in (0..self.layers.len()).rev() {
            delta = self.propagate_delta(tape, &delta, l);
        }
        Ok(delta)
    }

    /// delta_l = upstream ⊙ act'(z_l) for the topmost layer.
    fn output_delta(&self, tape: &Tape, upstream: &[f64], l: usize) -> Vec<f64> {
        let layer = &self.layers[l];
        (0..layer.out_dim)
            .map(|o| upstream[o] * layer.activation.derivative(tape.preacts[l][o], tape.outputs[l][o]))
            .collect()
    }

    /// Given delta at layer `l`'s output, returns delta at its input
    /// (already multiplied by the previous layer's activation derivative).
    fn propagate_delta(&self, tape: &Tape, delta: &[f64], l: usize) -> Vec<f64> {
        let layer = &self.layers[l];
        let mut t = vec![0.0; layer.in_dim];
        for o in 0..layer.out_dim {
            let d = delta[o];
            if d != 0.0 {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (ti, w) in t.iter_mut().zip(row.iter()) {
                    *ti += d * w;
                }
            }
        }
        if l > 0 {
            let prev = &self.layers[l - 1];
            for (i, ti) in t.iter_mut().enumerate() {
                *ti *= prev
                    .activation
                    .derivative(tape.preacts[l - 1][i], tape.outputs[l - 1][i]);
            }
        }
        t
    }

    /// Smallest |preactivation| over all ReLU units recorded in `tape`, used
    /// to reject probe points sitting too close to a ReLU kink. None when the
    /// network has no ReLU layer.
    pub fn min_abs_relu_preact(&self, tape: &Tape) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.activation == Activation::Relu {
                for z in &tape.preacts[l] {
                    let v = z.abs();
                    if best.map_or(true, |b| v < b) {
                        best = Some(v);
                    }
                }
            }
        }
        best
    }

    /// Coordinate-wise unweighted average. All networks must share one shape.
    pub fn mean_of(nets: &[&Network]) -> Result<Network> {
        let weights: Vec<(&Network, f64)> = nets.iter().map(|n| (*n, 1.0)).collect();
        Network::weighted_mean_of(&weights)
    }

    /// Coordinate-wise weighted average with weights normalized to sum 1.
    pub fn weighted_mean_of(nets: &[(&Network, f64)]) -> Result<Network> {
        let (first, _) = *nets
            .first()
            .ok_or_else(|| Error::protocol("cannot average zero networks"))?;
        let total: f64 = nets.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) {
            return Err(Error::protocol("average weights must sum to a positive value"));
        }
        let mut out = first.clone();
        for layer in &mut out.layers {
            layer.weights.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        for (net, w) in nets {
            if !net.same_shape(first) {
                return Err(Error::protocol("cannot average networks of different shapes"));
            }
            let f = w / total;
            for (dst, src) in out.layers.iter_mut().zip(&net.layers) {
                for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                    *d += f * s;
                }
                for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                    *d += f * s;
                }
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameter coordinates in a fixed order (layer major, weights then bias).
    pub fn param_coords(&self) -> Vec<ProbeCoord> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, layer) in self.layers.iter().enumerate() {
            for i in 0..layer.weights.len() {
                out.push(ProbeCoord {
                    layer: l,
                    kind: ParamKind::Weight,
                    index: i,
                });
            }
            for i in 0..layer.bias.len() {
                out.push(ProbeCoord {
                    layer: l,
                    kind: ParamKind::Bias,
                    index: i,
                });
            }
        }
        out
    }

    pub fn param(&self, c: ProbeCoord) -> Result<f64> {
        let layer = self
            .layers
            .get(c.layer)
            .ok_or_else(|| Error::usage("parameter coordinate out of range"))?;
        let slot = match c.kind {
            ParamKind::Weight => layer.weights.get(c.index),
            ParamKind::Bias => layer.bias.get(c.index),
        };
        slot.copied()
            .ok_or_else(|| Error::usage("parameter coordinate out of range"))
    }

    pub fn set_param(&mut self, c: ProbeCoord, v: f64) -> Result<()> {
        let layer = self
            .layers
            .get_mut(c.layer)
            .ok_or_else(|| Error::usage("parameter coordinate out of range"))?;
        let slot = match c.kind {
            ParamKind::Weight => layer.weights.get_mut(c.index),
            ParamKind::Bias => layer.bias.get_mut(c.index),
        };
        *slot.ok_or_else(|| Error::usage("parameter coordinate out of range"))? = v;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter gradients mirroring a network's shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
}

impl GradientBundle {
    pub fn zeros_for(net: &Network) -> Self {
        GradientBundle {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn shape_matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len()
            })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn get(&self, c: ProbeCoord) -> Result<f64> {
        let layer = self
            .layers
            .get(c.layer)
            .ok_or_else(|| Error::usage("gradient coordinate out of range"))?;
        let slot = match c.kind {
            ParamKind::Weight => layer.weights.get(c.index),
            ParamKind::Bias => layer.bias.get(c.index),
        };
        slot.copied()
            .ok_or_else(|| Error::usage("gradient coordinate out of range"))
    }
}

/// Adam accumulators; moment buffers mirror the target network's shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: GradientBundle,
    second_moment: GradientBundle,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Fresh state with the canonical defaults beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(net: &Network) -> Self {
        AdamState {
            first_moment: GradientBundle::zeros_for(net),
            second_moment: GradientBundle::zeros_for(net),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update with bias correction. Errors on non-finite gradients so a
/// diverging run aborts with a diagnostic instead of poisoning parameters.
pub fn adam_step(
    net: &mut Network,
    grads: &GradientBundle,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grads.shape_matches(net) || !state.first_moment.shape_matches(net) {
        return Err(Error::usage("adam shapes do not match network"));
    }
    if !grads.all_finite() {
        for (l, lg) in grads.layers.iter().enumerate() {
            for (i, v) in lg.weights.iter().chain(lg.bias.iter()).enumerate() {
                if !v.is_finite() {
                    return Err(Error::training(format!(
                        "non-finite gradient {v} at layer {l}, flat index {i}"
                    )));
                }
            }
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first_moment.layers[l];
        let v = &mut state.second_moment.layers[l];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + state.epsilon);
        };
        for i in 0..layer.weights.len() {
            update(&mut layer.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
        }
        for i in 0..layer.bias.len() {
            update(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
    Ok(())
}

/// Knobs for the finite-difference checker. `rel_floor` is the denominator
/// floor of the relative error; `kink_threshold` is how strongly the one-sided
/// differences must disagree (relative to max(|fwd|, |bwd|, 1)) before a probe
/// is reported as sitting on a non-differentiable point and skipped.
#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    pub rel_floor: f64,
    pub kink_threshold: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-4,
            rel_floor: 1e-3,
            kink_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Max relative error among checked probes, per layer (0 when none checked).
    pub per_layer_max_rel_err: Vec<f64>,
    pub checked: usize,
    pub skipped: Vec<ProbeCoord>,
    pub max_rel_err: f64,
    /// Probe with the largest relative error: (coordinate, analytic, central).
    pub worst: Option<(ProbeCoord, f64, f64)>,
}

/// Compares `analytic` (dLoss/dθ at `net`'s current parameters, computed by
/// the caller through the real backward path) against central finite
/// differences of `loss` over the given probe coordinates. Probes where the
/// one-sided differences disagree are reported as skipped, not failed: the
/// hinge and ReLU terms are only almost-everywhere differentiable.
pub fn finite_diff_check_probes<F>(
    net: &Network,
    analytic: &GradientBundle,
    mut loss: F,
    probes: &[ProbeCoord],
    opts: &FdOptions,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&Network) -> Result<f64>,
{
    if !analytic.shape_matches(net) {
        return Err(Error::usage("analytic gradient shape does not match network"));
    }
    let h = opts.step;
    let f0 = loss(net)?;
    if !f0.is_finite() {
        return Err(Error::training("loss is non-finite at the probe point"));
    }
    let mut work = net.clone();
    let mut report = FiniteDiffReport {
        per_layer_max_rel_err: vec![0.0; net.layers.len()],
        checked: 0,
        skipped: Vec::new(),
        max_rel_err: 0.0,
        worst: None,
    };
    for &c in probes {
        let base = work.param(c)?;
        work.set_param(c, base + h)?;
        let fp = loss(&work)?;
        work.set_param(c, base - h)?;
        let fm = loss(&work)?;
        work.set_param(c, base)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::training("loss is non-finite near the probe point"));
        }
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        if (fwd - bwd).abs() > opts.kink_threshold * fwd.abs().max(bwd.abs()).max(1.0) {
            report.skipped.push(c);
            continue;
        }
        let central = (fp - fm) / (2.0 * h);
        let a = analytic.get(c)?;
        let rel = (a - central).abs() / a.abs().max(central.abs()).max(opts.rel_floor);
        report.checked += 1;
        if rel > report.per_layer_max_rel_err[c.layer] {
            report.per_layer_max_rel_err[c.layer] = rel;
        }
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = rel;
            report.worst = Some((c, a, central));
        }
    }
    Ok(report)
}

/// `finite_diff_check_probes` over every parameter of the network.
pub fn finite_diff_check<F>(
    net: &Network,
    analytic: &GradientBundle,
    loss: F,
    opts: &FdOptions,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&Network) -> Result<f64>,
{
    let probes = net.param_coords();
    finite_diff_check_probes(net, analytic, loss, &probes, opts)
}
