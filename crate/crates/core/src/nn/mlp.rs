use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// Fully connected layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn check(&self) -> Result<(), NnError> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(NnError::Config("layer sizes must be positive".into()));
        }
        if self.weights.len() != self.inputs * self.outputs {
            return Err(NnError::Shape {
                context: "layer weights",
                expected: self.inputs * self.outputs,
                found: self.weights.len(),
            });
        }
        if self.bias.len() != self.outputs {
            return Err(NnError::Shape {
                context: "layer bias",
                expected: self.outputs,
                found: self.bias.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)
        }));
    }
}

/// Feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_trace`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients laid out exactly like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: Gradients,
    /// Gradient with respect to the network input.
    pub input_grad: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
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

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    /// Name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(j) = l.weights.iter().position(|g| !g.is_finite()) {
                return Some(format!("layer{i}.weight[{j}]"));
            }
            if let Some(j) = l.bias.iter().position(|g| !g.is_finite()) {
                return Some(format!("layer{i}.bias[{j}]"));
            }
        }
        None
    }
}

impl Mlp {
    /// Builds a network with Glorot-uniform initialization. `sizes` lists
    /// every layer width including input and output.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::Config(
                "need at least an input and an output size".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(NnError::Config("layer sizes must be positive".into()));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Config("network has no layers".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::Shape {
                    context: "adjacent layers",
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape {
                context: "network input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&cur, &mut next);
            next.iter_mut().for_each(|z| *z = layer.activation.apply(*z));
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NnError> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(input, &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Backpropagates `output_grad` (dL/dy) through the recorded trace.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Backprop, NnError> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(trace, output_grad, &mut grads)?;
        Ok(Backprop { grads, input_grad })
    }

    /// Like [`Mlp::backward`] but adds the parameter gradients into `acc`,
    /// which must be laid out like this network. Returns dL/dx.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        acc: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        self.backprop(trace, output_grad, Some(acc))
    }

    /// dL/dx only; parameter gradients are not formed.
    pub fn input_gradient(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Vec<f64>, NnError> {
        self.backprop(trace, output_grad, None)
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        mut acc: Option<&mut Gradients>,
    ) -> Result<Vec<f64>, NnError> {
        let matches = trace.pre.len() == self.layers.len()
            && trace.input.len() == self.input_dim()
            && trace
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == l.outputs);
        if !matches {
            return Err(NnError::MissingContext(
                "trace was not produced by a network of this architecture".into(),
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::Shape {
                context: "output gradient",
                expected: self.output_dim(),
                found: output_grad.len(),
            });
        }
        let acc_matches = acc.as_ref().is_none_or(|acc| {
            acc.layers.len() == self.layers.len()
                && acc
                    .layers
                    .iter()
                    .zip(&self.layers)
                    .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
        });
        if !acc_matches {
            return Err(NnError::Architecture(
                "gradient accumulator does not match the network".into(),
            ));
        }

        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(&trace.pre[last])
            .zip(&trace.post[last])
            .map(|((g, &z), &a)| g * self.layers[last].activation.derivative(z, a))
            .collect();

        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = if idx == 0 {
                &trace.input
            } else {
                &trace.post[idx - 1]
            };
            if let Some(acc) = acc.as_deref_mut() {
                let g = &mut acc.layers[idx];
                for (row, &d) in g.weights.chunks_exact_mut(layer.inputs).zip(&delta) {
                    if d != 0.0 {
                        row.iter_mut().zip(input).for_each(|(w, &x)| *w += d * x);
                    }
                }
                g.bias.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            }
            let mut prev = vec![0.0; layer.inputs];
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if d != 0.0 {
                    prev.iter_mut().zip(row).for_each(|(p, &w)| *p += w * d);
                }
            }
            if idx > 0 {
                let below = &self.layers[idx - 1];
                prev.iter_mut()
                    .zip(&trace.pre[idx - 1])
                    .zip(&trace.post[idx - 1])
                    .for_each(|((p, &z), &a)| *p *= below.activation.derivative(z, a));
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn same_architecture(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    /// `self <- tau * online + (1 - tau) * self`, elementwise.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(NnError::Config(format!("tau {tau} outside [0, 1]")));
        }
        if !self.same_architecture(online) {
            return Err(NnError::Architecture(format!(
                "target {:?} vs online {:?}",
                self.layer_sizes(),
                online.layer_sizes()
            )));
        }
        if tau == 1.0 {
            self.layers.clone_from(&online.layers);
            return Ok(());
        }
        if tau == 0.0 {
            return Ok(());
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weights
                .iter_mut()
                .chain(t.bias.iter_mut())
                .zip(o.weights.iter().chain(&o.bias))
                .for_each(|(tp, op)| *tp = tau * op + (1.0 - tau) * *tp);
        }
        Ok(())
    }

    /// Adds `step * grads` to the parameters.
    pub(crate) fn apply_delta(&mut self, delta: &Gradients) {
        for (l, g) in self.layers.iter_mut().zip(&delta.layers) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w += d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b += d);
        }
    }
}
