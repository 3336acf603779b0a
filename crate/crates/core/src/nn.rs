//! Dense feed-forward networks, losses, and the Adam optimizer.
//!
//! Parameters of a [`DenseNet`] live in one flat `Vec<f64>`. Layer `l` with
//! `n_in` inputs and `n_out` outputs occupies `n_out * n_in` weights (row-major,
//! one row per output unit) followed by `n_out` biases. The same order is used
//! by the weight file format, the optimizer state, and gradient vectors, so all
//! three can be indexed with one offset.
//!
//! Batched inputs and outputs are flat row-major buffers of shape
//! `(rows, dim)`.
//!
//! The output layer has no activation. Callers apply `tanh` or a sigmoid as
//! their loss or reward requires.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's own output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerLayout {
    n_in: usize,
    n_out: usize,
    w_off: usize,
    b_off: usize,
}

/// A fully connected network with a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config(format!(
            "layer_sizes needs at least an input and an output layer, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut net = Self::zeros(sizes, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers().collect::<Vec<_>>() {
            let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut net.params[layer.w_off..layer.b_off] {
                *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub(crate) fn from_parts(
        sizes: Vec<usize>,
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_sizes(&sizes)?;
        let expected = param_count(&sizes);
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes,
            activation,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Copy parameters from a net of identical shape.
    pub fn copy_params_from(&mut self, other: &DenseNet) -> Result<()> {
        if self.sizes != other.sizes || self.activation != other.activation {
            return Err(Error::compat(format!(
                "cannot copy {:?}/{} into {:?}/{}",
                other.sizes,
                other.activation.name(),
                self.sizes,
                self.activation.name()
            )));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn layers(&self) -> impl Iterator<Item = LayerLayout> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let layout = LayerLayout {
                n_in,
                n_out,
                w_off: off,
                b_off: off + n_in * n_out,
            };
            off += n_in * n_out + n_out;
            layout
        })
    }

    fn rows_of(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if inputs.is_empty() || inputs.len() % d != 0 {
            return Err(Error::Shape {
                expected: d,
                got: inputs.len(),
            });
        }
        Ok(inputs.len() / d)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        self.forward_batch(x)
    }

    /// Forward pass over `inputs.len() / input_dim` rows.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let rows = self.rows_of(inputs)?;
        let mut current = inputs.to_vec();
        let last = self.sizes.len() - 2;
        for (i, layer) in self.layers().enumerate() {
            let mut next = vec![0.0; rows * layer.n_out];
            self.affine(&layer, rows, &current, &mut next);
            if i != last {
                let act = self.activation;
                next.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            current = next;
        }
        Ok(current)
    }

    /// Forward pass that keeps every layer's activations for [`DenseNet::backward`].
    pub fn forward_tape(&self, inputs: &[f64]) -> Result<Tape> {
        let rows = self.rows_of(inputs)?;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(inputs.to_vec());
        let last = self.sizes.len() - 2;
        for (i, layer) in self.layers().enumerate() {
            let mut next = vec![0.0; rows * layer.n_out];
            self.affine(&layer, rows, &acts[i], &mut next);
            if i != last {
                let act = self.activation;
                next.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            acts.push(next);
        }
        Ok(Tape { rows, acts })
    }

    /// Smallest `|z|` over hidden pre-activations for these inputs, or
    /// infinity for smooth activations. A finite-difference probe is only
    /// meaningful when this is well above the step size.
    pub fn kink_margin(&self, inputs: &[f64]) -> Result<f64> {
        if self.activation != Activation::Relu {
            return Ok(f64::INFINITY);
        }
        let rows = self.rows_of(inputs)?;
        let last = self.sizes.len() - 2;
        let mut current = inputs.to_vec();
        let mut margin = f64::INFINITY;
        for layer in self.layers().take(last) {
            let mut next = vec![0.0; rows * layer.n_out];
            self.affine(&layer, rows, &current, &mut next);
            margin = next.iter().fold(margin, |m, z| m.min(z.abs()));
            next.iter_mut().for_each(|z| *z = z.max(0.0));
            current = next;
        }
        Ok(margin)
    }

    /// `out = x * W^T + b` for a block of rows.
    fn affine(&self, layer: &LayerLayout, rows: usize, x: &[f64], out: &mut [f64]) {
        let bias = &self.params[layer.b_off..layer.b_off + layer.n_out];
        for row in out.chunks_exact_mut(layer.n_out) {
            row.copy_from_slice(bias);
        }
        let w = &self.params[layer.w_off..layer.b_off];
        // SAFETY: slice lengths match the (rows, n_in) x (n_in, n_out) product
        // and the (rows, n_out) output; strides describe row-major layouts.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                layer.n_in,
                layer.n_out,
                1.0,
                x.as_ptr(),
                layer.n_in as isize,
                1,
                w.as_ptr(),
                1,
                layer.n_in as isize,
                1.0,
                out.as_mut_ptr(),
                layer.n_out as isize,
                1,
            );
        }
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradient at the raw outputs of a taped forward pass.
    pub fn backward(&self, tape: &Tape, d_output: &[f64]) -> Result<Vec<f64>> {
        let rows = tape.rows;
        if d_output.len() != rows * self.output_dim() {
            return Err(Error::Shape {
                expected: rows * self.output_dim(),
                got: d_output.len(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let layers: Vec<LayerLayout> = self.layers().collect();
        let mut delta = d_output.to_vec();
        for (l, layer) in layers.iter().enumerate().rev() {
            let x = &tape.acts[l];
            let (gw, gb) = grads[layer.w_off..layer.b_off + layer.n_out].split_at_mut(layer.n_in * layer.n_out);
            // dW (n_out x n_in) = delta^T (n_out x rows) * x (rows x n_in)
            // SAFETY: shapes as annotated, all buffers sized accordingly.
            unsafe {
                matrixmultiply::dgemm(
                    layer.n_out,
                    rows,
                    layer.n_in,
                    1.0,
                    delta.as_ptr(),
                    1,
                    layer.n_out as isize,
                    x.as_ptr(),
                    layer.n_in as isize,
                    1,
                    0.0,
                    gw.as_mut_ptr(),
                    layer.n_in as isize,
                    1,
                );
            }
            for row in delta.chunks_exact(layer.n_out) {
                for (b, d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            // dX (rows x n_in) = delta (rows x n_out) * W (n_out x n_in)
            let w = &self.params[layer.w_off..layer.b_off];
            let mut dx = vec![0.0; rows * layer.n_in];
            // SAFETY: shapes as annotated.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.n_out,
                    layer.n_in,
                    1.0,
                    delta.as_ptr(),
                    layer.n_out as isize,
                    1,
                    w.as_ptr(),
                    layer.n_in as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    layer.n_in as isize,
                    1,
                );
            }
            let act = self.activation;
            for (d, a) in dx.iter_mut().zip(x) {
                *d *= act.derivative_from_output(*a);
            }
            delta = dx;
        }
        Ok(grads)
    }

    /// 64-bit FNV-1a digest of shape, activation, and parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        for &s in &self.sizes {
            h.write(&(s as u64).to_le_bytes());
        }
        h.write(self.activation.name().as_bytes());
        for p in &self.params {
            h.write(&p.to_bits().to_le_bytes());
        }
        h.0
    }
}

struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv1a {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Activations recorded by [`DenseNet::forward_tape`].
#[derive(Clone, Debug)]
pub struct Tape {
    rows: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Raw network outputs, `(rows, output_dim)`.
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape always holds the input")
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 3e-4;

    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_net(net: &DenseNet, lr: f64) -> Self {
        Self::new(net.num_params(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::usage("non-finite gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which loss a gradient check should differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Mse,
}

/// Mean binary cross-entropy on raw logits and its gradient per logit.
///
/// Per element: `max(z, 0) - z*y + ln(1 + e^-|z|)`.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            loss += softplus(z) - z * y;
            (sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

/// Mean squared error over every output element and its gradient.
pub fn mse(outputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = outputs.len() as f64;
    let mut loss = 0.0;
    let grad = outputs
        .iter()
        .zip(targets)
        .map(|(&y, &t)| {
            let d = y - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

fn loss_of(kind: LossKind, outputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Bce => bce_with_logits(outputs, targets),
        LossKind::Mse => mse(outputs, targets),
    }
}

/// One Adam step on an arbitrary loss of the raw outputs.
///
/// `loss_fn` receives the outputs of the forward pass and returns the loss
/// and its gradient with respect to those outputs. Returns the pre-update loss.
pub fn train_step_with<F>(net: &mut DenseNet, adam: &mut Adam, inputs: &[f64], loss_fn: F) -> Result<f64>
where
    F: FnOnce(&[f64]) -> (f64, Vec<f64>),
{
    let tape = net.forward_tape(inputs)?;
    let (loss, d_out) = loss_fn(tape.output());
    let grads = net.backward(&tape, &d_out)?;
    adam.update(&mut net.params, &grads)?;
    Ok(loss)
}

fn check_targets(net: &DenseNet, inputs: &[f64], targets: &[f64]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let rows = net.rows_of(inputs)?;
    let expected = rows * net.output_dim();
    if targets.len() != expected {
        return Err(Error::Shape {
            expected,
            got: targets.len(),
        });
    }
    Ok(())
}

/// One Adam step on mean sigmoid-BCE. Labels must be exactly 0 or 1.
pub fn train_step_bce(net: &mut DenseNet, adam: &mut Adam, inputs: &[f64], labels: &[f64]) -> Result<f64> {
    check_targets(net, inputs, labels)?;
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::usage(format!("BCE labels must be 0 or 1, found {bad}")));
    }
    train_step_with(net, adam, inputs, |out| bce_with_logits(out, labels))
}

/// One Adam step on mean squared error.
pub fn train_step_mse(net: &mut DenseNet, adam: &mut Adam, inputs: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(net, inputs, targets)?;
    train_step_with(net, adam, inputs, |out| mse(out, targets))
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator, so gradients that are zero up to
/// rounding are compared in absolute terms.
pub const FD_GUARD: f64 = 1e-6;

/// Largest relative error between backprop and central finite differences.
///
/// Relative error per parameter is `|a - n| / max(|a| + |n|, FD_GUARD)`.
pub fn gradient_check(net: &DenseNet, kind: LossKind, inputs: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(net, inputs, targets)?;
    if net.rows_of(inputs)? > 8 {
        return Err(Error::usage("gradient probes are limited to 8 samples"));
    }
    let tape = net.forward_tape(inputs)?;
    let (_, d_out) = loss_of(kind, tape.output(), targets);
    let analytic = net.backward(&tape, &d_out)?;

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let plus = loss_of(kind, &probe.forward_batch(inputs)?, targets).0;
        probe.params[i] = orig - FD_STEP;
        let minus = loss_of(kind, &probe.forward_batch(inputs)?, targets).0;
        probe.params[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(FD_GUARD);
        worst = worst.max(rel);
    }
    Ok(worst)
}
