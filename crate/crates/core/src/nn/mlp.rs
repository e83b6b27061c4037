//! Dense feed-forward networks with analytic reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`. For each layer, in order, the
//! weight matrix (shape `out x in`, row-major) is followed by the bias vector.
//! Hidden layers apply the configured activation; the output layer is linear.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{check_finite, check_width, Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A multilayer perceptron over a flat parameter vector.
#[derive(Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

/// Intermediates recorded by a forward pass, consumed by [`Mlp::backward_batch`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    /// `activations[0]` is the input; `activations[l]` is the output of hidden layer `l - 1`.
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

impl fmt::Debug for Mlp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mlp")
            .field("layer_sizes", &self.layer_sizes)
            .field("activation", &self.activation)
            .field("param_count", &self.params.len())
            .finish()
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.activation == other.activation
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Matrix products can come back column-major; rows are read as slices
/// downstream.
fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

/// Number of parameters of a network with the given layer sizes.
pub fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Contract(
            "an mlp needs at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Contract("layer sizes must be positive".into()));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: vec![0.0; param_count_for(layer_sizes)],
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn from_params(
        layer_sizes: &[usize],
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        check_width("mlp parameters", param_count_for(layer_sizes), params.len())?;
        check_finite("mlp parameters", &params)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_width(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates every outstanding tape.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count_for(&self.layer_sizes[..=layer])
    }

    fn layer_views(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
            .expect("layer shape matches parameter slice");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    fn check_input(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        check_width("mlp input", self.in_width(), input.ncols())?;
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp input".into()));
        }
        Ok(())
    }

    /// Forward pass on a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (y, tape) = self.forward_batch(x)?;
        Ok((y.into_raw_vec_and_offset().0, tape))
    }

    /// Forward pass on a batch (one example per row), recording a tape.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&input)?;
        let mut activations = Vec::with_capacity(self.n_layers());
        activations.push(input.to_owned());
        let last = self.n_layers() - 1;
        for layer in 0..self.n_layers() {
            let (w, b) = self.layer_views(layer);
            let mut z = standard(activations[layer].dot(&w.t()));
            z += &b;
            if layer == last {
                let tape = Tape {
                    net_id: self.id,
                    generation: self.generation,
                    activations,
                };
                return Ok((z, tape));
            }
            let act = self.activation;
            z.mapv_inplace(|v| act.apply(v));
            activations.push(z);
        }
        unreachable!("an mlp has at least one layer")
    }

    /// Forward pass without recording intermediates.
    pub fn predict_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut x = input.to_owned();
        let last = self.n_layers() - 1;
        for layer in 0..self.n_layers() {
            let (w, b) = self.layer_views(layer);
            let mut z = standard(x.dot(&w.t()));
            z += &b;
            if layer != last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.predict_batch(x)?.into_raw_vec_and_offset().0)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::Contract(
                "tape was recorded by a different network or before a parameter update".into(),
            ));
        }
        Ok(())
    }

    /// Gradient of `<output, output_grad>` for a single example.
    ///
    /// Returns `(param_grad, input_grad)`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        let mut param_grad = vec![0.0; self.param_count()];
        let input_grad = self.backward_batch(tape, g, &mut param_grad)?;
        Ok((param_grad, input_grad.into_raw_vec_and_offset().0))
    }

    /// Batched backward pass. Parameter gradients (summed over the batch) are
    /// added into `param_grad`; the per-row input gradient is returned.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<'_, f64>,
        param_grad: &mut [f64],
    ) -> Result<Array2<f64>> {
        self.check_tape(tape)?;
        check_width("mlp output gradient", self.out_width(), output_grad.ncols())?;
        check_width("mlp output gradient rows", tape.batch_size(), output_grad.nrows())?;
        check_width("mlp parameter gradient", self.param_count(), param_grad.len())?;

        let mut delta = output_grad.to_owned();
        for layer in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
            let off = self.layer_offset(layer);
            let x = &tape.activations[layer];
            {
                let (gw, gb) = param_grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("layer shape");
                gw += &delta.t().dot(x);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &delta.sum_axis(Axis(0));
            }
            let (w, _) = self.layer_views(layer);
            let mut dx = delta.dot(&w);
            if layer > 0 {
                let act = self.activation;
                ndarray::Zip::from(&mut dx)
                    .and(x)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            delta = dx;
        }
        Ok(delta)
    }
}
