use rand::Rng;

use super::layer::DenseLayer;
use crate::error::{check_dim, Error, Result};

/// Hidden-layer nonlinearity. The output layer is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Feed-forward network of dense layers with a shared hidden activation.
///
/// Parameters flatten layer-major, weights before biases, row-major within a
/// weight matrix. Every mutation bumps an internal version so that a [`Tape`]
/// recorded against older parameters is rejected by [`MlpNetwork::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    hidden: Activation,
    version: u64,
}

/// Activations recorded by [`MlpNetwork::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Input fed to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl MlpNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>, hidden: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self {
            layers,
            hidden,
            version: 0,
        })
    }

    /// All-zero network with the given widths (`widths[0]` is the input dimension).
    pub fn zeros(widths: &[usize], hidden: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("need an input width and at least one layer width".into()));
        }
        let layers = widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        Self::from_layers(layers, hidden)
    }

    /// Calibrator body for embedding dimension `embed_dim`: layer widths
    /// `(hidden, hidden, embed_dim)` with ReLU hidden units. Hidden layers use
    /// Kaiming-uniform initialization; the output layer starts at zero so the
    /// residual calibrator is the identity map before training.
    pub fn calibrator<R: Rng + ?Sized>(embed_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let layers = vec![
            DenseLayer::kaiming_uniform(embed_dim, hidden, rng),
            DenseLayer::kaiming_uniform(hidden, hidden, rng),
            DenseLayer::zeros(hidden, embed_dim),
        ];
        Self {
            layers,
            hidden: Activation::Relu,
            version: 0,
        }
    }

    /// Every layer Kaiming-uniform, including the output layer.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("need an input width and at least one layer width".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::kaiming_uniform(w[0], w[1], rng))
            .collect();
        Self::from_layers(layers, hidden)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.write_params(out);
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.num_params();
            layer.read_params(&params[offset..offset + n]);
            offset += n;
        }
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            let next = if i == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok((
            h,
            Tape {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i != last {
                h.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            }
        }
        Ok(h)
    }

    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<MlpGradient> {
        let mut params = vec![0.0; self.num_params()];
        let input = self.backward_accumulate(tape, upstream, &mut params)?;
        Ok(MlpGradient { params, input })
    }

    /// Adds the parameter gradient of `upstream · y` into `grad` and returns the
    /// gradient with respect to the network input.
    pub fn backward_accumulate(&self, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                net: self.version,
            });
        }
        check_dim(self.output_dim(), upstream.len())?;
        check_dim(self.num_params(), grad.len())?;
        let last = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.num_params();
        }
        let mut g = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i != last {
                for (gv, &z) in g.iter_mut().zip(&tape.pre[i]) {
                    *gv *= self.hidden.derivative(z);
                }
            }
            let slot = &mut grad[offsets[i]..offsets[i] + layer.num_params()];
            g = layer.backprop(&tape.inputs[i], &g, slot);
        }
        Ok(g)
    }
}
