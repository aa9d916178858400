//! Layered fully-connected network and its gradient container.

use rand::Rng;

use crate::error::{Error, Result};
use crate::stream::StreamRng;

use super::tensor::Tensor;

/// One layer of the network. `Linear` owns parameters; `Relu` is stateless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Linear { in_dim: usize, out_dim: usize },
    Relu,
}

/// Fully-connected network: an ordered list of layer specs plus one weight
/// matrix `[out_dim, in_dim]` and one bias vector `[out_dim]` per `Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Gradients congruent to a network's weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_weights: Vec<Tensor>,
    pub d_biases: Vec<Tensor>,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let mut prev_out: Option<usize> = None;
    let mut linear_count = 0;
    for spec in specs {
        if let LayerSpec::Linear { in_dim, out_dim } = spec {
            if *in_dim == 0 || *out_dim == 0 {
                return Err(Error::Dimension("linear dims must be positive".into()));
            }
            if let Some(prev) = prev_out {
                if prev != *in_dim {
                    return Err(Error::Dimension(format!(
                        "linear in_dim {} does not match previous out_dim {}",
                        in_dim, prev
                    )));
                }
            }
            prev_out = Some(*out_dim);
            linear_count += 1;
        }
    }
    if linear_count == 0 {
        return Err(Error::Dimension("network needs at least one linear layer".into()));
    }
    Ok(())
}

impl Network {
    /// Initializes parameters from the seeded stream: weights uniform in
    /// `[-sqrt(6/(in+out)), +sqrt(6/(in+out))]`, biases zero.
    pub fn init(specs: Vec<LayerSpec>, rng: &mut StreamRng) -> Result<Self> {
        validate_specs(&specs)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for spec in &specs {
            if let LayerSpec::Linear { in_dim, out_dim } = spec {
                let limit = (6.0 / (*in_dim + *out_dim) as f64).sqrt();
                let data: Vec<f64> = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                weights.push(Tensor::matrix(*out_dim, *in_dim, data)?);
                biases.push(Tensor::zeros(vec![*out_dim]));
            }
        }
        Ok(Network {
            specs,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters, checking congruence.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    ) -> Result<Self> {
        validate_specs(&specs)?;
        let linear: Vec<(usize, usize)> = specs
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Linear { in_dim, out_dim } => Some((*in_dim, *out_dim)),
                LayerSpec::Relu => None,
            })
            .collect();
        if weights.len() != linear.len() || biases.len() != linear.len() {
            return Err(Error::Dimension(format!(
                "{} linear layers but {} weight / {} bias tensors",
                linear.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (i, (in_dim, out_dim)) in linear.iter().enumerate() {
            if weights[i].shape() != [*out_dim, *in_dim] {
                return Err(Error::Dimension(format!(
                    "weight {} has shape {:?}, expected [{}, {}]",
                    i,
                    weights[i].shape(),
                    out_dim,
                    in_dim
                )));
            }
            if biases[i].shape() != [*out_dim] {
                return Err(Error::Dimension(format!(
                    "bias {} has shape {:?}, expected [{}]",
                    i,
                    biases[i].shape(),
                    out_dim
                )));
            }
        }
        Ok(Network {
            specs,
            weights,
            biases,
        })
    }

    /// Convenience constructor: `in_dim -> hidden[0] -> ... -> out_dim` with
    /// ReLU between consecutive linear layers.
    pub fn mlp(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        let mut cur = in_dim;
        for &h in hidden {
            specs.push(LayerSpec::Linear {
                in_dim: cur,
                out_dim: h,
            });
            specs.push(LayerSpec::Relu);
            cur = h;
        }
        specs.push(LayerSpec::Linear {
            in_dim: cur,
            out_dim,
        });
        Network::init(specs, rng)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }

    /// Number of linear layers.
    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Total parameter count (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    pub fn in_dim(&self) -> usize {
        self.specs
            .iter()
            .find_map(|s| match s {
                LayerSpec::Linear { in_dim, .. } => Some(*in_dim),
                LayerSpec::Relu => None,
            })
            .expect("validated network has a linear layer")
    }

    pub fn out_dim(&self) -> usize {
        self.specs
            .iter()
            .rev()
            .find_map(|s| match s {
                LayerSpec::Linear { out_dim, .. } => Some(*out_dim),
                LayerSpec::Relu => None,
            })
            .expect("validated network has a linear layer")
    }

    /// Applies the network to a `[batch, in_dim]` input (or a single `[in_dim]`
    /// sample, in which case the output is also 1-D).
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let (acts, _) = self.forward_cached(inputs)?;
        let out = acts.into_iter().last().expect("at least the input");
        out.check_finite("forward output")?;
        Ok(out)
    }

    /// Forward pass keeping every layer input; used by backprop.
    /// Returns (activations, was_1d): `activations[0]` is the (2-D) input and
    /// `activations[i+1]` the output of layer `i`.
    pub(crate) fn forward_cached(&self, inputs: &Tensor) -> Result<(Vec<Tensor>, bool)> {
        inputs.check_finite("forward input")?;
        let was_1d = inputs.ndim() == 1;
        if inputs.ndim() > 2 {
            return Err(Error::Dimension(format!(
                "forward expects 1-D or 2-D input, got shape {:?}",
                inputs.shape()
            )));
        }
        let batch = inputs.rows();
        if inputs.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input dim {} does not match network in_dim {}",
                inputs.cols(),
                self.in_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.specs.len() + 1);
        let first = if was_1d {
            Tensor::matrix(1, inputs.cols(), inputs.data().to_vec())?
        } else {
            inputs.clone()
        };
        acts.push(first);
        let mut linear_idx = 0;
        for spec in &self.specs {
            let x = acts.last().expect("nonempty");
            let next = match spec {
                LayerSpec::Linear { in_dim, out_dim } => {
                    let w = self.weights[linear_idx].data();
                    let b = self.biases[linear_idx].data();
                    linear_idx += 1;
                    let xd = x.data();
                    let mut out = vec![0.0; batch * out_dim];
                    for s in 0..batch {
                        let xrow = &xd[s * in_dim..(s + 1) * in_dim];
                        let orow = &mut out[s * out_dim..(s + 1) * out_dim];
                        for (o, val) in orow.iter_mut().enumerate() {
                            let wrow = &w[o * in_dim..(o + 1) * in_dim];
                            let mut acc = b[o];
                            for i in 0..*in_dim {
                                acc = wrow[i].mul_add(xrow[i], acc);
                            }
                            *val = acc;
                        }
                    }
                    Tensor::matrix(batch, *out_dim, out)?
                }
                LayerSpec::Relu => {
                    let data: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
                    Tensor::new(x.shape().to_vec(), data)?
                }
            };
            acts.push(next);
        }
        Ok((acts, was_1d))
    }

    /// Zero-filled gradient set congruent with this network.
    pub fn zero_gradients(&self) -> GradientSet {
        GradientSet {
            d_weights: self
                .weights
                .iter()
                .map(|w| Tensor::zeros(w.shape().to_vec()))
                .collect(),
            d_biases: self
                .biases
                .iter()
                .map(|b| Tensor::zeros(b.shape().to_vec()))
                .collect(),
        }
    }
}

impl GradientSet {
    pub(crate) fn check_congruent(&self, net: &Network) -> Result<()> {
        if self.d_weights.len() != net.weights.len() || self.d_biases.len() != net.biases.len() {
            return Err(Error::Dimension(
                "gradient set layer count does not match network".into(),
            ));
        }
        for (g, w) in self.d_weights.iter().zip(&net.weights) {
            if !g.same_shape(w) {
                return Err(Error::Dimension(format!(
                    "weight gradient shape {:?} != {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
        }
        for (g, b) in self.d_biases.iter().zip(&net.biases) {
            if !g.same_shape(b) {
                return Err(Error::Dimension(format!(
                    "bias gradient shape {:?} != {:?}",
                    g.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}
