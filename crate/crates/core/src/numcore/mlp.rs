//! Fully connected networks: plain `f64` evaluation with input Jacobians and
//! parameter gradients, plus a tape-backed batched form for training.
//!
//! Flattened parameter order is layer by layer, each layer's weight matrix
//! (`out×in`) row-major followed by its bias vector.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::real::{sigmoid, softplus};
use super::tape::{Tape, Var};
use super::Real;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalActivation {
    #[default]
    Identity,
    Softplus,
    SigmoidScaled {
        scale: f64,
    },
}

impl FinalActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            FinalActivation::Identity => z,
            FinalActivation::Softplus => softplus(z),
            FinalActivation::SigmoidScaled { scale } => scale * sigmoid(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            FinalActivation::Identity => 1.0,
            FinalActivation::Softplus => sigmoid(z),
            FinalActivation::SigmoidScaled { scale } => {
                let s = sigmoid(z);
                scale * s * (1.0 - s)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub final_activation: FinalActivation,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation: Activation::Softplus,
            final_activation: FinalActivation::Identity,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_final(mut self, final_activation: FinalActivation) -> Self {
        self.final_activation = final_activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Invalid(format!(
                "network widths must be >= 1 (input {}, output {}, hidden {:?})",
                self.input_dim, self.output_dim, self.hidden
            )));
        }
        if let FinalActivation::SigmoidScaled { scale } = self.final_activation {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Invalid(format!("sigmoid scale must be positive, got {scale}")));
            }
        }
        Ok(())
    }

    /// `(out, in)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((w, fan_in));
            fan_in = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out×in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(o, i)| Layer {
                    weight: DMatrix::zeros(o, i),
                    bias: DVector::zeros(o),
                })
                .collect(),
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) for weights and biases, seeded by `spec.seed`.
    pub fn init(spec: &MlpSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.weight.ncols() as f64).sqrt();
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    layer.weight[(r, c)] = rng.random_range(-bound..bound);
                }
            }
            for b in layer.bias.iter_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    out.push(layer.weight[(r, c)]);
                }
            }
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn unflatten(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        check_len("flattened parameters", spec.param_count(), flat.len())?;
        let mut params = Self::zeros(spec);
        let mut it = flat.iter().copied();
        for layer in &mut params.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    layer.weight[(r, c)] = it.next().unwrap_or_default();
                }
            }
            for b in layer.bias.iter_mut() {
                *b = it.next().unwrap_or_default();
            }
        }
        Ok(params)
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        dims.len() == self.layers.len()
            && dims.iter().zip(&self.layers).all(|(&(o, i), l)| {
                l.weight.nrows() == o && l.weight.ncols() == i && l.bias.len() == o
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

struct Trace {
    /// pre-activations per layer
    z: Vec<DVector<f64>>,
    /// layer inputs (x, h_1, ..., h_{L-1})
    inputs: Vec<DVector<f64>>,
    output: DVector<f64>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::init(&spec);
        Ok(Self { spec, params })
    }

    pub fn zeroed(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if !params.matches(&spec) {
            return Err(Error::Invalid("parameter shapes do not match network spec".into()));
        }
        Ok(Self { spec, params })
    }

    fn check_output(values: &DVector<f64>) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalFailure { primitive: "mlp" })
        }
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        check_len("network input", self.spec.input_dim, x.len())?;
        let last = self.params.layers.len() - 1;
        let mut h = DVector::from_column_slice(x);
        let mut z_all = Vec::with_capacity(last + 1);
        let mut inputs = Vec::with_capacity(last + 1);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let z = &layer.weight * &h + &layer.bias;
            inputs.push(h);
            h = if l == last {
                z.map(|v| self.spec.final_activation.apply(v))
            } else {
                z.map(|v| self.spec.activation.apply(v))
            };
            z_all.push(z);
        }
        Self::check_output(&h)?;
        Ok(Trace {
            z: z_all,
            inputs,
            output: h,
        })
    }

    fn act_derivative(&self, l: usize, z: &DVector<f64>) -> DVector<f64> {
        if l + 1 == self.params.layers.len() {
            z.map(|v| self.spec.final_activation.derivative(v))
        } else {
            z.map(|v| self.spec.activation.derivative(v))
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.trace(x)?.output)
    }

    /// Output and `∂y/∂x` (`output_dim × input_dim`), by forward tangent propagation.
    pub fn eval_with_jacobian(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let trace = self.trace(x)?;
        let mut jac = DMatrix::<f64>::identity(self.spec.input_dim, self.spec.input_dim);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let d = self.act_derivative(l, &trace.z[l]);
            jac = &layer.weight * jac;
            for (mut row, s) in jac.row_iter_mut().zip(d.iter()) {
                row *= *s;
            }
        }
        Self::check_output(&DVector::from_column_slice(jac.as_slice()))?;
        Ok((trace.output, jac))
    }

    pub fn input_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval_with_jacobian(x)?.1)
    }

    /// Gradient of `⟨cotangent, f(x)⟩` with respect to every parameter.
    pub fn param_grad(&self, x: &[f64], cotangent: &[f64]) -> Result<MlpParams> {
        check_len("cotangent", self.spec.output_dim, cotangent.len())?;
        let trace = self.trace(x)?;
        let mut grad = MlpParams::zeros(&self.spec);
        let mut g = DVector::from_column_slice(cotangent);
        for l in (0..self.params.layers.len()).rev() {
            let gz = g.component_mul(&self.act_derivative(l, &trace.z[l]));
            grad.layers[l].weight = &gz * trace.inputs[l].transpose();
            grad.layers[l].bias = gz.clone();
            g = self.params.layers[l].weight.tr_mul(&gz);
        }
        Ok(grad)
    }

    /// Registers the parameters as leaves of `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> TapeMlp<'t> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in &self.params.layers {
            let (o, i) = layer.weight.shape();
            let mut w = Vec::with_capacity(o * i);
            for r in 0..o {
                for c in 0..i {
                    w.push(layer.weight[(r, c)]);
                }
            }
            weights.push(tape.leaf(o, i, w));
            biases.push(tape.leaf(1, o, layer.bias.as_slice().to_vec()));
        }
        TapeMlp {
            tape,
            spec: self.spec.clone(),
            weights,
            biases,
        }
    }
}

/// Network parameters recorded on a tape; evaluates `B×in` batches.
pub struct TapeMlp<'t> {
    tape: &'t Tape,
    spec: MlpSpec,
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
}

impl<'t> TapeMlp<'t> {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Leaves in flattened-parameter order.
    pub fn param_vars(&self) -> Vec<Var<'t>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }

    fn hidden_act(&self, z: Var<'t>) -> (Var<'t>, Var<'t>) {
        match self.spec.activation {
            Activation::Softplus => (z.softplus(), z.sigmoid()),
            Activation::Tanh => {
                let t = z.tanh();
                (t, t.lift(1.0) - t * t)
            }
        }
    }

    fn final_act(&self, z: Var<'t>) -> (Var<'t>, Option<Var<'t>>) {
        match self.spec.final_activation {
            FinalActivation::Identity => (z, None),
            FinalActivation::Softplus => (z.softplus(), Some(z.sigmoid())),
            FinalActivation::SigmoidScaled { scale } => {
                let s = z.sigmoid();
                (s.scale(scale), Some((s * (s.lift(1.0) - s)).scale(scale)))
            }
        }
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_tangents(x, false)?.0)
    }

    /// Batched output `B×out`, and when `tangents` is set, `∂y/∂x_k` as a
    /// `B×out` block for every input coordinate `k`.
    pub fn forward_with_tangents(
        &self,
        x: Var<'t>,
        tangents: bool,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let (b, cols) = x.shape();
        check_len("network input", self.spec.input_dim, cols)?;
        let n_in = self.spec.input_dim;
        let mut dh: Vec<Var<'t>> = if tangents {
            (0..n_in)
                .map(|k| {
                    let mut seed = vec![0.0; b * n_in];
                    for r in 0..b {
                        seed[r * n_in + k] = 1.0;
                    }
                    self.tape.constant(b, n_in, seed)
                })
                .collect()
        } else {
            Vec::new()
        };
        let last = self.weights.len() - 1;
        let mut h = x;
        for l in 0..=last {
            let z = self.tape.add_row(self.tape.matmul_nt(h, self.weights[l]), self.biases[l]);
            let dz: Vec<Var<'t>> = dh
                .iter()
                .map(|d| self.tape.matmul_nt(*d, self.weights[l]))
                .collect();
            if l == last {
                let (y, slope) = self.final_act(z);
                h = y;
                dh = match slope {
                    None => dz,
                    Some(s) => dz.into_iter().map(|d| s * d).collect(),
                };
            } else {
                let (y, slope) = self.hidden_act(z);
                h = y;
                dh = dz.into_iter().map(|d| slope * d).collect();
            }
        }
        Ok((h, dh))
    }
}

/// Value and parameter gradients of a scalar built on a tape from network
/// outputs, network input-derivatives and the other recorded primitives.
///
/// Returns one gradient per network, shaped like its parameters.
pub fn mixed_grad<F>(mlps: &[&Mlp], f: F) -> Result<(f64, Vec<MlpParams>)>
where
    F: for<'t> FnOnce(&'t Tape, &[TapeMlp<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let nets: Vec<TapeMlp<'_>> = mlps.iter().map(|m| m.on_tape(&tape)).collect();
    let out = f(&tape, &nets)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::Invalid("mixed_grad objective must be a scalar".into()));
    }
    let mut grads = Vec::with_capacity(mlps.len());
    for (mlp, net) in mlps.iter().zip(&nets) {
        let vars = net.param_vars();
        let g = tape.gradients(out, &vars)?;
        let flat: Vec<f64> = g.into_iter().flatten().collect();
        grads.push(MlpParams::unflatten(&mlp.spec, &flat)?);
    }
    Ok((value[0], grads))
}
