//! The four structured sub-networks: mass (M-NN), potential (P-NN),
//! damping (D-NN) and input matrix (A-NN).
//!
//! Mass and damping heads emit `(N²+N)/2` raw values. The first `N` become the
//! diagonal of a lower-triangular factor after a positivity map
//! (`softplus(r) + ε`, or `s·sigmoid(r) + ε` in bounded mode); the remaining
//! values fill the strictly lower triangle column by column. The matrix is
//! `L·Lᵀ`; with `ε > 0` the factor is nonsingular and the matrix positive definite.
//!
//! The input head emits `N·M` values reshaped row-major into `A(q)`,
//! optionally squashed element-wise to `(0, s)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mechanics::{MechanicalModel, Mechanics};
use crate::numcore::{small, Activation, Mlp, MlpSpec, Real, Tape, TapeMlp, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Lnn,
    Hnn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lnn" => Ok(ModelKind::Lnn),
            "hnn" => Ok(ModelKind::Hnn),
            other => Err(Error::Invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiagonalMap {
    #[default]
    Softplus,
    /// `s·sigmoid(r)`, bounding the diagonal of the factor by `s + ε`.
    Bounded { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    #[default]
    Full,
    Diagonal,
}

pub fn triangular_len(n: usize) -> usize {
    (n * n + n) / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyHead {
    pub mlp: Mlp,
    pub epsilon: f64,
    pub diagonal: DiagonalMap,
    pub structure: Structure,
}

impl CholeskyHead {
    pub fn raw_len(n: usize, structure: Structure) -> usize {
        match structure {
            Structure::Full => triangular_len(n),
            Structure::Diagonal => n,
        }
    }

    pub fn new(mlp: Mlp, epsilon: f64, diagonal: DiagonalMap, structure: Structure) -> Result<Self> {
        let n = mlp.spec.input_dim;
        check_len("cholesky head output", Self::raw_len(n, structure), mlp.spec.output_dim)?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if let DiagonalMap::Bounded { scale } = diagonal {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Invalid(format!("diagonal scale must be positive, got {scale}")));
            }
        }
        Ok(Self {
            mlp,
            epsilon,
            diagonal,
            structure,
        })
    }

    fn dim(&self) -> usize {
        self.mlp.spec.input_dim
    }

    /// Lower factor and its tangents from raw outputs and their tangents.
    pub fn factor<T: Real>(&self, raw: &[T], raw_tangents: &[Vec<T>]) -> (Vec<T>, Vec<Vec<T>>) {
        let n = self.dim();
        let zero = raw[0].zero_like();
        let mut l = vec![zero; n * n];
        let mut dl = vec![vec![zero; n * n]; raw_tangents.len()];
        for i in 0..n {
            let (d, slope) = match self.diagonal {
                DiagonalMap::Softplus => (raw[i].softplus(), raw[i].sigmoid()),
                DiagonalMap::Bounded { scale } => {
                    let s = raw[i].sigmoid();
                    (s.scale(scale), (s * (s.lift(1.0) - s)).scale(scale))
                }
            };
            l[i * n + i] = if self.epsilon > 0.0 { d + d.lift(self.epsilon) } else { d };
            for (k, t) in raw_tangents.iter().enumerate() {
                dl[k][i * n + i] = slope * t[i];
            }
        }
        if self.structure == Structure::Full {
            let mut idx = n;
            for j in 0..n {
                for i in j + 1..n {
                    l[i * n + j] = raw[idx];
                    for (k, t) in raw_tangents.iter().enumerate() {
                        dl[k][i * n + j] = t[idx];
                    }
                    idx += 1;
                }
            }
        }
        (l, dl)
    }

    pub fn factor_at(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let raw = self.mlp.eval(q)?;
        let n = self.dim();
        let (l, _) = self.factor(raw.as_slice(), &[]);
        Ok(DMatrix::from_row_slice(n, n, &l))
    }

    /// `L(q)·L(q)ᵀ`
    pub fn matrix_at(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let raw = self.mlp.eval(q)?;
        let n = self.dim();
        let (l, _) = self.factor(raw.as_slice(), &[]);
        Ok(DMatrix::from_row_slice(n, n, &small::llt(&l, n)))
    }
}

/// `L·Lᵀ` from a raw vector of length `(N²+N)/2`.
pub fn cholesky_assemble(raw: &[f64], n: usize, epsilon: f64, bound: Option<f64>) -> Result<DMatrix<f64>> {
    check_len("raw cholesky vector", triangular_len(n), raw.len())?;
    let diagonal = bound.map_or(DiagonalMap::Softplus, |scale| DiagonalMap::Bounded { scale });
    let head = CholeskyHead {
        mlp: Mlp::zeroed(MlpSpec::new(n, triangular_len(n), &[]))?,
        epsilon,
        diagonal,
        structure: Structure::Full,
    };
    let (l, _) = head.factor(raw, &[]);
    Ok(DMatrix::from_row_slice(n, n, &small::llt(&l, n)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialHead {
    pub mlp: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputMatrixHead {
    pub mlp: Mlp,
    pub rows: usize,
    pub cols: usize,
    /// Element-wise `s·sigmoid(·)` squashing.
    pub bound: Option<f64>,
}

impl InputMatrixHead {
    pub fn map<T: Real>(&self, raw: &[T]) -> Vec<T> {
        match self.bound {
            None => raw.to_vec(),
            Some(s) => raw.iter().map(|r| r.sigmoid().scale(s)).collect(),
        }
    }
}

/// Per-head hidden widths and options used to build a [`StructuredModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dof: usize,
    pub inputs: usize,
    #[serde(default)]
    pub kind: ModelKind,
    pub mass_hidden: Vec<usize>,
    pub potential_hidden: Vec<usize>,
    pub damping_hidden: Vec<usize>,
    pub input_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub mass_epsilon: f64,
    #[serde(default)]
    pub mass_bound: Option<f64>,
    #[serde(default)]
    pub damping_structure: Structure,
    #[serde(default)]
    pub input_bound: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    /// Defaults: widths `32×3` (mass), `32×3` (potential), `5×3` (damping),
    /// `16×2` (input), softplus, `ε = 1e-2`.
    pub fn new(dof: usize, inputs: usize) -> Self {
        Self {
            dof,
            inputs,
            kind: ModelKind::Lnn,
            mass_hidden: vec![32; 3],
            potential_hidden: vec![32; 3],
            damping_hidden: vec![5; 3],
            input_hidden: vec![16; 2],
            activation: Activation::Softplus,
            mass_epsilon: 1e-2,
            mass_bound: None,
            damping_structure: Structure::Full,
            input_bound: None,
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.mass_hidden = hidden.to_vec();
        self.potential_hidden = hidden.to_vec();
        self.damping_hidden = hidden.to_vec();
        self.input_hidden = hidden.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_kind(mut self, kind: ModelKind) -> Self {
        self.kind = kind;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredModel {
    pub dof: usize,
    pub inputs: usize,
    pub kind: ModelKind,
    pub mass: CholeskyHead,
    pub potential: PotentialHead,
    pub damping: CholeskyHead,
    pub input: InputMatrixHead,
}

/// The four networks registered on a tape.
pub struct TapeHeads<'t> {
    pub mass: TapeMlp<'t>,
    pub potential: TapeMlp<'t>,
    pub damping: TapeMlp<'t>,
    pub input: TapeMlp<'t>,
}

impl<'t> TapeHeads<'t> {
    pub fn param_vars(&self) -> Vec<Var<'t>> {
        let mut v = self.mass.param_vars();
        v.extend(self.potential.param_vars());
        v.extend(self.damping.param_vars());
        v.extend(self.input.param_vars());
        v
    }
}

impl StructuredModel {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let n = spec.dof;
        let m = spec.inputs;
        if n == 0 || m == 0 {
            return Err(Error::Invalid("model dimensions must be >= 1".into()));
        }
        if spec.mass_epsilon <= 0.0 {
            return Err(Error::config("mass_epsilon", "must be > 0"));
        }
        let head = |out: usize, hidden: &[usize], offset: u64| {
            Mlp::new(
                MlpSpec::new(n, out, hidden)
                    .with_activation(spec.activation)
                    .with_seed(spec.seed.wrapping_mul(4).wrapping_add(offset)),
            )
        };
        let mass_diag = spec
            .mass_bound
            .map_or(DiagonalMap::Softplus, |scale| DiagonalMap::Bounded { scale });
        let mass = CholeskyHead::new(
            head(triangular_len(n), &spec.mass_hidden, 0)?,
            spec.mass_epsilon,
            mass_diag,
            Structure::Full,
        )?;
        let potential = PotentialHead {
            mlp: head(1, &spec.potential_hidden, 1)?,
        };
        let damping = CholeskyHead::new(
            head(
                CholeskyHead::raw_len(n, spec.damping_structure),
                &spec.damping_hidden,
                2,
            )?,
            0.0,
            DiagonalMap::Softplus,
            spec.damping_structure,
        )?;
        let input = InputMatrixHead {
            mlp: head(n * m, &spec.input_hidden, 3)?,
            rows: n,
            cols: m,
            bound: spec.input_bound,
        };
        Self::from_heads(spec.kind, mass, potential, damping, input)
    }

    pub fn from_heads(
        kind: ModelKind,
        mass: CholeskyHead,
        potential: PotentialHead,
        damping: CholeskyHead,
        input: InputMatrixHead,
    ) -> Result<Self> {
        let n = mass.mlp.spec.input_dim;
        check_len("potential head input", n, potential.mlp.spec.input_dim)?;
        check_len("potential head output", 1, potential.mlp.spec.output_dim)?;
        check_len("damping head input", n, damping.mlp.spec.input_dim)?;
        check_len("input head input", n, input.mlp.spec.input_dim)?;
        check_len("input head rows", n, input.rows)?;
        check_len("input head output", input.rows * input.cols, input.mlp.spec.output_dim)?;
        check_len(
            "mass head output",
            CholeskyHead::raw_len(n, mass.structure),
            mass.mlp.spec.output_dim,
        )?;
        check_len(
            "damping head output",
            CholeskyHead::raw_len(n, damping.structure),
            damping.mlp.spec.output_dim,
        )?;
        Ok(Self {
            dof: n,
            inputs: input.cols,
            kind,
            mass,
            potential,
            damping,
            input,
        })
    }

    pub fn heads(&self) -> [&Mlp; 4] {
        [&self.mass.mlp, &self.potential.mlp, &self.damping.mlp, &self.input.mlp]
    }

    pub fn heads_mut(&mut self) -> [&mut Mlp; 4] {
        [
            &mut self.mass.mlp,
            &mut self.potential.mlp,
            &mut self.damping.mlp,
            &mut self.input.mlp,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.heads().iter().map(|h| h.spec.param_count()).sum()
    }

    /// All head parameters, mass/potential/damping/input, each in network order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.heads().iter().flat_map(|h| h.params.flatten()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("model parameters", self.param_count(), flat.len())?;
        let mut offset = 0;
        for h in self.heads_mut() {
            let len = h.spec.param_count();
            h.params = crate::numcore::MlpParams::unflatten(&h.spec, &flat[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }

    fn assemble<T: Real>(
        &self,
        mass_raw: &[T],
        mass_tan: &[Vec<T>],
        potential: T,
        potential_grad: Vec<T>,
        damping_raw: &[T],
        input_raw: &[T],
    ) -> Mechanics<T> {
        let n = self.dof;
        let (l, dl) = self.mass.factor(mass_raw, mass_tan);
        let mass = small::llt(&l, n);
        let mass_jac = dl.iter().map(|d| small::llt_tangent(&l, d, n)).collect();
        let (ld, _) = self.damping.factor(damping_raw, &[]);
        let damping = small::llt(&ld, n);
        Mechanics {
            dof: n,
            inputs: self.inputs,
            mass,
            mass_chol: l,
            mass_jac,
            potential,
            potential_grad,
            damping,
            input: self.input.map(input_raw),
        }
    }

    /// Batched head evaluation on a tape; `q` holds one `B×1` column per coordinate.
    pub fn mechanics_on_tape<'t>(
        &self,
        tape: &'t Tape,
        heads: &TapeHeads<'t>,
        q: &[Var<'t>],
    ) -> Result<Mechanics<Var<'t>>> {
        check_len("configuration", self.dof, q.len())?;
        let x = tape.hstack(q);
        let split = |v: Var<'t>, width: usize| -> Vec<Var<'t>> {
            (0..width).map(|j| tape.column(v, j)).collect()
        };
        let (m_out, m_tan) = heads.mass.forward_with_tangents(x, true)?;
        let mw = self.mass.mlp.spec.output_dim;
        let mass_raw = split(m_out, mw);
        let mass_tan: Vec<Vec<Var<'t>>> = m_tan.into_iter().map(|t| split(t, mw)).collect();
        let (v_out, v_tan) = heads.potential.forward_with_tangents(x, true)?;
        let potential = tape.column(v_out, 0);
        let potential_grad = v_tan.into_iter().map(|t| tape.column(t, 0)).collect();
        let d_out = heads.damping.forward(x)?;
        let damping_raw = split(d_out, self.damping.mlp.spec.output_dim);
        let a_out = heads.input.forward(x)?;
        let input_raw = split(a_out, self.input.mlp.spec.output_dim);
        Ok(self.assemble(&mass_raw, &mass_tan, potential, potential_grad, &damping_raw, &input_raw))
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape) -> TapeHeads<'t> {
        TapeHeads {
            mass: self.mass.mlp.on_tape(tape),
            potential: self.potential.mlp.on_tape(tape),
            damping: self.damping.mlp.on_tape(tape),
            input: self.input.mlp.on_tape(tape),
        }
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_len("configuration", self.dof, q.len())?;
        self.mass.matrix_at(q)
    }

    pub fn damping_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_len("configuration", self.dof, q.len())?;
        self.damping.matrix_at(q)
    }

    pub fn potential(&self, q: &[f64]) -> Result<f64> {
        check_len("configuration", self.dof, q.len())?;
        Ok(self.potential.mlp.eval(q)?[0])
    }

    pub fn potential_grad(&self, q: &[f64]) -> Result<DVector<f64>> {
        check_len("configuration", self.dof, q.len())?;
        let j = self.potential.mlp.input_jacobian(q)?;
        Ok(DVector::from_iterator(self.dof, j.row(0).iter().copied()))
    }

    pub fn input_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_len("configuration", self.dof, q.len())?;
        let raw = self.input.mlp.eval(q)?;
        Ok(DMatrix::from_row_slice(self.dof, self.inputs, &self.input.map(raw.as_slice())))
    }

    /// `∂M_ij/∂q_k`, returned as one `N×N` matrix per `k`.
    pub fn mass_jacobian(&self, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.mechanics(q)?.mass_jacobian())
    }
}

impl MechanicalModel for StructuredModel {
    fn dof(&self) -> usize {
        self.dof
    }

    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        check_len("configuration", self.dof, q.len())?;
        let (m_out, m_jac) = self.mass.mlp.eval_with_jacobian(q)?;
        let mass_tan: Vec<Vec<f64>> = (0..self.dof).map(|k| m_jac.column(k).iter().copied().collect()).collect();
        let (v_out, v_jac) = self.potential.mlp.eval_with_jacobian(q)?;
        let d_out = self.damping.mlp.eval(q)?;
        let a_out = self.input.mlp.eval(q)?;
        Ok(self.assemble(
            m_out.as_slice(),
            &mass_tan,
            v_out[0],
            v_jac.row(0).iter().copied().collect(),
            d_out.as_slice(),
            a_out.as_slice(),
        ))
    }
}
