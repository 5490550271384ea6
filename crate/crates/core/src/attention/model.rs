use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::spectral;

pub const DEFAULT_TEMPERATURE_FLOOR: f64 = 1e-3;

/// Architecture of the post-LayerNorm transformer encoder.
///
/// Each layer computes
///
/// ```text
/// Aₕ = softmax_rows(H W_Qₕ (H W_Kₕ)ᵀ / s)        s = τ·√d_k, or √d_k without τ
/// U  = LN(H + [A₁ H W_V₁ | … | A_H H W_V_H] W_O)
/// H' = LN(U + tanh(U W₁ + b₁) W₂ + b₂)
/// ```
///
/// and the task head reads the token mean: `y = mean_rows(H_L) W_out + b_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Extra divisor τ on the logits; `None` keeps plain `1/√d_k` scaling.
    pub temperature: Option<f64>,
    pub temperature_floor: f64,
    pub mlp_hidden: usize,
    pub output_dim: usize,
    /// Learned additive position embeddings. Without them the model is
    /// permutation-equivariant up to the pooled head.
    pub positions: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            num_layers: 1,
            num_heads: 1,
            seq_len: 8,
            d_model: 8,
            d_k: 4,
            d_v: 4,
            temperature: None,
            temperature_floor: DEFAULT_TEMPERATURE_FLOOR,
            mlp_hidden: 16,
            output_dim: 1,
            positions: true,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("mlp_hidden", self.mlp_hidden),
            ("output_dim", self.output_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("{name} must be at least 1")));
        }
        if !(self.temperature_floor > 0.0) {
            return Err(Error::domain("temperature floor must be positive"));
        }
        if let Some(t) = self.temperature {
            if !(t >= self.temperature_floor) {
                return Err(Error::domain(format!(
                    "temperature {t} below floor {}",
                    self.temperature_floor
                )));
            }
        }
        Ok(())
    }

    /// Divisor applied to `QKᵀ` before the row softmax.
    pub fn logit_scale(&self) -> f64 {
        let base = (self.d_k as f64).sqrt();
        match self.temperature {
            Some(t) => t * base,
            None => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub pos: Option<Matrix>,
    pub layers: Vec<LayerParams>,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

/// Whether a named tensor is a bias (excluded from spectral clipping).
fn is_bias(name: &str) -> bool {
    name.ends_with(".b1") || name.ends_with(".b2") || name == "head.b"
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self::build(spec, &mut |r, c, _| Matrix::zeros(r, c))
    }

    /// Gaussian init with standard deviation `1/√fan_in`; biases start at zero.
    pub fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        Self::build(spec, &mut |r, c, bias| {
            if bias {
                Matrix::zeros(r, c)
            } else {
                Matrix::random_normal(r, c, 1.0 / (r as f64).sqrt(), rng)
            }
        })
    }

    fn build(spec: &ModelSpec, make: &mut dyn FnMut(usize, usize, bool) -> Matrix) -> Self {
        let d = spec.d_model;
        let pos = spec.positions.then(|| {
            let p = make(spec.seq_len, d, false);
            // Position embeddings start small relative to token content.
            p.scale(0.1)
        });
        let layers = (0..spec.num_layers)
            .map(|_| LayerParams {
                heads: (0..spec.num_heads)
                    .map(|_| HeadParams {
                        wq: make(d, spec.d_k, false),
                        wk: make(d, spec.d_k, false),
                        wv: make(d, spec.d_v, false),
                    })
                    .collect(),
                wo: make(spec.num_heads * spec.d_v, d, false),
                w1: make(d, spec.mlp_hidden, false),
                b1: make(1, spec.mlp_hidden, true),
                w2: make(spec.mlp_hidden, d, false),
                b2: make(1, d, true),
            })
            .collect();
        ModelParams {
            pos,
            layers,
            w_out: make(d, spec.output_dim, false),
            b_out: make(1, spec.output_dim, true),
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(p) = &self.pos {
            out.push(("pos".to_string(), p));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{h}.wq"), &head.wq));
                out.push((format!("layer{l}.head{h}.wk"), &head.wk));
                out.push((format!("layer{l}.head{h}.wv"), &head.wv));
            }
            out.push((format!("layer{l}.wo"), &layer.wo));
            out.push((format!("layer{l}.w1"), &layer.w1));
            out.push((format!("layer{l}.b1"), &layer.b1));
            out.push((format!("layer{l}.w2"), &layer.w2));
            out.push((format!("layer{l}.b2"), &layer.b2));
        }
        out.push(("head.w".to_string(), &self.w_out));
        out.push(("head.b".to_string(), &self.b_out));
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.pos {
            out.push(("pos".to_string(), p));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("layer{l}.head{h}.wq"), &mut head.wq));
                out.push((format!("layer{l}.head{h}.wk"), &mut head.wk));
                out.push((format!("layer{l}.head{h}.wv"), &mut head.wv));
            }
            out.push((format!("layer{l}.wo"), &mut layer.wo));
            out.push((format!("layer{l}.w1"), &mut layer.w1));
            out.push((format!("layer{l}.b1"), &mut layer.b1));
            out.push((format!("layer{l}.w2"), &mut layer.w2));
            out.push((format!("layer{l}.b2"), &mut layer.b2));
        }
        out.push(("head.w".to_string(), &mut self.w_out));
        out.push(("head.b".to_string(), &mut self.b_out));
        out
    }

    /// Weight matrices subject to the operator-norm budget (everything but biases).
    pub fn weights(&self) -> Vec<(String, &Matrix)> {
        self.tensors()
            .into_iter()
            .filter(|(name, _)| !is_bias(name))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.rows() * m.cols()).sum()
    }

    pub fn check_shapes(&self, spec: &ModelSpec) -> Result<()> {
        let reference = ModelParams::zeros(spec);
        let ours = self.tensors();
        let theirs = reference.tensors();
        if ours.len() != theirs.len() {
            return Err(Error::shape(format!(
                "{} tensors, spec expects {}",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "{name}: {:?}, spec expects {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self += c · other`, tensor by tensor.
    pub fn axpy(&mut self, c: f64, other: &ModelParams) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::shape("parameter structures differ"));
        }
        for ((_, d), (_, s)) in dst.iter_mut().zip(&src) {
            d.axpy(c, s)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (_, m) in self.tensors_mut() {
            for v in m.as_mut_slice() {
                *v *= c;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn max_operator_norm(&self) -> Result<f64> {
        let mut top = 0.0f64;
        for (_, w) in self.weights() {
            top = top.max(spectral::operator_norm(w)?);
        }
        Ok(top)
    }
}

/// Rescales every weight matrix whose operator norm exceeds `b` by `b/σ₁`.
/// Matrices already within budget (and all biases) are left untouched.
pub fn clip_spectral(params: &ModelParams, b: f64) -> Result<ModelParams> {
    if !(b > 0.0) {
        return Err(Error::domain("clip bound must be positive"));
    }
    let mut out = params.clone();
    for (name, w) in out.tensors_mut() {
        if is_bias(&name) {
            continue;
        }
        let sigma = spectral::operator_norm(w)?;
        if sigma > b {
            let c = b / sigma;
            for v in w.as_mut_slice() {
                *v *= c;
            }
        }
    }
    Ok(out)
}

/// Lipschitz constants of the network with respect to its attention blocks.
///
/// LayerNorm and residual branches are counted as 1-Lipschitz, `tanh` as
/// 1-Lipschitz, so each layer contributes `(1 + ‖W_O‖·maxₕ‖W_Vₕ‖)(1 + ‖W₁‖‖W₂‖)`
/// and the head contributes `‖W_out‖`. The softmax map is bounded by `n / s`
/// with `s` the logit divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBudget {
    /// Largest operator norm over all weight matrices.
    pub b: f64,
    pub c_lip: f64,
    pub l_att: f64,
    pub l_tot: f64,
    /// Scale with `E‖Z‖_op ≤ B/√n`.
    pub sens_op: f64,
    /// Scale with `‖Z‖_F ≤ B_F`.
    pub sens_frob: f64,
}

impl LipschitzBudget {
    pub fn from_params(params: &ModelParams, spec: &ModelSpec) -> Result<Self> {
        let mut c_lip = 1.0;
        for layer in &params.layers {
            let mut v_max = 0.0f64;
            for head in &layer.heads {
                v_max = v_max.max(spectral::operator_norm(&head.wv)?);
            }
            let attn = 1.0 + spectral::operator_norm(&layer.wo)? * v_max;
            let mlp =
                1.0 + spectral::operator_norm(&layer.w1)? * spectral::operator_norm(&layer.w2)?;
            c_lip *= attn * mlp;
        }
        c_lip *= spectral::operator_norm(&params.w_out)?.max(f64::MIN_POSITIVE);
        let l_att = spec.seq_len as f64 / spec.logit_scale();
        Ok(LipschitzBudget {
            b: params.max_operator_norm()?,
            c_lip,
            l_att,
            l_tot: c_lip * l_att,
            sens_op: 1.0,
            sens_frob: 1.0,
        })
    }

    /// Sets the sensitivity scales from observed `Z` matrices:
    /// `B = √n · mean ‖Z‖_op`, `B_F = max ‖Z‖_F`.
    pub fn with_sensitivities(mut self, zs: &[Matrix]) -> Result<Self> {
        if zs.is_empty() {
            return Err(Error::InsufficientData("no sensitivity matrices".into()));
        }
        let n = zs[0].rows() as f64;
        let mut op_sum = 0.0;
        let mut frob_max = 0.0f64;
        for z in zs {
            op_sum += spectral::operator_norm(z)?;
            frob_max = frob_max.max(z.frobenius_norm());
        }
        self.sens_op = n.sqrt() * op_sum / zs.len() as f64;
        self.sens_frob = frob_max;
        Ok(self)
    }
}
