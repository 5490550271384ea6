use super::model::{ModelParams, ModelSpec};
use super::{attention_matrix, AttentionTrace};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct HeadCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub a: Matrix,
}

pub(crate) struct NormCache {
    pub out: Matrix,
    pub rstd: Vec<f64>,
}

pub(crate) struct LayerCache {
    pub input: Matrix,
    pub heads: Vec<HeadCache>,
    pub concat: Matrix,
    pub ln1: NormCache,
    pub hidden: Matrix,
    pub ln2: NormCache,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) pooled: Vec<f64>,
    pub(crate) output: Vec<f64>,
    pub(crate) seq_len: usize,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn trace(&self) -> AttentionTrace {
        AttentionTrace {
            layers: self
                .layers
                .iter()
                .map(|l| l.heads.iter().map(|h| h.a.clone()).collect())
                .collect(),
        }
    }
}

fn add_row_bias(m: &mut Matrix, bias: &Matrix) {
    let b = bias.row(0);
    for i in 0..m.rows() {
        for (v, &bb) in m.row_mut(i).iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn layer_norm(x: &Matrix) -> NormCache {
    let d = x.cols() as f64;
    let mut out = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        rstd.push(r);
    }
    NormCache { out, rstd }
}

/// Runs the model and keeps everything the backward pass needs.
pub fn forward_cached(params: &ModelParams, spec: &ModelSpec, x: &Matrix) -> Result<ForwardCache> {
    if x.shape() != (spec.seq_len, spec.d_model) {
        return Err(Error::shape(format!(
            "input {:?}, expected ({}, {})",
            x.shape(),
            spec.seq_len,
            spec.d_model
        )));
    }
    if params.layers.len() != spec.num_layers {
        return Err(Error::shape("layer count differs from spec"));
    }
    let mut h = match &params.pos {
        Some(p) if spec.positions => x.add(p)?,
        _ => x.clone(),
    };
    let mut layers = Vec::with_capacity(spec.num_layers);
    for layer in &params.layers {
        let n = h.rows();
        let mut concat = Matrix::zeros(n, spec.num_heads * spec.d_v);
        let mut heads = Vec::with_capacity(spec.num_heads);
        for (hi, head) in layer.heads.iter().enumerate() {
            let q = h.matmul(&head.wq)?;
            let k = h.matmul(&head.wk)?;
            let v = h.matmul(&head.wv)?;
            let a = attention_matrix(&q, &k, spec)?;
            let o = a.matmul(&v)?;
            for i in 0..n {
                concat.row_mut(i)[hi * spec.d_v..(hi + 1) * spec.d_v].copy_from_slice(o.row(i));
            }
            heads.push(HeadCache { q, k, v, a });
        }
        let r1 = h.add(&concat.matmul(&layer.wo)?)?;
        let ln1 = layer_norm(&r1);
        let mut hidden = ln1.out.matmul(&layer.w1)?;
        add_row_bias(&mut hidden, &layer.b1);
        let hidden = hidden.map(f64::tanh);
        let mut f = hidden.matmul(&layer.w2)?;
        add_row_bias(&mut f, &layer.b2);
        let ln2 = layer_norm(&ln1.out.add(&f)?);
        let next = ln2.out.clone();
        layers.push(LayerCache {
            input: h,
            heads,
            concat,
            ln1,
            hidden,
            ln2,
        });
        h = next;
    }
    let n = h.rows() as f64;
    let pooled: Vec<f64> = (0..h.cols())
        .map(|j| (0..h.rows()).map(|i| h.get(i, j)).sum::<f64>() / n)
        .collect();
    let output: Vec<f64> = (0..spec.output_dim)
        .map(|c| {
            params.b_out.get(0, c)
                + pooled
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * params.w_out.get(j, c))
                    .sum::<f64>()
        })
        .collect();
    Ok(ForwardCache {
        layers,
        pooled,
        output,
        seq_len: spec.seq_len,
    })
}

/// Task-head output and the attention trace for input `x` (n × d_model).
pub fn forward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Matrix,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let cache = forward_cached(params, spec, x)?;
    let trace = cache.trace();
    Ok((cache.output, trace))
}
