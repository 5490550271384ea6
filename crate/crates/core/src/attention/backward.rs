use super::forward::{forward_cached, ForwardCache, NormCache};
use super::model::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Parameter gradients plus the attention sensitivities `Z = ∂loss/∂A`,
/// indexed `[layer][head]`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    pub sensitivity: Vec<Vec<Matrix>>,
}

fn layer_norm_backward(cache: &NormCache, dy: &Matrix) -> Matrix {
    let d = dy.cols() as f64;
    let mut dx = dy.clone();
    for i in 0..dy.rows() {
        let y = cache.out.row(i);
        let g = dy.row(i);
        let mean_g = g.iter().sum::<f64>() / d;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = cache.rstd[i];
        for ((o, &gi), &yi) in dx.row_mut(i).iter_mut().zip(g).zip(y) {
            *o = r * (gi - mean_g - yi * mean_gy);
        }
    }
    dx
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            out.set(0, j, out.get(0, j) + v);
        }
    }
    out
}

/// Backpropagates `loss_grad = ∂loss/∂output` through a cached forward pass.
pub fn backward_from(
    params: &ModelParams,
    spec: &ModelSpec,
    cache: &ForwardCache,
    loss_grad: &[f64],
) -> Result<Gradients> {
    if loss_grad.len() != spec.output_dim {
        return Err(Error::shape(format!(
            "loss gradient has {} entries, output_dim is {}",
            loss_grad.len(),
            spec.output_dim
        )));
    }
    let mut grads = ModelParams::zeros(spec);
    let n = cache.seq_len;
    let d = spec.d_model;

    let dy = Matrix::from_raw(1, spec.output_dim, loss_grad.to_vec());
    let pooled = Matrix::from_raw(1, d, cache.pooled.clone());
    grads.w_out = pooled.t_matmul(&dy)?;
    grads.b_out = dy.clone();
    let d_pooled = dy.matmul_t(&params.w_out)?;
    let mut dh = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            dh.set(i, j, d_pooled.get(0, j) / n as f64);
        }
    }

    let mut sensitivity = vec![Vec::new(); spec.num_layers];
    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[l];

        // H' = LN(U + tanh(U W1 + b1) W2 + b2)
        let d_r2 = layer_norm_backward(&lc.ln2, &dh);
        g.w2 = lc.hidden.t_matmul(&d_r2)?;
        g.b2 = column_sums(&d_r2);
        let d_hidden = d_r2.matmul_t(&layer.w2)?;
        let mut d_pre = d_hidden;
        for (dp, &t) in d_pre.as_mut_slice().iter_mut().zip(lc.hidden.as_slice()) {
            *dp *= 1.0 - t * t;
        }
        g.w1 = lc.ln1.out.t_matmul(&d_pre)?;
        g.b1 = column_sums(&d_pre);
        let d_u = d_r2.add(&d_pre.matmul_t(&layer.w1)?)?;

        // U = LN(H + concat W_O)
        let d_r1 = layer_norm_backward(&lc.ln1, &d_u);
        g.wo = lc.concat.t_matmul(&d_r1)?;
        let d_concat = d_r1.matmul_t(&layer.wo)?;
        let mut d_input = d_r1;

        let mut zs = Vec::with_capacity(spec.num_heads);
        for (hi, (head, hc)) in layer.heads.iter().zip(&lc.heads).enumerate() {
            let mut d_o = Matrix::zeros(n, spec.d_v);
            for i in 0..n {
                d_o.row_mut(i)
                    .copy_from_slice(&d_concat.row(i)[hi * spec.d_v..(hi + 1) * spec.d_v]);
            }
            // O = A V
            let z = d_o.matmul_t(&hc.v)?;
            let d_v = hc.a.t_matmul(&d_o)?;
            // A = softmax_rows(S / s): dS_ij = A_ij (Z_ij - Σ_k A_ik Z_ik) / s
            let scale = spec.logit_scale();
            let mut d_s = Matrix::zeros(n, n);
            for i in 0..n {
                let a_row = hc.a.row(i);
                let z_row = z.row(i);
                let inner: f64 = a_row.iter().zip(z_row).map(|(a, z)| a * z).sum();
                for (j, o) in d_s.row_mut(i).iter_mut().enumerate() {
                    *o = a_row[j] * (z_row[j] - inner) / scale;
                }
            }
            let d_q = d_s.matmul(&hc.k)?;
            let d_k = d_s.t_matmul(&hc.q)?;
            let hg = &mut g.heads[hi];
            hg.wq = lc.input.t_matmul(&d_q)?;
            hg.wk = lc.input.t_matmul(&d_k)?;
            hg.wv = lc.input.t_matmul(&d_v)?;
            d_input.axpy(1.0, &d_q.matmul_t(&head.wq)?)?;
            d_input.axpy(1.0, &d_k.matmul_t(&head.wk)?)?;
            d_input.axpy(1.0, &d_v.matmul_t(&head.wv)?)?;
            zs.push(z);
        }
        sensitivity[l] = zs;
        dh = d_input;
    }
    if let Some(p) = grads.pos.as_mut() {
        *p = dh;
    }
    Ok(Gradients {
        params: grads,
        sensitivity,
    })
}

/// Recomputes the forward pass for `x` and backpropagates `loss_grad`.
pub fn backward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Matrix,
    loss_grad: &[f64],
) -> Result<Gradients> {
    let cache = forward_cached(params, spec, x)?;
    backward_from(params, spec, &cache, loss_grad)
}
