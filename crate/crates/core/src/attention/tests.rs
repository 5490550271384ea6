use super::*;
use crate::rng;
use approx::assert_relative_eq;

fn spec_small(layers: usize, heads: usize) -> ModelSpec {
    ModelSpec {
        num_layers: layers,
        num_heads: heads,
        seq_len: 4,
        d_model: 5,
        d_k: 3,
        d_v: 2,
        temperature: None,
        temperature_floor: DEFAULT_TEMPERATURE_FLOOR,
        mlp_hidden: 6,
        output_dim: 2,
        positions: true,
    }
}

fn random_input(spec: &ModelSpec, seed: u64) -> Matrix {
    Matrix::random_normal(spec.seq_len, spec.d_model, 1.0, &mut rng::seeded(seed))
}

#[test]
fn softmax_examples() {
    let a = softmax_rows(&Matrix::zeros(4, 4), 1.0).unwrap();
    assert!(a.as_slice().iter().all(|&v| v == 0.25));

    let m = Matrix::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
    let a = softmax_rows(&m, 1.0).unwrap();
    assert_relative_eq!(a.get(0, 0), 0.25, epsilon = 1e-15);
    assert_relative_eq!(a.get(0, 1), 0.75, epsilon = 1e-15);

    let big = Matrix::random_normal(7, 9, 50.0, &mut rng::seeded(4));
    let a = softmax_rows(&big, 0.01).unwrap();
    for s in a.row_sums() {
        assert!((s - 1.0).abs() <= 1e-12);
    }
    assert!(softmax_rows(&big, 1e-4).is_err());
}

#[test]
fn attention_matrix_examples() {
    let spec = ModelSpec {
        d_k: 1,
        ..ModelSpec::default()
    };
    let zero = Matrix::zeros(5, 1);
    let a = attention_matrix(&zero, &zero, &spec).unwrap();
    assert!(a.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    assert_eq!(spectral::spectral_summary(&a).unwrap().effective_rank, 1.0);

    // QKᵀ = [[10,-10],[-10,10]] with d_k = 1.
    let q = Matrix::from_rows(&[vec![10f64.sqrt()], vec![-(10f64.sqrt())]]).unwrap();
    let a = attention_matrix(&q, &q, &spec).unwrap();
    let hi = 1.0 / (1.0 + (-20f64).exp());
    let lo = (-20f64).exp() / (1.0 + (-20f64).exp());
    let want = Matrix::from_rows(&[vec![hi, lo], vec![lo, hi]]).unwrap();
    assert!(a.max_abs_diff(&want).unwrap() < 1e-12);
    let er = spectral::spectral_summary(&a).unwrap().effective_rank;
    assert!(er > 2.0 - 1e-6 && er <= 2.0 + 1e-12, "{er}");

    let bad = Matrix::zeros(5, 2);
    assert!(matches!(attention_matrix(&bad, &zero, &spec), Err(Error::Shape(_))));
}

#[test]
fn zero_model_has_uniform_attention() {
    let spec = spec_small(2, 2);
    let params = ModelParams::zeros(&spec);
    let x = random_input(&spec, 1);
    let (out, trace) = forward(&params, &spec, &x).unwrap();
    assert_eq!(out, vec![0.0, 0.0]);
    for (_, _, a) in trace.iter() {
        assert!(a.max_abs_diff(&Matrix::uniform_stochastic(4)).unwrap() < 1e-15);
    }
    let data: Vec<Matrix> = (0..5).map(|s| random_input(&spec, s)).collect();
    let rep = capacity(&params, &spec, &data, "zeros", Execution::Sequential).unwrap();
    assert_eq!(rep.capacity, 1.0);
}

/// One layer, one head, two tokens, every scalar written out by hand.
#[test]
fn forward_matches_hand_computation() {
    let spec = ModelSpec {
        num_layers: 1,
        num_heads: 1,
        seq_len: 2,
        d_model: 2,
        d_k: 1,
        d_v: 1,
        temperature: None,
        temperature_floor: DEFAULT_TEMPERATURE_FLOOR,
        mlp_hidden: 1,
        output_dim: 1,
        positions: false,
    };
    let m = |rows: &[&[f64]]| Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let params = ModelParams {
        pos: None,
        layers: vec![LayerParams {
            heads: vec![HeadParams {
                wq: m(&[&[1.0], &[0.5]]),
                wk: m(&[&[-1.0], &[2.0]]),
                wv: m(&[&[0.3], &[-0.7]]),
            }],
            wo: m(&[&[1.5, -0.5]]),
            w1: m(&[&[0.8], &[-0.4]]),
            b1: m(&[&[0.1]]),
            w2: m(&[&[2.0, 1.0]]),
            b2: m(&[&[0.0, -0.2]]),
        }],
        w_out: m(&[&[0.6], &[-1.1]]),
        b_out: m(&[&[0.05]]),
    };
    let x = m(&[&[1.0, 2.0], &[-1.0, 0.5]]);

    let xs = [[1.0, 2.0], [-1.0, 0.5]];
    let q: Vec<f64> = xs.iter().map(|t| t[0] * 1.0 + t[1] * 0.5).collect();
    let k: Vec<f64> = xs.iter().map(|t| -t[0] + t[1] * 2.0).collect();
    let v: Vec<f64> = xs.iter().map(|t| t[0] * 0.3 + t[1] * -0.7).collect();
    let mut a = [[0.0; 2]; 2];
    for i in 0..2 {
        let e0 = (q[i] * k[0]).exp();
        let e1 = (q[i] * k[1]).exp();
        a[i] = [e0 / (e0 + e1), e1 / (e0 + e1)];
    }
    let ln = |r: [f64; 2]| {
        let mu = (r[0] + r[1]) / 2.0;
        let var = ((r[0] - mu).powi(2) + (r[1] - mu).powi(2)) / 2.0;
        let s = (var + 1e-5).sqrt();
        [(r[0] - mu) / s, (r[1] - mu) / s]
    };
    let mut pooled = [0.0; 2];
    for i in 0..2 {
        let o = a[i][0] * v[0] + a[i][1] * v[1];
        let u = ln([xs[i][0] + o * 1.5, xs[i][1] + o * -0.5]);
        let hdn = (u[0] * 0.8 + u[1] * -0.4 + 0.1).tanh();
        let y = ln([u[0] + hdn * 2.0, u[1] + hdn * 1.0 - 0.2]);
        pooled[0] += y[0] / 2.0;
        pooled[1] += y[1] / 2.0;
    }
    let want = pooled[0] * 0.6 + pooled[1] * -1.1 + 0.05;

    let (out, trace) = forward(&params, &spec, &x).unwrap();
    assert_relative_eq!(out[0], want, epsilon = 1e-12);
    for i in 0..2 {
        for j in 0..2 {
            assert_relative_eq!(trace.layers[0][0].get(i, j), a[i][j], epsilon = 1e-14);
        }
    }
}

#[test]
fn permutation_equivariance_without_positions() {
    let spec = ModelSpec {
        positions: false,
        ..spec_small(2, 2)
    };
    let params = ModelParams::init(&spec, &mut rng::seeded(8));
    let x = random_input(&spec, 9);
    let order = [2, 0, 3, 1];
    let (out, trace) = forward(&params, &spec, &x).unwrap();
    let (out_p, trace_p) = forward(&params, &spec, &x.permute_rows(&order)).unwrap();
    for (o, op) in out.iter().zip(&out_p) {
        assert_relative_eq!(o, op, epsilon = 1e-12);
    }
    for ((_, _, a), (_, _, ap)) in trace.iter().zip(trace_p.iter()) {
        assert!(a.permute_square(&order).max_abs_diff(ap).unwrap() < 1e-12);
    }
}

/// `f(θ) = ⟨g, forward(θ)⟩`, so `∂f/∂output = g`.
fn objective(params: &ModelParams, spec: &ModelSpec, x: &Matrix, g: &[f64]) -> f64 {
    let (out, _) = forward(params, spec, x).unwrap();
    out.iter().zip(g).map(|(a, b)| a * b).sum()
}

fn max_relative_error(spec: &ModelSpec, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let params = ModelParams::init(spec, &mut r);
    let x = Matrix::random_normal(spec.seq_len, spec.d_model, 1.0, &mut r);
    let g: Vec<f64> = (0..spec.output_dim).map(|_| rng::normal(&mut r)).collect();
    let grads = backward(&params, spec, &x, &g).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let analytic = grads.params.tensors();
    for (t, (name, _)) in params.tensors().iter().enumerate() {
        let (rows, cols) = analytic[t].1.shape();
        for idx in 0..rows * cols {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1.as_mut_slice()[idx] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1.as_mut_slice()[idx] -= h;
            let fd = (objective(&plus, spec, &x, &g) - objective(&minus, spec, &x, &g)) / (2.0 * h);
            let an = analytic[t].1.as_slice()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            assert!(rel.is_finite(), "{name}[{idx}]");
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let one = max_relative_error(&spec_small(1, 1), 21);
    let two = max_relative_error(&spec_small(2, 2), 22);
    assert!(one <= 1e-4, "1-layer: {one}");
    assert!(two <= 1e-4, "2-layer: {two}");
}

/// `Z` is checked through a directional derivative: perturbing the last layer's
/// query weights moves only that layer's attention, so
/// `d f / dt = ⟨Z, dA/dt⟩`.
#[test]
fn sensitivity_is_loss_derivative_wrt_attention() {
    let spec = spec_small(2, 2);
    let mut r = rng::seeded(5);
    let params = ModelParams::init(&spec, &mut r);
    let x = random_input(&spec, 6);
    let g = vec![0.7, -1.3];
    let grads = backward(&params, &spec, &x, &g).unwrap();
    let dir = Matrix::random_normal(spec.d_model, spec.d_k, 1.0, &mut r);
    let h = 1e-5;
    let shifted = |t: f64| {
        let mut p = params.clone();
        p.layers[1].heads[1].wq.axpy(t, &dir).unwrap();
        p
    };
    let (pp, pm) = (shifted(h), shifted(-h));
    let df = (objective(&pp, &spec, &x, &g) - objective(&pm, &spec, &x, &g)) / (2.0 * h);
    let ap = forward(&pp, &spec, &x).unwrap().1.layers[1][1].clone();
    let am = forward(&pm, &spec, &x).unwrap().1.layers[1][1].clone();
    let da = ap.sub(&am).unwrap().scale(1.0 / (2.0 * h));
    let via_z = grads.sensitivity[1][1].inner(&da).unwrap();
    assert_relative_eq!(df, via_z, max_relative = 1e-6);
}

#[test]
fn zero_loss_gradient_gives_zero_everything() {
    let spec = spec_small(2, 2);
    let params = ModelParams::init(&spec, &mut rng::seeded(3));
    let grads = backward(&params, &spec, &random_input(&spec, 4), &[0.0, 0.0]).unwrap();
    for (_, m) in grads.params.tensors() {
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }
    for heads in &grads.sensitivity {
        for z in heads {
            assert_eq!(z.shape(), (4, 4));
            assert!(z.as_slice().iter().all(|&v| v == 0.0));
        }
    }
    assert!(backward(&params, &spec, &random_input(&spec, 4), &[1.0]).is_err());
}

#[test]
fn near_permutation_attention_has_full_capacity() {
    let n = 6;
    let spec = ModelSpec {
        num_layers: 1,
        num_heads: 1,
        seq_len: n,
        d_model: n,
        d_k: n,
        d_v: n,
        positions: false,
        ..ModelSpec::default()
    };
    let mut params = ModelParams::zeros(&spec);
    params.layers[0].heads[0].wq = Matrix::identity(n).scale(6.0);
    params.layers[0].heads[0].wk = Matrix::identity(n).scale(6.0);
    let x = Matrix::identity(n);
    let rep = capacity(&params, &spec, std::slice::from_ref(&x), "onehot", Execution::Sequential).unwrap();
    let (_, trace) = forward(&params, &spec, &x).unwrap();
    let oracle = spectral::spectral_summary(&trace.layers[0][0]).unwrap().effective_rank;
    assert_eq!(rep.capacity, oracle);
    assert!(rep.capacity > 5.99 && rep.capacity <= 6.0 + 1e-9, "{}", rep.capacity);
}

#[test]
fn capacity_is_max_of_table_and_bounded() {
    let spec = spec_small(2, 3);
    let params = ModelParams::init(&spec, &mut rng::seeded(30));
    let data: Vec<Matrix> = (0..12).map(|s| random_input(&spec, 100 + s)).collect();
    let rep = capacity(&params, &spec, &data, "train", Execution::Sequential).unwrap();
    assert_eq!(rep.entries.len(), 12 * 2 * 3);
    let table_max = rep.entries.iter().map(|e| e.effective_rank).fold(f64::MIN, f64::max);
    assert_eq!(rep.capacity, table_max);
    assert!(rep.capacity >= 1.0 && rep.capacity <= spec.seq_len as f64 + 1e-9);
    let par = capacity(&params, &spec, &data, "train", Execution::Parallel).unwrap();
    assert_eq!(rep, par);
    assert!(capacity(&params, &spec, &[], "empty", Execution::Sequential).is_err());
}

#[test]
fn huge_temperature_flattens_attention() {
    let spec = ModelSpec {
        temperature: Some(1e6),
        ..spec_small(2, 2)
    };
    let params = ModelParams::init(&spec, &mut rng::seeded(12));
    let data: Vec<Matrix> = (0..4).map(|s| random_input(&spec, s)).collect();
    for x in &data {
        let (_, trace) = forward(&params, &spec, x).unwrap();
        for (_, _, a) in trace.iter() {
            let dev = a.max_abs_diff(&Matrix::uniform_stochastic(4)).unwrap();
            assert!(dev < 1e-5, "{dev}");
        }
    }
    let rep = capacity(&params, &spec, &data, "d", Execution::Sequential).unwrap();
    assert!(rep.capacity < 1.001, "{}", rep.capacity);
}

#[test]
fn forward_is_deterministic_and_traces_are_valid() {
    let spec = spec_small(2, 2);
    let params = ModelParams::init(&spec, &mut rng::seeded(50));
    let x = random_input(&spec, 51);
    let (o1, t1) = forward(&params, &spec, &x).unwrap();
    let (o2, t2) = forward(&params, &spec, &x).unwrap();
    assert_eq!(o1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), o2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(t1, t2);
    assert!(t1.is_row_stochastic(1e-9));
    for (_, _, a) in t1.iter() {
        let e = spectral::spectral_summary(a).unwrap().effective_rank;
        assert!((1.0..=4.0 + 1e-9).contains(&e));
    }
    assert!(forward(&params, &spec, &Matrix::zeros(3, 5)).is_err());
}

#[test]
fn checkpoint_round_trip_inline_and_csv() {
    let dir = std::env::temp_dir().join(format!("erank-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let spec = spec_small(1, 2);
    let params = ModelParams::init(&spec, &mut rng::seeded(77));
    let path = dir.join("model.json");
    checkpoint::save(&path, &spec, &params).unwrap();
    let (spec2, params2) = checkpoint::load(&path).unwrap();
    assert_eq!(spec, spec2);
    assert_eq!(params, params2);

    // Move one weight out to a CSV payload.
    let mut manifest = checkpoint::Manifest::inline(&spec, &params);
    params.w_out.write_csv(&dir.join("head_w.csv")).unwrap();
    manifest.weights.insert(
        "head.w".into(),
        checkpoint::WeightRef::Csv { csv: "head_w.csv".into() },
    );
    let (_, params3) = manifest.resolve(&dir).unwrap();
    assert_eq!(params3, params);

    manifest.weights.remove("layer0.wo");
    assert!(manifest.resolve(&dir).is_err());
    std::fs::remove_dir_all(&dir).ok();
}
