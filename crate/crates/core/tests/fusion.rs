use hpr_core::fusion::{
    cross_attention, ffm_forward, gate_weights, naive_fuse_inject, zero_conv_inject,
    FusionModuleParams, MultiHeadAttention, TokenGrid, ZeroConv,
};
use hpr_core::rng::SeededRng;
use hpr_core::tensor::{LinearLayer, Matrix};

fn grid(rows: usize, cols: usize, rng: &mut SeededRng) -> TokenGrid {
    TokenGrid::from_tokens(Matrix::random_uniform(rows, cols, -1.0, 1.0, rng)).unwrap()
}

fn affine(layer: &LinearLayer, x: &[f64]) -> Vec<f64> {
    (0..layer.out_dim())
        .map(|o| {
            layer.bias()[o]
                + (0..x.len())
                    .map(|i| layer.weight()[(o, i)] * x[i])
                    .sum::<f64>()
        })
        .collect()
}

/// Attention written out token by token.
fn naive_attention(attn: &MultiHeadAttention, query: &Matrix, source: &Matrix) -> Matrix {
    let q: Vec<Vec<f64>> = (0..query.rows())
        .map(|i| affine(&attn.q_proj, query.row(i)))
        .collect();
    let k: Vec<Vec<f64>> = (0..source.rows())
        .map(|j| affine(&attn.k_proj, source.row(j)))
        .collect();
    let v: Vec<Vec<f64>> = (0..source.rows())
        .map(|j| affine(&attn.v_proj, source.row(j)))
        .collect();
    let dh = attn.head_dim();
    let mut out = Vec::new();
    for qi in &q {
        let mut concat = vec![0.0; attn.embed_dim()];
        for h in 0..attn.num_heads() {
            let cols = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols {
                concat[c] = e.iter().zip(&v).map(|(w, vj)| w / z * vj[c]).sum();
            }
        }
        out.extend(affine(&attn.out_proj, &concat));
    }
    Matrix::from_vec(query.rows(), attn.output_dim(), out).unwrap()
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

#[test]
fn attention_matches_token_by_token_oracle() {
    let mut rng = SeededRng::new(5);
    for heads in [1, 2, 4] {
        let attn = MultiHeadAttention::init(6, 3, 8, heads, &mut rng).unwrap();
        let query = Matrix::random_uniform(5, 6, -1.0, 1.0, &mut rng);
        let source = Matrix::random_uniform(7, 3, -1.0, 1.0, &mut rng);
        let got = attn.forward(&query, &source).unwrap();
        assert!(max_diff(&got, &naive_attention(&attn, &query, &source)) < 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = SeededRng::new(6);
    let attn = MultiHeadAttention::init(4, 4, 4, 2, &mut rng).unwrap();
    let (_, tape) = attn
        .forward_with_tape(
            &Matrix::random_uniform(3, 4, -2.0, 2.0, &mut rng),
            &Matrix::random_uniform(9, 4, -2.0, 2.0, &mut rng),
        )
        .unwrap();
    for h in 0..2 {
        let p = tape.probs(h);
        assert_eq!(p.shape(), (3, 9));
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(p.row(r).iter().all(|&w| w > 0.0));
        }
    }
}

#[test]
fn attention_ignores_source_order() {
    let mut rng = SeededRng::new(7);
    let attn = MultiHeadAttention::init(4, 4, 4, 2, &mut rng).unwrap();
    let query = Matrix::random_uniform(3, 4, -1.0, 1.0, &mut rng);
    let source = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
    let shuffled = source.select_rows(&[4, 0, 5, 2, 1, 3]);
    let a = attn.forward(&query, &source).unwrap();
    let b = attn.forward(&query, &shuffled).unwrap();
    assert!(max_diff(&a, &b) < 1e-14);
}

#[test]
fn attention_follows_query_order() {
    let mut rng = SeededRng::new(8);
    let attn = MultiHeadAttention::init(4, 4, 4, 2, &mut rng).unwrap();
    let query = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
    let source = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
    let order = [3, 1, 4, 0, 2];
    let a = attn.forward(&query, &source).unwrap().select_rows(&order);
    let b = attn.forward(&query.select_rows(&order), &source).unwrap();
    assert!(max_diff(&a, &b) < 1e-14);
}

#[test]
fn single_source_token_passes_its_value_through() {
    let mut rng = SeededRng::new(9);
    let attn = MultiHeadAttention::init(4, 4, 4, 2, &mut rng).unwrap();
    let source = Matrix::random_uniform(1, 4, -1.0, 1.0, &mut rng);
    let expected = affine(&attn.out_proj, &affine(&attn.v_proj, source.row(0)));
    let out = attn
        .forward(&Matrix::random_uniform(3, 4, -1.0, 1.0, &mut rng), &source)
        .unwrap();
    for r in 0..3 {
        for (a, b) in out.row(r).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn gate_stays_inside_unit_interval_and_bounds_the_output() {
    let mut rng = SeededRng::new(10);
    let params = FusionModuleParams::init(4, 8, 2, 6, &mut rng).unwrap();
    let (img, mono, smpl) = (
        grid(12, 8, &mut rng),
        grid(12, 8, &mut rng),
        grid(20, 8, &mut rng),
    );
    let cross = cross_attention(&img, &mono, &smpl, &params).unwrap();
    let smpl_local = grid(12, 8, &mut rng);
    let g = gate_weights(&cross, &mono, &smpl_local, &params).unwrap();
    assert_eq!(g.shape(), (12, 8));
    assert!(g.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));

    // The fused output lies between F_mono and F_mono + F_cross per element.
    let fused = ffm_forward(&img, &mono, &smpl_local, &params).unwrap();
    let cross_local = cross_attention(&img, &mono, &smpl_local, &params).unwrap();
    for ((f, m), c) in fused
        .tokens()
        .as_slice()
        .iter()
        .zip(mono.tokens().as_slice())
        .zip(cross_local.tokens().as_slice())
    {
        let (lo, hi) = (m.min(m + c), m.max(m + c));
        assert!(*f >= lo - 1e-15 && *f <= hi + 1e-15);
    }
}

#[test]
fn cross_attention_rejects_mismatched_streams() {
    let mut rng = SeededRng::new(11);
    let params = FusionModuleParams::init(4, 8, 2, 6, &mut rng).unwrap();
    let err = cross_attention(
        &grid(4, 8, &mut rng),
        &grid(5, 8, &mut rng),
        &grid(3, 8, &mut rng),
        &params,
    );
    assert!(err.is_err());
}

#[test]
fn identity_injection_adds_side_features() {
    let mut rng = SeededRng::new(12);
    let (f, base) = (grid(6, 4, &mut rng), grid(6, 4, &mut rng));
    let out = zero_conv_inject(&f, &ZeroConv::identity(4), &base).unwrap();
    assert!(max_diff(out.tokens(), &base.tokens().add(f.tokens()).unwrap()) < 1e-15);

    let g = grid(6, 4, &mut rng);
    let out =
        naive_fuse_inject(&f, &g, &ZeroConv::identity(4), &ZeroConv::new(4, 4), &base).unwrap();
    assert!(max_diff(out.tokens(), &base.tokens().add(f.tokens()).unwrap()) < 1e-15);
}

#[test]
fn fresh_zero_conv_is_zero_and_random_is_not() {
    let mut rng = SeededRng::new(13);
    assert!(ZeroConv::new(3, 5).is_zero());
    assert!(!ZeroConv::random(3, 5, &mut rng).is_zero());
}
