use modeseq::numerics::gradcheck::{all_entries, check_entries};
use modeseq::numerics::{Array, AttentionBlock, ForwardCtx, NumericsError, ParamStore, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::row_vector(vec![0.0, 0.0, 0.0])).unwrap();
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn identity_matmul_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let i = tape.constant(Array::identity(3)).unwrap();
    let x_val = random_array(&mut rng, &[3, 4]);
    let x = tape.constant(x_val.clone()).unwrap();
    let y = tape.matmul(i, x).unwrap();
    assert_eq!(tape.value(y), &x_val);
}

#[test]
fn layer_norm_matches_closed_form() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::row_vector(vec![1.0, 2.0, 3.0])).unwrap();
    let g = tape.constant(Array::ones(&[3])).unwrap();
    let b = tape.constant(Array::zeros(&[3])).unwrap();
    let y = tape.layer_norm(x, g, b).unwrap();
    let expect = [-1.2247, 0.0, 1.2247];
    for (v, e) in tape.value(y).data().iter().zip(expect) {
        assert!((v - e).abs() < 1e-3, "{v} vs {e}");
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.constant(random_array(&mut rng, &[5, 32]).map(|v| 10.0 * v + 3.0)).unwrap();
    let g = tape.constant(Array::ones(&[32])).unwrap();
    let b = tape.constant(Array::zeros(&[32])).unwrap();
    let y = tape.layer_norm(x, g, b).unwrap();
    let out = tape.value(y);
    for r in 0..5 {
        let row = out.row(r);
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Array::zeros(&[2, 3])).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(NumericsError::Shape(_))));
    let c = tape.constant(Array::zeros(&[3, 2])).unwrap();
    assert!(matches!(tape.add(a, c), Err(NumericsError::Shape(_))));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::row_vector(vec![0.0])).unwrap();
    assert!(matches!(tape.ln(x), Err(NumericsError::NonFinite("ln"))));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::row_vector(vec![1.0, -2.0, 5.0])).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_half_square_is_identity() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::row_vector(vec![1.0, 2.0])).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let half = tape.scale(s, 0.5).unwrap();
    let g = tape.backward(half).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::row_vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(x), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn unreached_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::row_vector(vec![1.0, 2.0])).unwrap();
    let unused = tape.leaf(Array::zeros(&[2, 2])).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(unused), Array::zeros(&[2, 2]));
}

#[test]
fn single_key_gets_all_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let q = tape.constant(random_array(&mut rng, &[4, 8])).unwrap();
    let k = tape.constant(random_array(&mut rng, &[1, 8])).unwrap();
    let v = tape.constant(random_array(&mut rng, &[1, 8])).unwrap();
    let out = tape.attention(q, k, v, 2, None, None).unwrap();
    assert!(tape.attention_weights(out).unwrap().iter().all(|&p| p == 1.0));
    let vv = tape.value(v).data().to_vec();
    for r in 0..4 {
        assert_eq!(tape.value(out).row(r), vv.as_slice());
    }
}

#[test]
fn duplicate_keys_share_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let q = tape.constant(random_array(&mut rng, &[3, 8])).unwrap();
    let base = random_array(&mut rng, &[2, 8]);
    let mut rows: Vec<Vec<f64>> = (0..2).map(|r| base.row(r).to_vec()).collect();
    rows.push(base.row(0).to_vec());
    let k = tape.constant(Array::from_rows(&rows).unwrap()).unwrap();
    let v = tape.constant(random_array(&mut rng, &[3, 8])).unwrap();
    let out = tape.attention(q, k, v, 2, None, None).unwrap();
    let w = tape.attention_weights(out).unwrap();
    for chunk in w.chunks(3) {
        assert_eq!(chunk[0], chunk[2]);
        assert!(chunk.iter().all(|&p| p >= 0.0));
        assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn attention_with_no_keys_is_an_error() {
    let mut tape = Tape::new();
    let q = tape.constant(Array::zeros(&[1, 4])).unwrap();
    let k = tape.constant(Array::zeros(&[0, 4])).unwrap();
    let v = tape.constant(Array::zeros(&[0, 4])).unwrap();
    assert_eq!(tape.attention(q, k, v, 1, None, None), Err(NumericsError::EmptyKeys));
}

// ---------------------------------------------------------------------------
// Straight-line re-evaluation of a cross-attention block.

fn dense(x: &[Vec<f64>], w: &Array, b: &Array) -> Vec<Vec<f64>> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..o)
                .map(|c| b.data()[c] + (0..i).map(|r| row[r] * w.get2(r, c)).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm_rows(x: &[Vec<f64>], g: &Array, b: &Array) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let m = row.iter().sum::<f64>() / n;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(c, x)| (x - m) / (v + 1e-5).sqrt() * g.data()[c] + b.data()[c])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn reference_block(store: &ParamStore, name: &str, heads: usize, x: &[Vec<f64>], ctx: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = |s: &str| store.get(store.find(&format!("{name}.{s}")).unwrap()).clone();
    let d = x[0].len();
    let dh = d / heads;
    let hq = norm_rows(x, &p("norm_q.gain"), &p("norm_q.bias"));
    let hc = norm_rows(ctx, &p("norm_kv.gain"), &p("norm_kv.bias"));
    let q = dense(&hq, &p("query.weight"), &p("query.bias"));
    let k = dense(&hc, &p("key.weight"), &p("key.bias"));
    let v = dense(&hc, &p("value.weight"), &p("value.bias"));
    let mut att = vec![vec![0.0; d]; x.len()];
    for h in 0..heads {
        for i in 0..x.len() {
            let logits: Vec<f64> = (0..ctx.len())
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..ctx.len() {
                for c in 0..dh {
                    att[i][h * dh + c] += e[j] / z * v[j][h * dh + c];
                }
            }
        }
    }
    let o = dense(&att, &p("output.weight"), &p("output.bias"));
    let h1: Vec<Vec<f64>> = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let f = norm_rows(&h1, &p("norm_ff.gain"), &p("norm_ff.bias"));
    let f = dense(&f, &p("ff.up.weight"), &p("ff.up.bias"));
    let f: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    let f = dense(&f, &p("ff.down.weight"), &p("ff.down.bias"));
    h1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

#[test]
fn attention_block_matches_straight_line_reimplementation() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = AttentionBlock::cross(&mut store, "blk", 16, 4, &mut rng);
        // Larger weights so the check is not dominated by the residual path.
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let x = random_array(&mut rng, &[3, 16]);
        let c = random_array(&mut rng, &[5, 16]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let cv = tape.constant(c.clone()).unwrap();
        let out = block
            .forward_cross(&mut tape, &store, &mut ForwardCtx::eval(), xv, cv, None)
            .unwrap();
        let rows = |a: &Array| (0..a.rows()).map(|r| a.row(r).to_vec()).collect::<Vec<_>>();
        let expect = reference_block(&store, "blk", 4, &rows(&x), &rows(&c));
        for (r, row) in expect.iter().enumerate() {
            for (a, b) in tape.value(out).row(r).iter().zip(row) {
                assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference agreement of every primitive.

type Build = fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>;

fn fd_check(shapes: &[&[usize]], positive: bool, build: Build, seeds: u64) {
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut a = random_array(&mut rng, s);
                if positive {
                    a = a.map(|v| v.abs() + 0.5);
                }
                store.add(format!("in{i}"), a)
            })
            .collect();
        let weights: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |store: &ParamStore, tape: &mut Tape| -> Result<Var, NumericsError> {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let y = build(tape, &vars)?;
            // random linear functional so every output entry matters
            let n = tape.value(y).len();
            let w = Array::new(tape.shape(y).to_vec(), (0..n).map(|i| weights[i % 64]).collect())?;
            let yw = tape.mul_const(y, &w)?;
            tape.sum(yw)
        };
        let mut tape = Tape::new();
        let loss = eval(&store, &mut tape).unwrap();
        let analytic = tape.backward(loss).unwrap().param_grads(&store);
        let entries = all_entries(&store);
        let report = check_entries(&mut store, &analytic, &entries, 1e-4, |s| {
            let mut t = Tape::new();
            let l = eval(s, &mut t)?;
            Ok::<_, NumericsError>(t.value(l).data()[0])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

const SEEDS: u64 = 20;

#[test]
fn fd_matmul() {
    fd_check(&[&[3, 4], &[4, 2]], false, |t, v| t.matmul(v[0], v[1]), SEEDS);
}

#[test]
fn fd_linear() {
    fd_check(&[&[3, 4], &[4, 5], &[5]], false, |t, v| t.linear(v[0], v[1], Some(v[2])), SEEDS);
}

#[test]
fn fd_elementwise() {
    fd_check(&[&[2, 3], &[2, 3]], false, |t, v| t.add(v[0], v[1]), SEEDS);
    fd_check(&[&[2, 3], &[2, 3]], false, |t, v| t.sub(v[0], v[1]), SEEDS);
    fd_check(&[&[2, 3], &[2, 3]], false, |t, v| t.mul(v[0], v[1]), SEEDS);
    fd_check(&[&[2, 3], &[2, 3]], true, |t, v| t.div(v[0], v[1]), SEEDS);
    fd_check(&[&[2, 3]], false, |t, v| t.affine(v[0], -1.5, 0.25), SEEDS);
    fd_check(&[&[2, 3]], false, |t, v| t.square(v[0]), SEEDS);
    fd_check(&[&[2, 3]], true, |t, v| t.abs(v[0]), SEEDS);
}

#[test]
fn fd_nonlinearities() {
    fd_check(&[&[3, 5]], false, |t, v| t.gelu(v[0]), SEEDS);
    fd_check(&[&[3, 5]], false, |t, v| t.sigmoid(v[0]), SEEDS);
    fd_check(&[&[3, 5]], false, |t, v| t.softplus(v[0]), SEEDS);
    fd_check(&[&[3, 5]], true, |t, v| t.ln(v[0]), SEEDS);
    fd_check(&[&[3, 5]], false, |t, v| t.softmax(v[0]), SEEDS);
}

#[test]
fn fd_layer_norm() {
    fd_check(&[&[3, 6], &[6], &[6]], false, |t, v| t.layer_norm(v[0], v[1], v[2]), SEEDS);
}

#[test]
fn fd_structural() {
    fd_check(&[&[2, 3], &[1, 3]], false, |t, v| t.concat_rows(&[v[0], v[1]]), SEEDS);
    fd_check(&[&[2, 3], &[2, 1]], false, |t, v| t.concat_cols(&[v[0], v[1]]), SEEDS);
    fd_check(&[&[4, 3]], false, |t, v| t.gather_rows(v[0], &[2, 0, 2]), SEEDS);
    fd_check(&[&[4, 5]], false, |t, v| t.slice_cols(v[0], 1, 3), SEEDS);
    fd_check(&[&[4, 5]], false, |t, v| t.transpose(v[0]), SEEDS);
    fd_check(&[&[4, 6]], false, |t, v| t.reshape(v[0], &[6, 4]), SEEDS);
    fd_check(&[&[5, 3]], false, |t, v| t.max_rows(v[0]), SEEDS);
    fd_check(&[&[5, 3]], false, |t, v| t.cumsum_rows(v[0]), SEEDS);
    fd_check(&[&[5, 3]], false, |t, v| t.mean(v[0]), SEEDS);
}

#[test]
fn fd_attention() {
    fd_check(&[&[3, 8], &[4, 8], &[4, 8]], false, |t, v| t.attention(v[0], v[1], v[2], 2, None, None), SEEDS);
    fd_check(
        &[&[3, 8], &[3, 8], &[3, 8]],
        false,
        |t, v| {
            let causal: Vec<bool> = (0..9).map(|i| i % 3 <= i / 3).collect();
            t.attention(v[0], v[1], v[2], 4, Some(&causal), None)
        },
        SEEDS,
    );
    fd_check(
        &[&[2, 4], &[3, 4], &[3, 4]],
        false,
        |t, v| {
            let drop = vec![1.25, 0.0, 1.25, 1.25, 1.25, 0.0, 0.0, 1.25, 1.25, 1.25, 1.25, 0.0];
            t.attention(v[0], v[1], v[2], 2, None, Some(drop))
        },
        SEEDS,
    );
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let n = values.len();
        let mut tape = Tape::new();
        let x = tape.constant(Array::new(vec![1, n], values).unwrap()).unwrap();
        let y = tape.softmax(x).unwrap();
        let s: f64 = tape.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(tape.value(y).data().iter().all(|&p| p >= 0.0));
    }
}
